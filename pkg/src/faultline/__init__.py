"""Deterministic fault-injection laboratory for a small floating-point ISA.

Assemble a program, run it on one or more simulated ranks, flip one bit in
one dynamic instruction's result, and classify the run as Benign, SDC or
Crash. Campaigns repeat that over seeded random fault sites; the analysis
module compares where the faults landed.
"""

__version__ = "0.1.0"
