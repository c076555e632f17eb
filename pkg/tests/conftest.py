import math
import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def ieee_fields(bits):
    return bits >> 63, (bits >> 52) & 0x7FF, bits & ((1 << 52) - 1)


def ieee_value(sign, exp, frac):
    """binary64 value from its fields, computed with ldexp rather than a memory reinterpretation."""
    if exp == 0x7FF:
        mag = math.inf if frac == 0 else math.nan
    elif exp == 0:
        mag = math.ldexp(frac, -1074)
    else:
        mag = math.ldexp((1 << 52) + frac, exp - 1075)
    return -mag if sign else mag


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
