import sys
from pathlib import Path

from hypothesis import settings, strategies as st

from edsa_market.model import QUALITY_LADDER, Demand, Device, Scenario

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@st.composite
def scenarios(draw, max_devices=3, max_types=3, max_buyers=4, max_demands=8,
              battery=st.floats(0.0, 60.0)):
    """Small scenarios with integer-ish energies so ties and exact fits show up."""
    n_types = draw(st.integers(1, max_types))
    n_dev = draw(st.integers(1, max_devices))
    devices = []
    for i in range(n_dev):
        offered = draw(st.sets(st.integers(0, n_types - 1), min_size=1))
        devices.append(Device(
            f"d{i}",
            draw(battery),
            {t: draw(st.sampled_from(QUALITY_LADDER)) for t in offered},
            {t: draw(st.sampled_from([0.5, 1.0, 1.5, 2.0, 3.0, 7.25])) for t in offered},
            {t: draw(st.sampled_from([0.5, 1.0, 2.0, 2.5])) for t in offered},
            draw(st.sampled_from([0.0, 0.5, 1.0])),
        ))
    keys = draw(st.lists(st.tuples(st.integers(0, max_buyers - 1), st.integers(0, n_types - 1)),
                         unique=True, max_size=max_demands))
    demands = [Demand(b, t, float(draw(st.integers(1, 12))), 1.0,
                      draw(st.sampled_from(QUALITY_LADDER))) for b, t in keys]
    return Scenario(tuple(devices), tuple(demands))


def pytest_terminal_summary(terminalreporter):
    import acceptance_report

    if acceptance_report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.LINES:
            terminalreporter.write_line(line)
