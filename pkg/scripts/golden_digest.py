"""Print the golden-seed run digest asserted by the acceptance suite.

Run after an intentional behavioral or default-configuration change and paste
the value into tests/test_acceptance.py::GOLDEN_DIGEST.
"""

from clientsched.config import ScenarioConfig, Strategy
from clientsched.scheduler import run
from clientsched.workload import Congestion

log = run(
    ScenarioConfig(
        strategy=Strategy.FINAL_OLC,
        mix="balanced",
        congestion=Congestion.HIGH,
        seed=0,
    )
)
print(log.digest())
