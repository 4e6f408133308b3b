"""Anonymous, privacy-preserving federated learning over a public bulletin board.

Clients register a committed dataset once, then post encrypted, proven
gradient updates under fresh unlinkable keys.  Committees threshold-decrypt
only the aggregate, and each client hides its real target among decoy
committees.
"""

from .errors import AnofelError
from .protocol import Deployment, TaskSpec, generate_keys
from .scenario import RunReport, ScenarioConfig, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AnofelError",
    "Deployment",
    "RunReport",
    "ScenarioConfig",
    "TaskSpec",
    "generate_keys",
    "run_scenario",
    "__version__",
]
