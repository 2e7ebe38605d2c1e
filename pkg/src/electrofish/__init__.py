"""Multi-agent weakly electric fish simulator, recurrent PPO trainer, and analysis tools."""

__version__ = "0.1.0"

from .config import ExperimentConfig, SimConfig, parse_config  # noqa: E402
from .sim import reset_env, step_env  # noqa: E402

__all__ = ["ExperimentConfig", "SimConfig", "parse_config", "reset_env", "step_env", "__version__"]
