from .config import FederationConfig, desk_scale, from_dict, load_config
from .runner import FederationResult, evaluate, run_federation

__all__ = ["FederationConfig", "FederationResult", "desk_scale", "evaluate", "from_dict",
           "load_config", "run_federation"]
