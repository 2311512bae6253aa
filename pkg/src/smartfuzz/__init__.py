"""Structure-aware coverage-guided greybox fuzzing for chunk-based file formats."""

from .cracker import crack, validity
from .engine import CampaignConfig, run_campaign
from .format_spec import load_spec, parse_spec

__all__ = ["crack", "validity", "CampaignConfig", "run_campaign", "load_spec", "parse_spec"]
__version__ = "0.1.0"
