"""GPU-sharing-aware scheduling of DNN workflows on serverless platforms."""

from .model import ApplicationDag, Configuration, ConfigGrid, FunctionSpec, Pricing, ProfileModel, ProfileTable
from .schedulers import BestFirstScheduler, EnumScheduler, ESGScheduler, OracleScheduler, make_scheduler
from .search import SearchBudget, esg_1q

__version__ = "0.1.0"

__all__ = [
    "ApplicationDag",
    "BestFirstScheduler",
    "ConfigGrid",
    "Configuration",
    "ESGScheduler",
    "EnumScheduler",
    "FunctionSpec",
    "OracleScheduler",
    "Pricing",
    "ProfileModel",
    "ProfileTable",
    "SearchBudget",
    "esg_1q",
    "make_scheduler",
]
