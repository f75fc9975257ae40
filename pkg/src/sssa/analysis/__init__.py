"""Side studies: magnitude-ratio spread, log linearization error, op-count scaling."""

from .ratio import RatioStudyConfig, StatisticsError, ratio_var_exact, ratio_var_mc
from .scaling import bench_scaling, energy_comparison, scaling_fit
from .taylor import TaylorStudy, taylor_study

__all__ = [
    "RatioStudyConfig",
    "StatisticsError",
    "TaylorStudy",
    "bench_scaling",
    "energy_comparison",
    "ratio_var_exact",
    "ratio_var_mc",
    "scaling_fit",
    "taylor_study",
]
