"""Zero-shot image purification against backdoor triggers.

Average pooling destroys the trigger, and a diffusion reverse process
constrained to the pooled observation restores the lost detail.
"""

from zipdefense.linops import AvgPoolOperator
from zipdefense.schedule import NoiseSchedule, TimestepPath, make_linear_schedule, make_timestep_path
from zipdefense.sampler import PurifyConfig, RngStream, purify, sample_unguided

__all__ = [
    "AvgPoolOperator",
    "NoiseSchedule",
    "PurifyConfig",
    "RngStream",
    "TimestepPath",
    "make_linear_schedule",
    "make_timestep_path",
    "purify",
    "sample_unguided",
]

__version__ = "0.1.0"
