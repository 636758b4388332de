"""Diffusion with a normalizing-flow prior at an intermediate cut time."""

from .config import DinofConfig
from .flow import FlowModel
from .pipeline import TrainState, baseline_sample, dinof_sample, init_state, joint_train_step, train
from .samplers import SamplerConfig
from .score import ScoreModel
from .sde import SdeSpec

__all__ = [
    "DinofConfig", "FlowModel", "SamplerConfig", "ScoreModel", "SdeSpec", "TrainState",
    "baseline_sample", "dinof_sample", "init_state", "joint_train_step", "train",
]
__version__ = "0.1.0"
