"""ADMM-based targeted adversarial attacks for L0, L1, L2 and Linf norms.

The package splits the attack problem into a norm-specific proximal step,
a margin-loss step solved by Adam in tanh space, and a scaled dual update.
It ships a small trainable MLP classifier as the attack target, FGM/IFGM
baselines, and a benchmark harness with a CLI.
"""

from .numerics import Norm, lp_norm
from .classifier import MlpModel, LabeledDataset, load_model, save_model
from .engine import AttackConfig, AttackResult, run_admm
from .drivers import attack

__all__ = [
    "Norm",
    "lp_norm",
    "MlpModel",
    "LabeledDataset",
    "load_model",
    "save_model",
    "AttackConfig",
    "AttackResult",
    "run_admm",
    "attack",
]
