"""Bayesian image reconstruction with latent-tree wavelet scale-mixture priors.

Subpackages:
  wavelet    orthonormal Haar transform and quad-tree coefficient layout
  potentials super-Gaussian potentials with variational envelopes
  tree       exact belief propagation on the binary state forest
  lingauss   matrix-free precision operator, CG solves, variance estimation
  engine     the double-loop variational / MAP reconstruction engine
  harness    experiment protocol: corruption synthesis, PSNR, reports
  imageio    greyscale PGM / PNG / raw float I/O
"""

from .engine import Engine, Hypers, ModelConfig, RunResult, init_hypers
from .harness import ExperimentSpec, psnr, run_experiment, synthesize_observation
from .lingauss import ObservationOp, PrecisionOp, RngStream

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "ExperimentSpec",
    "Hypers",
    "ModelConfig",
    "ObservationOp",
    "PrecisionOp",
    "RngStream",
    "RunResult",
    "init_hypers",
    "psnr",
    "run_experiment",
    "synthesize_observation",
    "__version__",
]
