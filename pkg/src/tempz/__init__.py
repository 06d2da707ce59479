"""Partition-function estimation from tempered sampling.

Core pieces: a generic simulated-tempering engine with Rao-Blackwellized
statistics, the closed-form ratio estimator plus TI / TI-RB / MBAR /
stationary-distribution variants, AIS and RAISE baselines with matched
cost accounting, a binary RBM target with exact desk-scale oracles, a
Gaussian-mixture target sampled with adaptive-step-size HMC, and an RBM
trainer that tracks log-likelihoods online.
"""

from ._kernel import backend_name

__version__ = "0.1.0"
__all__ = ["backend_name", "__version__"]
