"""Numerical laboratory for noise-injected RNN classifiers.

Hidden states follow an Ito SDE discretized by Euler-Maruyama; training,
implicit-regularization probes, margin certificates, Lyapunov stability
estimates, and input-robustness sweeps all operate on that one model.
"""

from .errors import (ConfigurationError, IntegrationDivergedError,
                     NrnnError, NumericalError)
from .sde import (JacobianChain, ModelParams, NoiseConfig, StepSchedule,
                  Trajectory, diffusion, drift, drift_hessian_h_component,
                  drift_jacobian_h, drift_jacobian_x, em_step, euler_step,
                  jacobian_chain, jacobian_product, simulate, tamed_em_step,
                  uniform_schedule)
from .training import (GradientBundle, RawWeights, TrainConfig, adam_step,
                       bptt, forward_loss, init_raw_weights, materialize,
                       train)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "IntegrationDivergedError", "NrnnError",
    "NumericalError", "JacobianChain", "ModelParams", "NoiseConfig",
    "StepSchedule", "Trajectory", "diffusion", "drift",
    "drift_hessian_h_component", "drift_jacobian_h", "drift_jacobian_x",
    "em_step", "euler_step", "jacobian_chain", "jacobian_product", "simulate",
    "tamed_em_step", "uniform_schedule", "GradientBundle", "RawWeights",
    "TrainConfig", "adam_step", "bptt", "forward_loss", "init_raw_weights",
    "materialize", "train", "__version__",
]
