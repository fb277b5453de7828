"""Desk-scale discrete flow matching engine.

Builds metric-induced and mask-mixture probability paths over finite
token spaces, derives their kinetic-optimal CTMC velocities, samples
with an Euler solver, trains a small cross-entropy denoiser, and ships
a residual-check suite for the defining equations.
"""

from .schedule import BetaSchedule, KappaSchedule
from .token_space import TokenSpace, build_token_space, random_token_space
from .paths import ConditionalPath, JointDistribution, metric_path, \
    mask_mixture_path, marginal_path
from .velocity import VelocityRow, ko_velocity_closed, ko_velocity_generic, \
    velocity_row, exit_rate, marginal_velocity
from .denoiser import OracleDenoiser, FactorizedModel, ModelDenoiser, \
    ce_loss, grad, train
from .sampler import SamplerConfig, SampleTrace, sample, sample_chains, \
    best_of_n, revision_stats

__version__ = "0.1.0"
