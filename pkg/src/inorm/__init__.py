"""Inverted normalization with stochastic affine dropout, plus fault-injection
and Bayesian uncertainty tooling for small numpy networks."""

from .bayes import mc_predict, nll_score, ood_evaluate, predictive_mean, predictive_variance
from .data import Dataset, normalize_features, sine_trend_series, two_moons
from .faults import FaultModel, McConfig, perturb, run_monte_carlo, sweep
from .invnorm import InvertedNormParams, NormalInit, UniformInit
from .model import Model, backward, build_mlp, forward, load_checkpoint, save_checkpoint
from .rng import Purpose, RngStream
from .train import TrainConfig, loss_eval, sgd_step, train

__version__ = "0.1.0"
