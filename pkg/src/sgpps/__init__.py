"""Sparse Gaussian process policy search.

Policies are sparse GPs fit by return-weighted variational EM:

* :class:`MultimodalSGPPolicy` -- an overlapping mixture of sparse GPs,
  one per action mode (``n_components=1`` is the plain unimodal policy);
* :class:`ModeSeekingSGPPolicy` -- a single sparse GP with a student-t
  likelihood that commits to one mode and discounts the others.

:mod:`sgpps.trainer` runs the episodic policy-search loop on the tasks in
:mod:`sgpps.envs`; :mod:`sgpps.verification` holds dense reference
computations for testing.
"""

from .envs import HandPostureEnv, TableSweepEnv
from .episodes import Episode, EpisodeBatch, build_weights, elite_reuse
from .kernels import KernelSpec, NumericalError
from .modeseeking import ModeSeekingSGPPolicy
from .multimodal import MultimodalSGPPolicy
from .trainer import ExperimentConfig, run

__version__ = "0.1.0"

__all__ = [
    "Episode",
    "EpisodeBatch",
    "ExperimentConfig",
    "HandPostureEnv",
    "KernelSpec",
    "ModeSeekingSGPPolicy",
    "MultimodalSGPPolicy",
    "NumericalError",
    "TableSweepEnv",
    "build_weights",
    "elite_reuse",
    "run",
]
