"""Energy-constrained graph diffusion with linear all-pair attention.

Library layout:
  numerics   dense linear algebra helpers, spectral brackets, finite diffs
  tape       reverse-mode autodiff over float64 matrices
  graphs     graph container, normalizations, synthetic and file datasets
  coupling   penalty families (f, delta) and coupling-matrix construction
  diffusion  explicit-Euler steppers and trajectory runner
  energy     energy functionals and descent / bound audits
  model      trainable multi-head propagation network on the tape
  train      Adam, losses, metrics, training loop
  suites     seeded invariant suites used by `endiff audit`
  cli        the `endiff` executable
"""

from .coupling import (CouplingSpec, PenaltyFamily, build_coupling, penalty_delta,
                       penalty_f)
from .diffusion import (DiffusionConfig, Trajectory, euler_step,
                        linear_simple_propagate, run_trajectory)
from .energy import (EnergyReport, audit_bounds, audit_descent, diversity,
                     quadratic_energy, regularized_energy, surrogate_energy)
from .errors import EndiffError
from .graphs import Dataset, Graph, knn_graph, load_cora, load_dataset, sbm_generate
from .model import Checkpoint, ModelConfig, count_params, forward, init_model
from .numerics import laplacian, laplacian_spectral_bracket, row_l2_normalize
from .tape import Tape
from .train import AdamState, TrainConfig, adam_step, metric, train_loop

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Checkpoint", "CouplingSpec", "Dataset", "DiffusionConfig",
    "EndiffError", "EnergyReport", "Graph", "ModelConfig", "PenaltyFamily",
    "Tape", "TrainConfig", "Trajectory", "adam_step", "audit_bounds",
    "audit_descent", "build_coupling", "count_params", "diversity",
    "euler_step", "forward", "init_model", "knn_graph", "laplacian",
    "laplacian_spectral_bracket", "linear_simple_propagate", "load_cora",
    "load_dataset", "metric", "penalty_delta", "penalty_f",
    "quadratic_energy", "regularized_energy", "row_l2_normalize",
    "run_trajectory", "sbm_generate", "surrogate_energy", "train_loop",
]
