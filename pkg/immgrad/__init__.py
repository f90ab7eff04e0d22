"""Gradient-based training of interacting multiple model (IMM) tracking filters.

The parameters of an IMM filter (the process noise of every motion mode, the mode transition probabilities, and the
measurement noise) are learned from measurements alone, by minimizing the negative log-likelihood of every measurement
under the filter's one-step-ahead prediction. The gradient of that loss is computed by forward-mode automatic
differentiation through the complete filter recursion.

"""

from .version import __version__, VERSION_STRING
from . import autodiff, config, csv, errors, experiments, filters, json, loss, metrics, models, optimizer, printer, \
    progress, simulator

from .autodiff import DiffMatrix, DiffScalar, TangentSpace
from .errors import *
from .filters import FilterOptions, ImmBelief, ImmFilter, imm_step
from .loss import dataset_nll, trajectory_nll
from .metrics import EvalResult, evaluate, relative_change
from .models import ModelConfig, ParamVector, UnconstrainedParams, to_constrained, to_unconstrained
from .optimizer import FreezeMask, TrainConfig, TrainReport, train
from .simulator import Dataset, Trajectory, generate_dataset
