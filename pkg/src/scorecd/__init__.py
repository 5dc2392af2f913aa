"""Score-matching causal discovery: SCM generation, DSM-trained ReLU scores,
leaf-removal ordering, variance pruning, SHD sweeps and a toy OU diffusion model."""

from .dsm import DsmConfig, TrainingDiverged, esm_error, sgd_train
from .evaluation import SweepConfig, run_sweep, shd
from .nn import MlpParams
from .order import CausalGraph, NetBackend, OracleBackend, OrderResult, discover, order_divergence, prune, score_order
from .scm import Dag, Dataset, Scm, analytic_jacobian_diag, analytic_score, build_scm, generate_dag, sample
from .sgm import OuSchedule, SgmConfig, TimeNet, reverse_sample, train_sgm

__version__ = "0.1.0"
