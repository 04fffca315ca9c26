"""CP and PARAFAC2 tensor factorization for time-evolving data, with simulation and evaluation tools."""
from .cp import CpModel, FitOptions, FitReport, cp_als, cp_als_runs
from .exceptions import ConfigError, ConvergenceError, DegenerateFiberError, TensorFormatError
from .falff import TimeSeriesSet, WindowSpec, build_falff_tensor, falff_window, preprocess_tensor, sliding_windows
from .metrics import (
    clustering_accuracy,
    fit_score,
    fms,
    fms_evolving,
    match_components,
    two_sample_ttest,
    uniqueness_check,
)
from .parafac2 import Parafac2Model, pf2_als, pf2_als_runs, pf2_constraint_gap
from .simgen import SimConfig, add_noise, gen_dataset
from .tensor import DenseTensor3, khatri_rao, read_tns3, reconstruct_cp, reconstruct_parafac2, unfold, write_tns3

__version__ = "0.1.0"
