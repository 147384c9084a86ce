"""Joint regression of mean, variance and correlation via the matrix log-correlation."""
from .gzt import gzt_forward, gzt_inverse, gzt_jacobian, pair_permutation, permute
from .inference import aic, bic, gzt_correlogram, lrt, wald
from .likelihood import (FitOptions, FitResult, fisher_information, fit,
                         log_likelihood, score)
from .model import (GroupData, GroupedDataset, ObservationRecord, PairCovariateRule,
                    ParameterVector, build_dataset)

__version__ = "0.1.0"
