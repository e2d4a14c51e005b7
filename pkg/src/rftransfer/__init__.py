"""Transfer of random-forest surrogates across affinely related tasks."""
from .cmaes import OptimResult, SearchSpace, bipop_run, cma_run
from .forest import Dataset, ForestModel, ForestParams, fit_forest, predict, predict_batch
from .transfer import (AffineTransform, TransferredModel, TransferSettings,
                       fit_transferred, tl_cmaes, transfer_loss)

__version__ = "0.1.0"
