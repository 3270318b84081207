"""laminar: a layered deep learning library on a small numpy autodiff core."""
from .augment import AugPolicy, aug_transforms, compose_affine, grid_sample
from .callback import (Callback, CancelBatchException, CancelEpochException, CancelFitException,
                       CancelTrainException, CancelValidException, MixUp, Recorder)
from .dispatch import DispatchTable, Item, retain_type, types
from .learner import Learner, load_learner
from .metrics import Dice, accuracy, error_rate
from .nn import BatchNorm1d, Linear, ReLU, Sequential, mlp
from .optim import LAMB, SGD, Adam, AdamW, Optimizer
from .schedule import fit_one_cycle, lr_find
from .tensor import Tensor, no_grad
from .transforms import Categorize, Datasets, Normalize, Pipeline, TfmdLists, Transform

__version__ = "0.1.0"
