from ..compare_registry import register_comparer
from .train_config import *
from .train_plot import *
from .train_run import *

register_comparer("training", training_compare)
