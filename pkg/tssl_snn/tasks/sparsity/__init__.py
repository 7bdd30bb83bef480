from ..compare_registry import register_comparer
from .sparsity_config import *
from .sparsity_plot import *
from .sparsity_run import *

register_comparer("sparsity", sparsity_compare)
