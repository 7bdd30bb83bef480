from ..compare_registry import register_comparer
from ...utils.tables import table_compare
from .eval_config import *
from .eval_run import *

register_comparer("evaluation", table_compare)
