from ..compare_registry import register_comparer
from ...utils.tables import table_compare
from .gradcheck_config import *
from .gradcheck_run import *

register_comparer("gradcheck", table_compare)
