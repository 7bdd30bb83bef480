from ..tasks.compare_registry import *
from .config import *
from .data import *
from .directories import *
from .metrics import *
from .tables import *
