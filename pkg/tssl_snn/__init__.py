__version__ = "0.1.0"

from .errors import *
from .snn import *
from .tasks import *
from .utils import *
from .run import *
