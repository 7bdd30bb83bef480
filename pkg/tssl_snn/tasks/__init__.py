from .evaluation import *
from .gradcheck import *
from .sparsity import *
from .training import *
