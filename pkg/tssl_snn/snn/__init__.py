from .backprop import *
from .checkpoint import *
from .layers import *
from .loss import *
from .network import *
from .neuron import *
from .optim import *
from .oracle import *
