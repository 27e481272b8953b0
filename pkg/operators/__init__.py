from .operator import *
from .identity import *
from .heat import *
from .poisson import *
from .gfunction import *
from .laplace import *
from .riesz import *
from .negativepower import *
