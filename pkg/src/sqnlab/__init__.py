"""Stochastic quasi-Newton methods with damped-BFGS and cyclic-BB curvature."""

__version__ = "0.1.0"

from .core import *  # noqa: F401,F403
from .oracle import *  # noqa: F401,F403
from .updaters import *  # noqa: F401,F403
from .solvers import *  # noqa: F401,F403
