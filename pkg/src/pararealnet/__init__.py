"""Parareal-parallel training of feed-forward networks, in numpy.

Modules: ``tensor`` (shape-checked arrays), ``layers`` (layer kinds with
manual backward passes), ``parareal_ode`` (parareal for u' = Au),
``parareal_net`` (the branch/coarse-chain network transformation),
``executor`` (parallel execution and stage timing), ``trainer``, ``data``,
``checkpoint``, ``config`` and ``cli``.
"""

from .executor import TimingReport, relative_speedup, timed_step
from .parallel import run_parallel
from .parareal_net import PararealNetwork, SequentialNetwork, backward, build_parareal, forward
from .parareal_ode import OdeProblem, parareal_solve

__version__ = "0.1.0"
