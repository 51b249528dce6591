"""Parareal for linear systems u' = A u on [0, T].

The coarse propagator is one backward-Euler step per subinterval; the fine
propagator is ``M`` backward-Euler substeps.  The convergence target is the
sequential fine solution, which parareal reproduces exactly (up to rounding)
after N corrections.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np
import scipy.linalg

from .parallel import run_parallel


class SingularStepError(np.linalg.LinAlgError):
    """I - dt*A is singular on a subinterval."""

    def __init__(self, j, dt):
        super().__init__(f"I - dt*A is singular on subinterval {j} (dt={dt!r})")
        self.subinterval = j
        self.dt = dt


@dataclass
class OdeProblem:
    A: np.ndarray
    u0: np.ndarray
    T: float
    coarse_nodes: np.ndarray
    fine_substeps: int = 1
    _lu: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.u0 = np.atleast_1d(np.asarray(self.u0, dtype=np.float64))
        self.coarse_nodes = np.asarray(self.coarse_nodes, dtype=np.float64)
        m = self.u0.size
        if self.A.shape != (m, m):
            raise ValueError(f"A has shape {self.A.shape}, expected ({m}, {m})")
        nodes = self.coarse_nodes
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ValueError("coarse nodes must be strictly increasing")
        if nodes[0] != 0.0 or nodes[-1] != self.T or self.T <= 0:
            raise ValueError("coarse nodes must run from 0 to T > 0")
        if self.fine_substeps < 1:
            raise ValueError("fine_substeps must be >= 1")

    @classmethod
    def uniform(cls, A, u0, T, N, M=1):
        return cls(A, u0, T, np.linspace(0.0, T, N + 1), M)

    @property
    def N(self):
        return self.coarse_nodes.size - 1

    def dt(self, j):
        return float(self.coarse_nodes[j + 1] - self.coarse_nodes[j])

    def step(self, j, u, dt):
        """One backward-Euler step: solve (I - dt A) v = u."""
        lu = self._lu.get(dt)
        if lu is None:
            mat = np.eye(self.A.shape[0]) - dt * self.A
            with warnings.catch_warnings():
                # singularity is reported below as a SingularStepError
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
            pivots = np.abs(np.diag(lu))
            if pivots.min() <= np.finfo(float).eps * max(pivots.max(), 1.0) * mat.shape[0]:
                raise SingularStepError(j, dt)
            lu = self._lu[dt] = (lu, piv)
        return scipy.linalg.lu_solve(lu, u)


@dataclass
class OdeState:
    k: int
    U: np.ndarray  # (N+1, m) coarse node values
    locals: list  # per subinterval, (M+1, m) fine trajectory
    S: np.ndarray  # (N+1, m) jumps at the nodes, S[0] = 0
    delta: np.ndarray  # (N+1, m) corrections, delta[0] = 0

    def local_ends(self):
        return np.array([traj[-1] for traj in self.locals])


def coarse_solve(problem):
    """Backward Euler on the coarse grid; returns U^1 as an (N+1, m) array."""
    U = np.empty((problem.N + 1, problem.u0.size))
    U[0] = problem.u0
    for j in range(problem.N):
        U[j + 1] = problem.step(j, U[j], problem.dt(j))
    return U


def fine_trajectory(problem, j, start_value):
    M = problem.fine_substeps
    h = problem.dt(j) / M
    traj = np.empty((M + 1, problem.u0.size))
    traj[0] = start_value
    for i in range(M):
        traj[i + 1] = problem.step(j, traj[i], h)
    return traj


def fine_propagate(problem, j, start_value):
    """Value at T_{j+1} after M backward-Euler substeps from T_j."""
    if not 0 <= j < problem.N:
        raise IndexError(f"subinterval {j} out of range")
    return fine_trajectory(problem, j, start_value)[-1]


def fine_solve(problem):
    """Sequential fine solution at the coarse nodes (the convergence oracle)."""
    U = np.empty((problem.N + 1, problem.u0.size))
    U[0] = problem.u0
    for j in range(problem.N):
        U[j + 1] = fine_propagate(problem, j, U[j])
    return U


def _local_solves(problem, U, workers):
    tasks = [lambda j=j: fine_trajectory(problem, j, U[j]) for j in range(problem.N)]
    trajs, _ = run_parallel(tasks, workers)
    return trajs


def initial_state(problem, workers=1):
    U = coarse_solve(problem)
    zeros = np.zeros_like(U)
    return OdeState(1, U, _local_solves(problem, U, workers), zeros, zeros.copy())


def coarse_grid_correction(problem, state, workers=1):
    """One parareal iteration k -> k+1.

    The jumps S_{j+1} = u_j(T_{j+1}) - U_{j+1} are carried forward by the
    coarse propagator, delta_{j+1} = G(delta_j) + S_{j+1}, and added to the
    node values; the local fine solves are then redone from the new nodes.
    """
    N = problem.N
    S = np.zeros_like(state.U)
    S[1:] = state.local_ends() - state.U[1:]
    delta = np.zeros_like(state.U)
    for j in range(N):
        delta[j + 1] = problem.step(j, delta[j], problem.dt(j)) + S[j + 1]
    U = state.U + delta
    U[0] = state.U[0]
    return OdeState(state.k + 1, U, _local_solves(problem, U, workers), S, delta)


def parareal_solve(problem, max_iters, tol=0.0, workers=1):
    """Iterate corrections until the error against the fine oracle is <= tol.

    ``error_history[i]`` is the max-norm node error after ``i`` corrections,
    so ``error_history[0]`` belongs to the plain coarse solve.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    reference = fine_solve(problem)
    state = initial_state(problem, workers)
    history = [float(np.max(np.abs(state.U - reference)))]
    while history[-1] > tol and len(history) <= max_iters:
        state = coarse_grid_correction(problem, state, workers)
        history.append(float(np.max(np.abs(state.U - reference))))
    return state.U, history


def random_stable_matrix(dim, seed=0):
    """Random A whose symmetric part is negative definite, so every
    eigenvalue has negative real part and backward Euler never breaks down."""
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((dim, dim))
    K = rng.standard_normal((dim, dim))
    return -(S @ S.T / dim + 0.5 * np.eye(dim)) + 0.5 * (K - K.T)
