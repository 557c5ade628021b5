"""Deterministic multi-fidelity PDE data oracles.

Three parameterized problems (viscous Burgers, Poisson with a Dirac source,
1-D heat conduction) solved at a mesh resolution chosen by the fidelity
level. Outputs are flattened row-major solution fields; each query carries
the normalized cost of its fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .errors import (
    NonlinearSolveFailed,
    OutOfDomain,
    ShapeMismatch,
    SolverSingular,
    UnknownFidelity,
)

BURGERS_T_FINAL = 3.0
HEAT_T_FINAL = 5.0
PICARD_TOL = 1e-10
PICARD_MAX_ITERS = 100

# Dense meshes used for test-set generation.
DENSE_MESH = {"burgers": (128, 128), "poisson": (128, 128), "heat": (100, 100)}


@dataclass(frozen=True)
class FidelitySpec:
    """Mesh resolution and query cost of one fidelity level."""

    mesh_nx: int
    mesh_nt_or_ny: int
    cost_lambda: float

    def __post_init__(self):
        if self.cost_lambda <= 0:
            raise ValueError("cost_lambda must be positive")

    @property
    def output_dim(self):
        return self.mesh_nx * self.mesh_nt_or_ny


@dataclass(frozen=True)
class PdeProblem:
    """One equation with its input box and ordered fidelity levels."""

    equation: str
    input_box: tuple  # ((lo, hi), ...) per input coordinate
    fidelities: tuple  # FidelitySpec, lowest fidelity first

    def __post_init__(self):
        if self.equation not in ("burgers", "poisson", "heat"):
            raise ValueError(f"unknown equation {self.equation!r}")

    @property
    def input_dim(self):
        return len(self.input_box)

    @property
    def num_fidelities(self):
        return len(self.fidelities)


@dataclass(frozen=True)
class FieldSample:
    """One solved field: input, 1-based fidelity index, flat values, cost."""

    input: np.ndarray
    fidelity_index: int
    values: np.ndarray
    cost: float


def make_problem(name):
    """Named problem presets with the standard fidelity meshes and costs."""
    two = (FidelitySpec(16, 16, 1.0), FidelitySpec(32, 32, 3.0))
    if name == "poisson2":
        return PdeProblem("poisson", ((0.1, 0.9),) * 5, two)
    if name == "poisson3":
        return PdeProblem(
            "poisson", ((0.1, 0.9),) * 5, two + (FidelitySpec(64, 64, 10.0),)
        )
    if name == "burgers2":
        return PdeProblem("burgers", ((0.001, 0.1),), two)
    if name == "heat2":
        return PdeProblem("heat", ((0.0, 1.0), (-1.0, 0.0), (0.01, 0.1)), two)
    raise ValueError(f"unknown problem {name!r}")


# ---------------------------------------------------------------------------
# Poisson

_poisson_lu_cache = {}


def _poisson_interior_lu(nx, ny):
    key = (nx, ny)
    if key not in _poisson_lu_cache:
        dx = 1.0 / (nx - 1)
        dy = 1.0 / (ny - 1)
        mx, my = nx - 2, ny - 2
        Dx = sp.diags([1, -2, 1], [-1, 0, 1], shape=(mx, mx)) / dx**2
        Dy = sp.diags([1, -2, 1], [-1, 0, 1], shape=(my, my)) / dy**2
        A = sp.kronsum(Dy, Dx).tocsc()  # interior Laplacian, row-major (x, y)
        try:
            _poisson_lu_cache[key] = splu(-A)  # negate to factor an SPD matrix
        except RuntimeError as exc:
            raise SolverSingular(str(exc)) from exc
    return _poisson_lu_cache[key]


def solve_poisson_general(rhs, boundary, nx, ny):
    """Solve the Dirichlet Poisson problem u_xx + u_yy = rhs on [0,1]^2.

    rhs and boundary are (nx, ny) node arrays; only interior rhs values and
    edge boundary values are used. Returns the full (nx, ny) field.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    boundary = np.asarray(boundary, dtype=np.float64)
    if rhs.shape != (nx, ny) or boundary.shape != (nx, ny):
        raise ShapeMismatch("rhs/boundary must be (nx, ny)")
    dx = 1.0 / (nx - 1)
    dy = 1.0 / (ny - 1)
    b = rhs[1:-1, 1:-1].copy()
    # Move known boundary values to the right-hand side.
    b[0, :] -= boundary[0, 1:-1] / dx**2
    b[-1, :] -= boundary[-1, 1:-1] / dx**2
    b[:, 0] -= boundary[1:-1, 0] / dy**2
    b[:, -1] -= boundary[1:-1, -1] / dy**2
    u_int = _poisson_interior_lu(nx, ny).solve(-b.ravel())
    u = boundary.copy()
    u[1:-1, 1:-1] = u_int.reshape(nx - 2, ny - 2)
    return u


def solve_poisson(boundary_values, beta, nx, ny):
    """Poisson field with constant edge values and a lumped Dirac source of
    strength beta at the node nearest the domain center.

    boundary_values = (left, right, bottom, top) for x=0, x=1, y=0, y=1.
    """
    if nx < 3 or ny < 3:
        raise ValueError("nx, ny must be >= 3")
    left, right, bottom, top = (float(v) for v in boundary_values)
    boundary = np.zeros((nx, ny))
    boundary[0, :] = left
    boundary[-1, :] = right
    boundary[:, 0] = bottom  # bottom/top fill last so corners follow the y-edges
    boundary[:, -1] = top
    dx = 1.0 / (nx - 1)
    dy = 1.0 / (ny - 1)
    ic = int(np.floor(0.5 * (nx - 1) + 0.5))
    jc = int(np.floor(0.5 * (ny - 1) + 0.5))
    rhs = np.zeros((nx, ny))
    rhs[ic, jc] = beta / (dx * dy)
    return solve_poisson_general(rhs, boundary, nx, ny)


# ---------------------------------------------------------------------------
# Heat

def solve_heat(flux_left, flux_right, alpha, nx, nt):
    """u_t = alpha * u_xx on x in [0,1], t in [0,5].

    Neumann conditions u_x(0) = flux_left, u_x(1) = flux_right via ghost
    nodes; backward Euler in time. Column j of the returned (nx, nt) field
    is the solution at time level j (level 0 is the initial step profile).
    """
    if nx < 3 or nt < 2:
        raise ValueError("nx >= 3 and nt >= 2 required")
    h = 1.0 / (nx - 1)
    dt = HEAT_T_FINAL / (nt - 1)
    r = alpha * dt / h**2
    x = np.linspace(0.0, 1.0, nx)
    u = np.where((x >= 0.25) & (x < 0.75), 1.0, 0.0)

    # Banded (I - r*T) for solve_banded; T is the ghost-node Laplacian stencil.
    ab = np.zeros((3, nx))
    ab[1, :] = 1.0 + 2.0 * r
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    ab[0, 1] = -2.0 * r
    ab[2, -2] = -2.0 * r
    s = np.zeros(nx)
    s[0] = -2.0 * h * flux_left
    s[-1] = 2.0 * h * flux_right

    field = np.empty((nx, nt))
    field[:, 0] = u
    for j in range(1, nt):
        u = solve_banded((1, 1), ab, u + r * s)
        field[:, j] = u
    return field


def trapezoid_mean(column):
    """Trapezoid-weighted spatial mean; the quantity the heat scheme conserves."""
    w = np.ones(len(column))
    w[0] = w[-1] = 0.5
    return float(w @ column) / (len(column) - 1)


# ---------------------------------------------------------------------------
# Burgers

def _convection_diags(w, h):
    """Tridiagonal Galerkin convection matrix for lagged coefficient w."""
    lower = -(w[:-1] + 2.0 * w[1:]) / 6.0          # C[i, i-1]
    upper = (2.0 * w[:-1] + w[1:]) / 6.0           # C[i, i+1]
    diag = np.zeros_like(w)
    diag[1:-1] = (w[:-2] - w[2:]) / 6.0
    diag[0] = -(2.0 * w[0] + w[1]) / 6.0
    diag[-1] = (w[-2] + 2.0 * w[-1]) / 6.0
    return lower, diag, upper


def solve_burgers(viscosity, nx, nt):
    """Viscous Burgers on x in [0,1], t in [0,3], u(x,0) = sin(pi x / 2),
    homogeneous Dirichlet enforced from the first time step onward.

    Hat-function Galerkin in space (consistent mass), backward Euler in time,
    Picard iteration on the lagged convection coefficient.
    """
    if not (0.001 - 1e-12 <= viscosity <= 0.1 + 1e-12):
        raise OutOfDomain(f"viscosity {viscosity} outside [0.001, 0.1]")
    if nx < 3 or nt < 2:
        raise ValueError("nx >= 3 and nt >= 2 required")
    h = 1.0 / (nx - 1)
    dt = BURGERS_T_FINAL / (nt - 1)
    x = np.linspace(0.0, 1.0, nx)
    u = np.sin(np.pi * x / 2.0)

    # Full-node tridiagonals (lower, diag, upper) of mass and stiffness.
    m_l = np.full(nx - 1, h / 6.0)
    m_d = np.full(nx, 4.0 * h / 6.0)
    m_d[0] = m_d[-1] = 2.0 * h / 6.0
    k_l = np.full(nx - 1, -1.0 / h)
    k_d = np.full(nx, 2.0 / h)
    k_d[0] = k_d[-1] = 1.0 / h

    def tri_mv(lower, diag, upper, v):
        out = diag * v
        out[1:] += lower * v[:-1]
        out[:-1] += upper * v[1:]
        return out

    field = np.empty((nx, nt))
    field[:, 0] = u
    for j in range(1, nt):
        rhs_full = tri_mv(m_l, m_d, m_l, u) / dt
        rhs = rhs_full[1:-1]
        w = u.copy()
        w[0] = w[-1] = 0.0

        def interior_diagonals(coef):
            """(sub, diag, super) of M/dt + C(coef) + nu*K on interior nodes."""
            c_l, c_d, c_u = _convection_diags(coef, h)
            lo = m_l[1:-1] / dt + c_l[1:-1] + viscosity * k_l[1:-1]
            di = m_d[1:-1] / dt + c_d[1:-1] + viscosity * k_d[1:-1]
            up = m_l[1:-1] / dt + c_u[1:-1] + viscosity * k_l[1:-1]
            return lo, di, up

        new = None
        for _ in range(PICARD_MAX_ITERS):
            lo, di, up = interior_diagonals(w)
            ab = np.zeros((3, nx - 2))
            ab[1] = di
            ab[0, 1:] = up
            ab[2, :-1] = lo
            new = np.zeros(nx)
            new[1:-1] = solve_banded((1, 1), ab, rhs)
            # Nonlinear residual with the updated coefficient.
            lo, di, up = interior_diagonals(new)
            res = di * new[1:-1] - rhs
            res[1:] += lo * new[1:-2]
            res[:-1] += up * new[2:-1]
            if np.max(np.abs(res)) < PICARD_TOL:
                break
            w = new
        else:
            raise NonlinearSolveFailed(
                f"Picard did not reach {PICARD_TOL} in {PICARD_MAX_ITERS} iterations"
            )
        u = new
        field[:, j] = u
    return field


# ---------------------------------------------------------------------------
# Interpolation and dispatch

def interpolate_bilinear(values, src_dims, dst_dims):
    """Bilinear interpolation between uniform grids on the same domain.

    values may be flat (row-major) or already (src_nx, src_ny). Returns the
    (dst_nx, dst_ny) field.
    """
    sx, sy = src_dims
    dx, dy = dst_dims
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim == 1:
        if grid.size != sx * sy:
            raise ShapeMismatch(f"flat length {grid.size} != {sx}*{sy}")
        grid = grid.reshape(sx, sy)
    elif grid.shape != (sx, sy):
        raise ShapeMismatch(f"grid shape {grid.shape} != {(sx, sy)}")

    def axis_weights(n_src, n_dst):
        t = np.linspace(0.0, n_src - 1.0, n_dst)
        i0 = np.minimum(t.astype(int), n_src - 2)
        return i0, t - i0

    ix, fx = axis_weights(sx, dx)
    iy, fy = axis_weights(sy, dy)
    g = grid[np.ix_(ix, iy)] * np.outer(1 - fx, 1 - fy)
    g += grid[np.ix_(ix + 1, iy)] * np.outer(fx, 1 - fy)
    g += grid[np.ix_(ix, iy + 1)] * np.outer(1 - fx, fy)
    g += grid[np.ix_(ix + 1, iy + 1)] * np.outer(fx, fy)
    return g


def _solve_on_mesh(problem, x, nx, n2):
    x = np.asarray(x, dtype=np.float64)
    if problem.equation == "poisson":
        return solve_poisson(x[:4], x[4], nx, n2)
    if problem.equation == "heat":
        return solve_heat(x[0], x[1], x[2], nx, n2)
    return solve_burgers(x[0], nx, n2)


def check_in_box(x, box, tol=1e-9):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(box),):
        raise ShapeMismatch(f"input shape {x.shape}, expected ({len(box)},)")
    for v, (lo, hi) in zip(x, box):
        if v < lo - tol or v > hi + tol:
            raise OutOfDomain(f"value {v} outside [{lo}, {hi}]")
    return x


def query_oracle(problem, x, m):
    """Solve problem at input x with fidelity m (1-based); returns FieldSample."""
    x = check_in_box(x, problem.input_box)
    if not 1 <= m <= problem.num_fidelities:
        raise UnknownFidelity(f"fidelity {m} not in 1..{problem.num_fidelities}")
    spec = problem.fidelities[m - 1]
    field = _solve_on_mesh(problem, x, spec.mesh_nx, spec.mesh_nt_or_ny)
    return FieldSample(x.copy(), m, field.ravel(), spec.cost_lambda)


def sample_inputs(problem, n, rng):
    lo = np.array([b[0] for b in problem.input_box])
    hi = np.array([b[1] for b in problem.input_box])
    return lo + (hi - lo) * rng.random((n, problem.input_dim))


def generate_test_set(problem, n, seed):
    """n test pairs: uniform inputs, dense-mesh solves interpolated down to
    the highest-fidelity grid. Deterministic in seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    inputs = sample_inputs(problem, n, rng)
    dense = DENSE_MESH[problem.equation]
    top = problem.fidelities[-1]
    pairs = []
    for x in inputs:
        field = _solve_on_mesh(problem, x, dense[0], dense[1])
        coarse = interpolate_bilinear(field, dense, (top.mesh_nx, top.mesh_nt_or_ny))
        pairs.append((x.copy(), coarse.ravel()))
    return pairs
