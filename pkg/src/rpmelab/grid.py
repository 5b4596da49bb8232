"""Uniform grids on the closed unit cube and the finite-difference calculus on them.

Nodes sit at integer multiples of h = 1/(M+1) along every axis, M being the
number of interior nodes per axis.  The outermost layer carries boundary
data, the inner block carries the PDE unknowns.  Discrete Lebesgue and
Sobolev norms weight nodal sums with powers of h so that they are mesh
analogues of the continuum norms.

Partial operators (forward differences, the five-point Laplacian, normal
differences) return fields with an explicit definedness mask instead of
zero-filling nodes where the stencil does not fit.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

# Dense adjoint solves for the negative-order norm below this per-axis size,
# conjugate-gradient iteration on the normal equations above it.
_DENSE_LIMIT = 32
_CG_TOL = 1e-10
_CG_MAXITER = 10_000


class BoundaryKind(Enum):
    """Boundary handling for the parabolic unknown."""

    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid over [0, 1]**dim.

    ``cells_per_axis`` is the interior node count M per axis; spacing is
    h = 1/(M+1) and every axis carries M+2 nodes including both boundary
    layers.
    """

    dim: int
    cells_per_axis: int

    def __post_init__(self) -> None:
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if not isinstance(self.cells_per_axis, int) or self.cells_per_axis < 2:
            raise ValueError(
                f"cells_per_axis must be an integer >= 2, got {self.cells_per_axis!r}"
            )

    @property
    def spacing(self) -> float:
        return 1.0 / (self.cells_per_axis + 1)

    @property
    def nodes_per_axis(self) -> int:
        return self.cells_per_axis + 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_axis**self.dim

    @property
    def n_interior(self) -> int:
        return self.cells_per_axis**self.dim

    def axis_coords(self) -> np.ndarray:
        """Node coordinates along one axis, endpoints exactly 0 and 1."""
        return _structure(self.dim, self.cells_per_axis).coords

    def node_points(self) -> np.ndarray:
        """All node coordinates, shape ``grid.shape + (dim,)``."""
        return _structure(self.dim, self.cells_per_axis).points

    def interior_mask(self) -> np.ndarray:
        return _structure(self.dim, self.cells_per_axis).interior

    def boundary_mask(self) -> np.ndarray:
        return _structure(self.dim, self.cells_per_axis).boundary

    def free_mask(self) -> np.ndarray:
        """Nodes at least 2h from the closed boundary; see :class:`Hminus2Solver`."""
        return _structure(self.dim, self.cells_per_axis).free

    def reflect_flat(self) -> np.ndarray:
        """Flat index of the reflected partner of every node (identity inside)."""
        return _structure(self.dim, self.cells_per_axis).reflect_flat

    def inner_measure_complement(self) -> float:
        """Lebesgue measure of the part of the cube within 2h of the boundary."""
        side = 1.0 - 4.0 * self.spacing
        return 1.0 - max(side, 0.0) ** self.dim


class _GridArrays(NamedTuple):
    coords: np.ndarray
    points: np.ndarray
    boundary: np.ndarray
    interior: np.ndarray
    free: np.ndarray
    reflect_flat: np.ndarray


@lru_cache(maxsize=128)
def _structure(dim: int, m: int) -> _GridArrays:
    shape = (m + 2,) * dim
    coords = np.linspace(0.0, 1.0, m + 2)
    idx = np.indices(shape)
    boundary = np.zeros(shape, dtype=bool)
    for k in range(dim):
        boundary |= (idx[k] == 0) | (idx[k] == m + 1)
    interior = ~boundary
    refl = idx.copy()
    for k in range(dim):
        ax = refl[k]
        ax[ax == 0] = 1
        ax[ax == m + 1] = m
    reflect_flat = np.ravel_multi_index(tuple(refl), shape)
    free = np.ones(shape, dtype=bool)
    for k in range(dim):
        free &= (idx[k] >= 2) & (idx[k] <= m - 1)
    points = np.stack(np.meshgrid(*([coords] * dim), indexing="ij"), axis=-1)
    for a in (coords, points, boundary, interior, free, reflect_flat):
        a.setflags(write=False)
    return _GridArrays(coords, points, boundary, interior, free, reflect_flat)


def build_grid(dim: int, cells_per_axis: int) -> GridSpec:
    """Validated constructor for :class:`GridSpec`."""
    return GridSpec(dim=dim, cells_per_axis=cells_per_axis)


@dataclass(frozen=True, eq=False)
class Field(object):
    """A real nodal function on the full node set of a grid.

    ``mask`` marks where the values are defined (None means everywhere);
    values under the mask must be finite.  Fields are treated as immutable:
    the stored array is read-only.
    """

    grid: GridSpec
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"values shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)
        if self.mask is not None:
            m = np.array(self.mask, dtype=bool, copy=True)
            if m.shape != self.grid.shape:
                raise ValueError("mask shape does not match grid shape")
            object.__setattr__(self, "mask", m)
            m.setflags(write=False)
        if vals.size and not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")

    def defined_mask(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.mask

    def is_fully_defined(self) -> bool:
        return self.mask is None or bool(self.mask.all())


def sample_nodal(grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray]) -> Field:
    """Field of pointwise samples fn(x) at the nodes; fn takes (..., dim) arrays."""
    vals = np.asarray(fn(grid.node_points()), dtype=np.float64)
    return Field(grid, vals.reshape(grid.shape))


def _require_defined(u: Field, what: str) -> None:
    if not u.is_fully_defined():
        raise ValueError(f"{what} requires a fully defined field")


def _subset_mask(grid: GridSpec, subset) -> np.ndarray:
    if isinstance(subset, str):
        if subset == "interior":
            return grid.interior_mask()
        if subset == "full":
            return np.ones(grid.shape, dtype=bool)
        if subset == "boundary":
            return grid.boundary_mask()
        raise ValueError(f"unknown subset {subset!r}")
    m = np.asarray(subset, dtype=bool)
    if m.shape != grid.shape:
        raise ValueError("subset mask shape does not match grid shape")
    return m


# ---------------------------------------------------------------------------
# difference operators


def forward_diff(u: Field, axis: int) -> Field:
    """Forward difference (u(m + h e_k) - u(m)) / h along ``axis`` (0-based).

    Defined wherever both stencil points are; the last node layer along the
    axis is masked out.
    """
    g = u.grid
    if not 0 <= axis < g.dim:
        raise ValueError(f"axis {axis} out of range for dim {g.dim}")
    h = g.spacing
    lo = [slice(None)] * g.dim
    hi = [slice(None)] * g.dim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    out = np.zeros(g.shape)
    out[tuple(lo)] = (u.values[tuple(hi)] - u.values[tuple(lo)]) / h
    mask = np.zeros(g.shape, dtype=bool)
    dm = u.defined_mask()
    mask[tuple(lo)] = dm[tuple(lo)] & dm[tuple(hi)]
    out[~mask] = 0.0
    return Field(g, out, mask)


def backward_diff(u: Field, axis: int) -> Field:
    """Backward difference (u(m) - u(m - h e_k)) / h along ``axis``."""
    g = u.grid
    if not 0 <= axis < g.dim:
        raise ValueError(f"axis {axis} out of range for dim {g.dim}")
    h = g.spacing
    lo = [slice(None)] * g.dim
    hi = [slice(None)] * g.dim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    out = np.zeros(g.shape)
    out[tuple(hi)] = (u.values[tuple(hi)] - u.values[tuple(lo)]) / h
    mask = np.zeros(g.shape, dtype=bool)
    dm = u.defined_mask()
    mask[tuple(hi)] = dm[tuple(lo)] & dm[tuple(hi)]
    out[~mask] = 0.0
    return Field(g, out, mask)


def laplacian_core(values: np.ndarray, h: float, dim: int) -> np.ndarray:
    """Second-difference Laplacian of trailing-dim shaped values, interior block.

    ``values`` may carry leading batch axes; the result has the interior
    shape along the trailing axes.
    """
    lead = values.ndim - dim
    core = (slice(None),) * lead + (slice(1, -1),) * dim
    acc = (-2.0 * dim) * values[core]
    for k in range(dim):
        sl_p = [slice(1, -1)] * dim
        sl_m = [slice(1, -1)] * dim
        sl_p[k] = slice(2, None)
        sl_m[k] = slice(0, -2)
        acc = acc + values[(slice(None),) * lead + tuple(sl_p)]
        acc = acc + values[(slice(None),) * lead + tuple(sl_m)]
    return acc / (h * h)


def laplacian(u: Field) -> Field:
    """Discrete Laplacian; defined on the interior node block only."""
    g = u.grid
    _require_defined(u, "laplacian")
    out = np.zeros(g.shape)
    core = (slice(1, -1),) * g.dim
    out[core] = laplacian_core(u.values, g.spacing, g.dim)
    return Field(g, out, g.interior_mask())


def reflect(grid: GridSpec, index: tuple[int, ...]) -> tuple[int, ...]:
    """Reflected partner of a node multi-index: boundary coordinates move one
    layer inward, interior coordinates are unchanged."""
    if len(index) != grid.dim:
        raise ValueError("index arity does not match grid dim")
    m = grid.cells_per_axis
    out = []
    for i in index:
        if not 0 <= i <= m + 1:
            raise ValueError(f"index component {i} out of range")
        out.append(1 if i == 0 else m if i == m + 1 else i)
    return tuple(out)


def normal_diff(u: Field) -> Field:
    """Discrete outward normal difference (u(m) - u(m_refl)) / h on the boundary."""
    g = u.grid
    _require_defined(u, "normal_diff")
    flat = u.values.reshape(-1)
    refl = flat[g.reflect_flat()].reshape(g.shape)
    out = (u.values - refl) / g.spacing
    bmask = g.boundary_mask()
    vals = np.where(bmask, out, 0.0)
    return Field(g, vals, bmask)


# ---------------------------------------------------------------------------
# norms


def l2_inner(u: Field, v: Field, subset="interior") -> float:
    """h**dim weighted nodal inner product over a node subset."""
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    sel = _subset_mask(u.grid, subset) & u.defined_mask() & v.defined_mask()
    w = u.grid.spacing**u.grid.dim
    return float(w * np.sum(u.values[sel] * v.values[sel]))


def lp_norm(u: Field, p: float, subset="interior") -> float:
    """Discrete L^p norm with h**dim node weights; p = inf gives the max."""
    sel = _subset_mask(u.grid, subset) & u.defined_mask()
    vals = np.abs(u.values[sel])
    if vals.size == 0:
        return 0.0
    if np.isinf(p):
        return float(vals.max())
    if p < 1:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    w = u.grid.spacing**u.grid.dim
    return float((w * np.sum(vals**p)) ** (1.0 / p))


def h1_seminorm(u: Field) -> float:
    """First-difference seminorm with h**(dim-2) pair weights.

    Sums squared nodal gaps over every axis-adjacent pair whose two nodes are
    both defined, so it applies to partially defined fields as well.
    """
    g = u.grid
    dm = u.defined_mask()
    total = 0.0
    for k in range(g.dim):
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        pair = dm[tuple(lo)] & dm[tuple(hi)]
        diff = u.values[tuple(hi)] - u.values[tuple(lo)]
        total += float(np.sum(np.where(pair, diff, 0.0) ** 2))
    return float(np.sqrt(g.spacing ** (g.dim - 2) * total))


def grad_h1_seminorm(u: Field) -> float:
    """Root sum of squares of h1_seminorm over all forward partials of u."""
    return float(
        np.sqrt(sum(h1_seminorm(forward_diff(u, k)) ** 2 for k in range(u.grid.dim)))
    )


# ---------------------------------------------------------------------------
# negative-order norm via the doubly vanishing test space


class Hminus2Solver:
    """Dual-norm evaluator over the test space of fields that vanish on the
    boundary layer and have zero normal difference there.

    Both constraints force the test field to vanish on the first interior
    layer too, so its free unknowns are the nodes at distance >= 2h from the
    closed boundary.  The norm of u on the interior block is

        sup_v (u, v)_h / ||lap_h v||_h

    over the free space; it is evaluated by one symmetric positive definite
    solve with the Gram matrix of the Laplacian images.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        free = grid.free_mask()
        interior = grid.interior_mask()
        self._free_flat = np.flatnonzero(free.reshape(-1))
        self._interior_flat = np.flatnonzero(interior.reshape(-1))
        self.n_free = self._free_flat.size
        if self.n_free == 0:
            self._dense = None
            self._a_op = None
            return
        a_mat = _laplacian_matrix(grid)[:, self._free_flat].tocsc()
        if grid.cells_per_axis <= _DENSE_LIMIT:
            dense = a_mat.toarray()
            gram = dense.T @ dense
            self._dense = scipy.linalg.cho_factor(gram)
            self._a_op = None
        else:
            self._dense = None
            self._a_op = a_mat

    @property
    def is_empty(self) -> bool:
        return self.n_free == 0

    def norm(self, interior_values: np.ndarray) -> float:
        """Norm of the field whose interior nodal values are given (flat or shaped)."""
        if self.is_empty:
            return 0.0
        g = self.grid
        full = np.zeros(g.n_nodes)
        vals = np.asarray(interior_values, dtype=np.float64).reshape(-1)
        if vals.size == g.n_interior:
            full[self._interior_flat] = vals
        elif vals.size == g.n_nodes:
            full = vals
        else:
            raise ValueError("interior_values has neither interior nor full size")
        u_free = full[self._free_flat]
        if self._dense is not None:
            z = scipy.linalg.cho_solve(self._dense, u_free)
        else:
            a = self._a_op

            def matvec(x):
                return a.T @ (a @ x)

            op = scipy.sparse.linalg.LinearOperator(
                (self.n_free, self.n_free), matvec=matvec
            )
            z, info = scipy.sparse.linalg.cg(
                op, u_free, rtol=_CG_TOL, maxiter=_CG_MAXITER
            )
            if info != 0:
                raise RuntimeError(f"normal-equation CG did not converge (info={info})")
        val = float(u_free @ z)
        return float(np.sqrt(g.spacing**g.dim * max(val, 0.0)))


@lru_cache(maxsize=32)
def _laplacian_matrix(grid: GridSpec) -> scipy.sparse.csr_matrix:
    """Sparse matrix of the discrete Laplacian, interior rows by all-node columns."""
    shape = grid.shape
    h = grid.spacing
    rows_flat = np.flatnonzero(grid.interior_mask().reshape(-1))
    n_rows = rows_flat.size
    row_ids = np.arange(n_rows)
    strides = [int(np.prod(shape[k + 1 :])) for k in range(grid.dim)]
    data = []
    rr = []
    cc = []
    inv_h2 = 1.0 / (h * h)
    rr.append(row_ids)
    cc.append(rows_flat)
    data.append(np.full(n_rows, -2.0 * grid.dim * inv_h2))
    for k in range(grid.dim):
        for sgn in (-1, 1):
            rr.append(row_ids)
            cc.append(rows_flat + sgn * strides[k])
            data.append(np.full(n_rows, inv_h2))
    mat = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rr), np.concatenate(cc))),
        shape=(n_rows, grid.n_nodes),
    )
    return mat.tocsr()


@lru_cache(maxsize=32)
def _hm2_solver(grid: GridSpec) -> Hminus2Solver:
    return Hminus2Solver(grid)


def hminus2_norm(u: Field) -> float:
    """Negative-order dual norm of the interior values of u.

    Returns 0 when the free test space is empty (grids too coarse to carry
    any doubly vanishing test field).
    """
    solver = _hm2_solver(u.grid)
    sel = u.grid.interior_mask()
    if not np.all(u.defined_mask()[sel]):
        raise ValueError("hminus2_norm requires values on the whole interior block")
    return solver.norm(u.values[sel])


def h02_embed(grid: GridSpec, free_values: np.ndarray) -> Field:
    """Field in the doubly vanishing test space with the given free-node values."""
    solver = _hm2_solver(grid)
    vals = np.asarray(free_values, dtype=np.float64).reshape(-1)
    if vals.size != solver.n_free:
        raise ValueError(f"expected {solver.n_free} free values, got {vals.size}")
    full = np.zeros(grid.n_nodes)
    full[solver._free_flat] = vals
    return Field(grid, full.reshape(grid.shape))


def free_node_count(grid: GridSpec) -> int:
    return _hm2_solver(grid).n_free


# ---------------------------------------------------------------------------
# chain-rule defect


def _gauss01(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def chain_rule_residual(
    g: Callable[[np.ndarray], np.ndarray],
    g_prime: Callable[[np.ndarray], np.ndarray],
    u: Field,
    axis: int,
    quad_order: int = 8,
) -> float:
    """Max defect of the exact difference chain rule along one axis.

    The forward difference of g(u) equals the forward difference of u times
    the mean of g' along the straight segment between the two nodal values;
    the segment mean is evaluated by Gauss-Legendre quadrature of the given
    order, so the residual is zero up to quadrature error (exactly zero for
    polynomial g' of degree < 2*quad_order).
    """
    if quad_order < 1:
        raise ValueError("quad_order must be >= 1")
    gr = u.grid
    du = forward_diff(u, axis)
    gu = Field(gr, np.asarray(g(u.values), dtype=np.float64), u.mask)
    dgu = forward_diff(gu, axis)
    sel = du.defined_mask()
    base = u.values[sel]
    slope = du.values[sel]
    xs, ws = _gauss01(quad_order)
    mean_deriv = np.zeros_like(base)
    h = gr.spacing
    for x, w in zip(xs, ws):
        mean_deriv += w * np.asarray(g_prime(base + x * h * slope), dtype=np.float64)
    resid = dgu.values[sel] - slope * mean_deriv
    return float(np.max(np.abs(resid))) if resid.size else 0.0
