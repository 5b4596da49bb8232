"""Propagation of pathwise noise derivatives along a stored trajectory.

For a differentiation time r the pair (z, dry) solves the variational system
obtained by differentiating the scheme w.r.t. the Brownian path at r:

    z    = derivative of the conserved variable v = beta(c),
    drc  = z / beta'(c)          (derivative of the concentration),
    dry  = derivative of the SDE state,

seeded at step r with z = 0 (the parabolic state is adapted) and
dry = a(y(r)), then advanced with the linearization of the primal update:

    z+   = z + dt * (lap_h drc + f_c drc + f_y dry)     on interior nodes,
    dry+ = dry + a'(y) dry dW + (b_c drc + b_y dry) dt  on all nodes.

Seeding before step r makes the recursion reproduce the continuous
variational initial condition; for linear noise a(y) = sigma*y with no drift
or source feedback it telescopes to dry(T) = sigma * y(T) exactly.

Where the primal clamp at zero bites, the derivative is zeroed (the clamp's
a.e. derivative), so the quotient of a clamped perturbed run still matches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import BoundaryKind, GridSpec, laplacian_core
from .model import CoefficientSet
from .simulate import SimConfig, Trajectory, WienerPath, apply_bc, simulate_path


@dataclass
class MalliavinState:
    """Derivative pair at one time level, full grid shape."""

    z: np.ndarray
    dry: np.ndarray


@dataclass(frozen=True)
class MalliavinSlice:
    step_index: int
    t: float
    z: np.ndarray
    drc: np.ndarray
    dry: np.ndarray


def recover_drc(z: np.ndarray, c: np.ndarray, coeffs: CoefficientSet) -> np.ndarray:
    """Concentration derivative from the conserved-variable derivative; the
    factor 1/beta'(c) vanishes at the degenerate set c = 0."""
    return z * coeffs.recip_beta_prime(c)


def init_malliavin(y_r: np.ndarray, coeffs: CoefficientSet) -> MalliavinState:
    return MalliavinState(z=np.zeros_like(y_r), dry=np.asarray(coeffs.a(y_r), dtype=np.float64).copy())


def step_malliavin(
    mstate: MalliavinState,
    c: np.ndarray,
    y: np.ndarray,
    grid: GridSpec,
    coeffs: CoefficientSet,
    bc: BoundaryKind,
    dt: float,
    dW: float,
) -> MalliavinState:
    """Advance the derivative pair across one primal step (c, y) -> next.

    ``c`` and ``y`` are the primal states at the step start; the primal
    pre-clamp values are recomputed to gate the derivative where the clamp
    was active.
    """
    dim = grid.dim
    h = grid.spacing
    core = (slice(1, -1),) * dim

    z, dry = mstate.z, mstate.dry
    drc = recover_drc(z, c, coeffs)

    c_int, y_int = c[core], y[core]
    z_new_int = z[core] + dt * (
        laplacian_core(drc, h, dim)
        + coeffs.df_dc(c_int, y_int) * drc[core]
        + coeffs.df_dy(c_int, y_int) * dry[core]
    )
    # primal clamp gating: the a.e. derivative of max(., 0) is an indicator
    v_pre = coeffs.beta(c_int) + dt * (laplacian_core(c, h, dim) + coeffs.f(c_int, y_int))
    z_new_int = np.where(v_pre < 0.0, 0.0, z_new_int)

    z_new = np.array(z, copy=True)
    z_new[core] = z_new_int
    z_new = apply_bc(z_new, grid, bc)

    dry_new = dry + coeffs.a_prime(y) * dry * dW + (
        coeffs.db_dc(c, y) * drc + coeffs.db_dy(c, y) * dry
    ) * dt
    y_pre = y + coeffs.a(y) * dW + coeffs.b(c, y) * dt
    dry_new = np.where(y_pre < 0.0, 0.0, dry_new)
    return MalliavinState(z=z_new, dry=dry_new)


def _require_dense(traj: Trajectory) -> None:
    if not np.array_equal(traj.step_indices, np.arange(traj.n_steps + 1)):
        raise ValueError("derivative propagation needs a densely stored trajectory")


def propagate(
    traj: Trajectory,
    coeffs: CoefficientSet,
    r_index: int,
    t_indices=None,
) -> list[MalliavinSlice]:
    """Seed at step ``r_index`` and advance to the end of the trajectory,
    returning slices at ``t_indices`` (default: the final step only).

    Only increments at steps >= r_index are read: the derivative is local in
    the differentiation time.
    """
    _require_dense(traj)
    n = traj.n_steps
    if not 0 <= r_index < n:
        raise ValueError(f"r_index {r_index} outside [0, {n})")
    if t_indices is None:
        t_indices = [n]
    wanted = sorted(set(int(k) for k in t_indices))
    if wanted and (wanted[0] <= r_index or wanted[-1] > n):
        raise ValueError("evaluation indices must lie in (r_index, n_steps]")

    state = init_malliavin(traj.y[r_index], coeffs)
    inc = traj.wiener.increments
    out: list[MalliavinSlice] = []
    pos = 0
    for k in range(r_index, n):
        state = step_malliavin(
            state, traj.c[k], traj.y[k], traj.grid, coeffs, traj.bc, traj.dt, inc[k]
        )
        if pos < len(wanted) and wanted[pos] == k + 1:
            drc = recover_drc(state.z, traj.c[k + 1], coeffs)
            out.append(
                MalliavinSlice(k + 1, float(traj.times[k + 1]), state.z.copy(), drc, state.dry.copy())
            )
            pos += 1
        if pos == len(wanted):
            break
    return out


def perturbation_oracle(
    config: SimConfig,
    c0,
    y0,
    wiener: WienerPath,
    r_index: int,
    window_steps: int,
    eps: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference check value: bump the path in the Cameron-Martin
    direction 1_[r, r+window) (each increment there gains eps * dt), rerun,
    and return the terminal quotients

        ((c_eps - c) / (eps * delta), (y_eps - y) / (eps * delta)),

    delta = window_steps * dt.  As eps -> 0 and delta -> 0 these approach the
    terminal (drc, dry) seeded at r.
    """
    if window_steps < 1 or r_index + window_steps > wiener.n_steps:
        raise ValueError("perturbation window must fit inside the path")
    base = simulate_path(config, c0, y0, wiener=wiener)
    shifted = np.array(wiener.increments, copy=True)
    shifted[r_index : r_index + window_steps] += eps * wiener.dt
    bumped = simulate_path(config, c0, y0, wiener=WienerPath(wiener.dt, shifted))
    delta = window_steps * wiener.dt
    dq_c = (bumped.c[-1] - base.c[-1]) / (eps * delta)
    dq_y = (bumped.y[-1] - base.y[-1]) / (eps * delta)
    return dq_c, dq_y


def derivative_run(
    config: SimConfig,
    c0,
    y0,
    *,
    seed: int = 0,
    path_id: int = 0,
    r_fractions=(0.25, 0.5),
) -> tuple[Trajectory, list[MalliavinSlice]]:
    """Dense primal run plus terminal derivative slices seeded at the given
    fractions of the horizon."""
    traj = simulate_path(config, c0, y0, seed=seed, path_id=path_id, store_dense=True)
    slices = []
    for frac in r_fractions:
        r_index = min(traj.n_steps - 1, max(0, int(round(frac * traj.n_steps))))
        slices.extend(propagate(traj, config.coeffs, r_index))
    return traj, slices
