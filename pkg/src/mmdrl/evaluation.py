"""Metrics, Monte Carlo oracles, and zero-shot scalar evaluation.

Includes the supremal (worst-state) MMD, exact Cramer distances between
finite scalar distributions, unbiased two-sample MMD estimation from raw
samples, rollout-based ground truth, and mesh / fixed-point-error bound
calculators for categorical supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .kernels import KernelSpec, mmd, pairwise_semimetric
from .measures import DiscreteMeasure, ReturnDistFn, SupportMap, empirical
from .mdp import TabularMDP, horizon_for_tail, rollout_returns

_ATOM_MERGE = 1e-12
_WEIGHT_TOL = 1e-12
_HULL_TOL = 1e-9


@dataclass(frozen=True)
class ScalarDist:
    """Finite scalar distribution with sorted, deduplicated atoms."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64).ravel()
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if atoms.shape != weights.shape or atoms.size < 1:
            raise InvalidInputError("scalar distribution needs matching atoms/weights")
        if np.min(weights) < -_WEIGHT_TOL:
            raise InvalidInputError("scalar distributions take probability weights")
        if abs(float(np.sum(weights)) - 1.0) > 1e-9:
            raise InvalidInputError(
                f"scalar distribution mass must be 1, got {np.sum(weights)}"
            )
        order = np.argsort(atoms, kind="stable")
        atoms, weights = atoms[order], weights[order]
        # Merge atoms equal within the tolerance (they arrive sorted).
        keys = np.round(atoms / _ATOM_MERGE) + 0.0
        boundaries = np.concatenate(([True], np.diff(keys) > 0))
        idx = np.nonzero(boundaries)[0]
        merged_atoms = atoms[idx]
        merged_weights = np.add.reduceat(weights, idx)
        merged_weights = np.maximum(merged_weights, 0.0)
        merged_weights = merged_weights / np.sum(merged_weights)
        merged_atoms.flags.writeable = False
        merged_weights.flags.writeable = False
        object.__setattr__(self, "atoms", merged_atoms)
        object.__setattr__(self, "weights", merged_weights)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def to_csv(self, path) -> None:
        cdf = self.cdf()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("atom,weight,cdf\r\n")
            for a, w, c in zip(self.atoms, self.weights, cdf):
                fh.write(f"{a:.17g},{w:.17g},{c:.17g}\r\n")

    def to_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.atoms[:, None], self.weights)


@dataclass(frozen=True)
class MeshReport:
    """Worst-state mesh and the induced fixed-point error bound."""

    mesh: float
    fixed_point_bound: float
    uniform_grid_bound: float | None
    exact: bool


def sup_mmd(eta1: ReturnDistFn, eta2: ReturnDistFn, spec: KernelSpec) -> float:
    """Worst-state MMD between two return-distribution functions."""
    if eta1.n_states != eta2.n_states:
        raise InvalidInputError(
            f"state counts differ: {eta1.n_states} vs {eta2.n_states}"
        )
    if eta1.dim != eta2.dim:
        raise InvalidInputError(f"dimensions differ: {eta1.dim} vs {eta2.dim}")
    return max(mmd(eta1[x], eta2[x], spec) for x in range(eta1.n_states))


def zeroshot_scalar(eta_x: DiscreteMeasure, w) -> ScalarDist:
    """Scalar return distribution under the reward weight vector ``w``.

    Atoms map to their inner products with ``w``; weights must already be
    probabilities (project signed estimates onto the simplex first).
    """
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    if w.shape[0] != eta_x.dim:
        raise InvalidInputError(
            f"weight vector has dimension {w.shape[0]}, measure has {eta_x.dim}"
        )
    if np.min(eta_x.weights) < -_WEIGHT_TOL:
        raise InvalidInputError(
            "zero-shot evaluation needs probability weights; project first"
        )
    return ScalarDist(eta_x.atoms @ w, eta_x.weights)


def _cdf_at(dist: ScalarDist, points: np.ndarray) -> np.ndarray:
    cum = np.concatenate(([0.0], np.cumsum(dist.weights)))
    return cum[np.searchsorted(dist.atoms, points, side="right")]


def cramer_distance(p: ScalarDist, q: ScalarDist) -> float:
    """L2 norm of the CDF difference, integrated exactly.

    Both CDFs are piecewise constant, so the integral is a finite sum over
    the merged breakpoints.
    """
    breaks = np.unique(np.concatenate([p.atoms, q.atoms]))
    diff = _cdf_at(p, breaks) - _cdf_at(q, breaks)
    gaps = np.diff(breaks)
    return float(np.sqrt(np.sum(diff[:-1] ** 2 * gaps)))


def mc_oracle(
    mdp: TabularMDP,
    state: int,
    n_samples: int,
    tail_tol: float,
    rng: np.random.Generator,
) -> DiscreteMeasure:
    """Empirical measure of truncated rollout returns from ``state``.

    The horizon is chosen so the truncation tail bound falls below
    ``tail_tol``.
    """
    if n_samples < 1:
        raise InvalidInputError("need at least one rollout")
    horizon = horizon_for_tail(mdp, tail_tol)
    return empirical(rollout_returns(mdp, state, horizon, n_samples, rng))


def mc_oracle_fn(
    mdp: TabularMDP,
    n_samples: int,
    tail_tol: float,
    rng: np.random.Generator,
) -> ReturnDistFn:
    """Per-state Monte Carlo ground truth."""
    return ReturnDistFn(
        tuple(
            mc_oracle(mdp, x, n_samples, tail_tol, rng)
            for x in range(mdp.n_states)
        )
    )


def mmd_u_statistic(samples_p, samples_q, spec: KernelSpec) -> float:
    """Unbiased squared-MMD estimate from raw samples (diagonals excluded).

    May be negative. Evaluated in the reference-point-free semimetric
    form: cross mean minus half of each within-sample off-diagonal mean.
    """
    p = np.asarray(samples_p, dtype=np.float64)
    q = np.asarray(samples_q, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if q.ndim == 1:
        q = q[:, None]
    n, m = p.shape[0], q.shape[0]
    if n < 2 or m < 2:
        raise InvalidInputError("unbiased estimation needs >= 2 samples per side")
    rho = spec.semimetric
    cross = float(np.sum(pairwise_semimetric(p, q, rho))) / (n * m)
    within_p = float(np.sum(pairwise_semimetric(p, p, rho))) / (n * (n - 1))
    within_q = float(np.sum(pairwise_semimetric(q, q, rho))) / (m * (m - 1))
    return cross - 0.5 * within_p - 0.5 * within_q


def _grid_cell_mesh(grid_axes, v_max: float, alpha: float) -> float:
    """Exact mesh of the grid's Voronoi cell partition over [0, v_max]^d."""
    side_maxima = []
    for axis in grid_axes:
        pts = np.asarray(axis, dtype=np.float64)
        lo = np.concatenate(([0.0], (pts[:-1] + pts[1:]) / 2.0))
        hi = np.concatenate(((pts[:-1] + pts[1:]) / 2.0, [v_max]))
        side_maxima.append(float(np.max(hi - lo)))
    diameter = math.sqrt(sum(s * s for s in side_maxima))
    return diameter**alpha


def _greedy_cell_mesh(atoms: np.ndarray, v_max: float, alpha: float) -> float:
    """Upper estimate of the nearest-atom partition mesh via lattice probing.

    Every cell's diameter is at most twice its covering radius; the radius
    is probed on a regular lattice and inflated by the lattice half
    diagonal so the result stays an upper bound.
    """
    d = atoms.shape[1]
    per_axis = max(2, min(4096, int(round(32768 ** (1.0 / d)))))
    axis = np.linspace(0.0, v_max, per_axis)
    mesh_pts = np.meshgrid(*([axis] * d), indexing="ij")
    probes = np.stack([m.ravel() for m in mesh_pts], axis=1)
    diff = probes[:, None, :] - atoms[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    cover = float(np.max(np.min(dist, axis=1)))
    spacing = axis[1] - axis[0] if per_axis > 1 else 0.0
    cover += 0.5 * spacing * math.sqrt(d)
    return (2.0 * cover) ** alpha


def mesh_and_bound(
    support: SupportMap, mdp: TabularMDP, spec: KernelSpec
) -> MeshReport:
    """Worst-state mesh plus the fixed-point error bound it implies.

    Grid supports get the exact Voronoi-cell mesh; arbitrary supports get
    a sound upper estimate from a greedy nearest-atom partition. For
    uniform grids spanning the return hypercube, the closed-form bound in
    terms of the atom count is reported as well.
    """
    v_max = mdp.v_max
    for x in range(support.n_states):
        atoms = support[x]
        if np.any(atoms < -_HULL_TOL) or np.any(atoms > v_max + _HULL_TOL):
            raise InvalidInputError(
                f"support atoms at state {x} leave the return hypercube "
                f"[0, {v_max}]^{support.dim}"
            )
    alpha = spec.alpha
    if support.grid_axes is not None:
        mesh = _grid_cell_mesh(support.grid_axes, v_max, alpha)
        exact = True
    else:
        mesh = max(
            _greedy_cell_mesh(support[x], v_max, alpha)
            for x in range(support.n_states)
        )
        exact = False
    contraction_gap = 1.0 - mdp.gamma ** (alpha / 2.0)
    fixed_point_bound = math.sqrt(mesh) / contraction_gap

    uniform_bound = None
    if support.grid_axes is not None:
        m_total = support[0].shape[0]
        root = m_total ** (1.0 / support.dim)
        if root > 2.0:
            uniform_bound = (
                support.dim ** (alpha / 4.0)
                * mdp.r_max ** (alpha / 2.0)
                / (
                    contraction_gap
                    * (1.0 - mdp.gamma) ** (alpha / 2.0)
                    * (root - 2.0) ** (alpha / 2.0)
                )
            )
    return MeshReport(mesh, fixed_point_bound, uniform_bound, exact)
