"""MMD projections onto a fixed support via in-house QP solves.

Two feasible sets are supported for the weight vector p over support atoms
xi_1..xi_n, both minimizing the quadratic

    p^T K p - 2 p^T q,    K_ij = kappa(xi_i, xi_j),
                          q_j  = sum_l w_l kappa(xi_j, a_l),

which equals MMD^2 to the target (atoms a, weights w) up to a constant:

* ``simplex``       p >= 0, sum p = 1  -- accelerated projected gradient
                    with an exact Euclidean simplex-projection substep and
                    restart on non-monotone objective values;
* ``affine-sum-1``  sum p = 1 only     -- the constraint is eliminated and
                    the reduced symmetric positive-definite system solved
                    directly, making the projection an affine map of the
                    target weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SolverError
from .kernels import KernelSpec, cross_kernel, gram
from .measures import DiscreteMeasure, _check_distinct

# Target KKT residual; iteration stops as soon as it is reached.
KKT_TOL = 1e-10
# Residual beyond which a finished solve is reported as failed.
KKT_ACCEPT = 1e-8
MAX_ITERS = 100_000

CONSTRAINTS = ("simplex", "affine-sum-1")


@dataclass(frozen=True)
class QpProblem:
    """Quadratic program data for one projection."""

    gram: np.ndarray
    linear: np.ndarray
    constraint: str


@dataclass(frozen=True)
class ProjectionResult:
    weights: np.ndarray
    kkt_residual: float
    iterations: int


def build_qp(
    target: DiscreteMeasure, support, spec: KernelSpec, constraint: str = "simplex"
) -> QpProblem:
    """Assemble the projection QP of a target measure onto support atoms."""
    if constraint not in CONSTRAINTS:
        raise InvalidInputError(f"unknown constraint {constraint!r}")
    atoms = np.atleast_2d(np.asarray(support, dtype=np.float64))
    _check_distinct(atoms, 0)
    if abs(target.mass - 1.0) > 1e-9:
        raise InvalidInputError(f"projection target must have mass 1, got {target.mass}")
    k = gram(atoms, spec)
    q = cross_kernel(atoms, target.atoms, spec) @ target.weights
    return QpProblem(k, q, constraint)


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Exact Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u * ind > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project_rows_to_simplex(v: np.ndarray) -> np.ndarray:
    """Row-wise exact simplex projection for a (s, n) stack of vectors."""
    s, n = v.shape
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    cond = u * np.arange(1, n + 1) > css
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(s), rho] / (rho + 1.0)
    return np.maximum(v - theta[:, None], 0.0)


def _jitter(k: np.ndarray) -> np.ndarray:
    n = k.shape[0]
    return k + (1e-12 * np.trace(k) / n) * np.eye(n)


def solve_simplex_qp(
    gram_matrix: np.ndarray,
    linear: np.ndarray,
    start: np.ndarray | None = None,
    *,
    lipschitz: float | None = None,
    tol: float = KKT_TOL,
    max_iter: int = MAX_ITERS,
) -> ProjectionResult:
    """Minimize p^T K p - 2 p^T q over the simplex.

    Accelerated projected gradient with momentum restart whenever the
    objective increases. The KKT residual is the sup-norm of the
    projected-gradient fixed-point map p - P(p - grad f(p)).
    """
    k = np.asarray(gram_matrix, dtype=np.float64)
    q = np.asarray(linear, dtype=np.float64)
    n = k.shape[0]
    if n == 1:
        return ProjectionResult(np.array([1.0]), 0.0, 0)

    if lipschitz is None:
        eigs = np.linalg.eigvalsh(k)
        if eigs[0] < -1e-12 * max(1.0, np.trace(k) / n):
            k = _jitter(k)
            eigs = np.linalg.eigvalsh(k)
        lipschitz = float(eigs[-1])
    step = 1.0 / max(2.0 * lipschitz, 1e-30)

    if start is not None and start.shape == (n,) and np.all(np.isfinite(start)):
        x = project_to_simplex(np.asarray(start, dtype=np.float64))
    else:
        x = np.full(n, 1.0 / n)

    kx = k @ x
    fx = x @ kx - 2.0 * (x @ q)
    y = x
    t = 1.0
    best_res = np.inf
    best_x = x
    iterations = 0

    for iterations in range(1, max_iter + 1):
        grad_y = 2.0 * ((k @ y) - q)
        x_new = project_to_simplex(y - step * grad_y)
        kx_new = k @ x_new
        f_new = x_new @ kx_new - 2.0 * (x_new @ q)
        if not np.isfinite(f_new):
            k = _jitter(k)
            x_new = x
            kx_new = k @ x
            f_new = x_new @ kx_new - 2.0 * (x_new @ q)
            y, t = x, 1.0
        elif f_new > fx + 1e-13 * (1.0 + abs(fx)):
            # Momentum restart: retake a plain projected-gradient step.
            # The slack keeps float round-off from spuriously killing
            # the acceleration near the optimum.
            grad_x = 2.0 * (kx - q)
            x_new = project_to_simplex(x - step * grad_x)
            kx_new = k @ x_new
            f_new = x_new @ kx_new - 2.0 * (x_new @ q)
            y, t = x, 1.0

        residual = float(
            np.max(np.abs(x_new - project_to_simplex(x_new - 2.0 * (kx_new - q))))
        )
        if residual < best_res:
            best_res = residual
            best_x = x_new
        if residual <= tol:
            return ProjectionResult(x_new, residual, iterations)

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_next) * (x_new - x)
        x, kx, fx, t = x_new, kx_new, f_new, t_next

    if best_res > KKT_ACCEPT:
        raise SolverError(
            f"simplex projection stalled at KKT residual {best_res:.3e} "
            f"after {max_iter} iterations",
            residual=best_res,
        )
    return ProjectionResult(best_x, best_res, iterations)


def solve_simplex_qp_batch(
    gram_matrix: np.ndarray,
    linear_rows: np.ndarray,
    start_rows: np.ndarray | None = None,
    *,
    lipschitz: float | None = None,
    tol: float = KKT_TOL,
    max_iter: int = MAX_ITERS,
):
    """Row-batched variant of :func:`solve_simplex_qp` for a shared Gram matrix.

    Each row of ``linear_rows`` defines an independent QP; all rows advance
    in lockstep so the per-iteration work is a single matrix product.
    Momentum restarts and convergence are tracked per row, and a row's
    weights are frozen the moment its KKT residual reaches ``tol``.
    Returns (weights rows, residuals, iterations).
    """
    k = np.asarray(gram_matrix, dtype=np.float64)
    q = np.atleast_2d(np.asarray(linear_rows, dtype=np.float64))
    s, n = q.shape
    if n == 1:
        return np.ones((s, 1)), np.zeros(s), 0
    if lipschitz is None:
        eigs = np.linalg.eigvalsh(k)
        if eigs[0] < -1e-12 * max(1.0, np.trace(k) / n):
            k = _jitter(k)
            eigs = np.linalg.eigvalsh(k)
        lipschitz = float(eigs[-1])
    step = 1.0 / max(2.0 * lipschitz, 1e-30)

    if start_rows is not None and start_rows.shape == (s, n):
        x = _project_rows_to_simplex(np.asarray(start_rows, dtype=np.float64))
    else:
        x = np.full((s, n), 1.0 / n)

    step2q = (2.0 * step) * q
    two_q = 2.0 * q
    kx = x @ k
    fx = np.einsum("ij,ij->i", x, kx - two_q)
    y = x
    t = np.ones(s)
    out = x.copy()
    out_res = np.full(s, np.inf)
    done = np.zeros(s, dtype=bool)
    iterations = 0
    check_every = 4
    res = np.full(s, np.inf)

    for iterations in range(1, max_iter + 1):
        x_new = _project_rows_to_simplex(y - (2.0 * step) * (y @ k) + step2q)
        kx_new = x_new @ k
        f_new = np.einsum("ij,ij->i", x_new, kx_new - two_q)
        bad = (f_new > fx + 1e-13 * (1.0 + np.abs(fx))) & ~done
        if np.any(bad):
            x_new[bad] = _project_rows_to_simplex(
                x[bad] - (2.0 * step) * kx[bad] + step2q[bad]
            )
            kx_new[bad] = x_new[bad] @ k
            f_new[bad] = np.einsum(
                "ij,ij->i", x_new[bad], kx_new[bad] - two_q[bad]
            )
            t[bad] = 1.0

        if iterations % check_every == 0 or iterations == max_iter:
            fixed = _project_rows_to_simplex(x_new - 2.0 * kx_new + two_q)
            res = np.max(np.abs(x_new - fixed), axis=1)
            newly = (res <= tol) & ~done
            if np.any(newly):
                out[newly] = x_new[newly]
                out_res[newly] = res[newly]
                done |= newly
                if np.all(done):
                    return out, out_res, iterations

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_next)[:, None] * (x_new - x)
        y[bad] = x_new[bad]
        x, kx, fx, t = x_new, kx_new, f_new, t_next

    live = ~done
    out[live] = x[live]
    out_res[live] = res[live]
    worst = float(np.max(out_res))
    if worst > KKT_ACCEPT:
        raise SolverError(
            f"batched simplex projection stalled at KKT residual {worst:.3e} "
            f"after {max_iter} iterations",
            residual=worst,
        )
    return out, out_res, iterations


def _reduced_system(k: np.ndarray, q: np.ndarray):
    """Eliminate the mass constraint via p = e_n + B z, B = [I; -1^T]."""
    h = k[:-1, :-1] - k[:-1, -1:] - k[-1:, :-1] + k[-1, -1]
    c = q - k[:, -1]
    rhs = c[:-1] - c[-1]
    return h, rhs


def _assemble(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z, [1.0 - float(np.sum(z))]])


def solve_signed_qp(gram_matrix: np.ndarray, linear: np.ndarray) -> ProjectionResult:
    """Minimize p^T K p - 2 p^T q subject to sum p = 1 (signs free)."""
    k = np.asarray(gram_matrix, dtype=np.float64)
    q = np.asarray(linear, dtype=np.float64)
    n = k.shape[0]
    if n == 1:
        return ProjectionResult(np.array([1.0]), 0.0, 1)
    h, rhs = _reduced_system(k, q)
    scale = 1.0 + float(np.max(np.abs(rhs)))

    def _residual(z):
        return float(np.max(np.abs(h @ z - rhs))) / scale

    try:
        z = np.linalg.solve(h, rhs)
        res = _residual(z)
    except np.linalg.LinAlgError:
        z, res = None, np.inf
    if z is None or res > KKT_ACCEPT:
        hj = _jitter(h)
        try:
            z = np.linalg.solve(hj, rhs)
            res = _residual(z)
        except np.linalg.LinAlgError:
            z, res = None, np.inf
    if z is None or res > KKT_ACCEPT:
        z, *_ = np.linalg.lstsq(h, rhs, rcond=None)
        res = _residual(z)
        if res > KKT_ACCEPT:
            raise SolverError(
                f"signed projection system is rank-deficient beyond jitter "
                f"(residual {res:.3e})",
                residual=res,
            )
        warnings.warn(
            "signed projection fell back to a least-squares pseudo-solution",
            RuntimeWarning,
        )
    return ProjectionResult(_assemble(z), res, 1)


def project_simplex(
    target: DiscreteMeasure,
    support,
    spec: KernelSpec,
    *,
    start: np.ndarray | None = None,
) -> DiscreteMeasure:
    """MMD projection of ``target`` onto probability weights over ``support``."""
    qp = build_qp(target, support, spec, "simplex")
    result = solve_simplex_qp(qp.gram, qp.linear, start)
    return DiscreteMeasure(np.atleast_2d(np.asarray(support, dtype=np.float64)), result.weights)


def project_signed(target: DiscreteMeasure, support, spec: KernelSpec) -> DiscreteMeasure:
    """MMD projection of ``target`` onto mass-1 signed weights over ``support``."""
    qp = build_qp(target, support, spec, "affine-sum-1")
    result = solve_signed_qp(qp.gram, qp.linear)
    return DiscreteMeasure(np.atleast_2d(np.asarray(support, dtype=np.float64)), result.weights)


class SimplexProjector:
    """Repeated simplex projections onto one fixed support.

    Caches the Gram matrix and its largest eigenvalue so per-call work is
    the cross-kernel assembly plus the iterative solve (warm-startable).
    """

    def __init__(self, support_atoms, spec: KernelSpec):
        self.atoms = np.atleast_2d(np.asarray(support_atoms, dtype=np.float64))
        _check_distinct(self.atoms, 0)
        self.spec = spec
        self.gram = gram(self.atoms, spec)
        eigs = np.linalg.eigvalsh(self.gram)
        if eigs[0] < -1e-12 * max(1.0, np.trace(self.gram) / self.atoms.shape[0]):
            self.gram = _jitter(self.gram)
            eigs = np.linalg.eigvalsh(self.gram)
        self.lipschitz = float(eigs[-1])

    def linear_term(self, target_atoms, target_weights) -> np.ndarray:
        return cross_kernel(self.atoms, target_atoms, self.spec) @ target_weights

    def solve_linear(self, q: np.ndarray, start=None) -> ProjectionResult:
        return solve_simplex_qp(self.gram, q, start, lipschitz=self.lipschitz)

    def project(self, target_atoms, target_weights, start=None) -> ProjectionResult:
        return self.solve_linear(self.linear_term(target_atoms, target_weights), start)


class SignedProjector:
    """Repeated signed projections onto one fixed support.

    The affine-constrained solution is p = S q + offset with S and the
    offset fixed by the support, so projections reduce to matrix-vector
    products; ``affine_map`` exposes the map from target weights for a
    fixed target atom set.
    """

    def __init__(self, support_atoms, spec: KernelSpec):
        self.atoms = np.atleast_2d(np.asarray(support_atoms, dtype=np.float64))
        _check_distinct(self.atoms, 0)
        self.spec = spec
        self.gram = gram(self.atoms, spec)
        n = self.atoms.shape[0]
        if n == 1:
            self._s = np.zeros((1, 1))
            self.offset = np.array([1.0])
            return
        h = (
            self.gram[:-1, :-1]
            - self.gram[:-1, -1:]
            - self.gram[-1:, :-1]
            + self.gram[-1, -1]
        )
        try:
            np.linalg.cholesky(h)
        except np.linalg.LinAlgError:
            h = _jitter(h)
            try:
                np.linalg.cholesky(h)
            except np.linalg.LinAlgError as exc:
                raise SolverError(
                    "signed projection support yields a non-PD reduced system"
                ) from exc
        h_inv = np.linalg.inv(h)
        # S = B H^-1 B^T with B = [I; -1^T].
        top = np.concatenate([h_inv, -np.sum(h_inv, axis=0, keepdims=True)], axis=0)
        self._s = np.concatenate([top, -np.sum(top, axis=1, keepdims=True)], axis=1)
        p0 = np.zeros(n)
        p0[-1] = 1.0
        self.offset = p0 - self._s @ (self.gram @ p0)

    def solve_linear(self, q: np.ndarray, start=None) -> ProjectionResult:
        return ProjectionResult(self._s @ q + self.offset, 0.0, 1)

    def project(self, target_atoms, target_weights) -> ProjectionResult:
        q = cross_kernel(self.atoms, target_atoms, self.spec) @ target_weights
        return self.solve_linear(q)

    def affine_map(self, target_atoms):
        """(M, b) with projected weights = M @ target_weights + b."""
        m = self._s @ cross_kernel(self.atoms, target_atoms, self.spec)
        return m, self.offset
