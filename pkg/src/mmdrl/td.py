"""Temporal-difference engines over categorical and particle representations.

The categorical algorithm keeps one mass-1 signed weight vector per state
on a fixed support; each observed transition updates only the visited
state by blending its weights toward the signed MMD projection of the
sampled one-step backup. The particle baseline instead nudges the visited
state's equally weighted particle locations down the gradient of the
squared MMD to a bootstrapped target particle set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .kernels import KernelSpec, mmd, signed_energy_sum
from .measures import (
    DiscreteMeasure,
    ReturnDistFn,
    SupportMap,
    pushforward,
    weights_on_support,
)
from .mdp import TabularMDP, Transition
from .projections import SignedProjector, SimplexProjector

# Weight-sum drift beyond which the mass-1 constraint is re-imposed.
MASS_DRIFT_TOL = 1e-10


@dataclass(frozen=True)
class StepSchedule:
    """Per-visit step sizes alpha(k) = scale * k^(-exponent).

    Exponents in (1/2, 1] give a divergent step-size sum with convergent
    squared sum, as stochastic-approximation convergence requires.
    """

    exponent: float = 0.6
    scale: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.exponent <= 1.0:
            raise InvalidInputError(
                f"schedule exponent must lie in (1/2, 1], got {self.exponent}"
            )
        if self.scale <= 0.0:
            raise InvalidInputError("schedule scale must be positive")

    def __call__(self, visit: int) -> float:
        if visit < 1:
            raise InvalidInputError("visit counts start at 1")
        return self.scale * visit ** (-self.exponent)


def make_schedule(exponent: float = 0.6, scale: float = 1.0) -> StepSchedule:
    return StepSchedule(exponent, scale)


@dataclass(frozen=True)
class TdState:
    """Estimate plus the bookkeeping the asynchronous schedule needs."""

    estimate: ReturnDistFn
    visit_counts: np.ndarray
    step: int = 0


@dataclass
class TdReport:
    """Sparse trace of a TD run."""

    steps: list = field(default_factory=list)
    sup_mmd: list = field(default_factory=list)
    mean_step_size: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("step,sup_mmd_to_reference,mean_step_size\r\n")
            for s, d, a in zip(self.steps, self.sup_mmd, self.mean_step_size):
                fh.write(f"{s},{d:.17g},{a:.17g}\r\n")


def stochastic_backup(eta: ReturnDistFn, tr: Transition, gamma: float) -> DiscreteMeasure:
    """Sampled one-step backup: the next state's estimate pushed through
    z -> reward + gamma z."""
    return pushforward(eta[tr.next_state], tr.reward, gamma)


def init_td_state(
    mdp: TabularMDP, support: SupportMap, spec: KernelSpec
) -> TdState:
    """Probability-weight initialization: project the per-state point mass
    at r/(1-gamma) onto the support."""
    from .dp import point_init

    init = point_init(mdp)
    measures = []
    for x in range(mdp.n_states):
        res = SimplexProjector(support[x], spec).project(
            init[x].atoms, init[x].weights
        )
        measures.append(DiscreteMeasure(support[x], res.weights))
    return TdState(ReturnDistFn(tuple(measures)), np.zeros(mdp.n_states, dtype=np.int64))


def categorical_td_step(
    state: TdState,
    tr: Transition,
    support: SupportMap,
    spec: KernelSpec,
    schedule: StepSchedule,
    gamma: float,
) -> TdState:
    """Blend the visited state's signed weights toward the projected backup.

    All other states are untouched; the updated weight vector stays in the
    mass-1 affine set (renormalized if float drift exceeds the tolerance).
    """
    x = tr.state
    visits = state.visit_counts.copy()
    visits[x] += 1
    alpha = schedule(int(visits[x]))
    backup = stochastic_backup(state.estimate, tr, gamma)
    projected = SignedProjector(support[x], spec).project(backup.atoms, backup.weights)
    old_w = weights_on_support(state.estimate[x], support[x])
    new_w = (1.0 - alpha) * old_w + alpha * projected.weights
    drift = float(np.sum(new_w)) - 1.0
    if abs(drift) > MASS_DRIFT_TOL:
        new_w = new_w / (1.0 + drift)
    estimate = state.estimate.replace(x, DiscreteMeasure(support[x], new_w))
    return TdState(estimate, visits, state.step + 1)


class _SignedBackupCache:
    """Per-(state, next-state) affine maps for the projected backup.

    The projected backup weights are an affine function M w + b of the
    next state's weights because the target atom set r(x) + gamma xi(x')
    is fixed; TD steps then reduce to matrix-vector products.
    """

    def __init__(self, mdp: TabularMDP, support: SupportMap, spec: KernelSpec):
        self.mdp = mdp
        self.support = support
        self.spec = spec
        self.projectors = [
            SignedProjector(support[x], spec) for x in range(mdp.n_states)
        ]
        self._maps = {}

    def affine(self, x: int, y: int):
        key = (x, y)
        if key not in self._maps:
            shifted = self.mdp.cumulants[x] + self.mdp.gamma * self.support[y]
            self._maps[key] = self.projectors[x].affine_map(shifted)
        return self._maps[key]


def categorical_td_run(
    mdp: TabularMDP,
    support: SupportMap,
    spec: KernelSpec,
    schedule: StepSchedule,
    steps: int,
    rng: np.random.Generator,
    *,
    state_sampler: str = "uniform",
    reference: ReturnDistFn | None = None,
    report_interval: int = 1000,
    init: TdState | None = None,
):
    """Run asynchronous signed-categorical TD for ``steps`` transitions.

    States are visited uniformly at random by default (``"trajectory"``
    follows the chain instead). Returns the final state and a report with
    sup-MMD to ``reference`` at every report interval.
    """
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    if state_sampler not in ("uniform", "trajectory"):
        raise InvalidInputError(f"unknown state sampler {state_sampler!r}")
    state = init if init is not None else init_td_state(mdp, support, spec)
    weights = [
        weights_on_support(state.estimate[x], support[x])
        for x in range(mdp.n_states)
    ]
    visits = state.visit_counts.copy()
    cache = _SignedBackupCache(mdp, support, spec)
    cum_rows = np.cumsum(mdp.transition, axis=1)

    ref_weights = None
    if reference is not None:
        try:
            ref_weights = [
                weights_on_support(reference[x], support[x])
                for x in range(mdp.n_states)
            ]
        except InvalidInputError:
            ref_weights = None

    def _distance_to_reference() -> float:
        if reference is None:
            return math.nan
        if ref_weights is not None:
            worst = 0.0
            for x in range(mdp.n_states):
                delta = weights[x] - ref_weights[x]
                val = float(delta @ cache.projectors[x].gram @ delta)
                worst = max(worst, math.sqrt(max(val, 0.0)))
            return worst
        current = ReturnDistFn(
            tuple(
                DiscreteMeasure(support[x], weights[x])
                for x in range(mdp.n_states)
            )
        )
        return max(mmd(current[x], reference[x], spec) for x in range(mdp.n_states))

    report = TdReport()
    alphas_since_report = []
    x = int(rng.integers(mdp.n_states)) if state_sampler == "trajectory" else 0
    for t in range(1, steps + 1):
        if state_sampler == "uniform":
            x = int(rng.integers(mdp.n_states))
        y = int(np.sum(rng.random() > cum_rows[x]))
        y = min(y, mdp.n_states - 1)
        visits[x] += 1
        alpha = schedule(int(visits[x]))
        alphas_since_report.append(alpha)
        m_map, b_map = cache.affine(x, y)
        projected = m_map @ weights[y] + b_map
        new_w = (1.0 - alpha) * weights[x] + alpha * projected
        drift = float(np.sum(new_w)) - 1.0
        if abs(drift) > MASS_DRIFT_TOL:
            new_w = new_w / (1.0 + drift)
        weights[x] = new_w
        if state_sampler == "trajectory":
            x = y
        if t % report_interval == 0 or t == steps:
            report.steps.append(t)
            report.sup_mmd.append(_distance_to_reference())
            report.mean_step_size.append(float(np.mean(alphas_since_report)))
            alphas_since_report = []

    estimate = ReturnDistFn(
        tuple(DiscreteMeasure(support[x], weights[x]) for x in range(mdp.n_states))
    )
    return TdState(estimate, visits, state.step + steps), report


def ewp_mmd_sq_objective(theta: np.ndarray, targets: np.ndarray, alpha: float) -> float:
    """Squared MMD between equally weighted particle sets theta and targets."""
    m = theta.shape[0]
    n = targets.shape[0]
    atoms = np.concatenate([theta, targets], axis=0)
    signed = np.concatenate([np.full(m, 1.0 / m), np.full(n, -1.0 / n)])
    return -0.5 * signed_energy_sum(atoms, signed, alpha)


def ewp_mmd_sq_gradient(theta: np.ndarray, targets: np.ndarray, alpha: float) -> np.ndarray:
    """Gradient of the squared MMD with respect to the particle locations.

    The semimetric gradient alpha ||u||^(alpha-2) u is taken to be zero at
    coincident points (a valid subgradient for alpha <= 1, and the
    standard convention here for alpha in (1, 2)).
    """
    m = theta.shape[0]
    n = targets.shape[0]

    def _terms(diff):
        norms = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        factor = np.zeros_like(norms)
        nz = norms > 0.0
        factor[nz] = alpha * norms[nz] ** (alpha - 2.0)
        return np.einsum("ij,ijk->ik", factor, diff)

    cross = _terms(theta[:, None, :] - targets[None, :, :]) / (m * n)
    within = _terms(theta[:, None, :] - theta[None, :, :]) / (m * m)
    return cross - within


def ewp_td_step(
    particles: np.ndarray,
    tr: Transition,
    spec: KernelSpec,
    learn_rate: float,
    gamma: float,
) -> np.ndarray:
    """One particle TD update at the visited state.

    The target particle set reward + gamma * particles(next state) is held
    fixed (no gradient flows through it); the visited state's particles
    take one gradient step on the squared MMD to that target.
    """
    particles = np.asarray(particles, dtype=np.float64)
    if particles.ndim != 3:
        raise InvalidInputError("particles must have shape (n_states, m, d)")
    theta = particles[tr.state]
    targets = tr.reward[None, :] + gamma * particles[tr.next_state]
    grad = ewp_mmd_sq_gradient(theta, targets, spec.alpha)
    out = particles.copy()
    out[tr.state] = theta - learn_rate * grad
    return out


def ewp_td_run(
    mdp: TabularMDP,
    m: int,
    spec: KernelSpec,
    schedule: StepSchedule,
    steps: int,
    rng: np.random.Generator,
    *,
    reference: ReturnDistFn | None = None,
    report_interval: int = 1000,
    init: np.ndarray | None = None,
):
    """Run particle TD with per-state visit-count step sizes."""
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    if init is not None:
        particles = np.array(init, dtype=np.float64, copy=True)
    else:
        from .dp import ewp_init

        particles = np.stack([meas.atoms for meas in ewp_init(mdp, m)], axis=0)
    visits = np.zeros(mdp.n_states, dtype=np.int64)
    cum_rows = np.cumsum(mdp.transition, axis=1)
    slot_weights = np.full(m, 1.0 / m)

    def _distance_to_reference() -> float:
        if reference is None:
            return math.nan
        return max(
            mmd(DiscreteMeasure(particles[x], slot_weights), reference[x], spec)
            for x in range(mdp.n_states)
        )

    report = TdReport()
    alphas_since_report = []
    for t in range(1, steps + 1):
        x = int(rng.integers(mdp.n_states))
        y = int(np.sum(rng.random() > cum_rows[x]))
        y = min(y, mdp.n_states - 1)
        visits[x] += 1
        alpha = schedule(int(visits[x]))
        alphas_since_report.append(alpha)
        theta = particles[x]
        targets = mdp.cumulants[x][None, :] + mdp.gamma * particles[y]
        grad = ewp_mmd_sq_gradient(theta, targets, spec.alpha)
        particles[x] = theta - alpha * grad
        if t % report_interval == 0 or t == steps:
            report.steps.append(t)
            report.sup_mmd.append(_distance_to_reference())
            report.mean_step_size.append(float(np.mean(alphas_since_report)))
            alphas_since_report = []
    return particles, report
