"""Monte Carlo Feynman-Kac solution of the parameterized cell problem.

The fast generator annihilates centered observables in the long run, so the
corrector at (x, y) is the time integral of the expected observable along
the frozen flow started at y.  The solver estimates that integral with a
replica ensemble and per-replica trapezoid quadrature, truncating the
horizon where a fitted exponential envelope of the integrand drops below a
tail tolerance.

Derivative and residual checks re-solve at perturbed states under common
random numbers: each re-solve rebuilds the identical noise sequence, so
differences of estimates are smooth functions of the perturbation instead
of being noise-dominated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .averaging import ErgodicBudget, FrozenChain, batch_means_se
from .errors import CenteringError, HorizonError, RangeError
from .models import ModelSpec
from .rngutil import substream

__all__ = [
    "PoissonProblem",
    "PoissonBudget",
    "PoissonSolution",
    "CenteringReport",
    "check_centering",
    "solve_poisson",
    "solve_poisson_vector",
    "mc_psi",
    "DyPsiEstimate",
    "estimate_DyPsi",
    "ResidualReport",
    "poisson_residual",
    "PoissonSolver",
]


@dataclass
class PoissonProblem:
    """Observable phi(x, y) with growth metadata; phi maps coefficient
    arrays (x: (n,), y: (..., n)) to (...,) scalars or (..., d) vectors.

    Growth degrees of composite observables are propagated as the sum of
    the factor degrees (conservative).
    """

    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    model: ModelSpec
    vector: bool = False
    growth_degree: int = 1
    holder_eta: float = 1.0

    def __post_init__(self):
        self._centering_cache: dict = {}


@dataclass
class PoissonBudget:
    replicas: int = 2048
    dt: float = 0.02            # chain step, units of 1/beta_1
    tail_tol: float = 1e-3      # relative to the observable scale
    block_time: float = 8.0     # initial horizon, units of 1/beta_1
    max_time: float = 96.0
    force_t_star: Optional[float] = None


@dataclass
class PoissonSolution:
    value: np.ndarray | float
    standard_error: np.ndarray | float
    t_star: float
    replicas: int
    envelope_rate: float
    envelope_const: float
    tail_bound: float
    replica_integrals: Optional[np.ndarray] = None


@dataclass
class CenteringReport:
    bias: np.ndarray | float
    standard_error: np.ndarray | float
    passed: bool


def check_centering(
    problem: PoissonProblem,
    x: np.ndarray,
    budget: ErgodicBudget | None = None,
    rng: np.random.Generator | None = None,
) -> CenteringReport:
    """Ergodic average of phi(x, Y) with batch-means error bars; the
    observable is centered iff every component sits within 3 SE of zero."""
    xv = np.asarray(x, dtype=float)
    model = problem.model
    b = (budget or ErgodicBudget()).scaled(model.opB.gap)
    rng = rng if rng is not None else np.random.default_rng(0)
    chain = FrozenChain(model, xv, b.dt, rng)
    chain.advance(b.burn_in)
    thin = max(1, int(round(b.thin / b.dt)))
    n_samples = int(round(b.sample_time / b.dt)) // thin
    vals = None
    for i in range(n_samples):
        for _ in range(thin):
            chain.step()
        v = np.asarray(problem.phi(xv, chain.y[0]), dtype=float)
        if vals is None:
            vals = np.empty((n_samples,) + v.shape)
        vals[i] = v
    bias = vals.mean(axis=0)
    se = batch_means_se(vals)
    passed = bool(np.all(np.abs(bias) <= 3.0 * se + 1e-12))
    return CenteringReport(bias, se, passed)


def _fit_envelope(times: np.ndarray, mags: np.ndarray, noise: np.ndarray):
    """Fit mags ~ C e^{-rate t} on the stretch resolved above noise.

    Returns (C, rate) or None when no decaying fit is possible.
    """
    usable = mags > np.maximum(3.0 * noise, 1e-300)
    if usable.sum() < 6:
        return None
    last = np.argmin(usable) if not usable.all() else usable.size
    sel = slice(0, max(6, int(last)))
    coef = np.polyfit(times[sel], np.log(mags[sel] + 1e-300), 1)
    if coef[0] >= 0:
        return None
    return float(np.exp(coef[1])), float(-coef[0])


def solve_poisson(
    problem: PoissonProblem,
    x: np.ndarray,
    y: np.ndarray,
    budget: PoissonBudget | None = None,
    rng: np.random.Generator | None = None,
    waive_centering: bool = False,
    return_replicas: bool = False,
) -> PoissonSolution:
    """Corrector estimate at (x, y): trapezoid-in-time of the replica
    average of phi along the frozen flow, truncated where the fitted
    envelope C e^{-rate t} falls below `tail_tol * scale(phi)`.
    """
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if np.linalg.norm(yv) > 1e3:
        raise RangeError(
            f"||y|| = {np.linalg.norm(yv):.3g} > 1e3: polynomial-growth "
            "extrapolation is untested there"
        )
    model = problem.model
    b = budget or PoissonBudget()
    rng = rng if rng is not None else np.random.default_rng(0)

    if not waive_centering:
        ckey = xv.tobytes()
        report = problem._centering_cache.get(ckey)
        if report is None:
            report = check_centering(problem, xv, rng=substream(0, "centering", ckey.hex()))
            problem._centering_cache[ckey] = report
        if not report.passed:
            raise CenteringError(
                f"observable is not centered at x: measured bias {report.bias} "
                f"(SE {report.standard_error})"
            )

    gap = model.opB.gap
    dt = b.dt / gap
    M = b.replicas
    chain = FrozenChain(model, np.broadcast_to(xv, (M, model.n)).copy(), dt, rng, y0=yv)

    v_prev = np.asarray(problem.phi(xv, chain.y), dtype=float)
    integrals = np.zeros_like(v_prev)
    gbar = [v_prev.mean(axis=0)]
    gse = [v_prev.std(axis=0, ddof=1) / np.sqrt(M)]
    scale = max(float(np.linalg.norm(np.atleast_1d(gbar[0]))), 1e-300)

    horizon = (b.block_time / gap) if b.force_t_star is None else b.force_t_star
    t = 0.0
    envelope = None
    while True:
        steps = int(round((horizon - t) / dt))
        for _ in range(steps):
            chain.step()
            v = np.asarray(problem.phi(xv, chain.y), dtype=float)
            integrals += 0.5 * dt * (v_prev + v)
            v_prev = v
            gbar.append(v.mean(axis=0))
            gse.append(v.std(axis=0, ddof=1) / np.sqrt(M))
        t = horizon
        if b.force_t_star is not None:
            break
        times = np.arange(len(gbar)) * dt
        mags = np.linalg.norm(np.atleast_2d(np.stack(gbar).T), axis=0)
        noise = np.linalg.norm(np.atleast_2d(np.stack(gse).T), axis=0)
        scale = max(scale, float(mags.max()))
        tol_abs = b.tail_tol * scale
        envelope = _fit_envelope(times, mags, noise)
        if envelope is not None:
            C, rate = envelope
            if C * np.exp(-rate * t) < tol_abs:
                break
        tail_window = mags[-max(4, len(mags) // 4):]
        tail_floor = np.maximum(3.0 * noise[-max(4, len(noise) // 4):], tol_abs)
        if np.all(tail_window <= tail_floor):
            # nothing left to integrate that this replica budget can resolve;
            # running longer only accumulates variance
            if envelope is None:
                envelope = (float(mags.max()), np.inf)
            break
        if t >= b.max_time / gap:
            raise HorizonError(
                f"no decaying envelope found by t={t:.3g}; observable may "
                "violate centering or mix too slowly"
            )
        horizon = min(2.0 * t, b.max_time / gap)

    if envelope is None:
        times = np.arange(len(gbar)) * dt
        mags = np.linalg.norm(np.atleast_2d(np.stack(gbar).T), axis=0)
        noise = np.linalg.norm(np.atleast_2d(np.stack(gse).T), axis=0)
        envelope = _fit_envelope(times, mags, noise) or (float(mags.max()), np.inf)
    C, rate = envelope
    tail = C * np.exp(-rate * t) / rate if np.isfinite(rate) else 0.0

    value = integrals.mean(axis=0)
    se = integrals.std(axis=0, ddof=1) / np.sqrt(M)
    if not problem.vector:
        value = float(value)
        se = float(se)
    return PoissonSolution(
        value=value, standard_error=se, t_star=float(t), replicas=M,
        envelope_rate=rate, envelope_const=C, tail_bound=float(tail),
        replica_integrals=integrals if return_replicas else None,
    )


def solve_poisson_vector(
    problem: PoissonProblem,
    x: np.ndarray,
    y: np.ndarray,
    budget: PoissonBudget | None = None,
    rng: np.random.Generator | None = None,
    share_paths: bool = True,
    waive_centering: bool = False,
) -> PoissonSolution:
    """Hilbert-space-valued observable, solved componentwise over the slow
    eigenbasis.  By default one replica ensemble serves every component
    (shared trajectories); share_paths=False re-solves each component with
    an independent stream, which is only useful to validate the estimator.
    """
    if not problem.vector:
        raise ValueError("problem is scalar; use solve_poisson")
    if share_paths:
        return solve_poisson(problem, x, y, budget, rng,
                             waive_centering=waive_centering)
    xv = np.asarray(x, dtype=float)
    probe = np.asarray(problem.phi(xv, np.asarray(y, dtype=float)), dtype=float)
    d = probe.shape[-1]
    vals, ses, tstars = [], [], []
    for j in range(d):
        sub = PoissonProblem(
            phi=lambda xx, yy, j=j: np.asarray(problem.phi(xx, yy))[..., j],
            model=problem.model, vector=False,
            growth_degree=problem.growth_degree, holder_eta=problem.holder_eta,
        )
        rng_j = rng if rng is None else substream(int(rng.integers(2**31)), j)
        sol = solve_poisson(sub, x, y, budget, rng_j, waive_centering=True)
        vals.append(sol.value)
        ses.append(sol.standard_error)
        tstars.append(sol.t_star)
    return PoissonSolution(
        value=np.array(vals), standard_error=np.array(ses),
        t_star=float(max(tstars)), replicas=(budget or PoissonBudget()).replicas,
        envelope_rate=float("nan"), envelope_const=float("nan"), tail_bound=float("nan"),
    )


def mc_psi(
    problem: PoissonProblem,
    x: np.ndarray,
    budget: PoissonBudget | None = None,
    seed: int = 0,
) -> Callable[[np.ndarray], np.ndarray | float]:
    """Deterministic corrector black box psi_hat(y) under common random
    numbers: every call replays the identical noise sequence and the
    truncation horizon fixed by the first call, so differences across
    nearby y are smooth.
    """
    b = budget or PoissonBudget()
    state = {"t_star": b.force_t_star}

    def psi_hat(y, return_replicas: bool = False):
        bb = replace(b, force_t_star=state["t_star"])
        sol = solve_poisson(
            problem, x, y, bb, substream(seed, "crn-psi"),
            waive_centering=True, return_replicas=return_replicas,
        )
        if state["t_star"] is None:
            state["t_star"] = sol.t_star
        return sol if return_replicas else sol.value

    return psi_hat


@dataclass
class DyPsiEstimate:
    value: np.ndarray | float
    standard_error: np.ndarray | float
    noise_dominated: bool


def estimate_DyPsi(
    problem: PoissonProblem,
    x: np.ndarray,
    y: np.ndarray,
    direction: np.ndarray,
    budget: PoissonBudget | None = None,
    seed: int = 0,
    delta: Optional[float] = None,
) -> DyPsiEstimate:
    """Directional derivative of the corrector in the fast variable by a
    CRN central difference; the SE comes from per-replica differences."""
    yv = np.asarray(y, dtype=float)
    d = np.asarray(direction, dtype=float)
    dnorm = float(np.linalg.norm(d))
    if dnorm == 0:
        raise ValueError("direction must be nonzero")
    unit = d / dnorm
    h = delta if delta is not None else 1e-3 * (1.0 + float(np.linalg.norm(yv)))
    psi_hat = mc_psi(problem, x, budget, seed)
    psi_hat(yv)  # pins the truncation horizon at the center point
    plus = psi_hat(yv + h * unit, return_replicas=True)
    minus = psi_hat(yv - h * unit, return_replicas=True)
    diffs = (plus.replica_integrals - minus.replica_integrals) / (2.0 * h)
    value = diffs.mean(axis=0) * dnorm
    se = diffs.std(axis=0, ddof=1) / np.sqrt(diffs.shape[0]) * dnorm
    noise_dom = bool(np.all(np.abs(value) < 2.0 * se))
    if not problem.vector:
        value = float(value)
        se = float(se)
    return DyPsiEstimate(value, se, noise_dom)


@dataclass
class ResidualReport:
    residual: float
    generator_value: np.ndarray | float
    phi_value: np.ndarray | float
    used_modes: np.ndarray
    noise_dominated: bool


def poisson_residual(
    problem: PoissonProblem,
    psi_hat: Callable[[np.ndarray], np.ndarray | float],
    x: np.ndarray,
    y: np.ndarray,
    h: Optional[float] = None,
    se_hint: float = 0.0,
) -> ResidualReport:
    """Apply the fast generator to psi_hat by finite differences on the
    Galerkin modes and compare against -phi.

    L psi = <B y + G(x,y), D_y psi> + 1/2 sum_k lambda_k d^2_{y_k} psi, with
    the trace truncated to modes whose contribution clears the noise floor.
    Returns |L psi_hat + phi| / (1 + |phi|) (norms in the vector case).
    """
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    model = problem.model
    n = model.n
    h = h if h is not None else 1e-3 * (1.0 + float(np.linalg.norm(yv)))

    center = np.asarray(psi_hat(yv), dtype=float)
    plus = np.empty((n,) + center.shape)
    minus = np.empty_like(plus)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        plus[k] = np.asarray(psi_hat(yv + e), dtype=float)
        minus[k] = np.asarray(psi_hat(yv - e), dtype=float)
    grad = (plus - minus) / (2.0 * h)                  # (n, ...) per mode
    second = (plus - 2.0 * center + minus) / h**2

    drift = -model.opB.eigenvalues * yv + model.G.evaluate(xv, yv)
    phi_val = np.asarray(problem.phi(xv, yv), dtype=float)
    lam = model.q2.variances
    floor = 1e-9 * (1.0 + float(np.linalg.norm(np.atleast_1d(phi_val))))
    contrib = lam[:, None] * np.abs(second.reshape(n, -1))
    used = contrib.max(axis=1) >= floor
    trace_term = 0.5 * np.tensordot(lam * used, second, axes=(0, 0))
    gen = np.tensordot(drift, grad, axes=(0, 0)) + trace_term

    num = float(np.linalg.norm(np.atleast_1d(gen + phi_val)))
    den = 1.0 + float(np.linalg.norm(np.atleast_1d(phi_val)))
    noise_dom = bool(se_hint > 0 and np.all(np.abs(plus - minus) < 4.0 * se_hint))
    return ResidualReport(
        residual=num / den, generator_value=gen if problem.vector else float(gen),
        phi_value=phi_val if problem.vector else float(phi_val),
        used_modes=used, noise_dominated=noise_dom,
    )


class PoissonSolver:
    """Thin handle bundling a model with default budgets; the interface the
    averaging module consumes for corrector derivatives."""

    def __init__(self, model: ModelSpec, fbar: Callable, budget: PoissonBudget | None = None,
                 seed: int = 0):
        self.model = model
        self.fbar = fbar
        self.budget = budget or PoissonBudget()
        self.seed = seed

    def delta_f_problem(self) -> PoissonProblem:
        def phi(x, y):
            return self.model.F.evaluate(x, y) - self.fbar(x)
        return PoissonProblem(phi=phi, model=self.model, vector=True,
                              growth_degree=self.model.F.growth_degree)

    def dy_psi(self, x, y, direction, rng=None) -> np.ndarray:
        seed = self.seed if rng is None else int(rng.integers(2**31))
        est = estimate_DyPsi(self.delta_f_problem(), x, y, direction,
                             self.budget, seed=seed)
        return np.asarray(est.value)
