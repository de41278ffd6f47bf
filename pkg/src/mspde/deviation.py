"""Deviation process, limit diffusion, and weak-error machinery.

The deviation field Z = (X - Xbar)/sqrt(eps) is built from coupled bundles
(same slow noise in both recursions).  Its Gaussian limit is an
Ornstein-Uhlenbeck-type process driven by an independent cylindrical Wiener
process through the diffusion factor sigma(x), where sigma sigma^T / 2 is
the invariant average of the outer product of the drift fluctuation with
its corrector.  The estimator symmetrizes the raw outer-product average and
projects onto the PSD cone by eigenvalue clipping, reporting the clipped
mass; the limit process is then simulated with the same exponential-Euler
kernel as everything else.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np

from .averaging import FrozenChain, batch_means_se
from .errors import ConfigurationError, DomainError, EstimatorIllConditioned
from .integrators import Ensemble, PathBundle, default_dt
from .models import ModelSpec
from .poisson import PoissonBudget, PoissonProblem, check_centering, solve_poisson_vector
from .rngutil import substream
from .spectral import ou_decay, ou_drift_weight, ou_noise_std

__all__ = [
    "PHI_BUILTINS",
    "compute_Z_path",
    "SigmaBudget",
    "SigmaEstimate",
    "estimate_sigma",
    "simulate_Zbar",
    "simulate_Zbar_ensemble",
    "WeakErrorReport",
    "weak_error",
    "fluctuation_integral",
    "fluctuation_scaling",
    "fit_loglog",
]


def _phi1(z):
    return np.exp(-np.sum(z[..., :4] ** 2, axis=-1))


def _phi2(z):
    return np.cos(z[..., 0])


def _phi3(z):
    return np.tanh(z[..., 1]) if z.shape[-1] > 1 else np.tanh(z[..., 0])


# smooth bounded functionals with bounded derivatives to order 4
PHI_BUILTINS: dict[str, Callable] = {"phi1": _phi1, "phi2": _phi2, "phi3": _phi3}


def compute_Z_path(bundle: PathBundle, eps: Optional[float] = None) -> np.ndarray:
    """Deviation trajectory (X_t - Xbar_t)/sqrt(eps) on the output grid."""
    if bundle.averaged is None:
        raise ConfigurationError("bundle has no averaged path; rerun with with_averaged")
    eps = bundle.epsilon if eps is None else eps
    return (bundle.slow - bundle.averaged) / np.sqrt(eps)


# ---------------------------------------------------------------------------
# limit diffusion


@dataclass
class SigmaBudget:
    n_samples: int = 1024          # thinned frozen samples
    thin: float = 1.0              # spacing between samples, units of 1/beta_1
    burn_in: float = 8.0
    chain_dt: float = 0.02
    poisson: PoissonBudget = dataclass_field(
        default_factory=lambda: PoissonBudget(replicas=192, tail_tol=3e-3)
    )


@dataclass
class SigmaEstimate:
    sigma: np.ndarray              # PSD factor, (n, n)
    sigma_sq: np.ndarray           # raw 2 * avg(deltaF (x) Psi)
    symmetrized: np.ndarray
    eigenvalues: np.ndarray        # of the symmetrized matrix, pre-clip
    clipped_mass: float
    standard_error: np.ndarray     # entrywise SE of sigma_sq
    samples: int
    inner_product_avg: float       # avg <deltaF, Psi>, for the trace identity

    @property
    def hs_norm_sq(self) -> float:
        return float(np.sum(np.maximum(self.eigenvalues, 0.0)))

    @property
    def factor_standard_error(self) -> np.ndarray:
        """Entrywise SE propagated through the matrix square root.

        First-order perturbation of sqrt(S) around a dominant diagonal:
        d sqrt(S)_{jk} = dS_{jk} / (sqrt(d_j) + sqrt(d_k)), so the factor's
        off-diagonals between weak and strong modes inflate accordingly.
        """
        se_sym = 0.5 * np.hypot(self.standard_error, self.standard_error.T)
        d = np.sqrt(np.maximum(np.diag(self.symmetrized), 0.0))
        denom = d[:, None] + d[None, :]
        out = np.zeros_like(se_sym)
        ok = denom > 1e-300
        out[ok] = se_sym[ok] / denom[ok]
        return out


def estimate_sigma(
    model: ModelSpec,
    fbar: Callable,
    x: np.ndarray,
    budget: SigmaBudget | None = None,
    seed: int = 0,
    psi_mode: str = "mc",
    waive_centering: bool = False,
) -> SigmaEstimate:
    """Limit diffusion factor at x.

    Runs one long frozen chain; at thinned samples evaluates the drift
    fluctuation and its corrector (vector Feynman-Kac solve with shared
    trajectories, or the closed form when the model has one), accumulates
    outer products, symmetrizes twice the average, and eigen-clips to the
    PSD cone.  Raises when the clipped mass exceeds 20% of the trace.
    """
    xv = np.asarray(x, dtype=float)
    b = budget or SigmaBudget()
    n = model.n
    gap = model.opB.gap

    def phi(xx, yy):
        return model.F.evaluate(xx, yy) - fbar(xx)

    problem = PoissonProblem(phi=phi, model=model, vector=True,
                             growth_degree=model.F.growth_degree)
    if not waive_centering:
        rep = check_centering(problem, xv, rng=substream(seed, "sigma-centering"))
        if not rep.passed:
            raise EstimatorIllConditioned(
                f"drift fluctuation not centered at x (bias {rep.bias})"
            )

    if psi_mode == "closed":
        if model.closed_form is None:
            raise DomainError("model has no closed-form corrector")
        psi_eval = lambda y, i: model.closed_form.psi(xv, y)
    elif psi_mode == "mc":
        def psi_eval(y, i):
            sol = solve_poisson_vector(
                problem, xv, y, b.poisson,
                substream(seed, "sigma-psi", i), waive_centering=True,
            )
            return np.asarray(sol.value)
    else:
        raise DomainError(f"unknown psi mode {psi_mode!r}")

    dt = b.chain_dt / gap
    chain = FrozenChain(model, xv, dt, substream(seed, "sigma-chain"))
    chain.advance(b.burn_in / gap)
    thin_steps = max(1, int(round(b.thin / gap / dt)))

    outers = np.empty((b.n_samples, n, n))
    inners = np.empty(b.n_samples)
    for i in range(b.n_samples):
        for _ in range(thin_steps):
            chain.step()
        y = chain.y[0]
        df = phi(xv, y)
        psi = psi_eval(y, i)
        outers[i] = np.outer(df, psi)
        inners[i] = float(df @ psi)

    sigma_sq = 2.0 * outers.mean(axis=0)
    se = 2.0 * batch_means_se(outers)
    sym = 0.5 * (sigma_sq + sigma_sq.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    clipped = float(-np.sum(np.minimum(eigvals, 0.0)))
    pos_trace = float(np.sum(np.maximum(eigvals, 0.0)))
    if pos_trace > 0 and clipped > 0.2 * pos_trace:
        raise EstimatorIllConditioned(
            f"clipped mass {clipped:.3g} exceeds 20% of trace {pos_trace:.3g}"
        )
    sigma = (eigvecs * np.sqrt(np.maximum(eigvals, 0.0))) @ eigvecs.T
    return SigmaEstimate(
        sigma=sigma, sigma_sq=sigma_sq, symmetrized=sym, eigenvalues=eigvals,
        clipped_mass=clipped, standard_error=se, samples=b.n_samples,
        inner_product_avg=float(inners.mean()),
    )


# ---------------------------------------------------------------------------
# limit process


def _sigma_apply(sig: np.ndarray, xi: np.ndarray) -> np.ndarray:
    if sig.ndim == 2:
        return xi @ sig.T
    return np.einsum("...ij,...j->...i", sig, xi)


def simulate_Zbar(
    model: ModelSpec,
    dx_fbar: Callable[[np.ndarray, np.ndarray], np.ndarray],
    sigma: Callable[[np.ndarray], np.ndarray],
    xbar_path: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    sigma_refresh: int = 8,
    z0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Limit OU-type process along a given averaged path.

    Exponential-Euler steps of dZ = AZ + D_x Fbar(Xbar_t).Z dt + sigma(Xbar_t) dWtilde
    with sigma evaluated at the left endpoint and refreshed every
    `sigma_refresh` steps (an expensive estimator need not be re-run each
    step; the closed form is cheap and K only skips redundant calls).
    Returns the Z path with the same leading shape as `xbar_path`.
    """
    alpha = model.opA.eigenvalues
    decay = ou_decay(alpha, dt)
    weight = ou_drift_weight(alpha, dt)
    noise_damp = ou_noise_std(alpha, np.ones_like(alpha), dt)
    steps = xbar_path.shape[0] - 1
    z = np.zeros_like(xbar_path)
    if z0 is not None:
        z[0] = z0
    sig = None
    for k in range(steps):
        if sig is None or k % sigma_refresh == 0:
            sig = sigma(xbar_path[k])
        xi = rng.standard_normal(z[k].shape)
        z[k + 1] = decay * z[k] + weight * dx_fbar(xbar_path[k], z[k]) + noise_damp * _sigma_apply(sig, xi)
    return z


def simulate_Zbar_ensemble(
    model: ModelSpec,
    fbar: Callable,
    dx_fbar: Callable,
    sigma: Callable,
    T: float,
    dt: float,
    M: int,
    rng: np.random.Generator,
    sigma_refresh: int = 8,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Terminal Z_bar over M paths: a fresh averaged ensemble (its own slow
    noise) plus the limit recursion driven by an independent Wiener process."""
    n = model.n
    alpha = model.opA.eigenvalues
    decay = ou_decay(alpha, dt)
    weight = ou_drift_weight(alpha, dt)
    slow_std = ou_noise_std(alpha, model.q1.variances, dt)
    noise_damp = ou_noise_std(alpha, np.ones_like(alpha), dt)
    steps = int(round(T / dt))
    xbar = np.zeros((M, n)) if x0 is None else np.broadcast_to(x0, (M, n)).copy()
    z = np.zeros((M, n))
    sig = None
    for k in range(steps):
        if sig is None or k % sigma_refresh == 0:
            sig = sigma(xbar)
        w1 = rng.standard_normal((M, n))
        wt = rng.standard_normal((M, n))
        z = decay * z + weight * dx_fbar(xbar, z) + noise_damp * _sigma_apply(sig, wt)
        xbar = decay * xbar + weight * fbar(xbar) + slow_std * w1
    return z


# ---------------------------------------------------------------------------
# weak error


@dataclass
class WeakErrorReport:
    functional: str
    epsilon: float
    mean_Z: float
    se_Z: float
    mean_Zbar: float
    se_Zbar: float

    @property
    def difference(self) -> float:
        return self.mean_Z - self.mean_Zbar

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.se_Z, self.se_Zbar))

    @property
    def conclusive(self) -> bool:
        return abs(self.difference) > 2.0 * self.combined_se


def fit_loglog(x: np.ndarray, y: np.ndarray):
    """OLS fit of log2 y against log2 x; returns (slope, slope_se, r2, intercept)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ConfigurationError("need at least two points to fit a slope")
    lx, ly = np.log2(x), np.log2(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = max(x.size - 2, 1)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    slope_se = np.sqrt(ss_res / dof / sxx) if sxx > 0 else float("nan")
    return float(coef[0]), float(slope_se), float(r2), float(coef[1])


def weak_error(
    model: ModelSpec,
    eps_list,
    T: float,
    phis: dict[str, Callable] | None,
    M: int,
    seed: int = 0,
    fbar: Callable | None = None,
    dx_fbar: Callable | None = None,
    sigma: Callable | None = None,
    dt_policy: Callable[[float], float] | None = None,
    x0: Optional[np.ndarray] = None,
) -> dict:
    """Laws-only comparison of E phi(Z^eps_T) against E phi(Zbar_T).

    The coupled ensembles and the limit ensembles use independent streams
    (the limit drives through a Wiener process independent of the slow
    noise, so no pathwise coupling exists to exploit).  Per epsilon both
    sides run at the same macro step so their O(dt) scheme biases cancel to
    leading order.
    """
    phis = phis or PHI_BUILTINS
    if model.closed_form is not None:
        fbar = fbar or model.closed_form.fbar
        dx_fbar = dx_fbar or model.closed_form.dx_fbar
        sigma = sigma or (lambda x, _s=model.closed_form.sigma: _s(x))
    if fbar is None or dx_fbar is None or sigma is None:
        raise ConfigurationError("weak_error needs fbar, dx_fbar and sigma providers")
    dt_of = dt_policy or (lambda e: default_dt(e, T))

    reports: list[WeakErrorReport] = []
    for i, eps in enumerate(sorted(eps_list, reverse=True)):
        dt = dt_of(eps)
        ens = Ensemble(model, eps, T, dt, M, substream(seed, "weak-coupled", i),
                       fbar=fbar, x0=x0)
        ens.run()
        z = ens.z()
        zbar = simulate_Zbar_ensemble(
            model, fbar, dx_fbar, sigma, T, dt, M,
            substream(seed, "weak-limit", i), x0=x0,
        )
        for name, phi in phis.items():
            vz = np.asarray(phi(z), dtype=float)
            vb = np.asarray(phi(zbar), dtype=float)
            reports.append(WeakErrorReport(
                functional=name, epsilon=eps,
                mean_Z=float(vz.mean()), se_Z=float(vz.std(ddof=1) / np.sqrt(vz.size)),
                mean_Zbar=float(vb.mean()), se_Zbar=float(vb.std(ddof=1) / np.sqrt(vb.size)),
            ))

    fits = {}
    for name in phis:
        rows = [r for r in reports if r.functional == name]
        diffs = np.array([abs(r.difference) for r in rows])
        epss = np.array([r.epsilon for r in rows])
        if np.all(diffs == 0):
            fits[name] = {"status": "skipped", "note": "all differences are exactly zero"}
            continue
        conclusive = any(r.conclusive for r in rows)
        keep = diffs > 0
        if keep.sum() < 2:
            fits[name] = {"status": "insufficient-points",
                          "note": "need two nonzero differences for a slope"}
            continue
        slope, slope_se, r2, intercept = fit_loglog(epss[keep], diffs[keep])
        fits[name] = {
            "status": "ok" if conclusive else "inconclusive",
            "slope": slope, "slope_se": slope_se, "r2": r2, "intercept": intercept,
        }
    return {"reports": reports, "fits": fits}


# ---------------------------------------------------------------------------
# fluctuation integrals


def _check_gamma(gamma: float):
    if not 0.0 <= gamma < 0.5:
        raise DomainError(f"fluctuation integrals require gamma in [0, 1/2), got {gamma}")


def fluctuation_integral(
    model: ModelSpec,
    bundles,
    gamma: float,
    s: float,
    t: float,
    fbar: Callable | None = None,
) -> float:
    """Mean squared norm over bundles of int_s^t (-A)^gamma e^{(t-r)A} deltaF dr.

    Bundles must carry full-resolution paths (store_full).  Quadrature uses
    the same exponential-Euler weights as the integrator, i.e. the exact
    semigroup integral against a left-frozen integrand.
    """
    _check_gamma(gamma)
    if isinstance(bundles, PathBundle):
        bundles = [bundles]
    if model.closed_form is not None:
        fbar = fbar or model.closed_form.fbar
    if fbar is None:
        raise ConfigurationError("need an averaged-drift provider for deltaF")
    alpha = model.opA.eigenvalues
    vals = []
    for b in bundles:
        if b.slow_full is None or b.fast_full is None:
            raise ConfigurationError("bundle lacks full paths; simulate with store_full")
        dt = b.dt
        i0 = int(round(s / dt))
        i1 = int(round(t / dt))
        if not (0 <= i0 < i1 <= b.slow_full.shape[0] - 1):
            raise DomainError("(s, t) not grid-aligned inside the bundle horizon")
        decay = ou_decay(alpha, dt)
        weight = ou_drift_weight(alpha, dt)
        J = np.zeros(model.n)
        for k in range(i0, i1):
            df = model.F.evaluate(b.slow_full[k], b.fast_full[k]) - fbar(b.slow_full[k])
            J = decay * J + weight * df
        vals.append(float(np.sum(alpha ** (2 * gamma) * J**2)))
    return float(np.mean(vals))


def fluctuation_scaling(
    model: ModelSpec,
    eps_list,
    T: float,
    gammas,
    M: int,
    seed: int = 0,
    fbar: Callable | None = None,
    dt_policy: Callable[[float], float] | None = None,
) -> dict:
    """E||(-A)^gamma int_0^T e^{(T-r)A} deltaF dr||^2 per epsilon with its
    log-log slope fit; the integral is accumulated online over ensembles."""
    for g in gammas:
        _check_gamma(g)
    if model.closed_form is not None:
        fbar = fbar or model.closed_form.fbar
    if fbar is None:
        raise ConfigurationError("need an averaged-drift provider for deltaF")
    dt_of = dt_policy or (lambda e: default_dt(e, T))
    alpha = model.opA.eigenvalues

    moments = {g: [] for g in gammas}
    ses = {g: [] for g in gammas}
    eps_sorted = sorted(eps_list, reverse=True)
    for i, eps in enumerate(eps_sorted):
        dt = dt_of(eps)
        ens = Ensemble(model, eps, T, dt, M, substream(seed, "fluct", i),
                       fbar=fbar, with_averaged=False)
        decay = ou_decay(alpha, dt)
        weight = ou_drift_weight(alpha, dt)
        J = np.zeros((M, model.n))
        while ens.k < ens.steps:
            df = model.F.evaluate(ens.x, ens.y) - fbar(ens.x)
            J = decay * J + weight * df
            ens.step()
        for g in gammas:
            sq = np.sum(alpha ** (2 * g) * J**2, axis=-1)
            moments[g].append(float(sq.mean()))
            ses[g].append(float(sq.std(ddof=1) / np.sqrt(M)))

    fits = {}
    if len(eps_sorted) >= 2:
        fits = {g: fit_loglog(np.array(eps_sorted), np.array(moments[g])) for g in gammas}
    return {"epsilons": eps_sorted, "moments": moments, "standard_errors": ses, "fits": fits}
