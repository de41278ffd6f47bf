"""Time stepping for the coupled slow-fast system, the frozen equation and
the averaged equation.

All schemes are exponential-Euler: the diagonal linear part and the
stochastic convolution are integrated exactly per mode (see `spectral`),
only the reaction term is frozen over the step.  The fast equation is
stepped with rates beta_k/eps and noise Q2/eps, which keeps the scheme
stable for macro steps dt >> eps/beta_k.

The coupled and averaged equations share one driving-noise realization:
each slow step consumes a vector of standard normals (the recorded "W1
increment") which scales to the exact stochastic convolution sample, and
the averaged recursion reuses exactly those normals.  That coupling is what
makes the pathwise distance X^eps - Xbar measurable at all.

Public single-path operations work on `SpectralField`/`CoupledState`; the
`Ensemble` engine below advances M paths at once on (M, n) arrays and is
what the experiment harnesses drive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, MemoryBudgetError
from .models import ModelSpec
from .spectral import (
    SpectralField,
    ou_decay,
    ou_drift_weight,
    ou_noise_std,
)

__all__ = [
    "CoupledState",
    "PathBundle",
    "SimOptions",
    "default_dt",
    "step_slow_fast",
    "step_frozen",
    "step_averaged",
    "simulate_bundle",
    "StepKernel",
    "Ensemble",
    "frozen_step_arrays",
]


@dataclass(frozen=True)
class CoupledState:
    t: float
    x: SpectralField
    y: SpectralField


@dataclass
class PathBundle:
    """One realization of the coupled pair plus its averaged companion."""

    times: np.ndarray
    slow: np.ndarray                 # (n_out, n)
    fast: np.ndarray
    averaged: np.ndarray
    epsilon: float
    dt: float
    w1_record: Optional[np.ndarray] = None      # (steps, n) standard normals
    gamma_dist: dict = field(default_factory=dict)   # gamma -> (n_out,) distances
    sup_gamma_dist: dict = field(default_factory=dict)
    slow_full: Optional[np.ndarray] = None      # (steps+1, n) when requested
    fast_full: Optional[np.ndarray] = None
    step_times: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.slow.shape[-1]


def default_dt(eps: float, T: float) -> float:
    """Macro step keeping the drift-freezing error below the averaging error."""
    return min(eps / 4.0, T * 2.0**-8)


class StepKernel:
    """Precomputed per-mode exponential-Euler factors for one (eps, dt)."""

    def __init__(self, model: ModelSpec, eps: float, dt: float, noise: bool = True):
        if dt <= 0:
            raise DomainError(f"dt must be positive, got {dt}")
        if not 0.0 < eps <= 1.0:
            raise DomainError(f"eps must lie in (0, 1], got {eps}")
        self.model = model
        self.eps = eps
        self.dt = dt
        alpha = model.opA.eigenvalues
        beta_eff = model.opB.eigenvalues / eps
        self.slow_decay = ou_decay(alpha, dt)
        self.slow_weight = ou_drift_weight(alpha, dt)
        self.fast_decay = ou_decay(beta_eff, dt)
        # fast drift enters as G/eps against rates beta/eps
        self.fast_weight = ou_drift_weight(beta_eff, dt) / eps
        if noise:
            self.slow_std = ou_noise_std(alpha, model.q1.variances, dt)
            self.fast_std = ou_noise_std(beta_eff, model.q2.variances / eps, dt)
        else:
            self.slow_std = np.zeros_like(alpha)
            self.fast_std = np.zeros_like(alpha)

    def coupled(self, x, y, w1, w2):
        Fxy = self.model.F.evaluate(x, y)
        Gxy = self.model.G.evaluate(x, y)
        x_new = self.slow_decay * x + self.slow_weight * Fxy + self.slow_std * w1
        y_new = self.fast_decay * y + self.fast_weight * Gxy + self.fast_std * w2
        return x_new, y_new

    def averaged(self, xbar, fbar_val, w1):
        return self.slow_decay * xbar + self.slow_weight * fbar_val + self.slow_std * w1


def step_slow_fast(
    model: ModelSpec,
    eps: float,
    dt: float,
    state: CoupledState,
    rng: np.random.Generator,
    noise: bool = True,
):
    """One coupled step; returns (new_state, w1_increment).

    The returned `w1_increment` holds the standard normals consumed by the
    slow convolution and is what the averaged recursion must reuse.
    A macro step above eps/(4 beta_1) only triggers a warning: the scheme
    stays stable, but the drift-freezing error starts to dominate.
    """
    kern = StepKernel(model, eps, dt, noise=noise)
    if dt > eps / (4.0 * model.opB.gap) and noise:
        warnings.warn(
            f"dt={dt:g} exceeds eps/(4 beta_1)={eps / (4 * model.opB.gap):g}; "
            "drift-freezing error may dominate",
            stacklevel=2,
        )
    w1 = rng.standard_normal(model.n)
    w2 = rng.standard_normal(model.n)
    x_new, y_new = kern.coupled(state.x.coeffs, state.y.coeffs, w1, w2)
    new = CoupledState(state.t + dt, SpectralField(x_new, "slow"), SpectralField(y_new, "fast"))
    return new, SpectralField(w1, "slow")


def frozen_step_arrays(model: ModelSpec, x_frozen, dt: float, y, w2):
    """Array kernel for the frozen equation dY = BY + G(x, Y) + dW2."""
    beta = model.opB.eigenvalues
    g = model.G.evaluate(x_frozen, y)
    return (
        ou_decay(beta, dt) * y
        + ou_drift_weight(beta, dt) * g
        + ou_noise_std(beta, model.q2.variances, dt) * w2
    )


def step_frozen(
    model: ModelSpec,
    x_frozen: SpectralField,
    dt: float,
    y: SpectralField,
    rng: np.random.Generator,
) -> SpectralField:
    """One exponential-Euler step of the frozen fast equation (x held fixed)."""
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    w2 = rng.standard_normal(model.n)
    return SpectralField(frozen_step_arrays(model, x_frozen.coeffs, dt, y.coeffs, w2), "fast")


def step_averaged(
    model: ModelSpec,
    fbar: Callable[[np.ndarray], np.ndarray],
    dt: float,
    x: SpectralField,
    w1_increment: Optional[SpectralField] = None,
    rng: Optional[np.random.Generator] = None,
) -> SpectralField:
    """One averaged-equation step driven by a recorded or fresh W1 increment."""
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if w1_increment is None:
        if rng is None:
            raise DomainError("either a recorded w1 increment or an rng is required")
        w1 = rng.standard_normal(model.n)
    else:
        w1 = w1_increment.coeffs
    alpha = model.opA.eigenvalues
    out = (
        ou_decay(alpha, dt) * x.coeffs
        + ou_drift_weight(alpha, dt) * fbar(x.coeffs)
        + ou_noise_std(alpha, model.q1.variances, dt) * w1
    )
    return SpectralField(out, "slow")


@dataclass
class SimOptions:
    """Knobs for simulate_bundle / Ensemble runs."""

    n_outputs: int = 17
    gammas: tuple = ()
    record_w1: bool = False
    store_full: bool = False
    noise: bool = True
    with_averaged: bool = True
    memory_budget: int = 2**28          # bytes of trajectory storage per run
    x0: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None


def _resolve_fbar(model: ModelSpec, fbar):
    if fbar is not None:
        return fbar
    if model.closed_form is not None:
        return model.closed_form.fbar
    raise ConfigurationError(
        "model has no closed-form averaged drift; pass an estimator provider"
    )


def _output_indices(steps: int, n_outputs: int) -> np.ndarray:
    idx = np.unique(np.round(np.linspace(0, steps, n_outputs)).astype(int))
    return idx


def simulate_bundle(
    model: ModelSpec,
    eps: float,
    T: float,
    dt: float,
    rng: np.random.Generator,
    options: SimOptions | None = None,
    fbar: Callable[[np.ndarray], np.ndarray] | None = None,
) -> PathBundle:
    """Advance the coupled pair and the averaged equation on one grid with
    shared W1 draws; record states at the requested output times.

    The sup of ||(-A)^gamma (X - Xbar)|| over the output grid is accumulated
    online for every gamma in `options.gammas`.
    """
    opts = options or SimOptions()
    if T <= 0:
        raise DomainError("T must be positive")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise DomainError(f"dt={dt} does not divide T={T}")
    n = model.n
    est_bytes = (steps + 1) * n * 8 * (4 if opts.store_full else 0) + steps * n * 8 * (
        1 if opts.record_w1 else 0
    )
    if est_bytes > opts.memory_budget:
        raise MemoryBudgetError(
            f"trajectory storage {est_bytes} B exceeds budget {opts.memory_budget} B"
        )

    kern = StepKernel(model, eps, dt, noise=opts.noise)
    fbar = _resolve_fbar(model, fbar) if opts.with_averaged else None
    x = np.zeros(n) if opts.x0 is None else np.asarray(opts.x0, dtype=float).copy()
    y = np.zeros(n) if opts.y0 is None else np.asarray(opts.y0, dtype=float).copy()
    xbar = x.copy()

    out_idx = _output_indices(steps, opts.n_outputs)
    times = out_idx * dt
    slow = np.empty((out_idx.size, n))
    fast = np.empty_like(slow)
    avg = np.empty_like(slow) if opts.with_averaged else None
    w1_rec = np.empty((steps, n)) if opts.record_w1 else None
    slow_full = np.empty((steps + 1, n)) if opts.store_full else None
    fast_full = np.empty((steps + 1, n)) if opts.store_full else None
    gdist = {g: np.empty(out_idx.size) for g in opts.gammas} if opts.with_averaged else {}
    alpha = model.opA.eigenvalues

    out_pos = 0

    def record(k, x, y, xbar):
        nonlocal out_pos
        if opts.store_full:
            slow_full[k] = x
            fast_full[k] = y
        if out_pos < out_idx.size and k == out_idx[out_pos]:
            slow[out_pos] = x
            fast[out_pos] = y
            if avg is not None:
                avg[out_pos] = xbar
                for g in opts.gammas:
                    gdist[g][out_pos] = np.sqrt(np.sum(alpha ** (2 * g) * (x - xbar) ** 2))
            out_pos += 1

    record(0, x, y, xbar)
    for k in range(steps):
        w1 = rng.standard_normal(n)
        w2 = rng.standard_normal(n)
        if opts.record_w1:
            w1_rec[k] = w1
        x, y = kern.coupled(x, y, w1, w2)
        if fbar is not None:
            xbar = kern.averaged(xbar, fbar(xbar), w1)
        record(k + 1, x, y, xbar)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError(f"non-finite state at step {k + 1}")

    bundle = PathBundle(
        times=times, slow=slow, fast=fast, averaged=avg,
        epsilon=eps, dt=dt, w1_record=w1_rec,
        gamma_dist=gdist,
        sup_gamma_dist={g: float(v.max()) for g, v in gdist.items()},
        slow_full=slow_full, fast_full=fast_full,
        step_times=np.arange(steps + 1) * dt if opts.store_full else None,
    )
    return bundle


# ---------------------------------------------------------------------------
# vectorized ensembles


class Ensemble:
    """M coupled+averaged paths advanced together on (M, n) arrays.

    One generator drives the whole batch: draws have shape (M, n) per step,
    so the run is deterministic for a fixed (seed, M, step order).  Noise
    records can be injected (`w1_seq`, `w2_seq`, shapes (steps, M, >=n)) to
    couple runs across Galerkin levels with common random numbers.
    """

    def __init__(
        self,
        model: ModelSpec,
        eps: float,
        T: float,
        dt: float,
        M: int,
        rng: np.random.Generator,
        fbar=None,
        noise: bool = True,
        with_averaged: bool = True,
        x0: Optional[np.ndarray] = None,
        y0: Optional[np.ndarray] = None,
        w1_seq: Optional[np.ndarray] = None,
        w2_seq: Optional[np.ndarray] = None,
        draw_width: Optional[int] = None,
    ):
        self.model = model
        self.eps = eps
        self.T = T
        self.dt = dt
        self.M = M
        self.rng = rng
        self.steps = int(round(T / dt))
        if abs(self.steps * dt - T) > 1e-9 * max(T, 1.0):
            raise DomainError(f"dt={dt} does not divide T={T}")
        self.kern = StepKernel(model, eps, dt, noise=noise)
        self.with_averaged = with_averaged
        self.fbar = _resolve_fbar(model, fbar) if with_averaged else None
        n = model.n
        self.x = np.zeros((M, n)) if x0 is None else np.broadcast_to(x0, (M, n)).copy()
        self.y = np.zeros((M, n)) if y0 is None else np.broadcast_to(y0, (M, n)).copy()
        self.xbar = self.x.copy()
        self.k = 0
        self.w1_seq = w1_seq
        self.w2_seq = w2_seq
        # drawing at a wider width and slicing lets runs at different
        # truncation levels consume identical noise (common random numbers)
        self.draw_width = draw_width or n

    def _draw(self, seq):
        n = self.model.n
        if seq is not None:
            return np.ascontiguousarray(seq[self.k][:, :n])
        return self.rng.standard_normal((self.M, self.draw_width))[:, :n]

    def step(self):
        w1 = self._draw(self.w1_seq)
        w2 = self._draw(self.w2_seq)
        self.x, self.y = self.kern.coupled(self.x, self.y, w1, w2)
        if self.with_averaged:
            self.xbar = self.kern.averaged(self.xbar, self.fbar(self.xbar), w1)
        self.k += 1

    def run(self, observers=()):
        """Advance to T, calling each observer(ensemble) after every step
        (and once at the start for step 0)."""
        for obs in observers:
            obs(self)
        while self.k < self.steps:
            self.step()
            for obs in observers:
                obs(self)
        return self

    @property
    def t(self) -> float:
        return self.k * self.dt

    def z(self) -> np.ndarray:
        """Deviation field (X - Xbar)/sqrt(eps), shape (M, n)."""
        return (self.x - self.xbar) / np.sqrt(self.eps)
