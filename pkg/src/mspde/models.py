"""Reaction maps and benchmark model definitions.

Two reference benchmarks:

* ``linear_bench`` -- fully solvable.  The slow drift is an affine map with a
  diagonal coupling to the fast modes, the fast drift is linear in the slow
  variable only, so the frozen dynamics are an exact OU process and the
  averaged drift, the corrector, and the limit diffusion all have closed
  forms (attached to the model as ``closed_form``).
* ``nemytskii_bench`` -- pointwise (composition) nonlinearities evaluated
  pseudo-spectrally: transform coefficients to an m-point sine grid
  (m >= 2n for anti-aliasing), apply the scalar map, transform back,
  truncate.  Both maps are bounded with bounded derivatives.

Reaction maps operate on raw coefficient arrays and broadcast over leading
ensemble axes; `evaluate_fields` wraps single SpectralField arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.fft import dst

from .errors import DimensionMismatchError, DomainError
from .spectral import (
    NoiseSpectrum,
    OperatorSpectrum,
    SpectralField,
    power_law_noise,
    power_law_operator,
    reference_spectra,
)

__all__ = [
    "ReactionMap",
    "LinearClosedForm",
    "ModelSpec",
    "linear_bench",
    "nemytskii_bench",
    "holder_bench",
    "build_model",
    "SineGrid",
]


@dataclass
class ReactionMap:
    """A reaction coefficient with its regularity metadata.

    `evaluate(x, y)` takes coefficient arrays of shape (..., n) and returns
    the same shape.  Jacobians are optional directional derivatives
    `(x, y, h) -> D_x F(x,y).h`; consumers must accept the central
    finite-difference fallback when they are None.
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian_x: Optional[Callable] = None
    jacobian_y: Optional[Callable] = None
    growth_degree: int = 1
    holder_eta: float = 1.0
    lipschitz: bool = True
    growth_const: float = 10.0
    bound: Optional[float] = None  # L2-norm bound when the map is bounded

    def evaluate_fields(self, x: SpectralField, y: SpectralField) -> SpectralField:
        return SpectralField(self.evaluate(x.coeffs, y.coeffs), x.space)

    def dx(self, x, y, h, fd_step: float = 1e-4):
        """Directional x-derivative, finite differences if no jacobian given."""
        if self.jacobian_x is not None:
            return self.jacobian_x(x, y, h)
        return (self.evaluate(x + fd_step * h, y) - self.evaluate(x - fd_step * h, y)) / (2 * fd_step)

    def dy(self, x, y, k, fd_step: float = 1e-4):
        if self.jacobian_y is not None:
            return self.jacobian_y(x, y, k)
        return (self.evaluate(x, y + fd_step * k) - self.evaluate(x, y - fd_step * k)) / (2 * fd_step)


@dataclass
class LinearClosedForm:
    """Closed-form objects available for the solvable benchmark."""

    frozen_mean: Callable[[np.ndarray], np.ndarray]     # m(x) = (Kx)/beta
    frozen_var: np.ndarray                              # lambda_2 / (2 beta)
    fbar: Callable[[np.ndarray], np.ndarray]
    dx_fbar: Callable[[np.ndarray, np.ndarray], np.ndarray]
    delta_f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]           # x -> (n, n) matrix


@dataclass
class ModelSpec:
    """Operators, noises and reaction maps at one Galerkin level."""

    opA: OperatorSpectrum
    opB: OperatorSpectrum
    q1: NoiseSpectrum
    q2: NoiseSpectrum
    F: ReactionMap
    G: ReactionMap
    n: int
    name: str = "custom"
    params: dict = field(default_factory=dict)
    closed_form: Optional[LinearClosedForm] = None
    warnings: tuple = ()

    def __post_init__(self):
        levels = {self.opA.n, self.opB.n, self.q1.n, self.q2.n}
        if levels != {self.n}:
            raise DimensionMismatchError(
                f"all truncations must equal n={self.n}, got {sorted(levels)}"
            )


# ---------------------------------------------------------------------------
# solvable benchmark


def linear_bench(
    n: int,
    c=None,
    K=None,
    f0=None,
    spectra=None,
) -> ModelSpec:
    """Affine benchmark: F = f0 - x/2 + c_k <y,e_k> e_k, G = Kx.

    The frozen process is an exact OU with stationary mean (Kx)_k/beta_k and
    variance lambda_k/(2 beta_k); averaged drift, corrector and limit
    diffusion are closed-form.  `c` may be shorter than n (padded with 0).
    """
    opA, opB, q1, q2 = spectra if spectra is not None else reference_spectra(n)
    # longer inputs are projected to the first n modes so the same parameter
    # set rebuilds consistently at any Galerkin level
    cvec = np.zeros(n)
    if c is not None:
        c = np.atleast_1d(np.asarray(c, dtype=float))[:n]
        cvec[: c.size] = c
    Kmat = np.zeros((n, n))
    if K is not None:
        K = np.asarray(K, dtype=float)
        if K.ndim != 2:
            raise DimensionMismatchError("K must be a matrix")
        kn = min(n, K.shape[0]), min(n, K.shape[1])
        Kmat[: kn[0], : kn[1]] = K[: kn[0], : kn[1]]
    f0vec = np.zeros(n)
    if f0 is not None:
        f0 = np.asarray(f0, dtype=float)[:n]
        f0vec[: f0.size] = f0

    beta = opB.eigenvalues
    lam2 = q2.variances

    def F_eval(x, y):
        return f0vec - 0.5 * x + cvec * y

    def G_eval(x, y):
        return x @ Kmat.T

    F = ReactionMap(
        evaluate=F_eval,
        jacobian_x=lambda x, y, h: -0.5 * h,
        jacobian_y=lambda x, y, k: cvec * k,
        growth_degree=1,
        growth_const=float(np.linalg.norm(f0vec) + 0.5 + np.max(np.abs(cvec), initial=0.0)),
    )
    G = ReactionMap(
        evaluate=G_eval,
        jacobian_x=lambda x, y, h: h @ Kmat.T,
        jacobian_y=lambda x, y, k: np.zeros_like(k),
        growth_degree=1,
        growth_const=float(np.linalg.norm(Kmat, 2)) + 1e-12,
    )

    def frozen_mean(x):
        return (x @ Kmat.T) / beta

    frozen_var = lam2 / (2.0 * beta)

    def fbar(x):
        return f0vec - 0.5 * x + cvec * frozen_mean(x)

    def dx_fbar(x, h):
        return -0.5 * h + cvec * ((h @ Kmat.T) / beta)

    def delta_f(x, y):
        return cvec * (y - frozen_mean(x))

    def psi(x, y):
        return cvec * (y - frozen_mean(x)) / beta

    sigma_diag = cvec * np.sqrt(lam2) / beta

    def sigma(x):
        return np.diag(sigma_diag)

    cf = LinearClosedForm(frozen_mean, frozen_var, fbar, dx_fbar, delta_f, psi, sigma)
    return ModelSpec(
        opA, opB, q1, q2, F, G, n,
        name="linear",
        params={"c": cvec.tolist(), "f0": f0vec.tolist(), "K": Kmat.tolist()},
        closed_form=cf,
    )


# ---------------------------------------------------------------------------
# pseudo-spectral benchmark


class SineGrid:
    """Discrete sine transform pair on (0, pi) with the orthonormal basis
    sqrt(2/pi) sin(k xi), exact and invertible for up to m modes.

    Small transforms (the desk-scale regime) run as cached matrix products,
    which beats per-call FFT dispatch by an order of magnitude; large ones
    fall back to the fast transform.
    """

    _MATMUL_LIMIT = 512

    def __init__(self, n: int, m: int):
        if m < 2 * n:
            raise DomainError(f"need m >= 2n grid points for anti-aliasing, got m={m}, n={n}")
        self.n = n
        self.m = m
        self.xi = np.pi * np.arange(1, m + 1) / (m + 1)
        if m <= self._MATMUL_LIMIT:
            k = np.arange(1, m + 1)
            basis = np.sin(np.outer(k, self.xi) * 1.0)  # basis[k-1, j-1] = sin(k xi_j)
            self._fwd = np.sqrt(2.0 / np.pi) * basis[: n].T          # coeffs -> values
            self._inv = np.sqrt(2.0 / np.pi) * (np.pi / (m + 1)) * basis[: n]
        else:
            self._fwd = None
            self._inv = None

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients (..., n) -> grid values (..., m)."""
        if self._fwd is not None and coeffs.shape[-1] == self.n:
            return coeffs @ self._fwd.T
        pad = np.zeros(coeffs.shape[:-1] + (self.m,))
        pad[..., : coeffs.shape[-1]] = coeffs
        return np.sqrt(2.0 / np.pi) * 0.5 * dst(pad, type=1, axis=-1)

    def coeffs(self, values: np.ndarray, n: int | None = None) -> np.ndarray:
        """Grid values (..., m) -> first n coefficients."""
        n = self.n if n is None else n
        if self._inv is not None and n <= self.n:
            return (values @ self._inv.T)[..., :n]
        full = np.sqrt(2.0 / np.pi) * (np.pi / (self.m + 1)) * 0.5 * dst(values, type=1, axis=-1)
        return full[..., :n]

    def compose(self, pointwise: Callable, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Apply a scalar map to the grid values of (x, y), truncate to n modes."""
        return self.coeffs(pointwise(self.values(x), self.values(y)))


def nemytskii_bench(n: int, m: int | None = None, spectra=None) -> ModelSpec:
    """Nonlinear benchmark: F = sin(x(.)) + arctan(y(.)), G = tanh(x(.)) (1 + sin(y(.))/2).

    Both maps are bounded with bounded first and second derivatives.  All
    evaluations are pseudo-spectral on an m-point sine grid, m >= 2n.
    """
    m = 2 * n if m is None else m
    opA, opB, q1, q2 = spectra if spectra is not None else reference_spectra(n)
    grid = SineGrid(n, m)

    def F_eval(x, y):
        return grid.compose(lambda xv, yv: np.sin(xv) + np.arctan(yv), x, y)

    def G_eval(x, y):
        return grid.compose(lambda xv, yv: np.tanh(xv) * (1.0 + 0.5 * np.sin(yv)), x, y)

    def F_jx(x, y, h):
        xv = grid.values(x)
        return grid.coeffs(np.cos(xv) * grid.values(h))

    def F_jy(x, y, k):
        yv = grid.values(y)
        return grid.coeffs(grid.values(k) / (1.0 + yv**2))

    def G_jx(x, y, h):
        xv, yv = grid.values(x), grid.values(y)
        return grid.coeffs((1.0 - np.tanh(xv) ** 2) * (1.0 + 0.5 * np.sin(yv)) * grid.values(h))

    def G_jy(x, y, k):
        xv, yv = grid.values(x), grid.values(y)
        return grid.coeffs(np.tanh(xv) * 0.5 * np.cos(yv) * grid.values(k))

    # sup norms on (0, pi): |F| <= 1 + pi/2, |G| <= 3/2; L2 bound = sup * sqrt(pi)
    F = ReactionMap(
        evaluate=F_eval, jacobian_x=F_jx, jacobian_y=F_jy,
        growth_degree=1, growth_const=(1.0 + np.pi / 2) * np.sqrt(np.pi),
        bound=(1.0 + np.pi / 2) * np.sqrt(np.pi),
    )
    G = ReactionMap(
        evaluate=G_eval, jacobian_x=G_jx, jacobian_y=G_jy,
        growth_degree=1, growth_const=1.5 * np.sqrt(np.pi),
        bound=1.5 * np.sqrt(np.pi),
    )
    return ModelSpec(
        opA, opB, q1, q2, F, G, n,
        name="nemytskii", params={"m": m},
    )


def holder_bench(n: int, eta: float = 0.5, c1: float = 1.0, spectra=None) -> ModelSpec:
    """Holder-only coupling |<y,e_1>|^eta sign(<y,e_1>): constructible but
    carries no scheme-convergence guarantee (flagged in `warnings`)."""
    if not 0.0 < eta <= 1.0:
        raise DomainError("eta must lie in (0, 1]")
    opA, opB, q1, q2 = spectra if spectra is not None else reference_spectra(n)
    e1 = np.zeros(n)
    e1[0] = 1.0

    def F_eval(x, y):
        y1 = y[..., :1]
        return -0.5 * x + c1 * np.sign(y1) * np.abs(y1) ** eta * e1

    F = ReactionMap(evaluate=F_eval, growth_degree=1, holder_eta=eta,
                    lipschitz=eta >= 1.0, growth_const=0.5 + abs(c1))
    G = ReactionMap(evaluate=lambda x, y: np.zeros_like(y), growth_degree=1,
                    growth_const=1e-12, bound=1e-12)
    return ModelSpec(
        opA, opB, q1, q2, F, G, n,
        name="holder", params={"eta": eta, "c1": c1},
        warnings=("holder-only coupling: no scheme-convergence guarantee",),
    )


_REGISTRY = {
    "linear": linear_bench,
    "nemytskii": nemytskii_bench,
    "holder": holder_bench,
}


def build_model(name: str, n: int, **params) -> ModelSpec:
    """Benchmark registry used by the config layer; rebuilds at any level."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise DomainError(f"unknown model {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(n, **params)
