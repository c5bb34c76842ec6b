"""
Built-in systems.

Each factory returns a :class:`~sddeflow.solver.SystemSpec` whose ``meta``
records the domain it is expected to leave invariant, whether its noise is
diagonal, and whether its drift is quasimonotone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domains import DomainSpec
from .flow import DiffusionSpec, DriftSpec, Interpretation
from .solver import SystemSpec, zero_H


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability weights on lags in ``[-r, 0]``; ``L eta = sum_l w_l eta(lag_l)``."""

    lags: tuple
    weights: tuple

    def __post_init__(self):
        lags = np.atleast_1d(np.asarray(self.lags, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if lags.shape != w.shape:
            raise ValueError("lags and weights must have the same length")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(lags > 0):
            raise ValueError("lags must be <= 0")
        object.__setattr__(self, "lags", tuple(lags.tolist()))
        object.__setattr__(self, "weights", tuple(w.tolist()))

    @classmethod
    def point(cls, lag: float) -> "DiscreteMeasure":
        return cls((lag,), (1.0,))

    @property
    def span(self) -> float:
        return -min(self.lags)

    def apply(self, seg, coord: int) -> np.ndarray:
        """``L`` applied to coordinate `coord` of a (batched) segment."""
        vals = seg.at(np.asarray(self.lags))[..., coord]
        w = np.asarray(self.weights).reshape((-1,) + (1,) * (vals.ndim - 1))
        return np.sum(w * vals, axis=0)


def _measure(m) -> DiscreteMeasure:
    return DiscreteMeasure(**m) if isinstance(m, dict) else m


# -- Lotka--Volterra on the simplex --------------------------------------------------

def lv_simplex(alpha=(1.0, 1.0), b=(1.0, 1.0), sigma=(0.3, 0.3), delay: float = 1.0) -> SystemSpec:
    """``dx^i = -alpha_i x^i (1 - <b, x(t-r)>) dt + sigma_i x^i (1 - <b, x>) dW_i``."""
    alpha, b, sigma = (np.asarray(v, dtype=float) for v in (alpha, b, sigma))
    d = alpha.size

    def H(t, seg):
        lag = seg.at(-seg.delay)
        return -alpha * seg.now * (1.0 - lag @ b)[..., None]

    def sig(x):
        out = np.zeros(x.shape + (d,))
        idx = np.arange(d)
        out[..., idx, idx] = sigma * x * (1.0 - x @ b)[..., None]
        return out

    def dsig(x):
        out = np.zeros(x.shape[:-1] + (d, d, d))
        s = (1.0 - x @ b)[..., None]
        for i in range(d):
            out[..., i, i, :] = -sigma[i] * x[..., i:i + 1] * b
            out[..., i, i, i] += sigma[i] * s[..., 0]
        return out

    diff = DiffusionSpec(d, sig, dsig, diagonal=False, labels="sigma_i x_i (1 - <b,x>)")
    return SystemSpec(d, delay, H, DriftSpec.zero(), diff, "lv-simplex",
                      meta={"domain": DomainSpec.simplex(b), "diagonal": False,
                            "quasimonotone": False,
                            "params": {"alpha": alpha, "b": b, "sigma": sigma, "delay": delay}})


# -- Lotka--Volterra on a box with envelopes -----------------------------------------

@dataclass(frozen=True, eq=False)
class LVParams:
    alpha: np.ndarray
    beta: np.ndarray
    c: np.ndarray
    R: np.ndarray
    sigma: np.ndarray
    delay: float = 1.0
    mu: object = None  # DiscreteMeasure, or d x d nested list of them

    def __post_init__(self):
        for name in ("alpha", "beta", "R", "sigma"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        d = self.alpha.size
        c = np.asarray(self.c, dtype=float)
        if c.ndim == 0:
            c = np.full((d, d), float(c))
        object.__setattr__(self, "c", c)
        if self.mu is None:
            object.__setattr__(self, "mu", DiscreteMeasure.point(-self.delay))
        elif isinstance(self.mu, dict):
            object.__setattr__(self, "mu", DiscreteMeasure(**self.mu))
        elif isinstance(self.mu, (list, tuple)):
            object.__setattr__(self, "mu", [[_measure(x) for x in row] for row in self.mu])
        if np.any(self.alpha <= 0) or np.any(self.beta <= 0) or np.any(self.R <= 0):
            raise ValueError("alpha, beta and R must be positive")
        if np.any(self.R * self.beta < 1.0 - 1e-12):
            raise ValueError("need R_i >= 1 / beta_i")
        if c.shape != (d, d) or np.any(c < 0):
            raise ValueError("c must be a nonnegative d x d matrix")
        for m in self.measures():
            if m.span > self.delay + 1e-12:
                raise ValueError("measure support exceeds the delay")

    @property
    def dim(self) -> int:
        return self.alpha.size

    def measure(self, i, j) -> DiscreteMeasure:
        if isinstance(self.mu, DiscreteMeasure):
            return self.mu
        return self.mu[i][j]

    def measures(self):
        d = self.dim
        return [self.measure(i, j) for i in range(d) for j in range(d)]


def _lv_diffusion(p: LVParams) -> DiffusionSpec:
    return DiffusionSpec.diagonal_from(
        lambda x: p.sigma * x * (p.R - x),
        lambda x: p.sigma * (p.R - 2.0 * x),
        labels="sigma_i x (R_i - x)").with_dim(p.dim)


def lv_box(p: LVParams) -> SystemSpec:
    """Delayed competitive Lotka--Volterra system with box-shaped invariant domain."""
    d = p.dim

    def H(t, seg):
        x0 = seg.now
        inter = np.zeros_like(x0)
        for i in range(d):
            acc = 0.0
            for j in range(d):
                if p.c[i, j]:
                    acc = acc + p.c[i, j] * p.measure(i, j).apply(seg, j)
            inter[..., i] = acc
        return p.alpha * x0 * (1.0 - p.beta * x0 - inter)

    return SystemSpec(d, p.delay, H, DriftSpec.zero(), _lv_diffusion(p), "lv-box",
                      meta={"domain": DomainSpec.box(np.zeros(d), p.R), "diagonal": True,
                            "quasimonotone": bool(not np.any(p.c)), "params": p})


def lv_lower(p: LVParams) -> SystemSpec:
    """Quasimonotone lower envelope: the interaction replaced by its maximum."""
    k = p.c @ p.R

    def H(t, seg):
        x0 = seg.now
        return p.alpha * x0 * (1.0 - p.beta * x0 - k)

    return SystemSpec(p.dim, p.delay, H, DriftSpec.zero(), _lv_diffusion(p), "lv-lower",
                      meta={"domain": DomainSpec.box(np.zeros(p.dim), p.R), "diagonal": True,
                            "quasimonotone": True})


def lv_upper(p: LVParams) -> SystemSpec:
    """Quasimonotone upper envelope: interaction dropped."""
    def H(t, seg):
        x0 = seg.now
        return p.alpha * x0 * (1.0 - p.beta * x0)

    return SystemSpec(p.dim, p.delay, H, DriftSpec.zero(), _lv_diffusion(p), "lv-upper",
                      meta={"domain": DomainSpec.box(np.zeros(p.dim), p.R), "diagonal": True,
                            "quasimonotone": True})


# -- biochemical control circuit ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BiochemParams:
    """Cyclic feedback circuit.

    Coordinate 1 is driven by ``g(L_d x^d)``, coordinate ``j`` by
    ``L_{j-1} x^{j-1}``.  ``measures[j]`` is the measure applied to coordinate
    ``j`` (0-based).  ``g`` must satisfy ``0 < g(u) <= a u + b_const`` and be
    nondecreasing; the default is ``b_const (1 + u) / (2 + u)`` on ``u >= 0``.
    """

    alpha: np.ndarray
    sigma: np.ndarray
    b_const: float = 1.0
    a: float = 0.0
    g: object = None
    measures: tuple = ()

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)
        d = alpha.size
        if sigma.shape != alpha.shape:
            raise ValueError("alpha and sigma must have the same length")
        if np.any(alpha <= 0) or np.any(sigma < 0):
            raise ValueError("need alpha > 0 and sigma >= 0")
        if not self.measures:
            object.__setattr__(self, "measures", tuple(DiscreteMeasure.point(-1.0)
                                                       for _ in range(d)))
        object.__setattr__(self, "measures", tuple(_measure(m) for m in self.measures))
        if len(self.measures) != d:
            raise ValueError("one measure per coordinate")
        if self.g is None:
            bc = self.b_const
            object.__setattr__(self, "g", lambda u: bc * (1.0 + np.maximum(u, 0.0))
                               / (2.0 + np.maximum(u, 0.0)))
        u = np.linspace(0.0, 50.0, 201)
        gv = np.asarray(self.g(u), dtype=float) * np.ones_like(u)
        if np.any(np.diff(gv) < -1e-12):
            raise ValueError("g must be nondecreasing")
        if np.any(gv > self.a * u + self.b_const + 1e-12) or np.any(gv < 0):
            raise ValueError("need 0 <= g(u) <= a u + b_const")

    @property
    def dim(self) -> int:
        return self.alpha.size

    @property
    def delay(self) -> float:
        return max(m.span for m in self.measures)

    def affine(self) -> "BiochemParams":
        """The affine majorant ``g(u) = a u + b_const``."""
        a, bc = self.a, self.b_const
        return BiochemParams(self.alpha, self.sigma, bc, a, lambda u: a * u + bc + 0 * u,
                             self.measures)


def biochem(p: BiochemParams, delay: float | None = None) -> SystemSpec:
    """Stratonovich circuit ``dx^j = (input_j - alpha_j x^j) dt + sigma_j x^j o dW_j``."""
    d = p.dim
    r = p.delay if delay is None else delay
    if r <= 0:
        r = 1.0

    def H(t, seg):
        out = np.empty(seg.samples.shape[1:])
        out[..., 0] = p.g(p.measures[d - 1].apply(seg, d - 1))
        for j in range(1, d):
            out[..., j] = p.measures[j - 1].apply(seg, j - 1)
        return out

    drift = DriftSpec.linear(-p.alpha, Interpretation.STRATONOVICH)
    return SystemSpec(d, r, H, drift, DiffusionSpec.linear(p.sigma), "biochem",
                      meta={"domain": DomainSpec.orthant(d), "diagonal": True,
                            "quasimonotone": True, "params": p})


# -- scalar delay equation with monotone feedback -------------------------------------

def scalar_delay(decay: float = 2.0, feedback: float = 0.5, noise_base: float = 0.2,
                 noise_mod: float = 0.1, delay: float = 1.0) -> SystemSpec:
    """``dx = (-decay x + feedback tanh(x(t-1))) dt + (base + mod tanh x) dW``."""

    def H(t, seg):
        return feedback * np.tanh(seg.at(-seg.delay))

    b = DriftSpec(lambda t, x: -decay * x,
                  lambda t, x: np.full(x.shape + (1,), -decay), kind="general",
                  diagonal=True)
    diff = DiffusionSpec.diagonal_from(lambda x: noise_base + noise_mod * np.tanh(x),
                                       lambda x: noise_mod / np.cosh(x) ** 2,
                                       labels="base + mod tanh(x)").with_dim(1)
    return SystemSpec(1, delay, H, b, diff, "scalar-delay",
                      meta={"domain": None, "sample_box": (-3.0, 3.0), "diagonal": True,
                            "quasimonotone": True,
                            "params": {"decay": decay, "feedback": feedback,
                                       "noise_base": noise_base, "noise_mod": noise_mod}})


# -- Kolmogorov form on the orthant ---------------------------------------------------

def kolmogorov(growth=(1.0, 0.8), coupling: float = 0.5, noise=((0.3, 0.1), (0.1, 0.3)),
               delay: float = 1.0) -> SystemSpec:
    """``dx^i = x^i f^i(x_t) dt + x^i sum_j s_ij / sqrt(1 + |x|^2) dW_j``.

    ``f^i(eta) = growth_i - eta^i(0) - coupling * eta^{i+1}(-r)`` (cyclic).
    """
    growth = np.asarray(growth, dtype=float)
    S = np.asarray(noise, dtype=float)
    d = growth.size

    def H(t, seg):
        x0 = seg.now
        lag = np.roll(seg.at(-seg.delay), -1, axis=-1)
        return x0 * (growth - x0 - coupling * lag)

    def sig(x):
        q = 1.0 / np.sqrt(1.0 + np.sum(x * x, axis=-1))
        return x[..., :, None] * S * q[..., None, None]

    diff = DiffusionSpec(S.shape[1], sig, None, diagonal=False, labels="x_i s_ij / sqrt(1+|x|^2)")
    return SystemSpec(d, delay, H, DriftSpec.zero(), diff, "kolmogorov",
                      meta={"domain": DomainSpec.orthant(d), "diagonal": False,
                            "quasimonotone": False,
                            "params": {"growth": growth, "coupling": coupling, "noise": S}})


# -- cooperative system with distributed delays ---------------------------------------

def cooperative(delays=(0.5, 1.0), coupling: float = 0.5, feedback: float = 0.3) -> SystemSpec:
    """``dx^i = (g0^i(x) + g1^i(x^1(t-r_1), x^2(t-r_2))) dt + m(x^i) dW_i`` with
    ``g0^i = -x^i + coupling tanh(x^{other})`` and monotone
    ``g1^i = feedback tanh(y^1 + y^2)``."""
    r1, r2 = delays
    r = max(delays)

    def H(t, seg):
        x0 = seg.now
        y = np.stack([seg.at(-r1)[..., 0], seg.at(-r2)[..., 1]], axis=-1)
        g0 = -x0 + coupling * np.tanh(x0[..., ::-1])
        g1 = feedback * np.tanh(y.sum(axis=-1, keepdims=True))
        return g0 + g1

    diff = DiffusionSpec.diagonal_from(lambda x: 0.1 + 0.2 / (1.0 + x * x),
                                       lambda x: -0.4 * x / (1.0 + x * x) ** 2,
                                       labels="0.1 + 0.2/(1+x^2)").with_dim(2)
    return SystemSpec(2, r, H, DriftSpec.zero(), diff, "cooperative",
                      meta={"domain": None, "sample_box": (-2.0, 2.0), "diagonal": True,
                            "quasimonotone": True,
                            "params": {"delays": delays, "coupling": coupling,
                                       "feedback": feedback}})


def frozen(d: int = 1, delay: float = 1.0) -> SystemSpec:
    """All coefficients zero."""
    return SystemSpec(d, delay, zero_H, DriftSpec.zero(), DiffusionSpec.zero(d), "frozen",
                      meta={"domain": None, "sample_box": (-2.0, 2.0), "diagonal": True,
                            "quasimonotone": True})


def default_lv_params() -> LVParams:
    return LVParams(alpha=(1.0, 1.0), beta=(1.0, 1.0), c=0.2, R=(2.0, 2.0), sigma=(0.2, 0.2),
                    delay=1.0,
                    mu=DiscreteMeasure((-1.0, -0.5, 0.0), (0.5, 0.25, 0.25)))


def default_biochem_params() -> BiochemParams:
    return BiochemParams(alpha=(1.0, 1.0, 1.0), sigma=(0.2, 0.2, 0.2), b_const=1.0,
                         measures=(DiscreteMeasure((-1.0, -0.5), (0.5, 0.5)),
                                   DiscreteMeasure.point(-0.5),
                                   DiscreteMeasure((-1.0, 0.0), (0.5, 0.5))))


BUILTINS = {
    "biochem": {
        "factory": lambda **kw: biochem(BiochemParams(**kw) if kw else default_biochem_params()),
        "domain": "ORTHANT", "diagonal": True, "quasimonotone": True,
        "schema": {"alpha": "list[float] > 0", "sigma": "list[float] >= 0",
                   "b_const": "float > 0", "a": "float >= 0"},
    },
    "cooperative": {
        "factory": lambda **kw: cooperative(**kw),
        "domain": "none (R^2)", "diagonal": True, "quasimonotone": True,
        "schema": {"delays": "[float, float]", "coupling": "float >= 0",
                   "feedback": "float >= 0"},
    },
    "kolmogorov": {
        "factory": lambda **kw: kolmogorov(**kw),
        "domain": "ORTHANT", "diagonal": False, "quasimonotone": False,
        "schema": {"growth": "list[float]", "coupling": "float", "noise": "matrix d x m",
                   "delay": "float > 0"},
    },
    "lv-box": {
        "factory": lambda **kw: lv_box(LVParams(**kw) if kw else default_lv_params()),
        "domain": "BOX [0, R]", "diagonal": True, "quasimonotone": False,
        "schema": {"alpha": "list[float] > 0", "beta": "list[float] > 0",
                   "c": "float or matrix >= 0", "R": "list[float] >= 1/beta",
                   "sigma": "list[float]", "delay": "float > 0"},
    },
    "lv-simplex": {
        "factory": lambda **kw: lv_simplex(**kw),
        "domain": "POLYHEDRON simplex <b,x> <= 1", "diagonal": False, "quasimonotone": False,
        "schema": {"alpha": "list[float] >= 0", "b": "list[float] >= 0",
                   "sigma": "list[float]", "delay": "float > 0"},
    },
    "scalar-delay": {
        "factory": lambda **kw: scalar_delay(**kw),
        "domain": "none (R)", "diagonal": True, "quasimonotone": True,
        "schema": {"decay": "float", "feedback": "float >= 0", "noise_base": "float > 0",
                   "noise_mod": "float", "delay": "float > 0"},
    },
}


def builtin(name: str, **params) -> SystemSpec:
    try:
        entry = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown built-in system {name!r}; known: {sorted(BUILTINS)}") from None
    return entry["factory"](**params)
