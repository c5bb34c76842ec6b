"""
The non-delay stochastic flow ``d psi = b(t, psi) dt + sum_j m_j(psi) dW_j``.

Coefficient callables are vectorized over leading batch axes:

* drift ``b(t, x)`` maps ``(..., d) -> (..., d)``;
* diffusion ``sigma(x)`` maps ``(..., d) -> (..., d, m)`` with entry ``[i, j]``
  equal to ``m^i_j(x)``;
* its derivative ``dsigma(x)`` maps ``(..., d) -> (..., d, m, d)`` with entry
  ``[i, j, k] = d m^i_j / d x_k``.

Missing derivatives are replaced by central differences with step
``1e-5 * (1 + |x|)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import NumericError, RangeError, steps_between
from .noise import BrownianPath

BLOWUP_BOUND = 1e8
FD_REL_STEP = 1e-5
INVERSE_MAX_ITER = 50
INVERSE_TOL = 1e-12


class Interpretation(enum.Enum):
    ITO = "ITO"
    STRATONOVICH = "STRATONOVICH"


def _fd_step(x):
    return FD_REL_STEP * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))


def fd_jacobian(fn, x) -> np.ndarray:
    """Central-difference Jacobian of ``fn: (..., d) -> (..., *out)``.

    The differentiation axis is appended last.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = _fd_step(x)
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        step = h * e
        hk = h[..., 0]
        diff = np.asarray(fn(x + step)) - np.asarray(fn(x - step))
        hk = hk.reshape(hk.shape + (1,) * (diff.ndim - hk.ndim))
        cols.append(diff / (2.0 * hk))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Diffusion coefficients ``m^i_j(x)`` for ``m`` Brownian drivers.

    ``kind`` tags the closed-form families (``zero``, ``additive``, ``linear``);
    ``params`` holds their constants.  ``diagonal`` means ``m == d`` and driver
    ``i`` enters coordinate ``i`` only, through ``x^i`` only.
    """

    m: int
    sigma: Callable
    dsigma: Callable | None = None
    diagonal: bool = False
    kind: str = "general"
    params: dict = field(default_factory=dict)
    labels: str = ""

    def __call__(self, x):
        return self.sigma(np.asarray(x, dtype=float))

    def coeff(self, i: int, j: int, x) -> float:
        return float(self(np.asarray(x, dtype=float))[..., i, j])

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dsigma is not None:
            return self.dsigma(x)
        return fd_jacobian(self.sigma, x)

    # -- constructors ----------------------------------------------------
    @classmethod
    def zero(cls, d: int, m: int | None = None) -> "DiffusionSpec":
        m = d if m is None else m

        def sigma(x):
            return np.zeros(x.shape + (m,))

        def dsigma(x):
            return np.zeros(x.shape + (m, d))

        return cls(m, sigma, dsigma, diagonal=(m == d), kind="zero", labels="zero")

    @classmethod
    def additive(cls, c) -> "DiffusionSpec":
        """Constant coefficients; a vector means diagonal ``c_i dW_i``."""
        c = np.asarray(c, dtype=float)
        diag = c.ndim == 1
        mat = np.diag(c) if diag else c
        d, m = mat.shape

        def sigma(x):
            return np.broadcast_to(mat, x.shape[:-1] + (d, m)).copy()

        def dsigma(x):
            return np.zeros(x.shape[:-1] + (d, m, d))

        return cls(m, sigma, dsigma, diagonal=diag, kind="additive",
                   params={"c": mat}, labels="additive")

    @classmethod
    def linear(cls, sigma) -> "DiffusionSpec":
        """Diagonal linear noise ``sigma_i x^i dW_i``."""
        s = np.asarray(sigma, dtype=float)
        d = s.shape[0]

        def fn(x):
            out = np.zeros(x.shape + (d,))
            idx = np.arange(d)
            out[..., idx, idx] = s * x
            return out

        def dfn(x):
            out = np.zeros(x.shape[:-1] + (d, d, d))
            idx = np.arange(d)
            out[..., idx, idx, idx] = s
            return out

        return cls(d, fn, dfn, diagonal=True, kind="linear",
                   params={"sigma": s}, labels="linear")

    @classmethod
    def diagonal_from(cls, fn, dfn=None, labels: str = "") -> "DiffusionSpec":
        """Diagonal noise ``fn(x)^i dW_i`` where ``fn`` acts coordinate-wise.

        ``fn`` and the optional ``dfn`` map ``(..., d) -> (..., d)``.
        """
        def sigma(x):
            v = np.asarray(fn(x))
            out = np.zeros(v.shape + (v.shape[-1],))
            idx = np.arange(v.shape[-1])
            out[..., idx, idx] = v
            return out

        dsigma = None
        if dfn is not None:
            def dsigma(x):
                v = np.asarray(dfn(x))
                d = v.shape[-1]
                out = np.zeros(v.shape[:-1] + (d, d, d))
                idx = np.arange(d)
                out[..., idx, idx, idx] = v
                return out

        return cls(None, sigma, dsigma, diagonal=True, labels=labels)

    def with_dim(self, d: int) -> "DiffusionSpec":
        return self if self.m is not None else replace(self, m=d)


def check_diagonal(diff: DiffusionSpec, d: int, n_samples: int = 64, seed: int = 0,
                   scale: float = 2.0) -> bool:
    """Sampled check that ``m^i_j`` vanishes off the diagonal and only sees ``x^i``."""
    rng = np.random.default_rng(seed)
    if diff.m is not None and diff.m != d:
        return False
    x = rng.uniform(-scale, scale, (n_samples, d))
    s = diff(x)
    off = s.copy()
    idx = np.arange(d)
    off[..., idx, idx] = 0.0
    if np.any(off != 0.0):
        return False
    for k in range(d):
        y = x.copy()
        y[:, [i for i in range(d) if i != k]] = rng.uniform(-scale, scale, (n_samples, d - 1))
        if not np.allclose(diff(y)[:, k, k], s[:, k, k], rtol=0, atol=1e-14):
            return False
    return True


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """Drift ``b(t, x)``, optionally with its Jacobian ``(t, x) -> (..., d, d)``.

    ``kind`` is ``zero``, ``linear`` (``b^i = rates_i x^i``) or ``general``.
    """

    b: Callable
    jacobian: Callable | None = None
    interpretation: Interpretation = Interpretation.ITO
    kind: str = "general"
    params: dict = field(default_factory=dict)
    diagonal: bool = False
    time_dependent: bool = False

    def __call__(self, t, x):
        return self.b(t, np.asarray(x, dtype=float))

    def jac(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return self.jacobian(t, x)
        return fd_jacobian(lambda y: self.b(t, y), x)

    @classmethod
    def zero(cls, interpretation=Interpretation.ITO) -> "DriftSpec":
        return cls(lambda t, x: np.zeros_like(x),
                   lambda t, x: np.zeros(x.shape + (x.shape[-1],)),
                   interpretation, "zero", diagonal=True)

    @classmethod
    def linear(cls, rates, interpretation=Interpretation.ITO) -> "DriftSpec":
        rates = np.asarray(rates, dtype=float)

        def jac(t, x):
            out = np.zeros(x.shape + (x.shape[-1],))
            idx = np.arange(x.shape[-1])
            out[..., idx, idx] = rates
            return out

        return cls(lambda t, x: rates * x, jac, interpretation, "linear",
                   {"rates": rates}, diagonal=True)


def ito_correction(diff: DiffusionSpec, x) -> np.ndarray:
    """``0.5 * sum_j sum_k m^k_j(x) d m^i_j(x) / d x_k``."""
    x = np.asarray(x, dtype=float)
    s = diff(x)
    ds = diff.derivative(x)
    return 0.5 * np.einsum("...kj,...ijk->...i", s, ds)


def _convert(drift: DriftSpec, diff: DiffusionSpec, sign: float,
             target: Interpretation) -> DriftSpec:
    if drift.interpretation is target:
        return drift
    kind, params, jac = "general", {}, None
    if diff.kind in ("zero", "additive"):
        # no correction for state-independent noise
        return replace(drift, interpretation=target)
    if diff.kind == "linear" and drift.kind in ("zero", "linear"):
        s = diff.params["sigma"]
        base = drift.params.get("rates", np.zeros_like(s))
        out = DriftSpec.linear(base + sign * 0.5 * s * s, target)
        return out

    def b(t, x):
        return drift.b(t, x) + sign * ito_correction(diff, x)

    return DriftSpec(b, jac, target, kind, params, drift.diagonal and diff.diagonal,
                     drift.time_dependent)


def stratonovich_to_ito(drift: DriftSpec, diff: DiffusionSpec) -> DriftSpec:
    """Itô form of a drift: adds the correction for Stratonovich input."""
    return _convert(drift, diff, +1.0, Interpretation.ITO)


def ito_to_stratonovich(drift: DriftSpec, diff: DiffusionSpec) -> DriftSpec:
    return _convert(drift, diff, -1.0, Interpretation.STRATONOVICH)


@dataclass(frozen=True)
class FlowResult:
    point: np.ndarray
    jacobian: np.ndarray
    blowup: object = False

    @property
    def jacobian_matrix(self) -> np.ndarray:
        j = np.asarray(self.jacobian)
        if j.ndim >= 2 and j.shape[-1] == j.shape[-2] == self.point.shape[-1] \
                and j.ndim == self.point.ndim + 1:
            return j
        out = np.zeros(j.shape + (j.shape[-1],))
        idx = np.arange(j.shape[-1])
        out[..., idx, idx] = j
        return out


def noise_term(s: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return (s * dw[..., None, :]).sum(axis=-1)


def euler_update(x, drift_val, s, dw, dt):
    """One Euler--Maruyama update; shared by every solver for bitwise agreement."""
    return x + drift_val * dt + noise_term(s, dw)


def _path_steps(path: BrownianPath, s: float, t: float, dt: float):
    q = steps_between(0.0, dt, path.dt, "solver dt")
    if q < 1:
        raise RangeError("solver dt must be a positive multiple of the path dt")
    n = steps_between(s, t, dt, "end time")
    k0 = steps_between(0.0, s, path.dt, "start time")
    return q, n, k0


def flow_evolve(drift: DriftSpec, diff: DiffusionSpec, path: BrownianPath,
                s: float, t: float, x, dt: float) -> FlowResult:
    """Euler--Maruyama approximation of ``Psi_{s,t}(x)`` and its Jacobian.

    The Jacobian is advanced with the linearized recursion
    ``J <- (I + Db dt + sum_j Dm_j dW_j) J``.  Coordinates leaving the box
    ``|x_i| <= 1e8`` set the blow-up flag and are frozen at NaN.
    """
    if t < s:
        raise RangeError("flow_evolve needs s <= t")
    x = np.array(x, dtype=float)
    d = x.shape[-1]
    diff = diff.with_dim(d)
    ito = stratonovich_to_ito(drift, diff)
    q, n, k0 = _path_steps(path, s, t, dt)
    incs = path.increments_from(s, n, q)
    jac = np.broadcast_to(np.eye(d), x.shape + (d,)).copy()
    blown = np.zeros(x.shape[:-1], dtype=bool)
    eye = np.eye(d)
    for step in range(n):
        tn = (k0 + step * q) * path.dt
        dw = incs[step]
        sv = diff(x)
        a = eye + ito.jac(tn, x) * dt + np.einsum("...ijk,j->...ik", diff.derivative(x), dw)
        x = euler_update(x, ito(tn, x), sv, dw, dt)
        jac = a @ jac
        bad = ~np.all(np.abs(x) <= BLOWUP_BOUND, axis=-1)
        if np.any(bad):
            blown |= bad
            x = np.where(blown[..., None], np.nan, x)
    blow = bool(blown) if blown.ndim == 0 else blown
    if drift.diagonal and diff.diagonal:
        jac = np.diagonal(jac, axis1=-2, axis2=-1).copy()
    return FlowResult(x, jac, blow)


def flow_inverse(drift: DriftSpec, diff: DiffusionSpec, path: BrownianPath,
                 u: float, x, dt: float, to: float = 0.0) -> np.ndarray:
    """``xi(u, x) = Psi_{u, to}(x)`` by inverting Euler steps backwards.

    Each step ``y_{n+1} = y_n + b dt + m(y_n) dW_n`` is solved for ``y_n`` by
    fixed-point iteration, so ``flow_evolve(to -> u)`` applied to the result
    reproduces `x` up to the iteration tolerance.
    """
    x = np.array(x, dtype=float)
    if u <= to:
        return flow_evolve(drift, diff, path, u, to, x, dt).point
    d = x.shape[-1]
    diff = diff.with_dim(d)
    ito = stratonovich_to_ito(drift, diff)
    q, n, k0 = _path_steps(path, to, u, dt)
    incs = path.increments_from(to, n, q)
    y = x
    for step in range(n - 1, -1, -1):
        tn = (k0 + step * q) * path.dt
        dw = incs[step]
        target = y
        z = y
        tol = INVERSE_TOL * (1.0 + np.abs(target))
        for it in range(INVERSE_MAX_ITER):
            z_new = target - ito(tn, z) * dt - noise_term(diff(z), dw)
            done = np.all(np.abs(z_new - z) <= tol)
            z = z_new
            if done:
                break
        else:
            resid = euler_update(z, ito(tn, z), diff(z), dw, dt) - target
            raise NumericError(
                "Euler step inversion did not converge",
                {"step": step, "time": tn, "residual": float(np.max(np.abs(resid))),
                 "iterations": INVERSE_MAX_ITER})
        y = z
    return y


def gbm_flow_exact(sigma, path: BrownianPath, t: float, x, rates=None) -> np.ndarray:
    """Closed-form Stratonovich linear flow ``x^j exp(rates_j t + sigma_j W^j(t))``."""
    return np.asarray(x, dtype=float) * gbm_flow_jacobian(sigma, path, t, rates)


def gbm_flow_jacobian(sigma, path: BrownianPath, t: float, rates=None) -> np.ndarray:
    """Spatial derivative of the linear flow; it does not depend on ``x``."""
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    w = path.values[path.index_of(t)][: sigma.shape[0]]
    expo = sigma * w
    if rates is not None:
        expo = expo + np.asarray(rates, dtype=float) * t
    return np.exp(expo)


class ClosedFormFlow:
    """``Psi_{0,t}``, its Jacobian and inverse for the closed-form families.

    Supported: zero noise with zero drift, additive noise with zero drift, and
    diagonal linear noise with a Stratonovich drift that is zero or linear.
    Methods take the time ``t`` and the driving path value ``w = W(t)``
    (shape ``(..., m)``).
    """

    def __init__(self, drift: DriftSpec, diff: DiffusionSpec, d: int):
        diff = diff.with_dim(d)
        strat = ito_to_stratonovich(drift, diff)
        if diff.kind in ("zero", "additive") and strat.kind == "zero":
            self.family = "additive"
            self.c = diff.params.get("c", np.zeros((d, diff.m)))
        elif diff.kind in ("zero", "linear") and strat.kind in ("zero", "linear"):
            self.family = "linear"
            self.sigma = diff.params.get("sigma", np.zeros(d))
            self.rates = strat.params.get("rates", np.zeros(d))
        else:
            raise UnsupportedSystemError(
                f"no closed-form flow for diffusion kind {diff.kind!r} with "
                f"drift kind {strat.kind!r}")
        self.d = d

    def multiplier(self, t, w) -> np.ndarray:
        """Diagonal Jacobian of the linear family."""
        if not np.any(self.sigma):
            return np.exp(self.rates * t)
        return np.exp(self.rates * t + self.sigma * w[..., : self.d])

    def psi(self, t, w, z):
        if self.family == "additive":
            return z + noise_term(self.c, w)
        return z * self.multiplier(t, w)

    def xi(self, t, w, x):
        if self.family == "additive":
            return x - noise_term(self.c, w)
        return x / self.multiplier(t, w)

    def inv_jac_times(self, t, w, v):
        """``(D_z Psi)^{-1} v``; the Jacobian does not depend on ``z`` here."""
        if self.family == "additive":
            return v
        return v / self.multiplier(t, w)


class UnsupportedSystemError(ValueError):
    """The requested method does not apply to this system."""
