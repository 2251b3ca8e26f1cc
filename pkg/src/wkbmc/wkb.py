"""Truncated short-time expansion of the transition density.

In the unit-diffusion coordinates Y = Gamma^{-1} log L the rates follow
dY = b(Y) dt + dW, and the transition density over a step of length dt
is approximated by

    p_l(x, y) = (2 pi dt)^{-n/2} exp(-|y - x|^2 / (2 dt)
                                     + sum_{k=0}^{l} c_k(x, y) dt^k).

The coefficients obey a one-dimensional integral recursion along the
straight segment between the endpoints:

    c_0(x, y)    = sum_i (y_i - x_i) int_0^1 b_i(y + s (x - y)) ds,
    c_{k+1}(x,y) = int_0^1 R_k(y + s (x - y), y) s^k ds,
    R_k(z, y)    = 1/2 sum_{l=0}^{k} grad c_l . grad c_{k-l}
                   + 1/2 lap c_k + b(z) . grad c_k,

with all derivatives in the first argument.  Everything here exists
twice: once generically for an arbitrary smooth drift (quadrature plus
finite differences, used by the toy oracles and cross-checks) and once
in closed form for the Libor drift (used in production, where c_1 is
additionally replaced by its second-order Taylor polynomial around the
anchor so that density evaluation costs no quadrature per sample).

Truncation stops at l = 1; the second-order coefficient would need
third-derivative chains and is not implemented.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm
from scipy.special import expit

from .lmm import VolStructure, drift_mu_y, to_y

__all__ = [
    "FlatDriftModel",
    "constant_drift_model",
    "linear_drift_model",
    "c0_generic",
    "grad_c0_generic",
    "lap_c0_generic",
    "wkb_recursion_rhs",
    "c_next",
    "generic_log_density",
    "linear_drift_exact_log_density",
    "check_flat_transform",
    "FlatTransformReport",
    "libor_c0",
    "libor_c0_grad",
    "libor_c0_hess_diag",
    "libor_c0_lap",
    "libor_r0",
    "libor_c1",
    "libor_c1_taylor2",
    "WkbKernel",
    "make_libor_kernel",
    "wkb_log_density_y",
    "wkb_density_y",
    "wkb_log_density_libor",
    "wkb_density_libor",
    "log_weight_y",
]


def _gauss_legendre_01(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


# ---------------------------------------------------------------------------
# generic drift machinery


@dataclass(frozen=True)
class FlatDriftModel:
    """A drift field on R^n with optional analytic derivatives.

    Attributes
    ----------
    b : callable
        (..., n) -> (..., n) drift values.
    grad : callable or None
        (..., n) -> (..., n, n) with J[i, j] = db_i/dz_j; None means
        identically zero (constant drift).
    lap : callable or None
        (..., n) -> (..., n) componentwise Laplacian of b; None means
        identically zero.
    """

    b: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    lap: Callable[[np.ndarray], np.ndarray] | None = None


def constant_drift_model(b: np.ndarray) -> FlatDriftModel:
    b = np.asarray(b, dtype=np.float64)
    return FlatDriftModel(b=lambda z: np.broadcast_to(b, z.shape).copy())


def linear_drift_model(B: np.ndarray) -> FlatDriftModel:
    B = np.asarray(B, dtype=np.float64)
    return FlatDriftModel(
        b=lambda z: z @ B.T,
        grad=lambda z: np.broadcast_to(B, z.shape + (B.shape[0],)).copy(),
    )


def _segment(x: np.ndarray, y: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Points y + s (x - y) for each node s; node axis inserted at -2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = x - y
    return y[..., None, :] + nodes[:, None] * d[..., None, :]


def c0_generic(model: FlatDriftModel, x: np.ndarray, y: np.ndarray, order: int = 16) -> np.ndarray:
    """Leading coefficient by quadrature: (y - x) . avg of b along the segment."""
    nodes, weights = _gauss_legendre_01(order)
    zs = _segment(x, y, nodes)
    avg = np.einsum("k,...ki->...i", weights, model.b(zs))
    return np.sum((np.asarray(y, dtype=np.float64) - x) * avg, axis=-1)


def grad_c0_generic(model: FlatDriftModel, z: np.ndarray, y: np.ndarray, order: int = 16) -> np.ndarray:
    """Gradient of c_0 in its first argument, by closed quadrature forms.

    d c_0/dz_p = -avg_p + sum_i (y - z)_i int_0^1 s J_ip(y + s (z - y)) ds.
    """
    nodes, weights = _gauss_legendre_01(order)
    zs = _segment(z, y, nodes)
    avg = np.einsum("k,...ki->...i", weights, model.b(zs))
    out = -avg
    if model.grad is not None:
        d = np.asarray(y, dtype=np.float64) - z
        jterm = np.einsum("k,...i,...kip->...p", weights * nodes, d, model.grad(zs))
        out = out + jterm
    return out


def lap_c0_generic(model: FlatDriftModel, z: np.ndarray, y: np.ndarray, order: int = 16) -> np.ndarray:
    """Laplacian of c_0 in its first argument, by closed quadrature forms.

    lap c_0 = -2 int_0^1 s tr J ds + int_0^1 s^2 (y - z) . lap b ds.
    """
    nodes, weights = _gauss_legendre_01(order)
    zs = _segment(z, y, nodes)
    out = np.zeros(np.broadcast_shapes(np.shape(z)[:-1], np.shape(y)[:-1]))
    if model.grad is not None:
        tr = np.trace(model.grad(zs), axis1=-2, axis2=-1)
        out = out - 2.0 * np.einsum("k,...k->...", weights * nodes, tr)
    if model.lap is not None:
        d = np.asarray(y, dtype=np.float64) - z
        out = out + np.einsum("k,...i,...ki->...", weights * nodes**2, d, model.lap(zs))
    return out


class _C0Evaluator:
    """c_0 with its first-argument derivatives, all closed quadrature."""

    def __init__(self, model: FlatDriftModel, order: int):
        self.model = model
        self.order = order

    def value(self, z, y):
        return c0_generic(self.model, z, y, self.order)

    def grad(self, z, y):
        return grad_c0_generic(self.model, z, y, self.order)

    def lap(self, z, y):
        return lap_c0_generic(self.model, z, y, self.order)


class _QuadCoeffEvaluator:
    """c_k for k >= 1 via the recursion integral; derivatives by FD.

    Each evaluation of c_k integrates R_{k-1} along the segment, which
    recursively touches the lower coefficients.  Costs grow quickly
    with k; this path exists for toys and cross-checks, not production.
    """

    def __init__(self, model: FlatDriftModel, k: int, lower: list, order: int, fd_step: float = 1e-5):
        self.model = model
        self.k = k
        self.lower = lower
        self.order = order
        self.fd_step = fd_step

    def value(self, z, y):
        nodes, weights = _gauss_legendre_01(self.order)
        zs = _segment(z, y, nodes)
        ybr = np.broadcast_to(np.asarray(y, dtype=np.float64)[..., None, :], zs.shape)
        rk = wkb_recursion_rhs(self.model, self.k - 1, zs, ybr, self.lower)
        return np.einsum("k,...k->...", weights * nodes ** (self.k - 1), rk)

    def grad(self, z, y):
        z = np.asarray(z, dtype=np.float64)
        out = np.empty(np.broadcast_shapes(z.shape, np.shape(y)))
        for p in range(z.shape[-1]):
            e = np.zeros(z.shape[-1])
            e[p] = self.fd_step
            out[..., p] = (self.value(z + e, y) - self.value(z - e, y)) / (2.0 * self.fd_step)
        return out

    def lap(self, z, y):
        z = np.asarray(z, dtype=np.float64)
        f0 = self.value(z, y)
        acc = np.zeros_like(f0)
        for p in range(z.shape[-1]):
            e = np.zeros(z.shape[-1])
            e[p] = self.fd_step
            acc = acc + (self.value(z + e, y) - 2.0 * f0 + self.value(z - e, y)) / self.fd_step**2
        return acc


def coefficient_evaluators(model: FlatDriftModel, up_to: int, order: int = 16) -> list:
    """Evaluator chain for c_0 .. c_{up_to}."""
    evs: list = [_C0Evaluator(model, order)]
    for k in range(1, up_to + 1):
        evs.append(_QuadCoeffEvaluator(model, k, list(evs), order))
    return evs


def wkb_recursion_rhs(model: FlatDriftModel, k: int, x, y, lower_coeffs) -> np.ndarray:
    """R_k(x, y) given evaluators for c_0 .. c_k.

    R_k = 1/2 sum_{l=0}^{k} grad c_l . grad c_{k-l} + 1/2 lap c_k
          + b(x) . grad c_k, derivatives in the first argument.
    """
    if len(lower_coeffs) < k + 1:
        raise ValueError(f"recursion at k={k} needs {k + 1} coefficient evaluators")
    grads = [lower_coeffs[l].grad(x, y) for l in range(k + 1)]
    out = 0.5 * sum(np.sum(grads[l] * grads[k - l], axis=-1) for l in range(k + 1))
    out = out + 0.5 * lower_coeffs[k].lap(x, y)
    out = out + np.sum(model.b(np.asarray(x, dtype=np.float64)) * grads[k], axis=-1)
    return out


def c_next(model: FlatDriftModel, k: int, x, y, order: int = 16, lower=None) -> np.ndarray:
    """c_{k+1}(x, y) = int_0^1 R_k(y + s (x - y), y) s^k ds."""
    if lower is None:
        lower = coefficient_evaluators(model, k, order)
    nodes, weights = _gauss_legendre_01(order)
    zs = _segment(x, y, nodes)
    ybr = np.broadcast_to(np.asarray(y, dtype=np.float64)[..., None, :], zs.shape)
    rk = wkb_recursion_rhs(model, k, zs, ybr, lower)
    return np.einsum("k,...k->...", weights * nodes**k, rk)


def generic_log_density(
    model: FlatDriftModel,
    level: int,
    x: np.ndarray,
    y: np.ndarray,
    dt: float,
    order: int = 16,
) -> np.ndarray:
    """log p_l for an arbitrary flat-coordinate drift (toy/oracle path).

    c_1 is evaluated exactly by the recursion integral at each (x, y),
    with no Taylor shortcut.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[-1]
    d2 = np.sum((y - x) ** 2, axis=-1)
    phase = c0_generic(model, x, y, order)
    if level >= 1:
        phase = phase + dt * c_next(model, 0, x, y, order)
    if level >= 2:
        raise NotImplementedError("truncation stops at level 1")
    return -0.5 * n * np.log(2.0 * np.pi * dt) - d2 / (2.0 * dt) + phase


def linear_drift_exact_log_density(B: np.ndarray, x: np.ndarray, y: np.ndarray, dt: float) -> np.ndarray:
    """Exact kernel of dZ = B Z dt + dW: Gaussian with mean e^{B dt} x.

    The covariance integral int_0^dt e^{Bu} e^{B^T u} du comes from the
    block-matrix exponential expm([[-B, I], [0, B^T]] dt): with blocks
    F12, F22 of the result, Q = F22^T F12.
    """
    B = np.asarray(B, dtype=np.float64)
    n = B.shape[0]
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -B
    blk[:n, n:] = np.eye(n)
    blk[n:, n:] = B.T
    f = expm(blk * dt)
    q = f[n:, n:].T @ f[:n, n:]
    mean = np.asarray(x, dtype=np.float64) @ expm(B * dt).T
    resid = np.asarray(y, dtype=np.float64) - mean
    sol = np.linalg.solve(q, resid[..., :, None])[..., 0]
    quad = np.sum(resid * sol, axis=-1)
    _, logdet = np.linalg.slogdet(q)
    return -0.5 * (n * np.log(2.0 * np.pi) + logdet + quad)


# ---------------------------------------------------------------------------
# flatness condition for the coordinate change


@dataclass(frozen=True)
class FlatTransformReport:
    max_violation: float
    tol: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol


def check_flat_transform(
    sigma_field: Callable[[np.ndarray], np.ndarray],
    samples: np.ndarray,
    fd_step: float = 1e-6,
    tol: float = 1e-7,
) -> FlatTransformReport:
    """Test whether a state-dependent volatility field admits flat coordinates.

    The condition is sum_l dsigma_ik/dx_l sigma_lj symmetric in (k, j)
    at every sample, with derivatives taken by central differences.  A
    singular sigma at any sample raises, since the coordinate change
    needs sigma^{-1}.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = samples.shape[-1]
    worst = 0.0
    for x in samples:
        sig = np.asarray(sigma_field(x), dtype=np.float64)
        if sig.shape != (n, n):
            raise ValueError(f"sigma field returned shape {sig.shape}, expected {(n, n)}")
        if abs(np.linalg.det(sig)) < 1e-12:
            raise ValueError(f"sigma singular at sample {x!r}")
        d = np.empty((n, n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = fd_step
            d[:, :, l] = (sigma_field(x + e) - sigma_field(x - e)) / (2.0 * fd_step)
        lhs = np.einsum("ikl,lj->ikj", d, sig)
        worst = max(worst, float(np.max(np.abs(lhs - lhs.transpose(0, 2, 1)))))
    return FlatTransformReport(max_violation=worst, tol=tol, samples=samples.shape[0])


# ---------------------------------------------------------------------------
# Libor drift closed forms
#
# With u = (Gamma x)_l and v = (Gamma y)_l (the log-rates at the two
# ends), the segment average of q_l = delta_l e^{(.)}/(1 + delta_l
# e^{(.)}) has the primitive H(.) = log(1 + delta_l e^{(.)}):
#
#   F_l = (H(u) - H(v)) / (u - v)           segment average of q_l,
#   G_l = dF_l/du = (q(u) - F) / w,
#   K_l = d^2F_l/du^2 = (h2(u) - 2 G) / w,     w = u - v,
#
# each switching to a Taylor series around v when |w| is small enough
# that the direct ratio loses precision.  The switch points sit where
# the two branches are about equally accurate (~1e-9 relative for G,
# ~1e-8 for K); K cancels one order harder, so its window is wider.

_FG_SERIES_EPS = 1e-3
_K_SERIES_EPS = 5e-3


def _logistic_chain(t: np.ndarray) -> tuple[np.ndarray, ...]:
    """q and its first four derivatives as polynomials in q."""
    q = expit(t)
    h2 = q * (1.0 - q)
    h3 = h2 * (1.0 - 2.0 * q)
    h4 = h2 * (1.0 - 6.0 * q + 6.0 * q * q)
    h5 = h2 * (1.0 - 14.0 * q + 36.0 * q * q - 24.0 * q**3)
    return q, h2, h3, h4, h5


def _segment_fgk(delta: np.ndarray, u: np.ndarray, v: np.ndarray, want_k: bool):
    """F, G and optionally K for every rate, batched over leading axes."""
    shift = np.log(delta)
    tu = u + shift
    tv = v + shift
    w = u - v
    hu = np.logaddexp(0.0, tu)
    hv = np.logaddexp(0.0, tv)
    qu = expit(tu)
    qv, h2v, h3v, h4v, h5v = _logistic_chain(tv)
    h2u = qu * (1.0 - qu)

    small_f = np.abs(w) < _FG_SERIES_EPS
    wsafe = np.where(small_f, 1.0, w)
    f = np.where(small_f, qv + 0.5 * h2v * w + h3v * w * w / 6.0, (hu - hv) / wsafe)
    g = np.where(
        small_f,
        0.5 * h2v + h3v * w / 3.0 + h4v * w * w / 8.0,
        (qu - f) / wsafe,
    )
    if not want_k:
        return f, g, None
    small_k = np.abs(w) < _K_SERIES_EPS
    wsafe_k = np.where(small_k, 1.0, w)
    k = np.where(
        small_k,
        h3v / 3.0 + h4v * w / 4.0 + h5v * w * w / 10.0,
        (h2u - 2.0 * g) / wsafe_k,
    )
    return f, g, k


def _c0_pieces(vs: VolStructure, delta: np.ndarray, x: np.ndarray, y: np.ndarray, want_k: bool):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    u = x @ vs.gamma.T
    v = y @ vs.gamma.T
    d = y - x
    m = d @ vs.gamma_inv
    f, g, k = _segment_fgk(delta, u, v, want_k)
    return d, m, f, g, k


def libor_c0(vs: VolStructure, delta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Closed-form leading coefficient for the Libor drift, Y-coordinates.

    c_0 = (y - x) . V - sum_j m_j sum_{l>j} a_jl F_l with m = (y - x)
    Gamma^{-1}; this is the generic line integral done analytically.
    """
    d, m, f, _, _ = _c0_pieces(vs, delta, x, y, want_k=False)
    t = f @ vs.a_upper.T
    return d @ vs.y_drift - np.sum(m * t, axis=-1)


def libor_c0_grad(vs: VolStructure, delta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of libor_c0 in the first argument."""
    d, m, f, g, _ = _c0_pieces(vs, delta, x, y, want_k=False)
    t = f @ vs.a_upper.T
    cw = m @ vs.a_upper
    return -vs.y_drift + t @ vs.gamma_inv.T - (cw * g) @ vs.gamma


def libor_c0_hess_diag(vs: VolStructure, delta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Diagonal second derivatives d^2 c_0 / dx_p^2 (closed form)."""
    _, m, _, g, k = _c0_pieces(vs, delta, x, y, want_k=True)
    cw = m @ vs.a_upper
    return 2.0 * (g @ vs.c0_chain.T) - (cw * k) @ (vs.gamma**2)


def libor_c0_lap(vs: VolStructure, delta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Laplacian of c_0 in the first argument.

    The mixed-derivative contributions cancel through Gamma Gamma^{-1},
    leaving -sum_l a_ll cw_l K_l; no mixed terms are ever formed.
    """
    _, m, _, _, k = _c0_pieces(vs, delta, x, y, want_k=True)
    cw = m @ vs.a_upper
    return -(cw * k) @ vs.a_diag


def libor_r0(vs: VolStructure, delta: np.ndarray, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """First recursion right-hand side R_0(z, y) for the Libor drift."""
    grad = libor_c0_grad(vs, delta, z, y)
    lap = libor_c0_lap(vs, delta, z, y)
    b = drift_mu_y(vs, delta, np.asarray(z, dtype=np.float64))
    return 0.5 * np.sum(grad * grad, axis=-1) + 0.5 * lap + np.sum(b * grad, axis=-1)


def libor_c1(
    vs: VolStructure,
    delta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    order: int = 16,
) -> np.ndarray:
    """c_1(x, y) = int_0^1 R_0(y + s (x - y), y) ds by Gauss-Legendre."""
    nodes, weights = _gauss_legendre_01(order)
    zs = _segment(x, y, nodes)
    ybr = np.broadcast_to(np.asarray(y, dtype=np.float64)[..., None, :], zs.shape)
    r0 = libor_r0(vs, delta, zs, ybr)
    return np.einsum("k,...k->...", weights, r0)


def libor_c1_taylor2(
    vs: VolStructure,
    delta: np.ndarray,
    x: np.ndarray,
    order: int = 16,
    rel_step: float = 1e-4,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Second-order Taylor data of y -> c_1(x, y) around y = x.

    Central differences with per-coordinate steps rel_step * max(|x_i|,
    1); every c_1 evaluation needed by the stencil is collected into a
    single batched quadrature call.  Returns (value, gradient, Hessian)
    with the Hessian symmetrized.
    """
    if rel_step < 1e-10:
        raise ValueError(f"relative step {rel_step} is below the quadrature noise floor")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    eps = rel_step * np.maximum(np.abs(x), 1.0)

    points = [x]
    for i in range(n):
        for si in (1.0, -1.0):
            p = x.copy()
            p[i] += si * eps[i]
            points.append(p)
    pair_index = {}
    for i in range(n):
        for j in range(i + 1, n):
            pair_index[(i, j)] = len(points)
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    p = x.copy()
                    p[i] += si * eps[i]
                    p[j] += sj * eps[j]
                    points.append(p)
    ys = np.stack(points)

    vals = libor_c1(vs, delta, np.broadcast_to(x, ys.shape), ys, order)
    f0 = float(vals[0])
    fplus = vals[1 : 1 + 2 * n : 2]
    fminus = vals[2 : 2 + 2 * n : 2]
    grad = (fplus - fminus) / (2.0 * eps)
    hess = np.zeros((n, n))
    hess[np.diag_indices(n)] = (fplus - 2.0 * f0 + fminus) / eps**2
    for (i, j), base in pair_index.items():
        fpp, fpm, fmp, fmm = vals[base : base + 4]
        hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * eps[i] * eps[j])
    hess = 0.5 * (hess + hess.T)
    return f0, grad, hess


# ---------------------------------------------------------------------------
# the anchored kernel


@dataclass(frozen=True)
class WkbKernel:
    """Anchored evaluator of the truncated density.

    The anchor is the kernel's first argument (the simulation start
    state); for level 1 the second-order coefficient is carried as its
    Taylor polynomial around the anchor, precomputed once so that a
    density evaluation is quadrature-free.
    """

    level: int
    vs: VolStructure
    delta: np.ndarray
    anchor_y: np.ndarray
    quad_order: int
    c1_value: float | None = None
    c1_grad: np.ndarray | None = None
    c1_hess: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.anchor_y.shape[0]

    def c1_taylor(self, y: np.ndarray) -> np.ndarray:
        """The quadratic surrogate of c_1(anchor, y)."""
        d = np.asarray(y, dtype=np.float64) - self.anchor_y
        return (
            self.c1_value
            + d @ self.c1_grad
            + 0.5 * np.sum((d @ self.c1_hess) * d, axis=-1)
        )


def make_libor_kernel(
    vs: VolStructure,
    delta: np.ndarray,
    anchor_rates: np.ndarray | None = None,
    anchor_y: np.ndarray | None = None,
    level: int = 1,
    quad_order: int = 16,
) -> WkbKernel:
    """Build the anchored kernel; the anchor may be given in either chart."""
    if level not in (0, 1):
        raise ValueError(f"truncation level must be 0 or 1, got {level}")
    if (anchor_rates is None) == (anchor_y is None):
        raise ValueError("give exactly one of anchor_rates and anchor_y")
    if anchor_y is None:
        anchor_rates = np.asarray(anchor_rates, dtype=np.float64)
        if np.any(anchor_rates <= 0.0):
            raise ValueError("anchor rates must be positive")
        anchor_y = to_y(vs, anchor_rates)
    anchor_y = np.asarray(anchor_y, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    c1v = c1g = c1h = None
    if level == 1:
        c1v, c1g, c1h = libor_c1_taylor2(vs, delta, anchor_y, quad_order)
    return WkbKernel(
        level=level,
        vs=vs,
        delta=delta,
        anchor_y=anchor_y,
        quad_order=quad_order,
        c1_value=c1v,
        c1_grad=c1g,
        c1_hess=c1h,
    )


def wkb_log_density_y(kernel: WkbKernel, s: float, y_from: np.ndarray, t: float, y_to: np.ndarray) -> np.ndarray:
    """log p_l(s, y_from, t, y_to) in flat coordinates.

    ``y_from`` must be the kernel's anchor (the Taylor data is tied to
    it); a mismatch raises rather than silently degrading.
    """
    if t <= s:
        raise ValueError(f"need t > s, got s={s}, t={t}")
    y_from = np.asarray(y_from, dtype=np.float64)
    if y_from.shape != kernel.anchor_y.shape or not np.allclose(y_from, kernel.anchor_y, atol=1e-12, rtol=0.0):
        raise ValueError("kernel is anchored elsewhere; build a kernel at this start state")
    dt = t - s
    y_to = np.asarray(y_to, dtype=np.float64)
    d2 = np.sum((y_to - kernel.anchor_y) ** 2, axis=-1)
    phase = libor_c0(kernel.vs, kernel.delta, kernel.anchor_y, y_to)
    if kernel.level >= 1:
        phase = phase + dt * kernel.c1_taylor(y_to)
    return -0.5 * kernel.n * np.log(2.0 * np.pi * dt) - d2 / (2.0 * dt) + phase


def wkb_density_y(kernel: WkbKernel, s: float, y_from: np.ndarray, t: float, y_to: np.ndarray) -> np.ndarray:
    return np.exp(wkb_log_density_y(kernel, s, y_from, t, y_to))


def wkb_log_density_libor(kernel: WkbKernel, s: float, u: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """log p^L over rate vectors: the flat density plus the chart Jacobian.

    Y = Gamma^{-1} log L is triangular, so |dY/dL| = prod_i Gamma^{-1}_ii / L_i.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(v <= 0.0):
        raise ValueError("rate vectors must be positive")
    flat = wkb_log_density_y(kernel, s, to_y(kernel.vs, u), t, to_y(kernel.vs, v))
    log_jac = -np.sum(np.log(v), axis=-1) - np.sum(np.log(np.diag(kernel.vs.gamma)))
    return flat + log_jac


def wkb_density_libor(kernel: WkbKernel, s: float, u: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    return np.exp(wkb_log_density_libor(kernel, s, u, t, v))


def log_weight_y(kernel: WkbKernel, dt: float, y_to: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """ln(p_l / phi) for a proxy with the same anchor and step.

    In flat coordinates the proxy is N(anchor + kappa, dt I), so the
    normalizations, chart Jacobians and the common |y - anchor|^2 part
    cancel algebraically:

        ln w = (|kappa|^2 - 2 (y - anchor) . kappa) / (2 dt)
               + c_0(anchor, y) + dt c_1~(y).

    Expanding the difference of quadratic forms analytically keeps the
    1/dt terms from ever being formed, so there is no cancellation loss
    for small dt.
    """
    y_to = np.asarray(y_to, dtype=np.float64)
    d = y_to - kernel.anchor_y
    out = (kappa @ kappa - 2.0 * (d @ kappa)) / (2.0 * dt)
    out = out + libor_c0(kernel.vs, kernel.delta, kernel.anchor_y, y_to)
    if kernel.level >= 1:
        out = out + dt * kernel.c1_taylor(y_to)
    return out
