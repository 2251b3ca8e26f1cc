"""One-shot importance-sampled estimators of price and sensitivities.

A single draw from the lognormal proxy replaces pathwise simulation: the
sample is weighted by the ratio of the truncated transition density to
the proxy density.  Sensitivities come from central differences in the
anchor state where the bump moves *everything* -- the sampler, the
kernel, and any outer discount factor -- while the underlying normals
stay fixed.  That re-anchoring is what keeps the variance bounded as
the time step shrinks; the fixed-sampler variant (`naive_delta`) is
kept only to demonstrate the blow-up it suffers.

Also here: the second-moment audit that checks the variance bound the
re-anchored construction satisfies, the iid-lognormal explosion example
with its closed-form variance, and log-Euler reference estimators used
as the validation oracle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mc
from .lmm import ModelConfig, evolve_log_euler, to_y
from .payoffs import SwaptionSpec, report_scale, swaption_payoff, swaption_payoff_grad
from .proxy import (
    LognormalProxy,
    log_density,
    make_proxy,
    sample_g,
)
from .wkb import WkbKernel, log_weight_y, make_libor_kernel, wkb_log_density_libor

__all__ = [
    "McResult",
    "AnchoredPair",
    "anchored_libor_pair",
    "EstimatorInputs",
    "european_inputs",
    "price",
    "delta_fd",
    "naive_delta",
    "gamma_fd",
    "AuditExponents",
    "AuditReport",
    "variance_audit",
    "ExplosionReport",
    "explosion_demo",
    "euler_price",
    "euler_delta_fd",
]


@dataclass(frozen=True)
class McResult:
    """A Monte Carlo estimate with its statistical and weight diagnostics.

    ``sd`` is the population standard deviation of the per-sample values
    divided by sqrt(m): the standard error of ``value``.  ``max_weight``
    and ``ess`` (effective sample size, (sum w)^2 / sum w^2) expose
    importance-weight degeneracy; weights are never clipped, so a bad
    proxy shows up here rather than as silent bias.
    """

    value: float
    sd: float
    m: int
    seed: int
    max_weight: float = 1.0
    ess: float = float("nan")


def _ess(count: int, w_mean: float, w_sd_of_mean: float) -> float:
    pop_var = w_sd_of_mean**2 * count
    denom = pop_var + w_mean**2
    return count * w_mean**2 / denom if denom > 0.0 else float(count)


@dataclass(frozen=True)
class AnchoredPair:
    """Sampler and density evaluators tied to one anchor state.

    ``kernel`` None means the proxy itself is the density model, so the
    importance weights are identically one.
    """

    proxy: LognormalProxy
    kernel: WkbKernel | None = None
    kappa: np.ndarray | None = None

    def draw(self, z: np.ndarray) -> np.ndarray:
        return sample_g(self.proxy, z)

    def log_weight(self, zeta: np.ndarray) -> np.ndarray:
        if self.kernel is None:
            return np.zeros(zeta.shape[:-1])
        y = to_y(self.kernel.vs, zeta)
        return log_weight_y(self.kernel, self.proxy.dt, y, self.kappa)

    def log_kernel(self, zeta: np.ndarray) -> np.ndarray:
        if self.kernel is None:
            return log_density(self.proxy, zeta)
        return wkb_log_density_libor(
            self.kernel, self.proxy.s, self.proxy.anchor, self.proxy.t, zeta
        )

    def log_proxy(self, zeta: np.ndarray) -> np.ndarray:
        return log_density(self.proxy, zeta)


def anchored_libor_pair(cfg: ModelConfig, t: float, level, anchor=None) -> AnchoredPair:
    """Proxy plus (optionally) the truncated kernel, anchored at one state.

    ``level`` is "lgn" for the proxy-only estimator, or 0/1 for the
    truncation order of the kernel.
    """
    anchor = cfg.l0 if anchor is None else np.asarray(anchor, dtype=np.float64)
    p = make_proxy(cfg.vs, cfg.delta, 0.0, t, anchor, cfg.proxy_drift_sign)
    if level == "lgn":
        return AnchoredPair(proxy=p)
    kernel = make_libor_kernel(cfg.vs, cfg.delta, anchor_rates=anchor, level=int(level))
    kappa = p.mean_shift @ cfg.vs.gamma_inv.T
    return AnchoredPair(proxy=p, kernel=kernel, kappa=kappa)


@dataclass(frozen=True)
class EstimatorInputs:
    """Everything an estimator run needs.

    ``anchored`` builds the sampler/kernel pair for any anchor state, so
    the finite-difference estimators can re-anchor both sides of a bump.
    ``scale`` is an optional anchor-dependent outer factor (the deflated
    payoff's conversion to reporting units); its anchor dependence is
    part of what the sensitivity estimators differentiate.
    """

    anchored: Callable[[np.ndarray], AnchoredPair]
    payoff: Callable[[np.ndarray], np.ndarray]
    anchor: np.ndarray
    m: int
    seed: int
    h: float | None = None
    scale: Callable[[np.ndarray], float] | None = None
    payoff_grad: Callable[[np.ndarray], np.ndarray] | None = None

    def outer(self, x: np.ndarray) -> float:
        return 1.0 if self.scale is None else float(self.scale(x))

    def require_h(self) -> float:
        if self.h is None or self.h <= 0.0:
            raise ValueError(f"finite-difference estimators need h > 0, got {self.h}")
        return self.h


def european_inputs(
    cfg: ModelConfig,
    level="lgn",
    m: int = 100_000,
    seed: int = 0,
    h: float | None = None,
    t: float | None = None,
) -> EstimatorInputs:
    """Wire up the single-expiry swaption paying at the first tenor date."""
    spec = SwaptionSpec(strike=cfg.strike, first_leg=1, style=cfg.payoff_style)
    horizon = cfg.t1 if t is None else t
    return EstimatorInputs(
        anchored=lambda x: anchored_libor_pair(cfg, horizon, level, x),
        payoff=lambda L: swaption_payoff(cfg.delta, L, spec),
        anchor=cfg.l0,
        m=m,
        seed=seed,
        h=h,
        scale=lambda x: report_scale(cfg, x),
        payoff_grad=lambda L: swaption_payoff_grad(cfg.delta, L, spec),
    )


def _bumped(x: np.ndarray, i: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= i < x.shape[-1]:
        raise ValueError(f"component {i} outside 0..{x.shape[-1] - 1}")
    up = x.copy()
    dn = x.copy()
    up[i] += h
    dn[i] -= h
    if np.any(dn <= 0.0):
        raise ValueError(f"bump h={h} pushes component {i} of the anchor nonpositive")
    return up, dn


def price(inputs: EstimatorInputs) -> McResult:
    if inputs.m < 2:
        raise ValueError(f"need at least two samples, got {inputs.m}")
    pair = inputs.anchored(inputs.anchor)
    n = inputs.anchor.shape[-1]
    vals = mc.MomentAccumulator()
    wacc = mc.MomentAccumulator()
    for bi, lo, hi in mc.batch_slices(inputs.m):
        z = mc.rng_for(inputs.seed, bi, mc.STREAM_XI).standard_normal((hi - lo, n))
        zeta = pair.draw(z)
        w = np.exp(pair.log_weight(zeta))
        vals.add(bi, w * inputs.payoff(zeta))
        wacc.add(bi, w)
    mean, sd, count, _ = vals.finalize()
    w_mean, w_sd, _, w_max = wacc.finalize()
    s = inputs.outer(inputs.anchor)
    return McResult(
        value=s * mean,
        sd=s * sd,
        m=count,
        seed=inputs.seed,
        max_weight=w_max,
        ess=_ess(count, w_mean, w_sd),
    )


def delta_fd(inputs: EstimatorInputs, i: int) -> McResult:
    """Central difference of the fully re-anchored weighted payoff.

    Both bump anchors see the same underlying normals; sampler, kernel
    and outer scale all move with the bump.
    """
    h = inputs.require_h()
    up, dn = _bumped(inputs.anchor, i, h)
    pair_up = inputs.anchored(up)
    pair_dn = inputs.anchored(dn)
    s_up = inputs.outer(up)
    s_dn = inputs.outer(dn)
    n = inputs.anchor.shape[-1]
    vals = mc.MomentAccumulator()
    wacc = mc.MomentAccumulator()
    for bi, lo, hi in mc.batch_slices(inputs.m):
        z = mc.rng_for(inputs.seed, bi, mc.STREAM_XI).standard_normal((hi - lo, n))
        zeta_up = pair_up.draw(z)
        zeta_dn = pair_dn.draw(z)
        w_up = np.exp(pair_up.log_weight(zeta_up))
        w_dn = np.exp(pair_dn.log_weight(zeta_dn))
        v_up = s_up * w_up * inputs.payoff(zeta_up)
        v_dn = s_dn * w_dn * inputs.payoff(zeta_dn)
        vals.add(bi, (v_up - v_dn) / (2.0 * h))
        wacc.add(bi, np.concatenate([w_up, w_dn]))
    mean, sd, count, _ = vals.finalize()
    w_mean, w_sd, w_count, w_max = wacc.finalize()
    return McResult(
        value=mean,
        sd=sd,
        m=count,
        seed=inputs.seed,
        max_weight=w_max,
        ess=_ess(count, w_mean, w_sd),
    )


def naive_delta(inputs: EstimatorInputs, i: int) -> McResult:
    """Kernel-only differentiation against a sampler that stays put.

    The sample cloud is drawn once from the unbumped anchor; only the
    kernel's anchor argument is differenced.  This is the construction
    whose variance blows up as the step shrinks -- kept as the point of
    comparison, not for production use.
    """
    h = inputs.require_h()
    up, dn = _bumped(inputs.anchor, i, h)
    pair0 = inputs.anchored(inputs.anchor)
    pair_up = inputs.anchored(up)
    pair_dn = inputs.anchored(dn)
    s0 = inputs.outer(inputs.anchor)
    n = inputs.anchor.shape[-1]
    vals = mc.MomentAccumulator()
    for bi, lo, hi in mc.batch_slices(inputs.m):
        z = mc.rng_for(inputs.seed, bi, mc.STREAM_XI).standard_normal((hi - lo, n))
        zeta = pair0.draw(z)
        lphi = pair0.log_proxy(zeta)
        r_up = np.exp(pair_up.log_kernel(zeta) - lphi)
        r_dn = np.exp(pair_dn.log_kernel(zeta) - lphi)
        vals.add(bi, s0 * (r_up - r_dn) / (2.0 * h) * inputs.payoff(zeta))
    mean, sd, count, _ = vals.finalize()
    return McResult(value=mean, sd=sd, m=count, seed=inputs.seed)


def gamma_fd(inputs: EstimatorInputs, i: int, j: int) -> McResult:
    """Second-order sensitivity by nested central differences.

    Diagonal: three-point stencil.  Off-diagonal: four corners.  All
    stencil anchors share the same normals, and every anchor carries its
    own sampler, kernel and scale, exactly as in :func:`delta_fd`.
    """
    h = inputs.require_h()
    x = inputs.anchor
    n = x.shape[-1]
    if i == j:
        up, dn = _bumped(x, i, h)
        anchors = [up, x, dn]
        coeffs = np.array([1.0, -2.0, 1.0]) / h**2
    else:
        up_i, dn_i = _bumped(x, i, h)
        pp, pm = _bumped(up_i, j, h)
        mp, mm = _bumped(dn_i, j, h)
        anchors = [pp, pm, mp, mm]
        coeffs = np.array([1.0, -1.0, -1.0, 1.0]) / (4.0 * h**2)
    pairs = [inputs.anchored(a) for a in anchors]
    scales = [inputs.outer(a) for a in anchors]
    vals = mc.MomentAccumulator()
    for bi, lo, hi in mc.batch_slices(inputs.m):
        z = mc.rng_for(inputs.seed, bi, mc.STREAM_XI).standard_normal((hi - lo, n))
        acc = np.zeros(hi - lo)
        for pair, s, c in zip(pairs, scales, coeffs):
            zeta = pair.draw(z)
            w = np.exp(pair.log_weight(zeta))
            acc = acc + c * s * w * inputs.payoff(zeta)
        vals.add(bi, acc)
    mean, sd, count, _ = vals.finalize()
    return McResult(value=mean, sd=sd, m=count, seed=inputs.seed)


# ---------------------------------------------------------------------------
# second-moment audit


@dataclass(frozen=True)
class AuditExponents:
    """Conjugate-exponent choices for the three bound terms.

    Each tuple must have reciprocals summing to one: term1 pairs the
    weight with the payoff gradient and the sampler Jacobian, term2
    with the payoff and the anchor-gradient mismatch, term3 with the
    payoff, the evaluation-gradient mismatch and the Jacobian.
    """

    term1: tuple[float, ...] = (3.0, 3.0, 3.0)
    term2: tuple[float, ...] = (3.0, 3.0, 3.0)
    term3: tuple[float, ...] = (4.0, 4.0, 4.0, 4.0)

    def validate(self) -> None:
        for name, tup in (("term1", self.term1), ("term2", self.term2), ("term3", self.term3)):
            if any(a <= 1.0 for a in tup):
                raise ValueError(f"{name}: exponents must exceed 1, got {tup}")
            total = sum(1.0 / a for a in tup)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(
                    f"{name}: reciprocals sum to {total}, need exactly 1 (got {tup})"
                )


@dataclass(frozen=True)
class AuditReport:
    """Empirical check of the second-moment bound on the delta sampler.

    ``lhs`` is the mean squared norm of the per-sample anchor gradient
    of the weighted payoff (the thing whose expectation bounds the
    estimator variance); ``rhs`` assembles the three product terms from
    the empirical factor norms in ``norms``.
    """

    lhs: float
    rhs: float
    terms: tuple[float, float, float]
    norms: dict
    m: int
    tol: float = 0.05

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.tol)


def _lp_norm(acc_mean: float, power: float) -> float:
    """(E |X|^p)^(1/p) from an accumulated mean of |X|^p."""
    return acc_mean ** (1.0 / power)


def variance_audit(
    inputs: EstimatorInputs,
    alphas: AuditExponents = AuditExponents(),
    m: int | None = None,
) -> AuditReport:
    """Estimate both sides of the variance bound and assert nothing.

    The report carries the verdict; callers decide what to do with a
    violation.  The outer scale is not part of the bound and is ignored
    here.  Needs ``payoff_grad`` for the gradient factor.  The anchor
    gradients (sampler Jacobian, kernel/proxy mismatch, and the full
    weighted-payoff gradient on the left side) are central differences
    at the production bump size, so the audit checks the bound for the
    estimator actually run, not an idealized limit.
    """
    alphas.validate()
    if inputs.payoff_grad is None:
        raise ValueError("the audit needs an analytic payoff gradient")
    h = inputs.require_h()
    count = inputs.m if m is None else m
    x = inputs.anchor
    n = x.shape[-1]
    pair0 = inputs.anchored(x)
    sides = []
    for i in range(n):
        up, dn = _bumped(x, i, h)
        sides.append((inputs.anchored(up), inputs.anchored(dn)))

    a4_1, a2_1, a3_1 = alphas.term1
    a4_2, a1_2, a5_2 = alphas.term2
    a4_3, a1_3, a6_3, a3_3 = alphas.term3
    powers = {
        "u": sorted({2.0 * a1_2, 2.0 * a1_3}),
        "du": [2.0 * a2_1],
        "jac": sorted({2.0 * a3_1, 2.0 * a3_3}),
        "w": sorted({2.0 * a4_1, 2.0 * a4_2, 2.0 * a4_3}),
        "m5": [2.0 * a5_2],
        "m6": [2.0 * a6_3],
    }
    accs = {"lhs": mc.MomentAccumulator()}
    for kind, plist in powers.items():
        for p in plist:
            accs[f"{kind}@{p:g}"] = mc.MomentAccumulator()

    for bi, lo, hi in mc.batch_slices(count):
        z = mc.rng_for(inputs.seed, bi, mc.STREAM_XI).standard_normal((hi - lo, n))
        zeta = pair0.draw(z)
        w = np.exp(pair0.log_weight(zeta))

        grad_sq = np.zeros(hi - lo)
        jac_sq = np.zeros(hi - lo)
        m5_sq = np.zeros(hi - lo)
        for p_up, p_dn in sides:
            z_up = p_up.draw(z)
            z_dn = p_dn.draw(z)
            w_up = np.exp(p_up.log_weight(z_up))
            w_dn = np.exp(p_dn.log_weight(z_dn))
            d_i = (w_up * inputs.payoff(z_up) - w_dn * inputs.payoff(z_dn)) / (2.0 * h)
            grad_sq = grad_sq + d_i**2
            jac_sq = jac_sq + np.sum(((z_up - z_dn) / (2.0 * h)) ** 2, axis=-1)
            dk = (p_up.log_kernel(zeta) - p_dn.log_kernel(zeta)) / (2.0 * h)
            dp = (p_up.log_proxy(zeta) - p_dn.log_proxy(zeta)) / (2.0 * h)
            m5_sq = m5_sq + (dk - dp) ** 2

        m6_sq = np.zeros(hi - lo)
        for jcomp in range(n):
            step = 1e-6 * np.abs(zeta[:, jcomp])
            z_up = zeta.copy()
            z_dn = zeta.copy()
            z_up[:, jcomp] += step
            z_dn[:, jcomp] -= step
            dk = (pair0.log_kernel(z_up) - pair0.log_kernel(z_dn)) / (2.0 * step)
            dp = (pair0.log_proxy(z_up) - pair0.log_proxy(z_dn)) / (2.0 * step)
            m6_sq = m6_sq + (dk - dp) ** 2

        values = {
            "u": np.abs(inputs.payoff(zeta)),
            "du": np.linalg.norm(inputs.payoff_grad(zeta), axis=-1),
            "jac": np.sqrt(jac_sq),
            "w": w,
            "m5": np.sqrt(m5_sq),
            "m6": np.sqrt(m6_sq),
        }
        accs["lhs"].add(bi, grad_sq)
        for kind, plist in powers.items():
            for p in plist:
                accs[f"{kind}@{p:g}"].add(bi, values[kind] ** p)

    means = {k: acc.finalize()[0] for k, acc in accs.items()}
    lhs = means["lhs"]

    def norm(kind: str, alpha: float) -> float:
        p = 2.0 * alpha
        return _lp_norm(means[f"{kind}@{p:g}"], p)

    term1 = 2.0 * (norm("du", a2_1) * norm("jac", a3_1) * norm("w", a4_1)) ** 2
    term2 = 4.0 * (norm("u", a1_2) * norm("w", a4_2) * norm("m5", a5_2)) ** 2
    term3 = 4.0 * (
        norm("u", a1_3) * norm("jac", a3_3) * norm("w", a4_3) * norm("m6", a6_3)
    ) ** 2
    norms = {
        key: _lp_norm(val, float(key.split("@")[1]))
        for key, val in means.items()
        if key != "lhs"
    }
    return AuditReport(
        lhs=lhs,
        rhs=term1 + term2 + term3,
        terms=(term1, term2, term3),
        norms=norms,
        m=count,
    )


# ---------------------------------------------------------------------------
# the iid-lognormal explosion example


@dataclass(frozen=True)
class ExplosionReport:
    """Fixed-sampler delta variance against its closed form.

    For the product-lognormal model with a constant payoff, the
    fixed-sampler estimator of the j-th sensitivity has mean zero and
    estimator variance |x0|^2 / (x0_j^2 sigma^2 s M) exactly; the
    variance factor 1/(sigma^2 s) is what diverges as the step or the
    volatility shrinks.
    """

    empirical_var: float
    predicted_var: float
    mean: float
    mean_se: float
    m: int

    @property
    def ratio(self) -> float:
        return self.empirical_var / self.predicted_var


def explosion_demo(
    sigma: float, s: float, x0: np.ndarray, m: int, seed: int = 0, j: int = 0
) -> ExplosionReport:
    """Run the fixed-sampler sensitivity on the iid lognormal toy.

    The kernel equals the sampling density, so weights are one and the
    per-sample estimator is norm(x0) * d(log kernel)/dx_j evaluated in
    closed form; its variance factor is measured against 1/(sigma^2 s).
    """
    if sigma <= 0.0 or s <= 0.0:
        raise ValueError(f"need sigma > 0 and s > 0, got sigma={sigma}, s={s}")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1 or np.any(x0 <= 0.0):
        raise ValueError("x0 must be a positive vector")
    if not 0 <= j < x0.shape[0]:
        raise ValueError(f"component {j} outside 0..{x0.shape[0] - 1}")
    c = float(np.linalg.norm(x0))
    var_ln = sigma**2 * s
    acc = mc.MomentAccumulator()
    for bi, lo, hi in mc.batch_slices(m):
        z = mc.rng_for(seed, bi, mc.STREAM_XI).standard_normal((hi - lo, x0.shape[0]))
        zeta = x0 * np.exp(-0.5 * var_ln + sigma * np.sqrt(s) * z)
        # d(log kernel)/dx_j = (log(zeta_j/x_j) + var/2) / (var * x_j)
        score = (np.log(zeta[:, j] / x0[j]) + 0.5 * var_ln) / (var_ln * x0[j])
        acc.add(bi, c * score)
    mean, sd_mean, count, _ = acc.finalize()
    return ExplosionReport(
        empirical_var=sd_mean**2,
        predicted_var=c**2 / (x0[j] ** 2 * var_ln * count),
        mean=mean,
        mean_se=sd_mean,
        m=count,
    )


# ---------------------------------------------------------------------------
# log-Euler reference estimators (the validation oracle)


def _euler_steps(t: float, dt: float) -> int:
    n_steps = int(round(t / dt))
    if n_steps < 1 or abs(n_steps * dt - t) > 1e-9:
        raise ValueError(f"horizon {t} is not a positive multiple of dt={dt}")
    return n_steps


def euler_price(
    cfg: ModelConfig,
    t: float,
    payoff: Callable[[np.ndarray], np.ndarray],
    m: int,
    seed: int,
    dt: float | None = None,
    scale: Callable[[np.ndarray], float] | None = None,
    x: np.ndarray | None = None,
) -> McResult:
    """Fine-grid pathwise reference for the one-date payoff."""
    dt = cfg.dt_euro if dt is None else dt
    n_steps = _euler_steps(t, dt)
    x = cfg.l0 if x is None else np.asarray(x, dtype=np.float64)
    s = 1.0 if scale is None else float(scale(x))
    vals = mc.MomentAccumulator()
    for bi, lo, hi in mc.batch_slices(m):
        rng = mc.rng_for(seed, bi, mc.STREAM_EULER)
        start = np.broadcast_to(x, (hi - lo, cfg.n))
        final, _ = evolve_log_euler(
            cfg,
            start,
            n_steps=n_steps,
            dt=dt,
            normal_source=lambda _: rng.standard_normal((hi - lo, cfg.n)),
        )
        vals.add(bi, s * payoff(final))
    mean, sd, count, _ = vals.finalize()
    return McResult(value=mean, sd=sd, m=count, seed=seed)


def euler_delta_fd(
    cfg: ModelConfig,
    t: float,
    payoff: Callable[[np.ndarray], np.ndarray],
    i: int,
    h: float,
    m: int,
    seed: int,
    dt: float | None = None,
    scale: Callable[[np.ndarray], float] | None = None,
    x: np.ndarray | None = None,
) -> McResult:
    """Pathwise reference delta: bumped starts, common increments."""
    dt = cfg.dt_euro if dt is None else dt
    n_steps = _euler_steps(t, dt)
    x = cfg.l0 if x is None else np.asarray(x, dtype=np.float64)
    up, dn = _bumped(x, i, h)
    s_up = 1.0 if scale is None else float(scale(up))
    s_dn = 1.0 if scale is None else float(scale(dn))
    vals = mc.MomentAccumulator()
    for bi, lo, hi in mc.batch_slices(m):
        rng = mc.rng_for(seed, bi, mc.STREAM_EULER)
        group = [
            np.broadcast_to(up, (hi - lo, cfg.n)),
            np.broadcast_to(dn, (hi - lo, cfg.n)),
        ]
        (f_up, f_dn), _ = evolve_log_euler(
            cfg,
            group,
            n_steps=n_steps,
            dt=dt,
            normal_source=lambda _: rng.standard_normal((hi - lo, cfg.n)),
        )
        vals.add(bi, (s_up * payoff(f_up) - s_dn * payoff(f_dn)) / (2.0 * h))
    mean, sd, count, _ = vals.finalize()
    return McResult(value=mean, sd=sd, m=count, seed=seed)
