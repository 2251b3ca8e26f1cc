"""Forward-Libor market model under its terminal measure.

The state is a vector of simply compounded forward rates L_1 .. L_n on
a tenor grid T_1 < ... < T_{n+1} with accrual fractions delta_i =
T_{i+1} - T_i.  Deflating by the terminal bond B_{n+1} makes the last
rate a martingale and gives every rate the dynamics

    dL_i / L_i = mu_i(L) dt + gamma_i . dW,
    mu_i(L)    = - sum_{j > i} delta_j L_j a_ij / (1 + delta_j L_j),

where gamma_i is the (constant) volatility vector of rate i and
a_ij = gamma_i . gamma_j.  The module provides:

* the exponentially decaying correlation structure and the square
  factorisation a = Gamma Gamma^T with Gamma upper triangular,
* the terminal-measure drift and a log-Euler step,
* the unit-diffusion coordinates Y = Gamma^{-1} log L in which the
  transition density expansion is carried out,
* a plain-text configuration format for experiment settings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "correlation_matrix",
    "VolStructure",
    "build_vol_structure",
    "ModelConfig",
    "LiborPath",
    "drift_mu",
    "log_euler_step",
    "evolve_log_euler",
    "simulate_path",
    "to_y",
    "from_y",
    "drift_mu_y",
    "load_config",
    "save_config",
    "make_config",
]


def correlation_matrix(n: int, rho_inf: float) -> np.ndarray:
    """Exponentially decaying instantaneous correlation.

    rho_ij = exp(|i - j| / (n - 1) * ln rho_inf), so adjacent rates are
    strongly correlated and the first/last pair has correlation
    ``rho_inf`` exactly.

    Parameters
    ----------
    n : int
        Number of forward rates, at least 2.
    rho_inf : float
        Correlation between the first and last rate.  Must lie strictly
        inside (0, 1); the flat case rho_inf = 1 makes the structure
        rank one and is rejected.
    """
    if n < 2:
        raise ValueError(f"need at least two rates, got n={n}")
    if not (0.0 < rho_inf < 1.0):
        raise ValueError(
            f"rho_inf must lie strictly inside (0, 1), got {rho_inf}; "
            "a perfectly correlated curve has no invertible square root"
        )
    idx = np.arange(n, dtype=np.float64)
    return np.exp(np.abs(idx[:, None] - idx[None, :]) / (n - 1) * np.log(rho_inf))


@dataclass(frozen=True)
class VolStructure:
    """Factorised covariance structure of the log-rates.

    Attributes
    ----------
    vol : ndarray, shape (n,)
        Per-rate volatility norms |gamma_i|.
    corr : ndarray, shape (n, n)
        Instantaneous correlation of the driving noise.
    a : ndarray, shape (n, n)
        Covariance rates a_ij = |gamma_i| |gamma_j| rho_ij.
    gamma : ndarray, shape (n, n)
        Upper-triangular square root, a = gamma gamma^T.  Row i is the
        volatility vector gamma_i of rate i.
    gamma_inv : ndarray, shape (n, n)
        Inverse of gamma (upper triangular as well).
    a_diag : ndarray, shape (n,)
        Diagonal of ``a``, i.e. |gamma_i|^2.
    a_upper : ndarray, shape (n, n)
        ``a`` with everything at or below the diagonal zeroed; the
        drift sum over j > i contracts against this.
    y_drift : ndarray, shape (n,)
        State-independent part of the drift of Y = Gamma^{-1} log L,
        equal to -Gamma^{-1} diag(a) / 2.
    c0_chain : ndarray, shape (n, n)
        Precomputed Gamma^T * (Gamma^{-1} a_upper) elementwise, used by
        the closed-form second derivatives of the leading kernel
        coefficient.
    """

    vol: np.ndarray
    corr: np.ndarray
    a: np.ndarray
    gamma: np.ndarray
    gamma_inv: np.ndarray
    a_diag: np.ndarray
    a_upper: np.ndarray
    y_drift: np.ndarray
    c0_chain: np.ndarray

    @property
    def n(self) -> int:
        return self.vol.shape[0]


def build_vol_structure(vol: np.ndarray, corr: np.ndarray) -> VolStructure:
    """Build the factorised covariance structure.

    The square root is taken upper triangular: reversing the index
    order, taking the ordinary (lower) Cholesky factor, and reversing
    back yields an upper-triangular Gamma with Gamma Gamma^T = a.  The
    last row of Gamma then has a single nonzero entry, which matches
    the terminal rate being driven by one Brownian component only.
    """
    vol = np.atleast_1d(np.asarray(vol, dtype=np.float64))
    corr = np.asarray(corr, dtype=np.float64)
    n = vol.shape[0]
    if corr.shape != (n, n):
        raise ValueError(f"correlation shape {corr.shape} does not match {n} rates")
    if np.any(vol <= 0.0):
        raise ValueError("volatilities must be positive")
    a = np.outer(vol, vol) * corr
    rev = np.linalg.cholesky(a[::-1, ::-1])
    gamma = rev[::-1, ::-1]
    # reversal of a lower-triangular factor is upper triangular
    gamma = np.triu(gamma)
    gamma_inv = solve_triangular(gamma, np.eye(n), lower=False)
    a_upper = np.triu(a, k=1)
    a_diag = np.diag(a).copy()
    y_drift = -0.5 * gamma_inv @ a_diag
    c0_chain = gamma.T * (gamma_inv @ a_upper)
    return VolStructure(
        vol=vol,
        corr=corr,
        a=a,
        gamma=gamma,
        gamma_inv=gamma_inv,
        a_diag=a_diag,
        a_upper=a_upper,
        y_drift=y_drift,
        c0_chain=c0_chain,
    )


@dataclass
class ModelConfig:
    """Model and experiment settings for one maturity.

    Attributes
    ----------
    n : int
        Number of forward rates spanning the swap.
    t1 : float
        First tenor date T_1 (the option maturity), in years.
    delta : ndarray, shape (n,)
        Accrual fractions T_{i+1} - T_i.
    l0 : ndarray, shape (n,)
        Initial forward rates.
    vol : ndarray, shape (n,)
        Volatility norms |gamma_i|.
    rho_inf : float
        First/last correlation of the decaying structure.
    strike : float
        Fixed rate theta of the underlying swap.
    payoff_style : str
        'on_sum' for an option on the deflated swap value, 'per_leg'
        for a sum of per-period options.
    exercise_indices : tuple of int
        1-based tenor indices of the Bermudan exercise dates.
    dt_euro : float
        Log-Euler step for European-maturity oracle runs.
    dt_berm : float
        Log-Euler step used on Bermudan segments.
    proxy_drift_sign : str
        'plus' or 'minus'; sign of the |gamma_i|^2/2 term in the
        lognormal proxy drift (see proxy module).
    """

    n: int
    t1: float
    delta: np.ndarray
    l0: np.ndarray
    vol: np.ndarray
    rho_inf: float
    strike: float
    payoff_style: str = "on_sum"
    exercise_indices: tuple[int, ...] = ()
    dt_euro: float = 0.1
    dt_berm: float = 0.05
    proxy_drift_sign: str = "minus"
    vs: VolStructure = field(init=False, repr=False)
    tenor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.delta = np.broadcast_to(np.asarray(self.delta, dtype=np.float64), (self.n,)).copy()
        self.l0 = np.broadcast_to(np.asarray(self.l0, dtype=np.float64), (self.n,)).copy()
        self.vol = np.broadcast_to(np.asarray(self.vol, dtype=np.float64), (self.n,)).copy()
        if self.payoff_style not in ("on_sum", "per_leg"):
            raise ValueError(f"unknown payoff_style {self.payoff_style!r}")
        if self.proxy_drift_sign not in ("plus", "minus"):
            raise ValueError(f"proxy_drift_sign must be 'plus' or 'minus', got {self.proxy_drift_sign!r}")
        if self.t1 <= 0.0:
            raise ValueError(f"t1 must be positive, got {self.t1}")
        for i in self.exercise_indices:
            if not (1 <= i <= self.n):
                raise ValueError(f"exercise index {i} outside 1..{self.n}")
        self.vs = build_vol_structure(self.vol, correlation_matrix(self.n, self.rho_inf))
        # tenor[k] = T_{k+1}: dates T_1 .. T_{n+1}
        self.tenor = np.concatenate([[self.t1], self.t1 + np.cumsum(self.delta)])

    def tenor_date(self, idx: int) -> float:
        """Date T_idx for a 1-based tenor index (1 .. n+1)."""
        if not (1 <= idx <= self.n + 1):
            raise ValueError(f"tenor index {idx} outside 1..{self.n + 1}")
        return float(self.tenor[idx - 1])

    @property
    def exercise_dates(self) -> np.ndarray:
        return np.array([self.tenor_date(i) for i in self.exercise_indices])


@dataclass
class LiborPath:
    """One simulated trajectory with its driving increments."""

    times: np.ndarray           # (steps + 1,)
    states: np.ndarray          # (steps + 1, n) forward rates
    increments: np.ndarray      # (steps, n) standard normal draws


def drift_mu(vs: VolStructure, delta: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Terminal-measure percentage drift mu_i(L); non-positive.

    Broadcasts over leading axes of ``L``.
    """
    q = delta * L / (1.0 + delta * L)
    return -q @ vs.a_upper.T


def log_euler_step(
    vs: VolStructure,
    delta: np.ndarray,
    k_state: np.ndarray,
    dt: float,
    z: np.ndarray,
) -> np.ndarray:
    """One log-Euler update of K = log L.

    K_i += (mu_i - a_ii / 2) dt + sqrt(dt) (Gamma z)_i with z a matrix
    of independent standard normals, broadcast over leading axes.
    """
    L = np.exp(k_state)
    mu = drift_mu(vs, delta, L)
    return k_state + (mu - 0.5 * vs.a_diag) * dt + np.sqrt(dt) * (z @ vs.gamma.T)


def evolve_log_euler(
    cfg: ModelConfig,
    l_start,
    n_steps: int,
    dt: float,
    normal_source,
    record_steps: tuple[int, ...] = (),
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Evolve a batch (or a CRN group of batches) by ``n_steps`` steps.

    Parameters
    ----------
    l_start : ndarray or list of ndarray
        Either one (B, n) array of rates, or a list of such arrays that
        are advanced with common increments (used for bump-and-revalue
        stencils).
    normal_source : callable
        ``normal_source(step) -> (B, n)`` standard normals.  Called
        once per step in step order regardless of the group size.
    record_steps : tuple of int
        Step counts after which the state is recorded (0 < s <= n_steps).

    Returns
    -------
    final, recorded
        ``final`` mirrors the structure of ``l_start``; ``recorded``
        maps each requested step to the state(s) there.
    """
    single = not isinstance(l_start, (list, tuple))
    group = [l_start] if single else list(l_start)
    ks = [np.log(np.asarray(g, dtype=np.float64)) for g in group]
    wanted = set(record_steps)
    recorded: dict[int, np.ndarray] = {}
    for s in range(n_steps):
        z = normal_source(s)
        ks = [log_euler_step(cfg.vs, cfg.delta, k, dt, z) for k in ks]
        if (s + 1) in wanted:
            states = [np.exp(k) for k in ks]
            recorded[s + 1] = states[0] if single else states
    final = [np.exp(k) for k in ks]
    return (final[0] if single else final), recorded


def simulate_path(
    cfg: ModelConfig,
    x0: np.ndarray,
    t_from: float,
    t_to: float,
    dt: float,
    rng: np.random.Generator,
) -> LiborPath:
    """Reference single-path simulation, storing states and increments."""
    n_steps = int(round((t_to - t_from) / dt))
    if abs(n_steps * dt - (t_to - t_from)) > 1e-9:
        raise ValueError(f"interval [{t_from}, {t_to}] is not a multiple of dt={dt}")
    times = t_from + dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, cfg.n))
    incs = rng.standard_normal((n_steps, cfg.n))
    states[0] = x0
    k = np.log(np.asarray(x0, dtype=np.float64))
    for s in range(n_steps):
        k = log_euler_step(cfg.vs, cfg.delta, k, dt, incs[s])
        states[s + 1] = np.exp(k)
    return LiborPath(times=times, states=states, increments=incs)


def to_y(vs: VolStructure, L: np.ndarray) -> np.ndarray:
    """Map rates to the unit-diffusion coordinates Y = Gamma^{-1} log L."""
    return np.log(L) @ vs.gamma_inv.T


def from_y(vs: VolStructure, Y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_y`."""
    return np.exp(Y @ vs.gamma.T)


def drift_mu_y(vs: VolStructure, delta: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Drift of Y: constant part plus Gamma^{-1} mu(exp(Gamma Y))."""
    L = from_y(vs, Y)
    return vs.y_drift + drift_mu(vs, delta, L) @ vs.gamma_inv.T


# ---------------------------------------------------------------------------
# configuration files: plain "key = value" lines, '#' comments, vectors
# as comma-separated lists, exercise dates as 1-based tenor indices.

_VECTOR_KEYS = ("delta", "l0", "vol")
_SCALAR_FLOAT_KEYS = ("rho_inf", "strike", "dt_euro", "dt_berm")


def load_config(path) -> dict:
    """Read raw settings from a config file into a dict."""
    raw: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key == "n":
            raw[key] = int(value)
        elif key in _SCALAR_FLOAT_KEYS:
            raw[key] = float(value)
        elif key in _VECTOR_KEYS:
            parts = [float(p) for p in value.split(",") if p.strip()]
            raw[key] = parts[0] if len(parts) == 1 else np.array(parts)
        elif key == "exercise_dates":
            raw["exercise_indices"] = tuple(int(p) for p in value.split(",") if p.strip())
        elif key in ("payoff_style", "proxy_drift_sign"):
            raw[key] = value
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return raw


def save_config(path, raw: dict) -> None:
    """Write raw settings back out in the same plain-text format."""
    lines = []
    for key, value in raw.items():
        if key == "exercise_indices":
            lines.append("exercise_dates = " + ", ".join(str(i) for i in value))
        elif isinstance(value, np.ndarray):
            lines.append(f"{key} = " + ", ".join(f"{v:.10g}" for v in value))
        else:
            lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def make_config(raw: dict, t1: float) -> ModelConfig:
    """Build a :class:`ModelConfig` for maturity ``t1`` from raw settings."""
    return ModelConfig(t1=t1, **raw)
