"""Neutral McKean-Vlasov delay equations and their structural assumptions.

A model is

    d(X_t - D(X_{t - tau})) = b(X_t, X_{t - tau}, mu_t) dt + sigma(X_t, mu_t) dB^H_t,
    X_t = xi(t) on [-tau, 0],

with ``mu_t`` the law of ``X_t`` (the particle system replaces it by the
empirical measure). Coefficient callables are vectorised over particles:

    neutral_map(x)        x: (..., n, d)                      -> (..., n, d)
    drift(x, y, mu)       x, y: (..., n, d), mu batch (...)   -> (..., n, d)
    diffusion(x, mu)      x: (..., n, d)                      -> broadcastable to (..., n, d, d)
    initial_segment(rng, times) -> (len(times), d) for one particle

Coefficients must be pure functions; the solver evaluates them concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .measure import EmpiricalMeasure, check_theta, pairing_bound, theta_moment, wasserstein_1d

__all__ = [
    "ModelSpec",
    "AssumptionReport",
    "validate_assumptions",
    "example_model",
    "additive_model",
    "frozen_model",
    "constant_normal_segment",
    "get_model",
    "MODEL_NAMES",
]

_SLACK = 1e-12


def constant_normal_segment(dimension: int) -> Callable:
    """xi(t) = xi(0) for all t in [-tau, 0], with xi(0) ~ N(0, I_d)."""

    def sample(rng: np.random.Generator, times: np.ndarray) -> np.ndarray:
        x0 = rng.standard_normal(dimension)
        return np.broadcast_to(x0, (len(times), dimension)).copy()

    return sample


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dimension: int
    delay: float
    neutral_map: Callable
    neutral_contraction: float
    drift: Callable
    diffusion: Callable
    initial_segment: Callable
    growth_l: float = 1.0
    lipschitz_L: float = 1.0
    theta: float = 2.0
    description: str = ""

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension}")
        if not self.delay > 0:
            raise ValueError(f"delay must be positive, got {self.delay}")
        if not 0.0 < self.neutral_contraction < 1.0:
            raise ValueError(f"neutral contraction must lie in (0, 1), got {self.neutral_contraction}")
        if not self.growth_l >= 1.0:
            raise ValueError(f"growth exponent l must be >= 1, got {self.growth_l}")
        if not self.lipschitz_L > 0:
            raise ValueError(f"Lipschitz constant L must be positive, got {self.lipschitz_L}")
        check_theta(self.theta)
        zero = np.zeros((1, self.dimension))
        if np.any(np.asarray(self.neutral_map(zero)) != 0.0):
            raise ValueError("the neutral map must satisfy D(0) = 0")

    def diffusion_matrix(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        sig = np.asarray(self.diffusion(x, mu), dtype=float)
        return np.broadcast_to(sig, x.shape + (self.dimension,))


# --------------------------------------------------------------------------
# built-in models
# --------------------------------------------------------------------------


def _half_negative(x):
    return -0.5 * x


def _example_drift(x, y, mu):
    return x + y**2 + (x - mu.mean(keepdims=True))


def _example_diffusion(x, mu):
    return (x - mu.mean(keepdims=True))[..., None]


def example_model(delay: float = 1.0) -> ModelSpec:
    """One-dimensional super-linear example with H = 0.8 in mind.

    d(X_t + X_{t-tau}/2) = (X_t + X_{t-tau}^2 + (X_t - E X_t)) dt + (X_t - E X_t) dB^H_t,
    X_0 ~ N(0, 1), constant initial segment.
    """
    return ModelSpec(
        name="example61",
        dimension=1,
        delay=delay,
        neutral_map=_half_negative,
        neutral_contraction=0.5,
        drift=_example_drift,
        diffusion=_example_diffusion,
        initial_segment=constant_normal_segment(1),
        growth_l=1.0,
        lipschitz_L=2.0,
        theta=2.0,
        description="super-linear delay drift, mean-reverting interaction, state-dependent noise",
    )


def _zero_map(x):
    return np.zeros_like(x)


def additive_model(dimension: int = 1, delay: float = 1.0) -> ModelSpec:
    """D = 0, b = 0, sigma = I: the exact solution is X_t = xi(0) + B^H_t."""
    eye = np.eye(dimension)

    def drift(x, y, mu):
        return np.zeros_like(x)

    def diffusion(x, mu):
        return eye

    return ModelSpec(
        name="additive",
        dimension=dimension,
        delay=delay,
        neutral_map=_zero_map,
        neutral_contraction=0.5,
        drift=drift,
        diffusion=diffusion,
        initial_segment=constant_normal_segment(dimension),
        lipschitz_L=1.0,
        description="additive noise, exact solution xi(0) + B^H",
    )


def frozen_model(dimension: int = 1, delay: float = 1.0) -> ModelSpec:
    """D = 0, b = 0, sigma = 0: every particle stays at xi(0)."""
    zeros = np.zeros((dimension, dimension))

    def drift(x, y, mu):
        return np.zeros_like(x)

    def diffusion(x, mu):
        return zeros

    return ModelSpec(
        name="frozen",
        dimension=dimension,
        delay=delay,
        neutral_map=_zero_map,
        neutral_contraction=0.5,
        drift=drift,
        diffusion=diffusion,
        initial_segment=constant_normal_segment(dimension),
        lipschitz_L=1.0,
        description="no dynamics",
    )


_REGISTRY = {
    "example61": example_model,
    "additive": additive_model,
    "frozen": frozen_model,
}
MODEL_NAMES = tuple(_REGISTRY)


def get_model(name: str, *, delay: float = 1.0, dimension: Optional[int] = None) -> ModelSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; available: {', '.join(MODEL_NAMES)}") from None
    if name == "example61":
        if dimension not in (None, 1):
            raise ValueError("example61 is one-dimensional")
        return factory(delay=delay)
    return factory(dimension=dimension or 1, delay=delay)


# --------------------------------------------------------------------------
# assumption probe
# --------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    """Outcome of a sampling-based falsification attempt.

    Ratios are observed left-hand side over allowed right-hand side (for the
    contraction: the observed Lipschitz ratio of D, compared with lambda).
    A flag is true when no probe pushed its ratio above the allowed value.
    """

    contraction_ok: bool
    contraction_ratio: float
    drift_lipschitz_ok: bool
    drift_ratio: float
    drift_term_ratios: dict
    diffusion_lipschitz_ok: bool
    diffusion_ratio: float
    growth_ok: bool
    growth_ratio: float
    diffusion_x_dependent: bool
    n_probes: int
    seed: int
    radius: float
    witnesses: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return self.contraction_ok and self.drift_lipschitz_ok and self.diffusion_lipschitz_ok and self.growth_ok

    def to_dict(self) -> dict:
        return {
            "all_ok": self.all_ok,
            "contraction_ok": self.contraction_ok,
            "contraction_ratio": self.contraction_ratio,
            "drift_lipschitz_ok": self.drift_lipschitz_ok,
            "drift_ratio": self.drift_ratio,
            "drift_term_ratios": dict(self.drift_term_ratios),
            "diffusion_lipschitz_ok": self.diffusion_lipschitz_ok,
            "diffusion_ratio": self.diffusion_ratio,
            "growth_ok": self.growth_ok,
            "growth_ratio": self.growth_ratio,
            "diffusion_x_dependent": self.diffusion_x_dependent,
            "n_probes": self.n_probes,
            "seed": self.seed,
            "radius": self.radius,
            "witnesses": self.witnesses,
        }


def _ball(rng, radius, d, size=None):
    shape = (d,) if size is None else (size, d)
    direction = rng.standard_normal(shape)
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    r = radius * rng.random(() if size is None else (size, 1)) ** (1.0 / d)
    return direction * r


def _ratio(lhs, rhs):
    if not np.isfinite(lhs):
        return np.inf
    if rhs <= 0:
        return 0.0 if lhs <= 0 else np.inf
    return lhs / rhs


class _Tracker:
    def __init__(self, limit: float):
        self.limit = limit
        self.worst = 0.0
        self.witness = None

    def update(self, ratio, witness):
        if ratio > self.worst or (np.isnan(ratio) and self.witness is None):
            self.worst = ratio if not np.isnan(ratio) else np.inf
            self.witness = witness

    @property
    def ok(self) -> bool:
        return self.worst <= self.limit + _SLACK


def validate_assumptions(spec: ModelSpec, n_probes: int = 200, radius: float = 3.0, seed: int = 0) -> AssumptionReport:
    """Probe the Lipschitz, contraction and growth conditions at random points.

    Drift and diffusion are compared with the Wasserstein distance between
    random equal-size empirical measures; exact in d = 1, replaced by the
    index-coupling upper bound otherwise (which can only hide violations).
    A state-dependent diffusion is checked for Lipschitz continuity in the
    measure at fixed state, and its growth against L (1 + |x| + W_theta).
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    d, L, l, theta = spec.dimension, spec.lipschitz_L, spec.growth_l, spec.theta

    def dist(mu, nu):
        if d == 1:
            return wasserstein_1d(mu, nu, theta)
        return float(pairing_bound(mu, nu, theta))

    def norm(v):
        return float(np.linalg.norm(v))

    def mnorm(m):
        m = np.asarray(m, dtype=float)
        if not np.all(np.isfinite(m)):
            return np.inf
        return float(np.linalg.norm(m, ord=2))

    def b(x, y, mu):
        with np.errstate(all="ignore"):
            out = np.asarray(spec.drift(x[None, :], y[None, :], mu), dtype=float).reshape(-1, d)[0]
        return out

    def sig(x, mu):
        with np.errstate(all="ignore"):
            return spec.diffusion_matrix(x[None, :], mu)[0]

    contraction = _Tracker(spec.neutral_contraction)
    drift_terms = {key: _Tracker(1.0) for key in ("state", "delay", "measure", "joint")}
    diffusion = _Tracker(1.0)
    growth = _Tracker(1.0)
    x_dependent = False

    origin = np.zeros(d)
    delta0 = EmpiricalMeasure(np.zeros((1, d)))
    base = max(norm(b(origin, origin, delta0)), mnorm(sig(origin, delta0)))
    growth.update(_ratio(base, L), {"kind": "origin", "x": origin.tolist()})

    for _ in range(n_probes):
        x, xb, y, yb = (_ball(rng, radius, d) for _ in range(4))
        k = int(rng.integers(1, 9))
        mu = EmpiricalMeasure(_ball(rng, radius, d, k))
        nu = EmpiricalMeasure(_ball(rng, radius, d, k))
        w = dist(mu, nu)
        witness = {
            "x": x.tolist(), "x_bar": xb.tolist(), "y": y.tolist(), "y_bar": yb.tolist(),
            "mu": mu.samples.tolist(), "nu": nu.samples.tolist(),
        }

        with np.errstate(all="ignore"):
            gap = norm(np.asarray(spec.neutral_map(x[None]))[0] - np.asarray(spec.neutral_map(xb[None]))[0])
        contraction.update(_ratio(gap, norm(x - xb)), witness)

        b0 = b(x, y, mu)
        delay_mod = (1 + norm(y) ** l + norm(yb) ** l) * norm(y - yb)
        pairs = {
            "state": (b(xb, y, mu), L * norm(x - xb)),
            "delay": (b(x, yb, mu), L * delay_mod),
            "measure": (b(x, y, nu), L * w),
            "joint": (b(xb, yb, nu), L * (norm(x - xb) + delay_mod + w)),
        }
        for key, (other, rhs) in pairs.items():
            drift_terms[key].update(_ratio(norm(b0 - other), rhs), witness)

        s_mu = sig(x, mu)
        diffusion.update(_ratio(mnorm(s_mu - sig(x, nu)), L * w), witness)
        s_other = sig(xb, mu)
        if not np.array_equal(s_mu, s_other):
            x_dependent = True

        w0 = float(theta_moment(mu, theta))
        growth.update(_ratio(norm(b0), L * (1 + norm(x) + norm(y) ** (l + 1) + w0)), witness)
        sig_bound = L * (1 + w0 + (norm(x) if x_dependent else 0.0))
        growth.update(_ratio(mnorm(s_mu), sig_bound), witness)

    drift_ok = all(t.ok for t in drift_terms.values())
    witnesses = {}
    if not contraction.ok:
        witnesses["contraction"] = contraction.witness
    if not drift_ok:
        witnesses["drift"] = next(t.witness for t in drift_terms.values() if not t.ok)
    if not diffusion.ok:
        witnesses["diffusion"] = diffusion.witness
    if not growth.ok:
        witnesses["growth"] = growth.witness

    return AssumptionReport(
        contraction_ok=contraction.ok,
        contraction_ratio=float(contraction.worst),
        drift_lipschitz_ok=drift_ok,
        drift_ratio=float(max(t.worst for t in drift_terms.values())),
        drift_term_ratios={key: float(t.worst) for key, t in drift_terms.items()},
        diffusion_lipschitz_ok=diffusion.ok,
        diffusion_ratio=float(diffusion.worst),
        growth_ok=growth.ok,
        growth_ratio=float(growth.worst),
        diffusion_x_dependent=x_dependent,
        n_probes=int(n_probes),
        seed=int(seed),
        radius=float(radius),
        witnesses=witnesses,
    )
