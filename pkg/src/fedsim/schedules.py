"""Step-size and momentum schedules.

The analytic schedules are plain functions of their constants and the step
index.  :class:`Schedule` wraps one of them under a kind string so it can be
named in a JSON config and queried step by step during a run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

from .errors import InvalidSchedule

log = logging.getLogger(__name__)

SCVX_DECAY = "scvx_decay"
NESTEROV_SCVX_DECAY = "nesterov_scvx_decay"
CONST_SQRT = "const_sqrt"
OVERPARAM_CONST = "overparam_const"
MASS_CONST = "mass_const"
EXPERIMENT_DECAY = "experiment_decay"
FIXED = "fixed"
KINDS = (SCVX_DECAY, NESTEROV_SCVX_DECAY, CONST_SQRT, OVERPARAM_CONST, MASS_CONST, EXPERIMENT_DECAY, FIXED)


def schedule_offset(kappa: float, E: int) -> float:
    return max(32.0 * kappa, float(E))


def scvx_decay(mu: float, kappa: float, E: int, t: int) -> float:
    """``1 / (4 mu (gamma + t))`` with ``gamma = max(32 kappa, E)``."""
    if mu <= 0:
        raise InvalidSchedule(f"mu must be positive, got {mu}")
    if kappa < 1 or E < 1:
        raise InvalidSchedule("need kappa >= 1 and E >= 1")
    return 1.0 / (4.0 * mu * (schedule_offset(kappa, E) + t))


def nesterov_scvx(mu: float, kappa: float, E: int, t: int) -> tuple[float, float]:
    """``(alpha_t, beta_{t-1})`` for strongly convex Nesterov FedAvg.

    ``beta`` carries a ``max(mu, 1)`` factor in its denominator, kept as
    published even though it makes ``beta`` scale differently from ``alpha``
    when ``mu != 1``.
    """
    if mu <= 0:
        raise InvalidSchedule(f"mu must be positive, got {mu}")
    s = t + schedule_offset(kappa, E)
    if s <= 6:
        raise InvalidSchedule(f"t + gamma = {s} must exceed 6")
    alpha = 6.0 / (mu * s)
    beta = 3.0 / (14.0 * s * (1.0 - 6.0 / s) * max(mu, 1.0))
    return alpha, beta


def const_sqrt(scale: float, T: int, c: float = 1.0, L: float | None = None) -> float:
    """``c * sqrt(scale / T)``, clamped to ``1 / (4L)`` when ``L`` is given."""
    if T < scale:
        raise InvalidSchedule(f"need T >= scale, got T={T}, scale={scale}")
    alpha = c * math.sqrt(scale / T)
    if L is not None and alpha > 1.0 / (4.0 * L):
        log.warning("step %.4g exceeds 1/(4L) = %.4g; clamping", alpha, 1.0 / (4.0 * L))
        alpha = 1.0 / (4.0 * L)
    return alpha


def overparam_const(
    E: int, N: int, l: float, L_or_mu: float, nu_max: float, nu_min: float, c: float = 0.5
) -> float:
    """``(c / E) * N / (l nu_max + L_or_mu (N - nu_min))``.

    Pass ``L`` with ``c = 1/2`` for general overparameterized problems and
    ``mu`` with ``c = 1/4`` for linear regression.
    """
    if min(E, N, l, L_or_mu, nu_max, nu_min) <= 0:
        raise InvalidSchedule("all overparam_const arguments must be positive")
    if not 0 < c <= 1:
        raise InvalidSchedule(f"prefactor must lie in (0, 1], got {c}")
    return (c / E) * N / (l * nu_max + L_or_mu * (N - nu_min))


def mass_const(
    E: int,
    N: int,
    l: float,
    mu: float,
    nu_max: float,
    nu_min: float,
    kappa1: float,
    kappa_tilde: float,
    c: float = 0.25,
) -> tuple[float, float, float]:
    """``(eta1, eta2, gamma)`` for FedMaSS on overparameterized least squares."""
    if kappa_tilde < 1 or kappa1 < 1:
        raise InvalidSchedule(f"need kappa1, kappa_tilde >= 1, got {kappa1}, {kappa_tilde}")
    eta1 = overparam_const(E, N, l, mu, nu_max, nu_min, c)
    r = 1.0 / math.sqrt(kappa1 * kappa_tilde)
    eta2 = eta1 * (1.0 - 1.0 / kappa_tilde) / (1.0 + r)
    gamma = (1.0 - r) / (1.0 + r)
    return eta1, eta2, gamma


def mass_to_three_sequence(eta1: float, eta2: float, gamma: float) -> tuple[float, float, float]:
    """Map ``(eta1, eta2, gamma)`` to the ``(alpha, delta, eta)`` form of MaSS.

    Inverse of :func:`three_sequence_to_mass`.  ``eta2 = 0`` gives
    ``delta = eta / alpha``, the Nesterov special case.
    """
    if not 0 <= gamma < 1:
        raise InvalidSchedule(f"gamma must lie in [0, 1), got {gamma}")
    alpha = (1.0 - gamma) / (1.0 + gamma)
    eta = eta1
    delta = (eta - eta2 * (1.0 + alpha)) / alpha
    return alpha, delta, eta


def three_sequence_to_mass(alpha: float, delta: float, eta: float) -> tuple[float, float, float]:
    if not 0 < alpha <= 1:
        raise InvalidSchedule(f"alpha must lie in (0, 1], got {alpha}")
    gamma = (1.0 - alpha) / (1.0 + alpha)
    eta2 = (eta - alpha * delta) / (1.0 + alpha)
    return eta, eta2, gamma


def experiment_decay(eta0: float, n: int, c: float, t: int) -> float:
    """``min(eta0, n c / (1 + t))``."""
    if eta0 <= 0 or n <= 0 or c <= 0:
        raise InvalidSchedule("eta0, n and c must be positive")
    return min(eta0, n * c / (1.0 + t))


def experiment_grid(
    eta0s=(1.0, 32.0), c0: float = 1.0 / 8, exponents=(-2, -1, 0, 1, 2)
) -> list[tuple[float, float]]:
    """``(eta0, c)`` pairs with ``c = c0 * 2**i``."""
    return [(float(e), c0 * 2.0**i) for e in eta0s for i in exponents]


# ---------------------------------------------------------------- Schedule


@dataclass(frozen=True)
class StepParams:
    """Per-step coefficients; each update rule reads the ones it needs."""

    alpha: float
    beta: float = 0.0
    eta1: float | None = None
    eta2: float = 0.0
    mass_gamma: float = 0.0

    @property
    def descent(self) -> float:
        return self.alpha if self.eta1 is None else self.eta1


_REQUIRED = {
    SCVX_DECAY: ("mu", "kappa", "E"),
    NESTEROV_SCVX_DECAY: ("mu", "kappa", "E"),
    CONST_SQRT: ("scale", "T"),
    OVERPARAM_CONST: ("E", "N", "l", "L_or_mu", "nu_max", "nu_min"),
    MASS_CONST: ("E", "N", "l", "mu", "nu_max", "nu_min", "kappa1", "kappa_tilde"),
    EXPERIMENT_DECAY: ("eta0", "n", "c"),
    FIXED: ("alpha",),
}
_OPTIONAL = {
    SCVX_DECAY: (),
    NESTEROV_SCVX_DECAY: (),
    CONST_SQRT: ("c", "L", "beta"),
    OVERPARAM_CONST: ("c",),
    MASS_CONST: ("c",),
    EXPERIMENT_DECAY: ("beta",),
    FIXED: ("beta", "eta1", "eta2", "mass_gamma"),
}


@dataclass(frozen=True)
class Schedule:
    """A named schedule plus its constants.

    ``const_sqrt`` emits ``beta = alpha`` unless ``beta`` is given;
    ``experiment_decay`` takes a constant momentum ``beta`` (default 0).
    """

    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSchedule(f"unknown schedule kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise InvalidSchedule(f"{self.kind} is missing parameters {missing}")
        unknown = set(self.params) - set(_REQUIRED[self.kind]) - set(_OPTIONAL[self.kind])
        if unknown:
            raise InvalidSchedule(f"{self.kind} got unknown parameters {sorted(unknown)}")
        # validate once at t = 0
        self.at(0)

    @classmethod
    def from_dict(cls, spec: dict) -> "Schedule":
        extra = set(spec) - {"kind", "params"}
        if extra:
            raise InvalidSchedule(f"unknown schedule keys {sorted(extra)}")
        return cls(spec["kind"], dict(spec.get("params", {})))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    def at(self, t: int) -> StepParams:
        p = self.params
        k = self.kind
        if k == SCVX_DECAY:
            out = StepParams(scvx_decay(p["mu"], p["kappa"], p["E"], t))
        elif k == NESTEROV_SCVX_DECAY:
            alpha, _ = nesterov_scvx(p["mu"], p["kappa"], p["E"], t)
            # beta_t is the "beta_{t-1}" formula evaluated one step later
            _, beta = nesterov_scvx(p["mu"], p["kappa"], p["E"], t + 1)
            out = StepParams(alpha, beta)
        elif k == CONST_SQRT:
            alpha = self._cached_const()
            out = StepParams(alpha, p.get("beta", alpha))
        elif k == OVERPARAM_CONST:
            out = StepParams(self._cached_const())
        elif k == MASS_CONST:
            eta1, eta2, gamma = self._cached_const()
            out = StepParams(eta1, eta1=eta1, eta2=eta2, mass_gamma=gamma)
        elif k == EXPERIMENT_DECAY:
            out = StepParams(experiment_decay(p["eta0"], p["n"], p["c"], t), p.get("beta", 0.0))
        else:
            out = StepParams(
                p["alpha"], p.get("beta", 0.0), p.get("eta1"), p.get("eta2", 0.0), p.get("mass_gamma", 0.0)
            )
        _validate(out, k)
        return out

    def _cached_const(self):
        cached = self.__dict__.get("_const")
        if cached is None:
            p = self.params
            if self.kind == CONST_SQRT:
                cached = const_sqrt(p["scale"], p["T"], p.get("c", 1.0), p.get("L"))
            elif self.kind == OVERPARAM_CONST:
                cached = overparam_const(
                    p["E"], p["N"], p["l"], p["L_or_mu"], p["nu_max"], p["nu_min"], p.get("c", 0.5)
                )
            else:
                cached = mass_const(
                    p["E"], p["N"], p["l"], p["mu"], p["nu_max"], p["nu_min"],
                    p["kappa1"], p["kappa_tilde"], p.get("c", 0.25),
                )
            object.__setattr__(self, "_const", cached)
        return cached


def _validate(sp: StepParams, kind: str) -> None:
    if not (math.isfinite(sp.alpha) and sp.alpha > 0):
        raise InvalidSchedule(f"{kind}: step size {sp.alpha} is not positive and finite")
    if sp.eta1 is not None and not (math.isfinite(sp.eta1) and sp.eta1 > 0):
        raise InvalidSchedule(f"{kind}: eta1 {sp.eta1} is not positive and finite")
    if not (math.isfinite(sp.beta) and sp.beta >= 0):
        raise InvalidSchedule(f"{kind}: momentum {sp.beta} must be finite and nonnegative")
    if not (math.isfinite(sp.eta2) and sp.eta2 >= 0):
        raise InvalidSchedule(f"{kind}: eta2 {sp.eta2} must be finite and nonnegative")
    if not 0 <= sp.mass_gamma < 1:
        raise InvalidSchedule(f"{kind}: MaSS momentum {sp.mass_gamma} outside [0, 1)")
