"""Transmission-triggering policies: flow/jump membership and event margins.

Three state-dependent policies plus a periodic baseline:

* naive      -- trigger when gamma1(|e|) reaches sigma * alpha1 * Vx(x).
                Not implementable from the origin: the jump image of the
                trigger surface meets the surface again at x = e = 0, so a
                solution started there can jump forever in zero time.
* deadzone   -- same threshold floored at rho > 0, which buys a strictly
                positive minimum inter-event time at the price of practical
                (not asymptotic) stability.
* time_regularized -- transmissions are forbidden until a dwell clock tau
                reaches t_star; requires quadratic gamma1.
* periodic   -- fixed-period baseline for transmission-count comparisons.

All policy evaluations are pure functions of (state, parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .hybrid import HybridState

__all__ = [
    "GammaForm",
    "PolicyKind",
    "TriggerPolicy",
    "naive_event",
    "deadzone_event",
    "time_regularized_event",
    "time_regularized_margin",
    "periodic_event",
]


@dataclass(frozen=True)
class GammaForm:
    """Power-law class-K-infinity gain: gamma(s) = coeff * s**power."""

    coeff: float
    power: float = 2.0

    def __post_init__(self):
        if self.coeff < 0.0:
            raise ConfigurationError(f"gain coefficient must be >= 0, got {self.coeff}")
        if self.power < 1.0:
            raise ConfigurationError(f"gain power must be >= 1, got {self.power}")

    def __call__(self, s: float) -> float:
        return self.coeff * float(s) ** self.power

    def inverse(self, v: float) -> float:
        if self.coeff == 0.0:
            raise ConfigurationError("zero gain is not invertible")
        return (float(v) / self.coeff) ** (1.0 / self.power)

    def slope(self, s: float) -> float:
        """Derivative gamma'(s)."""
        return self.coeff * self.power * float(s) ** (self.power - 1.0)

    @property
    def is_quadratic(self) -> bool:
        return self.power == 2.0


class PolicyKind(str, Enum):
    NAIVE = "naive"
    DEADZONE = "deadzone"
    TIME_REGULARIZED = "time_regularized"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class TriggerPolicy:
    """A triggering rule and its parameters.

    sigma in (0, 1) scales the Lyapunov threshold (all state-dependent
    policies); rho > 0 is the dead-zone floor; t_star > 0 the enforced
    dwell time; period > 0 the baseline period. The time-regularized
    policy requires the clock component in the hybrid state; the others
    forbid it.
    """

    kind: PolicyKind
    sigma: Optional[float] = None
    rho: Optional[float] = None
    t_star: Optional[float] = None
    period: Optional[float] = None

    def __post_init__(self):
        kind = PolicyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        needs_sigma = kind in (PolicyKind.NAIVE, PolicyKind.DEADZONE,
                               PolicyKind.TIME_REGULARIZED)
        if needs_sigma:
            if self.sigma is None or not (0.0 < self.sigma < 1.0):
                raise ConfigurationError(
                    f"{kind.value} policy needs sigma in (0, 1), got {self.sigma}"
                )
        if kind is PolicyKind.DEADZONE:
            if self.rho is None or self.rho <= 0.0:
                raise ConfigurationError(f"deadzone needs rho > 0, got {self.rho}")
        if kind is PolicyKind.TIME_REGULARIZED:
            if self.t_star is None or self.t_star <= 0.0:
                raise ConfigurationError(
                    f"time_regularized needs t_star > 0, got {self.t_star}"
                )
        if kind is PolicyKind.PERIODIC:
            if self.period is None or self.period <= 0.0:
                raise ConfigurationError(f"periodic needs period > 0, got {self.period}")

    @property
    def requires_clock(self) -> bool:
        return self.kind is PolicyKind.TIME_REGULARIZED

    @classmethod
    def from_dict(cls, cfg: dict) -> "TriggerPolicy":
        cfg = dict(cfg)
        kind = cfg.pop("policy", None)
        if kind is None:
            raise ConfigurationError("policy config needs a 'policy' field")
        known = {"sigma", "rho", "t_star", "period"}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigurationError(f"unknown policy fields: {sorted(unknown)}")
        return cls(kind=PolicyKind(kind), **cfg)


def _threshold(q: HybridState, cert, sigma: float) -> float:
    return sigma * cert.alpha1 * cert.v_x(q.x)


def naive_event(q: HybridState, cert, sigma: float) -> float:
    """Signed margin gamma1(|e|) - sigma * alpha1 * Vx(x); >= 0 on the jump set."""
    e_norm = float(np.linalg.norm(q.e))
    return cert.gamma1(e_norm) - _threshold(q, cert, sigma)


def deadzone_event(q: HybridState, cert, sigma: float, rho: float) -> float:
    """Signed margin gamma1(|e|) - max{sigma * alpha1 * Vx(x), rho}."""
    if rho <= 0.0:
        raise ConfigurationError(f"rho must be > 0, got {rho}")
    e_norm = float(np.linalg.norm(q.e))
    return cert.gamma1(e_norm) - max(_threshold(q, cert, sigma), rho)


def time_regularized_event(q: HybridState, cert, sigma: float,
                           t_star: float) -> tuple[bool, bool]:
    """(flow_ok, jump_ok) for the dwell-clock policy.

    Flow is allowed while the threshold is unmet or the clock is within
    [0, t_star]; a jump is allowed on the threshold surface once the clock
    has run past t_star, or anywhere at/beyond the surface exactly when the
    clock reads t_star.
    """
    if q.tau is None:
        raise ConfigurationError("time_regularized policy needs the clock component")
    if not cert.gamma1.is_quadratic:
        raise ConfigurationError("time_regularized policy needs a quadratic gamma1")
    margin = naive_event(q, cert, sigma)
    tau = q.tau
    flow_ok = margin <= 0.0 or tau <= t_star
    jump_ok = (margin == 0.0 and tau >= t_star) or (margin >= 0.0 and tau == t_star)
    return flow_ok, jump_ok


def time_regularized_margin(q: HybridState, cert, sigma: float,
                            t_star: float) -> float:
    """Scalar event function used for localization.

    Max of the two jump-branch margins, each -inf while its clock
    condition fails: the threshold margin once tau >= t_star, and the
    clock margin tau - t_star once the threshold is met.
    """
    if q.tau is None:
        raise ConfigurationError("time_regularized policy needs the clock component")
    margin = naive_event(q, cert, sigma)
    tau = q.tau
    branch_threshold = margin if tau >= t_star else -math.inf
    branch_clock = (tau - t_star) if margin >= 0.0 else -math.inf
    return max(branch_threshold, branch_clock)


def periodic_event(t_since_jump: float, period: float) -> float:
    """Signed margin t_since_jump - period for the periodic baseline."""
    if period <= 0.0:
        raise ConfigurationError(f"period must be > 0, got {period}")
    return float(t_since_jump) - float(period)
