"""Hybrid time, hybrid states, solution arcs, and the flow/jump interface.

A solution record ("arc") lives on a hybrid time domain: samples are indexed
by pairs (t, j) of continuous time and jump count, ordered lexicographically.
Flow samples advance t at fixed j; jumps freeze t and increment j by one.
Arcs are built by a single writer and treated as immutable afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DivergenceError, OrderingError

__all__ = [
    "Termination",
    "HybridTime",
    "HybridState",
    "MonitorValues",
    "JumpRecord",
    "HybridArc",
    "HybridSystemInterface",
    "append_flow_sample",
    "append_jump",
]


class Termination(str, Enum):
    """Why arc construction stopped."""

    HORIZON = "horizon-reached"
    ZENO_GUARD = "zeno-guard"
    DIVERGENCE = "divergence"
    FLOW_SET_EXIT = "flow-set-exit"


@dataclass(frozen=True, order=True)
class HybridTime:
    """A point (t, j) of a hybrid time domain.

    Ordering is lexicographic: (t, j) < (t', j') iff t < t' or
    (t == t' and j < j'), which dataclass field order provides.
    """

    t: float
    j: int

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0.0:
            raise OrderingError(f"continuous time must be finite and >= 0, got {self.t}")
        if self.j < 0:
            raise OrderingError(f"jump counter must be >= 0, got {self.j}")

    @property
    def total(self) -> float:
        """The hybrid-time abscissa t + j used by decay envelopes."""
        return self.t + self.j


def _as_readonly_vector(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True).reshape(-1)
    if arr.size and not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite entries in {name}: {arr}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class HybridState:
    """Composite state (x, y, e, tau) of the sampled-data closed loop.

    x is the slow state, y the shifted fast state, e the sampling-induced
    error (same dimension as x), and tau an optional dwell clock that is
    present only under the time-regularized policy.
    """

    x: np.ndarray
    y: np.ndarray
    e: np.ndarray
    tau: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "x", _as_readonly_vector(self.x, "x"))
        object.__setattr__(self, "y", _as_readonly_vector(self.y, "y"))
        object.__setattr__(self, "e", _as_readonly_vector(self.e, "e"))
        if self.e.shape != self.x.shape:
            raise DimensionError(
                f"e has dimension {self.e.size}, expected n_x = {self.x.size}"
            )
        if self.tau is not None:
            tau = float(self.tau)
            if not math.isfinite(tau) or tau < 0.0:
                raise DivergenceError(f"clock must be finite and >= 0, got {tau}")
            object.__setattr__(self, "tau", tau)

    @property
    def n_x(self) -> int:
        return self.x.size

    @property
    def n_y(self) -> int:
        return self.y.size

    @property
    def has_clock(self) -> bool:
        return self.tau is not None

    def as_vector(self) -> np.ndarray:
        """Stacked (x, y, e) without the clock."""
        return np.concatenate([self.x, self.y, self.e])

    @classmethod
    def from_vector(cls, v: np.ndarray, n_x: int, n_y: int,
                    tau: Optional[float] = None) -> "HybridState":
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != 2 * n_x + n_y:
            raise DimensionError(f"vector of size {v.size} != 2*{n_x} + {n_y}")
        return cls(x=v[:n_x], y=v[n_x:n_x + n_y], e=v[n_x + n_y:], tau=tau)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.x**2) + np.sum(self.y**2) + np.sum(self.e**2)))

    def xy_norm(self) -> float:
        return float(np.sqrt(np.sum(self.x**2) + np.sum(self.y**2)))


@dataclass(frozen=True)
class MonitorValues:
    """Scalar diagnostics stored with every sample.

    v is the practical-stability composite Lyapunov value, r the
    dwell-clock composite value (NaN when its prerequisites are absent),
    and trigger_margin the signed event-function value.
    """

    v: float = math.nan
    r: float = math.nan
    trigger_margin: float = math.nan


@dataclass(frozen=True)
class JumpRecord:
    """One transmission event: (t, j) -> (t, j+1) with its pre/post states."""

    t: float
    j_pre: int
    j_post: int
    reason: str
    pre_state: HybridState
    post_state: HybridState

    @property
    def error_norm(self) -> float:
        """|e| immediately before the transmission."""
        return float(np.linalg.norm(self.pre_state.e))

    def to_dict(self) -> dict:
        return {
            "time": self.t,
            "j": self.j_post,
            "reason": self.reason,
            "error_norm": self.error_norm,
        }


@dataclass(frozen=True)
class HybridSystemInterface:
    """Flow/jump data of a hybrid system with a scalar event function.

    Sign convention: event_function < 0 strictly inside the flow set minus
    the jump set, and >= 0 on the jump set, so standard root bracketing
    localizes the boundary crossing.
    """

    flow_map: Callable[[HybridState], np.ndarray]
    jump_map: Callable[[HybridState], HybridState]
    in_flow_set: Callable[[HybridState], bool]
    in_jump_set: Callable[[HybridState], bool]
    event_function: Callable[[HybridState], float]


class HybridArc:
    """Sampled solution over a hybrid time domain, with monitors and events.

    Samples are appended per accepted integrator step plus both sides of
    every jump; lexicographic (t, j) ordering is asserted on every append.
    """

    def __init__(self, n_x: int, n_y: int, has_clock: bool = False):
        self.n_x = int(n_x)
        self.n_y = int(n_y)
        self.has_clock = bool(has_clock)
        self._t: list[float] = []
        self._j: list[int] = []
        self._rows: list[np.ndarray] = []       # stacked (x, y, e)
        self._tau: list[float] = []             # NaN when clock absent
        self._v: list[float] = []
        self._r: list[float] = []
        self._margin: list[float] = []
        self._is_jump: list[int] = []
        self.events: list[JumpRecord] = []
        self.termination: Optional[Termination] = None

    # -- construction -----------------------------------------------------

    def _check_state(self, q: HybridState) -> None:
        if q.n_x != self.n_x or q.n_y != self.n_y:
            raise DimensionError(
                f"state dims ({q.n_x}, {q.n_y}) do not match arc ({self.n_x}, {self.n_y})"
            )
        if q.has_clock != self.has_clock:
            raise DimensionError("clock presence does not match the arc")

    def _append_row(self, t: float, j: int, q: HybridState,
                    monitors: Optional[MonitorValues], is_jump: bool) -> None:
        self._t.append(float(t))
        self._j.append(int(j))
        self._rows.append(q.as_vector())
        self._tau.append(q.tau if q.tau is not None else math.nan)
        m = monitors or MonitorValues()
        self._v.append(m.v)
        self._r.append(m.r)
        self._margin.append(m.trigger_margin)
        self._is_jump.append(1 if is_jump else 0)

    def append_flow_sample(self, t: float, q: HybridState,
                           monitors: Optional[MonitorValues] = None) -> "HybridArc":
        """Append a flow sample at time t with the current jump count."""
        self._check_state(q)
        if not math.isfinite(t):
            raise OrderingError(f"sample time must be finite, got {t}")
        if self._t:
            if t < self._t[-1]:
                raise OrderingError(
                    f"flow sample at t={t} precedes current arc time {self._t[-1]}"
                )
            if t == self._t[-1] and self._is_jump[-1] == 0:
                raise OrderingError(
                    f"flow must advance t strictly between jumps (t={t})"
                )
            j = self._j[-1]
        else:
            j = 0
        self._append_row(t, j, q, monitors, is_jump=False)
        return self

    def append_jump(self, q_pre: HybridState, q_post: HybridState, reason: str,
                    monitors: Optional[MonitorValues] = None) -> "HybridArc":
        """Record a jump: last sample must equal (t, j, q_pre); appends (t, j+1, q_post)."""
        self._check_state(q_pre)
        self._check_state(q_post)
        if not self._t:
            raise OrderingError("cannot jump on an empty arc; append the pre-state first")
        last = self._rows[-1]
        if not np.array_equal(last, q_pre.as_vector()):
            raise OrderingError("jump pre-state does not equal the last arc sample")
        t, j = self._t[-1], self._j[-1]
        self.events.append(
            JumpRecord(t=t, j_pre=j, j_post=j + 1, reason=reason,
                       pre_state=q_pre, post_state=q_post)
        )
        self._append_row(t, j + 1, q_post, monitors, is_jump=True)
        return self

    def set_termination(self, termination: Termination) -> None:
        self.termination = Termination(termination)

    # -- views -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._t)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self._t, dtype=float)

    @property
    def j(self) -> np.ndarray:
        return np.asarray(self._j, dtype=int)

    @property
    def hybrid_total_time(self) -> np.ndarray:
        """t + j per sample (the envelope abscissa)."""
        return self.t + self.j.astype(float)

    @property
    def states(self) -> np.ndarray:
        """Sample matrix with rows (x, y, e)."""
        if not self._rows:
            return np.zeros((0, 2 * self.n_x + self.n_y))
        return np.vstack(self._rows)

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self._tau, dtype=float)

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self._v, dtype=float)

    @property
    def r(self) -> np.ndarray:
        return np.asarray(self._r, dtype=float)

    @property
    def trigger_margin(self) -> np.ndarray:
        return np.asarray(self._margin, dtype=float)

    @property
    def is_jump(self) -> np.ndarray:
        return np.asarray(self._is_jump, dtype=int)

    @property
    def x(self) -> np.ndarray:
        return self.states[:, : self.n_x]

    @property
    def y(self) -> np.ndarray:
        return self.states[:, self.n_x : self.n_x + self.n_y]

    @property
    def e(self) -> np.ndarray:
        return self.states[:, self.n_x + self.n_y :]

    def state_at(self, i: int) -> HybridState:
        row = self._rows[i]
        tau = self._tau[i]
        return HybridState.from_vector(
            row, self.n_x, self.n_y,
            tau=None if math.isnan(tau) else tau,
        )

    def final_state(self) -> HybridState:
        if not self._rows:
            raise OrderingError("empty arc")
        return self.state_at(len(self._rows) - 1)

    @property
    def jump_count(self) -> int:
        return len(self.events)

    def jump_times(self) -> np.ndarray:
        return np.asarray([ev.t for ev in self.events], dtype=float)

    def elapsed_time(self) -> float:
        if not self._t:
            return 0.0
        return self._t[-1] - self._t[0]

    def check_ordering(self) -> None:
        """Assert lexicographic (t, j) ordering over the whole arc."""
        pairs = list(zip(self._t, self._j))
        for a, b in zip(pairs, pairs[1:]):
            if not (a[0] < b[0] or (a[0] == b[0] and a[1] < b[1])):
                raise OrderingError(f"samples out of order: {a} then {b}")

    # -- serialization -----------------------------------------------------

    def csv_header(self) -> list[str]:
        cols = ["t", "j"]
        cols += [f"x_{i+1}" for i in range(self.n_x)]
        cols += [f"y_{i+1}" for i in range(self.n_y)]
        cols += [f"e_{i+1}" for i in range(self.n_x)]
        cols += ["tau", "V", "R", "trigger_margin", "is_jump"]
        return cols

    def to_csv(self, path) -> None:
        """Write the sample table; floats use %.17g so values round-trip."""
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.csv_header()) + "\n")
            for i in range(len(self._t)):
                row = [f"{self._t[i]:.17g}", str(self._j[i])]
                row += [f"{v:.17g}" for v in self._rows[i]]
                row += [
                    f"{self._tau[i]:.17g}",
                    f"{self._v[i]:.17g}",
                    f"{self._r[i]:.17g}",
                    f"{self._margin[i]:.17g}",
                    str(self._is_jump[i]),
                ]
                fh.write(",".join(row) + "\n")

    def events_to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump([ev.to_dict() for ev in self.events], fh, indent=2)
            fh.write("\n")


def append_flow_sample(arc: HybridArc, t: float, q: HybridState,
                       monitors: Optional[MonitorValues] = None) -> HybridArc:
    """Functional wrapper around :meth:`HybridArc.append_flow_sample`."""
    return arc.append_flow_sample(t, q, monitors)


def append_jump(arc: HybridArc, q_pre: HybridState, q_post: HybridState,
                reason: str, monitors: Optional[MonitorValues] = None) -> HybridArc:
    """Functional wrapper around :meth:`HybridArc.append_jump`."""
    return arc.append_jump(q_pre, q_post, reason, monitors)
