"""Closed-loop vector fields and jump maps for two-time-scale plants.

The plant is dx/dt = f(x, z, u), eps * dz/dt = g(x, z, u) with a selected
quasi-steady-state root z = h(x, u) of g = 0. Shifting y = z - h(x, u) and
holding u = k(x + e) between transmissions yields the closed-loop flow

    x' = f_x(x, y, e)
    y' = (1/eps) * [g(x, y + h, k(x+e)) - eps * dh/dx(x, k(x+e)) @ f_x]
    e' = -f_x

and, at each transmission, y jumps by h(x, k(x+e)) - h(x, k(x)) while the
physical state z stays continuous and e resets to zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DimensionError, DivergenceError
from .hybrid import HybridState

__all__ = [
    "PlantSpec",
    "LinearPlantSpec",
    "finite_difference_dh_dx",
    "shift_coordinates",
    "closed_loop_flow",
    "closed_loop_flow_vector",
    "jump_map_hy",
    "apply_jump",
    "reduced_slow_flow",
    "reduced_fast_flow",
    "check_root_consistency",
]

ROOT_CONSISTENCY_TOL = 1e-9


def finite_difference_dh_dx(h: Callable, step_scale: float = 1e-6) -> Callable:
    """Central-difference Jacobian of h in x; fallback when none is supplied.

    Step is 1e-6 * (1 + |x|) per coordinate. Prefer an analytic Jacobian:
    this term multiplies the fast dynamics and silent FD error would
    corrupt the eps-scaled correction.
    """

    def dh_dx(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n_x = x.size
        step = step_scale * (1.0 + float(np.linalg.norm(x)))
        cols = []
        for i in range(n_x):
            dx = np.zeros(n_x)
            dx[i] = step
            hi = np.asarray(h(x + dx, u), dtype=float).reshape(-1)
            lo = np.asarray(h(x - dx, u), dtype=float).reshape(-1)
            cols.append((hi - lo) / (2.0 * step))
        return np.column_stack(cols)

    return dh_dx


@dataclass(frozen=True)
class PlantSpec:
    """User-supplied plant data assembled into the closed loop.

    f, g map (x, z, u) to the slow derivative and the scaled fast
    derivative; h(x, u) is the selected quasi-steady-state root of g = 0
    (one root, chosen once; the toolkit never switches roots mid-run);
    k maps the held sample x + e to the input. dh_dx is the Jacobian of h
    in x and defaults to central finite differences.
    """

    n_x: int
    n_z: int
    n_u: int
    f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    k: Callable[[np.ndarray], np.ndarray]
    epsilon: float
    dh_dx: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.epsilon <= 0.0 or not math.isfinite(self.epsilon):
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if min(self.n_x, self.n_z, self.n_u) < 1:
            raise DimensionError("n_x, n_z, n_u must all be >= 1")
        if self.dh_dx is None:
            object.__setattr__(self, "dh_dx", finite_difference_dh_dx(self.h))

    @property
    def n_y(self) -> int:
        return self.n_z

    def with_epsilon(self, epsilon: float) -> "PlantSpec":
        return replace(self, epsilon=float(epsilon))


def _vec(a, n: int, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float).reshape(-1)
    if arr.size != n:
        raise DimensionError(f"{name} has size {arr.size}, expected {n}")
    return arr


def shift_coordinates(z, x, u, spec: PlantSpec) -> np.ndarray:
    """Shift the quasi-steady-state to the origin: y = z - h(x, u)."""
    z = _vec(z, spec.n_z, "z")
    x = _vec(x, spec.n_x, "x")
    u = _vec(u, spec.n_u, "u")
    return z - np.asarray(spec.h(x, u), dtype=float).reshape(-1)


def closed_loop_flow_vector(x, y, e, spec: PlantSpec,
                            with_clock: bool = False) -> np.ndarray:
    """Closed-loop derivative of the stacked (x, y, e[, tau]) vector."""
    x = _vec(x, spec.n_x, "x")
    y = _vec(y, spec.n_y, "y")
    e = _vec(e, spec.n_x, "e")
    u = np.asarray(spec.k(x + e), dtype=float).reshape(-1)
    h_val = np.asarray(spec.h(x, u), dtype=float).reshape(-1)
    z = y + h_val
    fx = np.asarray(spec.f(x, z, u), dtype=float).reshape(-1)
    g_val = np.asarray(spec.g(x, z, u), dtype=float).reshape(-1)
    jac = np.asarray(spec.dh_dx(x, u), dtype=float).reshape(spec.n_z, spec.n_x)
    y_dot = g_val / spec.epsilon - jac @ fx
    parts = [fx, y_dot, -fx]
    if with_clock:
        parts.append(np.ones(1))
    out = np.concatenate(parts)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("closed-loop flow produced non-finite derivative")
    return out


def closed_loop_flow(q: HybridState, spec: PlantSpec) -> np.ndarray:
    """Flow map applied to a hybrid state; clock rate is 1 when present."""
    return closed_loop_flow_vector(q.x, q.y, q.e, spec, with_clock=q.has_clock)


def jump_map_hy(x, y, e, spec: PlantSpec) -> np.ndarray:
    """Fast-state jump at a transmission: y+ = y + h(x, k(x+e)) - h(x, k(x)).

    The jump is an artifact of the coordinate shift: the physical state z
    is continuous across transmissions by construction.
    """
    x = _vec(x, spec.n_x, "x")
    y = _vec(y, spec.n_y, "y")
    e = _vec(e, spec.n_x, "e")
    u_held = np.asarray(spec.k(x + e), dtype=float).reshape(-1)
    u_fresh = np.asarray(spec.k(x), dtype=float).reshape(-1)
    h_held = np.asarray(spec.h(x, u_held), dtype=float).reshape(-1)
    h_fresh = np.asarray(spec.h(x, u_fresh), dtype=float).reshape(-1)
    return y + h_held - h_fresh


def apply_jump(q: HybridState, spec: PlantSpec) -> HybridState:
    """Full jump map: x unchanged, y -> h_y(x, y, e), e -> 0, tau -> 0."""
    y_plus = jump_map_hy(q.x, q.y, q.e, spec)
    return HybridState(
        x=q.x,
        y=y_plus,
        e=np.zeros(spec.n_x),
        tau=0.0 if q.has_clock else None,
    )


def reduced_slow_flow(x, e, spec: PlantSpec) -> np.ndarray:
    """Approximate slow model f_s(x, e) = f(x, h(x, k(x+e)), k(x+e))."""
    x = _vec(x, spec.n_x, "x")
    e = _vec(e, spec.n_x, "e")
    u = np.asarray(spec.k(x + e), dtype=float).reshape(-1)
    h_val = np.asarray(spec.h(x, u), dtype=float).reshape(-1)
    return np.asarray(spec.f(x, h_val, u), dtype=float).reshape(-1)


def reduced_fast_flow(x, y, e, spec: PlantSpec) -> np.ndarray:
    """Approximate fast model g_f(x, y, e) = g(x, y + h(x, k(x+e)), k(x+e))."""
    x = _vec(x, spec.n_x, "x")
    y = _vec(y, spec.n_y, "y")
    e = _vec(e, spec.n_x, "e")
    u = np.asarray(spec.k(x + e), dtype=float).reshape(-1)
    h_val = np.asarray(spec.h(x, u), dtype=float).reshape(-1)
    return np.asarray(spec.g(x, y + h_val, u), dtype=float).reshape(-1)


def check_root_consistency(spec: PlantSpec, box: float = 1.0,
                           n_samples: int = 10_000, seed: int = 0,
                           tol: float = ROOT_CONSISTENCY_TOL) -> float:
    """Verify g(x, h(x, u), u) = 0 on random (x, u) samples in a box.

    Returns the worst |g| found; raises ConfigurationError above tol.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        x = rng.uniform(-box, box, spec.n_x)
        u = rng.uniform(-box, box, spec.n_u)
        h_val = np.asarray(spec.h(x, u), dtype=float).reshape(-1)
        resid = np.asarray(spec.g(x, h_val, u), dtype=float).reshape(-1)
        worst = max(worst, float(np.max(np.abs(resid))) if resid.size else 0.0)
    if worst > tol:
        raise ConfigurationError(
            f"selected root is inconsistent: max |g(x, h(x,u), u)| = {worst:.3e} > {tol}"
        )
    return worst


def _matrix(a, shape: tuple[int, int], name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr = arr.reshape(shape)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LinearPlantSpec:
    """LTI two-time-scale plant with a static gain.

    dx/dt = A11 x + A12 z + B1 u,  eps dz/dt = A21 x + A22 z + B2 u,
    u = K x at transmissions. A22 must be invertible so the root
    h(x, u) = -A22^{-1} (A21 x + B2 u) is unique; a Hurwitz check on A22
    is recorded as a diagnostic.
    """

    a11: np.ndarray
    a12: np.ndarray
    a21: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    k_gain: np.ndarray
    epsilon: float

    def __post_init__(self):
        a11 = np.atleast_2d(np.asarray(self.a11, dtype=float))
        n_x = a11.shape[0]
        a22 = np.atleast_2d(np.asarray(self.a22, dtype=float))
        n_z = a22.shape[0]
        k = np.atleast_2d(np.asarray(self.k_gain, dtype=float))
        n_u = k.shape[0]
        object.__setattr__(self, "a11", _matrix(a11, (n_x, n_x), "a11"))
        object.__setattr__(self, "a12", _matrix(self.a12, (n_x, n_z), "a12"))
        object.__setattr__(self, "a21", _matrix(self.a21, (n_z, n_x), "a21"))
        object.__setattr__(self, "a22", _matrix(a22, (n_z, n_z), "a22"))
        object.__setattr__(self, "b1", _matrix(self.b1, (n_x, n_u), "b1"))
        object.__setattr__(self, "b2", _matrix(self.b2, (n_z, n_u), "b2"))
        object.__setattr__(self, "k_gain", _matrix(k, (n_u, n_x), "k_gain"))
        if self.epsilon <= 0.0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if abs(np.linalg.det(self.a22)) < 1e-12:
            raise ConfigurationError("A22 must be invertible for a unique root")

    @property
    def n_x(self) -> int:
        return self.a11.shape[0]

    @property
    def n_z(self) -> int:
        return self.a22.shape[0]

    @property
    def n_u(self) -> int:
        return self.k_gain.shape[0]

    @property
    def a22_hurwitz(self) -> bool:
        """Diagnostic: all eigenvalues of A22 in the open left half plane."""
        return bool(np.all(np.linalg.eigvals(self.a22).real < 0.0))

    # Root h(x, u) = Hx x + Hu u.
    @property
    def h_x(self) -> np.ndarray:
        return -np.linalg.solve(self.a22, self.a21)

    @property
    def h_u(self) -> np.ndarray:
        return -np.linalg.solve(self.a22, self.b2)

    @property
    def b_slow(self) -> np.ndarray:
        """Input matrix of the reduced slow model: B1 - A12 A22^{-1} B2."""
        return self.b1 + self.a12 @ self.h_u

    @property
    def a_slow(self) -> np.ndarray:
        """State matrix of the reduced slow model: A11 - A12 A22^{-1} A21."""
        return self.a11 + self.a12 @ self.h_x

    @property
    def a_closed(self) -> np.ndarray:
        """Slow model closed with the fresh feedback: A_slow + B_slow K."""
        return self.a_slow + self.b_slow @ self.k_gain

    def flow_matrix(self, with_clock: bool = False) -> np.ndarray:
        """Closed-loop flow as a single matrix acting on stacked (x, y, e).

        Assembled from the defining maps: x' = A_cl x + A12 y + B_s K e,
        y' = A22 y / eps - Hx x', e' = -x'. The clock row (rate 1, no
        state dependence) is excluded; callers append the affine rate.
        """
        n_x, n_z = self.n_x, self.n_z
        n = 2 * n_x + n_z
        bsk = self.b_slow @ self.k_gain
        fx_block = np.zeros((n_x, n))
        fx_block[:, :n_x] = self.a_closed
        fx_block[:, n_x:n_x + n_z] = self.a12
        fx_block[:, n_x + n_z:] = bsk
        mat = np.zeros((n, n))
        mat[:n_x, :] = fx_block
        mat[n_x:n_x + n_z, :] = -self.h_x @ fx_block
        mat[n_x:n_x + n_z, n_x:n_x + n_z] += self.a22 / self.epsilon
        mat[n_x + n_z:, :] = -fx_block
        return mat

    def jump_gain(self) -> np.ndarray:
        """Jump increment matrix: y+ = y + (Hu K) e."""
        return self.h_u @ self.k_gain

    def with_epsilon(self, epsilon: float) -> "LinearPlantSpec":
        return replace(self, epsilon=float(epsilon))

    def as_plant_spec(self) -> PlantSpec:
        a11, a12, a21, a22 = self.a11, self.a12, self.a21, self.a22
        b1, b2, k = self.b1, self.b2, self.k_gain
        h_x, h_u = self.h_x, self.h_u

        return PlantSpec(
            n_x=self.n_x,
            n_z=self.n_z,
            n_u=self.n_u,
            f=lambda x, z, u: a11 @ x + a12 @ z + b1 @ u,
            g=lambda x, z, u: a21 @ x + a22 @ z + b2 @ u,
            h=lambda x, u: h_x @ x + h_u @ u,
            k=lambda xs: k @ xs,
            dh_dx=lambda x, u: h_x,
            epsilon=self.epsilon,
        )

    # -- JSON --------------------------------------------------------------

    @classmethod
    def from_dict(cls, cfg: dict) -> "LinearPlantSpec":
        required = ["a11", "a12", "a21", "a22", "b1", "b2", "k_gain", "epsilon"]
        missing = [key for key in required if key not in cfg]
        if missing:
            raise ConfigurationError(f"linear plant config missing fields: {missing}")
        return cls(
            a11=np.array(cfg["a11"], dtype=float),
            a12=np.array(cfg["a12"], dtype=float),
            a21=np.array(cfg["a21"], dtype=float),
            a22=np.array(cfg["a22"], dtype=float),
            b1=np.array(cfg["b1"], dtype=float),
            b2=np.array(cfg["b2"], dtype=float),
            k_gain=np.array(cfg["k_gain"], dtype=float),
            epsilon=float(cfg["epsilon"]),
        )

    @classmethod
    def from_json(cls, path) -> "LinearPlantSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "a11": self.a11.tolist(),
            "a12": self.a12.tolist(),
            "a21": self.a21.tolist(),
            "a22": self.a22.tolist(),
            "b1": self.b1.tolist(),
            "b2": self.b2.tolist(),
            "k_gain": self.k_gain.tolist(),
            "epsilon": self.epsilon,
        }
