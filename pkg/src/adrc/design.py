"""Controller synthesis for first- and second-order discrete linear ADRC.

Everything here is a pure function of the tuning inputs. The low-level
builders (:func:`discretize`, :func:`observer_gains`,
:func:`build_eso_matrices`, :func:`transform_eso`) do not force a float
dtype, so they can also be evaluated with ``mpmath`` scalars when an
extended-precision reference is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConstructionError, InvalidModel, InvalidTuning, SingularTransform

# Smallest admissible discrete observer pole; faster designs are rejected.
Z_ESO_MIN = 1e-6
DEFAULT_K_ESO = 5.0


def _finite(x) -> bool:
    try:
        return math.isfinite(float(x))
    except (TypeError, ValueError, OverflowError):
        return False


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TuningConfig:
    """User-facing tuning inputs.

    Either ``t_settle`` or explicit gains (``k_p`` and, for order 2,
    ``k_d``) must be given. ``s_eso`` pins the continuous observer pole in
    rad/s and takes precedence over ``k_eso``; it is how a retuned
    controller remembers an observer that no longer sits at
    ``k_eso * s_cl``.
    """

    order: int
    b0: float
    t_sample: float
    t_settle: float | None = None
    k_p: float | None = None
    k_d: float | None = None
    k_eso: float = DEFAULT_K_ESO
    s_eso: float | None = None

    def __post_init__(self):
        if self.order not in (1, 2):
            raise InvalidTuning(f"order must be 1 or 2, got {self.order!r}")
        if not _finite(self.b0) or self.b0 == 0:
            raise InvalidTuning(f"b0 must be finite and nonzero, got {self.b0!r}")
        if not _finite(self.t_sample) or self.t_sample <= 0:
            raise InvalidTuning(f"t_sample must be > 0, got {self.t_sample!r}")
        explicit = self.k_p is not None or self.k_d is not None
        if (self.t_settle is None) == (not explicit):
            raise InvalidTuning("give exactly one of t_settle or explicit gains")
        if self.t_settle is not None:
            if not _finite(self.t_settle) or self.t_settle <= 0:
                raise InvalidTuning(f"t_settle must be finite and > 0, got {self.t_settle!r}")
        else:
            if self.k_p is None or not _finite(self.k_p) or self.k_p <= 0:
                raise InvalidTuning(f"k_p must be finite and > 0, got {self.k_p!r}")
            if self.order == 2:
                if self.k_d is None or not _finite(self.k_d) or self.k_d <= 0:
                    raise InvalidTuning(f"k_d must be finite and > 0, got {self.k_d!r}")
            elif self.k_d is not None:
                raise InvalidTuning("k_d only applies to order 2")
        if not _finite(self.k_eso) or self.k_eso < 1:
            raise InvalidTuning(f"k_eso must be >= 1, got {self.k_eso!r}")
        if self.s_eso is not None and (not _finite(self.s_eso) or self.s_eso >= 0):
            raise InvalidTuning(f"s_eso must be a finite negative pole, got {self.s_eso!r}")

    def gains(self) -> "ClosedLoopGains":
        if self.t_settle is not None:
            return tune_gains(self.order, self.t_settle)
        if self.order == 1:
            return ClosedLoopGains(self.k_p, None, -self.k_p)
        # natural frequency of s^2 + k_d s + k_p; exact for a double pole
        return ClosedLoopGains(self.k_p, self.k_d, -math.sqrt(self.k_p))

    def observer_s_pole(self) -> float:
        if self.s_eso is not None:
            return self.s_eso
        return self.k_eso * self.gains().s_cl

    def z_eso(self) -> float:
        s = self.observer_s_pole()
        return observer_pole(s, 1.0, self.t_sample)


class ClosedLoopGains(NamedTuple):
    k_p: float
    k_d: float | None
    s_cl: float


@dataclass(frozen=True)
class DiscretePlantModel:
    a_d: np.ndarray
    b_d: np.ndarray
    c_d: np.ndarray

    @property
    def order(self) -> int:
        return len(self.b_d) - 1


@dataclass(frozen=True)
class EsoMatrices:
    """Current-observer matrices plus the matching state-feedback vector."""

    a_eso: np.ndarray
    b_eso: np.ndarray
    l_eso: np.ndarray
    w: np.ndarray
    transformed: bool = False
    z_eso: float = math.nan
    a_eso_minus_i: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.b_eso)
        if self.a_eso.shape != (n, n) or len(self.l_eso) != n or len(self.w) != n:
            raise ConstructionError(
                f"inconsistent ESO dimensions: A{self.a_eso.shape}, B{len(self.b_eso)}, "
                f"L{len(self.l_eso)}, w{len(self.w)}"
            )
        for name in ("a_eso", "b_eso", "l_eso", "w"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "a_eso_minus_i", _frozen(self.a_eso - np.eye(n)))

    @property
    def order(self) -> int:
        return len(self.b_eso) - 1


@dataclass(frozen=True)
class StateTransform:
    """Diagonal scaling ``x_tilde = t_inv @ x_hat``."""

    t_inv: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls, order: int) -> "StateTransform":
        return cls(_frozen(np.eye(order + 1)), _frozen(np.eye(order + 1)))

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.t_inv)


def tune_gains(order: int, t_settle: float) -> ClosedLoopGains:
    """Bandwidth parameterisation from a desired settling time."""
    if not _finite(t_settle) or t_settle <= 0:
        raise InvalidTuning(f"t_settle must be finite and > 0, got {t_settle!r}")
    if order == 1:
        s_cl = -4.0 / t_settle
        return ClosedLoopGains(-s_cl, None, s_cl)
    if order == 2:
        s_cl = -6.0 / t_settle
        return ClosedLoopGains(s_cl * s_cl, -2.0 * s_cl, s_cl)
    raise InvalidTuning(f"order must be 1 or 2, got {order!r}")


def observer_pole(s_cl: float, k_eso: float, t_sample: float) -> float:
    """Map the observer pole ``k_eso * s_cl`` to the z-plane."""
    if not (_finite(s_cl) and s_cl < 0):
        raise InvalidTuning(f"s_cl must be negative, got {s_cl!r}")
    if not (_finite(k_eso) and k_eso >= 1):
        raise InvalidTuning(f"k_eso must be >= 1, got {k_eso!r}")
    if not (_finite(t_sample) and t_sample > 0):
        raise InvalidTuning(f"t_sample must be > 0, got {t_sample!r}")
    z = math.exp(k_eso * s_cl * t_sample)
    if z >= 1.0:
        raise InvalidTuning("observer pole maps to z = 1; the observer would never correct")
    if z <= Z_ESO_MIN:
        raise InvalidTuning(
            f"observer pole z_eso = {z:.3g} is at or below {Z_ESO_MIN:g}; "
            "reduce k_eso or the closed-loop bandwidth, or sample faster"
        )
    return z


def observer_gains(order: int, z_eso, t_sample) -> np.ndarray:
    """Current-observer gain vector placing every ESO pole at ``z_eso``."""
    if not 0 < z_eso < 1:
        raise InvalidTuning(f"z_eso must lie in (0, 1), got {z_eso!r}")
    z, t = z_eso, t_sample
    if order == 1:
        return np.array([1 - z**2, (1 - z) ** 2 / t])
    if order == 2:
        return np.array([1 - z**3, 3 * (1 - z) ** 2 * (1 + z) / (2 * t), (1 - z) ** 3 / t**2])
    raise InvalidTuning(f"order must be 1 or 2, got {order!r}")


def discretize(order: int, b0, t_sample) -> DiscretePlantModel:
    """Exact ZOH discretisation of the ``order``-fold integrator chain
    extended by one disturbance state."""
    if order not in (1, 2):
        raise InvalidTuning(f"order must be 1 or 2, got {order!r}")
    if not _finite(b0) or b0 == 0:
        raise InvalidTuning(f"b0 must be finite and nonzero, got {b0!r}")
    if not _finite(t_sample) or t_sample <= 0:
        raise InvalidTuning(f"t_sample must be > 0, got {t_sample!r}")
    n = order + 1
    a = np.eye(n, k=1)
    b = np.array([b0 if i == order - 1 else 0 * b0 for i in range(n)])
    a_d = np.eye(n) + 0 * b0
    b_d = 0 * b
    a_pow = np.eye(n)  # A^(i-1)
    # A is nilpotent (A^n = 0), so the series ends after n terms
    for i in range(1, n + 1):
        coeff = t_sample**i / math.factorial(i)
        b_d = b_d + coeff * (a_pow @ b)
        a_pow = a_pow @ a
        a_d = a_d + coeff * a_pow
    c_d = np.zeros(n)
    c_d[0] = 1.0
    return DiscretePlantModel(a_d, b_d, c_d)


def feedback_vector(order: int, b0, k_p, k_d=None) -> np.ndarray:
    """State-feedback vector ``w`` for untransformed coordinates."""
    if order == 1:
        return np.array([k_p, 1]) / b0
    if k_d is None:
        raise InvalidTuning("order 2 requires k_d")
    return np.array([k_p, k_d, 1]) / b0


def build_eso_matrices(model: DiscretePlantModel, l_c, w, z_eso=math.nan) -> EsoMatrices:
    n = len(model.b_d)
    l_c = np.asarray(l_c)
    if model.a_d.shape != (n, n) or l_c.shape != (n,) or len(model.c_d) != n:
        raise ConstructionError(
            f"dimension mismatch: A_d{model.a_d.shape}, B_d({n},), L_c{l_c.shape}"
        )
    cd_ad = model.c_d @ model.a_d
    cd_bd = model.c_d @ model.b_d
    a_eso = model.a_d - np.outer(l_c, cd_ad)
    b_eso = model.b_d - l_c * cd_bd
    return EsoMatrices(a_eso, b_eso, l_c, np.asarray(w), transformed=False, z_eso=z_eso)


def build_transform(order: int, k_p, k_d=None, b0=1.0) -> StateTransform:
    gains = [k_p] if order == 1 else [k_p, k_d]
    if any(g is None or g == 0 for g in gains) or b0 == 0:
        raise SingularTransform(f"transform needs nonzero gains and b0, got {gains}, b0={b0!r}")
    d = np.array([*gains, 1]) / b0
    return StateTransform(_frozen(np.diag(d)), _frozen(np.diag(1 / d)))


def transform_eso(m: EsoMatrices, tr: StateTransform) -> EsoMatrices:
    """Re-express the observer in the lag-reduced coordinates of ``tr``."""
    if m.transformed:
        raise ConstructionError("ESO matrices are already transformed")
    if tr.t_inv.shape != m.a_eso.shape:
        raise ConstructionError("transform and ESO dimensions differ")
    return EsoMatrices(
        tr.t_inv @ m.a_eso @ tr.t,
        tr.t_inv @ m.b_eso,
        tr.t_inv @ m.l_eso,
        np.ones(m.order + 1),
        transformed=True,
        z_eso=m.z_eso,
    )


def suggest_b0(model_kind: str, K: float, T: float, D: float | None = None) -> float:
    """Approximate b0 for a dominant first- or second-order low-pass plant.

    ``model_kind`` is ``"first-order"`` or ``"second-order"``; the damping
    ``D`` of the second-order case does not enter the estimate.
    """
    if not _finite(K) or K == 0:
        raise InvalidModel(f"plant gain K must be finite and nonzero, got {K!r}")
    if not _finite(T) or T <= 0:
        raise InvalidModel(f"time constant T must be > 0, got {T!r}")
    kind = model_kind.lower().replace("_", "-")
    if kind in ("first-order", "1", "pt1"):
        return K / T
    if kind in ("second-order", "2", "pt2"):
        return K / T**2
    raise InvalidModel(f"unknown model kind {model_kind!r}")


@dataclass(frozen=True)
class Design:
    """All constants of one tuning, in both coordinate systems."""

    tuning: TuningConfig
    gains: ClosedLoopGains
    z_eso: float
    l_c: np.ndarray
    model: DiscretePlantModel
    eso: EsoMatrices
    transform: StateTransform

    @property
    def k_p_over_b0(self) -> float:
        return self.gains.k_p / self.tuning.b0

    def matrices(self, lag_reduced: bool = False) -> EsoMatrices:
        return transform_eso(self.eso, self.transform) if lag_reduced else self.eso


def synthesize(cfg: TuningConfig) -> Design:
    """Run the full design chain for ``cfg``."""
    g = cfg.gains()
    z = cfg.z_eso()
    l_c = observer_gains(cfg.order, z, cfg.t_sample)
    model = discretize(cfg.order, cfg.b0, cfg.t_sample)
    w = feedback_vector(cfg.order, cfg.b0, g.k_p, g.k_d)
    eso = build_eso_matrices(model, l_c, w, z)
    tr = build_transform(cfg.order, g.k_p, g.k_d, cfg.b0)
    return Design(cfg, g, z, _frozen(l_c), model, eso, tr)


def with_changes(cfg: TuningConfig, **changes) -> TuningConfig:
    """``dataclasses.replace`` that keeps the gains/t_settle exclusivity."""
    if "t_settle" in changes and changes["t_settle"] is not None:
        changes.setdefault("k_p", None)
        changes.setdefault("k_d", None)
    elif changes.get("k_p") is not None:
        changes.setdefault("t_settle", None)
    return replace(cfg, **changes)
