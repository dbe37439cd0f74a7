"""Convex action penalties, their conjugates, and closed-form greedy actions.

For a strictly convex action cost g the greedy continuous-time action given a
value gradient is u* = grad g*(B(x)^T grad V(x)), where g* is the convex
conjugate. Each family below ships the exact triple (cost, conjugate, policy
map) so the argmax over actions is never computed numerically:

    family      dom(g0)        g0(u)                        grad g0*(w)
    linear      R^m            u^T R u / 2                  R^-1 w
    logistic    (0, 1)         u ln u + (1-u) ln(1-u)       sigmoid(w)
    atan        (-pi/2, pi/2)  -ln cos u                    atan(w)
    tanh        (-1, 1)        logistic((u+1)/2) + ln 2     tanh(w)
    bang_bang   [-1, 1]        0 (indicator)                sign(w)
    bang_lin    [-1, 1]        u^2 / 2 (restricted)         clip(w, -1, 1)

A spec composes a base family with an action scale a > 0 (per-dimension for
the separable families, scalar for linear), a cost scale b > 0, and an action
shift c. The canonical composed forms are

    cost(u)      = b * sum_i a_i * (g0((u_i+c_i)/a_i) - g0(c_i/a_i))
    policy(w)    = a * grad g0*(w / b) - c
    conjugate(w) = b * sum_i a_i * g0*(w_i / b) - c^T w + b * sum_i a_i * g0(c_i/a_i)
    grad cost(u) = b * grad g0((u+c)/a)

which stay an exact Fenchel pair: cost(policy(w)) + conjugate(w) equals
w^T policy(w) for every costate w (the anchor constants cancel; dropping the
g0(c/a) term from the conjugate, as is sometimes done, breaks this for any
nonzero shift). Scaling composes associatively: applying action scale alpha,
then cost scale beta, then shift gamma to an existing spec maps
(a, b, c) -> (alpha a, beta b, alpha c + gamma).

The logistic family is asymmetric by construction (minimum -ln 2 at u = 1/2);
the tanh family is its centered, symmetric cousin with cost(0) = 0. Barrier
families saturate in floating point for |w| beyond ~37; policies clamp at a
distance of 1e-15 from the boundary so returned actions stay strictly
interior, at the price of a <= |w| * 1e-15 Fenchel defect far in the tails.
"""

from __future__ import annotations

import dataclasses

import numpy as np

FAMILIES = ("linear", "logistic", "atan", "tanh", "bang_bang", "bang_lin")
_SEPARABLE = ("logistic", "atan", "tanh", "bang_bang", "bang_lin")
_BARRIER = ("logistic", "atan", "tanh")  # open domain, infinite wall
_SAT = 1.0 - 1e-15  # strict-interior clamp for saturating policies


class DomainError(ValueError):
    """An action lies outside the domain of the composed cost."""


def _sigmoid(w):
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    pos = w >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-w[pos]))
    ew = np.exp(w[~pos])
    out[~pos] = ew / (1.0 + ew)
    return out


def _logcosh(w):
    w = np.abs(np.asarray(w, dtype=float))
    return w + np.log1p(np.exp(-2.0 * w)) - np.log(2.0)


def _xlogx(v):
    """v * ln v, continuously extended to 0 at v = 0."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = v[pos] * np.log(v[pos])
    return out


def _logistic_entropy(v):
    return _xlogx(v) + _xlogx(1.0 - v)


# base-family primitives (separable families; elementwise in v or w)

def _g0(family: str, v: np.ndarray) -> np.ndarray:
    if family == "logistic":
        return _logistic_entropy(v)
    if family == "atan":
        return -np.log(np.cos(v))
    if family == "tanh":
        return _logistic_entropy((v + 1.0) / 2.0) + np.log(2.0)
    if family == "bang_bang":
        return np.zeros_like(np.asarray(v, dtype=float))
    if family == "bang_lin":
        return 0.5 * np.asarray(v, dtype=float) ** 2
    raise AssertionError(family)


def _grad_g0(family: str, v: np.ndarray) -> np.ndarray:
    if family == "logistic":
        return np.log(v) - np.log1p(-v)
    if family == "atan":
        return np.tan(v)
    if family == "tanh":
        # d/dv of logistic((v+1)/2): half the logit of (v+1)/2 = atanh(v)
        return np.arctanh(v)
    if family == "bang_lin":
        return np.asarray(v, dtype=float)
    raise NotImplementedError(
        f"grad_cost is undefined for the {family} family")


def _policy0(family: str, w: np.ndarray) -> np.ndarray:
    if family == "logistic":
        return np.clip(_sigmoid(w), 1e-15, _SAT)
    if family == "atan":
        return np.arctan(w)
    if family == "tanh":
        return np.clip(np.tanh(w), -_SAT, _SAT)
    if family == "bang_bang":
        return np.sign(w)
    if family == "bang_lin":
        return np.clip(w, -1.0, 1.0)
    raise AssertionError(family)


def _gstar0(family: str, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if family == "logistic":
        return np.logaddexp(0.0, w)
    if family == "atan":
        return w * np.arctan(w) - 0.5 * np.log1p(w ** 2)
    if family == "tanh":
        return _logcosh(w)
    if family == "bang_bang":
        return np.abs(w)
    if family == "bang_lin":
        aw = np.abs(w)
        return np.where(aw <= 1.0, 0.5 * w ** 2, aw - 0.5)
    raise AssertionError(family)


# base domains as (lo, hi, open?)
_DOM0 = {
    "linear": (-np.inf, np.inf, False),
    "logistic": (0.0, 1.0, True),
    "atan": (-np.pi / 2.0, np.pi / 2.0, True),
    "tanh": (-1.0, 1.0, True),
    "bang_bang": (-1.0, 1.0, False),
    "bang_lin": (-1.0, 1.0, False),
}


@dataclasses.dataclass(frozen=True)
class ActionCostSpec:
    """A base family plus canonical (action scale, cost scale, shift) triple.

    r is the SPD weight matrix of the linear family and must be None
    otherwise. action_scale may be per-dimension for the separable families
    but must be scalar (all entries equal) for linear, where per-axis scaling
    would not commute with the coupling through R.
    """

    family: str
    dim: int = 1
    r: np.ndarray | None = None
    action_scale: np.ndarray = 1.0  # type: ignore[assignment]
    cost_scale: float = 1.0
    action_shift: np.ndarray = 0.0  # type: ignore[assignment]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                f"unknown action-cost family {self.family!r}; "
                f"known families: {list(FAMILIES)}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        scale = np.broadcast_to(np.asarray(self.action_scale, dtype=float),
                                (self.dim,)).copy()
        shift = np.broadcast_to(np.asarray(self.action_shift, dtype=float),
                                (self.dim,)).copy()
        if not np.all(scale > 0.0):
            raise ValueError("action_scale must be strictly positive")
        if not self.cost_scale > 0.0:
            raise ValueError("cost_scale must be strictly positive")
        object.__setattr__(self, "action_scale", scale)
        object.__setattr__(self, "action_shift", shift)
        object.__setattr__(self, "cost_scale", float(self.cost_scale))
        if self.family == "linear":
            if self.r is None:
                raise ValueError("linear family requires the weight matrix r")
            r = np.asarray(self.r, dtype=float)
            if r.shape != (self.dim, self.dim):
                raise ValueError(f"r must have shape ({self.dim}, {self.dim})")
            if not np.allclose(r, r.T, atol=1e-12):
                raise ValueError("r must be symmetric")
            if np.any(np.linalg.eigvalsh(r) <= 0.0):
                raise ValueError("r must be positive definite")
            if not np.all(scale == scale[0]):
                raise ValueError(
                    "linear family requires a scalar action_scale")
            object.__setattr__(self, "r", r)
        elif self.r is not None:
            raise ValueError(f"family {self.family!r} does not take r")
        # the shift anchor g0(c/a) must be finite (closure for the closed and
        # logistic-extended domains, strict interior for atan/tanh)
        lo, hi, is_open = _DOM0[self.family]
        anchor = shift / scale
        strict = self.family in ("atan", "tanh")
        inside = (anchor > lo) & (anchor < hi) if strict else \
            (anchor >= lo) & (anchor <= hi)
        if not np.all(inside):
            raise ValueError(
                f"action_shift/action_scale = {anchor} leaves the domain of "
                f"the {self.family} family {(lo, hi)}")

    # -- domain of the composed cost -----------------------------------------
    def domain(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension (lo, hi) of dom(g); open for the barrier families."""
        lo, hi, _ = _DOM0[self.family]
        return (self.action_scale * lo - self.action_shift,
                self.action_scale * hi - self.action_shift)

    @property
    def domain_is_open(self) -> bool:
        return _DOM0[self.family][2]

    def contains(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self.domain()
        u = np.asarray(u, dtype=float)
        if self.domain_is_open:
            ok = (u > lo) & (u < hi)
        else:
            ok = (u >= lo) & (u <= hi)
        return np.all(ok, axis=-1)

    def _anchor(self) -> np.ndarray:
        """g0(c/a) per dimension (the shift anchor constant)."""
        if self.family == "linear":
            v = self.action_shift / self.action_scale
            return 0.5 * v @ self.r @ v * np.ones(1)
        return _g0(self.family, self.action_shift / self.action_scale)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "dim": self.dim,
            "r": None if self.r is None else [list(map(float, row)) for row in self.r],
            "action_scale": [float(v) for v in self.action_scale],
            "cost_scale": float(self.cost_scale),
            "action_shift": [float(v) for v in self.action_shift],
        }

    @staticmethod
    def from_dict(d: dict) -> "ActionCostSpec":
        return ActionCostSpec(
            family=d["family"], dim=int(d["dim"]),
            r=None if d.get("r") is None else np.asarray(d["r"], dtype=float),
            action_scale=np.asarray(d["action_scale"], dtype=float),
            cost_scale=float(d["cost_scale"]),
            action_shift=np.asarray(d["action_shift"], dtype=float))


def cost(spec: ActionCostSpec, u: np.ndarray) -> np.ndarray:
    """g(u); raises DomainError outside dom(g). Zero at u = 0 when c = 0
    for every family except logistic (whose domain excludes 0)."""
    u = np.asarray(u, dtype=float)
    if not np.all(spec.contains(u)):
        raise DomainError(
            f"action outside dom(g) for family {spec.family!r}")
    a, b, c = spec.action_scale, spec.cost_scale, spec.action_shift
    if spec.family == "linear":
        v = (u + c) / a
        quad = 0.5 * np.einsum("...i,ij,...j->...", v, spec.r, v)
        anchor = spec._anchor()[0]
        return b * a[0] * (quad - anchor)
    v = (u + c) / a
    per_dim = _g0(spec.family, v) - _g0(spec.family, c / a)
    return b * np.sum(a * per_dim, axis=-1)


def grad_cost(spec: ActionCostSpec, u: np.ndarray) -> np.ndarray:
    """grad g(u) for u strictly inside dom(g); the exact inverse of policy
    for the strictly convex families. Undefined for bang_bang."""
    u = np.asarray(u, dtype=float)
    lo, hi = spec.domain()
    if not np.all((u > lo) & (u < hi)):
        raise DomainError(
            f"grad_cost needs u strictly inside dom(g) for {spec.family!r}")
    a, b, c = spec.action_scale, spec.cost_scale, spec.action_shift
    if spec.family == "linear":
        return (b / a[0]) * np.einsum("ij,...j->...i", spec.r, u + c)
    return b * _grad_g0(spec.family, (u + c) / a)


def policy(spec: ActionCostSpec, w: np.ndarray) -> np.ndarray:
    """argmax_u (w^T u - g(u)) in closed form: a * grad g0*(w/b) - c.

    Elementwise nondecreasing in w; lands strictly inside dom(g) for the
    barrier families and never needs clipping to the feasible set. sign(0)
    is 0 for bang_bang (the zero-costate tie breaks to the domain center).
    """
    w = np.asarray(w, dtype=float)
    a, b, c = spec.action_scale, spec.cost_scale, spec.action_shift
    if spec.family == "linear":
        return (a[0] / b) * np.linalg.solve(spec.r, w[..., None])[..., 0] - c
    return a * _policy0(spec.family, w / b) - c


def conjugate(spec: ActionCostSpec, w: np.ndarray) -> np.ndarray:
    """g*(w) = max_u (w^T u - g(u)), exactly matching cost/policy so that
    cost(policy(w)) + conjugate(w) == w^T policy(w) (Fenchel-Young)."""
    w = np.asarray(w, dtype=float)
    a, b, c = spec.action_scale, spec.cost_scale, spec.action_shift
    if spec.family == "linear":
        rinv_w = np.linalg.solve(spec.r, w[..., None])[..., 0]
        base = (a[0] / (2.0 * b)) * np.einsum("...i,...i->...", w, rinv_w)
        return base - w @ c + b * a[0] * spec._anchor()[0]
    per_dim = a * _gstar0(spec.family, w / b)
    anchor = a * _g0(spec.family, c / a)
    return b * np.sum(per_dim, axis=-1) - np.sum(w * c, axis=-1) \
        + b * np.sum(anchor)


def compose(spec: ActionCostSpec,
            action_scale: float | np.ndarray | None = None,
            cost_scale: float | None = None,
            action_shift: float | np.ndarray | None = None) -> ActionCostSpec:
    """Apply action scaling, then cost scaling, then an action shift on top
    of an existing spec: (a, b, c) -> (alpha a, beta b, alpha c + gamma)."""
    alpha = np.ones(spec.dim) if action_scale is None else \
        np.broadcast_to(np.asarray(action_scale, dtype=float), (spec.dim,))
    beta = 1.0 if cost_scale is None else float(cost_scale)
    gamma = np.zeros(spec.dim) if action_shift is None else \
        np.broadcast_to(np.asarray(action_shift, dtype=float), (spec.dim,))
    return ActionCostSpec(
        family=spec.family, dim=spec.dim, r=spec.r,
        action_scale=alpha * spec.action_scale,
        cost_scale=beta * spec.cost_scale,
        action_shift=alpha * spec.action_shift + gamma)
