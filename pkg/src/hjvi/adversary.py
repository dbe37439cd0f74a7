"""Closed-form worst-case disturbances over admissible sets.

During robust training an adversary picks, at every step, the disturbance
xi in a compact admissible set Omega that minimizes the agent's Hamiltonian.
To first order each channel's objective is linear in xi, xi^T z(x), with a
channel-specific costate z built from the value gradient:

    state        z = grad V
    action       z = B^T grad V
    observation  z = (da/dx + sum_j u_j dB_j/dx)^T grad V
    model        z = (da/dtheta + sum_j u_j dB_j/dtheta)^T grad V

Minimizing a linear functional over a ball or a box has the usual exact
solutions: the ball adversary points along -z with full radius, the box
adversary sits at the corner mu - delta * sign(z). A zero costate makes
every feasible point equally (un)harmful and resolves to the set center.

The smoothly varying attack strength used during training is a reflected
Brownian motion on [0, 1] (uniform stationary distribution); its level
multiplies the state, action, and observation disturbances but never the
model bias, which represents a fixed physical offset rather than noise.
"""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class EnergyBall:
    """{xi : ||xi||_2 <= alpha}."""

    alpha: float

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("ball radius alpha must be >= 0")
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def degenerate(self) -> bool:
        return self.alpha == 0.0

    def contains(self, xi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return np.linalg.norm(np.asarray(xi, dtype=float), axis=-1) \
            <= self.alpha + tol

    def sample(self, rng: np.random.Generator, shape: tuple[int, ...],
               dim: int) -> np.ndarray:
        """Uniform draws from the ball (direction times radius^(1/dim) law)."""
        raw = rng.standard_normal(shape + (dim,))
        norm = np.linalg.norm(raw, axis=-1, keepdims=True)
        norm[norm == 0.0] = 1.0
        radius = self.alpha * rng.uniform(0.0, 1.0, shape + (1,)) ** (1.0 / dim)
        return radius * raw / norm


@dataclasses.dataclass(frozen=True)
class AmplitudeBox:
    """{xi : nu_min <= xi <= nu_max} elementwise."""

    nu_min: np.ndarray
    nu_max: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.nu_min, dtype=float))
        hi = np.atleast_1d(np.asarray(self.nu_max, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("nu_min and nu_max must share a shape")
        if np.any(lo > hi):
            raise ValueError("nu_min must be <= nu_max elementwise")
        object.__setattr__(self, "nu_min", lo)
        object.__setattr__(self, "nu_max", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.nu_max + self.nu_min)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.nu_max - self.nu_min)

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self.nu_min == 0.0) and np.all(self.nu_max == 0.0))

    def contains(self, xi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.all((xi >= self.nu_min - tol) & (xi <= self.nu_max + tol),
                      axis=-1)

    def sample(self, rng: np.random.Generator,
               shape: tuple[int, ...]) -> np.ndarray:
        return rng.uniform(self.nu_min, self.nu_max,
                           shape + self.nu_min.shape)


def minimize_linear(admissible: EnergyBall | AmplitudeBox,
                    z: np.ndarray) -> np.ndarray:
    """argmin_{xi in Omega} xi^T z, exactly; set center when z = 0."""
    z = np.asarray(z, dtype=float)
    if isinstance(admissible, EnergyBall):
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
        scale = np.where(norm > 0.0, admissible.alpha / np.where(norm > 0.0, norm, 1.0), 0.0)
        return -scale * z
    return admissible.center - admissible.half_width * np.sign(z)


# channel costates ------------------------------------------------------------

def action_costate(grad_v: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...i->...j", B, grad_v)


def observation_costate(grad_v: np.ndarray, da_dx: np.ndarray,
                        dB_dx: np.ndarray, u: np.ndarray) -> np.ndarray:
    df_dx = da_dx + np.einsum("...imj,...m->...ij", dB_dx, u)
    return np.einsum("...ij,...i->...j", df_dx, grad_v)


def model_costate(grad_v: np.ndarray, da_dtheta: np.ndarray,
                  dB_dtheta: np.ndarray, u: np.ndarray) -> np.ndarray:
    df_dth = da_dtheta + np.einsum("...imj,...m->...ij", dB_dtheta, u)
    return np.einsum("...ij,...i->...j", df_dth, grad_v)


# channel adversaries ---------------------------------------------------------

def state_adversary(grad_v: np.ndarray, ball: EnergyBall) -> np.ndarray:
    """Worst additive state disturbance: -alpha grad V / ||grad V||."""
    return minimize_linear(ball, grad_v)


def action_adversary(grad_v: np.ndarray, B: np.ndarray,
                     ball: EnergyBall) -> np.ndarray:
    return minimize_linear(ball, action_costate(grad_v, B))


def observation_adversary(grad_v: np.ndarray, da_dx: np.ndarray,
                          dB_dx: np.ndarray, u: np.ndarray,
                          ball: EnergyBall) -> np.ndarray:
    return minimize_linear(ball, observation_costate(grad_v, da_dx, dB_dx, u))


def model_adversary(grad_v: np.ndarray, da_dtheta: np.ndarray,
                    dB_dtheta: np.ndarray, u: np.ndarray,
                    box: AmplitudeBox) -> np.ndarray:
    """Worst parameter offset: the box corner mu - delta * sign(z_theta)."""
    return minimize_linear(box, model_costate(grad_v, da_dtheta, dB_dtheta, u))


def reflect01(x: np.ndarray) -> np.ndarray:
    """Fold the real line into [0, 1] by reflection at both boundaries."""
    y = np.mod(np.abs(x), 2.0)
    return np.where(y > 1.0, 2.0 - y, y)


class WienerModulation:
    """Reflected Brownian motion on [0, 1] scaling the attack amplitude.

    level' = reflect(level + sqrt(dt) * sigma * N(0, 1)); the stationary
    distribution is uniform on [0, 1]. sigma = 0 freezes the level. The
    level may be a batch of independent processes (one per rollout).
    """

    def __init__(self, sigma: float = 1.0,
                 level: float | np.ndarray = 0.5):
        if sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        self.sigma = float(sigma)
        self.level = np.asarray(level, dtype=float)
        if np.any(self.level < 0.0) or np.any(self.level > 1.0):
            raise ValueError("level must start inside [0, 1]")

    def advance(self, dt: float, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(self.level.shape)
        self.level = reflect01(self.level + np.sqrt(dt) * self.sigma * noise)
        return self.level
