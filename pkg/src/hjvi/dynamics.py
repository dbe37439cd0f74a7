"""Control-affine rigid-body models.

Every system here has deterministic continuous-time dynamics of the form

    dx/dt = a(x; theta) + B(x; theta) u

with state x = (q, qd) stacking generalized positions and velocities, a named
physical parameter vector theta, and a control input u (torque, force, or motor
voltage depending on the system). Drift, control matrix, and all four Jacobian
blocks (da/dx, dB/dx, da/dtheta, dB/dtheta) are analytic and broadcast over
leading batch dimensions of both x and theta.

The two-joint systems (cartpole, Furuta pendulum) are implemented in
mass-matrix form M(q) qdd = r(q, qd) + b u and solved with the closed-form
2x2 inverse; their Jacobians use the identity

    d(M^-1 v)/dy = M^-1 (dv/dy - dM/dy (M^-1 v))

so only the partials of the mass-matrix entries and force terms are written
out by hand. All closed forms are validated against finite differences in the
test suite.

Angles are measured from the upright equilibrium (theta = 0 is up, theta = pi
hangs down). Revolute coordinates live on the circle: `step` returns them
wrapped to [-pi, pi), which every downstream consumer (sin/cos features,
state reward, success detection) treats as a view of the same physical state.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

BLOWUP_LIMIT = 1e8


class DynamicsError(RuntimeError):
    """Raised when integration produces non-finite or absurdly large states."""


class JointKind(str, enum.Enum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"


@dataclasses.dataclass(frozen=True)
class State:
    """Positions and velocities with per-joint annotations.

    Numeric code operates on flat arrays (positions then velocities); this
    wrapper exists for readable construction and round-tripping.
    """

    q: np.ndarray
    qd: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.q), np.atleast_1d(self.qd)],
                              axis=-1)

    @staticmethod
    def from_vector(x: np.ndarray) -> "State":
        x = np.asarray(x, dtype=float)
        n_q = x.shape[-1] // 2
        return State(q=x[..., :n_q], qd=x[..., n_q:])


@dataclasses.dataclass(frozen=True)
class DisturbanceBundle:
    """Additive adversarial inputs applied during one Euler step.

    state:        added to dx/dt              (xi_x)
    action:       added to u before dynamics  (xi_u)
    observation:  added to x before dynamics  (xi_o)
    model:        added to theta              (xi_theta)

    Absent channels are None and are skipped entirely, so an empty bundle is
    bit-identical to no bundle at all.
    """

    state: np.ndarray | None = None
    action: np.ndarray | None = None
    observation: np.ndarray | None = None
    model: np.ndarray | None = None

    def any(self) -> bool:
        return any(v is not None for v in
                   (self.state, self.action, self.observation, self.model))


@dataclasses.dataclass(frozen=True)
class Jacobians:
    """Analytic derivative blocks of the control-affine dynamics."""

    da_dx: np.ndarray      # (..., n_x, n_x)
    dB_dx: np.ndarray      # (..., n_x, n_u, n_x)
    da_dtheta: np.ndarray  # (..., n_x, n_p)
    dB_dtheta: np.ndarray  # (..., n_x, n_u, n_p)


def wrap_angle(a: np.ndarray) -> np.ndarray:
    """Map angles to [-pi, pi); exact identity for angles already in range
    (the mod round trip would otherwise inject one ulp of noise, which
    matters when comparing against closed thresholds)."""
    a = np.asarray(a)
    return np.where((a >= -np.pi) & (a < np.pi),
                    a, np.mod(a + np.pi, 2.0 * np.pi) - np.pi)


class ControlAffineModel:
    """Base class: registry metadata plus the shared step/sampling logic."""

    name: str = ""
    param_names: tuple[str, ...] = ()
    joint_kinds: tuple[JointKind, ...] = ()

    def __init__(self, theta: np.ndarray, x_min: np.ndarray, x_max: np.ndarray,
                 x_des: np.ndarray, u_max: float, x_start: np.ndarray):
        self.theta = np.asarray(theta, dtype=float)
        self.x_min = np.asarray(x_min, dtype=float)
        self.x_max = np.asarray(x_max, dtype=float)
        self.x_des = np.asarray(x_des, dtype=float)
        self.x_start = np.asarray(x_start, dtype=float)
        self.u_max = float(u_max)
        self.n_q = len(self.joint_kinds)
        self.n_x = 2 * self.n_q
        self.n_p = len(self.param_names)
        if self.x_min.shape != (self.n_x,) or self.x_max.shape != (self.n_x,):
            raise ValueError("domain bounds must have shape (n_x,)")

    # -- interface implemented by subclasses ---------------------------------
    n_u: int = 1

    def drift(self, x: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def control_matrix(self, x: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, x: np.ndarray, u: np.ndarray,
                  theta: np.ndarray | None = None) -> Jacobians:
        raise NotImplementedError

    # -- shared logic ---------------------------------------------------------
    def _theta(self, theta: np.ndarray | None) -> np.ndarray:
        return self.theta if theta is None else np.asarray(theta, dtype=float)

    def theta_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.param_names, self.theta)}

    def f(self, x: np.ndarray, u: np.ndarray,
          theta: np.ndarray | None = None) -> np.ndarray:
        """Full control-affine vector field a(x) + B(x) u."""
        B = self.control_matrix(x, theta)
        return self.drift(x, theta) + np.einsum("...ij,...j->...i", B, u)

    def step(self, x: np.ndarray, u: np.ndarray, dt: float,
             disturbance: DisturbanceBundle | None = None,
             theta: np.ndarray | None = None) -> np.ndarray:
        """One explicit Euler step with optional adversarial inputs.

        Revolute positions are wrapped to [-pi, pi) and velocities clipped to
        the domain bounds; other position coordinates are left free. Raises
        DynamicsError on non-finite or blown-up states.
        """
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        th = self._theta(theta)
        d = disturbance
        if d is not None:
            if d.model is not None:
                th = th + d.model
            if d.observation is not None:
                x_dyn = x + d.observation
            else:
                x_dyn = x
            u_dyn = u + d.action if d.action is not None else u
            dx = self.f(x_dyn, u_dyn, th)
            if d.state is not None:
                dx = dx + d.state
        else:
            dx = self.f(x, u, th)
        x_next = x + dt * dx
        x_next = self.normalize(x_next)
        if not np.all(np.isfinite(x_next)) or np.any(np.abs(x_next) > BLOWUP_LIMIT):
            raise DynamicsError(f"{self.name}: state blew up during integration")
        return x_next

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Wrap revolute positions, clip velocities to the domain."""
        x = np.array(x, dtype=float, copy=True)
        for i, kind in enumerate(self.joint_kinds):
            if kind is JointKind.REVOLUTE:
                x[..., i] = wrap_angle(x[..., i])
        lo = self.x_min[self.n_q:]
        hi = self.x_max[self.n_q:]
        x[..., self.n_q:] = np.clip(x[..., self.n_q:], lo, hi)
        return x

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n states uniform over the training domain."""
        return rng.uniform(self.x_min, self.x_max, size=(n, self.n_x))

    def angle_dims(self) -> list[int]:
        return [i for i, k in enumerate(self.joint_kinds) if k is JointKind.REVOLUTE]

    # -- helpers for the 2-DOF mass-matrix systems ---------------------------
    @staticmethod
    def _solve2(M11, M12, M22, v1, v2):
        """Closed-form solve of the symmetric 2x2 system M w = v."""
        det = M11 * M22 - M12 * M12
        return (M22 * v1 - M12 * v2) / det, (M11 * v2 - M12 * v1) / det


class Pendulum(ControlAffineModel):
    """Torque-limited pendulum, point mass m at distance l, angle from upright.

    thdd = (m g l sin th + u) / (m l^2). The torque limit (u_max = 2.5 with
    m g l ~ 4.9) is about half the gravity torque, so swing-up needs pumping.
    """

    name = "pendulum"
    param_names = ("mass", "length", "gravity")
    joint_kinds = (JointKind.REVOLUTE,)
    n_u = 1

    def __init__(self, **overrides):
        theta = _apply_overrides([1.0, 0.5, 9.81], self.param_names, overrides)
        super().__init__(theta=theta,
                         x_min=np.array([-np.pi, -10.0]),
                         x_max=np.array([np.pi, 10.0]),
                         x_des=np.array([0.0, 0.0]),
                         u_max=2.5,
                         x_start=np.array([np.pi, 0.0]))

    def drift(self, x, theta=None):
        th = self._theta(theta)
        m, l, g = th[..., 0], th[..., 1], th[..., 2]
        ang, vel = x[..., 0], x[..., 1]
        acc = m * g * l * np.sin(ang) / (m * l * l)
        return np.stack(np.broadcast_arrays(vel, acc), axis=-1)

    def control_matrix(self, x, theta=None):
        th = self._theta(theta)
        m, l = th[..., 0], th[..., 1]
        inv_inertia = 1.0 / (m * l * l)
        zero = np.zeros_like(inv_inertia * x[..., 0])
        col = np.stack(np.broadcast_arrays(zero, inv_inertia + zero), axis=-1)
        return col[..., None]

    def jacobians(self, x, u, theta=None):
        th = self._theta(theta)
        m, l, g = th[..., 0], th[..., 1], th[..., 2]
        ang = x[..., 0]
        batch = np.broadcast_shapes(ang.shape, m.shape)
        da_dx = np.zeros(batch + (2, 2))
        da_dx[..., 0, 1] = 1.0
        da_dx[..., 1, 0] = g * np.cos(ang) / l
        dB_dx = np.zeros(batch + (2, 1, 2))
        da_dth = np.zeros(batch + (2, 3))
        sin = np.sin(ang)
        da_dth[..., 1, 1] = -g * sin / l ** 2
        da_dth[..., 1, 2] = sin / l
        dB_dth = np.zeros(batch + (2, 1, 3))
        dB_dth[..., 1, 0, 0] = -1.0 / (m ** 2 * l ** 2)
        dB_dth[..., 1, 0, 1] = -2.0 / (m * l ** 3)
        return Jacobians(da_dx, dB_dx, da_dth, dB_dth)


class DoubleIntegrator(ControlAffineModel):
    """Unit point mass on a line: pdd = u / mass. The LQR sanity system."""

    name = "double_integrator"
    param_names = ("mass",)
    joint_kinds = (JointKind.PRISMATIC,)
    n_u = 1

    def __init__(self, **overrides):
        theta = _apply_overrides([1.0], self.param_names, overrides)
        super().__init__(theta=theta,
                         x_min=np.array([-2.0, -2.0]),
                         x_max=np.array([2.0, 2.0]),
                         x_des=np.array([0.0, 0.0]),
                         u_max=10.0,
                         x_start=np.array([1.5, 0.0]))

    def drift(self, x, theta=None):
        th = self._theta(theta)
        vel = x[..., 1]
        zero = np.zeros(np.broadcast_shapes(vel.shape, th[..., 0].shape))
        return np.stack(np.broadcast_arrays(vel, zero), axis=-1)

    def control_matrix(self, x, theta=None):
        th = self._theta(theta)
        inv_m = 1.0 / th[..., 0]
        zero = np.zeros_like(inv_m * x[..., 0])
        col = np.stack(np.broadcast_arrays(zero, inv_m + zero), axis=-1)
        return col[..., None]

    def jacobians(self, x, u, theta=None):
        th = self._theta(theta)
        m = th[..., 0]
        batch = np.broadcast_shapes(x[..., 0].shape, m.shape)
        da_dx = np.zeros(batch + (2, 2))
        da_dx[..., 0, 1] = 1.0
        dB_dx = np.zeros(batch + (2, 1, 2))
        da_dth = np.zeros(batch + (2, 1))
        dB_dth = np.zeros(batch + (2, 1, 1))
        dB_dth[..., 1, 0, 0] = -1.0 / m ** 2
        return Jacobians(da_dx, dB_dx, da_dth, dB_dth)


class _TwoDof(ControlAffineModel):
    """Shared machinery for M(q) qdd = r0(q, qd) + b u systems with 2 joints.

    Subclasses provide _terms (mass-matrix entries, force terms, input column)
    and _partials (their derivatives w.r.t. the four state variables and each
    parameter). The base assembles drift, control matrix, and Jacobians.
    """

    def _terms(self, x, th):
        """Return (M11, M12, M22, r1, r2, b1); b2 is identically zero here."""
        raise NotImplementedError

    def _partials(self, x, th):
        """Return (dM, dr, db) stacked over d/d(p, q, pd, qd) then d/d(theta).

        dM: (..., 3, 4 + n_p) for entries (M11, M12, M22)
        dr: (..., 2, 4 + n_p)
        db: (..., 2, 4 + n_p)
        """
        raise NotImplementedError

    def drift(self, x, theta=None):
        th = self._theta(theta)
        M11, M12, M22, r1, r2, _ = self._terms(x, th)
        acc1, acc2 = self._solve2(M11, M12, M22, r1, r2)
        v1, v2 = x[..., 2], x[..., 3]
        return np.stack(np.broadcast_arrays(v1, v2, acc1, acc2), axis=-1)

    def control_matrix(self, x, theta=None):
        th = self._theta(theta)
        M11, M12, M22, _, _, b1 = self._terms(x, th)
        c1, c2 = self._solve2(M11, M12, M22, b1, np.zeros_like(b1))
        zero = np.zeros_like(c1)
        col = np.stack(np.broadcast_arrays(zero, zero, c1, c2), axis=-1)
        return col[..., None]

    def jacobians(self, x, u, theta=None):
        th = self._theta(theta)
        M11, M12, M22, r1, r2, b1 = self._terms(x, th)
        b2 = np.zeros_like(b1)
        qdd1, qdd2 = self._solve2(M11, M12, M22, r1, r2)
        Bc1, Bc2 = self._solve2(M11, M12, M22, b1, b2)
        dM, dr, db = self._partials(x, th)
        n_d = 4 + self.n_p

        # d(M^-1 v)/dy = M^-1 (dv/dy - dM/dy (M^-1 v)), broadcast over y.
        def solved_partials(w1, w2, dv):
            # dM/dy @ w for symmetric M parameterized by (M11, M12, M22)
            dMw1 = dM[..., 0, :] * w1[..., None] + dM[..., 1, :] * w2[..., None]
            dMw2 = dM[..., 1, :] * w1[..., None] + dM[..., 2, :] * w2[..., None]
            return self._solve2(M11[..., None], M12[..., None], M22[..., None],
                                dv[..., 0, :] - dMw1, dv[..., 1, :] - dMw2)

        dqdd1, dqdd2 = solved_partials(qdd1, qdd2, dr)
        dB1, dB2 = solved_partials(Bc1, Bc2, db)

        batch = np.broadcast_shapes(x[..., 0].shape, th[..., 0].shape)
        da = np.zeros(batch + (4, n_d))
        da[..., 0, 2] = 1.0
        da[..., 1, 3] = 1.0
        da[..., 2, :] = dqdd1
        da[..., 3, :] = dqdd2
        dB = np.zeros(batch + (4, n_d))
        dB[..., 2, :] = dB1
        dB[..., 3, :] = dB2
        return Jacobians(da_dx=da[..., :4],
                         dB_dx=dB[..., :, None, :4],
                         da_dtheta=da[..., 4:],
                         dB_dtheta=dB[..., :, None, 4:])


class Cartpole(_TwoDof):
    """Cart with a uniform pole, driven by a DC motor voltage.

    State (p, th, pd, thd): cart position, pole angle from upright. The motor
    contributes force kf * u and a back-EMF damping term -cv * pd. Pole of
    length Lp pivots at the cart, com at Lp/2, pivot inertia mp Lp^2 / 3.
    Parameter magnitudes follow a bench-scale linear servo rig.
    """

    name = "cartpole"
    param_names = ("cart_mass", "pole_mass", "pole_length", "gravity",
                   "motor_gain", "motor_damping")
    joint_kinds = (JointKind.PRISMATIC, JointKind.REVOLUTE)
    n_u = 1

    def __init__(self, **overrides):
        theta = _apply_overrides([0.57, 0.23, 0.64, 9.81, 1.74, 4.36],
                                 self.param_names, overrides)
        super().__init__(theta=theta,
                         x_min=np.array([-0.5, -np.pi, -3.0, -12.0]),
                         x_max=np.array([0.5, np.pi, 3.0, 12.0]),
                         x_des=np.array([0.0, 0.0, 0.0, 0.0]),
                         u_max=6.0,
                         x_start=np.array([0.0, np.pi, 0.0, 0.0]))

    def _terms(self, x, th):
        mc, mp, Lp = th[..., 0], th[..., 1], th[..., 2]
        g, kf, cv = th[..., 3], th[..., 4], th[..., 5]
        ang, pd, thd = x[..., 1], x[..., 2], x[..., 3]
        s, c = np.sin(ang), np.cos(ang)
        lp = Lp / 2.0
        Jp = mp * Lp ** 2 / 3.0
        h = mp * lp
        M11 = mc + mp + np.zeros_like(s * mc)
        M12 = h * c
        M22 = Jp + np.zeros_like(M12)
        r1 = -cv * pd + h * s * thd ** 2
        r2 = mp * g * lp * s
        b1 = kf + np.zeros_like(M12)
        return M11, M12, M22, r1, r2, b1

    def _partials(self, x, th):
        mc, mp, Lp = th[..., 0], th[..., 1], th[..., 2]
        g, kf, cv = th[..., 3], th[..., 4], th[..., 5]
        ang, pd, thd = x[..., 1], x[..., 2], x[..., 3]
        s, c = np.sin(ang), np.cos(ang)
        lp = Lp / 2.0
        h = mp * lp
        batch = np.broadcast_shapes(ang.shape, mc.shape)
        n_d = 4 + self.n_p
        dM = np.zeros(batch + (3, n_d))
        dr = np.zeros(batch + (2, n_d))
        db = np.zeros(batch + (2, n_d))
        # state partials: columns 0..3 are d/d(p, th, pd, thd)
        dM[..., 1, 1] = -h * s
        dr[..., 0, 1] = h * c * thd ** 2
        dr[..., 1, 1] = mp * g * lp * c
        dr[..., 0, 2] = -cv
        dr[..., 0, 3] = 2.0 * h * s * thd
        # parameter partials: columns 4.. follow param_names order
        dM[..., 0, 4] = 1.0                                   # cart_mass
        dM[..., 0, 5] = 1.0                                   # pole_mass
        dM[..., 1, 5] = lp * c
        dM[..., 2, 5] = Lp ** 2 / 3.0
        dr[..., 0, 5] = lp * s * thd ** 2
        dr[..., 1, 5] = g * lp * s
        dM[..., 1, 6] = (mp / 2.0) * c                        # pole_length
        dM[..., 2, 6] = 2.0 * mp * Lp / 3.0
        dr[..., 0, 6] = (mp / 2.0) * s * thd ** 2
        dr[..., 1, 6] = mp * g * s / 2.0
        dr[..., 1, 7] = mp * lp * s                           # gravity
        db[..., 0, 8] = 1.0                                   # motor_gain
        dr[..., 0, 9] = -pd                                   # motor_damping
        return dM, dr, db


class Furuta(_TwoDof):
    """Rotary inverted pendulum: horizontal arm, pendulum from its tip.

    State (ph, th, phd, thd): arm angle, pendulum angle from upright. The
    motor torque on the arm is kt * u - cd * phd (voltage input with back-EMF
    damping). Both links are uniform rods. Parameter magnitudes follow a
    small desktop rig.
    """

    name = "furuta"
    param_names = ("arm_mass", "arm_length", "pole_mass", "pole_length",
                   "gravity", "motor_gain", "motor_damping")
    joint_kinds = (JointKind.REVOLUTE, JointKind.REVOLUTE)
    n_u = 1

    def __init__(self, **overrides):
        theta = _apply_overrides(
            [0.095, 0.085, 0.024, 0.129, 9.81, 0.042 / 8.4, 0.042 ** 2 / 8.4],
            self.param_names, overrides)
        super().__init__(theta=theta,
                         x_min=np.array([-np.pi, -np.pi, -30.0, -30.0]),
                         x_max=np.array([np.pi, np.pi, 30.0, 30.0]),
                         x_des=np.array([0.0, 0.0, 0.0, 0.0]),
                         u_max=5.0,
                         x_start=np.array([0.0, np.pi, 0.0, 0.0]))

    def _terms(self, x, th):
        mr, Lr, mp, Lp = th[..., 0], th[..., 1], th[..., 2], th[..., 3]
        g, kt, cd = th[..., 4], th[..., 5], th[..., 6]
        ang, phd, thd = x[..., 1], x[..., 2], x[..., 3]
        s, c = np.sin(ang), np.cos(ang)
        s2 = np.sin(2.0 * ang)
        lp = Lp / 2.0
        Jp = mp * Lp ** 2 / 3.0
        Jr = mr * Lr ** 2 / 3.0
        h = mp * lp * Lr
        M11 = Jr + mp * Lr ** 2 + Jp * s ** 2
        M12 = h * c
        M22 = Jp + np.zeros_like(M12)
        r1 = -cd * phd + h * s * thd ** 2 - Jp * s2 * phd * thd
        r2 = 0.5 * Jp * s2 * phd ** 2 + mp * g * lp * s
        b1 = kt + np.zeros_like(M12)
        return M11, M12, M22, r1, r2, b1

    def _partials(self, x, th):
        mr, Lr, mp, Lp = th[..., 0], th[..., 1], th[..., 2], th[..., 3]
        g, kt, cd = th[..., 4], th[..., 5], th[..., 6]
        ang, phd, thd = x[..., 1], x[..., 2], x[..., 3]
        s, c = np.sin(ang), np.cos(ang)
        s2, c2 = np.sin(2.0 * ang), np.cos(2.0 * ang)
        lp = Lp / 2.0
        Jp = mp * Lp ** 2 / 3.0
        h = mp * lp * Lr
        batch = np.broadcast_shapes(ang.shape, mr.shape)
        n_d = 4 + self.n_p
        dM = np.zeros(batch + (3, n_d))
        dr = np.zeros(batch + (2, n_d))
        db = np.zeros(batch + (2, n_d))
        # d/d(th): column 1
        dM[..., 0, 1] = Jp * s2
        dM[..., 1, 1] = -h * s
        dr[..., 0, 1] = h * c * thd ** 2 - 2.0 * Jp * c2 * phd * thd
        dr[..., 1, 1] = Jp * c2 * phd ** 2 + mp * g * lp * c
        # d/d(phd): column 2
        dr[..., 0, 2] = -cd - Jp * s2 * thd
        dr[..., 1, 2] = Jp * s2 * phd
        # d/d(thd): column 3
        dr[..., 0, 3] = 2.0 * h * s * thd - Jp * s2 * phd
        # arm_mass: column 4
        dM[..., 0, 4] = Lr ** 2 / 3.0
        # arm_length: column 5
        dM[..., 0, 5] = 2.0 * mr * Lr / 3.0 + 2.0 * mp * Lr
        dM[..., 1, 5] = mp * lp * c
        dr[..., 0, 5] = mp * lp * s * thd ** 2
        # pole_mass: column 6
        dM[..., 0, 6] = Lr ** 2 + (Lp ** 2 / 3.0) * s ** 2
        dM[..., 1, 6] = lp * Lr * c
        dM[..., 2, 6] = Lp ** 2 / 3.0
        dr[..., 0, 6] = lp * Lr * s * thd ** 2 - (Lp ** 2 / 3.0) * s2 * phd * thd
        dr[..., 1, 6] = (Lp ** 2 / 6.0) * s2 * phd ** 2 + g * lp * s
        # pole_length: column 7
        dM[..., 0, 7] = (2.0 * mp * Lp / 3.0) * s ** 2
        dM[..., 1, 7] = (mp * Lr / 2.0) * c
        dM[..., 2, 7] = 2.0 * mp * Lp / 3.0
        dr[..., 0, 7] = (mp * Lr / 2.0) * s * thd ** 2 \
            - (2.0 * mp * Lp / 3.0) * s2 * phd * thd
        dr[..., 1, 7] = (mp * Lp / 3.0) * s2 * phd ** 2 + mp * g * s / 2.0
        # gravity: column 8
        dr[..., 1, 8] = mp * lp * s
        # motor_gain: column 9
        db[..., 0, 9] = 1.0
        # motor_damping: column 10
        dr[..., 0, 10] = -phd
        return dM, dr, db


def _apply_overrides(defaults: list[float], names: tuple[str, ...],
                     overrides: dict[str, float]) -> np.ndarray:
    theta = np.array(defaults, dtype=float)
    for key, value in overrides.items():
        if key not in names:
            raise ValueError(f"unknown parameter {key!r}; known: {list(names)}")
        theta[names.index(key)] = float(value)
    return theta


SYSTEMS: dict[str, type[ControlAffineModel]] = {
    "pendulum": Pendulum,
    "cartpole": Cartpole,
    "furuta": Furuta,
    "double_integrator": DoubleIntegrator,
}


def make_model(name: str, overrides: dict[str, float] | None = None) -> ControlAffineModel:
    """Instantiate a registered system, optionally overriding named parameters."""
    if name not in SYSTEMS:
        raise ValueError(
            f"unknown system {name!r}; known systems: {sorted(SYSTEMS)}")
    return SYSTEMS[name](**(overrides or {}))
