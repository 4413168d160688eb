"""Planar surrogate of a compliant quadruped.

Each leg has one actuated hip (first-order actuator lag on the commanded
angle) and one passive, spring-loaded knee obeying a torsional
spring-damper equation forced by gravity, hip acceleration and ground
load. A kinematic stance model turns cyclic leg motion into displacement:
while a foot is on the ground the body inherits the foot's backward
horizontal velocity relative to the hip, with reduced traction when the
foot slides forward. Knee angles are the body's sensors.

This is a desk-scale stand-in for a physics engine: deterministic,
smooth, and rich enough to close a sensorimotor loop. The default
mechanical constants are surrogate choices and do not model any
particular robot. Angles are degrees at the interface and radians
internally; lengths m, torques N*m, times ms.

Integration: semi-implicit Euler at the control step for the knee
dynamics; the actuator lag uses its exact exponential update.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "BodyParams",
    "BodyState",
    "body_step",
    "read_sensors",
    "apply_disturbance",
    "passive_energy",
    "save_body_params",
    "load_body_params",
    "save_body_trace",
]

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class BodyParams:
    """Mechanical constants of the surrogate (per leg unless noted)."""

    spring_stiffness: float = 0.164  # N*m/rad, knee resonance near the gait band
    damping: float = 0.0145  # N*m*s/rad (damping ratio ~0.4)
    knee_rest_angle: float = 20.0  # degrees
    knee_inertia: float = 0.002  # kg*m^2
    thigh_length: float = 0.1  # m
    shank_length: float = 0.1  # m
    shank_mass: float = 0.15  # kg, gravity load on the knee
    body_mass: float = 1.0  # kg (reserved for contact load scaling)
    gravity: float = 9.81  # m/s^2
    gravity_scale: float = 1.0  # 0 disables the gravity torque (tests)
    contact_extension: float = 0.185  # leg extension (m) at which the foot touches
    ground_stiffness: float = 150.0  # N per m of penetration
    hip_coupling_inertia: float = 2e-4  # kg*m^2, knee torque per hip angular accel
    actuator_tau: float = 40.0  # ms, first-order actuator lag
    knee_stop_low: float = -80.0  # degrees, hard mechanical stops
    knee_stop_high: float = 80.0
    forward_traction: float = 1.0  # stance traction when the foot pushes backward
    backward_slip: float = 0.35  # residual traction when the foot slides forward
    max_leg_speed: float = 2.0  # m/s cap on one leg's body-velocity contribution
    turn_gain: float = 0.3  # rad heading change per m of left-right differential

    def __post_init__(self) -> None:
        if self.spring_stiffness <= 0.0:
            raise ValueError("spring_stiffness must be > 0")
        if self.damping < 0.0:
            raise ValueError("damping must be >= 0")
        if self.knee_inertia <= 0.0 or self.body_mass <= 0.0 or self.shank_mass <= 0.0:
            raise ValueError("inertia and masses must be > 0")
        if self.knee_stop_low >= self.knee_stop_high:
            raise ValueError("knee stops must satisfy low < high")


@dataclass
class BodyState:
    """Full body state. Leg arrays are in (fl, fr, hl, hr) order, degrees."""

    knee_angles: np.ndarray  # (4,) degrees
    knee_velocities: np.ndarray  # (4,) deg/s
    hip_angles: np.ndarray  # (4,) degrees, after actuator lag
    hip_velocities: np.ndarray  # (4,) deg/s, for the inertial coupling term
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0  # rad
    contact: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=bool))
    freeze_remaining: float = 0.0  # ms
    time_ms: float = 0.0

    @property
    def distance_from_origin(self) -> float:
        return math.hypot(self.x, self.y)

    @classmethod
    def at_rest(cls, params: BodyParams, hip_angles=None) -> "BodyState":
        hips = np.zeros(4) if hip_angles is None else np.asarray(hip_angles, dtype=float)
        return cls(
            knee_angles=np.full(4, params.knee_rest_angle),
            knee_velocities=np.zeros(4),
            hip_angles=hips.copy(),
            hip_velocities=np.zeros(4),
        )

    def copy(self) -> "BodyState":
        return BodyState(
            knee_angles=self.knee_angles.copy(),
            knee_velocities=self.knee_velocities.copy(),
            hip_angles=self.hip_angles.copy(),
            hip_velocities=self.hip_velocities.copy(),
            x=self.x, y=self.y, heading=self.heading,
            contact=self.contact.copy(),
            freeze_remaining=self.freeze_remaining,
            time_ms=self.time_ms,
        )


def _extension(params: BodyParams, hip_rad: np.ndarray, knee_rad: np.ndarray) -> np.ndarray:
    """Vertical extension of each leg below the hip (m)."""
    return params.thigh_length * np.cos(hip_rad) + params.shank_length * np.cos(
        hip_rad + knee_rad
    )


def body_step(
    state: BodyState, params: BodyParams, motor_angles, dt: float
) -> BodyState:
    """Advance the body by ``dt`` ms under the commanded hip angles (degrees)."""
    motors = np.asarray(motor_angles, dtype=float)
    if motors.shape != (4,):
        raise ValueError(f"expected 4 motor angles, got shape {motors.shape}")
    if not np.all(np.isfinite(motors)):
        raise ValueError(f"motor angles must be finite, got {motors}")
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")

    s = state.copy()
    dt_s = dt * 1e-3

    # Actuator lag (exact exponential update toward the command).
    hip_old = s.hip_angles.copy()
    lag = 1.0 - math.exp(-dt / params.actuator_tau)
    s.hip_angles = hip_old + (motors - hip_old) * lag
    hip_vel_new = (s.hip_angles - hip_old) / dt_s  # deg/s
    hip_acc = (hip_vel_new - s.hip_velocities) / dt_s  # deg/s^2

    if s.freeze_remaining > 0.0:
        # Held: passive joints pinned, no contact, no displacement.
        s.freeze_remaining = max(0.0, s.freeze_remaining - dt)
        s.knee_velocities[:] = 0.0
        s.hip_velocities = hip_vel_new
        s.contact[:] = False
        s.time_ms += dt
        return s

    hip_rad = s.hip_angles * _DEG
    knee_rad = s.knee_angles * _DEG
    knee_vel_rad = s.knee_velocities * _DEG  # rad/s

    ext = _extension(params, hip_rad, knee_rad)
    contact = ext >= params.contact_extension

    shank_angle = hip_rad + knee_rad
    torque = -params.spring_stiffness * (knee_rad - params.knee_rest_angle * _DEG)
    torque -= params.damping * knee_vel_rad
    torque -= (
        params.gravity_scale
        * params.shank_mass
        * params.gravity
        * (params.shank_length / 2.0)
        * np.sin(shank_angle)
    )
    torque -= params.hip_coupling_inertia * (hip_acc * _DEG)
    normal = np.where(
        contact, params.ground_stiffness * (ext - params.contact_extension), 0.0
    )
    # Load buckles the knee, shortening the leg.
    torque += normal * params.shank_length * np.sin(shank_angle)

    # Semi-implicit Euler: velocity first, then position.
    knee_acc = torque / params.knee_inertia  # rad/s^2
    knee_vel_rad = knee_vel_rad + dt_s * knee_acc
    knee_rad_new = knee_rad + dt_s * knee_vel_rad

    # Hard mechanical stops (inelastic).
    lo, hi = params.knee_stop_low * _DEG, params.knee_stop_high * _DEG
    below, above = knee_rad_new < lo, knee_rad_new > hi
    knee_rad_new = np.clip(knee_rad_new, lo, hi)
    knee_vel_rad = np.where(below | above, 0.0, knee_vel_rad)

    s.knee_angles = knee_rad_new / _DEG
    s.knee_velocities = knee_vel_rad / _DEG

    # Stance progression: a grounded foot anchors; the body inherits the
    # foot's backward horizontal velocity relative to the hip. Traction is
    # asymmetric (claw-like): full when pushing the body forward, partial
    # slip otherwise.
    hip_vel_rad = hip_vel_new * _DEG
    foot_x_vel = params.thigh_length * np.cos(hip_rad) * hip_vel_rad + (
        params.shank_length * np.cos(shank_angle) * (hip_vel_rad + knee_vel_rad)
    )
    leg_v = -foot_x_vel
    leg_v = np.where(leg_v >= 0.0, leg_v * params.forward_traction,
                     leg_v * params.backward_slip)
    leg_v = np.clip(leg_v, -params.max_leg_speed, params.max_leg_speed)
    leg_v = np.where(contact, leg_v, 0.0)

    n_contact = int(np.count_nonzero(contact))
    if n_contact > 0:
        v_body = float(leg_v.sum()) / n_contact
        left = [0, 2]
        right = [1, 3]
        v_left = float(leg_v[left].sum()) / max(1, int(np.count_nonzero(contact[left])))
        v_right = float(leg_v[right].sum()) / max(1, int(np.count_nonzero(contact[right])))
        s.heading += params.turn_gain * (v_left - v_right) * dt_s
        s.x += v_body * math.cos(s.heading) * dt_s
        s.y += v_body * math.sin(s.heading) * dt_s

    s.contact = contact
    s.hip_velocities = hip_vel_new
    s.time_ms += dt
    return s


def read_sensors(state: BodyState) -> np.ndarray:
    """The four passive knee angles (degrees) in (fl, fr, hl, hr) order."""
    return state.knee_angles.copy()


def apply_disturbance(state: BodyState, kind: str, **kwargs) -> BodyState:
    """Perturb the body.

    ``displace-pose`` teleports by (dx, dy, dheading) without touching the
    joints. ``freeze-then-release`` zeroes all joint velocities and holds
    the passive joints for ``duration_ms`` of subsequent stepping.
    """
    s = state.copy()
    if kind == "displace-pose":
        s.x += float(kwargs.get("dx", 0.0))
        s.y += float(kwargs.get("dy", 0.0))
        s.heading += float(kwargs.get("dheading", 0.0))
    elif kind == "freeze-then-release":
        duration = float(kwargs.get("duration_ms", 2000.0))
        if duration < 0.0:
            raise ValueError(f"freeze duration must be >= 0, got {duration}")
        s.freeze_remaining = duration
        if duration > 0.0:
            s.knee_velocities[:] = 0.0
            s.hip_velocities[:] = 0.0
            s.contact[:] = False
    else:
        raise ValueError(f"unknown disturbance kind {kind!r}")
    return s


def passive_energy(state: BodyState, params: BodyParams) -> float:
    """Energy of the passive knee subsystem (J): kinetic + spring + gravity.

    Consistent with the torques in ``body_step`` for a fixed hip and no
    contact, so with zero actuation it must not increase.
    """
    knee_rad = state.knee_angles * _DEG
    knee_vel = state.knee_velocities * _DEG
    shank_angle = state.hip_angles * _DEG + knee_rad
    kinetic = 0.5 * params.knee_inertia * knee_vel**2
    spring = 0.5 * params.spring_stiffness * (knee_rad - params.knee_rest_angle * _DEG) ** 2
    grav = (
        params.gravity_scale
        * params.shank_mass
        * params.gravity
        * (params.shank_length / 2.0)
        * (1.0 - np.cos(shank_angle))
    )
    return float(np.sum(kinetic + spring + grav))


def save_body_params(path, params: BodyParams) -> None:
    with open(path, "w") as f:
        json.dump({"schema_version": 1, "body": params.__dict__}, f, indent=2)


def load_body_params(path) -> BodyParams:
    with open(path) as f:
        data = json.load(f)
    return BodyParams(**data["body"])


def save_body_trace(path, rows: list[dict]) -> None:
    """Write (t, 4 motor, 4 passive, x, y, distance) rows."""
    fields = ["t", "motor_fl", "motor_fr", "motor_hl", "motor_hr",
              "knee_fl", "knee_fr", "knee_hl", "knee_hr", "x", "y", "distance"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
