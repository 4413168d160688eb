"""Coupled-oscillator pattern generator for the four hip joints.

Each leg has an amplitude-controlled phase oscillator

    dr/dt   = gamma * (mu - r^2) * r        (radius, settles at sqrt(mu))
    dphi/dt = omega (+ coupling)            (phase, unwrapped)
    output  = r * cos(phi_L) + offset       (joint angle, degrees)

where ``phi_L`` is a piecewise-linear reshaping of the phase that splits
the cycle into a stance fraction ``d`` (output half-cycle 0..pi) and a
swing fraction ``1 - d`` (pi..2*pi). The front-left leg is the reference;
the other three phases are pulled toward fixed offsets from it by sine
coupling.

Convention: the "amplitude" A of a leg (degrees) is the steady radius, so
``mu = A**2`` and the output swings offset +/- A. The convergence gain
defaults to ``20 / mu`` so that the radius relaxes with a ~25 ms time
constant regardless of amplitude, which keeps the explicit RK4 integrator
stable at the 1 ms control step for the whole supported amplitude range.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "LEG_ORDER",
    "OscillatorParams",
    "OscillatorState",
    "CouplingSpec",
    "LegProfile",
    "GaitDefinition",
    "oscillator_step",
    "phase_filter",
    "coupled_step",
    "TargetTrajectories",
    "target_trajectories",
    "save_trajectories_csv",
]

LEG_ORDER = ("fl", "fr", "hl", "hr")

DEFAULT_GAMMA_SCALE = 20.0  # gamma = DEFAULT_GAMMA_SCALE / mu unless overridden


@dataclass(frozen=True)
class OscillatorParams:
    """Parameters of a single leg oscillator.

    ``mu`` is the squared steady radius (degrees^2), ``gamma`` the radius
    convergence gain (1/s), ``omega`` the angular frequency (rad/s),
    ``offset`` the output midpoint (degrees) and ``duty`` the stance
    fraction of the cycle.
    """

    mu: float
    gamma: float
    omega: float
    offset: float = 0.0
    duty: float = 0.5

    def __post_init__(self) -> None:
        if self.mu <= 0.0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not (0.0 < self.duty < 1.0):
            raise ValueError(f"duty must lie in (0, 1), got {self.duty}")

    @property
    def amplitude(self) -> float:
        return math.sqrt(self.mu)


@dataclass
class OscillatorState:
    """Radius (degrees) and unwrapped phase (rad) of one oscillator."""

    r: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        if self.r < 0.0:
            raise ValueError(f"radius must be >= 0, got {self.r}")


def _radius_rate(r: float, p: OscillatorParams) -> float:
    return p.gamma * (p.mu - r * r) * r


def oscillator_step(
    state: OscillatorState, params: OscillatorParams, dt: float
) -> OscillatorState:
    """One explicit RK4 step of a single uncoupled oscillator; ``dt`` in ms."""
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    h = dt * 1e-3
    r = state.r
    k1 = _radius_rate(r, params)
    k2 = _radius_rate(r + 0.5 * h * k1, params)
    k3 = _radius_rate(r + 0.5 * h * k2, params)
    k4 = _radius_rate(r + h * k3, params)
    r_new = r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # Phase rate is constant, so RK4 reduces to the exact increment.
    return OscillatorState(r=r_new, phi=state.phi + params.omega * h)


def phase_filter(phi: float | np.ndarray, duty: float) -> float | np.ndarray:
    """Reshape a phase so the stance half (output in [0, pi)) lasts a
    fraction ``duty`` of the cycle.

    Continuous and strictly increasing on [0, 2*pi), with 0 -> 0,
    2*pi*duty -> pi and 2*pi- -> 2*pi-.
    """
    if not (0.0 < duty < 1.0):
        raise ValueError(f"duty must lie in (0, 1), got {duty}")
    phi2pi = np.mod(phi, 2.0 * math.pi)
    stance = phi2pi < 2.0 * math.pi * duty
    out = np.where(
        stance,
        phi2pi / (2.0 * duty),
        (phi2pi + 2.0 * math.pi * (1.0 - 2.0 * duty)) / (2.0 * (1.0 - duty)),
    )
    if np.isscalar(phi) or np.ndim(phi) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CouplingSpec:
    """Sine coupling of the fr/hl/hr phases toward the front-left reference.

    Offsets in degrees (interpreted mod 360), strengths in 1/s. A leg with
    offset ``po`` settles at ``phi_fl - phi_leg = po``.
    """

    po_fr: float = 180.0
    po_hl: float = 270.0
    po_hr: float = 90.0
    w_fr: float = 2.0
    w_hl: float = 2.0
    w_hr: float = 2.0

    def offsets_rad(self) -> np.ndarray:
        return np.radians([0.0, self.po_fr, self.po_hl, self.po_hr])

    def strengths(self) -> np.ndarray:
        return np.array([0.0, self.w_fr, self.w_hl, self.w_hr])


@dataclass(frozen=True)
class LegProfile:
    """Shared settings of a front or hind leg pair."""

    amplitude: float = 40.0  # degrees
    duty: float = 0.5
    offset: float = 0.0  # degrees


@dataclass(frozen=True)
class GaitDefinition:
    """Complete gait: one profile per leg pair, coupling, and frequency.

    The front pair shares one profile and the hind pair another, matching
    the search space used for gait optimization.
    """

    frequency_hz: float = 1.44
    front: LegProfile = field(default_factory=LegProfile)
    hind: LegProfile = field(default_factory=LegProfile)
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    gamma: float | None = None  # None -> DEFAULT_GAMMA_SCALE / mu per leg

    def __post_init__(self) -> None:
        if self.frequency_hz <= 0.0:
            raise ValueError(f"frequency must be > 0, got {self.frequency_hz}")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency_hz

    @property
    def period_s(self) -> float:
        return 1.0 / self.frequency_hz

    def leg_params(self) -> tuple[OscillatorParams, ...]:
        """Per-leg oscillator parameters in LEG_ORDER."""
        out = []
        for leg in LEG_ORDER:
            prof = self.front if leg in ("fl", "fr") else self.hind
            mu = prof.amplitude**2
            gamma = self.gamma if self.gamma is not None else DEFAULT_GAMMA_SCALE / mu
            out.append(
                OscillatorParams(
                    mu=mu, gamma=gamma, omega=self.omega,
                    offset=prof.offset, duty=prof.duty,
                )
            )
        return tuple(out)

    def duties(self) -> np.ndarray:
        return np.array([p.duty for p in self.leg_params()])

    def offsets(self) -> np.ndarray:
        return np.array([p.offset for p in self.leg_params()])

    def locked_states(self, phi_fl: float = 0.0) -> list[OscillatorState]:
        """States on the limit cycle at the coupling's phase-locked offsets."""
        po = self.coupling.offsets_rad()
        return [
            OscillatorState(r=p.amplitude, phi=phi_fl - po[i])
            for i, p in enumerate(self.leg_params())
        ]

    def to_dict(self) -> dict:
        c = self.coupling
        return {
            "frequency_hz": self.frequency_hz,
            "front": {"amplitude": self.front.amplitude, "duty": self.front.duty,
                      "offset": self.front.offset},
            "hind": {"amplitude": self.hind.amplitude, "duty": self.hind.duty,
                     "offset": self.hind.offset},
            "coupling": {"po_fr": c.po_fr, "po_hl": c.po_hl, "po_hr": c.po_hr,
                         "w_fr": c.w_fr, "w_hl": c.w_hl, "w_hr": c.w_hr},
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaitDefinition":
        return cls(
            frequency_hz=d["frequency_hz"],
            front=LegProfile(**d["front"]),
            hind=LegProfile(**d["hind"]),
            coupling=CouplingSpec(**d["coupling"]),
            gamma=d.get("gamma"),
        )


def _coupled_rates(
    r: np.ndarray,
    phi: np.ndarray,
    params: tuple[OscillatorParams, ...],
    po: np.ndarray,
    w: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    mu = np.array([p.mu for p in params])
    gamma = np.array([p.gamma for p in params])
    omega = np.array([p.omega for p in params])
    dr = gamma * (mu - r * r) * r
    dphi = omega + w * np.sin(phi[0] - phi - po)
    return dr, dphi


def coupled_step(
    states: list[OscillatorState], gait: GaitDefinition, dt: float
) -> list[OscillatorState]:
    """One RK4 step of the four coupled oscillators; ``dt`` in ms.

    The front-left phase carries no coupling term; the others are pulled
    toward their configured offsets from it.
    """
    if len(states) != 4:
        raise ValueError(f"expected 4 oscillator states, got {len(states)}")
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    params = gait.leg_params()
    po = gait.coupling.offsets_rad()
    w = gait.coupling.strengths()
    h = dt * 1e-3

    r = np.array([s.r for s in states])
    phi = np.array([s.phi for s in states])

    k1r, k1p = _coupled_rates(r, phi, params, po, w)
    k2r, k2p = _coupled_rates(r + 0.5 * h * k1r, phi + 0.5 * h * k1p, params, po, w)
    k3r, k3p = _coupled_rates(r + 0.5 * h * k2r, phi + 0.5 * h * k2p, params, po, w)
    k4r, k4p = _coupled_rates(r + h * k3r, phi + h * k3p, params, po, w)

    r_new = r + (h / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    phi_new = phi + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return [OscillatorState(r=float(r_new[i]), phi=float(phi_new[i])) for i in range(4)]


@dataclass
class TargetTrajectories:
    """Generated joint-angle targets, row k at time k*dt."""

    t_s: np.ndarray  # (n_rows,)
    angles: np.ndarray  # (n_rows, 4) degrees, LEG_ORDER columns
    dt_ms: float
    gait: GaitDefinition

    @property
    def n_rows(self) -> int:
        return self.angles.shape[0]


def target_trajectories(
    gait: GaitDefinition,
    duration_s: float,
    dt_ms: float = 1.0,
    initial: list[OscillatorState] | None = None,
) -> TargetTrajectories:
    """Run the coupled system and emit the four hip-angle targets.

    ``duration_s`` must cover at least two gait cycles. Rows include both
    t=0 and t=duration. By default the oscillators start on the limit
    cycle at their locked phase offsets, so the trace is periodic from the
    first sample.
    """
    if duration_s < 2.0 * gait.period_s:
        raise ValueError(
            f"duration {duration_s} s must cover at least two gait cycles "
            f"({2.0 * gait.period_s:.3f} s)"
        )
    states = [replace(s) for s in (initial or gait.locked_states())]
    n_steps = int(round(duration_s * 1000.0 / dt_ms))
    duties = gait.duties()
    offsets = gait.offsets()

    angles = np.empty((n_steps + 1, 4))
    for k in range(n_steps + 1):
        for i in range(4):
            phi_l = phase_filter(states[i].phi, duties[i])
            angles[k, i] = states[i].r * math.cos(phi_l) + offsets[i]
        if k < n_steps:
            states = coupled_step(states, gait, dt_ms)

    t = np.arange(n_steps + 1) * (dt_ms * 1e-3)
    return TargetTrajectories(t_s=t, angles=angles, dt_ms=dt_ms, gait=gait)


def save_trajectories_csv(path, traj: TargetTrajectories) -> None:
    """Write (t, fl, fr, hl, hr) rows."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"lambda_{leg}" for leg in LEG_ORDER])
        for k in range(traj.n_rows):
            writer.writerow(
                [f"{traj.t_s[k]:.6f}"] + [f"{a:.6f}" for a in traj.angles[k]]
            )
