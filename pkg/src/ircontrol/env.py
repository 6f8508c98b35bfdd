"""The firefly-catching world.

A target sits at the origin of the ground plane. The agent controls its
forward and angular velocity through gains, both corrupted by process noise,
and must stop within the goal radius to collect the single sparse reward.
The agent never sees its position; it only receives noisy readings of its
own realized velocities (the optic-flow channel).

All dynamics are pure functions of explicit rng state, so episodes can run
in parallel on independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DT = 0.1
MAX_STEPS = 40
STOP_THRESHOLD = 0.1

PARAM_NAMES = ("gain_v", "gain_w", "sigma_pro_v", "sigma_pro_w",
               "sigma_obs_v", "sigma_obs_w", "goal_radius")

# Uniform prior box over task parameters; also the inverse-inference search domain.
PRIOR_BOX = {
    "gain_v": (1.0, 3.0),
    "gain_w": (1.0, 3.0),
    "sigma_pro_v": (0.05, 0.4),
    "sigma_pro_w": (0.05, 0.4),
    "sigma_obs_v": (0.05, 0.4),
    "sigma_obs_w": (0.05, 0.4),
    "goal_radius": (0.3, 0.7),
}

BOX_LO = np.array([PRIOR_BOX[n][0] for n in PARAM_NAMES])
BOX_HI = np.array([PRIOR_BOX[n][1] for n in PARAM_NAMES])

# Initial placement: distance and bearing-to-target ranges.
INIT_DIST = (1.0, 4.0)
INIT_BEARING = (-math.pi / 4, math.pi / 4)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.arctan2(np.sin(a), np.cos(a))
    return np.where(w == -np.pi, np.pi, w) if isinstance(w, np.ndarray) else (
        math.pi if w == -math.pi else float(w))


@dataclass(frozen=True)
class TaskParams:
    gain_v: float
    gain_w: float
    sigma_pro_v: float
    sigma_pro_w: float
    sigma_obs_v: float
    sigma_obs_w: float
    goal_radius: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, arr) -> "TaskParams":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (len(PARAM_NAMES),):
            raise ValueError(f"expected {len(PARAM_NAMES)} components, got {arr.shape}")
        return cls(**dict(zip(PARAM_NAMES, arr.tolist())))


@dataclass(frozen=True)
class WorldState:
    px: float
    py: float
    heading: float
    v_real: float
    w_real: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.heading, self.v_real, self.w_real])

    @classmethod
    def from_array(cls, arr) -> "WorldState":
        px, py, heading, v_real, w_real = (float(x) for x in arr)
        return cls(px, py, heading, v_real, w_real)

    def distance(self) -> float:
        return math.hypot(self.px, self.py)


@dataclass(frozen=True)
class Action:
    a_v: float
    a_w: float

    def __post_init__(self):
        if not (abs(self.a_v) <= 1.0 and abs(self.a_w) <= 1.0):
            raise ValueError("action components must lie in [-1, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.a_v, self.a_w])


@dataclass(frozen=True)
class Observation:
    o_v: float
    o_w: float

    def as_array(self) -> np.ndarray:
        return np.array([self.o_v, self.o_w])


@dataclass(frozen=True)
class EpisodeOutcome:
    reason: str  # "stopped" or "timeout"
    final_distance: float
    reward: float


def normalize_params(theta: np.ndarray) -> np.ndarray:
    """Affine map of each component onto [-1, 1] using the prior box."""
    return 2.0 * (np.asarray(theta) - BOX_LO) / (BOX_HI - BOX_LO) - 1.0


def sample_params(rng: np.random.Generator) -> TaskParams:
    """Draw task parameters uniformly from the prior box."""
    draw = rng.uniform(BOX_LO, BOX_HI)
    return TaskParams.from_array(draw)


def reset(rng: np.random.Generator, params: TaskParams) -> WorldState:
    """Place the agent around the target, roughly facing it, at rest.

    Draw order is fixed (distance, placement angle, bearing offset) so
    identical rng states give identical initial states.
    """
    dist = rng.uniform(*INIT_DIST)
    angle = rng.uniform(-math.pi, math.pi)
    bearing = rng.uniform(*INIT_BEARING)
    px = dist * math.cos(angle)
    py = dist * math.sin(angle)
    heading = wrap_angle(angle + math.pi + bearing)
    return WorldState(px, py, heading, 0.0, 0.0)


def step(s: WorldState, a: Action, params: TaskParams, rng: np.random.Generator) -> WorldState:
    """Unicycle kinematics with Gaussian process noise on realized velocities."""
    v = params.gain_v * a.a_v + params.sigma_pro_v * rng.standard_normal()
    w = params.gain_w * a.a_w + params.sigma_pro_w * rng.standard_normal()
    px = s.px + DT * v * math.cos(s.heading)
    py = s.py + DT * v * math.sin(s.heading)
    heading = wrap_angle(s.heading + DT * w)
    return WorldState(px, py, heading, v, w)


def observe(s: WorldState, params: TaskParams, rng: np.random.Generator) -> Observation:
    o_v = s.v_real + params.sigma_obs_v * rng.standard_normal()
    o_w = s.w_real + params.sigma_obs_w * rng.standard_normal()
    return Observation(o_v, o_w)


def log_obs_density(o: Observation, s: WorldState, params: TaskParams) -> float:
    """Exact log density of the velocity observation channel at o."""
    sv, sw = params.sigma_obs_v, params.sigma_obs_w
    if not (sv > 0.0 and sw > 0.0):
        raise ValueError("observation noise std devs must be positive")
    return float(
        -math.log(2.0 * math.pi * sv * sw)
        - 0.5 * ((o.o_v - s.v_real) / sv) ** 2
        - 0.5 * ((o.o_w - s.w_real) / sw) ** 2
    )


def is_terminal(s: WorldState, a: Action, t: int, params: TaskParams):
    """Terminal check for commanding action a in state s at step index t.

    A near-zero command declares a stop; reward 1 iff the stop lands within
    the goal radius. Returns an EpisodeOutcome, or None if not terminal.
    """
    if abs(a.a_v) < STOP_THRESHOLD and abs(a.a_w) < STOP_THRESHOLD:
        dist = s.distance()
        reward = 1.0 if dist <= params.goal_radius else 0.0
        return EpisodeOutcome("stopped", dist, reward)
    if t >= MAX_STEPS:
        return EpisodeOutcome("timeout", s.distance(), 0.0)
    return None
