"""Two-player benchmark games behind one reset/step interface.

All episodes run exactly ``horizon`` steps. Discrete-action games accept
relaxed (simplex) actions during training and transition on the argmax;
the relaxed vector is what the critics later see from the replay buffer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class EnvSpec:
    n_agents: int
    obs_dims: tuple
    act_dims: tuple
    action_kind: str  # "continuous" | "discrete"
    horizon: int
    common_reward: bool

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if any(d < 1 for d in list(self.obs_dims) + list(self.act_dims)):
            raise ValueError("dims must be >= 1")


@dataclass
class StepResult:
    obs: list
    rewards: np.ndarray
    terminal: bool


# ---------------------------------------------------------------------------
# iterated rotational game
# ---------------------------------------------------------------------------

# payoff table over the two underlying discrete actions, indexed
# [agent1 action][agent2 action] -> (r1, r2)
IRG_TABLE = (((0.0, 3.0), (3.0, 2.0)),
             ((1.0, 0.0), (2.0, 1.0)))


def irg_step(a1, a2):
    """Expected payoffs when each agent plays action 1 with probability a_i.

    Closed forms follow from averaging the 2x2 payoff table; out-of-range
    inputs are clamped (behavior noise can exceed [0, 1]).
    """
    a1c = min(max(float(a1), 0.0), 1.0)
    a2c = min(max(float(a2), 0.0), 1.0)
    if a1c != a1 or a2c != a2:
        log.debug("irg action clamped: (%s, %s)", a1, a2)
    r1 = 2.0 + a1c - a2c - 2.0 * a1c * a2c
    r2 = 1.0 + a1c - a2c + 2.0 * a1c * a2c
    return r1, r2


class IteratedRotationalGame:
    """One persistent state; 1-D continuous actions in [0, 1]."""

    name = "irg"

    def __init__(self, horizon=10):
        self.spec = EnvSpec(2, (1, 1), (1, 1), "continuous", horizon, False)
        self._t = 0
        self._last_actions = (0.5, 0.5)
        self.clamped = 0

    def _obs(self):
        one = np.ones(1)
        return [one.copy(), one.copy()]

    def reset(self, rng):
        self._t = 0
        return self._obs()

    def step(self, actions):
        a1, a2 = float(actions[0][0]), float(actions[1][0])
        if not (0.0 <= a1 <= 1.0 and 0.0 <= a2 <= 1.0):
            self.clamped += 1
        r1, r2 = irg_step(a1, a2)
        self._last_actions = (min(max(a1, 0.0), 1.0), min(max(a2, 0.0), 1.0))
        self._t += 1
        return StepResult(self._obs(), np.array([r1, r2]), self._t >= self.spec.horizon)

    def episode_summary(self):
        return {}


# ---------------------------------------------------------------------------
# iterated prisoner's dilemma
# ---------------------------------------------------------------------------

IPD_STATES = ("initial", "CC", "CD", "DC", "DD")
COOPERATE, DEFECT = 0, 1


def ipd_rewards(i1, i2, dd_reward=-3.0):
    """Stage payoffs; action index 0 cooperates, 1 defects."""
    if i1 == COOPERATE and i2 == COOPERATE:
        return -1.0, -1.0
    if i1 == COOPERATE and i2 == DEFECT:
        return -3.0, 0.0
    if i1 == DEFECT and i2 == COOPERATE:
        return 0.0, -3.0
    return dd_reward, dd_reward


class IteratedPrisonersDilemma:
    """Five-state game: the state one-hot encodes the previous joint action."""

    name = "ipd"

    def __init__(self, horizon=150, dd_reward=-3.0):
        self.spec = EnvSpec(2, (5, 5), (2, 2), "discrete", horizon, False)
        self.dd_reward = dd_reward
        self._state = 0
        self._t = 0
        self._cc_steps = 0

    def _obs(self):
        o = np.zeros(5)
        o[self._state] = 1.0
        return [o.copy(), o.copy()]

    def reset(self, rng):
        self._state = 0
        self._t = 0
        self._cc_steps = 0
        return self._obs()

    def step(self, actions):
        i1 = int(np.argmax(actions[0]))
        i2 = int(np.argmax(actions[1]))
        r1, r2 = ipd_rewards(i1, i2, self.dd_reward)
        self._state = 1 + 2 * i1 + i2
        if i1 == COOPERATE and i2 == COOPERATE:
            self._cc_steps += 1
        self._t += 1
        return StepResult(self._obs(), np.array([r1, r2]), self._t >= self.spec.horizon)

    def episode_summary(self):
        steps = max(self._t, 1)
        return {"coop_rate": self._cc_steps / steps}


# ---------------------------------------------------------------------------
# particle-coordination game
# ---------------------------------------------------------------------------

# landmark order: green-left, gray, green-right; geometry sized so any spawn
# can reach either green landmark within the 25-step horizon under the
# point-mass constants below (terminal speed 0.4, ~0.04 units per step)
PCG_LANDMARKS = np.array([[-0.25, 0.15], [0.0, -0.25], [0.25, 0.15]])
PCG_TABLE = np.array([[2.0, 0.0, -20.0],
                      [0.0, 0.4, 0.0],
                      [-20.0, 0.0, 2.0]])
PCG_GREEN = (0, 2)
PCG_SPAWN = 0.3  # agents start uniform in [-PCG_SPAWN, PCG_SPAWN]^2
# direction order: right, left, up, down, stay
PCG_FORCES = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0]])
PCG_DAMPING = 0.25
PCG_ACCEL = 1.0
PCG_DT = 0.1
PCG_DIAG = 2.0 * PCG_SPAWN * np.sqrt(2.0)


class ParticleCoordinationGame:
    """Two point-mass agents pick landmarks by proximity; common reward.

    Each step pays the payoff-table entry for the pair of currently nearest
    landmarks, scaled by how closely the agents have approached them. Agents
    observe their own velocity and position plus landmark offsets, never each
    other.
    """

    name = "pcg"

    def __init__(self, horizon=25):
        self.spec = EnvSpec(2, (10, 10), (5, 5), "discrete", horizon, True)
        self.pos = np.zeros((2, 2))
        self.vel = np.zeros((2, 2))
        self._t = 0
        self._last_sel = (1, 1)

    def _obs(self):
        out = []
        for k in range(2):
            rel = (PCG_LANDMARKS - self.pos[k]).ravel()
            out.append(np.concatenate([self.vel[k], self.pos[k], rel]))
        return out

    def reset(self, rng):
        self.pos = rng.uniform(-PCG_SPAWN, PCG_SPAWN, size=(2, 2))
        self.vel = np.zeros((2, 2))
        self._t = 0
        return self._obs()

    def nearest(self, k):
        d = np.linalg.norm(PCG_LANDMARKS - self.pos[k], axis=1)
        return int(np.argmin(d)), float(d.min())

    def step(self, actions):
        for k in range(2):
            force = PCG_FORCES[int(np.argmax(actions[k]))]
            self.vel[k] = self.vel[k] * (1.0 - PCG_DAMPING) + force * PCG_ACCEL * PCG_DT
            self.pos[k] = self.pos[k] + self.vel[k] * PCG_DT
        s1, d1 = self.nearest(0)
        s2, d2 = self.nearest(1)
        self._last_sel = (s1, s2)
        prox = 0.5 * (max(0.0, 1.0 - d1 / PCG_DIAG) + max(0.0, 1.0 - d2 / PCG_DIAG))
        r = PCG_TABLE[s1, s2] * prox
        self._t += 1
        return StepResult(self._obs(), np.array([r, r]), self._t >= self.spec.horizon)

    def episode_summary(self):
        s1, s2 = self._last_sel
        same_green = float(s1 == s2 and s1 in PCG_GREEN)
        return {
            "same_green": same_green,
            "both_gray": float(s1 == 1 and s2 == 1),
            "split_green": float({s1, s2} == set(PCG_GREEN)),
        }


# ---------------------------------------------------------------------------
# corridor exit-room, level 1
# ---------------------------------------------------------------------------

EXITROOM_WIDTH = 14  # cells 0..14; right door at 14
EXITROOM_LAMBDA_C = 0.5
EXITROOM_LAMBDA_D = 0.4


def exit_room_reward(pos_self, pos_opp, room_width=EXITROOM_WIDTH,
                     lambda_c=EXITROOM_LAMBDA_C, lambda_d=EXITROOM_LAMBDA_D):
    """Cooperation pays for joint proximity to the right door; defection
    pays for one's own distance from it."""
    coop_self = 1.0 - (room_width - pos_self) / room_width
    coop_opp = 1.0 - (room_width - pos_opp) / room_width
    return lambda_c * (coop_self + coop_opp) + lambda_d * (1.0 - coop_self)


class ExitRoomLevel1:
    """Two 15-cell corridors; actions move-left / move-right / stay."""

    name = "exitroom1"

    def __init__(self, horizon=25):
        self.spec = EnvSpec(2, (2, 2), (3, 3), "discrete", horizon, False)
        self.pos = np.array([7, 7])
        self._t = 0

    def _obs(self):
        p = self.pos / EXITROOM_WIDTH
        return [np.array([p[0], p[1]]), np.array([p[1], p[0]])]

    def reset(self, rng):
        self.pos = np.array([7, 7])
        self._t = 0
        return self._obs()

    def step(self, actions):
        moves = (-1, 1, 0)
        for k in range(2):
            self.pos[k] = int(np.clip(self.pos[k] + moves[int(np.argmax(actions[k]))],
                                      0, EXITROOM_WIDTH))
        r1 = exit_room_reward(self.pos[0], self.pos[1])
        r2 = exit_room_reward(self.pos[1], self.pos[0])
        self._t += 1
        return StepResult(self._obs(), np.array([r1, r2]), self._t >= self.spec.horizon)

    def episode_summary(self):
        return {}


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

ENV_BUILDERS = {
    "irg": IteratedRotationalGame,
    "ipd": IteratedPrisonersDilemma,
    "pcg": ParticleCoordinationGame,
    "exitroom1": ExitRoomLevel1,
}


def make_env(name, horizon=None, **kwargs):
    if name not in ENV_BUILDERS:
        raise ValueError(f"unknown env {name!r}; known: {sorted(ENV_BUILDERS)}")
    if horizon is not None:
        kwargs["horizon"] = horizon
    return ENV_BUILDERS[name](**kwargs)
