"""Outer training loop: rollouts, critic regression, actor updates, targets.

A trainer owns one environment, per-agent models, one replay buffer, and a
set of independent rng streams derived from the seed, so a (config, seed)
pair reproduces its metric stream bit-exactly. Updates allocate one tape per
update step and drop it afterwards.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import envs as envs_mod
from . import metrics as metrics_mod
from . import networks as nets
from . import replay as replay_mod
from .anticipation import (AnticipationConfig, hla_assign_levels, hla_update_stage,
                           la_objective, lola_objective, naive_objective,
                           param_anticipation_objective, shaping_capacity)


class ConfigError(ValueError):
    """Invalid run configuration, raised before any training happens."""


@dataclass
class TrainConfig:
    env: str = "irg"
    episodes: int = 100
    horizon: int = None          # None -> environment default
    gamma: float = 0.95
    lr: float = 0.01
    batch_k: int = 1024
    buffer_capacity: int = 1_000_000
    tau_polyak: float = 0.01
    anticipation: AnticipationConfig = field(default_factory=AnticipationConfig)
    seed: int = 0
    warmup: int = None           # None -> 5 * batch_k transitions
    actor_warmup: int = None     # steps before policy updates start (None -> warmup)
    update_every: int = 1        # environment steps between update iterations
    eval_every: int = 50
    eval_episodes: int = 10
    sigma_explore: float = 1.0
    sigma_final: float = None    # None -> constant sigma_explore
    gumbel_temperature: float = 1.0
    logit_reg: float = 1e-3     # L2 pull on policy pre-head outputs
    adam_eps: float = 1e-8
    hidden_dims: tuple = (64, 64)
    ipd_dd_reward: float = -3.0
    shared_critic: bool = None   # None -> shared exactly for the hla rule

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_k < 1 or self.buffer_capacity < 1:
            raise ConfigError("batch and capacity must be >= 1")
        if self.update_every < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("cadence fields must be >= 1")


@dataclass
class AgentModel:
    """One agent's policy, optional critic, target copies, optimizer state."""

    policy: nets.PolicyNet
    policy_target: nets.TargetPair
    policy_opt: dict
    critic: nets.CriticNet = None
    critic_target: nets.TargetPair = None
    critic_opt: dict = None


def _head_for(env):
    if env.spec.action_kind == "discrete":
        return "gumbel_softmax"
    return "sigmoid" if env.name == "irg" else "tanh"


def _action_bounds(head):
    return (0.0, 1.0) if head == "sigmoid" else (-1.0, 1.0)


def _make_env(cfg):
    kwargs = {}
    if cfg.env == "ipd":
        kwargs["dd_reward"] = cfg.ipd_dd_reward
    return envs_mod.make_env(cfg.env, horizon=cfg.horizon, **kwargs)


class Trainer:
    """Single-seed training run; deterministic given (config, seed)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.env = _make_env(cfg)
        self.eval_env = _make_env(cfg)
        spec = self.env.spec
        acfg = cfg.anticipation
        if acfg.rule == "hla" and not spec.common_reward:
            raise ConfigError(f"rule 'hla' needs a common-reward game; "
                              f"'{cfg.env}' is mixed-interest")

        seq = np.random.SeedSequence(cfg.seed).spawn(6)
        (self.init_rng, self.env_rng, self.explore_rng,
         self.gumbel_rng, self.replay_rng, self.eval_rng) = \
            [np.random.default_rng(s) for s in seq]

        self.shared_critic = (acfg.rule == "hla" if cfg.shared_critic is None
                              else cfg.shared_critic)
        if self.shared_critic and not spec.common_reward:
            raise ConfigError("a shared critic needs a common-reward game")

        head = _head_for(self.env)
        self.head = head
        self.bounds = _action_bounds(head)
        self.agents = []
        n_critics = 1 if self.shared_critic else spec.n_agents
        self.critics = []
        self.critic_targets = []
        self.critic_opts = []
        for i in range(spec.n_agents):
            policy = nets.PolicyNet.for_agent(spec.obs_dims[i], spec.act_dims[i],
                                              self.init_rng, cfg.hidden_dims, head)
            self.agents.append(AgentModel(
                policy=policy,
                policy_target=nets.TargetPair(policy, tau=cfg.tau_polyak),
                policy_opt={n: ad.AdamState.for_param(policy.params[n])
                            for n in policy.param_names()},
            ))
        for _ in range(n_critics):
            critic = nets.CriticNet.for_game(spec.obs_dims, spec.act_dims,
                                             self.init_rng, cfg.hidden_dims)
            self.critics.append(critic)
            self.critic_targets.append(nets.TargetPair(critic, tau=cfg.tau_polyak))
            self.critic_opts.append({n: ad.AdamState.for_param(critic.params[n])
                                     for n in critic.param_names()})
        for i, agent in enumerate(self.agents):
            ci = 0 if self.shared_critic else i
            agent.critic = self.critics[ci]
            agent.critic_target = self.critic_targets[ci]
            agent.critic_opt = self.critic_opts[ci]

        self.buffer = replay_mod.ReplayBuffer(cfg.buffer_capacity,
                                              spec.obs_dims, spec.act_dims)
        self.warmup = 5 * cfg.batch_k if cfg.warmup is None else cfg.warmup
        self.actor_warmup = (self.warmup if cfg.actor_warmup is None
                             else cfg.actor_warmup)
        self.global_step = 0
        self.update_count = 0
        self.update_seconds = 0.0
        self.anticipation_seconds = 0.0
        self.last_tape_nodes = 0
        self._fixed_levels = None
        if acfg.rule == "hla" and acfg.hierarchy == "fixed_random":
            self._fixed_levels = hla_assign_levels([0.0] * spec.n_agents,
                                                   "fixed_random", self.init_rng)
        self._sigma = cfg.sigma_explore

    # ------------------------------------------------------------------
    # rollout
    # ------------------------------------------------------------------

    def _critic_index(self, i):
        return 0 if self.shared_critic else i

    def behavior_actions(self, obs):
        acts = []
        for i, agent in enumerate(self.agents):
            if self.env.spec.action_kind == "discrete":
                logits = nets.policy_logits_np(agent.policy, obs[i])
                acts.append(replay_mod.behavior_action(
                    None, "discrete", self.explore_rng, logits=logits,
                    temperature=self.cfg.gumbel_temperature))
            else:
                det = nets.policy_act_np(agent.policy, obs[i])
                acts.append(replay_mod.behavior_action(
                    det, "continuous", self.explore_rng, sigma=self._sigma,
                    low=self.bounds[0], high=self.bounds[1]))
        return acts

    def rollout_episode(self, learn=True):
        obs = self.env.reset(self.env_rng)
        rewards = np.zeros(self.env.spec.n_agents)
        steps = 0
        for _ in range(self.env.spec.horizon):
            acts = self.behavior_actions(obs)
            res = self.env.step(acts)
            self.buffer.push(replay_mod.Transition(obs, acts, res.rewards,
                                                   res.obs, res.terminal))
            obs = res.obs
            rewards += res.rewards
            steps += 1
            self.global_step += 1
            if (learn and len(self.buffer) >= max(self.warmup, self.cfg.batch_k)
                    and self.global_step % self.cfg.update_every == 0):
                self.update_step()
        stats = {"aer": float(rewards.mean() / steps)}
        stats.update(self.env.episode_summary())
        return stats

    def prefill(self, transitions):
        """Fill the buffer with behavior rollouts, no learning (timing runs)."""
        while len(self.buffer) < transitions:
            self.rollout_episode(learn=False)

    # ------------------------------------------------------------------
    # update iteration: critic regression + actor steps + target updates
    # ------------------------------------------------------------------

    def td_targets(self, batch):
        """TD targets from target nets; plain arrays with no lineage."""
        target_actions = []
        for j, agent in enumerate(self.agents):
            tnet = agent.policy_target.target_net()
            pre = tnet.forward_np(batch.next_obs[j])
            if self.head == "sigmoid":
                target_actions.append(nets._kernels.sigmoid(pre))
            elif self.head == "tanh":
                target_actions.append(np.tanh(pre))
            elif self.head == "gumbel_softmax":
                # zero-noise relaxed action: keeps the bootstrap inside the
                # distribution the critic is trained on (relaxed samples)
                z = pre / self.cfg.gumbel_temperature
                e = np.exp(z - z.max(axis=1, keepdims=True))
                target_actions.append(e / e.sum(axis=1, keepdims=True))
            else:
                target_actions.append(pre)
        mask = (1.0 - batch.done)[:, None]
        ys = []
        for ci, pair in enumerate(self.critic_targets):
            qn = nets.critic_forward_np(pair.target_net(), batch.next_obs,
                                        target_actions)
            r = batch.rewards[:, [0 if self.shared_critic else ci]]
            ys.append(r + self.cfg.gamma * mask * qn)
        return ys

    def critic_phase(self, tape, batch, ys=None):
        obs_c = [ad.const(o) for o in batch.obs]
        act_c = [ad.const(a) for a in batch.actions]
        if ys is None:
            ys = self.td_targets(batch)
        k = batch.size
        losses = []
        for ci, critic in enumerate(self.critics):
            bound = critic.bind(tape)
            q = nets.critic_forward(critic, bound, obs_c, act_c)
            err = ad.sub(q, ad.const(ys[ci]))
            loss_sum = ad.sum_all(ad.mul(err, err))
            names = critic.param_names()
            leaves = [bound[n] for n in names]
            grads = ad.backward(loss_sum, leaves)
            for name, leaf in zip(names, leaves):
                g = grads.of(leaf).value / k
                ad.adam_step(critic.params[name], g, self.critic_opts[ci][name],
                             self.cfg.lr, eps=self.cfg.adam_eps)
            losses.append(float(loss_sum.value) / k)
        return losses

    def _policy_actions(self, tape, batch):
        """Taped current-policy actions (and pre-head outputs) per agent."""
        obs_ts = [ad.const(o) for o in batch.obs]
        bounds = []
        actions = []
        noises = []
        pres = []
        k = batch.size
        for i, agent in enumerate(self.agents):
            bound = agent.policy.bind(tape)
            bounds.append(bound)
            if self.head == "gumbel_softmax":
                noise = ad.const(replay_mod.gumbel_noise(
                    self.gumbel_rng, (k, self.env.spec.act_dims[i])))
            else:
                noise = None
            noises.append(noise)
            pre = agent.policy.forward(bound, obs_ts[i])
            pres.append(pre)
            actions.append(nets.apply_head(
                agent.policy, pre, "train", noise, self.cfg.gumbel_temperature))
        return obs_ts, bounds, noises, actions, pres

    def _q_fns(self, tape, obs_ts):
        cbounds = [c.bind(tape) for c in self.critics]
        fns = []
        for i in range(self.env.spec.n_agents):
            ci = self._critic_index(i)
            fns.append(lambda acts, ci=ci, cb=cbounds: nets.critic_forward(
                self.critics[ci], cb[ci], obs_ts, acts))
        return fns

    def _apply_actor_grad(self, i, bound, objective, k, pre=None):
        # the ascent objective carries the standard squared-logits pull that
        # keeps squashing heads out of saturation (and exploration alive)
        if pre is not None and self.cfg.logit_reg > 0.0:
            objective = ad.sub(objective, ad.smul(ad.sum_all(ad.mul(pre, pre)),
                                                  self.cfg.logit_reg))
        agent = self.agents[i]
        names = agent.policy.param_names()
        leaves = [bound[n] for n in names]
        grads = ad.backward(objective, leaves)
        for name, leaf in zip(names, leaves):
            g = grads.of(leaf).value / k
            ad.adam_step(agent.policy.params[name], -g, agent.policy_opt[name],
                         self.cfg.lr, eps=self.cfg.adam_eps)

    def _shaping_capacities(self, tape, batch, rows=64):
        """Per-agent shaping capacity from a row subsample of the batch.

        Only the ordering of the capacities matters for level assignment, so
        a subsample keeps the second-order passes cheap while still tracking
        the current batch every update step.
        """
        k = min(rows, batch.size)
        obs_ts = [ad.const(o[:k]) for o in batch.obs]
        actions = []
        for i, agent in enumerate(self.agents):
            bound = agent.policy.bind(tape)
            noise = None
            if self.head == "gumbel_softmax":
                noise = ad.const(replay_mod.gumbel_noise(
                    self.gumbel_rng, (k, self.env.spec.act_dims[i])))
            actions.append(nets.policy_forward(agent.policy, bound, obs_ts[i],
                                               "train", noise,
                                               self.cfg.gumbel_temperature))
        cbound = self.critics[0].bind(tape)
        q_fn = lambda acts: nets.critic_forward(self.critics[0], cbound, obs_ts, acts)
        return [shaping_capacity(q_fn, actions, i)
                for i in range(self.env.spec.n_agents)]

    def _head_fn(self, noise):
        if self.head == "sigmoid":
            return ad.sigmoid
        if self.head == "tanh":
            return ad.tanh
        if self.head == "gumbel_softmax":
            temp = self.cfg.gumbel_temperature
            return lambda pre: ad.gumbel_softmax(pre, temp, noise)
        return lambda pre: pre

    def actor_phase(self, tape, batch):
        acfg = self.cfg.anticipation
        obs_ts, bounds, noises, actions, pres = self._policy_actions(tape, batch)
        q_fns = self._q_fns(tape, obs_ts)
        k = batch.size
        n = self.env.spec.n_agents
        # anticipated actions stay inside the head's range for continuous games
        arange = self.bounds if self.env.spec.action_kind == "continuous" else None

        if acfg.rule == "hla":
            t0 = time.perf_counter()
            if acfg.hierarchy == "fixed_random":
                level_to_agent = self._fixed_levels
            else:
                sc = self._shaping_capacities(tape, batch)
                level_to_agent = hla_assign_levels(sc)
            acts_by_level = [actions[a] for a in level_to_agent]

            def q_by_level(acts_level):
                by_agent = [None] * n
                for lvl, agent_idx in enumerate(level_to_agent):
                    by_agent[agent_idx] = acts_level[lvl]
                return q_fns[0](by_agent)

            abar = {}
            self.anticipation_seconds += time.perf_counter() - t0
            for level in range(n - 1, -1, -1):
                t0 = time.perf_counter()
                objective, abar_l, _ = hla_update_stage(
                    q_by_level, acts_by_level, level, abar, acfg.eta_hat,
                    acfg.use_alg3_scaling, bounds=arange)
                abar[level] = abar_l
                self.anticipation_seconds += time.perf_counter() - t0
                agent_idx = level_to_agent[level]
                self._apply_actor_grad(agent_idx, bounds[agent_idx], objective, k,
                                       pres[agent_idx])
            return

        for i in range(n):
            t0 = time.perf_counter()
            if acfg.rule == "naive":
                objective = naive_objective(q_fns, actions, i)
            elif acfg.rule == "la":
                objective = la_objective(q_fns, actions, i, acfg.eta_hat,
                                         bounds=arange)
            elif acfg.rule == "lola":
                objective = lola_objective(q_fns, actions, i, acfg.eta_hat,
                                           acfg.reasoning_order, bounds=arange)
            elif acfg.rule == "param_anticipation":
                ctx = [(self.agents[j].policy, bounds[j], obs_ts[j],
                        self._head_fn(noises[j])) for j in range(n)]
                objective = param_anticipation_objective(q_fns, actions, i,
                                                         acfg.eta_param, ctx)
            else:
                raise ConfigError(f"unhandled rule {acfg.rule!r}")
            self.anticipation_seconds += time.perf_counter() - t0
            self._apply_actor_grad(i, bounds[i], objective, k, pres[i])

    def update_step(self):
        batch = self.buffer.sample(self.cfg.batch_k, self.replay_rng)
        if batch is None:
            return False
        t0 = time.perf_counter()
        tape = ad.Tape()
        self.critic_phase(tape, batch)
        if self.global_step >= self.actor_warmup:
            self.actor_phase(tape, batch)
        for agent in self.agents:
            nets.polyak_update(agent.policy_target)
        for pair in self.critic_targets:
            nets.polyak_update(pair)
        self.last_tape_nodes = len(tape)
        self.update_seconds += time.perf_counter() - t0
        self.update_count += 1
        return True

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def greedy_actions(self, obs):
        return [nets.policy_act_np(agent.policy, obs[i], "eval")
                for i, agent in enumerate(self.agents)]

    def evaluate(self):
        sums = {}
        counts = {}
        for _ in range(self.cfg.eval_episodes):
            obs = self.eval_env.reset(self.eval_rng)
            rewards = np.zeros(self.eval_env.spec.n_agents)
            for _ in range(self.eval_env.spec.horizon):
                res = self.eval_env.step(self.greedy_actions(obs))
                obs = res.obs
                rewards += res.rewards
            stats = {"aer": float(rewards.mean() / self.eval_env.spec.horizon)}
            stats.update(self.eval_env.episode_summary())
            for name, val in stats.items():
                sums[name] = sums.get(name, 0.0) + val
                counts[name] = counts.get(name, 0) + 1
        return {f"eval_{k}": sums[k] / counts[k] for k in sums}

    def episode_metrics(self, ep_stats):
        out = dict(ep_stats)
        if self.env.name == "irg":
            probe = self.greedy_actions(self.env._obs())
            out["dte"] = metrics_mod.dte(float(probe[0][0]), float(probe[1][0]))
        return out

    # ------------------------------------------------------------------

    def run(self, sinks=()):
        cfg = self.cfg
        start = time.perf_counter()
        final = {}
        for ep in range(1, cfg.episodes + 1):
            if cfg.sigma_final is not None and cfg.episodes > 1:
                frac = (ep - 1) / (cfg.episodes - 1)
                self._sigma = cfg.sigma_explore + frac * (cfg.sigma_final
                                                          - cfg.sigma_explore)
            stats = self.episode_metrics(self.rollout_episode())
            if ep % cfg.eval_every == 0 or ep == cfg.episodes:
                stats.update(self.evaluate())
            for sink in sinks:
                sink.append(ep, stats)
            final = stats
        wall = time.perf_counter() - start
        return {
            "episodes": cfg.episodes,
            "final": final,
            "updates": self.update_count,
            "wall_clock_s": wall,
            "mean_update_ms": (1e3 * self.update_seconds / self.update_count
                               if self.update_count else 0.0),
        }


def run_training(cfg, sinks=()):
    """Run one seed to completion, emitting per-episode metrics to sinks."""
    return Trainer(cfg).run(sinks)
