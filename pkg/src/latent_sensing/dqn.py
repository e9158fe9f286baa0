"""Per-modality deep Q-learning over the latent belief map.

Action indices: ``0..N-1`` observe that PoI, ``N`` is NOP.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .jmvae import JmvaeModel, check_modality, encode_uni, other_modality
from .nnkit import (
    DenseNet,
    DiagGaussian,
    RngStream,
    adam_init,
    adam_step,
    init_dense,
    net_apply,
    net_backward,
    net_forward,
)
from .world import (
    Belief,
    Environment,
    WorldConfig,
    WorldMap,
    gen_features,
    information_batch,
    observe,
    observe_feature,
    sample_environment,
    state_vector,
    updated_posterior,
)

log = logging.getLogger(__name__)

NOP_REWARD = 0.0
NO_GAIN_REWARD = -1.0


class QLossDiverged(RuntimeError):
    pass


@dataclass
class DqnConfig:
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_min: float = 0.01
    eps_decay: float = 0.99
    learning_rate: float = 0.001
    episodes: int = 2000
    replay_capacity: int = 10000
    batch_size: int = 32
    target_sync_every: int = 100
    eval_envs: int = 512
    hidden: int = 24
    updates_per_step: int = 8

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.eps_min <= self.eps_start <= 1.0:
            raise ValueError("need 0 <= eps_min <= eps_start <= 1")
        if not 0.0 < self.eps_decay <= 1.0:
            raise ValueError("eps_decay must lie in (0, 1]")
        if min(self.replay_capacity, self.batch_size, self.target_sync_every, self.eval_envs) < 1:
            raise ValueError("replay_capacity, batch_size, target_sync_every and eval_envs must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")


def init_qnet(n_poi: int, d_z: int, rng: RngStream, hidden: int = 24) -> DenseNet:
    return init_dense([2 * d_z * n_poi, hidden, hidden, n_poi + 1], rng)


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """FIFO experience memory with uniform sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, t: Transition) -> None:
        self.items.append(t)

    def sample(self, k: int, rng: RngStream) -> list[Transition]:
        idx = rng.integers(0, len(self.items), size=k)
        return [self.items[i] for i in idx]


class EpisodeResult(NamedTuple):
    total_reward: float
    steps: int
    terminal: str  # "nop" or "cap"
    actions: tuple[int, ...] = ()


def reward_for(delta_info: float, tau: float) -> float:
    return float(delta_info) if delta_info > tau else NO_GAIN_REWARD


def reset_episode(model: JmvaeModel, world_cfg: WorldConfig, modality: str,
                  rng: RngStream) -> tuple[Environment, WorldMap]:
    """Fresh environment; each PoI pre-observed by the other modality with probability ``p_other``."""
    other = other_modality(modality)
    env = sample_environment(world_cfg.n_poi, rng)
    wmap = WorldMap.fresh(env.n_poi, model.d_z)
    for n, cls in enumerate(env.poi_classes):
        if rng.uniform() < world_cfg.p_other:
            feat = gen_features(cls, other, world_cfg.noise_std, rng)
            flag = "observed_x" if other == "x" else "observed_w"
            belief = Belief(encode_uni(model, other, feat), **{flag: True})
            wmap = wmap.with_belief(n, belief)
    return env, wmap


def env_step(env: Environment, wmap: WorldMap, action: int, modality: str, model: JmvaeModel,
             rng: RngStream, steps_so_far: int, world_cfg: WorldConfig) -> tuple[float, WorldMap, bool]:
    n_poi = env.n_poi
    if not 0 <= action <= n_poi:
        raise ValueError(f"action {action} invalid for {n_poi} PoIs")
    if action == n_poi:
        return NOP_REWARD, wmap, True
    delta, new_map = observe(env, wmap, action, modality, model, rng, world_cfg.noise_std)
    done = steps_so_far + 1 >= world_cfg.max_steps
    return reward_for(delta, world_cfg.delta_threshold), new_map, done


def select_action(qvals, epsilon: float, rng: RngStream) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    qvals = np.asarray(qvals)
    if rng.uniform() < epsilon:
        return int(rng.integers(0, len(qvals)))
    return int(np.argmax(qvals))


def td_targets(batch: list[Transition], target_net: DenseNet, gamma: float) -> np.ndarray:
    if not batch:
        raise ValueError("empty batch")
    rewards = np.array([t.reward for t in batch])
    done = np.array([t.done for t in batch])
    q_next = net_apply(target_net, np.stack([t.next_state for t in batch])).max(axis=1)
    return rewards + np.where(done, 0.0, gamma * q_next)


def dqn_update(online: DenseNet, target: DenseNet, batch: list[Transition], gamma: float, opt) -> float:
    """One Adam step on the mean squared TD error of the taken actions."""
    y = td_targets(batch, target, gamma)
    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch])
    q, cache = net_forward(online, states)
    rows = np.arange(len(batch))
    err = q[rows, actions] - y
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise QLossDiverged("non-finite Q loss")
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * err / len(batch)
    grads, _ = net_backward(online, cache, grad_out)
    adam_step(online.params(), grads, opt)
    return loss


def _copy_params(src: DenseNet, dst: DenseNet) -> None:
    for s, d in zip(src.params(), dst.params()):
        d[...] = s


class EpisodeLog(NamedTuple):
    total_reward: float
    epsilon: float
    loss_mean: float


def train_dqn(model: JmvaeModel, modality: str, world_cfg: WorldConfig, cfg: DqnConfig,
              rng: RngStream) -> tuple[DenseNet, list[EpisodeLog]]:
    """Train one modality's Q-network; the JMVAE stays frozen.

    ``epsilon`` in the log is the value used during that episode; it is
    decayed multiplicatively after every episode.
    """
    check_modality(modality)
    online = init_qnet(world_cfg.n_poi, model.d_z, rng.child("init"), cfg.hidden)
    target = online.copy()
    opt = adam_init(online.params(), lr=cfg.learning_rate)
    memory = ReplayBuffer(cfg.replay_capacity)
    env_rng, act_rng, replay_rng = rng.child("env"), rng.child("explore"), rng.child("replay")

    history: list[EpisodeLog] = []
    epsilon = cfg.eps_start
    grad_steps = 0
    for episode in range(cfg.episodes):
        env, wmap = reset_episode(model, world_cfg, modality, env_rng)
        state = state_vector(wmap)
        total, losses, steps, done = 0.0, [], 0, False
        while not done:
            action = select_action(net_apply(online, state), epsilon, act_rng)
            reward, wmap, done = env_step(env, wmap, action, modality, model, env_rng, steps, world_cfg)
            steps += 1
            next_state = state_vector(wmap)
            memory.push(Transition(state, action, reward, next_state, done))
            total += reward
            state = next_state
            for _ in range(cfg.updates_per_step if len(memory) >= cfg.batch_size else 0):
                try:
                    losses.append(dqn_update(online, target, memory.sample(cfg.batch_size, replay_rng),
                                             cfg.gamma, opt))
                except QLossDiverged as exc:
                    raise QLossDiverged(f"{exc} in episode {episode}") from exc
                grad_steps += 1
                if grad_steps % cfg.target_sync_every == 0:
                    _copy_params(online, target)
        history.append(EpisodeLog(total, epsilon, float(np.mean(losses)) if losses else 0.0))
        epsilon = max(cfg.eps_min, epsilon * cfg.eps_decay)
    return online, history


def run_greedy_episode(qnet: DenseNet, model: JmvaeModel, modality: str, env: Environment,
                       wmap: WorldMap, world_cfg: WorldConfig, rng: RngStream) -> tuple[EpisodeResult, WorldMap]:
    total, steps, actions = 0.0, 0, []
    while True:
        action = int(np.argmax(net_apply(qnet, state_vector(wmap))))
        actions.append(action)
        reward, wmap, done = env_step(env, wmap, action, modality, model, rng, steps, world_cfg)
        total += reward
        steps += 1
        if done:
            cause = "nop" if action == env.n_poi else "cap"
            return EpisodeResult(total, steps, cause, tuple(actions)), wmap


class EvalRecord(NamedTuple):
    env: Environment
    start: WorldMap
    result: EpisodeResult


def eval_episodes(qnet: DenseNet, model: JmvaeModel, modality: str, world_cfg: WorldConfig,
                  n_envs: int, rng: RngStream) -> list[EvalRecord]:
    """Greedy rollouts on ``n_envs`` sampled environments, each with its own child streams."""
    if n_envs < 1:
        raise ValueError("n_envs must be >= 1")
    out = []
    for i in range(n_envs):
        env, start = reset_episode(model, world_cfg, modality, rng.child(f"env-{i}"))
        result, _ = run_greedy_episode(qnet, model, modality, env, start, world_cfg, rng.child(f"run-{i}"))
        out.append(EvalRecord(env, start, result))
    return out


def evaluate_policy(qnet: DenseNet, model: JmvaeModel, modality: str, world_cfg: WorldConfig,
                    n_envs: int, rng: RngStream) -> float:
    records = eval_episodes(qnet, model, modality, world_cfg, n_envs, rng)
    return float(np.mean([r.result.total_reward for r in records]))


class OracleResult(NamedTuple):
    value: float
    stderr: float
    actions: tuple[int, ...]


class OracleTables(NamedTuple):
    """Monte-Carlo tables shared by the oracle and policy replays.

    ``feats[n][m]`` is the (k, d) batch of features used for the (m+1)-th
    observation of PoI ``n`` in each of ``k`` chains; ``cum[n][:, m]`` is
    the summed reward of observing PoI ``n`` ``m`` times in a row.
    """
    feats: list[np.ndarray]
    cum: list[np.ndarray]


MAX_ORACLE_POI = 6


def oracle_tables(env: Environment, start: WorldMap, model: JmvaeModel, modality: str,
                  world_cfg: WorldConfig, rng: RngStream, k: int = 32) -> OracleTables:
    flag = "observed_x" if modality == "x" else "observed_w"
    tau = world_cfg.delta_threshold
    all_feats, all_cum = [], []
    for n, cls in enumerate(env.poi_classes):
        chain_rng = rng.child(f"poi-{n}")
        b0 = start.beliefs[n]
        mu = np.broadcast_to(b0.posterior.mu, (k, model.d_z)).copy()
        sigma = np.broadcast_to(b0.posterior.sigma, (k, model.d_z)).copy()
        belief = replace(b0, posterior=DiagGaussian(mu, sigma))
        info = information_batch(sigma)
        cum = np.zeros((k, world_cfg.max_steps + 1))
        feats = []
        for m in range(1, world_cfg.max_steps + 1):
            batch = gen_features(cls, modality, world_cfg.noise_std, chain_rng, size=k)
            post = updated_posterior(model, belief, batch, modality)
            new_info = information_batch(post.sigma)
            delta = new_info - info
            cum[:, m] = cum[:, m - 1] + np.where(delta > tau, delta, NO_GAIN_REWARD)
            belief = replace(belief, posterior=post, **{flag: True})
            info = new_info
            feats.append(batch)
        all_feats.append(np.stack(feats))
        all_cum.append(cum)
    return OracleTables(all_feats, all_cum)


def oracle_optimal(env: Environment, start: WorldMap, model: JmvaeModel, modality: str,
                   world_cfg: WorldConfig, rng: RngStream, k: int = 32,
                   tables: OracleTables | None = None) -> OracleResult:
    """Best expected undiscounted return over every action sequence up to the step cap.

    Sequences end with NOP or when the cap is reached. Each observation's
    reward is estimated from ``k`` noise resamples; PoIs evolve independently,
    so a sequence's value only depends on how often it visits each PoI.
    """
    n_poi = env.n_poi
    if n_poi > MAX_ORACLE_POI:
        raise ValueError(f"oracle enumeration limited to {MAX_ORACLE_POI} PoIs, got {n_poi}")
    if tables is None:
        tables = oracle_tables(env, start, model, modality, world_cfg, rng, k)
    cum = tables.cum
    k = cum[0].shape[0]
    means = [c.mean(axis=0) for c in cum]
    cap = world_cfg.max_steps

    best_value, best_seq = -np.inf, ()
    counts = [0] * n_poi
    seq: list[int] = []

    def value() -> float:
        return sum(means[n][counts[n]] for n in range(n_poi))

    def search(depth: int) -> None:
        nonlocal best_value, best_seq
        v = value()  # stop here with NOP
        if v > best_value:
            best_value, best_seq = v, tuple(seq) + (n_poi,)
        for a in range(n_poi):
            counts[a] += 1
            seq.append(a)
            if depth + 1 == cap:
                v = value()
                if v > best_value:
                    best_value, best_seq = v, tuple(seq)
            else:
                search(depth + 1)
            seq.pop()
            counts[a] -= 1

    search(0)
    visits = [best_seq.count(n) for n in range(n_poi)]
    var = sum(cum[n][:, visits[n]].var(ddof=1) / k for n in range(n_poi)) if k > 1 else 0.0
    return OracleResult(float(best_value), float(np.sqrt(var)), best_seq)


def policy_value_replay(qnet: DenseNet, model: JmvaeModel, modality: str, env: Environment,
                        start: WorldMap, world_cfg: WorldConfig,
                        tables: OracleTables) -> tuple[float, float]:
    """Greedy policy's mean return (and its standard error) on the oracle's noise chains."""
    k = tables.feats[0].shape[1]
    tau = world_cfg.delta_threshold
    returns = np.empty(k)
    for j in range(k):
        wmap, visits, total = start, [0] * env.n_poi, 0.0
        for step in range(world_cfg.max_steps):
            action = int(np.argmax(net_apply(qnet, state_vector(wmap))))
            if action == env.n_poi:
                break
            feat = tables.feats[action][visits[action], j]
            visits[action] += 1
            delta, wmap = observe_feature(wmap, action, feat, modality, model)
            total += reward_for(delta, tau)
        returns[j] = total
    se = returns.std(ddof=1) / np.sqrt(k) if k > 1 else 0.0
    return float(returns.mean()), float(se)


class TraceRow(NamedTuple):
    agent: str
    action: int
    reward: float
    total_information: float


def simulate_joint(qnet_x: DenseNet, qnet_w: DenseNet, model: JmvaeModel, env: Environment,
                   world_cfg: WorldConfig, rng: RngStream,
                   wmap: WorldMap | None = None) -> tuple[list[TraceRow], WorldMap]:
    """Two greedy agents take turns (x first) on one shared map.

    An agent that plays NOP retires. Every action, NOP included, counts
    toward the combined cap of ``2 * max_steps``.
    """
    if wmap is None:
        wmap = WorldMap.fresh(env.n_poi, model.d_z)
    nets = {"x": qnet_x, "w": qnet_w}
    active = ["x", "w"]
    agent_rngs = {m: rng.child(f"agent-{m}") for m in active}
    trace: list[TraceRow] = []
    cap = 2 * world_cfg.max_steps
    turn = 0
    while active and len(trace) < cap:
        agent = active[turn % len(active)]
        action = int(np.argmax(net_apply(nets[agent], state_vector(wmap))))
        if action == env.n_poi:
            trace.append(TraceRow(agent, action, NOP_REWARD, wmap.total_information()))
            idx = active.index(agent)
            active.remove(agent)
            turn = idx  # the next agent in order now sits at this index
            continue
        delta, wmap = observe(env, wmap, action, agent, model, agent_rngs[agent], world_cfg.noise_std)
        trace.append(TraceRow(agent, action, reward_for(delta, world_cfg.delta_threshold),
                              wmap.total_information()))
        turn += 1
    return trace, wmap
