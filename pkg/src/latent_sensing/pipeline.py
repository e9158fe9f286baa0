"""Run configuration, seeded streams and the end-to-end steps behind each CLI command."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import serialize
from .dqn import (
    DqnConfig,
    oracle_optimal,
    oracle_tables,
    eval_episodes,
    policy_value_replay,
    run_greedy_episode,
    simulate_joint,
    train_dqn,
)
from .jmvae import JmvaeConfig, JmvaeModel, latent_dump, train_jmvae
from .nnkit import DenseNet, RngStream
from .world import WorldConfig, WorldMap, gen_dataset, sample_environment


DATA_FILE = "data.csv"
VAE_FILE = "vae.json"
VAE_HISTORY_FILE = "vae_history.csv"
EVAL_FILE = "eval.csv"
EVAL_ENVS_FILE = "eval_envs.csv"
LATENT_FILE = "latent.csv"
SIM_FILE = "simulate.csv"

VAE_HISTORY_HEADER = ["epoch", "recon_x", "recon_w", "kl_prior", "kl_x", "kl_w", "total"]
DQN_HISTORY_HEADER = ["episode", "total_reward", "epsilon", "loss_mean"]
EVAL_HEADER = ["modality", "n_envs", "policy_mean", "oracle_mean", "ratio", "dominance_violations"]
EVAL_ENVS_HEADER = ["modality", "env", "classes", "policy", "policy_replay", "policy_replay_se",
                    "oracle", "oracle_se"]
SIM_HEADER = ["step", "agent", "action", "reward", "total_information"]
HELDOUT_SIZE = 300
ORACLE_RESAMPLES = 32


def q_file(modality: str) -> str:
    return f"q_{modality}.json"


def dqn_history_file(modality: str) -> str:
    return f"dqn_{modality}_history.csv"


def data_header(d_x: int, d_w: int) -> list[str]:
    return ["class"] + [f"x_{i}" for i in range(1, d_x + 1)] + [f"w_{i}" for i in range(1, d_w + 1)]


def latent_header(d_z: int) -> list[str]:
    return (["class", "input_mode"] + [f"mu{i}" for i in range(1, d_z + 1)]
            + [f"sigma{i}" for i in range(1, d_z + 1)])


class ConfigError(ValueError):
    pass


def _section(cls, values: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 42
    out_dir: str = "run"
    world: WorldConfig = field(default_factory=WorldConfig)
    vae: JmvaeConfig = field(default_factory=JmvaeConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.world.d_feat != self.vae.d_x:
            raise ConfigError("world.d_feat must equal vae.d_x")

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        unknown = set(obj) - {"seed", "out_dir", "world", "vae", "dqn"}
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
        return cls(
            seed=int(obj.get("seed", 42)),
            out_dir=str(obj.get("out_dir", "run")),
            world=_section(WorldConfig, obj.get("world", {}), "world"),
            vae=_section(JmvaeConfig, obj.get("vae", {}), "vae"),
            dqn=_section(DqnConfig, obj.get("dqn", {}), "dqn"),
        )

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def root(self) -> RngStream:
        return RngStream(self.seed)

    def path(self, name: str) -> Path:
        return Path(self.out_dir) / name


def make_dataset(cfg: RunConfig):
    return gen_dataset(cfg.vae.dataset_size, cfg.world.noise_std, cfg.root.child("data"))


def heldout_dataset(cfg: RunConfig, n: int = HELDOUT_SIZE):
    return gen_dataset(n, cfg.world.noise_std, cfg.root.child("heldout"))


def dataset_rows(dataset):
    labels, xs, ws = dataset
    return [[int(c), *x, *w] for c, x, w in zip(labels, xs, ws)]


def read_dataset(path: Path, cfg: RunConfig):
    rows = serialize.read_csv(path, data_header(cfg.vae.d_x, cfg.vae.d_w))
    arr = np.array([[float(v) for v in row] for row in rows]).reshape(len(rows), -1)
    d = cfg.vae.d_x
    return arr[:, 0].astype(int), arr[:, 1:1 + d], arr[:, 1 + d:]


def train_vae(cfg: RunConfig, dataset) -> tuple[JmvaeModel, list]:
    return train_jmvae(dataset, cfg.vae, cfg.root.child("vae"))


def vae_history_rows(history) -> list[list]:
    return [[i, h.recon_x, h.recon_w, h.kl_prior, h.kl_unimodal_x, h.kl_unimodal_w, h.total]
            for i, h in enumerate(history)]


def train_q(cfg: RunConfig, model: JmvaeModel, modality: str):
    return train_dqn(model, modality, cfg.world, cfg.dqn, cfg.root.child(f"dqn-{modality}"))


def latent_rows(model: JmvaeModel, dataset) -> list[list]:
    return [[c, mode, *mu, *sigma] for c, mode, mu, sigma in latent_dump(model, dataset)]


class EnvEval(NamedTuple):
    classes: tuple[int, ...]
    policy: float
    policy_replay: float
    policy_replay_se: float
    oracle: float
    oracle_se: float

    @property
    def dominance_violated(self) -> bool:
        return self.policy_replay > self.oracle + 3.0 * self.oracle_se


def evaluate_modality(cfg: RunConfig, model: JmvaeModel, qnet: DenseNet, modality: str,
                      n_envs: int | None = None) -> list[EnvEval]:
    """Greedy rollout, oracle optimum and policy replay on the oracle's chains, per environment."""
    n_envs = cfg.dqn.eval_envs if n_envs is None else n_envs
    root = cfg.root.child("eval").child(modality)
    records = eval_episodes(qnet, model, modality, cfg.world, n_envs, root)
    out = []
    for i, rec in enumerate(records):
        tables = oracle_tables(rec.env, rec.start, model, modality, cfg.world,
                               root.child(f"oracle-{i}"), ORACLE_RESAMPLES)
        best = oracle_optimal(rec.env, rec.start, model, modality, cfg.world, None, tables=tables)
        replay, replay_se = policy_value_replay(qnet, model, modality, rec.env, rec.start, cfg.world, tables)
        out.append(EnvEval(rec.env.poi_classes, rec.result.total_reward, replay, replay_se,
                           best.value, best.stderr))
    return out


class EvalSummary(NamedTuple):
    modality: str
    n_envs: int
    policy_mean: float
    oracle_mean: float
    ratio: float
    violations: int


def summarize(modality: str, evals: list[EnvEval]) -> EvalSummary:
    policy = float(np.mean([e.policy for e in evals]))
    oracle = float(np.mean([e.oracle for e in evals]))
    ratio = policy / oracle if oracle != 0 else float("nan")
    return EvalSummary(modality, len(evals), policy, oracle, ratio,
                       sum(e.dominance_violated for e in evals))


def simulate(cfg: RunConfig, model: JmvaeModel, qnet_x: DenseNet, qnet_w: DenseNet):
    root = cfg.root.child("sim")
    env = sample_environment(cfg.world.n_poi, root.child("env"))
    trace, final = simulate_joint(qnet_x, qnet_w, model, env, cfg.world, root.child("run"))
    return env, trace, final


def sim_rows(trace) -> list[list]:
    return [[i, row.agent, row.action, row.reward, row.total_information] for i, row in enumerate(trace)]


class JointComparison(NamedTuple):
    joint: float
    single_x: float
    single_w: float

    @property
    def joint_wins(self) -> bool:
        return self.joint > self.single_x and self.joint > self.single_w


def compare_joint_vs_single(cfg: RunConfig, model: JmvaeModel, qnet_x: DenseNet, qnet_w: DenseNet,
                            n_envs: int = 100) -> list[JointComparison]:
    """Final map information of the two-agent run versus each agent alone, per environment.

    Each agent draws its observation noise from the same child stream in
    both runs.
    """
    root = cfg.root.child("sim-compare")
    out = []
    for i in range(n_envs):
        env = sample_environment(cfg.world.n_poi, root.child(f"env-{i}"))
        run = root.child(f"run-{i}")
        _, joint_map = simulate_joint(qnet_x, qnet_w, model, env, cfg.world, run)
        singles = []
        for m, q in (("x", qnet_x), ("w", qnet_w)):
            fresh = WorldMap.fresh(env.n_poi, model.d_z)
            _, final = run_greedy_episode(q, model, m, env, fresh, cfg.world, run.child(f"agent-{m}"))
            singles.append(final.total_information())
        out.append(JointComparison(joint_map.total_information(), *singles))
    return out

