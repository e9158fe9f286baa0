"""Command-line entry point.

    latent-sensing gen-data | train-vae | train-dqn --modality x|w | eval
                   | dump-latent | simulate | state-space N M E
    global flags: --config PATH  --seed U64  --out-dir PATH
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from . import serialize
from .jmvae import TrainingDiverged
from .dqn import QLossDiverged
from .world import state_space_size

log = logging.getLogger("latent_sensing")


class CommandError(RuntimeError):
    pass


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CommandError(f"missing {what}: {path}")
    return path


def _out(cfg: pl.RunConfig, name: str) -> Path:
    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out_dir}: {exc}") from exc
    return out_dir / name


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise CommandError(f"cannot write {path}: {exc}") from exc


def _load_model(cfg):
    return serialize.load_jmvae(_require(cfg.path(pl.VAE_FILE), "VAE weights"))


def _load_q(cfg, modality):
    net, _ = serialize.load_qnet(_require(cfg.path(pl.q_file(modality)), f"{modality} Q-network weights"))
    return net


def cmd_gen_data(cfg: pl.RunConfig, args) -> int:
    path = _out(cfg, pl.DATA_FILE)
    rows = pl.dataset_rows(pl.make_dataset(cfg))
    _write(path, serialize.csv_text(pl.data_header(cfg.vae.d_x, cfg.vae.d_w), rows))
    log.info("wrote %d rows to %s", len(rows), path)
    return 0


def cmd_train_vae(cfg: pl.RunConfig, args) -> int:
    data_path = cfg.path(pl.DATA_FILE)
    if data_path.is_file():
        dataset = pl.read_dataset(data_path, cfg)
        if len(dataset[0]) != cfg.vae.dataset_size:
            raise CommandError(f"{data_path} has {len(dataset[0])} rows, config expects {cfg.vae.dataset_size}")
    else:
        dataset = pl.make_dataset(cfg)
    hist_path = _out(cfg, pl.VAE_HISTORY_FILE)
    try:
        model, history = pl.train_vae(cfg, dataset)
    except TrainingDiverged as exc:
        _write(hist_path, serialize.csv_text(pl.VAE_HISTORY_HEADER, pl.vae_history_rows(exc.history)))
        raise CommandError(str(exc)) from exc
    _write(hist_path, serialize.csv_text(pl.VAE_HISTORY_HEADER, pl.vae_history_rows(history)))
    _write(_out(cfg, pl.VAE_FILE), serialize.dumps(serialize.jmvae_to_json(model)))
    if history:
        log.info("VAE loss %.5f -> %.5f over %d epochs", history[0].total, history[-1].total, len(history))
    return 0


def cmd_train_dqn(cfg: pl.RunConfig, args) -> int:
    model = _load_model(cfg)
    modality = args.modality
    try:
        qnet, history = pl.train_q(cfg, model, modality)
    except QLossDiverged as exc:
        raise CommandError(str(exc)) from exc
    rows = [[i, h.total_reward, h.epsilon, h.loss_mean] for i, h in enumerate(history)]
    _write(_out(cfg, pl.dqn_history_file(modality)), serialize.csv_text(pl.DQN_HISTORY_HEADER, rows))
    _write(_out(cfg, pl.q_file(modality)),
           serialize.dumps(serialize.qnet_to_json(qnet, modality, cfg.world.n_poi, model.d_z)))
    log.info("trained %s-network over %d episodes", modality, len(history))
    return 0


def cmd_eval(cfg: pl.RunConfig, args) -> int:
    model = _load_model(cfg)
    nets = {m: _load_q(cfg, m) for m in ("x", "w")}
    summaries, env_rows = [], []
    for m, net in nets.items():
        evals = pl.evaluate_modality(cfg, model, net, m)
        summaries.append(pl.summarize(m, evals))
        env_rows += [[m, i, "".join(map(str, e.classes)), e.policy, e.policy_replay, e.policy_replay_se,
                      e.oracle, e.oracle_se] for i, e in enumerate(evals)]
    _write(_out(cfg, pl.EVAL_ENVS_FILE), serialize.csv_text(pl.EVAL_ENVS_HEADER, env_rows))
    _write(_out(cfg, pl.EVAL_FILE), serialize.csv_text(pl.EVAL_HEADER, [list(s) for s in summaries]))
    for s in summaries:
        print(f"{s.modality}: policy {s.policy_mean:.6f}  oracle {s.oracle_mean:.6f}  "
              f"ratio {s.ratio:.6f}  envs {s.n_envs}  dominance violations {s.violations}")
    bad = [s.modality for s in summaries if s.violations]
    if bad:
        raise CommandError(f"policy exceeded the oracle beyond tolerance for modality {', '.join(bad)}")
    return 0


def cmd_dump_latent(cfg: pl.RunConfig, args) -> int:
    model = _load_model(cfg)
    rows = pl.latent_rows(model, pl.heldout_dataset(cfg, args.samples))
    _write(_out(cfg, pl.LATENT_FILE), serialize.csv_text(pl.latent_header(model.d_z), rows))
    return 0


def cmd_simulate(cfg: pl.RunConfig, args) -> int:
    model = _load_model(cfg)
    qx, qw = _load_q(cfg, "x"), _load_q(cfg, "w")
    env, trace, _ = pl.simulate(cfg, model, qx, qw)
    _write(_out(cfg, pl.SIM_FILE), serialize.csv_text(pl.SIM_HEADER, pl.sim_rows(trace)))
    log.info("simulated environment %s: %d actions", env.poi_classes, len(trace))
    return 0


def cmd_state_space(cfg, args) -> int:
    try:
        print(state_space_size(args.n_poi, args.n_mod, args.n_enc))
    except (ValueError, OverflowError) as exc:
        raise CommandError(str(exc)) from exc
    return 0


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS, help="overrides the config seed")
    common.add_argument("--out-dir", type=Path, default=argparse.SUPPRESS, help="artifact directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="latent-sensing", parents=[common],
                                     description="Multi-modal VAE active-sensing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic training set").set_defaults(
        func=cmd_gen_data)
    sub.add_parser("train-vae", parents=[common], help="train the JMVAE").set_defaults(func=cmd_train_vae)
    p = sub.add_parser("train-dqn", parents=[common], help="train one modality's Q-network")
    p.add_argument("--modality", choices=("x", "w"), required=True)
    p.set_defaults(func=cmd_train_dqn)
    sub.add_parser("eval", parents=[common], help="greedy policies versus the oracle").set_defaults(
        func=cmd_eval)
    p = sub.add_parser("dump-latent", parents=[common], help="encoder statistics on held-out data")
    p.add_argument("--samples", type=int, default=pl.HELDOUT_SIZE)
    p.set_defaults(func=cmd_dump_latent)
    sub.add_parser("simulate", parents=[common], help="two agents on a shared map").set_defaults(
        func=cmd_simulate)
    p = sub.add_parser("state-space", parents=[common], help="count discrete map states")
    p.add_argument("n_poi", type=int)
    p.add_argument("n_mod", type=int)
    p.add_argument("n_enc", type=int)
    p.set_defaults(func=cmd_state_space)
    return parser


def resolve_config(args) -> pl.RunConfig:
    cfg = pl.RunConfig.load(args.config) if getattr(args, "config", None) else pl.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out_dir", None) is not None:
        cfg.out_dir = str(args.out_dir)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except (CommandError, pl.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
