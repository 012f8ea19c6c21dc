"""Command-line pipeline: synth -> corrupt -> clean -> vocab -> train -> rollout -> eval -> report.

Every stage reads one JSON config (``--config``) whose sections mirror the
library's config dataclasses; flags override config values. Outputs go to
the directory given by ``--out``. Exit codes: 0 success, 1 validation or
pipeline failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cleaning import CleaningConfig, clean
from .config import from_dict, load_config, to_dict
from .core import SPLITS
from .corpus import read_corpus, write_corpus
from .errors import NoiseSimError
from .idm import IdmParams
from .losses import LossSpec
from .metrics import MetricsConfig, MetricsReport, evaluate
from .noise import NoiseConfig, corrupt, drop_unobserved
from .policy import load_checkpoint, save_checkpoint
from .report import corpus_summary, results_table, svg_fan, svg_histogram
from .rollout import ConstantSpeedPolicy, IdmPolicy, LearnedPolicy, rollout_batch
from .seeding import derive_seed
from .synth import CorpusRecipe, synthesize_corpus
from .tokenizer import TokenVocab, build_vocab, extract_deltas
from .training import TrainConfig, train

log = logging.getLogger("noisesim")

LOSS_FLAGS = {"ce": "ce", "ls": "ce_label_smoothing", "focal": "focal", "sce": "symmetric_ce"}


@dataclass(frozen=True)
class TokenizerConfig:
    size: int = 512
    epsilon: float = 0.25
    w_h: float = 1.0
    token_period: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    synth: CorpusRecipe = field(default_factory=CorpusRecipe)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossSpec = field(default_factory=LossSpec)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    idm: IdmParams = field(default_factory=IdmParams)
    compress: bool = False


def _config(args) -> PipelineConfig:
    return from_dict(PipelineConfig, load_config(args.config))


# ------------------------------------------------------------------- helpers


def _map_jobs(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [fn(x) for x in items]


def _load(corpus_dir, split=None):
    return list(read_corpus(corpus_dir, split))


def _write(items, out, compress):
    scenarios = [sc for sc, _ in items]
    maps = {rmap.map_id: rmap for _, rmap in items}
    return write_corpus(scenarios, maps, out, compress=compress)


def _corrupt_one(job):
    sc, rmap, cfg = job
    if sc.split == "test":
        return sc, rmap
    return drop_unobserved(corrupt(sc, cfg)), rmap


def _clean_one(job):
    sc, rmap, cfg = job
    if sc.split == "test":
        return sc, rmap
    return clean(sc, rmap, cfg), rmap


def _policy(args, cfg: PipelineConfig):
    if args.policy == "const":
        return ConstantSpeedPolicy()
    if args.policy == "idm":
        return IdmPolicy(cfg.idm)
    if not args.checkpoint or not args.vocab:
        raise _Usage("--policy learned needs --checkpoint and --vocab")
    vocab = _read_vocab(args.vocab)
    params, header = load_checkpoint(_checkpoint_path(args.checkpoint))
    if header.get("vocab_sha256") and header["vocab_sha256"] != vocab.digest():
        raise NoiseSimError("shape-mismatch", "checkpoint was trained with a different vocabulary")
    return LearnedPolicy(params, vocab)


def _read_vocab(path) -> TokenVocab:
    p = Path(path)
    if p.is_dir():
        p = p / "vocab.json"
    return TokenVocab.from_json(json.loads(p.read_text()))


def _checkpoint_path(path) -> Path:
    p = Path(path)
    return p / "policy.ckpt" if p.is_dir() else p


def _metrics_config(args, cfg: PipelineConfig) -> MetricsConfig:
    m = cfg.metrics
    if args.k_rollouts is not None:
        m = replace(m, k_rollouts=args.k_rollouts)
    if args.temperature is not None:
        m = replace(m, temperature=args.temperature)
    return m


def _seed(args, default):
    return default if args.seed is None else args.seed


class _Usage(Exception):
    pass


# ------------------------------------------------------------------ commands


def cmd_synth(args, cfg):
    recipe = replace(cfg.synth, seed=_seed(args, cfg.synth.seed))
    scenarios, rmap = synthesize_corpus(recipe)
    manifest = write_corpus(scenarios, [rmap], args.out, compress=cfg.compress)
    log.info("wrote %d scenarios to %s", len(manifest.scenarios), args.out)


def cmd_corrupt(args, cfg):
    noise = replace(cfg.noise, seed=_seed(args, cfg.noise.seed))
    items = _load(args.corpus)
    out = _map_jobs(_corrupt_one, [(sc, rmap, noise) for sc, rmap in items], args.jobs)
    _write(out, args.out, cfg.compress)


def cmd_clean(args, cfg):
    items = _load(args.corpus)
    out = _map_jobs(_clean_one, [(sc, rmap, cfg.cleaning) for sc, rmap in items], args.jobs)
    _write(out, args.out, cfg.compress)


def cmd_vocab(args, cfg):
    tk = cfg.tokenizer
    split = args.split or "train"
    deltas = extract_deltas(_load(args.corpus, split), tk.token_period)
    vocab = build_vocab(deltas, tk.size, tk.epsilon, _seed(args, tk.seed), tk.w_h, tk.token_period)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.json").write_text(json.dumps(vocab.to_json(), sort_keys=True) + "\n")
    if vocab.doublings:
        log.warning("epsilon doubled %d time(s) to %g to fit %d templates", vocab.doublings, vocab.epsilon, tk.size)


def cmd_train(args, cfg):
    if not args.vocab:
        raise _Usage("train needs --vocab")
    vocab = _read_vocab(args.vocab)
    loss = cfg.loss
    overrides = {k: getattr(args, k) for k in ("gamma", "epsilon_smooth", "alpha", "beta", "eta")
                 if getattr(args, k) is not None}
    if args.loss is not None:
        overrides["kind"] = LOSS_FLAGS[args.loss]
    loss = replace(loss, **overrides)
    tc = replace(cfg.train, seed=_seed(args, cfg.train.seed))
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    params, history = train(_load(args.corpus), vocab, loss, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "policy.ckpt", params, vocab.digest())
    with open(out / "train_log.jsonl", "w") as fh:
        fh.write(json.dumps({"loss": to_dict(loss), "train": to_dict(tc)}, sort_keys=True) + "\n")
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _rollout_job(job):
    sc, rmap, policy, m, seed = job
    return rollout_batch(sc, rmap, policy, m.k_rollouts, m.temperature, derive_seed(seed, sc.scenario_id))


def cmd_rollout(args, cfg):
    policy = _policy(args, cfg)
    m = _metrics_config(args, cfg)
    seed = _seed(args, cfg.seed)
    items = _load(args.corpus, args.split or "test")
    batches = _map_jobs(_rollout_job, [(sc, rmap, policy, m, seed) for sc, rmap in items], args.jobs)
    out = Path(args.out)
    (out / "rollouts").mkdir(parents=True, exist_ok=True)
    index = []
    for (sc, _), b in zip(items, batches):
        np.save(out / "rollouts" / f"{sc.scenario_id}.npy", b.states)
        index.append({"scenario_id": sc.scenario_id, "file": f"rollouts/{sc.scenario_id}.npy",
                      "agent_ids": b.agent_ids.tolist(), "lengths": b.lengths.tolist(), "widths": b.widths.tolist()})
    doc = {"policy": policy.name, "k_rollouts": m.k_rollouts, "temperature": m.temperature, "seed": seed,
           "scenarios": index}
    (out / "rollouts.json").write_text(json.dumps(doc, sort_keys=True) + "\n")


def cmd_eval(args, cfg):
    policy = _policy(args, cfg)
    m = _metrics_config(args, cfg)
    items = _load(args.corpus, args.split or "test")
    report = evaluate(items, policy, m, _seed(args, cfg.seed), jobs=args.jobs)
    if args.label:
        report.policy = args.label
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.dumps() + "\n")
    print(results_table([(report.policy, report)]), end="")


def cmd_report(args, cfg):
    summary, fan = corpus_summary(read_corpus(args.corpus, args.split))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    ah, sh = summary["agent_count_histogram"], summary["speed_histogram"]
    edges = np.arange(len(ah["counts"]) + 1) - 0.5
    (out / "agent_count.svg").write_text(svg_histogram(ah["counts"], edges, "Agents per scenario", "agents"))
    (out / "speed.svg").write_text(svg_histogram(sh["counts"], sh["edges"], "Speed distribution", "speed (m/s)"))
    (out / "trajectories.svg").write_text(svg_fan(fan))
    reports = []
    for path in args.metrics or []:
        rep = MetricsReport.from_json(json.loads(Path(path).read_text()))
        reports.append((rep.policy, rep))
    if reports:
        table = results_table(reports)
        (out / "results.md").write_text(table)
        print(table, end="")
    print(f"{summary['n_scenarios']} scenarios summarised in {out}")


COMMANDS = {"synth": cmd_synth, "corrupt": cmd_corrupt, "clean": cmd_clean, "vocab": cmd_vocab, "train": cmd_train,
            "rollout": cmd_rollout, "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisesim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(p, corpus=True, out=True):
        if corpus:
            p.add_argument("corpus", help="input corpus directory")
        p.add_argument("--config", help="pipeline JSON config")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the stage seed")
        p.add_argument("--jobs", type=int, default=1, help="scenario-level worker processes")
        return p

    common(sub.add_parser("synth", help="generate a clean corpus"), corpus=False)
    common(sub.add_parser("corrupt", help="corrupt train/val, copy test unchanged"))
    common(sub.add_parser("clean", help="filter train/val tracks"))
    p = common(sub.add_parser("vocab", help="build the motion-token vocabulary"))
    p.add_argument("--split", choices=SPLITS)
    p = common(sub.add_parser("train", help="train the next-token policy"))
    p.add_argument("--vocab", help="vocab.json or its directory")
    p.add_argument("--loss", choices=sorted(LOSS_FLAGS))
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon-smooth", type=float, dest="epsilon_smooth")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--epochs", type=int)
    for name in ("rollout", "eval"):
        p = common(sub.add_parser(name, help=f"{name} a policy on one split"))
        p.add_argument("--split", choices=SPLITS)
        p.add_argument("--policy", choices=("idm", "const", "learned"), required=True)
        p.add_argument("--checkpoint", help="policy.ckpt or its directory")
        p.add_argument("--vocab", help="vocab.json or its directory")
        p.add_argument("--k-rollouts", type=int, dest="k_rollouts")
        p.add_argument("--temperature", type=float)
        if name == "eval":
            p.add_argument("--label", help="method name for the results table")
    p = common(sub.add_parser("report", help="summary statistics, plots and results table"))
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--metrics", nargs="*", help="metrics.json files to tabulate")
    return parser


def run_command(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NOISESIM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"noisesim: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"noisesim: error: {exc}", file=sys.stderr)
        return 2
    except NoiseSimError as exc:
        print(f"noisesim: {exc.code}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())
