"""Batch command-line interface.

Subcommands: train, eval, bench-cache, analyze clusters|frobenius,
sweep-rank, gradcheck, make-synthetic csts|kg. Runs are configured by a
JSON file whose keys mirror TrainConfig plus input/output paths; explicit
flags win over config values. Exit codes: 0 success, 1 check failure,
2 usage/config error, 3 runtime abort. Set CONDCL_LOG=debug|info for
progress output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cache as cache_mod
from . import evaluation as eval_mod
from . import hypernet, losses, trainer
from .encoder import HashingProvider, StoreProvider, load_embeddings, save_embeddings
from .errors import (
    CondclError,
    ConfigError,
    FormatError,
    MissingEmbeddingError,
    TrainingDivergedError,
)

log = logging.getLogger("condcl")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_ABORT = 3

GRADCHECK_THRESHOLD = 1e-4
DEFAULT_DIVISORS = (1, 4, 8, 12, 16, 24)


def _setup_logging() -> None:
    level_name = os.environ.get("CONDCL_LOG", "").lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return cfg


def _require(cfg: dict, key: str) -> object:
    if key not in cfg or cfg[key] in (None, ""):
        raise ConfigError(f"missing required config key: {key!r}")
    return cfg[key]


def _existing_path(value, key: str) -> Path:
    p = Path(str(value))
    if not p.exists():
        raise ConfigError(f"{key}: path does not exist: {p}")
    return p


def _train_config_from(cfg: dict, args) -> trainer.TrainConfig:
    fields = {
        k: v
        for k, v in cfg.items()
        if k in trainer.TrainConfig.__dataclass_fields__
    }
    for flag in ("seed", "mode", "nh", "nk"):
        value = getattr(args, flag, None)
        if value is not None:
            fields[flag] = value
    if "task" not in fields:
        raise ConfigError("config must set 'task' (csts or kgc)")
    return trainer.TrainConfig.from_dict(fields)


def _store_provider(cfg: dict, key: str = "embeddings") -> StoreProvider:
    path = _existing_path(_require(cfg, key), key)
    return StoreProvider(load_embeddings(path))


def _emit(payload: str, out: str | None) -> None:
    if out:
        Path(out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)


# -- train -----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    tc = _train_config_from(cfg, args)
    provider = _store_provider(cfg)
    data_path = _existing_path(_require(cfg, "data"), "data")
    if tc.task == "csts":
        data = trainer.load_csts_jsonl(data_path)
    else:
        data = trainer.load_kg_tsv(data_path)
    out = args.out or cfg.get("out")
    report_path = cfg.get("report")
    log.info("training task=%s mode=%s nh=%d seed=%d", tc.task, tc.mode, tc.nh, tc.seed)
    report = trainer.train(tc, data, provider, checkpoint_path=out)
    payload = json.dumps(report.to_dict(), indent=2) + "\n"
    if report_path:
        Path(report_path).write_text(payload, encoding="utf-8")
    sys.stdout.write(payload)
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def _entities_from_triples(*triple_lists) -> list[str]:
    seen: set[str] = set()
    for triples in triple_lists:
        for t in triples:
            seen.add(t.h)
            seen.add(t.t)
    return sorted(seen)


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    task = cfg.get("task")
    if task not in trainer.TASKS:
        raise ConfigError("config must set 'task' (csts or kgc)")
    provider = _store_provider(cfg)
    ckpt = _existing_path(_require(cfg, "checkpoint"), "checkpoint")
    params, _extras = hypernet.load_checkpoint(ckpt)
    hypernet.params_dim_check(params, provider.dim)
    data_path = _existing_path(_require(cfg, "data"), "data")

    if task == "csts":
        quads = trainer.load_csts_jsonl(data_path)
        split = args.split or "overall"
        if split != "overall":
            train_path = _existing_path(_require(cfg, "train_data"), "train_data")
            train_conditions = {q.c for q in trainer.load_csts_jsonl(train_path)}
            seen, unseen = eval_mod.split_seen_unseen(train_conditions, quads)
            quads = seen if split == "seen" else unseen
            if not quads:
                raise ConfigError(f"split {split!r} selected zero instances")
        metrics = eval_mod.evaluate_csts(params, provider, quads)
        metrics["instances"] = len(quads)
    else:
        if args.split not in (None, "overall"):
            raise ConfigError("seen/unseen splits apply to the csts task only")
        eval_triples = trainer.load_kg_tsv(data_path)
        filter_paths = cfg.get("filter_data") or []
        if not isinstance(filter_paths, list):
            raise ConfigError("'filter_data' must be a list of TSV paths")
        known = list(eval_triples)
        for fp in filter_paths:
            known.extend(trainer.load_kg_tsv(_existing_path(fp, "filter_data")))
        entities = _entities_from_triples(known)
        ks = cfg.get("ks", [1, 3, 10])
        metrics = eval_mod.evaluate_kgc(params, provider, eval_triples, known, entities, ks=ks)
    _emit(json.dumps(metrics, indent=2) + "\n", args.out)
    return EXIT_OK


# -- bench-cache --------------------------------------------------------------


def _load_workload(path: Path) -> list[tuple[str, str]]:
    requests: list[tuple[str, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected sentence<TAB>condition")
            requests.append((parts[0], parts[1]))
    return requests


def cmd_bench_cache(args) -> int:
    if args.workload:
        requests = _load_workload(_existing_path(args.workload, "workload"))
    else:
        requests = cache_mod.full_cross_requests(
            args.gen_sentences, args.gen_conditions, args.gen_replays
        )
    if not requests:
        raise ConfigError("empty workload")
    nh = args.nh
    nk = args.nk if args.nk is not None else max(1, nh // 12)
    seed = args.seed if args.seed is not None else 0
    provider = HashingProvider(dim=nh, seed=seed, rounds=args.heavy_rounds)
    params_full = hypernet.init_params("full", nh, seed=seed)
    params_lowrank = hypernet.init_params("lowrank", nh, nk, seed=seed)
    spec = cache_mod.WorkloadSpec(architecture="tri", requests=requests)
    rows = cache_mod.bench_report(
        spec, [params_full, params_lowrank], provider, repetitions=args.repetitions
    )
    _emit(cache_mod.bench_rows_to_tsv(rows), args.out)
    return EXIT_OK


# -- analyze -------------------------------------------------------------------


def _cluster_points(quads, provider, k, per_group):
    """Pick the k most frequent conditions and up to per_group sentences each."""
    by_cond: dict[str, list[str]] = {}
    for q in quads:
        for s in (q.s1, q.s2):
            members = by_cond.setdefault(q.c, [])
            if s not in members:
                members.append(s)
    ranked = sorted(by_cond.items(), key=lambda kv: (-len(kv[1]), kv[0]))[:k]
    if len(ranked) < k:
        raise ConfigError(f"only {len(ranked)} conditions available, need k={k}")
    sentences: list[str] = []
    labels: list[str] = []
    for cond, members in ranked:
        for s in members[:per_group]:
            sentences.append(s)
            labels.append(cond)
    return sentences, labels


def cmd_analyze_clusters(args) -> int:
    cfg = _load_config(args.config)
    provider = _store_provider({"embeddings": args.embeddings or cfg.get("embeddings")})
    params, _ = hypernet.load_checkpoint(
        _existing_path(args.checkpoint or cfg.get("checkpoint"), "checkpoint")
    )
    hypernet.params_dim_check(params, provider.dim)
    quads = trainer.load_csts_jsonl(_existing_path(args.data or cfg.get("data"), "data"))
    k = args.k
    sentences, labels = _cluster_points(quads, provider, k, args.per_group)
    if len(sentences) < k:
        raise ConfigError(f"{len(sentences)} points cannot support k={k}")

    before = np.stack([provider.embed(s) for s in sentences])
    ops = {c: hypernet.generate_condition_matrix(params, provider.embed(c)) for c in set(labels)}
    after = np.stack(
        [hypernet.project(ops[c], provider.embed(s)) for s, c in zip(sentences, labels)]
    )
    assign_before = eval_mod.kmeans(before, k, seed=args.seed or 0)
    assign_after = eval_mod.kmeans(after, k, seed=args.seed or 0)
    report = {
        "k": k,
        "points": len(sentences),
        "impurity_before": eval_mod.impurity(assign_before, labels),
        "impurity_after": eval_mod.impurity(assign_after, labels),
    }

    prefix = args.out or "clusters"
    for tag, assign in (("before", assign_before), ("after", assign_after)):
        lines = ["point_id\tcondition\tcluster"]
        lines += [
            f"{i}\t{labels[i]}\t{int(assign[i])}" for i in range(len(sentences))
        ]
        Path(f"{prefix}.{tag}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    payload = json.dumps(report, indent=2) + "\n"
    Path(f"{prefix}.impurity.json").write_text(payload, encoding="utf-8")
    sys.stdout.write(payload)
    return EXIT_OK


def cmd_analyze_frobenius(args) -> int:
    cfg = _load_config(args.config)
    provider = _store_provider({"embeddings": args.embeddings or cfg.get("embeddings")})
    params, _ = hypernet.load_checkpoint(
        _existing_path(args.checkpoint or cfg.get("checkpoint"), "checkpoint")
    )
    hypernet.params_dim_check(params, provider.dim)
    cond_path = _existing_path(args.conditions or cfg.get("conditions"), "conditions")
    conditions = [line for line in cond_path.read_text(encoding="utf-8").splitlines() if line]
    if not conditions:
        raise ConfigError(f"{cond_path}: no conditions listed")
    var_hyper, var_diag = eval_mod.frobenius_variance_report(params, provider, conditions)
    _emit(
        json.dumps({"var_hyper": var_hyper, "var_diag": var_diag, "conditions": len(conditions)})
        + "\n",
        args.out,
    )
    return EXIT_OK


# -- sweep-rank -----------------------------------------------------------------


def cmd_sweep_rank(args) -> int:
    cfg = _load_config(args.config)
    base = _train_config_from(cfg, args)
    if base.task not in trainer.TASKS:
        raise ConfigError("sweep-rank config must set task")
    provider = _store_provider(cfg)
    data_path = _existing_path(_require(cfg, "data"), "data")
    eval_path = _existing_path(_require(cfg, "eval_data"), "eval_data")
    divisors = [int(d) for d in args.divisors.split(",") if d]
    if not divisors or any(d < 1 for d in divisors):
        raise ConfigError("divisors must be positive integers")

    if base.task == "csts":
        train_data = trainer.load_csts_jsonl(data_path)
        eval_quads = trainer.load_csts_jsonl(eval_path)
    else:
        train_data = trainer.load_kg_tsv(data_path)
        eval_triples = trainer.load_kg_tsv(eval_path)
        known = list(eval_triples) + list(train_data)
        for fp in cfg.get("filter_data") or []:
            known.extend(trainer.load_kg_tsv(_existing_path(fp, "filter_data")))
        entities = _entities_from_triples(known)

    lines = ["nk\tparam_count\tmetric"]
    for d in divisors:
        if base.nh % d != 0:
            log.warning("nh=%d not divisible by %d; rounding rank down", base.nh, d)
        nk = max(1, base.nh // d)
        run_dict = base.to_dict()
        run_dict["mode"] = "lowrank"
        run_dict["nk"] = nk
        run_cfg = trainer.TrainConfig.from_dict(run_dict)
        params, _extras, _report = trainer.fit(run_cfg, train_data, provider)
        if base.task == "csts":
            metric = eval_mod.evaluate_csts(params, provider, eval_quads)["spearman"]
        else:
            metric = eval_mod.evaluate_kgc(
                params, provider, eval_triples, known, entities
            )["mrr"]
        lines.append(f"{nk}\t{hypernet.param_count(params)}\t{metric:.6f}")
        log.info("sweep divisor=%d nk=%d metric=%.4f", d, nk, metric)
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# -- gradcheck -------------------------------------------------------------------


def _gradcheck_batches(nh: int, seed: int):
    """Small deterministic batches for both loss families."""
    provider = HashingProvider(dim=nh, seed=seed)
    rng = np.random.default_rng(seed)
    quads = []
    for i in range(3):
        y_hi = float(rng.uniform(3.0, 5.0))
        y_lo = float(rng.uniform(1.0, 3.0))
        quads.append(losses.CstsQuadruplet(f"qs-{i}-a", f"qs-{i}-b", f"qc-{2 * i}", y_hi, i))
        quads.append(losses.CstsQuadruplet(f"qs-{i}-a", f"qs-{i}-b", f"qc-{2 * i + 1}", y_lo, i))
    twin_batch = losses.pair_twins(quads)
    triples = [
        losses.KgTriple("qe-1", "qr-1", "qe-2"),
        losses.KgTriple("qe-2", "qr-2", "qe-3"),
        losses.KgTriple("qe-3", "qr-1", "qe-4"),
        losses.KgTriple("qe-4", "qr-2", "qe-1"),
    ]
    prebatch = [[("qe-5", provider.embed("qe-5")), ("qe-6", provider.embed("qe-6"))]]
    return provider, twin_batch, triples, prebatch


def cmd_gradcheck(args) -> int:
    if args.epsilon is None or not 1e-7 <= args.epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {args.epsilon}")
    nh = args.nh
    nk = args.nk if args.nk is not None else max(1, nh // 4)
    seed = args.seed if args.seed is not None else 0
    provider, twin_batch, triples, prebatch = _gradcheck_batches(nh, seed)
    worst = 0.0
    for task in ("csts", "kgc"):
        for mode in ("full", "lowrank"):
            cfg = trainer.TrainConfig(
                task=task, mode=mode, nh=nh, nk=nk, seed=seed, epochs=1, batch_size=4
            )
            batch = twin_batch if task == "csts" else triples
            closure = trainer.make_loss_closure(
                cfg, batch, provider, prebatch=prebatch if task == "kgc" else None
            )
            _params, arrays = trainer.initial_arrays(cfg)
            report = losses.grad_check(
                closure, arrays, epsilon=args.epsilon, n_probes=args.probes, seed=seed
            )
            worst = max(worst, report.max_rel_err)
            print(
                f"gradcheck task={task} mode={mode} nh={nh} nk={nk} "
                f"probes={report.n_checked} max_rel_err={report.max_rel_err:.3e}"
            )
    print(f"gradcheck overall max_rel_err={worst:.3e} threshold={GRADCHECK_THRESHOLD:.0e}")
    return EXIT_OK if worst < GRADCHECK_THRESHOLD else EXIT_CHECK_FAILED


# -- make-synthetic ---------------------------------------------------------------


def cmd_make_synthetic_csts(args) -> int:
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    quads, store = trainer.make_synthetic_csts(
        args.pairs, args.conditions, args.nh, args.seed if args.seed is not None else 0
    )
    train, held = trainer.split_csts_holdout(quads, args.train_fraction)
    trainer.save_csts_jsonl(train, out_dir / "csts_train.jsonl")
    trainer.save_csts_jsonl(held, out_dir / "csts_eval.jsonl")
    save_embeddings(store, out_dir / "embeddings.jsonl")
    print(
        json.dumps(
            {
                "train_records": len(train),
                "eval_records": len(held),
                "embeddings": len(store),
                "out_dir": str(out_dir),
            }
        )
    )
    return EXIT_OK


def cmd_make_synthetic_kg(args) -> int:
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, store = trainer.make_synthetic_kg(
        args.entities, args.relations, args.nh, args.seed if args.seed is not None else 0
    )
    trainer.save_kg_tsv(dataset.train, out_dir / "train.tsv")
    trainer.save_kg_tsv(dataset.valid, out_dir / "valid.tsv")
    trainer.save_kg_tsv(dataset.test, out_dir / "test.tsv")
    save_embeddings(store, out_dir / "embeddings.jsonl")
    print(
        json.dumps(
            {
                "train_triples": len(dataset.train),
                "valid_triples": len(dataset.valid),
                "test_triples": len(dataset.test),
                "entities": len(dataset.entities),
                "relations": len(dataset.relations),
                "out_dir": str(out_dir),
            }
        )
    )
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condcl",
        description="Conditioned sentence-embedding projection: train, evaluate, benchmark, analyze.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, split=False):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=["full", "lowrank", "hadamard", "concat"])
        p.add_argument("--nh", type=int)
        p.add_argument("--nk", type=int)
        p.add_argument("--out")
        if split:
            p.add_argument("--split", choices=["seen", "unseen", "overall"])

    p = sub.add_parser("train", help="train composition parameters")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, split=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-cache", help="benchmark cached execution per architecture")
    common(p)
    p.add_argument("--workload", help="TSV of sentence<TAB>condition requests")
    p.add_argument("--gen-sentences", type=int, default=0)
    p.add_argument("--gen-conditions", type=int, default=0)
    p.add_argument("--gen-replays", type=int, default=1)
    p.add_argument("--heavy-rounds", type=int, default=64)
    p.add_argument("--repetitions", type=int, default=1)
    p.set_defaults(func=cmd_bench_cache, nh=64)

    p_an = sub.add_parser("analyze", help="clustering and operator-norm analyses")
    an_sub = p_an.add_subparsers(dest="analysis", required=True)

    p = an_sub.add_parser("clusters", help="k-means impurity before/after projection")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--embeddings")
    p.add_argument("--data", help="similarity JSONL supplying sentence/condition groups")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--per-group", type=int, default=20)
    p.set_defaults(func=cmd_analyze_clusters)

    p = an_sub.add_parser("frobenius", help="operator-norm variance: generated vs diagonal")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--embeddings")
    p.add_argument("--conditions", help="file with one condition per line")
    p.set_defaults(func=cmd_analyze_frobenius)

    p = sub.add_parser("sweep-rank", help="train/evaluate across rank divisors")
    common(p)
    p.add_argument("--divisors", default=",".join(str(d) for d in DEFAULT_DIVISORS))
    p.set_defaults(func=cmd_sweep_rank)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    common(p)
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck, nh=16)

    p_mk = sub.add_parser("make-synthetic", help="generate desk-scale datasets")
    mk_sub = p_mk.add_subparsers(dest="dataset", required=True)

    p = mk_sub.add_parser("csts", help="block-structured similarity data")
    common(p)
    p.add_argument("--pairs", type=int, default=500)
    p.add_argument("--conditions", type=int, default=4)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_make_synthetic_csts, nh=64)

    p = mk_sub.add_parser("kg", help="orthogonal-map link-prediction data")
    common(p)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--relations", type=int, default=4)
    p.set_defaults(func=cmd_make_synthetic_kg, nh=64)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    _setup_logging()
    try:
        return args.func(args)
    except (
        ConfigError,
        FormatError,
        MissingEmbeddingError,
        FileNotFoundError,
        IsADirectoryError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CondclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
