"""Command-line entry point: ``bridgelab <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import experiments as ex
from .checkpoint import atomic_write_bytes
from .config import TrainConfig, dump_config, load_config, parse_mix_mode
from .errors import BridgeLabError, ConfigurationError
from .evaluation import histogram, write_histogram_csv, write_metrics_json
from .synthdata import read_manifest, write_manifest
from .trainer import load_result, save_result, train_dg, train_uda, write_log

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_SEEDS = "0,1,2,3,4"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _workers(n_jobs):
    try:
        cap = int(os.environ.get("BRIDGELAB_THREADS", "1"))
    except ValueError as exc:
        raise UsageError("BRIDGELAB_THREADS must be an integer") from exc
    return max(1, min(cap, n_jobs))


def _seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _config_from_args(args):
    config = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    for flag, key in (("no_div", "use_div"), ("no_bridge_pred", "use_bridge_pred"),
                      ("no_bridge_feat", "use_bridge_feat"), ("no_cons", "use_cons"),
                      ("no_xbm", "use_xbm")):
        if getattr(args, flag, False):
            changes[key] = False
    if getattr(args, "mix", None):
        parse_mix_mode(args.mix)
        changes["mix_mode"] = args.mix.replace("-", "_")
    return config.replace(**changes)


def _dump_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    if args.mode == "dg":
        sources, unseen = ex.dg_task(args.seed, noise_std=args.noise)
        for i, ds in enumerate(sources):
            write_manifest(ds, os.path.join(args.out, f"source{i}"))
        write_manifest(unseen, os.path.join(args.out, "unseen"))
    else:
        source, target, test = ex.uda_task(args.seed, noise_std=args.noise)
        write_manifest(source, os.path.join(args.out, "source"))
        write_manifest(target, os.path.join(args.out, "target"))
        write_manifest(test, os.path.join(args.out, "test"))
    return EXIT_OK


def cmd_train(args):
    config = _config_from_args(args)
    if not args.source:
        raise UsageError("train needs --source")
    sources = [read_manifest(p) for p in args.source]
    if config.mode == "uda":
        if len(sources) != 1 or not args.target:
            raise UsageError("uda training needs exactly one --source and a --target")
        result = train_uda(config, sources[0], read_manifest(args.target))
    else:
        result = train_dg(config, sources)
    os.makedirs(args.out, exist_ok=True)
    save_result(result, os.path.join(args.out, "model.ckpt"))
    write_log(os.path.join(args.out, "metrics.jsonl"), result.log)
    atomic_write_bytes(os.path.join(args.out, "config.toml"), dump_config(config).encode())
    if args.test:
        metrics = result.evaluate(read_manifest(args.test))
        write_metrics_json(os.path.join(args.out, "eval.json"), metrics)
        print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    result = load_result(args.checkpoint)
    data = read_manifest(args.data)
    metrics = result.evaluate(data, args.branch)
    print(json.dumps(metrics, sort_keys=True))
    if args.out:
        write_metrics_json(os.path.join(args.out, "eval.json"), metrics)
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradsuite import run_gradient_suite

    reports, seconds = run_gradient_suite(args.seed)
    worst = max(r.max_rel_err for r in reports.values())
    for name, r in reports.items():
        print(f"{name:12s} max_rel_err={r.max_rel_err:.3e} checked={r.checked_params}")
    print(f"max_rel_err={worst:.3e} seconds={seconds:.1f}")
    return EXIT_OK if worst < args.tol else EXIT_RUNTIME


def _run_jobs(fn, jobs):
    workers = _workers(len(jobs))
    if workers == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _table(rows, header):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths))
    return "\n".join([line(header)] + [line(r) for r in rows]) + "\n"


def cmd_ablate(args):
    config = _config_from_args(args)
    seeds = _seeds(args.seeds)
    names = {
        "baseline": dict(ex.VARIANTS["baseline"]),
        "+bridge_pred": dict(ex.VARIANTS["baseline"], use_bridge_pred=True),
        "+bridge_feat": dict(ex.VARIANTS["baseline"], use_bridge_feat=True),
        "idm": dict(ex.VARIANTS["idm"]),
        "idm-div": dict(ex.VARIANTS["idm"], use_div=False),
        "idm++": dict(ex.VARIANTS["idm++"]),
        "idm++-xbm": dict(use_xbm=False),
    }
    if args.quick:
        names = {k: names[k] for k in ("baseline", "idm", "idm++")}
    jobs = [(name, s, config.replace(**flags)) for name, flags in names.items() for s in seeds]
    results = _run_jobs(_job_with_flags, jobs)
    runs = {}
    for (name, seed, _), metrics in zip(jobs, results):
        runs.setdefault(name, []).append({"seed": seed, **metrics})
    summary = {n: float(np.median([m["mAP"] for m in ms])) for n, ms in runs.items()}
    rows = [(n, f"{summary[n]:.4f}", " ".join(f"{m['mAP']:.3f}" for m in runs[n])) for n in runs]
    table = _table(rows, ("variant", "median_mAP", "per-seed mAP"))
    os.makedirs(args.out, exist_ok=True)
    _dump_json(os.path.join(args.out, "ablation.json"), {"runs": runs, "median_mAP": summary})
    atomic_write_bytes(os.path.join(args.out, "ablation.txt"), table.encode())
    sys.stdout.write(table)
    return EXIT_OK


def _job_with_flags(job):
    name, seed, config = job
    # the flags are already folded into config; train it as given
    _, metrics = ex.run_uda("idm++", seed, config)
    return metrics


def _stage_job(job):
    seed, config, m, l = job
    _, metrics = ex.run_uda("idm++", seed, config, stage_m=m, stage_l=l)
    return metrics


def cmd_sweep_stages(args):
    config = _config_from_args(args)
    last = len(config.widths) - 1
    jobs = [(args.seed, config, m, l) for m in range(last + 1) for l in range(m, last + 1)]
    results = _run_jobs(_stage_job, jobs)
    grid = [{"stage_m": m, "stage_l": l, **metrics}
            for (_, _, m, l), metrics in zip(jobs, results)]
    rows = [(g["stage_m"], g["stage_l"], f"{g['mAP']:.4f}", f"{g['rank1']:.4f}") for g in grid]
    table = _table(rows, ("m", "l", "mAP", "rank1"))
    os.makedirs(args.out, exist_ok=True)
    _dump_json(os.path.join(args.out, "stages.json"), grid)
    atomic_write_bytes(os.path.join(args.out, "stages.txt"), table.encode())
    sys.stdout.write(table)
    return EXIT_OK


def cmd_export_dists(args):
    config = _config_from_args(args).replace(mode="uda")
    seed = config.seed
    source, target, test = ex.uda_task(seed)
    net0, pred0 = ex.init_uda(config, source, target)
    d_init = ex.bridge_distances(net0, pred0, config, source.images, target.images, seed=seed)
    full, _ = ex.run_uda("idm++", seed, config, (source, target, test))
    d_end = ex.bridge_distances(full.net, full.predictor, config, source.images,
                                target.images, seed=seed)
    base, _ = ex.run_uda("baseline", seed, config, (source, target, test))
    os.makedirs(args.out, exist_ok=True)
    summary = {}
    for tag, (d_s, d_t) in (("init", d_init), ("trained", d_end)):
        write_histogram_csv(os.path.join(args.out, f"bridge_{tag}_source.csv"), *histogram(d_s))
        write_histogram_csv(os.path.join(args.out, f"bridge_{tag}_target.csv"), *histogram(d_t))
        summary[f"bridge_overlap_{tag}"] = ex.bridge_overlap(d_s, d_t)
    for tag, res in (("idm++", full), ("baseline", base)):
        overlap, pos, neg = ex.pos_neg_overlap(res.embed(test.images), test.identities,
                                               seed=seed)
        write_histogram_csv(os.path.join(args.out, f"posneg_{tag}_pos.csv"), *histogram(pos))
        write_histogram_csv(os.path.join(args.out, f"posneg_{tag}_neg.csv"), *histogram(neg))
        summary[f"posneg_overlap_{tag}"] = overlap
    write_metrics_json(os.path.join(args.out, "overlaps.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_training_flags(p, mode=True):
    p.add_argument("--config", help="TOML training configuration")
    p.add_argument("--seed", type=int, default=None)
    if mode:
        p.add_argument("--mode", choices=("uda", "dg"))
    p.add_argument("--no-div", action="store_true")
    p.add_argument("--no-bridge-pred", action="store_true")
    p.add_argument("--no-bridge-feat", action="store_true")
    p.add_argument("--no-cons", action="store_true")
    p.add_argument("--no-xbm", action="store_true")
    p.add_argument("--mix", help="random-beta:ALPHA or fixed:A_S (default: learned ratios)")


def build_parser():
    parser = _Parser(prog="bridgelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a seeded desk dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("uda", "dg"), default="uda")
    p.add_argument("--noise", type=float, default=ex.NOISE_STD)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    _add_training_flags(p)
    p.add_argument("--source", action="append", help="dataset directory (repeat for dg)")
    p.add_argument("--target", help="unlabelled target dataset directory (uda)")
    p.add_argument("--test", help="dataset to evaluate after training")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--branch", choices=("source", "target", "inter"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="loss-toggle matrix over seeds")
    _add_training_flags(p, mode=False)
    p.add_argument("--seeds", default=DEFAULT_SEEDS)
    p.add_argument("--quick", action="store_true", help="baseline, idm and idm++ only")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-stages", help="IDM++ over every plug pair (m, l)")
    _add_training_flags(p, mode=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_stages)

    p = sub.add_parser("export-dists", help="distance histograms of the alignment analyses")
    _add_training_flags(p, mode=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_dists)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "seed", None) is None and args.command in ("sweep-stages",
                                                                      "export-dists"):
            args.seed = 0
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"bridgelab: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BridgeLabError, OSError, ValueError) as exc:
        print(f"bridgelab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
