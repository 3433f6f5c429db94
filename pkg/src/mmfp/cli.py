"""Command line interface: ``mmfp <command> [options]``.

Verbosity follows the ``MMFP_LOG`` environment variable (error, warning,
info or debug; default warning).
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import Checkpoint
from .config import RunConfig
from .datagen import GENERATORS, PARAPHRASES, MotionDataset
from .errors import ConfigError, MMFPError
from .export import trajectories_doc, write_csv, write_json, write_svg
from .latentdiffusion import SCHEDULE_ALIASES
from .latentflow import SamplerConfig, generate_motion
from .metrics import classifier_examples, evaluate, train_classifiers
from .pipeline import final_losses, fit_diffusion_head, fit_flow_head, fit_manifold
from .textcond import load_paraphrases, save_paraphrases

log = logging.getLogger("mmfp")

LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
COMPARE_MODELS = ("mmfp", "diffusion-ve", "diffusion-vp1", "diffusion-vp2")


def _setup_logging():
    name = os.environ.get("MMFP_LOG", "warning").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"MMFP_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _require(path, what):
    if path is not None and not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _load_data(path):
    _require(path, "dataset file")
    return MotionDataset.load(path)


def _load_ckpt(path):
    _require(path, "checkpoint")
    return Checkpoint.load(path)


def _load_paraphrases(path):
    if path is None:
        return {}
    _require(path, "paraphrase file")
    return load_paraphrases(path)


def _config(args):
    _require(getattr(args, "config", None), "config file")
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    kwargs = {} if args.T is None else {"T": args.T}
    ds = GENERATORS[args.kind](args.seed, **kwargs)
    ds.save(args.out)
    train, heldout = PARAPHRASES[args.kind]()
    if args.paraphrases_out:
        save_paraphrases(args.paraphrases_out, train)
    if args.heldout_out:
        save_paraphrases(args.heldout_out, heldout)
    log.info("wrote %d trajectories (T=%d) to %s", len(ds), ds.T, args.out)


def cmd_train_manifold(args):
    cfg = _config(args)
    ds = _load_data(args.data)
    ckpt, history = fit_manifold(ds, cfg.manifold)
    ckpt.save(args.out)
    log.info("manifold losses: %s", final_losses(history))


def cmd_train_flow(args):
    cfg = _config(args)
    ds = _load_data(args.data)
    ckpt = _load_ckpt(args.ckpt)
    ckpt, history = fit_flow_head(ckpt, ds, _load_paraphrases(args.paraphrases), cfg.flow, cfg.sampler)
    ckpt.save(args.out)
    log.info("flow losses: %s", final_losses(history))


def cmd_train_diffusion(args):
    cfg = _config(args)
    ds = _load_data(args.data)
    ckpt = _load_ckpt(args.ckpt)
    dcfg = cfg.diffusion
    if args.schedule is not None:
        dcfg = replace(dcfg, schedule=args.schedule)
    ckpt, history = fit_diffusion_head(ckpt, ds, _load_paraphrases(args.paraphrases), dcfg)
    ckpt.save(args.out)
    log.info("diffusion losses: %s", final_losses(history))


def cmd_sample(args):
    ckpt = _load_ckpt(args.ckpt)
    if ckpt.head is None:
        raise ConfigError(f"checkpoint {args.ckpt} has no generative head; run train-flow or train-diffusion")
    base = getattr(ckpt.head, "sampler", None) or SamplerConfig()
    sampler = SamplerConfig(args.steps or base.steps, args.solver or base.solver, args.seed)
    xs = generate_motion(ckpt, args.text, args.n, sampler)
    write_json(args.out, trajectories_doc(xs, text=args.text, seed=args.seed, n=args.n, head=ckpt.head.kind,
                                          space=ckpt.manifold.space.to_json(), T=ckpt.manifold.T))
    if args.csv:
        write_csv(args.csv, xs)
    if args.svg:
        demos = []
        if args.data:
            ds = _load_data(args.data)
            demos = [ds.trajectories[i] for i in ds.indices_for_text(args.text)] if args.text in ds.texts() else []
        write_svg(args.svg, xs, demos)


def _eval_report(ckpt, ds, heldout, cfg, classifiers=None):
    classifiers = classifiers or train_classifiers(ds, cfg.classifier)
    report = evaluate(ckpt, ds, classifiers, heldout, cfg.eval)
    report["dataset_fingerprint"] = ds.fingerprint()
    report["classifier_train_accuracy"] = {}
    for kind, clf in sorted(classifiers.items()):
        xs, ys = classifier_examples(ds, kind)
        report["classifier_train_accuracy"][kind] = 100.0 * clf.accuracy(xs, ys)
    return report


def cmd_eval(args):
    cfg = _config(args)
    if args.n is not None:
        cfg.eval.n = args.n
    ds = _load_data(args.data)
    ckpt = _load_ckpt(args.ckpt)
    if ckpt.head is None:
        raise ConfigError(f"checkpoint {args.ckpt} has no generative head")
    report = _eval_report(ckpt, ds, _load_paraphrases(args.paraphrases), cfg)
    report["checkpoint"] = os.path.basename(args.ckpt)
    write_json(args.report, report)


def _flat_row(model, seed, report):
    row = {"model": model, "seed": seed}
    for level, entry in sorted(report["levels"].items()):
        row[f"mmd_level{level}"] = entry["mmd"]
        row[f"robust_mmd_level{level}"] = entry["robust_mmd"]
    for level, acc in sorted(report["accuracy"].items()):
        for kind, v in sorted(acc.items()):
            row[f"acc_level{level}_{kind}"] = v
    return row


def compare_runs(ds, paraphrases, heldout, cfg, seeds, models=COMPARE_MODELS):
    """Train every model for every seed and return per-seed rows and per-model means."""
    rows = []
    for seed in seeds:
        c = cfg.with_seed(seed)
        base, _ = fit_manifold(ds, c.manifold)
        classifiers = train_classifiers(ds, c.classifier)
        for model in models:
            if model == "mmfp":
                ckpt, _ = fit_flow_head(base, ds, paraphrases, c.flow, c.sampler)
            else:
                dcfg = replace(c.diffusion, schedule=model.split("-", 1)[1])
                ckpt, _ = fit_diffusion_head(base, ds, paraphrases, dcfg)
            rep = evaluate(ckpt, ds, classifiers, heldout, c.eval)
            rows.append(_flat_row(model, seed, rep))
            log.info("compare seed %d %s: %s", seed, model, rows[-1])
    means = []
    for model in models:
        sub = [r for r in rows if r["model"] == model]
        keys = [k for k in sub[0] if k not in ("model", "seed")]
        mean = {"model": model, "seed": "mean"}
        for k in keys:
            vals = [r[k] for r in sub if r[k] is not None]
            mean[k] = float(np.mean(vals)) if vals else None
        means.append(mean)
    return rows, means


def cmd_compare(args):
    cfg = _config(args)
    ds = _load_data(args.data)
    models = tuple(args.models) if args.models else COMPARE_MODELS
    rows, means = compare_runs(ds, _load_paraphrases(args.paraphrases), _load_paraphrases(args.heldout), cfg,
                               args.seeds, models)
    write_json(args.out, {"dataset_fingerprint": ds.fingerprint(), "seeds": list(args.seeds),
                          "config": cfg.to_dict(), "rows": rows, "mean": means})
    if args.csv:
        keys = list(dict.fromkeys(k for r in rows + means for k in r))
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, keys, lineterminator="\n")
            w.writeheader()
            for r in rows + means:
                w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})


def cmd_show_config(args):
    sys.stdout.write(_config(args).to_json())


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="mmfp", description="Text-conditioned motion generation on learned manifolds.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=sorted(GENERATORS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--T", type=int, default=None, help="trajectory length (generator default if omitted)")
    g.add_argument("--out", required=True)
    g.add_argument("--paraphrases-out", default=None, help="write training paraphrases here")
    g.add_argument("--heldout-out", default=None, help="write held-out paraphrases here")
    g.set_defaults(func=cmd_gen_data)

    m = sub.add_parser("train-manifold", help="train the motion manifold")
    m.add_argument("--data", required=True)
    m.add_argument("--config", default=None)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_train_manifold)

    f = sub.add_parser("train-flow", help="train text head and latent flow")
    f.add_argument("--data", required=True)
    f.add_argument("--ckpt", required=True)
    f.add_argument("--paraphrases", default=None)
    f.add_argument("--config", default=None)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_train_flow)

    d = sub.add_parser("train-diffusion", help="train text head and latent diffusion baseline")
    d.add_argument("--data", required=True)
    d.add_argument("--ckpt", required=True)
    d.add_argument("--schedule", choices=sorted(SCHEDULE_ALIASES), default=None)
    d.add_argument("--paraphrases", default=None)
    d.add_argument("--config", default=None)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_train_diffusion)

    s = sub.add_parser("sample", help="generate trajectories for a text")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--solver", choices=("euler", "rk4"), default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--svg", default=None, help="2D plot (Euclidean 2D only)")
    s.add_argument("--csv", default=None, help="per-step CSV export")
    s.add_argument("--data", default=None, help="dataset whose demos are drawn behind the samples in the SVG")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="MMD, robust MMD and motion accuracy report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--paraphrases", default=None, help="held-out paraphrases for robust MMD")
    e.add_argument("--config", default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--n", type=int, default=None)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="flow vs diffusion table over seeds")
    c.add_argument("--data", required=True)
    c.add_argument("--paraphrases", default=None)
    c.add_argument("--heldout", default=None)
    c.add_argument("--config", "--configs", dest="config", default=None)
    c.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    c.add_argument("--models", nargs="+", choices=COMPARE_MODELS, default=None)
    c.add_argument("--out", required=True)
    c.add_argument("--csv", default=None)
    c.set_defaults(func=cmd_compare)

    sc = sub.add_parser("show-config", help="print the fully materialized run config")
    sc.add_argument("--config", default=None)
    sc.add_argument("--seed", type=int, default=None)
    sc.set_defaults(func=cmd_show_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        args.func(args)
    except (MMFPError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"mmfp {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
