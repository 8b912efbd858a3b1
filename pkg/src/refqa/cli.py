"""Command-line interface: ``refqa <command> [flags]``.

Config precedence for train/ablate is flags > ``--config`` JSON > built-in
defaults. The JSON document may mix model and training field names.
Every report goes to stdout as JSON unless ``--format table`` is given;
errors go to stderr as one JSON line and set the exit status
(1 usage, 2 data, 3 numeric).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import TEST, TRAIN, SynthSpec, generate_synthetic, load_dataset, random_split, save_dataset
from .errors import DataError, NumericError, RefQAError, UsageError
from .model import ModelConfig, load, save
from .numkit import Rng
from .retrieval import DEFAULT_TAU, STRATEGIES, ReferencePool, pool_stats, retrieve_variant
from .training import TrainConfig, evaluate, gradient_suite, predict_split, run_protocol, train

DEFAULT_TAUS = (0.3, 0.5, 0.6, 0.7, 0.8)
ABLATION_AXES = {
    "feature": ("feature_mode", ("diff", "self")),
    "aggregation": ("aggregation", ("graph", "avg")),
    "visual_refs": ("refs_visual", (True, False)),
    "align_refs": ("refs_align", (True, False)),
    "retrieval": ("retrieval", STRATEGIES),
    "branches": (("use_visual", "use_align"), ((True, True), (True, False), (False, True))),
}
DEFAULT_AXES = "feature,aggregation,visual_refs,align_refs"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- output -----------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    if v is None:
        return "-"
    return str(v)


def _table(rows: list, columns: list) -> str:
    cells = [[str(c) for c in columns]] + [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _emit(args, payload, rows=None, columns=None):
    if getattr(args, "format", "json") == "table" and rows is not None:
        print(_table(rows, columns))
    else:
        print(json.dumps(payload, sort_keys=True))


# -- config ----------------------------------------------------------------------

_MODEL_FIELDS = {f.name for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


def _add_config_flags(p):
    g = p.add_argument_group("configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="JSON file with ModelConfig/TrainConfig fields")
    g.add_argument("--epochs", type=int, help="training epochs (default 20)")
    g.add_argument("--batch-size", type=int, help="mini-batch size m (default 8)")
    g.add_argument("--lr", type=float, help="peak learning rate (default 1e-5)")
    g.add_argument("--weight-decay", type=float, help="AdamW decoupled weight decay (default 0.05)")
    g.add_argument("--gamma", type=float, help="rank-loss weight (default 0.3)")
    g.add_argument("--warmup-frac", type=float, help="share of steps spent warming up (default 0.1)")
    g.add_argument("--repeats", type=int, help="random splits in the protocol (default 5)")
    g.add_argument("--train-frac", type=float, help="training share of each split (default 0.8)")
    g.add_argument("--seed", type=int, help="master seed for training (default 0)")
    g.add_argument("--tau", type=float, help=f"prompt-similarity threshold (default {DEFAULT_TAU})")
    g.add_argument("--retrieval", choices=STRATEGIES, help="reference retrieval strategy (default prompt)")
    g.add_argument("--aggregation", choices=("graph", "avg"), help="reference aggregation (default graph)")
    g.add_argument("--feature-mode", choices=("diff", "self"), help="aggregate differences or raw features")
    g.add_argument("--dropout", type=float, help="fusion MLP dropout (default 0.1)")
    g.add_argument("--hidden", dest="d_h", type=int, help="fusion hidden width (default 32)")
    g.add_argument("--max-refs", type=int, help="keep only the top-k references by weight")
    g.add_argument("--no-visual-refs", dest="refs_visual", action="store_const", const=False,
                   help="visual branch sees no references")
    g.add_argument("--no-align-refs", dest="refs_align", action="store_const", const=False,
                   help="alignment branch sees no references")
    g.add_argument("--no-visual-branch", dest="use_visual", action="store_const", const=False,
                   help="drop the visual branch entirely")
    g.add_argument("--no-align-branch", dest="use_align", action="store_const", const=False,
                   help="drop the alignment branch entirely")


def _read_json(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return doc


def resolve_configs(args, dims=None):
    """Merge defaults, the config file and explicit flags into (ModelConfig, TrainConfig)."""
    merged = _read_json(args.config) if args.config else {}
    unknown = set(merged) - _MODEL_FIELDS - _TRAIN_FIELDS
    if unknown:
        raise UsageError(f"unknown config fields: {sorted(unknown)}")
    for key, value in vars(args).items():
        if value is not None and key in (_MODEL_FIELDS | _TRAIN_FIELDS):
            merged[key] = value
    if dims is not None:
        merged.setdefault("d_v", dims[1])
        merged.setdefault("d_s", dims[2])
    try:
        mcfg = ModelConfig(**{k: v for k, v in merged.items() if k in _MODEL_FIELDS})
        tcfg = TrainConfig(**{k: v for k, v in merged.items() if k in _TRAIN_FIELDS})
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if dims is not None and (mcfg.d_v, mcfg.d_s) != tuple(dims[1:]):
        raise DataError(f"config dims ({mcfg.d_v}, {mcfg.d_s}) do not match dataset dims {tuple(dims[1:])}")
    return mcfg, tcfg


# -- commands ------------------------------------------------------------------------

def cmd_synth(args):
    lo, hi = args.mos_scale
    try:
        spec = SynthSpec(n_samples=args.n, n_clusters=args.clusters, dims=(args.dim_prompt, args.dim_visual,
                         args.dim_align), cluster_spread=args.spread, quality_noise=args.noise,
                         mos_range=(lo, hi), seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = generate_synthetic(spec)
    if args.train_frac is not None:
        ds = random_split(ds, args.train_frac, args.seed)
    try:
        manifest = save_dataset(ds, args.out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc.strerror}") from None
    payload = {"manifest": str(manifest), "n": len(ds), "clusters": spec.n_clusters, "dims": list(spec.dims),
               "train": len(ds.split_ids(TRAIN)), "test": len(ds.split_ids(TEST))}
    _emit(args, payload, [payload], ["manifest", "n", "clusters", "train", "test"])


def cmd_train(args):
    ds = load_dataset(args.data)
    mcfg, tcfg = resolve_configs(args, ds.dims)
    state, report = train(ds, mcfg, tcfg)
    if ds.split_ids(TEST):
        result, _ = evaluate(state, ds, batch_size=tcfg.batch_size, seed=tcfg.seed)
        report.eval = result.to_dict()
    if args.out:
        save(state, args.out)
    payload = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "report": report.to_dict(args.timing)}
    _emit(args, payload, report.epochs, ["epoch", "loss", "loss_plcc", "loss_rank"])


def cmd_eval(args):
    ds = load_dataset(args.data)
    state = load(args.model)
    result, pred = evaluate(state, ds, split=args.split, seed=args.seed)
    if args.csv:
        ids = ds.split_ids(args.split)
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "mos", "score"])
            for sid, score in zip(ids, pred):
                w.writerow([sid, repr(ds[sid].mos), repr(float(score))])
    payload = result.to_dict()
    _emit(args, payload, [payload], ["n", "srcc", "plcc", "krcc", "rmse"])


def cmd_predict(args):
    ds = load_dataset(args.data)
    state = load(args.model)
    if args.ids:
        ids = args.ids.split(",")
        missing = [i for i in ids if i not in ds.index]
        if missing:
            raise DataError(f"unknown sample ids: {missing}")
    elif args.split == "all":
        ids = ds.ids
    else:
        ids = ds.split_ids(args.split)
    pred = predict_split(state, ds, ids, seed=args.seed) if ids else np.zeros(0)
    if args.format == "table":
        print(_table([{"id": i, "score": float(s)} for i, s in zip(ids, pred)], ["id", "score"]))
        return
    for sid, score in zip(ids, pred):
        print(json.dumps({"id": sid, "score": float(score)}))


def cmd_retrieve(args):
    ds = load_dataset(args.data)
    if args.id not in ds.index:
        raise DataError(f"unknown sample id {args.id!r}")
    pool = ReferencePool.from_dataset(ds, TRAIN)
    rng = Rng(args.seed) if args.strategy == "random" else None
    g = retrieve_variant(args.strategy, ds[args.id], pool, args.tau, k=args.k, rng=rng, max_refs=args.max_refs)
    payload = {"tau": args.tau, "strategy": args.strategy, **g.to_dict()}
    _emit(args, payload, [{"id": r, "weight": w} for r, w in g.refs], ["id", "weight"])


def cmd_gradcheck(args):
    reports = gradient_suite(args.batches, args.batch_size, args.dim, args.seed, args.h, args.tol)
    rows = [{"batch": i, "worst": r.worst, "passed": r.passed} for i, r in enumerate(reports)]
    payload = {"passed": all(r.passed for r in reports), "tol": args.tol,
               "worst": max(r.worst for r in reports), "batches": [r.to_dict() for r in reports]}
    _emit(args, payload, rows, ["batch", "worst", "passed"])
    if not payload["passed"]:
        raise NumericError(f"gradient check failed: worst relative error {payload['worst']:.3e} > {args.tol}")


def ablation_cells(base: ModelConfig, axes: list) -> list:
    """Cross-product of the named axes in fixed order, as (labels, config) pairs."""
    for a in axes:
        if a not in ABLATION_AXES:
            raise UsageError(f"unknown ablation axis {a!r}; choose from {sorted(ABLATION_AXES)}")
    cells = []
    for combo in itertools.product(*(ABLATION_AXES[a][1] for a in axes)):
        labels, changes = {}, {}
        for axis, value in zip(axes, combo):
            field_ = ABLATION_AXES[axis][0]
            if isinstance(field_, tuple):
                changes.update(zip(field_, value))
                labels[axis] = "+".join(n for n, on in zip(("visual", "align"), value) if on)
            else:
                changes[field_] = value
                labels[axis] = value
        try:
            cfg = replace(base, **changes)
        except UsageError as exc:
            cells.append((labels, exc))
            continue
        cells.append((labels, cfg))
    return cells


def run_ablation(ds, base: ModelConfig, tcfg: TrainConfig, axes: list) -> list:
    rows = []
    for labels, cfg in ablation_cells(base, axes):
        row = dict(labels)
        if isinstance(cfg, Exception):
            row["error"] = str(cfg)
            rows.append(row)
            continue
        try:
            rep = run_protocol(ds, cfg, tcfg)
        except (RefQAError, ArithmeticError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        for k in ("srcc", "plcc", "krcc", "rmse"):
            row[k] = rep.mean[k]
            row[f"{k}_std"] = rep.std[k]
        if rep.failures:
            row["failures"] = rep.failures
        rows.append(row)
    return rows


def cmd_ablate(args):
    ds = load_dataset(args.data)
    mcfg, tcfg = resolve_configs(args, ds.dims)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    rows = run_ablation(ds, mcfg, tcfg, axes)
    payload = {"axes": axes, "model": mcfg.to_dict(), "train": tcfg.to_dict(), "rows": rows}
    if args.format == "table":
        shown = []
        for r in rows:
            s = {a: r[a] for a in axes}
            for k in ("srcc", "plcc", "krcc", "rmse"):
                s[k] = f"{r[k]:.3f}±{r[k + '_std']:.3f}" if r.get(k) is not None else r.get("error", "-")
            shown.append(s)
        print(_table(shown, axes + ["srcc", "plcc", "krcc", "rmse"]))
    else:
        _emit(args, payload)


def cmd_pool_stats(args):
    ds = load_dataset(args.data)
    try:
        taus = sorted(float(t) for t in args.taus.split(","))
    except ValueError:
        raise UsageError(f"--taus must be comma-separated numbers, got {args.taus!r}") from None
    pool = ReferencePool.from_dataset(ds, TRAIN)
    rows = []
    for t in taus:
        st = pool_stats(pool, ds, t)
        rows.append(st.to_dict())
    _emit(args, {"pool": len(pool), "queries": len(ds), "rows": rows}, rows, ["tau", "min", "max", "avg"])


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="refqa", description="Reference-aware quality scoring on precomputed embeddings.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--format", choices=("json", "table"), default="json", help="output format (default json)")
        sp.set_defaults(func=fn)
        return sp

    sp = command("synth", cmd_synth, "Write a seeded synthetic dataset (manifest plus three feature stores).")
    sp.add_argument("--out", type=Path, required=True, help="output directory")
    sp.add_argument("--n", type=int, default=1000, help="number of samples (default 1000)")
    sp.add_argument("--clusters", type=int, default=20, help="prompt clusters, at least 2 (default 20)")
    sp.add_argument("--dim-prompt", type=int, default=256, help="prompt embedding width (default 256)")
    sp.add_argument("--dim-visual", type=int, default=64, help="visual feature width (default 64)")
    sp.add_argument("--dim-align", type=int, default=64, help="alignment feature width (default 64)")
    sp.add_argument("--spread", type=float, default=SynthSpec.cluster_spread,
                    help=f"within-cluster deviation scale (default {SynthSpec.cluster_spread})")
    sp.add_argument("--noise", type=float, default=SynthSpec.quality_noise,
                    help=f"opinion-score noise std (default {SynthSpec.quality_noise})")
    sp.add_argument("--mos-scale", type=float, nargs=2, metavar=("LOW", "HIGH"), default=SynthSpec.mos_range,
                    help="opinion-score range (default 0 100)")
    sp.add_argument("--train-frac", type=float, default=0.8,
                    help="label a random train/test split with this training share (default 0.8)")
    sp.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")

    sp = command("train", cmd_train, "Train on the manifest's train split; evaluate on its test split if any.")
    sp.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.jsonl")
    sp.add_argument("--out", type=Path, help="write the trained model here")
    sp.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    _add_config_flags(sp)

    sp = command("eval", cmd_eval, "Score a split of a dataset with a saved model.")
    sp.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.jsonl")
    sp.add_argument("--model", type=Path, required=True, help="model file")
    sp.add_argument("--split", choices=(TRAIN, TEST), default=TEST, help="split to score (default test)")
    sp.add_argument("--csv", type=Path, help="also write id,mos,score rows here")
    sp.add_argument("--seed", type=int, default=0, help="seed for random retrieval (default 0)")

    sp = command("predict", cmd_predict, "Print one JSON line {id, score} per sample.")
    sp.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.jsonl")
    sp.add_argument("--model", type=Path, required=True, help="model file")
    sp.add_argument("--split", choices=(TRAIN, TEST, "all"), default="all", help="samples to score (default all)")
    sp.add_argument("--ids", help="comma-separated sample ids (overrides --split)")
    sp.add_argument("--seed", type=int, default=0, help="seed for random retrieval (default 0)")

    sp = command("retrieve", cmd_retrieve, "Show the reference graph of one sample against the train pool.")
    sp.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.jsonl")
    sp.add_argument("--id", required=True, help="query sample id")
    sp.add_argument("--tau", type=float, default=DEFAULT_TAU, help=f"similarity threshold (default {DEFAULT_TAU})")
    sp.add_argument("--strategy", choices=("prompt", "feature", "random"), default="prompt",
                    help="retrieval strategy (default prompt)")
    sp.add_argument("--k", type=int, default=8, help="references drawn by the random strategy (default 8)")
    sp.add_argument("--max-refs", type=int, help="keep only the top-k references by weight")
    sp.add_argument("--seed", type=int, default=0, help="seed for the random strategy (default 0)")

    sp = command("gradcheck", cmd_gradcheck, "Finite-difference check of the full model's gradients.")
    sp.add_argument("--batches", type=int, default=20, help="random batches (default 20)")
    sp.add_argument("--batch-size", type=int, default=4, help="samples per batch (default 4)")
    sp.add_argument("--dim", type=int, default=8, help="feature width of both branches (default 8)")
    sp.add_argument("--h", type=float, default=1e-4, help="central-difference step (default 1e-4)")
    sp.add_argument("--tol", type=float, default=1e-4, help="max relative error (default 1e-4)")
    sp.add_argument("--seed", type=int, default=0, help="seed (default 0)")

    sp = command("ablate", cmd_ablate, "Run the repeated-split protocol over a cross-product of config axes.")
    sp.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.jsonl")
    sp.add_argument("--axes", default=DEFAULT_AXES,
                    help=f"comma-separated axes from {', '.join(ABLATION_AXES)} (default {DEFAULT_AXES})")
    _add_config_flags(sp)

    sp = command("pool-stats", cmd_pool_stats, "Reference-count MIN/MAX/AVG per similarity threshold.")
    sp.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.jsonl")
    sp.add_argument("--taus", default=",".join(str(t) for t in DEFAULT_TAUS),
                    help="comma-separated thresholds (default 0.3,0.5,0.6,0.7,0.8)")
    return p


def _fail(exc: Exception, code: int, kind: str) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc).replace("\n", " ")}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except RefQAError as exc:
        return _fail(exc, exc.exit_code, exc.kind)
    except (ArithmeticError, FloatingPointError) as exc:
        return _fail(exc, 3, "numeric")
    except OSError as exc:
        return _fail(exc, 2, "io")
    return 0


if __name__ == "__main__":
    sys.exit(main())
