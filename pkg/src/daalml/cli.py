"""Command line entry point: ``daalml {generate,train,eval,gradcheck,compare,plot}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data, gradcheck, metrics, model, plot
from .config import ConfigError
from .daal import LineSegmentSet

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(args, cfg: dict) -> Path:
    out = Path(args.out or cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from None


def _emit(args, payload: dict, text: str) -> None:
    print(_dump(payload) if args.json else text, end="" if args.json else "\n")


def _dataset(cfg: dict, seed: int | None = None) -> data.LabeledDataset:
    src = cfg["data"]
    if src["csv"] is not None:
        try:
            return data.load_features_csv(src["csv"])
        except data.ParseError as exc:
            raise CliError(f"{src['csv']}: {exc}") from None
    syn = dict(src["synthetic"])
    if seed is not None:
        syn["seed"] = seed
    return data.generate_multimodal(data.SyntheticSpec(**syn))


def _load_network(path) -> model.NetworkState:
    try:
        return model.load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid checkpoint {path}: {exc}") from None


def _load_eval_data(path, state: model.NetworkState) -> data.LabeledDataset:
    try:
        ds = data.load_features_csv(path)
    except FileNotFoundError:
        raise CliError(f"dataset not found: {path}") from None
    except data.ParseError as exc:
        raise CliError(f"{path}: {exc}") from None
    if ds.features.shape[1] != state.spec.input_dim:
        raise CliError(f"dataset has {ds.features.shape[1]} features, checkpoint expects {state.spec.input_dim}")
    if ds.labels.max() >= state.spec.num_classes:
        raise CliError("dataset labels exceed the checkpoint's class count")
    return ds


def _segments_for(checkpoint: Path, explicit) -> LineSegmentSet | None:
    path = Path(explicit) if explicit else checkpoint.with_name("segments.json")
    if path.is_file():
        return LineSegmentSet.load(path)
    if explicit:
        raise CliError(f"segments file not found: {explicit}")
    return None


def cmd_generate(args) -> int:
    cfg = config_mod.load(args.config, args.seed)
    if cfg["data"]["synthetic"] is None:
        raise CliError("generate needs a synthetic data source")
    ds = _dataset(cfg)
    out = _out_dir(args, cfg)
    path = out / "dataset.csv"
    try:
        data.save_features_csv(ds, path)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from None
    counts = np.bincount(ds.labels).tolist()
    payload = {"path": str(path), "rows": len(ds), "classes": len(counts),
               "per_class": counts, "config": cfg, "config_hash": config_mod.content_hash(cfg)}
    _emit(args, payload, f"wrote {len(ds)} rows, {len(counts)} classes ({counts[0]} per class) to {path}")
    return EXIT_OK


def _run_training(cfg: dict, loss: str | None = None, seed: int | None = None,
                  data_seed: int | None = None):
    seed = cfg["seed"] if seed is None else seed
    ds = _dataset(cfg, data_seed)
    train_ds, test_ds = data.stratified_split(ds, float(cfg["data"]["test_fraction"]), seed)
    spec = config_mod.network_spec(cfg, ds.features.shape[1], ds.num_classes)
    tcfg = config_mod.train_config(cfg, loss, seed)
    state, segments, history = model.train(spec, train_ds.features, train_ds.labels, tcfg)
    return state, segments, history, train_ds, test_ds


def _evaluate(cfg: dict, state, ds: data.LabeledDataset, seed: int, fingerprint: str) -> metrics.EvalReport:
    E = model.embed(state, ds.features)
    m = cfg["metrics"]
    return metrics.evaluate(E, ds.labels, m["ks"], seed, int(m["restarts"]), int(m["max_iter"]),
                            bool(m["normalize"]), fingerprint)


def cmd_train(args) -> int:
    cfg = config_mod.load(args.config, args.seed)
    out = _out_dir(args, cfg)
    try:
        state, segments, history, _, test_ds = _run_training(cfg)
    except model.NumericalError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    written = {}
    model.save_checkpoint(state, out / "network.json")
    written["network"] = str(out / "network.json")
    if segments is not None:
        segments.save(out / "segments.json")
        written["segments"] = str(out / "segments.json")
    data.save_features_csv(test_ds, out / "test.csv")
    written["test_data"] = str(out / "test.csv")
    doc = {"config": cfg, "config_hash": config_mod.content_hash(cfg), "history": history}
    _write(out / "history.json", _dump(doc))
    written["history"] = str(out / "history.json")
    last = history[-1] if history else {}
    text = f"trained {len(history)} epochs; final " + ", ".join(
        f"{k}={v:.4f}" for k, v in last.items() if k != "epoch") if history else "trained 0 epochs"
    _emit(args, {"artifacts": written, "final": last}, text)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = config_mod.load(args.config, args.seed)
    state = _load_network(args.checkpoint)
    ds = _load_eval_data(args.data, state)
    fingerprint = config_mod.content_hash({
        "config": cfg, "checkpoint": _sha256_file(args.checkpoint), "data": _sha256_file(args.data)})
    try:
        report = _evaluate(cfg, state, ds, cfg["seed"], fingerprint)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = _out_dir(args, cfg)
    _write(out / "report.json", report.to_json())
    _emit(args, report.to_json_dict(), report.table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.loss == "all":
        names = list(gradcheck.ALL_SUITES)
    elif args.loss == "daal":
        names = ["daal-intra", "daal-intra-vertex", "daal-inter", "daal"]
    elif args.loss in gradcheck.ALL_SUITES:
        names = [args.loss]
    else:
        choices = ", ".join(["all", *gradcheck.ALL_SUITES])
        print(f"unknown loss {args.loss!r}; choose from {choices}", file=sys.stderr)
        return EXIT_USAGE
    seed = 0 if args.seed is None else args.seed
    results = gradcheck.run_all(seed, args.points, names)
    ok = all(r.passed for r in results)
    payload = {"passed": ok, "tolerance": gradcheck.TOLERANCE, "seed": seed,
               "suites": [{"name": r.name, "max_rel_error": r.max_rel_error, "points": r.points,
                           "passed": r.passed} for r in results]}
    lines = [f"{r.name:24s} max rel err {r.max_rel_error:.2e} over {r.points:3d} points  "
             f"{'PASS' if r.passed else 'FAIL'}" for r in results]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK if ok else 1


def _compare_table(arms: list[str], rows: list[dict], mean: dict) -> str:
    head = ["seed"]
    for a in arms:
        head += [f"{a} NMI", f"{a} R@1", f"{a} R@Avg"]
    for a in arms[1:]:
        head += [f"dNMI {a}", f"dR@1 {a}"]

    def cells(r, label):
        c = [label]
        for a in arms:
            c += [f"{100 * r['arms'][a][k]:.2f}" for k in ("nmi", "r1", "r_avg")]
        for a in arms[1:]:
            c += [f"{100 * r['deltas'][a][k]:+.2f}" for k in ("nmi", "r1")]
        return c

    body = [cells(r, str(r["seed"])) for r in rows] + [cells(mean, "mean")]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    fmt = lambda row: " | ".join(v.rjust(w) for v, w in zip(row, widths))  # noqa: E731
    return "\n".join([fmt(head)] + [fmt(b) for b in body])


def run_compare(cfg: dict) -> dict:
    arms = list(cfg["compare"]["arms"])
    rows = []
    for seed in cfg["compare"]["seeds"]:
        seed = int(seed)
        row = {"seed": seed, "arms": {}, "deltas": {}}
        for arm in arms:
            # synthetic data is regenerated per seed; a CSV source stays fixed
            state, _, history, _, test_ds = _run_training(cfg, arm, seed, data_seed=seed)
            rep = _evaluate(cfg, state, test_ds, seed, "")
            row["arms"][arm] = {"nmi": rep.nmi, "r1": rep.recall_at[min(rep.recall_at)],
                                "r_avg": rep.recall_average,
                                "recall_at": {str(k): v for k, v in rep.recall_at.items()},
                                "final_total_loss": history[-1]["total"] if history else None}
        base = row["arms"][arms[0]]
        for arm in arms[1:]:
            row["deltas"][arm] = {k: row["arms"][arm][k] - base[k] for k in ("nmi", "r1", "r_avg")}
        rows.append(row)
    mean = {"arms": {a: {k: float(np.mean([r["arms"][a][k] for r in rows])) for k in ("nmi", "r1", "r_avg")}
                     for a in arms},
            "deltas": {a: {k: float(np.mean([r["deltas"][a][k] for r in rows])) for k in ("nmi", "r1", "r_avg")}
                       for a in arms[1:]}}
    wins = {a: sum(r["deltas"][a]["nmi"] >= 0 for r in rows) for a in arms[1:]}
    return {"config": cfg, "config_hash": config_mod.content_hash(cfg), "arms": arms,
            "rows": rows, "mean": mean, "nmi_not_worse_count": wins}


def cmd_compare(args) -> int:
    cfg = config_mod.load(args.config, args.seed)
    out = _out_dir(args, cfg)
    try:
        doc = run_compare(cfg)
    except model.NumericalError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    _write(out / "compare.json", _dump(doc))
    _emit(args, doc, _compare_table(doc["arms"], doc["rows"], doc["mean"]))
    return EXIT_OK


def cmd_plot(args) -> int:
    cfg = config_mod.load(args.config, args.seed)
    state = _load_network(args.checkpoint)
    if state.spec.embedding_dim != 2:
        raise CliError(f"plot needs embedding_dim = 2 (checkpoint has {state.spec.embedding_dim}); "
                       "retrain with network.embedding_dim = 2")
    ds = _load_eval_data(args.data, state)
    segments = _segments_for(Path(args.checkpoint), args.segments)
    svg = plot.embedding_svg(model.embed(state, ds.features), ds.labels, segments)
    out = _out_dir(args, cfg)
    _write(out / "embedding.svg", svg)
    _emit(args, {"path": str(out / "embedding.svg")}, f"wrote {out / 'embedding.svg'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--out", help="output directory (default: config output_dir)")

    parser = argparse.ArgumentParser(prog="daalml", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset CSV")
    sub.add_parser("train", parents=[common], help="train a network, write checkpoints and history")
    p = sub.add_parser("eval", parents=[common], help="NMI / Recall@K report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="feature CSV to embed")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--loss", default="all")
    p.add_argument("--points", type=int, default=50)
    sub.add_parser("compare", parents=[common], help="paired runs of several losses over seeds")
    p = sub.add_parser("plot", parents=[common], help="SVG scatter of 2-D embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--segments", help="segment checkpoint (default: segments.json next to the checkpoint)")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
