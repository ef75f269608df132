"""Command-line front end: solve-sas, solve-aal, train, ablate, eval.

Every command is a pure function of (config, input files, seed); reruns are
byte-identical except for the sidecar ``run.log``, the only file that carries
timestamps. Exit codes: 0 success, 2 input/config error, 3 degenerate math
input, 4 training divergence, 5 evaluation precondition.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aal import AalParams, p2_objective, solve_aal
from .config import (RunConfig, config_digest, config_to_dict, load_run_config,
                     run_config_from_dict)
from .core import batch_means
from .data import (batch_digest, generate, load_features, load_matrix_csv,
                   write_matrix_csv, write_vector_csv)
from .errors import (ConfigError, DegenerateInput, DimensionMismatch,
                     EmptyModality, InvalidSpec, LabelOutOfRange, NonFiniteLoss,
                     ParseError, PhoError, QueryClassAbsent, UnknownModality)
from .evaluation import evaluate, metrics_to_dict, write_cmc_csv, write_metrics_json
from .sas import SasParams, p1_objective, solve_sas
from .training import (CCL_MODES, MODES, load_checkpoint, run_training,
                       save_checkpoint, write_history_csv)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_DIVERGED = 4
EXIT_EVAL = 5

logger = logging.getLogger(__name__)

_INPUT_ERRORS = (ConfigError, ParseError, UnknownModality, InvalidSpec,
                 DimensionMismatch, EmptyModality, LabelOutOfRange, OSError)


def _configure_logging() -> None:
    level = os.environ.get("PHO_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"PHO_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _sidecar_log(out_dir: Path, argv) -> None:
    stamp = datetime.datetime.now().isoformat()
    with open(out_dir / "run.log", "a", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{stamp} pho {' '.join(argv)}\n")


def _build_config(args, argv_doc_overrides=True) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: config document must be a JSON object")
    if argv_doc_overrides:
        if getattr(args, "seed", None) is not None:
            doc["seed"] = args.seed
        if getattr(args, "mode", None) is not None:
            doc["mode"] = args.mode
        if getattr(args, "out", None) is not None:
            doc["out_dir"] = args.out
        pho = doc.setdefault("pho", {})
        for flag, key in (("alpha", "alpha"), ("beta", "beta"), ("gamma", "gamma"),
                          ("rho", "rho"), ("lam", "lambda"), ("k", "eval_k")):
            value = getattr(args, flag, None)
            if value is not None:
                pho[key] = value
    return run_config_from_dict(doc)


def _input_means(args, cfg: RunConfig):
    """Batch means from a feature CSV if given, else from the synth train split."""
    if args.features:
        batch = load_features(args.features)
    else:
        batch, _, _ = generate(cfg.synth)
    return batch_means(batch), batch


def cmd_solve_sas(args, argv) -> int:
    cfg = _build_config(args)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _sidecar_log(out, argv)
    means, batch = _input_means(args, cfg)
    params = SasParams(alpha=cfg.settings.alpha)
    a_star = solve_sas(means, params)
    residual = a_star.entries @ means.x_bar - means.y_bar
    write_matrix_csv(out / "A.csv", a_star.entries)
    _write_json(out / "report.json", {
        "alpha": params.alpha,
        "n": means.n,
        "num_visible": batch.num_visible,
        "num_infrared": batch.num_infrared,
        "p1_value": p1_objective(a_star, means, params),
        "residual_norm": float(np.sqrt(residual @ residual)),
    })
    return EXIT_OK


def cmd_solve_aal(args, argv) -> int:
    cfg = _build_config(args)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _sidecar_log(out, argv)
    means, batch = _input_means(args, cfg)
    params = AalParams(alpha=cfg.settings.alpha,
                       max_iters=args.max_iters if args.max_iters else cfg.settings.aal_max_iters,
                       tol=args.tol if args.tol else cfg.settings.aal_tol)
    sol = solve_aal(means, params)
    write_matrix_csv(out / "A.csv", sol.a_star.entries)
    write_vector_csv(out / "w.csv", sol.w_star.w)
    with open(out / "trace.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("half_step,p2\n")
        for i, value in enumerate(sol.objective_trace, start=1):
            fh.write(f"{i},{value!r}\n")
    _write_json(out / "report.json", {
        "alpha": params.alpha,
        "tol": params.tol,
        "max_iters": params.max_iters,
        "n": means.n,
        "num_visible": batch.num_visible,
        "num_infrared": batch.num_infrared,
        "iterations": sol.iterations,
        "final_p2": p2_objective(sol.a_star, sol.w_star, means, params.alpha),
    })
    return EXIT_OK


def cmd_train(args, argv) -> int:
    cfg = _build_config(args)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _sidecar_log(out, argv)
    train, gallery, query = generate(cfg.synth)
    digest = config_digest(cfg)
    state = None
    if args.resume:
        state, saved_digest = load_checkpoint(args.resume)
        if saved_digest and saved_digest != digest:
            raise ConfigError("checkpoint was produced under a different configuration")
    result = run_training(train, gallery, query, cfg.settings, cfg.seed, state=state)
    write_history_csv(out / "history.csv", result.history)
    save_checkpoint(out / "checkpoint.npz", result.state, digest)
    metrics = metrics_to_dict(result.final_metrics)
    metrics["mode"] = cfg.mode
    metrics["data_digest"] = batch_digest(train)
    _write_json(out / "metrics.json", metrics)
    write_cmc_csv(out / "cmc.csv", result.final_metrics)
    return EXIT_OK


ABLATION_COLUMNS = ("mode", "rank1", "rank5", "rank10", "rank20", "map",
                    "data_digest", "status")


def run_ablation(base_doc: dict, seed: int) -> list[dict]:
    """Train the four mode variants on shared data; one result row per mode."""
    rows = []
    for mode in MODES:
        doc = copy.deepcopy(base_doc)
        doc["seed"] = seed
        doc["mode"] = mode
        if mode not in CCL_MODES:
            doc.get("pho", {}).pop("lambda", None)
        cfg = run_config_from_dict(doc)
        train, gallery, query = generate(cfg.synth)
        row = {"mode": mode, "data_digest": batch_digest(train), "status": "ok"}
        try:
            result = run_training(train, gallery, query, cfg.settings, cfg.seed)
            m = result.final_metrics
            row.update(rank1=m.rank(1), rank5=m.rank(5), rank10=m.rank(10),
                       rank20=m.rank(20), map=m.map)
        except PhoError as exc:
            row.update(rank1="", rank5="", rank10="", rank20="", map="",
                       status=f"failed:{type(exc).__name__}")
            logger.error("mode %s failed: %s", mode, exc)
        rows.append(row)
    return rows


def write_ablation_csv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(ABLATION_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in ABLATION_COLUMNS:
                v = row[col]
                cells.append(repr(float(v)) if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")


_MODE_LABELS = {
    "baseline": ("1 (base)", "", "", "", ""),
    "learned-a": ("2", "", "", "", "x"),
    "sas": ("3", "x", "", "x", ""),
    "aal": ("4", "", "x", "x", ""),
}


def write_ablation_md(path, rows: list[dict]) -> None:
    """Human-readable variant table: analytic alignment columns vs gradient-trained."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("| Exp | SAS | AAL | CCL | SGD-A | rank-1 | rank-5 | rank-10 | rank-20 | mAP |\n")
        fh.write("|-----|-----|-----|-----|-------|--------|--------|---------|---------|-----|\n")
        for row in rows:
            exp, sas_c, aal_c, ccl_c, sgd_c = _MODE_LABELS[row["mode"]]
            if row["status"] == "ok":
                vals = [f"{row[k]:.4f}" for k in ("rank1", "rank5", "rank10", "rank20", "map")]
            else:
                vals = [row["status"]] * 5
            fh.write(f"| {exp} | {sas_c} | {aal_c} | {ccl_c} | {sgd_c} | "
                     + " | ".join(vals) + " |\n")


def cmd_ablate(args, argv) -> int:
    doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
    base_cfg = run_config_from_dict(copy.deepcopy(doc))  # validate early
    seed = args.seed if args.seed is not None else base_cfg.seed
    out = Path(args.out or base_cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _sidecar_log(out, argv)
    rows = run_ablation(doc, seed)
    write_ablation_csv(out / "ablation.csv", rows)
    write_ablation_md(out / "ablation.md", rows)
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    out = Path(args.out or "pho_out")
    out.mkdir(parents=True, exist_ok=True)
    _sidecar_log(out, argv)
    query = load_features(args.query)
    gallery = load_features(args.gallery)
    transform = None
    note = "identity"
    if args.transform:
        from .core import TransformMatrix
        transform = TransformMatrix(load_matrix_csv(args.transform))
        note = str(args.transform)
    k = args.k if args.k is not None else 20
    result = evaluate(query, gallery, transform=transform, k=k)
    write_metrics_json(out / "metrics.json", result, transform_note=note)
    write_cmc_csv(out / "cmc.csv", result)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a run-configuration JSON file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--alpha", type=float, help="alignment ridge strength")
    parser.add_argument("--beta", type=float, help="intra-class sample-term weight")
    parser.add_argument("--gamma", type=float, help="intra-class multiplier in the hinge")
    parser.add_argument("--rho", type=float, help="hinge margin of the consistency loss")
    parser.add_argument("--lambda", dest="lam", type=float,
                        help="weight of the consistency loss in the total")
    parser.add_argument("--mode", choices=MODES, help="training variant")
    parser.add_argument("--k", type=int, help="evaluation depth (rank-k / CMC length)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pho",
        description="Hierarchical parameter optimization for cross-modality "
                    "feature alignment.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-sas", help="closed-form alignment map from batch means")
    _add_common(p)
    p.add_argument("--features", help="feature CSV (default: synth train split)")
    p.set_defaults(func=cmd_solve_sas)

    p = sub.add_parser("solve-aal", help="auto-weighted alternating alignment")
    _add_common(p)
    p.add_argument("--features", help="feature CSV (default: synth train split)")
    p.add_argument("--tol", type=float, help="objective-change stopping threshold")
    p.add_argument("--max-iters", type=int, help="iteration cap")
    p.set_defaults(func=cmd_solve_aal)

    p = sub.add_parser("train", help="train one variant and evaluate retrieval")
    _add_common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train all four variants on shared data")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="CMC/mAP of a query CSV against a gallery CSV")
    _add_common(p)
    p.add_argument("--query", required=True, help="query feature CSV")
    p.add_argument("--gallery", required=True, help="gallery feature CSV")
    p.add_argument("--transform", help="optional alignment matrix CSV applied to queries")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args, argv)
    except NonFiniteLoss as exc:
        print(f"error: {exc} (batch {exc.batch_index})", file=sys.stderr)
        return EXIT_DIVERGED
    except QueryClassAbsent as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except DegenerateInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
