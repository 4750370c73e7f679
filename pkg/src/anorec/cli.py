"""Command-line surface for the detection and recounting pipeline.

Subcommands tie the library together: synthesize or validate packs,
train a model directory, score packs into detection JSON lines, recount
events, evaluate against ground truth, and build unseen-category splits.

Conventions:
  - stdout carries only the command's report (JSON); diagnostics go to
    stderr.
  - exit codes: 0 ok, 2 validation error, 3 runtime error.
  - any flag may instead be supplied through a JSON config file
    (--config); explicit flags win over the file.
  - the ANOREC_MODEL_DIR environment variable supplies the default model
    directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .errors import ValidationError
from .evaluation import (
    Detection,
    DetectionGt,
    RecountEvalEntry,
    frame_level_roc,
    pixel_level_roc,
    recounting_roc,
    split_unseen,
)
from .grid import assign_cell, fit_grid_bank
from .modelstore import load_model_dir, save_model_dir
from .novelty import DetectorConfig
from .pack import MANIFEST_NAME, read_pack, validate_pack, write_pack
from .recounting import fit_recount_model, recount_event
from .report import write_report
from .synth import SynthConfig, generate, generate_split_fixture, normal_subset

MODEL_DIR_ENV = "ANOREC_MODEL_DIR"

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# config handling: every flag defaults to None at parse time; the real
# defaults live here so a --config file can fill any gap

TRAIN_DEFAULTS = {
    "pack": None,
    "out": None,
    "detector": "nn",
    "grid": "3x4",
    "preprocessing": None,
    "pca_dim": 16,
    "pq_subvectors": 16,
    "pq_bits": 8,
    "pq_iterations": 25,
    "rbf_param": 0.001,
    "rbf_param_is_width": False,
    "nu": 0.1,
    "svm_tol": 1e-4,
    "svm_max_iter": 100_000,
    "min_cell_samples": 2,
    "cls_threshold": 0.1,
    "seed": 0,
}

DETECT_DEFAULTS = {
    "pack": None,
    "model": None,
    "threshold": None,
    "out": "-",
}

RECOUNT_DEFAULTS = {
    "pack": None,
    "model": None,
    "multi": False,
    "out": "-",
}

EVAL_DEFAULTS = {
    "detections": None,
    "gt": None,
    "out": None,
    "frame_level": False,
    "pixel_level": False,
}

EVAL_RECOUNT_DEFAULTS = {
    "recounts": None,
    "gt": None,
    "task": None,
    "unseen": None,
    "out": None,
    "cls_threshold": 0.1,
    "exact_match": False,
}

SPLIT_DEFAULTS = {
    "pack": None,
    "task": None,
    "out": None,
    "seed": 0,
    "repeat": 0,
    "unseen_fraction": 0.25,
}

SYNTH_DEFAULTS = {
    "out": None,
    "kind": "detection",
    "seed": 0,
    "environment_seed": None,
    "frames": 100,
    "regions_per_frame": 12,
    "feature_dim": 32,
    "anomaly_fraction": 0.05,
    "displacement": 0.8,
    "cluster_scale": 0.1,
    "normal_only": False,
    "n_images": 64,
    "n_categories": 8,
}

VALIDATE_DEFAULTS = {"pack": None}


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Overlay CLI flags on config-file values on built-in defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            file_cfg = json.load(f)
        if not isinstance(file_cfg, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValidationError(
                f"config file has unknown keys: {sorted(unknown)}"
            )
    merged = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_cfg.get(key, default)
        merged[key] = value
    return argparse.Namespace(**merged)


def _require(value, flag: str):
    if value is None:
        raise ValidationError(f"missing required option {flag}")
    return value


def _model_dir(value) -> str:
    if value:
        return value
    env = os.environ.get(MODEL_DIR_ENV)
    if env:
        return env
    raise ValidationError(
        f"no model directory: pass --model or set {MODEL_DIR_ENV}"
    )


def _parse_grid(text: str) -> tuple[int, int]:
    parts = str(text).lower().split("x")
    if len(parts) != 2:
        raise ValidationError(f"grid must look like ROWSxCOLS, got {text!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValidationError(f"grid must look like ROWSxCOLS, got {text!r}")
    return rows, cols


def _record_order(pack) -> list[int]:
    # canonical output order regardless of how scoring was scheduled
    return sorted(
        range(pack.n),
        key=lambda i: (pack.records[i].video_id, pack.records[i].frame_index, i),
    )


def _write_jsonl(out: str, rows) -> None:
    if out == "-":
        for row in rows:
            print(json.dumps(row))
        return
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    with open(out, "w") as f:
        for row in rows:
            f.write(json.dumps(row))
            f.write("\n")


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc})")
    return rows


def _report(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# ---------------------------------------------------------------------------
# commands

def _cmd_train(args) -> int:
    pack_path = _require(args.pack, "--pack")
    out = _model_dir(args.out)
    pack = read_pack(pack_path)
    rows, cols = _parse_grid(args.grid)
    config = DetectorConfig(
        kind=args.detector,
        preprocessing=args.preprocessing,
        pca_dim=int(args.pca_dim),
        pq_subvectors=int(args.pq_subvectors),
        pq_bits=int(args.pq_bits),
        pq_iterations=int(args.pq_iterations),
        rbf_param=float(args.rbf_param),
        rbf_param_is_width=bool(args.rbf_param_is_width),
        nu=float(args.nu),
        svm_tol=float(args.svm_tol),
        svm_max_iter=int(args.svm_max_iter),
        seed=int(args.seed),
    )
    bank = fit_grid_bank(
        pack, config, rows, cols, min_cell_samples=int(args.min_cell_samples)
    )
    recount = fit_recount_model(pack, cls_threshold=float(args.cls_threshold))
    model_hash = save_model_dir(out, bank, recount)
    log.info("trained %d/%d cells", len(bank.trained_cells), rows * cols)
    _report(
        {
            "model_dir": out,
            "model_hash": model_hash,
            "records": pack.n,
            "grid": f"{rows}x{cols}",
            "detector": config.kind,
            "trained_cells": len(bank.trained_cells),
        }
    )
    return 0


def _cmd_detect(args) -> int:
    pack = read_pack(_require(args.pack, "--pack"))
    bank, _ = load_model_dir(_model_dir(args.model))
    scores, untrained = bank.score_pack(pack)
    threshold = None if args.threshold is None else float(args.threshold)
    rows = []
    above = 0
    for i in _record_order(pack):
        rec = pack.records[i]
        score = float(scores[i])
        if not np.isfinite(score):
            # untrained cells score +inf; JSON needs a finite number
            score = sys.float_info.max
        row = {
            "video_id": rec.video_id,
            "frame_index": rec.frame_index,
            "record_index": i,
            "box": [float(v) for v in rec.box],
            "score": score,
            "untrained_cell": bool(untrained[i]),
        }
        if threshold is not None:
            row["above_threshold"] = bool(score >= threshold)
            above += row["above_threshold"]
        rows.append(row)
    _write_jsonl(args.out, rows)
    if args.out != "-":
        summary = {
            "out": args.out,
            "records": pack.n,
            "untrained_cells": int(untrained.sum()),
        }
        if threshold is not None:
            summary["above_threshold"] = above
        _report(summary)
    return 0


def _cmd_recount(args) -> int:
    pack = read_pack(_require(args.pack, "--pack"))
    bank, model = load_model_dir(_model_dir(args.model))
    missing = [t.name for t in model.tasks if all(s.name != t.name for s in pack.tasks)]
    if missing:
        raise ValidationError(f"pack lacks scores for model tasks {missing}")
    rows = []
    for i in _record_order(pack):
        rec = pack.records[i]
        task_scores = {
            t.name: pack.record_scores(i, t.name) for t in model.tasks
        }
        result = recount_event(model, task_scores)
        cell = assign_cell(bank.spec, rec.box)
        tasks_out = {}
        for name, tr in result.items():
            entry = {
                "category": tr.category,
                "cls_score": tr.cls_score,
                "anomaly_score": tr.anomaly,
            }
            if args.multi:
                entry["candidates"] = [
                    {
                        "category": c.category,
                        "cls_score": c.cls_score,
                        "anomaly_score": c.anomaly,
                    }
                    for c in tr.candidates
                ]
            tasks_out[name] = entry
        rows.append(
            {
                "video_id": rec.video_id,
                "frame_index": rec.frame_index,
                "record_index": i,
                "untrained_cell": bank.cells.get(cell) is None,
                "tasks": tasks_out,
            }
        )
    _write_jsonl(args.out, rows)
    if args.out != "-":
        _report({"out": args.out, "records": pack.n})
    return 0


def _load_detections(path: str) -> list[Detection]:
    dets = []
    for row in _read_jsonl(path):
        try:
            dets.append(
                Detection(
                    video_id=str(row["video_id"]),
                    frame_index=int(row["frame_index"]),
                    box=tuple(float(v) for v in row["box"]),
                    score=float(row["score"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad detection row ({exc})")
    return dets


def _cmd_eval(args) -> int:
    detections = _load_detections(_require(args.detections, "--detections"))
    gt_pack = read_pack(_require(args.gt, "--gt"))
    out = _require(args.out, "--out")
    gt = DetectionGt.from_pack(gt_pack)
    frame_level = bool(args.frame_level)
    pixel_level = bool(args.pixel_level)
    if not frame_level and not pixel_level:
        frame_level = True  # evaluate something by default
    curves = {}
    if frame_level:
        curves["frame"] = frame_level_roc(detections, gt)
    if pixel_level:
        curves["pixel"] = pixel_level_roc(detections, gt)
    report = write_report(
        out,
        curves,
        meta={
            "detections": len(detections),
            "frames": len(gt.frames),
            "detections_path": str(args.detections),
            "gt_path": str(args.gt),
        },
    )
    _report(report)
    return 0


def _cmd_eval_recount(args) -> int:
    gt_pack = read_pack(_require(args.gt, "--gt"))
    rows = _read_jsonl(_require(args.recounts, "--recounts"))
    task = _require(args.task, "--task")
    out = _require(args.out, "--out")
    unseen_text = _require(args.unseen, "--unseen")
    unseen = [t.strip() for t in str(unseen_text).split(",") if t.strip()]
    if not unseen:
        raise ValidationError("--unseen lists no categories")
    spec = gt_pack.task(task)
    unknown = set(unseen) - set(spec.categories)
    if unknown:
        raise ValidationError(
            f"unseen categories {sorted(unknown)} not in task {task!r}"
        )
    if gt_pack.region_labels is None:
        raise ValidationError("ground-truth pack carries no region labels")
    annotated = {
        lab.record_index: set(lab.categories.get(task, ()))
        for lab in gt_pack.region_labels
    }
    entries = []
    for row in rows:
        try:
            i = int(row["record_index"])
            task_entry = row["tasks"][task]
            candidates = task_entry["candidates"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(
                f"bad recount row (need tasks.{task}.candidates; re-run "
                f"recount with --multi): {exc}"
            )
        if i not in annotated:
            raise ValidationError(f"recount row names unknown record {i}")
        triples = tuple(
            (str(c["category"]), float(c["cls_score"]), float(c["anomaly_score"]))
            for c in candidates
        )
        entries.append(
            RecountEvalEntry(triples, frozenset(annotated[i] & set(unseen)))
        )
    curve = recounting_roc(
        entries,
        cls_threshold=float(args.cls_threshold),
        exact_match=bool(args.exact_match),
    )
    report = write_report(
        out,
        {"recounting": curve},
        meta={
            "entries": len(entries),
            "positives": sum(1 for e in entries if e.gt),
            "task": task,
            "unseen": sorted(unseen),
            "exact_match": bool(args.exact_match),
        },
    )
    _report(report)
    return 0


def _cmd_split(args) -> int:
    pack = read_pack(_require(args.pack, "--pack"))
    task = _require(args.task, "--task")
    out = _require(args.out, "--out")
    res = split_unseen(
        pack,
        task,
        seed=int(args.seed),
        repeat=int(args.repeat),
        unseen_fraction=float(args.unseen_fraction),
    )
    write_pack(os.path.join(out, "train"), res.train)
    write_pack(os.path.join(out, "test"), res.test)
    unseen = set(str(c) for c in res.unseen)
    leakage = 0
    for lab in res.train.region_labels or ():
        leakage += bool(set(lab.categories.get(task, ())) & unseen)
    if leakage:
        raise ValidationError(
            f"{leakage} training records carry unseen categories"
        )
    summary = {
        "out": out,
        "unseen": sorted(unseen),
        "seen": sorted(str(c) for c in res.seen),
        "train_images": len(res.train_images),
        "test_images": len(res.test_images),
        "train_records": res.train.n,
        "test_records": res.test.n,
        "leakage": 0,
    }
    with open(os.path.join(out, "split.json"), "w") as f:
        json.dump(summary, f, sort_keys=True, indent=1)
        f.write("\n")
    _report(summary)
    return 0


def _cmd_synth(args) -> int:
    out = _require(args.out, "--out")
    if args.kind == "split-fixture":
        pack = generate_split_fixture(
            seed=int(args.seed),
            n_images=int(args.n_images),
            n_categories=int(args.n_categories),
        )
    elif args.kind == "detection":
        config = SynthConfig(
            seed=int(args.seed),
            environment_seed=None
            if args.environment_seed is None
            else int(args.environment_seed),
            frames=int(args.frames),
            regions_per_frame=int(args.regions_per_frame),
            feature_dim=int(args.feature_dim),
            anomaly_fraction=float(args.anomaly_fraction),
            anomaly_displacement=float(args.displacement),
            cluster_scale=float(args.cluster_scale),
        )
        pack = generate(config)
        if args.normal_only:
            pack = normal_subset(pack)
    else:
        raise ValidationError(f"unknown synth kind {args.kind!r}")
    write_pack(out, pack)
    abnormal = sum(
        1 for lab in pack.region_labels or () if lab.abnormal
    )
    _report({"out": out, "records": pack.n, "abnormal": abnormal})
    return 0


def _cmd_validate(args) -> int:
    path = _require(args.pack, "--pack")
    warnings = validate_pack(path)
    for w in warnings:
        print(w, file=sys.stderr)
    with open(os.path.join(path, MANIFEST_NAME)) as f:
        manifest = json.load(f)
    _report(
        {
            "ok": True,
            "records": int(manifest["record_count"]),
            "warnings": len(warnings),
        }
    )
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--config",
        help="JSON file supplying any of this command's options",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anorec",
        description="Feature-space abnormal event detection and recounting.",
    )
    parser.add_argument(
        "--verbose", action="store_true", help="log details to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model directory from a pack")
    _add_config_flag(p)
    p.add_argument("--pack")
    p.add_argument("--out", help=f"model directory (default ${MODEL_DIR_ENV})")
    p.add_argument("--detector", choices=("nn", "ocsvm", "kde"))
    p.add_argument("--grid", help="ROWSxCOLS, e.g. 3x4")
    p.add_argument("--preprocessing", choices=("pq", "pca", "none"))
    p.add_argument("--pca-dim", type=int)
    p.add_argument("--pq-subvectors", type=int)
    p.add_argument("--pq-bits", type=int)
    p.add_argument("--pq-iterations", type=int)
    p.add_argument("--rbf-param", type=float)
    p.add_argument(
        "--rbf-param-is-width", action=argparse.BooleanOptionalAction,
        default=None,
        help="treat --rbf-param as a kernel width instead of gamma",
    )
    p.add_argument("--nu", type=float)
    p.add_argument("--svm-tol", type=float)
    p.add_argument("--svm-max-iter", type=int)
    p.add_argument("--min-cell-samples", type=int)
    p.add_argument("--cls-threshold", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train, defaults=TRAIN_DEFAULTS)

    p = sub.add_parser("detect", help="score a pack with a trained model")
    _add_config_flag(p)
    p.add_argument("--pack")
    p.add_argument("--model", help=f"model directory (default ${MODEL_DIR_ENV})")
    p.add_argument(
        "--threshold", type=float,
        help="also flag rows with score >= threshold",
    )
    p.add_argument("--out", help="JSONL path, '-' for stdout")
    p.set_defaults(func=_cmd_detect, defaults=DETECT_DEFAULTS)

    p = sub.add_parser("recount", help="recount events in a scored pack")
    _add_config_flag(p)
    p.add_argument("--pack")
    p.add_argument("--model", help=f"model directory (default ${MODEL_DIR_ENV})")
    p.add_argument(
        "--multi", action=argparse.BooleanOptionalAction, default=None,
        help="include every above-threshold category as a candidate",
    )
    p.add_argument("--out", help="JSONL path, '-' for stdout")
    p.set_defaults(func=_cmd_recount, defaults=RECOUNT_DEFAULTS)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    _add_config_flag(p)
    p.add_argument("--detections", help="JSONL from the detect command")
    p.add_argument("--gt", help="pack directory carrying frame labels")
    p.add_argument("--out", help="report directory")
    p.add_argument(
        "--frame-level", action=argparse.BooleanOptionalAction, default=None
    )
    p.add_argument(
        "--pixel-level", action=argparse.BooleanOptionalAction, default=None
    )
    p.set_defaults(func=_cmd_eval, defaults=EVAL_DEFAULTS)

    p = sub.add_parser(
        "eval-recount", help="recounting accuracy for held-out categories"
    )
    _add_config_flag(p)
    p.add_argument("--recounts", help="JSONL from recount --multi")
    p.add_argument("--gt", help="pack directory carrying region labels")
    p.add_argument("--task")
    p.add_argument("--unseen", help="comma-separated held-out categories")
    p.add_argument("--out", help="report directory")
    p.add_argument("--cls-threshold", type=float)
    p.add_argument(
        "--exact-match", action=argparse.BooleanOptionalAction, default=None,
        help="require predicted set == ground-truth set",
    )
    p.set_defaults(func=_cmd_eval_recount, defaults=EVAL_RECOUNT_DEFAULTS)

    p = sub.add_parser("split", help="hold out categories for unseen-concept tests")
    _add_config_flag(p)
    p.add_argument("--pack")
    p.add_argument("--task")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeat", type=int)
    p.add_argument("--unseen-fraction", type=float)
    p.set_defaults(func=_cmd_split, defaults=SPLIT_DEFAULTS)

    p = sub.add_parser("synth", help="generate a synthetic benchmark pack")
    _add_config_flag(p)
    p.add_argument("--out")
    p.add_argument("--kind", choices=("detection", "split-fixture"))
    p.add_argument("--seed", type=int)
    p.add_argument("--environment-seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--regions-per-frame", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--anomaly-fraction", type=float)
    p.add_argument("--displacement", type=float)
    p.add_argument("--cluster-scale", type=float)
    p.add_argument(
        "--normal-only", action=argparse.BooleanOptionalAction, default=None,
        help="write only the normal records (training data)",
    )
    p.add_argument("--n-images", type=int)
    p.add_argument("--n-categories", type=int)
    p.set_defaults(func=_cmd_synth, defaults=SYNTH_DEFAULTS)

    p = sub.add_parser("validate", help="check a pack directory")
    _add_config_flag(p)
    p.add_argument("--pack")
    p.set_defaults(func=_cmd_validate, defaults=VALIDATE_DEFAULTS)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.getLogger().setLevel(
        logging.INFO if args.verbose else logging.WARNING
    )
    try:
        resolved = _resolve(args, args.defaults)
        return args.func(resolved)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures: convergence, I/O, bad files
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
