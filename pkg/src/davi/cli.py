"""Command line workflow: synthesize, train, label, adapt, predict, evaluate.

Every subcommand takes ``--config FILE`` pointing at a JSON object whose keys
are the long option names with underscores. Precedence is built-in defaults,
then the config file, then options given explicitly on the command line. The
resolved settings are snapshotted to ``config.json`` in the output directory
so a run can be reproduced from its artifacts alone.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 missing
artifact (manifest, checkpoint, label store, prediction), 4 segmentation
backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (
    DatasetManifest,
    SyntheticSceneConfig,
    generate_synthetic_dataset,
    load_manifest,
    load_pairs,
    load_targets,
    style_from_spec,
    write_binary_map,
    write_probability_map,
)
from .data.tiles import save_tile
from .errors import (
    AdaptationDivergedError,
    MissingArtifactError,
    SegmenterBackendError,
    ValidationError,
)
from .estimators import DaviAdapter, SourceChangeDetector, load_detector
from .metrics import evaluate_run
from .pseudo import generate_pseudo_labels, load_label_store, save_label_store, store_digest
from .segmenters import (
    DEFAULT_PROMPT,
    CachedSegmenter,
    ExternalSegmenter,
    OracleIndex,
    OracleSegmenter,
    Segmenter,
)
from .threshold import save_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_BACKEND = 4

# Named label-construction variants; each fixes the three ablation switches.
ABLATION_PRESETS = {
    "source-only": {"label_source": "source", "use_coarse_mask": False, "use_refinement": False},
    "source-coarse": {"label_source": "source", "use_coarse_mask": True, "use_refinement": False},
    "diffsam-only": {"label_source": "diffsam", "use_coarse_mask": False, "use_refinement": False},
    "diffsam-coarse": {"label_source": "diffsam", "use_coarse_mask": True, "use_refinement": False},
    "fusion": {"label_source": "fusion", "use_coarse_mask": False, "use_refinement": False},
    "fusion-coarse": {"label_source": "fusion", "use_coarse_mask": True, "use_refinement": False},
    "fusion-refine": {"label_source": "fusion", "use_coarse_mask": False, "use_refinement": True},
    "full": {"label_source": "fusion", "use_coarse_mask": True, "use_refinement": True},
}


def _merge_settings(args: argparse.Namespace, defaults: dict) -> dict:
    """Resolve defaults < config file < explicit flags (flags parse to None)."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise MissingArtifactError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise ValidationError(f"{path}: unknown config keys {unknown}")
        merged.update(doc)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _snapshot(out_dir: Path, command: str, settings: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    document = {"command": command, "settings": settings}
    (out_dir / "config.json").write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


def _write_metrics_log(out_dir: Path, records: list[dict]) -> None:
    with (out_dir / "metrics.jsonl").open("w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _build_segmenter(settings: dict, manifest_path) -> Segmenter:
    kind = settings["segmenter"]
    if kind == "oracle":
        index_path = settings.get("oracle_index") or Path(manifest_path).parent / "oracle.json"
        index_path = Path(index_path)
        if not index_path.is_file():
            raise MissingArtifactError(f"oracle index not found: {index_path}")
        segmenter: Segmenter = OracleSegmenter(OracleIndex.load(index_path))
    elif kind == "external":
        endpoint = settings.get("endpoint")
        if not endpoint:
            raise ValidationError("--endpoint is required with --segmenter external")
        segmenter = ExternalSegmenter(endpoint)
    else:
        raise ValidationError(f"segmenter must be 'oracle' or 'external', got {kind!r}")
    if settings.get("cache_dir"):
        segmenter = CachedSegmenter(segmenter, settings["cache_dir"])
    return segmenter


def _manifest_pairs(manifest: DatasetManifest):
    ids, arr = load_pairs(manifest)
    return ids, arr


# ---------------------------------------------------------------------------
# Subcommands. Each returns an exit code; unexpected domain errors are mapped
# by main().


_SYNTH_DEFAULTS = {
    "n_pairs": 20,
    "tile_size": 64,
    "role": "target",
    "style": "target",
    "seed": 0,
    "damage_fraction": 0.5,
    "partial_fraction": 0.0,
    "building_size_min": None,
    "building_size_max": None,
}


def _cmd_synth(args) -> int:
    settings = _merge_settings(args, _SYNTH_DEFAULTS)
    out_dir = Path(args.out_dir)
    tile = int(settings["tile_size"])
    size_min = settings["building_size_min"]
    size_max = settings["building_size_max"]
    if size_min is None:
        size_min = max(6, tile // 8)
    if size_max is None:
        size_max = max(int(size_min) + 2, tile // 4)
    config = SyntheticSceneConfig(
        tile_height=tile,
        tile_width=tile,
        building_size_min=int(size_min),
        building_size_max=int(size_max),
        pair_damage_fraction=float(settings["damage_fraction"]),
        partial_fraction=float(settings["partial_fraction"]),
        style=style_from_spec(settings["style"]),
    )
    manifest, _ = generate_synthetic_dataset(
        config, int(settings["n_pairs"]), out_dir, seed=int(settings["seed"]), role=settings["role"]
    )
    _snapshot(out_dir, "synth", settings)
    print(f"wrote {len(manifest)} {settings['role']} pairs under {out_dir}")
    return EXIT_OK


_TRAIN_DEFAULTS = {
    "arch": "siamdiff-small",
    "epochs": 50,
    "batch_size": 8,
    "learning_rate": 1e-3,
    "weight_decay": 0.01,
    "scheduler_step": 8,
    "scheduler_gamma": 0.5,
    "seed": 0,
    "device": "cpu",
}


def _cmd_train_source(args) -> int:
    settings = _merge_settings(args, _TRAIN_DEFAULTS)
    manifest = load_manifest(args.manifest)
    ids, arr = _manifest_pairs(manifest)
    targets = load_targets(manifest)
    out_dir = Path(args.out_dir)
    _snapshot(out_dir, "train-source", settings)

    detector = SourceChangeDetector(
        arch=settings["arch"],
        learning_rate=float(settings["learning_rate"]),
        weight_decay=float(settings["weight_decay"]),
        epochs=int(settings["epochs"]),
        batch_size=int(settings["batch_size"]),
        scheduler_step=int(settings["scheduler_step"]),
        scheduler_gamma=float(settings["scheduler_gamma"]),
        seed=int(settings["seed"]),
        device=settings["device"],
    )
    detector.fit(arr, targets)
    checkpoint_path = out_dir / "source.ckpt"
    detector.save(
        checkpoint_path,
        extra_metadata={"n_pairs": len(ids), "manifest": str(Path(args.manifest).resolve())},
    )
    _write_metrics_log(
        out_dir,
        [{"epoch": i + 1, "loss": v} for i, v in enumerate(detector.loss_curve_)],
    )
    print(
        f"trained on {len(ids)} pairs for {settings['epochs']} epochs; "
        f"final loss {detector.loss_curve_[-1]:.4f}; checkpoint {checkpoint_path}"
    )
    return EXIT_OK


_LABEL_DEFAULTS = {
    "segmenter": "oracle",
    "oracle_index": None,
    "endpoint": None,
    "cache_dir": None,
    "prompt": DEFAULT_PROMPT,
    "tau_v": None,
    "continue_on_error": False,
}


def _cmd_pseudo_labels(args) -> int:
    settings = _merge_settings(args, _LABEL_DEFAULTS)
    manifest = load_manifest(args.manifest)
    ids, arr = _manifest_pairs(manifest)
    source = load_detector(args.checkpoint)
    segmenter = _build_segmenter(settings, args.manifest)
    out_dir = Path(args.out_dir)
    _snapshot(out_dir, "pseudo-labels", settings)

    labels = generate_pseudo_labels(
        source,
        segmenter,
        [(pid, arr[i, 0], arr[i, 1]) for i, pid in enumerate(ids)],
        prompt=settings["prompt"],
        tau_v=settings["tau_v"],
        continue_on_error=bool(settings["continue_on_error"]),
    )
    label_dir = out_dir / "labels"
    save_label_store(labels, label_dir)
    if labels.threshold_result is not None:
        save_report(labels.threshold_result, out_dir / "threshold.json")
    digest = store_digest(label_dir)
    (out_dir / "labels.digest").write_text(digest + "\n")
    print(
        f"labeled {len(labels)} pairs (tau_v={labels.tau_v:.2f}, "
        f"{len(labels.failures)} failed); store digest {digest[:12]}"
    )
    return EXIT_OK


_ADAPT_DEFAULTS = {
    "labels": None,
    "segmenter": "oracle",
    "oracle_index": None,
    "endpoint": None,
    "cache_dir": None,
    "prompt": DEFAULT_PROMPT,
    "lambda_entropy": 0.1,
    "tau_r": 0.001,
    "tau_v": None,
    "ablation": "full",
    "n_views": 2,
    "epochs": 50,
    "batch_size": 8,
    "learning_rate": 1e-5,
    "weight_decay": 0.01,
    "scheduler_step": 8,
    "scheduler_gamma": 0.5,
    "continue_on_error": False,
    "seed": 0,
    "device": "cpu",
}


def _cmd_adapt(args) -> int:
    settings = _merge_settings(args, _ADAPT_DEFAULTS)
    if settings["ablation"] not in ABLATION_PRESETS:
        raise ValidationError(
            f"ablation must be one of {sorted(ABLATION_PRESETS)}, got {settings['ablation']!r}"
        )
    manifest = load_manifest(args.manifest)
    ids, arr = _manifest_pairs(manifest)
    out_dir = Path(args.out_dir)
    _snapshot(out_dir, "adapt", settings)

    pseudo_labels = None
    segmenter = None
    if settings["labels"]:
        pseudo_labels = load_label_store(settings["labels"])
    else:
        segmenter = _build_segmenter(settings, args.manifest)

    adapter = DaviAdapter(
        source=str(args.checkpoint),
        segmenter=segmenter,
        prompt=settings["prompt"],
        lambda_entropy=float(settings["lambda_entropy"]),
        tau_r=float(settings["tau_r"]),
        tau_v=settings["tau_v"],
        n_views=int(settings["n_views"]),
        epochs=int(settings["epochs"]),
        batch_size=int(settings["batch_size"]),
        learning_rate=float(settings["learning_rate"]),
        weight_decay=float(settings["weight_decay"]),
        scheduler_step=int(settings["scheduler_step"]),
        scheduler_gamma=float(settings["scheduler_gamma"]),
        continue_on_error=bool(settings["continue_on_error"]),
        seed=int(settings["seed"]),
        device=settings["device"],
        **ABLATION_PRESETS[settings["ablation"]],
    )
    adapter.fit(arr, pair_ids=ids, pseudo_labels=pseudo_labels)

    checkpoint_path = out_dir / "adapted.ckpt"
    adapter.save(
        checkpoint_path,
        extra_metadata={
            "ablation": settings["ablation"],
            "n_pairs": adapter.n_pairs_,
            "manifest": str(Path(args.manifest).resolve()),
        },
    )
    _write_metrics_log(out_dir, adapter.history_)
    if pseudo_labels is None:
        save_label_store(adapter.pseudo_labels_, out_dir / "labels")
        if adapter.pseudo_labels_.threshold_result is not None:
            save_report(adapter.pseudo_labels_.threshold_result, out_dir / "threshold.json")
    final = adapter.history_[-1]
    print(
        f"adapted on {adapter.n_pairs_} pairs for {settings['epochs']} epochs "
        f"(tau_v={adapter.tau_v_:.2f}); final total loss {final['total']:.4f}, "
        f"probe entropy {final['eval_entropy']:.4f}; checkpoint {checkpoint_path}"
    )
    return EXIT_OK


_PREDICT_DEFAULTS = {
    "batch_size": 8,
    "device": "cpu",
    "save_probs": False,
    "overlay": False,
}


def _overlay_panel(pre: np.ndarray, post: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Side-by-side pre, post, and post with detected change tinted red."""
    tint = post.copy()
    m = mask.astype(bool)
    tint[m] = 0.5 * tint[m] + 0.5 * np.array([1.0, 0.0, 0.0], dtype=np.float32)
    gap = np.ones((pre.shape[0], 2, 3), dtype=np.float32)
    return np.concatenate([pre, gap, post, gap, tint], axis=1)


def _cmd_predict(args) -> int:
    settings = _merge_settings(args, _PREDICT_DEFAULTS)
    manifest = load_manifest(args.manifest)
    ids, arr = _manifest_pairs(manifest)
    detector = load_detector(args.checkpoint)
    detector.batch_size = int(settings["batch_size"])
    detector.device = settings["device"]
    out_dir = Path(args.out_dir)
    _snapshot(out_dir, "predict", settings)

    probs = detector.predict_proba(arr)
    for i, pair_id in enumerate(ids):
        mask = (probs[i] >= 0.5).astype(np.uint8)
        write_binary_map(out_dir / f"{pair_id}.png", mask)
        if settings["save_probs"]:
            write_probability_map(out_dir / f"{pair_id}.davg", probs[i])
        if settings["overlay"]:
            save_tile(out_dir / f"{pair_id}_panel.png", _overlay_panel(arr[i, 0], arr[i, 1], mask))
    print(f"wrote {len(ids)} change maps under {out_dir}")
    return EXIT_OK


_EVAL_DEFAULTS = {
    "scope": "positive",
    "strict": True,
    "out": None,
}


def _cmd_evaluate(args) -> int:
    settings = _merge_settings(args, _EVAL_DEFAULTS)
    if getattr(args, "no_strict", False):
        settings["strict"] = False
    manifest = load_manifest(args.manifest)
    report = evaluate_run(
        args.pred_dir, manifest, strict=bool(settings["strict"]), scope=settings["scope"]
    )
    pooled = report["pooled"]
    print(
        f"pooled over {report['n_pairs']} pairs: "
        f"precision {pooled['precision']:.4f}, recall {pooled['recall']:.4f}, "
        f"f1 {pooled['f1']:.4f}, iou {pooled['iou']:.4f}"
        + (f" ({len(report['missing'])} missing)" if report["missing"] else "")
    )
    if settings["out"]:
        out_path = Path(settings["out"])
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="davi",
        description="Building-damage change detection with source training and "
        "segmenter-guided test-time adaptation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="JSON file of settings; flags override it")

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--tile-size", type=int)
    p.add_argument("--role", choices=["source", "target"])
    p.add_argument("--style", help="style preset name or JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--damage-fraction", type=float)
    p.add_argument("--partial-fraction", type=float)
    p.add_argument("--building-size-min", type=int)
    p.add_argument("--building-size-max", type=int)
    add_config(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-source", help="train the source change detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--arch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--scheduler-step", type=int)
    p.add_argument("--scheduler-gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--device")
    add_config(p)
    p.set_defaults(func=_cmd_train_source)

    def add_segmenter_flags(p):
        p.add_argument("--segmenter", choices=["oracle", "external"])
        p.add_argument("--oracle-index", help="oracle config (default: oracle.json beside the manifest)")
        p.add_argument("--endpoint", help="HTTP endpoint for --segmenter external")
        p.add_argument("--cache-dir", help="cache segmenter responses under this directory")
        p.add_argument("--prompt")

    p = sub.add_parser("pseudo-labels", help="build and freeze pseudo labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    add_segmenter_flags(p)
    p.add_argument("--tau-v", type=float, help="fixed diff threshold (default: searched)")
    p.add_argument("--continue-on-error", action="store_true", default=None)
    add_config(p)
    p.set_defaults(func=_cmd_pseudo_labels)

    p = sub.add_parser("adapt", help="adapt a source checkpoint to target pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="source model checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--labels", help="prebuilt label store directory")
    add_segmenter_flags(p)
    p.add_argument("--tau-v", type=float)
    p.add_argument("--tau-r", type=float, dest="tau_r")
    p.add_argument("--lambda", type=float, dest="lambda_entropy", help="entropy loss weight")
    p.add_argument("--ablation", choices=sorted(ABLATION_PRESETS))
    p.add_argument("--n-views", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--scheduler-step", type=int)
    p.add_argument("--scheduler-gamma", type=float)
    p.add_argument("--continue-on-error", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--device")
    add_config(p)
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("predict", help="write binary change maps for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--device")
    p.add_argument("--save-probs", action="store_true", default=None)
    p.add_argument("--overlay", action="store_true", default=None,
                   help="also write pre/post/detection panels")
    add_config(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--scope", choices=["positive", "macro"])
    p.add_argument("--no-strict", action="store_true",
                   help="skip and report missing predictions instead of failing")
    p.add_argument("--out", help="write the full JSON report here")
    add_config(p)
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage; 2 on bad flags
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SegmenterBackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (MissingArtifactError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ValidationError, AdaptationDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
