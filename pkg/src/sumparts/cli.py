"""Experiment runner: ``certify``, ``train``, ``eval``, and ``label``.

Every command reads a strict JSON config (unknown keys rejected), takes
``--out`` for the artifact directory, and lets flags override scalar
config fields.  Artifacts are written atomically with sorted keys and
fixed float formatting, so a rerun of the same config is byte-identical.
Exit code 0 means every internal tolerance gate passed; diagnostics go to
stderr.  The certificate solves respect ``SOP_THREADS`` as a cap on
worker threads for the per-dimension runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import certificates, faithfulness, structures
from .model import (
    GroupGenParams,
    GroupSelectParams,
    Segmentation,
    identity_backbone,
    sop_forward,
)
from .ops import softmax
from .serialize import write_csv_atomic, write_json_atomic
from .training import TrainConfig, train, training_accuracy

MONOMIAL_SLOPE = 0.664
BINOMIAL_SLOPE = 0.198
SLOPE_TOLERANCE = 0.05
ANCHOR_TOLERANCE = 1e-6

_METRIC_BLOCK = {
    "type": "object",
    "required": ["mean", "per_case"],
    "properties": {
        "mean": {"type": "number"},
        "per_case": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

# published schema for the eval report (results.json)
REPORT_SCHEMA = {
    "type": "object",
    "required": ["metadata"],
    "properties": {
        "metadata": {
            "type": "object",
            "required": ["checkpoint", "dataset", "classes", "step", "probability"],
        },
        "accuracy": {"type": "number"},
        "insertion": _METRIC_BLOCK,
        "deletion": _METRIC_BLOCK,
        "grouped_insertion": _METRIC_BLOCK,
        "grouped_deletion": _METRIC_BLOCK,
        "sparsity": _METRIC_BLOCK,
        "comprehensiveness": _METRIC_BLOCK,
        "sufficiency": _METRIC_BLOCK,
    },
    "additionalProperties": False,
}

_CONFIG_KEYS = {
    "certify": {"seed", "family", "d_min", "d_max", "dimensions", "kind"},
    "train": {"seed", "dataset", "steps", "learning_rate", "heads", "segments"},
    "eval": {"seed", "checkpoint", "dataset", "metrics", "step", "classes"},
    "label": {"seed", "map", "map_format", "segmentation", "checkpoint",
              "cluster_sigma"},
}
_SEED_REQUIRED = {"train", "eval"}


class ConfigError(ValueError):
    pass


def _load_config(command: str, path: str, overrides: dict) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(config) - _CONFIG_KEYS[command]
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    if command in _SEED_REQUIRED and "seed" not in config:
        raise ConfigError(f"{command} requires a seed")
    return config


def _worker_cap() -> int:
    raw = os.environ.get("SOP_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SOP_THREADS must be an integer, got {raw!r}") from exc
    return max(1, cap)


def _solve_per_dimension(solver, dimensions):
    with ThreadPoolExecutor(max_workers=min(_worker_cap(), len(dimensions))) as pool:
        values = list(pool.map(solver, dimensions))
    return list(zip(dimensions, values))


def cmd_certify(config: dict, out_dir: Path) -> int:
    family = config.get("family")
    gates: dict[str, bool] = {}
    result: dict = {"family": family}

    if family == "monomial":
        d_min = int(config.get("d_min", 2))
        d_max = int(config.get("d_max", 14))
        dims = list(range(d_min, d_max + 1))
        points = _solve_per_dimension(certificates.min_deletion_error_monomial, dims)
        fit = certificates.fit_exponential(points, with_offset=False)
        result["points"] = [[d, v] for d, v in points]
        result["fit"] = {
            "slope": fit.slope, "intercept": fit.intercept,
            "offset": fit.offset, "relative_abs_error": fit.relative_abs_error,
        }
        # the published slope tolerance is calibrated on the d=2..14 window;
        # narrower runs report the fit without gating on it
        if d_min <= 2 and d_max >= 14:
            gates["slope_within_tolerance"] = (
                abs(fit.slope - MONOMIAL_SLOPE) <= SLOPE_TOLERANCE
            )
        anchors = dict(points)
        if 2 in anchors:
            gates["anchor_d2"] = abs(anchors[2] - 1.0) <= ANCHOR_TOLERANCE
        if 3 in anchors:
            gates["anchor_d3"] = abs(anchors[3] - 2.0) <= ANCHOR_TOLERANCE
        write_csv_atomic(
            out_dir / "curves.csv", ["d", "value", "fitted"],
            [(d, v, float(fit.predict(d))) for d, v in points],
        )
    elif family == "binomial":
        dims = [int(d) for d in config.get("dimensions", [3, 6, 9, 12, 15])]
        points = _solve_per_dimension(certificates.min_insertion_error_binomial, dims)
        fit = certificates.fit_exponential(points, with_offset=True)
        result["points"] = [[d, v] for d, v in points]
        result["fit"] = {
            "slope": fit.slope, "intercept": fit.intercept,
            "offset": fit.offset, "relative_abs_error": fit.relative_abs_error,
        }
        if {3, 6, 9, 12, 15} <= set(dims):
            gates["slope_within_tolerance"] = (
                abs(fit.slope - BINOMIAL_SLOPE) <= SLOPE_TOLERANCE
            )
        write_csv_atomic(
            out_dir / "curves.csv", ["d", "value", "fitted"],
            [(d, v, float(fit.predict(d))) for d, v in points],
        )
    elif family == "lemma":
        dims = [int(d) for d in config.get("dimensions", range(1, 17))]
        points = [(d, certificates.verify_lemma_monomial_insertion(d)) for d in dims]
        result["points"] = [[d, v] for d, v in points]
        gates["total_is_one"] = all(v == 1.0 for _, v in points)
        write_csv_atomic(
            out_dir / "curves.csv", ["d", "value", "fitted"],
            [(d, v, 1.0) for d, v in points],
        )
    elif family == "corollary":
        kind = config.get("kind", "binomial")
        dims = [int(d) for d in config.get("dimensions", [6])]
        rows = []
        for d in dims:
            spec = (certificates.PolynomialSpec.monomial(d) if kind == "monomial"
                    else certificates.PolynomialSpec.binomial(d))
            max_del, max_ins = certificates.verify_corollary_grouped(spec)
            rows.append((d, max_del, max_ins))
        result["kind"] = kind
        result["points"] = [[d, md, mi] for d, md, mi in rows]
        gates["grouped_errors_zero"] = all(
            md == 0.0 and mi == 0.0 for _, md, mi in rows
        )
        write_csv_atomic(
            out_dir / "curves.csv", ["d", "max_deletion", "max_insertion"],
            rows,
        )
    else:
        raise ConfigError(
            "certify family must be one of monomial/binomial/lemma/corollary"
        )

    result["gates"] = gates
    write_json_atomic(out_dir / "results.json", result)
    return 0 if all(gates.values()) else 1


def _load_dataset(path):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"malformed dataset {path}: {exc}") from exc
    if data.shape[1] < 2:
        raise ConfigError("dataset rows need at least one feature and a label")
    features = data[:, :-1]
    labels = data[:, -1]
    if np.any(labels != labels.astype(np.int64)):
        bad = int(np.nonzero(labels != labels.astype(np.int64))[0][0]) + 1
        raise ConfigError(f"dataset line {bad}: label is not an integer")
    return features, labels.astype(np.int64)


def _class_mean_backbone(features, labels):
    """Identity-embedding backbone whose classifier rows are the per-class
    feature means (a linear stand-in for a pretrained classifier)."""
    n_classes = int(labels.max()) + 1
    classifier = np.vstack(
        [features[labels == k].mean(axis=0) for k in range(n_classes)]
    )
    return identity_backbone(classifier)


def _checkpoint_dict(seg, gen, sel, backbone, config):
    return {
        "d": seg.n_features,
        "h": backbone.h,
        "heads": gen.heads,
        "n_segments": seg.n_segments,
        "n_classes": sel.n_classes,
        "seed": config["seed"],
        "segment_assignment": seg.assignment.tolist(),
        "w_q": [w.ravel().tolist() for w in gen.w_q],
        "w_k": [w.ravel().tolist() for w in gen.w_k],
        "sel_w_q": sel.w_q.ravel().tolist(),
        "sel_w_k": sel.w_k.ravel().tolist(),
        "classifier": sel.classifier.ravel().tolist(),
        "backbone": {
            "kind": "identity",
            "classifier": backbone.classifier.ravel().tolist(),
        },
    }


def _restore_checkpoint(path):
    try:
        with open(path) as fh:
            ckpt = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    d = ckpt["d"]
    h = ckpt["h"]
    m = ckpt["n_segments"]
    k = ckpt["n_classes"]
    seg = Segmentation(
        assignment=np.array(ckpt["segment_assignment"], dtype=np.int64),
        n_segments=m,
    )
    gen = GroupGenParams(
        w_q=np.array(ckpt["w_q"], dtype=np.float64).reshape(ckpt["heads"], m, m),
        w_k=np.array(ckpt["w_k"], dtype=np.float64).reshape(ckpt["heads"], m, m),
    )
    sel = GroupSelectParams(
        w_q=np.array(ckpt["sel_w_q"], dtype=np.float64).reshape(h, h),
        w_k=np.array(ckpt["sel_w_k"], dtype=np.float64).reshape(h, h),
        classifier=np.array(ckpt["classifier"], dtype=np.float64).reshape(k, h),
    )
    if ckpt["backbone"]["kind"] != "identity":
        raise ConfigError(f"unsupported backbone kind {ckpt['backbone']['kind']!r}")
    backbone = identity_backbone(
        np.array(ckpt["backbone"]["classifier"], dtype=np.float64).reshape(k, d)
    )
    return seg, gen, sel, backbone


def cmd_train(config: dict, out_dir: Path) -> int:
    features, labels = _load_dataset(config["dataset"])
    seg = Segmentation.contiguous(features.shape[1], int(config.get("segments", 2)))
    backbone = _class_mean_backbone(features, labels)
    train_config = TrainConfig(
        steps=int(config.get("steps", 200)),
        learning_rate=float(config.get("learning_rate", 0.1)),
        seed=int(config["seed"]),
        heads=int(config.get("heads", 2)),
    )
    result = train(features, labels, seg, backbone, train_config)
    accuracy = training_accuracy(
        features, labels, seg, result.gen_params, result.sel_params, backbone
    )
    write_json_atomic(
        out_dir / "checkpoint.json",
        _checkpoint_dict(seg, result.gen_params, result.sel_params, backbone, config),
    )
    write_csv_atomic(
        out_dir / "loss_history.csv", ["step", "loss"],
        list(enumerate(result.loss_history)),
    )
    write_json_atomic(
        out_dir / "results.json",
        {"training_accuracy": accuracy, "steps": train_config.steps,
         "final_loss": result.loss_history[-1] if result.loss_history else None},
    )
    return 0


def cmd_eval(config: dict, out_dir: Path) -> int:
    seg, gen, sel, backbone = _restore_checkpoint(config["checkpoint"])
    features, labels = _load_dataset(config["dataset"])
    if features.shape[1] != seg.n_features:
        raise ConfigError(
            f"dataset has {features.shape[1]} features, checkpoint expects {seg.n_features}"
        )
    metrics = config.get(
        "metrics",
        ["accuracy", "insertion", "deletion", "grouped_insertion",
         "grouped_deletion", "sparsity"],
    )
    step = int(config.get("step", 1))
    classes = [int(c) for c in config.get("classes", [0])]

    def class_probability(k):
        def prob(x):
            return float(softmax(sop_forward(x, seg, gen, sel, backbone).prediction)[k])
        return prob

    report: dict = {"metadata": {
        "checkpoint": str(config["checkpoint"]),
        "dataset": str(config["dataset"]),
        "classes": classes,
        "step": step,
        "probability": "raw class probability (softmax of the prediction)",
    }}
    curve_rows = []
    aggregates: dict[str, list[float]] = {m: [] for m in metrics if m != "accuracy"}

    if "accuracy" in metrics:
        report["accuracy"] = training_accuracy(features, labels, seg, gen, sel, backbone)

    for index, x in enumerate(features):
        attribution = sop_forward(x, seg, gen, sel, backbone)
        for k in classes:
            prob = class_probability(k)
            alpha = faithfulness.flatten_grouped(
                attribution.groups, attribution.scores[:, k]
            )
            ranking = faithfulness.ranking_from_attribution(alpha)
            per_curve = {}
            if "insertion" in metrics:
                per_curve["insertion"] = faithfulness.insertion_curve(
                    prob, x, ranking, step
                )
            if "deletion" in metrics:
                per_curve["deletion"] = faithfulness.deletion_curve(
                    prob, x, ranking, step
                )
            if "grouped_insertion" in metrics:
                per_curve["grouped_insertion"] = faithfulness.grouped_curve(
                    prob, x, attribution.groups, attribution.scores[:, k], "insertion"
                )
            if "grouped_deletion" in metrics:
                per_curve["grouped_deletion"] = faithfulness.grouped_curve(
                    prob, x, attribution.groups, attribution.scores[:, k], "deletion"
                )
            for name, curve in per_curve.items():
                aggregates[name].append(curve.auc)
                curve_rows.extend(
                    (name, index, k, float(f), float(p))
                    for f, p in zip(curve.fractions, curve.probabilities)
                )
            if "sparsity" in metrics:
                aggregates["sparsity"].append(
                    faithfulness.sparsity(attribution.groups, attribution.scores[:, k])
                )
            if "comprehensiveness" in metrics or "sufficiency" in metrics:
                rationale = (alpha > 0).astype(np.float64)
                full_prob = lambda v: softmax(  # noqa: E731
                    sop_forward(v, seg, gen, sel, backbone).prediction
                )
                if "comprehensiveness" in metrics:
                    aggregates["comprehensiveness"].append(
                        faithfulness.comprehensiveness(full_prob, x, rationale, k)
                    )
                if "sufficiency" in metrics:
                    aggregates["sufficiency"].append(
                        faithfulness.sufficiency(full_prob, x, rationale, k)
                    )

    for name, values in aggregates.items():
        if values:
            report[name] = {"mean": float(np.mean(values)), "per_case": values}

    write_json_atomic(out_dir / "results.json", report)
    write_csv_atomic(
        out_dir / "curves.csv",
        ["metric", "example", "class", "fraction", "probability"],
        curve_rows,
    )
    return 0


def cmd_label(config: dict, out_dir: Path) -> int:
    map_format = config.get("map_format", "csv")
    if map_format == "csv":
        imap = structures.load_map_csv(config["map"])
    elif map_format == "binary":
        imap = structures.load_map_binary(config["map"])
    else:
        raise ConfigError("map_format must be 'csv' or 'binary'")
    seg = structures.load_segmentation_csv(config["segmentation"])
    if seg.n_features != imap.height * imap.width:
        raise ConfigError(
            f"segmentation covers {seg.n_features} pixels, map has "
            f"{imap.height * imap.width}"
        )
    ckpt_seg, gen, sel, backbone = _restore_checkpoint(config["checkpoint"])
    if ckpt_seg.n_features != seg.n_features or ckpt_seg.n_segments != seg.n_segments:
        raise ConfigError(
            "checkpoint was trained for a different map/segmentation shape"
        )
    cluster_sigma = float(config.get("cluster_sigma", 3.0))

    attribution = sop_forward(imap.flat, seg, gen, sel, backbone)
    rows = []
    for g, mask in enumerate(attribution.groups):
        intensity = structures.group_intensity(imap, mask)
        label = structures.label_group(imap, mask, cluster_sigma)
        rows.append(
            (g, intensity, label.kind)
            + tuple(float(s) for s in attribution.scores[g])
        )
    histogram = structures.score_mass_by_label([imap], [attribution], cluster_sigma)

    score_headers = [f"score_class_{k}" for k in range(attribution.n_classes)]
    write_csv_atomic(
        out_dir / "labels.csv",
        ["group", "intensity", "label"] + score_headers,
        rows,
    )
    write_json_atomic(out_dir / "results.json", histogram)
    return 0


_COMMANDS = {
    "certify": cmd_certify,
    "train": cmd_train,
    "eval": cmd_eval,
    "label": cmd_label,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sumparts",
        description="Grouped-attribution experiments: certificates, training, "
                    "faithfulness metrics, and structure labeling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="strict JSON config file")
        cmd.add_argument("--out", required=True, help="artifact output directory")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    args = parser.parse_args(argv)

    try:
        config = _load_config(args.command, args.config, {"seed": args.seed})
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, out_dir)
    except (ConfigError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
