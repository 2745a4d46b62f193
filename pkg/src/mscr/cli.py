"""Command-line entry point.

Subcommands: synth (generate the benchmark dataset), train, eval,
gradcheck (finite-difference self-verification). Every run writes one
manifest.json next to its outputs; exit code is 0 iff no contract fired.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .autodiff import (
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    grad_check,
    set_conv_backward_fault,
)
from .checkpoint import FormatError, checkpoint_sha256, load_checkpoint
from .config import ScoreConfig, resolve_config
from .dataio import DataFormatError, load_dataset, write_dataset
from .model import init_params, model_forward, param_count, tiny_config
from .scoring import metrics_from_outcomes, score_records
from .sigproc import make_global_mask, make_local_mask
from .synth import make_dataset
from .training import train, uncertainty_loss, total_loss, trend_loss

GRADCHECK_PARAM_CEILING = 50_000


def _write_manifest(out_dir: str, payload: dict) -> None:
    payload = dict(payload)
    payload["wall_time_s"] = round(time.monotonic() - payload.pop("_t0"), 3)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed_overrides(args) -> dict:
    if args.seed is None:
        return {}
    return {f"{sec}.seed": str(args.seed) for sec in ("synth", "train", "model", "score")}


def _resolve(args, extra: dict | None = None) -> dict:
    overrides = _seed_overrides(args)
    if extra:
        overrides.update(extra)
    return resolve_config(preset=args.preset, config_path=args.config, overrides=overrides)


def _parse_ratios(raw: str | None) -> list | None:
    if raw is None:
        return None
    try:
        ratios = [float(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ContractError(f"--mask-ratio expects floats, got {raw!r}") from exc
    if not ratios:
        raise ContractError("--mask-ratio given but empty")
    return ratios


def cmd_synth(args) -> int:
    t0 = time.monotonic()
    configs = _resolve(args)
    ds_cfg = configs["synth"]
    train_recs, test_recs = make_dataset(ds_cfg)
    os.makedirs(args.out, exist_ok=True)
    train_paths = write_dataset(train_recs, os.path.join(args.out, "train"))
    test_paths = write_dataset(test_recs, os.path.join(args.out, "test"))
    print(f"wrote {len(train_paths)} train and {len(test_paths)} test records to {args.out}")
    _write_manifest(
        args.out,
        {
            "_t0": t0,
            "command": "synth",
            "argv": sys.argv[1:],
            "seed": ds_cfg.seed,
            "config": configs["flat"],
            "outputs": {"train_records": len(train_paths), "test_records": len(test_paths)},
        },
    )
    return 0


def _train_once(records, configs, out_dir: str, t0: float) -> str:
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.mscr")
    _params, report = train(
        records,
        configs["train"],
        configs["model"],
        configs["pipe"],
        checkpoint_path=ckpt_path,
        log_fn=print,
    )
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "epoch_global": report.epoch_global,
                "epoch_local": report.epoch_local,
                "epoch_trend": report.epoch_trend,
                "epoch_total": report.epoch_total,
                "skipped_records": report.skipped_records,
                "wall_time_s": report.wall_time_s,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    _write_manifest(
        out_dir,
        {
            "_t0": t0,
            "command": "train",
            "argv": sys.argv[1:],
            "seed": configs["train"].seed,
            "config": configs["flat"],
            "outputs": {"checkpoint": ckpt_path},
            "checkpoint_sha256": checkpoint_sha256(ckpt_path),
        },
    )
    return ckpt_path


def cmd_train(args) -> int:
    records = load_dataset(os.path.join(args.data, "train"))
    ratios = _parse_ratios(args.mask_ratio)
    if ratios is None:
        configs = _resolve(args)
        _train_once(records, configs, args.out, time.monotonic())
        return 0
    for ratio in ratios:
        t0 = time.monotonic()
        configs = _resolve(
            args,
            {"train.mask_ratio_g": repr(ratio), "train.mask_ratio_l": repr(ratio)},
        )
        out_dir = args.out if len(ratios) == 1 else os.path.join(args.out, f"ratio_{ratio:g}")
        print(f"== training at mask ratio {ratio:g} ==")
        _train_once(records, configs, out_dir, t0)
    return 0


def _emit_metrics(out_dir: str, reports: list) -> None:
    text_lines = []
    csv_lines = ["level,metric,value"]
    for rep in reports:
        text_lines.append(f"{rep.level} auc {rep.auc:.6f}")
        csv_lines.append(f"{rep.level},auc,{rep.auc:.6f}")
        if rep.f1 is not None:
            text_lines.append(f"{rep.level} f1 {rep.f1:.6f} at threshold {rep.threshold:.6f}")
            csv_lines.append(f"{rep.level},f1,{rep.f1:.6f}")
            csv_lines.append(f"{rep.level},f1_threshold,{rep.threshold:.6f}")
    body = "\n".join(text_lines) + "\n"
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(body)
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    print(body, end="")


def _emit_maps(out_dir: str, outcomes) -> None:
    maps_dir = os.path.join(out_dir, "maps")
    os.makedirs(maps_dir, exist_ok=True)
    for i, (_windows, pmap, pr) in enumerate(outcomes):
        lines = ["index,score" + (",label" if pr.point_labels is not None else "")]
        for k, v in enumerate(pmap):
            row = f"{k},{float(v)!r}"
            if pr.point_labels is not None:
                row += f",{int(pr.point_labels[k])}"
            lines.append(row)
        with open(os.path.join(maps_dir, f"rec_{i:04d}.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    records = load_dataset(os.path.join(args.data, "test"))
    params, ck_configs = load_checkpoint(args.checkpoint)
    ratios = _parse_ratios(args.mask_ratio)
    base = time.monotonic()
    configs = _resolve(args)
    model_cfg, pipe_cfg = ck_configs["model"], ck_configs["pipe"]

    os.makedirs(args.out, exist_ok=True)
    all_reports = []
    ratio_list = ratios if ratios is not None else [None]
    for ratio in ratio_list:
        score_cfg: ScoreConfig = configs["score"]
        if ratio is not None:
            score_cfg = ScoreConfig(
                draws=score_cfg.draws,
                mask_ratio_g=ratio,
                mask_ratio_l=ratio,
                k_regions=score_cfg.k_regions,
                normalize_by_beats=score_cfg.normalize_by_beats,
                window=score_cfg.window,
                stride=score_cfg.stride,
                seed=score_cfg.seed,
            )
        outcomes = score_records(records, params, model_cfg, pipe_cfg, score_cfg)
        report = metrics_from_outcomes(outcomes, model_cfg, args.level)
        all_reports.append(report)
        sub = args.out if ratio is None else os.path.join(args.out, f"ratio_{ratio:g}")
        os.makedirs(sub, exist_ok=True)
        _emit_metrics(sub, [report])
        if args.level in ("heartbeat", "signal_point"):
            _emit_maps(sub, outcomes)
    _write_manifest(
        args.out,
        {
            "_t0": base,
            "command": "eval",
            "argv": sys.argv[1:],
            "seed": configs["score"].seed,
            "config": configs["flat"],
            "inputs": {"checkpoint": args.checkpoint, "data": args.data},
            "checkpoint_sha256": checkpoint_sha256(args.checkpoint),
            "outputs": {
                "levels": [r.level for r in all_reports],
                "auc": [r.auc for r in all_reports],
            },
        },
    )
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.monotonic()
    configs = _resolve(args)
    model_cfg = configs["model"] if args.config is not None else tiny_config(
        seed=args.seed if args.seed is not None else 0
    )
    params = init_params(model_cfg)
    n_params = param_count(params)
    if n_params > GRADCHECK_PARAM_CEILING:
        raise ContractError(
            f"model has {n_params} parameters; gradcheck is capped at "
            f"{GRADCHECK_PARAM_CEILING} (finite differences would be too slow)"
        )

    # Fresh init sets conv biases to zero, so conv windows that see only
    # masked-out (zeroed) samples produce pre-activations exactly at the
    # leaky_relu kink, where central differences measure a blended slope.
    # Jitter biases off zero so the check runs at a differentiable point.
    rng_b = np.random.default_rng(model_cfg.seed + 1)
    for name, tensor in params.items():
        if name.endswith(".b"):
            sign = np.where(rng_b.random(tensor.data.shape) < 0.5, -1.0, 1.0)
            tensor.data = tensor.data + sign * rng_b.uniform(0.05, 0.25, tensor.data.shape)

    rng = np.random.default_rng(model_cfg.seed)
    x_g = rng.standard_normal(model_cfg.D)
    x_l = rng.standard_normal(model_cfg.d)
    x_t = rng.standard_normal(model_cfg.D)
    train_cfg = configs["train"]
    mask_g = make_global_mask(model_cfg.D, train_cfg.mask_ratio_g, train_cfg.k_regions, rng)
    mask_l = make_local_mask(model_cfg.d, train_cfg.mask_ratio_l, rng)

    def loss_fn(_unused: Tensor) -> Tensor:
        out = model_forward(x_g, x_l, mask_g, mask_l, x_t, params, model_cfg)
        lg = uncertainty_loss(Tensor(x_g), out.x_hat_g, out.sigma_g)
        ll = uncertainty_loss(Tensor(x_l), out.x_hat_l, out.sigma_l)
        lt = trend_loss(Tensor(x_g), out.x_hat_t)
        return total_loss(lg, ll, lt, train_cfg.alpha, train_cfg.beta)

    if args.inject_backward_fault:
        set_conv_backward_fault(True)
    try:
        group_err: dict[str, float] = {}
        for name, tensor in params.items():
            err = grad_check(loss_fn, tensor, eps=args.eps)
            group = name.split(".")[0]
            group_err[group] = max(group_err.get(group, 0.0), err)
    finally:
        set_conv_backward_fault(False)

    worst = max(group_err.values())
    for group in sorted(group_err):
        print(f"{group:12s} max_rel_error {group_err[group]:.3e}")
    ok = worst <= 1e-4
    print(f"overall      max_rel_error {worst:.3e} [{'PASS' if ok else 'FAIL'}]")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(
            args.out,
            {
                "_t0": t0,
                "command": "gradcheck",
                "argv": sys.argv[1:],
                "seed": model_cfg.seed,
                "config": configs["flat"],
                "outputs": {"max_rel_error": worst, "per_group": group_err, "pass": ok},
            },
        )
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mscr",
        description="Masked multi-scale restoration for ECG anomaly detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override every section seed")
        p.add_argument("--preset", choices=("paper", "desk"), default=None)
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_synth = sub.add_parser("synth", help="generate the synthetic benchmark dataset")
    common(p_synth)
    p_synth.set_defaults(fn=cmd_synth)

    p_train = sub.add_parser("train", help="train on <data>/train and write a checkpoint")
    common(p_train)
    p_train.add_argument("--data", required=True, help="dataset root (needs train/ split)")
    p_train.add_argument("--mask-ratio", default=None, help="ratio or comma list for sweeps")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="score <data>/test against a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="dataset root (needs test/ split)")
    p_eval.add_argument(
        "--level", choices=("patient", "heartbeat", "signal_point"), default="patient"
    )
    p_eval.add_argument("--mask-ratio", default=None, help="inference ratio or comma list")
    p_eval.set_defaults(fn=cmd_eval)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    common(p_gc, needs_out=False)
    p_gc.add_argument("--out", default=None, help="optional manifest directory")
    p_gc.add_argument("--eps", type=float, default=1e-5)
    p_gc.add_argument(
        "--inject-backward-fault",
        action="store_true",
        help="negative control: corrupt one backward rule and expect FAIL",
    )
    p_gc.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ContractError, DimensionError, NumericError, FormatError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
