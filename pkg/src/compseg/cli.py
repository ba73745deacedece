"""Operator entry point: synth -> init -> refine -> train -> segment -> eval,
plus the prior-ablation reruns. All randomness flows from --seed / config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, priors, synth, training
from .config import config_hash, dump_config, load_config
from .evaluate import evaluate, render_table, write_report_csv
from .models import load_models, save_models
from .segmentation import label_grid_to_pgm_values, write_pgm
from .tensors import load_feature_map, save_feature_map
from .training import TrainConfig

log = logging.getLogger("compseg")


def _cfg(args) -> dict:
    cfg = load_config(args.config)
    threads = getattr(args, "threads", None)
    if threads is not None:
        if threads < 1:
            raise SystemExit("--threads must be >= 1")
        cfg["threads"] = threads
    return cfg


def _world_from_config(cfg: dict, seed: int) -> synth.World:
    w = cfg["world"]
    spec = synth.WorldSpec(
        seed=seed,
        d=cfg["D"],
        c=w["c"],
        m_true=w["m_true"],
        lattice=tuple(cfg["lattice"]),
        parts_per_class=w["parts_per_class"],
        q_true=w["q_true"],
        occluder_kernel_count=w["occluder_kernels"],
        sigma_gen=w["sigma_gen"],
        context_like_cos=w["context_like_cos"],
        shift_range=w["shift_range"],
    )
    return synth.generate_world(spec)


def cmd_synth(args) -> int:
    cfg = _cfg(args)
    seed = cfg["seed"] if args.seed is None else args.seed
    chash = config_hash(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "resolved_config.json")

    world = _world_from_config(cfg, seed)
    training_set = synth.make_training_set(world, cfg["train_per_pose"], seed=seed + 1)
    train_records = [rec for y in sorted(training_set) for rec in training_set[y]]
    synth.write_dataset(train_records, out / "train", config_hash=chash)

    bench = synth.make_benchmark(world, cfg["benchmark_per_level"], seed=seed + 2)
    synth.write_dataset(bench, out / "bench", config_hash=chash)

    bg_dir = out / "background"
    bg_dir.mkdir(exist_ok=True)
    for i, fmap in enumerate(synth.render_background(world, cfg["background_maps"], seed=seed + 3)):
        save_feature_map(fmap, bg_dir / f"bg_{i:03d}.fmap")
    print(f"synth: wrote train ({len(train_records)}), bench ({len(bench)}) to {out}")
    return 0


def _load_training(data_dir) -> dict[int, list]:
    records, manifest = pipeline.load_dataset(Path(data_dir) / "train")
    by_class: dict[int, list] = {}
    for rec in records:
        by_class.setdefault(rec.y, []).append(rec)
    return by_class


def _load_backgrounds(data_dir) -> list:
    bg_dir = Path(data_dir) / "background"
    return [load_feature_map(p) for p in sorted(bg_dir.glob("*.fmap"))]


def _check_hash(expected: str, found: str, what: str, force: bool) -> None:
    if expected and found and expected != found and not force:
        raise SystemExit(
            f"config hash mismatch on {what}: run has {expected}, artifact has "
            f"{found} (use --force to override)"
        )


def cmd_init(args) -> int:
    cfg = _cfg(args)
    chash = config_hash(cfg)
    training_set = _load_training(args.data)
    h, w = cfg["lattice"]
    sample = next(iter(training_set.values()))[0].fmap
    if (sample.height, sample.width) != (h, w):
        raise SystemExit(
            f"lattice mismatch: config {h}x{w}, data {sample.height}x{sample.width}"
        )
    models, outliers, _state = pipeline.init_models(
        training_set,
        _load_backgrounds(args.data),
        k=cfg["K"],
        m=cfg["M"],
        sigma=cfg["sigma"],
        epsilon=cfg["epsilon"],
        q=cfg["Q"],
        n_outliers=cfg["n_outliers"],
        seed=cfg["seed"],
        dict_samples=cfg["dict_samples"],
    )
    save_models(args.out, models, outliers, config_hash=chash)
    print(f"init: {len(models)} class models -> {args.out}")
    return 0


def cmd_refine(args) -> int:
    cfg = _cfg(args)
    chash = config_hash(cfg)
    models, outliers, meta = load_models(args.model)
    _check_hash(chash, meta["config_hash"], args.model, args.force)
    training_set = _load_training(args.data)
    maps_by_class = {y: [rec.fmap for rec in recs] for y, recs in training_set.items()}
    rc = cfg["refine"]
    models, history = priors.refine_priors_em(
        maps_by_class,
        models,
        max_iters=rc["max_iters"],
        tol=rc["tol"],
        eps=0.0 if args.eps0 else None,
        refit_coeffs=rc["refit_coeffs"] and not args.no_refit_coeffs,
    )
    save_models(args.out, models, outliers, config_hash=chash)
    if args.history:
        priors.write_history_csv(history, args.history)
    last = history[-1]
    print(
        f"refine: {len(history)} iterations, objective {last.objective:.2f} -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _cfg(args)
    chash = config_hash(cfg)
    models, outliers, meta = load_models(args.model)
    _check_hash(chash, meta["config_hash"], args.model, args.force)
    training_set = _load_training(args.data)
    dataset = [rec for y in sorted(training_set) for rec in training_set[y]]
    tc = cfg["train"]
    tcfg = TrainConfig(
        gamma1=tc["gamma1"],
        gamma2=tc["gamma2"],
        delta=tc["delta"],
        lr=tc["lr"],
        momentum=tc["momentum"],
        epochs=tc["epochs"] if args.epochs is None else args.epochs,
        seed=cfg["seed"],
        train_mu=tc["train_mu"] and not args.freeze_mu,
    )
    models, outliers, history = training.train(dataset, models, outliers, tcfg)
    save_models(args.out, models, outliers, config_hash=chash, epoch=history[-1].epoch)
    if args.loss_csv:
        training.write_loss_csv(history, args.loss_csv)
    print(
        "train: "
        + ", ".join(f"epoch {h.epoch} total {h.total:.3f}" for h in history)
    )
    return 0


def cmd_segment(args) -> int:
    cfg = _cfg(args)
    chash = config_hash(cfg)
    models, outliers, meta = load_models(args.model)
    _check_hash(chash, meta["config_hash"], args.model, args.force)
    if outliers is None:
        raise SystemExit("model file lacks outlier models; rerun init")
    records, manifest = pipeline.load_dataset(args.data)
    _check_hash(chash, manifest.get("config_hash", ""), args.data, args.force)

    if args.no_prior:
        models = pipeline.with_constant_prior(models, args.omega)
    elif args.gt_prior:
        if not args.train_data:
            raise SystemExit("--gt-prior needs --train-data with GT labels")
        models = pipeline.with_gt_priors(models, _load_training(args.train_data))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pred_manifest = {"config_hash": chash, "supervision": args.supervision, "records": []}
    for idx, rec in enumerate(records):
        box = rec.modal_box if args.supervision == "modal" else rec.amodal_box
        result = pipeline.segment_record(
            rec.fmap, box, models, outliers, supervision=args.supervision
        )
        pgm = out / f"mask_{idx:05d}.pgm"
        write_pgm(label_grid_to_pgm_values(result.prediction), pgm)
        side = out / f"mask_{idx:05d}.json"
        with open(side, "w") as fh:
            json.dump(result.sidecar(), fh, sort_keys=True, indent=1)
        pred_manifest["records"].append(
            {"id": idx, "pgm": pgm.name, "sidecar": side.name}
        )
    with open(out / "predictions.json", "w") as fh:
        json.dump(pred_manifest, fh, sort_keys=True, indent=1)
    print(f"segment: {len(records)} proposals -> {out}")
    return 0


def _predictions_to_grids(pred_dir) -> tuple[dict, str]:
    from .segmentation import read_pgm
    from .tensors import LabelGrid

    pred_dir = Path(pred_dir)
    with open(pred_dir / "predictions.json") as fh:
        pred_manifest = json.load(fh)
    out = {}
    for row in pred_manifest["records"]:
        values = read_pgm(pred_dir / row["pgm"])
        labels = np.zeros(values.shape, dtype=np.int8)
        labels[values == 255] = 1
        labels[values == 128] = -1
        out[int(row["id"])] = LabelGrid(labels)
    return out, pred_manifest.get("config_hash", "")


def cmd_eval(args) -> int:
    records, manifest = pipeline.load_dataset(args.data)
    predictions, pred_hash = _predictions_to_grids(args.pred)
    _check_hash(manifest.get("config_hash", ""), pred_hash, args.pred, args.force)
    report = evaluate(predictions, records)
    print(render_table(report))
    if args.out:
        write_report_csv(report, args.out)
    if report.missing:
        return 2
    return 0


def cmd_ablate(args) -> int:
    """Rerun segment in learned / constant-omega / gt-prior modes and compare."""
    base = Path(args.out)
    results = {}
    for mode, extra in (
        ("learned", []),
        ("no_prior", ["--no-prior", "--omega", str(args.omega)]),
        ("gt_prior", ["--gt-prior", "--train-data", args.train_data or args.data]),
    ):
        out = base / mode
        argv = [
            "segment",
            "--config",
            args.config or "",
            "--model",
            args.model,
            "--data",
            args.data,
            "--out",
            str(out),
            "--supervision",
            args.supervision,
        ] + extra
        argv = [a for a in argv if a != ""]
        if args.force:
            argv.append("--force")
        rc = main(argv)
        if rc != 0:
            return rc
        records, _ = pipeline.load_dataset(args.data)
        predictions, _h = _predictions_to_grids(out)
        report = evaluate(predictions, records)
        results[mode] = report.grand_mean("amodal")
        print(render_table(report, title=f"[{mode}] amodal segmentation"))
    print(
        "ablation amodal meanIoU: "
        + "  ".join(f"{k}={v * 100:.1f}" for k, v in results.items())
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compseg",
        description="compositional weakly-supervised modal/amodal segmentation",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False, data=True):
        p.add_argument("--config", default=None, help="JSON config (defaults if omitted)")
        p.add_argument("--force", action="store_true", help="ignore config-hash mismatches")
        p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if model:
            p.add_argument("--model", required=True, help="MODEL json path")

    p = sub.add_parser("synth", help="generate world, training set and benchmark")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("init", help="dictionaries, context, coefficients, priors")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("refine", help="EM refinement of the spatial priors")
    common(p, model=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="iteration CSV path")
    p.add_argument("--no-refit-coeffs", action="store_true")
    p.add_argument("--eps0", action="store_true", help="disable prior clamping (test mode)")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("train", help="SGD over the compositional head")
    common(p, model=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--freeze-mu", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("segment", help="per-proposal amodal segmentation")
    common(p, model=True)
    p.add_argument("--out", required=True)
    p.add_argument("--supervision", choices=("modal", "amodal"), default="modal")
    p.add_argument("--no-prior", action="store_true", help="constant-omega ablation")
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--gt-prior", action="store_true")
    p.add_argument("--train-data", default=None, help="training dir for --gt-prior")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("eval", help="meanIoU report bucketed by occlusion level")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="compare learned / no-prior / gt-prior modes")
    common(p, model=True)
    p.add_argument("--out", required=True)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--supervision", choices=("modal", "amodal"), default="amodal")
    p.add_argument("--train-data", default=None)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
