"""``scdgcn`` command line: generate, train, predict, bench, ablate, export-graph."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from scdgcn import __version__
from scdgcn.bench import VARIANTS, run_ablation, run_benchmark
from scdgcn.config import SECTIONS, PipelineConfig, apply_overrides, load_config, section_fields
from scdgcn.dataset import Dataset, SpleenDescriptor, generate_synthetic, load_manifest, read_image, save_manifest
from scdgcn.errors import DataError, ScdGcnError, StorageError, UsageError
from scdgcn.gcn import build_graph, export_graph, gcn_logits

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 2, 3, 4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _config_flags() -> argparse.ArgumentParser:
    """Shared parent parser: ``--config``, ``--seed``, ``--out`` and one flag per config field."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="INI file (default: $SCDGCN_CONFIG, else built-in defaults)")
    parent.add_argument("--seed", type=int, help="master seed (config: run.seed)")
    parent.add_argument("--out", help="output directory (config: run.output)")
    for section in SECTIONS:
        if section == "run":
            continue
        group = parent.add_argument_group(f"[{section}] overrides")
        for f in section_fields(section):
            group.add_argument(f"--{section}-{f.name.replace('_', '-')}", dest=f"cfg__{section}__{f.name}",
                               metavar="V", help=argparse.SUPPRESS)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scdgcn",
        description="Percoll-image severity pipeline. Every config field has a flag "
                    "--<section>-<field> (e.g. --gcn-epochs 50, --graph-mode corrected).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _config_flags()

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset (manifest + PNGs)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="fit all stages and write a checkpoint")
    p.add_argument("--data", help="manifest CSV (default: synthetic data from [dataset])")
    p.add_argument("--checkpoint", help="checkpoint path (default: <out>/model.pgcn)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="severity of one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", help="file holding the reference graph (default: the checkpoint)")
    p.add_argument("--image", required=True, help="8-bit grayscale PNG or PGM")
    p.add_argument("--spleen", required=True, help="spleen size in cm, 0 after splenectomy, or 'removed'")
    p.add_argument("--sample-id", help="identifier echoed in the output (default: image file stem)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", parents=[common], help="cross-validated method comparison")
    p.add_argument("--data", help="manifest CSV (default: synthetic data from [dataset])")
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated subset of " + ",".join(VARIANTS))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", parents=[common], help="similarity-term ablation on groundtruth lab values")
    p.add_argument("--data", help="manifest CSV (default: synthetic data from [dataset])")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-graph", parents=[common], help="write edges.csv / nodes.csv")
    p.add_argument("--checkpoint", help="export the stored training graph plus feature and logit matrices")
    p.add_argument("--data", help="manifest CSV when building from lab values (no checkpoint)")
    p.add_argument("--h-source", choices=("groundtruth", "randomized"), default="groundtruth")
    p.set_defaults(func=cmd_export_graph)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults < config file < flags."""
    config = load_config(args.config)
    overrides: dict[str, dict[str, str]] = {}
    for key, value in vars(args).items():
        if key.startswith("cfg__") and value is not None:
            _, section, name = key.split("__")
            overrides.setdefault(section, {})[name] = value
    if args.seed is not None:
        overrides.setdefault("run", {})["seed"] = str(args.seed)
    if args.out is not None:
        overrides.setdefault("run", {})["output"] = args.out
    return apply_overrides(config, overrides).validate()


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _dataset(args, config: PipelineConfig) -> Dataset:
    if getattr(args, "data", None):
        return load_manifest(args.data, config.dataset.num_classes)
    return generate_synthetic(config.dataset, config.run.seed)


def _out_dir(config: PipelineConfig) -> Path:
    out = Path(config.run.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def write_run_record(directory: Path, command: str, argv: list[str], config: PipelineConfig,
                     outputs: list[Path], extra: dict | None = None) -> Path:
    record = {"command": command, "argv": argv, "version": __version__,
              "seed": config.run.seed, "config": config.to_dict(),
              "outputs": [str(p) for p in outputs]}
    record.update(extra or {})
    path = directory / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _write_matrix(path: Path, ids: list[str], matrix: np.ndarray, prefix: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + [f"{prefix}{j}" for j in range(matrix.shape[1])])
        for sid, row in zip(ids, matrix):
            w.writerow([sid] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args, config: PipelineConfig, argv: list[str]) -> int:
    out = _out_dir(config)
    ds = generate_synthetic(config.dataset, config.run.seed)
    manifest = save_manifest(ds, out)
    write_run_record(out, "generate", argv, config, [manifest])
    print(manifest)
    return EXIT_OK


def cmd_train(args, config: PipelineConfig, argv: list[str]) -> int:
    from scdgcn.pipeline import train_pipeline

    ds = _dataset(args, config)
    out = _out_dir(config)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.pgcn"
    _log(f"training on {len(ds)} samples")
    pipe = train_pipeline(ds, config, config.run.seed)
    try:
        pipe.save(ckpt, {"pipeline": config.to_dict(), "seed": config.run.seed})
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {ckpt}: {exc}") from exc
    write_run_record(ckpt.parent, "train", argv, config, [ckpt], {"samples": len(ds)})
    print(ckpt)
    return EXIT_OK


def cmd_predict(args, config: PipelineConfig, argv: list[str]) -> int:
    from scdgcn.pipeline import load_pipeline

    try:
        spleen = SpleenDescriptor.parse(args.spleen)
    except DataError as exc:
        raise UsageError(f"--spleen: {exc}") from None
    image_path = Path(args.image)
    if not image_path.is_file():
        raise StorageError(f"image not found: {image_path}")
    try:
        image = read_image(image_path)
    except OSError as exc:
        raise DataError(f"cannot decode image {image_path}: {exc}") from None
    pipe = load_pipeline(args.checkpoint, args.graph)
    record = pipe.predict(image, spleen, args.sample_id or image_path.stem)
    # keep the training run.json next to the checkpoint intact
    run_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / "predict"
    run_dir.mkdir(parents=True, exist_ok=True)
    write_run_record(run_dir, "predict", argv, config, [], {"prediction": json.loads(record.to_json())})
    print(record.to_json())
    return EXIT_OK


def cmd_bench(args, config: PipelineConfig, argv: list[str]) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    ds = _dataset(args, config)
    out = _out_dir(config)
    result = run_benchmark(ds, variants, config.run.seed, config.bench_config(), progress=_log)
    paths = result.write(out)
    write_run_record(out, "bench", argv, config, list(paths.values()), {"variants": variants})
    print(result.table(("accuracy", "weighted_f1", "au_roc", "rmse_hypo", "rmse_hyper")))
    return EXIT_OK


def cmd_ablate(args, config: PipelineConfig, argv: list[str]) -> int:
    ds = _dataset(args, config)
    out = _out_dir(config)
    result = run_ablation(ds, seed=config.run.seed, config=config.bench_config(), progress=_log)
    paths = result.write(out, prefix="ablation_")
    write_run_record(out, "ablate", argv, config, list(paths.values()))
    print(result.table())
    return EXIT_OK


def cmd_export_graph(args, config: PipelineConfig, argv: list[str]) -> int:
    out = _out_dir(config)
    if args.checkpoint:
        from scdgcn.pipeline import load_pipeline

        pipe = load_pipeline(args.checkpoint)
        graph = pipe.graph
        outputs = list(export_graph(graph, out))
        ids = graph.sample_ids
        _write_matrix(out / "features.csv", ids, graph.features, "f")
        _write_matrix(out / "logits.csv", ids, gcn_logits(pipe.gcn, graph), "class")
        outputs += [out / "features.csv", out / "logits.csv"]
    else:
        ds = _dataset(args, config)
        g = config.graph
        graph = build_graph(ds, np.zeros((len(ds), 0)), args.h_source, g.lam, g.mode,
                            seed=config.run.seed, standardize=g.standardize_h)
        outputs = list(export_graph(graph, out))
    write_run_record(out, "export-graph", argv, config, outputs)
    for p in outputs:
        print(p)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = resolve_config(args)
        return args.func(args, config, argv)
    except ScdGcnError as exc:
        print(f"scdgcn: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"scdgcn: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
