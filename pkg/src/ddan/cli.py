"""Command-line entry point: ``ddan <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ddan import __version__
from ddan.config import (ConfigError, TrainConfig, config_keys, dump_config, format_value,
                         parse_config_text, parse_value)
from ddan.data import DataError, generate_dataset, load_manifest, parse_shape
from ddan.domain_align import central_domain_select, pairwise_domain_distances
from ddan.evaluation import EvaluationError, embed_dataset, evaluate_protocol, report_tsv
from ddan.featio import FeatureFileError, read_features, write_features
from ddan.pipeline import ABLATIONS, PipelineStageError, run_pipeline
from ddan.plotting import pca_project, scatter_by_domain, write_projection_csv
from ddan.trainer import CheckpointError, load_checkpoint, net_from_checkpoint, train

log = logging.getLogger("ddan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    """One flag per config key; values are parsed with the config-file rules.

    Keys in ``skip`` already have a dedicated flag on the subcommand.
    """
    g = p.add_argument_group("training config (overrides --config)")
    g.add_argument("--config", type=Path, help="flat key = value config file")
    defaults = TrainConfig().to_flat()
    for key in config_keys():
        if key in skip:
            continue
        g.add_argument(_flag(key), dest=f"cfg_{key}", metavar="V",
                       help=f"default {format_value(defaults[key])}")


def config_values(args) -> dict:
    """Explicitly set config values, flag over file."""
    values = parse_config_text(args.config.read_text()) if args.config else {}
    for key in config_keys():
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            values[key] = parse_value(key, raw)
    return values


def add_generation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--domains", type=int, default=5)
    p.add_argument("--ids-per-domain", type=int, default=20)
    p.add_argument("--images-per-id", type=int, default=8)
    p.add_argument("--shape", default="3x32x32", help="CxHxW")
    p.add_argument("--cameras", type=int, default=2, help="camera styles per domain")


# ---------------------------------------------------------------- commands


def cmd_generate_data(args) -> int:
    m = generate_dataset(args.domains, args.ids_per_domain, args.images_per_id,
                         parse_shape(args.shape), args.seed, args.out, args.cameras)
    print(f"wrote {len(m)} images of {m.num_identities} identities to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.data)
    values = config_values(args)
    values.setdefault("central_domain", manifest.central_domain)
    if args.central is not None:
        values["central_domain"] = args.central
    cfg = TrainConfig.from_flat(values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))

    def progress(epoch, traces):
        t = traces[-1]
        log.info("epoch %d ide %.4f tri %.4f da_t %.4f da_d %.4f se %.4f", epoch, t.ide,
                 t.triplet, t.da_t, t.da_d, t.se)

    train(manifest, cfg, out, resume=args.resume, progress=progress)
    print(f"checkpoint written to {out / 'ckpt_final.bin'}")
    return EXIT_OK


def cmd_embed(args) -> int:
    net = net_from_checkpoint(load_checkpoint(args.checkpoint))
    manifest = load_manifest(args.data)
    write_features(args.out, embed_dataset(net, manifest))
    print(f"wrote {len(manifest)} rows to {args.out}")
    return EXIT_OK


def cmd_select_central(args) -> int:
    dump = read_features(args.features)
    matrix = pairwise_domain_distances(dump.by_domain(), args.projections, args.seed)
    central = central_domain_select(matrix)
    out = Path(args.matrix_out) if args.matrix_out else Path(args.features).parent / "matrix.tsv"
    matrix.write_tsv(out)
    if args.data:
        manifest = load_manifest(args.data)
        manifest.central_domain = central
        manifest.write()
    print(f"central domain: {central}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    net = net_from_checkpoint(load_checkpoint(args.checkpoint))
    manifest = load_manifest(args.data)
    if args.domains:
        manifest = manifest.select_domains(args.domains)
    res = evaluate_protocol(net, manifest, args.splits, args.seed)
    text = report_tsv(res)
    if args.report:
        Path(args.report).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    dump = read_features(args.features)
    proj = pca_project(dump.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_projection_csv(out / "proj.csv", proj, dump.identity_ids, dump.domain_ids)
    scatter_by_domain(out / "proj.png", proj, dump.domain_ids)
    print(f"wrote {out / 'proj.csv'} and {out / 'proj.png'}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    out = Path(args.out)
    if args.data:
        manifest = load_manifest(args.data)
    else:
        manifest = generate_dataset(args.domains, args.ids_per_domain, args.images_per_id,
                                    parse_shape(args.shape), args.seed or 0, out / "data",
                                    args.cameras)
    values = config_values(args)
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = TrainConfig.from_flat(values)
    ablation = None
    if args.ablation:
        ablation = [a.strip() for a in args.ablation.split(",") if a.strip()]
        bad = [a for a in ablation if a not in ABLATIONS]
        if bad:
            raise UsageError(f"unknown ablation {bad}; choose from {', '.join(ABLATIONS)}")
    res = run_pipeline(manifest, cfg, out, central=args.central,
                       baseline_epochs=args.baseline_epochs, num_projections=args.projections,
                       splits=args.splits, eval_seed=args.eval_seed, ablation=ablation)
    print(f"central domain {res.central} ({res.central_mode}); "
          f"held-out rank-1 {res.evaluation.rank(1):.4f} mAP {res.evaluation.map:.4f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render a synthetic multi-domain dataset")
    add_generation_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--central", type=int, help="central domain (default: manifest header)")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="write a feature dump for every image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="feature file")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("select-central", help="pick the central domain from a feature dump")
    p.add_argument("--features", required=True)
    p.add_argument("--projections", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matrix-out", help="distance matrix TSV (default: next to features)")
    p.add_argument("--data", help="dataset whose manifest header receives the choice")
    p.set_defaults(func=cmd_select_central)

    p = sub.add_parser("evaluate", help="single-shot CMC and mAP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domains", type=lambda s: [int(t) for t in s.split(",")],
                   help="comma-separated domains to evaluate on (default: all)")
    p.add_argument("--report", help="TSV report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="2-D PCA scatter of a feature dump")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="directory for proj.png and proj.csv")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("pipeline", help="baseline, central selection, full training, evaluation")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="existing dataset (otherwise generated from the flags below)")
    add_generation_flags(p)
    p.add_argument("--seed", type=int, help="run seed for generation and training (config key seed)")
    p.add_argument("--central", type=int, help="force the central domain")
    p.add_argument("--baseline-epochs", type=int, help="epochs for the baseline run")
    p.add_argument("--projections", type=int, default=128)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--eval-seed", type=int, default=0)
    p.add_argument("--ablation", help=f"comma-separated subset of {','.join(ABLATIONS)}")
    add_config_flags(p, skip={"seed"})
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineStageError as exc:
        print(f"error: pipeline stage {exc}", file=sys.stderr)
        return _code_for(exc.cause) or 1
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = _code_for(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


def _code_for(exc: Exception) -> int | None:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, FloatingPointError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, FeatureFileError, CheckpointError, EvaluationError,
                        OSError, ValueError)):
        return EXIT_DATA
    return None


if __name__ == "__main__":
    sys.exit(main())
