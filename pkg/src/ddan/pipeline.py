"""End-to-end workflow: baseline -> central selection -> full training -> evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ddan.config import TrainConfig
from ddan.data import DatasetManifest
from ddan.domain_align import DomainDistanceMatrix, central_domain_select, pairwise_domain_distances
from ddan.evaluation import ProtocolResult, embed_dataset, evaluate_protocol, report_tsv
from ddan.featio import FeatureDump, write_features
from ddan.trainer import Trainer, train

log = logging.getLogger(__name__)

ABLATIONS = {
    "ide": dict(lambda1=0.0, lambda2=0.0, lambda3=0.0),
    "ide+tri": dict(lambda2=0.0, lambda3=0.0),
    "ide+tri+da": dict(lambda3=0.0),
    "full": {},
}


def ablation_config(base: TrainConfig, name: str) -> TrainConfig:
    try:
        return base.replace(**ABLATIONS[name])
    except KeyError:
        raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}") from None


def baseline_config(base: TrainConfig, epochs: int | None = None) -> TrainConfig:
    cfg = ablation_config(base, "ide+tri")
    return cfg.replace(epochs=epochs) if epochs else cfg


def select_central(trainer: Trainer, num_projections: int = 128, seed: int = 0,
                   max_rows: int = 2000) -> tuple[int, DomainDistanceMatrix, FeatureDump]:
    """Embed the training domains with a trained baseline and pick the central one."""
    dump = embed_dataset(trainer.net, trainer.manifest)
    matrix = pairwise_domain_distances(dump.by_domain(), num_projections, seed, max_rows)
    return central_domain_select(matrix), matrix, dump


@dataclass
class AblationRow:
    name: str
    seed: int
    rank1: float
    rank5: float
    map: float


@dataclass
class PipelineResult:
    central: int
    central_mode: str
    matrix: DomainDistanceMatrix | None
    evaluation: ProtocolResult | None
    ablation: list[AblationRow] = field(default_factory=list)


def _evaluate(trainer: Trainer, test: DatasetManifest, splits: int, seed: int) -> ProtocolResult:
    return evaluate_protocol(trainer.net, test, splits, seed)


def run_ablation(manifest: DatasetManifest, base: TrainConfig, names, seeds,
                 splits: int = 10, eval_seed: int = 0, central: int | None = None,
                 num_projections: int = 128, progress=None) -> list[AblationRow]:
    """Train every named configuration for every seed and score the held-out domains.

    The ``ide+tri`` run doubles as the baseline for central-domain selection
    unless ``central`` is given.
    """
    if not base.holdout_domains:
        raise ValueError("ablation needs at least one held-out domain")
    test = manifest.select_domains(base.holdout_domains)
    names = list(names)
    order = sorted(names, key=lambda n: n != "ide+tri")
    rows = []
    for seed in seeds:
        cfg_seed = base.replace(seed=seed)
        chosen = central
        for name in order:
            cfg = ablation_config(cfg_seed, name)
            if chosen is not None:
                cfg = cfg.replace(central_domain=chosen)
            trainer = train(manifest, cfg)
            if chosen is None and name == "ide+tri":
                chosen, _, _ = select_central(trainer, num_projections, seed)
                log.info("seed %d: central domain %d", seed, chosen)
            res = _evaluate(trainer, test, splits, eval_seed)
            rows.append(AblationRow(name, seed, res.rank(1), res.rank(5), res.map))
            if progress is not None:
                progress(rows[-1])
    return sorted(rows, key=lambda r: (names.index(r.name), r.seed))


def ablation_means(rows: list[AblationRow]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for name in dict.fromkeys(r.name for r in rows):
        sel = [r for r in rows if r.name == name]
        out[name] = {k: float(np.mean([getattr(r, k) for r in sel]))
                     for k in ("rank1", "rank5", "map")}
    return out


def ablation_tsv(rows: list[AblationRow]) -> str:
    lines = ["config\trank1\trank5\tmAP\tseeds\n"]
    for name, m in ablation_means(rows).items():
        seeds = ",".join(str(r.seed) for r in rows if r.name == name)
        lines.append(f"{name}\t{m['rank1']:.6f}\t{m['rank5']:.6f}\t{m['map']:.6f}\t{seeds}\n")
    return "".join(lines)


def run_pipeline(manifest: DatasetManifest, config: TrainConfig, out_dir: str | Path,
                 central: int | None = None, baseline_epochs: int | None = None,
                 num_projections: int = 128, splits: int = 10, eval_seed: int = 0,
                 ablation: list[str] | None = None, progress=None) -> PipelineResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not config.holdout_domains:
        config = config.replace(holdout_domains=(max(manifest.domains),))
    test = manifest.select_domains(config.holdout_domains)
    train_domains = [d for d in manifest.domains if d not in config.holdout_domains]
    if len(train_domains) < 1 or len(test) == 0:
        raise ValueError("pipeline needs training domains and a held-out domain")

    stage = "baseline"
    matrix = None
    try:
        if central is None and len(train_domains) >= 2:
            base = train(manifest, baseline_config(config, baseline_epochs), out / "baseline")
            stage = "select-central"
            central, matrix, dump = select_central(base, num_projections, config.seed)
            write_features(out / "feats.bin", dump)
            matrix.write_tsv(out / "matrix.tsv")
            mode = "selected"
        elif central is None:
            central, mode = train_domains[0], "single-domain"
        else:
            mode = "forced"
        stage = "train"
        cfg = config.replace(central_domain=central)
        trainer = train(manifest, cfg, out, progress=progress)
        stage = "evaluate"
        res = _evaluate(trainer, test, splits, eval_seed)
        (out / "report.tsv").write_text(report_tsv(res))
        rows = []
        if ablation:
            stage = "ablation"
            rows = run_ablation(manifest, cfg, ablation, [config.seed], splits, eval_seed,
                                central=central, num_projections=num_projections)
            (out / "ablation.tsv").write_text(ablation_tsv(rows))
    except Exception as exc:
        raise PipelineStageError(stage, exc) from exc

    run = {
        "seed": config.seed,
        "eval_seed": eval_seed,
        "projection_seed": config.seed,
        "num_projections": num_projections,
        "central": central,
        "central_mode": mode,
        "train_domains": train_domains,
        "holdout_domains": list(config.holdout_domains),
        "rank1": res.rank(1),
        "mAP": res.map,
    }
    (out / "run_manifest.json").write_text(json.dumps(run, indent=2) + "\n")
    return PipelineResult(central, mode, matrix, res, rows)


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
