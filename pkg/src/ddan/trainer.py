"""Optimisation loop with per-loss parameter routing.

Each step computes three objectives on one forward pass and applies them as
three separate SGD updates:

* L3 (discriminator cross-entropy) updates the domain discriminator only;
* L1 (identity cross-entropy + triplet) updates encoder, mapping network and
  identity head;
* L2 (adversarial transfer + similarity enhancement) updates the mapping
  network only.

Gradients are taken with ``torch.autograd.grad`` against exactly the routed
parameters, so no loss can leak into another group.
"""

from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ddan.config import TrainConfig
from ddan.data import DatasetManifest, index_by_identity, pk_sample_indices
from ddan.id_pool import IDPool
from ddan.losses import (SEStats, da_disc_loss, da_transfer_loss, ide_loss, se_loss,
                         total_objective, triplet_batch_hard, LossTerms)
from ddan.model import DDANNet, ModelConfig, build_model

log = logging.getLogger(__name__)

CKPT_MAGIC = b"DDAN-CKPT-v1\n"
LOSS_COLUMNS = ("epoch", "step", "ide", "triplet", "da_t", "da_d", "se", "lr")


class NumericError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Step schedule: ``base_lr * factor ** (epoch // every)`` for 0-based ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.base_lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def se_active(config: TrainConfig, epoch: int) -> bool:
    """SE is off for the first ``se_start_epoch`` epochs (0-based ``epoch``)."""
    return config.weights.lambda3 > 0 and epoch >= config.se_start_epoch


@dataclass
class LossTrace:
    epoch: int  # 1-based in logs
    step: int
    ide: float
    triplet: float
    da_t: float
    da_d: float
    se: float
    lr: float

    def row(self) -> str:
        return "\t".join([str(self.epoch), str(self.step)] +
                         [repr(float(getattr(self, c))) for c in LOSS_COLUMNS[2:]]) + "\n"


class Trainer:
    def __init__(self, manifest: DatasetManifest, config: TrainConfig,
                 dtype: torch.dtype = torch.float32):
        self.config = config
        self.manifest = manifest
        ids = manifest.identity_ids
        doms = manifest.domain_ids
        self.class_ids = np.unique(ids)
        if len(self.class_ids) < 2:
            raise ValueError("training needs at least two identities")
        self.labels = torch.from_numpy(np.searchsorted(self.class_ids, ids))
        self.identity_ids = ids
        self.domain_ids = doms
        self.central = (doms == config.central_domain).astype(np.int64)
        self.images = torch.from_numpy(manifest.images()).to(dtype)
        self.groups_by_id = index_by_identity(manifest)

        self.model_config = ModelConfig(
            in_channels=manifest.image_shape[0], encoder_widths=config.encoder_widths,
            embedding_dim=config.embedding_dim, num_identities=len(self.class_ids),
            use_bnneck=config.use_bnneck)
        self.net = build_model(self.model_config, config.seed).to(dtype)
        self.groups = self.net.param_groups()
        self.opt1 = self._sgd(self.groups.theta_f + self.groups.theta_i)
        self.opt2 = self._sgd(self.groups.theta_m)
        self.opt3 = self._sgd(self.groups.theta_d)
        owner = dict(zip(ids.tolist(), doms.tolist()))
        self.pool = IDPool(owner, config.embedding_dim, config.alpha)
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0  # completed epochs
        self.step = 0  # steps taken in the current epoch
        self.se_stats = SEStats()
        batch = config.P * config.K
        self.steps_per_epoch = max(1, len(manifest) // batch)

    def _sgd(self, params):
        return torch.optim.SGD(params, lr=self.config.base_lr, momentum=self.config.momentum)

    # ------------------------------------------------------------------ steps

    def sample_batch(self) -> np.ndarray:
        return pk_sample_indices(self.groups_by_id, self.config.P, self.config.K, self.rng)

    def compute_terms(self, idx: np.ndarray, epoch: int, train: bool = True):
        """Forward pass and every loss term for batch rows ``idx``."""
        cfg = self.config
        w = cfg.weights
        x = self.images[idx]
        y = self.labels[idx]
        c = torch.from_numpy(self.central[idx])
        m = self.net.features(x, train=train)
        logits_i = self.net.identity_logits(m, train=train)
        logits_d = self.net.domain_logits(m, train=train)
        zero = m.sum() * 0.0
        mask = (c == 0) if cfg.transfer_on_peripheral_only else None
        terms = LossTerms(
            ide=ide_loss(logits_i, y),
            triplet=triplet_batch_hard(m, y, w.margin) if w.lambda1 != 0 else zero,
            da_t=da_transfer_loss(logits_d, mask),
            da_d=da_disc_loss(logits_d, c),
            se=zero,
        )
        active = se_active(cfg, epoch) and self.pool.epoch >= 1 and w.k_similar >= 1
        if active:
            terms.se = se_loss(m, self.identity_ids[idx], self.domain_ids[idx],
                               self.central[idx], self.pool.snapshot(), w.k_similar,
                               w.tau, self.se_stats)
        return m, terms, active

    def train_step(self, idx: np.ndarray, epoch: int) -> LossTrace:
        cfg = self.config
        lr = lr_at(cfg, epoch)
        for opt in (self.opt1, self.opt2, self.opt3):
            for g in opt.param_groups:
                g["lr"] = lr
        m, terms, active = self.compute_terms(idx, epoch)
        try:
            l1, l2, l3 = total_objective(terms, cfg.weights, active)
        except FloatingPointError as exc:
            raise NumericError(f"epoch {epoch + 1} step {self.step}: {exc}") from None
        g = self.groups
        l2_live = cfg.weights.lambda2 != 0 or (active and cfg.weights.lambda3 != 0)
        grads3 = torch.autograd.grad(l3, g.theta_d, retain_graph=True)
        grads1 = torch.autograd.grad(l1, g.theta_f + g.theta_i, retain_graph=l2_live,
                                     allow_unused=True)
        grads2 = torch.autograd.grad(l2, g.theta_m, allow_unused=True) if l2_live else None

        _apply(self.opt3, g.theta_d, grads3)
        _apply(self.opt1, g.theta_f + g.theta_i, grads1)
        if grads2 is not None:
            _apply(self.opt2, g.theta_m, grads2)

        self.pool.update_batch(self.identity_ids[idx], m.detach())
        self.step += 1
        v = {k: float(getattr(terms, k).detach()) for k in ("ide", "triplet", "da_t", "da_d", "se")}
        return LossTrace(epoch + 1, self.step, v["ide"], v["triplet"], v["da_t"], v["da_d"],
                         v["se"] if active else 0.0, lr)

    def end_epoch(self) -> None:
        self.pool.finalize_epoch()
        self.epoch += 1
        self.step = 0

    def run_epoch(self, log_file=None) -> list[LossTrace]:
        traces = []
        while self.step < self.steps_per_epoch:
            t = self.train_step(self.sample_batch(), self.epoch)
            traces.append(t)
            if log_file is not None:
                log_file.write(t.row())
        self.end_epoch()
        return traces

    # ------------------------------------------------------------ checkpoint

    def state(self) -> dict:
        return {
            "model_config": asdict(self.model_config),
            "train_config": self.config.to_flat(),
            "class_ids": self.class_ids,
            "net": self.net.state_dict(),
            "opt1": self.opt1.state_dict(),
            "opt2": self.opt2.state_dict(),
            "opt3": self.opt3.state_dict(),
            "pool": self.pool.state_dict(),
            "epoch": self.epoch,
            "step": self.step,
            "rng": self.rng.bit_generator.state,
        }

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.state())

    def load_state(self, state: dict) -> None:
        if not np.array_equal(state["class_ids"], self.class_ids):
            raise CheckpointError("checkpoint identities do not match the training data")
        self.net.load_state_dict(state["net"])
        self.opt1.load_state_dict(state["opt1"])
        self.opt2.load_state_dict(state["opt2"])
        self.opt3.load_state_dict(state["opt3"])
        self.pool = IDPool.from_state_dict(state["pool"])
        self.epoch = int(state["epoch"])
        self.step = int(state["step"])
        self.rng.bit_generator.state = state["rng"]


def _apply(opt: torch.optim.Optimizer, params, grads) -> None:
    for p, gr in zip(params, grads):
        p.grad = torch.zeros_like(p) if gr is None else gr
    opt.step()
    for p in params:
        p.grad = None


def save_checkpoint(path: str | Path, state: dict) -> None:
    buf = io.BytesIO()
    torch.save(state, buf)
    Path(path).write_bytes(CKPT_MAGIC + buf.getvalue())


def load_checkpoint(path: str | Path) -> dict:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path} is not a DDAN-CKPT-v1 checkpoint")
    return torch.load(io.BytesIO(data[len(CKPT_MAGIC):]), weights_only=False)


def net_from_checkpoint(state: dict) -> DDANNet:
    mc = dict(state["model_config"])
    mc["encoder_widths"] = tuple(mc["encoder_widths"])
    net = DDANNet(ModelConfig(**mc))
    sd = state["net"]
    net = net.to(next(iter(sd.values())).dtype)
    net.load_state_dict(sd)
    return net


def train(manifest: DatasetManifest, config: TrainConfig, out_dir: str | Path | None = None,
          resume: str | Path | None = None, progress=None) -> Trainer:
    """Train on every non-held-out domain; write ``losses.tsv`` and checkpoints."""
    data = manifest.select_domains(config.holdout_domains, exclude=True)
    if len(data) == 0:
        raise ValueError("no training images left after removing held-out domains")
    if config.central_domain not in data.domains:
        log.warning("central domain %d has no training images", config.central_domain)
    trainer = Trainer(data, config)
    if resume is not None:
        trainer.load_state(load_checkpoint(resume))
    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        loss_path = out / "losses.tsv"
        if resume is None or not loss_path.exists():
            loss_path.write_text("\t".join(LOSS_COLUMNS) + "\n")
        log_file = loss_path.open("a")
    try:
        while trainer.epoch < config.epochs:
            traces = trainer.run_epoch(log_file)
            if progress is not None:
                progress(trainer.epoch, traces)
            if out is not None and config.checkpoint_every and \
                    trainer.epoch % config.checkpoint_every == 0:
                trainer.save(out / f"ckpt_{trainer.epoch:04d}.bin")
        if out is not None:
            trainer.save(out / "ckpt_final.bin")
    finally:
        if log_file is not None:
            log_file.close()
    return trainer


def read_loss_log(path: str | Path) -> np.ndarray:
    """Loss log as a float array with columns ``LOSS_COLUMNS``."""
    lines = Path(path).read_text().splitlines()[1:]
    return np.array([[float(v) for v in ln.split("\t")] for ln in lines if ln.strip()])
