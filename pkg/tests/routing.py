"""Shared check that each optimizer sub-update touches only its own parameter group."""

import torch

import ddan.trainer as trainer_mod


def snapshot(groups):
    return {name: [p.detach().clone() for p in params] for name, params in groups.items()}


def changed(before, after, name):
    return any(not torch.equal(a, b) for a, b in zip(before[name], after[name]))


def check_routing(trainer, monkeypatch, steps=20):
    """Run ``steps`` training steps; return the list of violations (empty when clean)."""
    trainer.train_step(trainer.sample_batch(), 0)
    trainer.end_epoch()  # the pool now has entries so SE is live
    groups = dict(trainer.groups.items())
    allowed = {id(trainer.opt1): {"theta_e", "theta_m", "theta_i"},
               id(trainer.opt2): {"theta_m"}, id(trainer.opt3): {"theta_d"}}
    calls, problems = [], []
    real_apply = trainer_mod._apply

    def checked_apply(opt, params, grads):
        before = snapshot(groups)
        real_apply(opt, params, grads)
        after = snapshot(groups)
        for name in groups:
            if name not in allowed[id(opt)] and changed(before, after, name):
                problems.append(f"step {len(calls) // 3}: {name} moved")
        calls.append(id(opt))

    monkeypatch.setattr(trainer_mod, "_apply", checked_apply)
    se_values = [trainer.train_step(trainer.sample_batch(), 1).se for _ in range(steps)]
    expected = [id(trainer.opt3), id(trainer.opt1), id(trainer.opt2)] * steps
    if calls != expected:
        problems.append("sub-updates ran out of order or were skipped")
    if not all(v > 0 for v in se_values):
        problems.append("SE was not active, so L2 carried no SE gradient")
    return problems
