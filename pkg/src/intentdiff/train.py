"""Training loop, data preparation and experiment orchestration."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import ExperimentConfig, save_config
from .data import (
    DataError,
    SyntheticSpec,
    TrajectoryWindow,
    leave_one_out,
    load_windows,
    scene_files,
    stack_windows,
    synthetic_windows,
)
from .metrics import EvalReport, evaluate_split, evaluate_windows
from .model import IntentDiffusion

log = logging.getLogger(__name__)

LOSS_KEYS = ("L_theta", "L_r", "L_e", "L_p", "L_dif", "total")
# keeps synthetic test agents disjoint from the training draw
SYNTHETIC_TEST_SEED_OFFSET = 1_000_003


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class Dataset:
    train: list[TrajectoryWindow]
    val: list[TrajectoryWindow]
    test: dict[str, list[TrajectoryWindow]]


@dataclass
class TrainResult:
    model: IntentDiffusion
    history: list[dict] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)
    steps: int = 0
    checkpoint: Path | None = None


def synthetic_spec(cfg: ExperimentConfig) -> SyntheticSpec:
    kinds = tuple(k.strip() for k in cfg.synthetic_kinds.split(",") if k.strip())
    return SyntheticSpec(kinds=kinds, noise=cfg.synthetic_noise, dt=cfg.dt)


def split_validation(windows: Sequence[TrajectoryWindow], fraction: float, seed: int):
    if fraction <= 0 or len(windows) < 2:
        return list(windows), []
    order = np.random.default_rng(seed).permutation(len(windows))
    n_val = max(1, int(round(fraction * len(windows))))
    val = set(order[:n_val].tolist())
    return [w for i, w in enumerate(windows) if i not in val], [w for i, w in enumerate(windows) if i in val]


def prepare_data(cfg: ExperimentConfig) -> Dataset:
    """Build train/val/test windows for ``cfg``.

    Raises:
        DataError: missing or unreadable dataset; the message names the config key.
    """
    if cfg.dataset == "synthetic":
        spec = synthetic_spec(cfg)
        train = synthetic_windows(cfg.synthetic_count, cfg.seed, cfg.t_obs, cfg.t_pred, spec)
        test = synthetic_windows(cfg.synthetic_test_count, cfg.seed + SYNTHETIC_TEST_SEED_OFFSET, cfg.t_obs, cfg.t_pred, spec)
        train, val = split_validation(train, cfg.val_fraction, cfg.seed)
        return Dataset(train=train, val=val, test={"synthetic": test})
    if not cfg.data_dir:
        raise DataError("data_dir: required for dataset " + cfg.dataset)
    if not Path(cfg.data_dir).exists():
        raise DataError(f"data_dir: {cfg.data_dir} does not exist")
    if cfg.split:
        train, test = leave_one_out(cfg.data_dir, cfg.split, cfg.dataset, cfg.t_obs, cfg.t_pred, cfg.stride)
        test_groups = {cfg.split: test}
    else:
        # train and evaluate on every scene (used for SDD-style fixed splits)
        groups = scene_files(cfg.data_dir)
        train = load_windows([p for ps in groups.values() for p in ps], cfg.dataset, cfg.t_obs, cfg.t_pred, cfg.stride)
        test_groups = {}
        for w in train:
            test_groups.setdefault(w.scene, []).append(w)
    if not train:
        raise DataError(f"data_dir: no training windows of length {cfg.t_obs + cfg.t_pred} in {cfg.data_dir}")
    train, val = split_validation(train, cfg.val_fraction, cfg.seed)
    return Dataset(train=train, val=val, test=test_groups)


def set_determinism(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    # poisoning fresh buffers is a debugging aid and costs ~10% of a step
    torch.utils.deterministic.fill_uninitialized_memory = False
    return torch.Generator().manual_seed(seed)


def _snapshot(path: Path, model, batch, parts, step) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "step": step,
            "state_dict": model.state_dict(),
            "batch": batch,
            "parts": {k: float(v.detach()) for k, v in parts.items()},
        },
        path,
    )
    return path


def train(cfg: ExperimentConfig, data: Dataset | None = None, out_dir=None) -> TrainResult:
    """Optimise the full objective with Adam; returns the trained model.

    Every step draws a batch, a diffusion step and noise from seeded streams, so
    re-running with the same config reproduces the loss log exactly.

    Raises:
        NonFiniteLossError: a loss became NaN/inf; a diagnostic snapshot is
            written next to the run outputs first.
    """
    out_dir = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    data = data or prepare_data(cfg)
    if not data.train:
        raise DataError("no training windows")
    gen = set_determinism(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = IntentDiffusion(cfg)

    obs_np, fut_np, _ = stack_windows(data.train)
    scale = cfg.data_scale or float(fut_np.std())
    if not scale > 0:
        scale = 1.0
    model.data_scale.fill_(scale)
    obs = torch.as_tensor(obs_np / scale, dtype=torch.float32)
    fut = torch.as_tensor(fut_np / scale, dtype=torch.float32)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = None
    if cfg.warmup_steps > 0:
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min(1.0, (s + 1) / cfg.warmup_steps))

    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "config.yaml")
        log_file = open(out_dir / "log.jsonl", "a")

    result = TrainResult(model=model)
    best = {"ade": math.inf, "state": None, "bad": 0, "step": -1}

    def validate(epoch) -> bool:
        """Score the validation windows; False once patience runs out."""
        v_ade, v_fde = evaluate_windows(model, data.val[: cfg.val_max_windows], cfg.n_samples, cfg.seed)
        result.val_history.append({"epoch": epoch, "step": step, "ade": v_ade, "fde": v_fde})
        if log_file:
            log_file.write(json.dumps({"step": step, "epoch": epoch, "val_ade": v_ade, "val_fde": v_fde}) + "\n")
        log.info("epoch %d step %d val ADE %.4f FDE %.4f", epoch, step, v_ade, v_fde)
        best["step"] = step
        if v_ade < best["ade"]:
            best.update(ade=v_ade, bad=0, state={k_: v.detach().clone() for k_, v in model.state_dict().items()})
            return True
        best["bad"] += 1
        return not (cfg.patience and best["bad"] >= cfg.patience)

    start = time.monotonic()
    step = 0
    n = len(obs)
    done = False
    try:
        for epoch in range(cfg.epochs):
            model.train()
            perm = torch.as_tensor(rng.permutation(n))
            for s in range(0, n, cfg.batch_size):
                idx = perm[s : s + cfg.batch_size]
                b_obs, b_fut = obs[idx], fut[idx]
                k = torch.randint(1, cfg.K + 1, (len(idx),), generator=gen)
                noise = torch.randn(b_fut.shape, generator=gen)
                parts = model.compute_losses(b_obs, b_fut, k, noise)
                if not all(torch.isfinite(v) for v in parts.values()):
                    where = _snapshot((out_dir or Path(".")) / "diagnostic.pt", model,
                                      {"obs": b_obs, "fut": b_fut, "k": k, "noise": noise}, parts, step)
                    raise NonFiniteLossError(
                        f"non-finite loss at step {step}: "
                        + ", ".join(f"{k_}={float(v.detach()):.4g}" for k_, v in parts.items())
                        + f"; snapshot at {where}"
                    )
                opt.zero_grad(set_to_none=True)
                parts["total"].backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()
                if sched is not None:
                    sched.step()
                record = {"step": step, "epoch": epoch}
                record.update({k_: float(parts[k_].detach()) for k_ in LOSS_KEYS if k_ in parts})
                result.history.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                step += 1
                if data.val and step % cfg.val_every == 0 and not validate(epoch):
                    done = True
                    break
                if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save_checkpoint(out_dir / f"checkpoint_step{step}.pt", model, cfg, step)
                if (cfg.max_steps and step >= cfg.max_steps) or (
                    cfg.time_budget and time.monotonic() - start >= cfg.time_budget
                ):
                    done = True
                    break
            if done:
                break
        if data.val and step > 0 and best["step"] != step:
            validate(epoch)
    finally:
        if log_file:
            log_file.close()
    if best["state"] is not None:
        model.load_state_dict(best["state"])
    model.eval()
    result.steps = step
    if out_dir is not None:
        result.checkpoint = save_checkpoint(out_dir / "checkpoint.pt", model, cfg, step)
    return result


def evaluate_model(model, cfg: ExperimentConfig, data: Dataset, n: int | None = None, seed: int | None = None) -> EvalReport:
    return evaluate_split(
        model,
        data.test,
        n=n or cfg.n_samples,
        seed=cfg.seed if seed is None else seed,
        config_digest=cfg.digest(),
    )


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> EvalReport:
    """Train then evaluate one configuration.

    For ETH/UCY without an explicit ``split`` this runs the full
    leave-one-scene-out protocol: five trainings, one per held-out scene.
    """
    out_dir = Path(out_dir) if out_dir else (Path(cfg.out_dir) if cfg.out_dir else None)
    if cfg.dataset == "ethucy" and not cfg.split:
        scenes = {}
        counts = {}
        available = scene_files(cfg.data_dir) if cfg.data_dir else {}
        held = [s for s in ("eth", "hotel", "univ", "zara1", "zara2") if s in available] or sorted(available)
        if not held:
            raise DataError(f"data_dir: no ETH/UCY scenes found in {cfg.data_dir!r}")
        for scene in held:
            sub = cfg.replace(split=scene)
            rep = run_experiment(sub, out_dir / scene if out_dir else None)
            scenes[scene] = rep.scenes[scene]
            counts[scene] = rep.counts.get(scene, 0)
        return EvalReport(scenes=scenes, n_samples=cfg.n_samples, config_digest=cfg.digest(), seed=cfg.seed, counts=counts)
    data = prepare_data(cfg)
    res = train(cfg, data, out_dir)
    report = evaluate_model(res.model, cfg, data)
    if out_dir is not None:
        report.save(out_dir / "report.json")
        (out_dir / "report.txt").write_text(report.table() + "\n")
    return report
