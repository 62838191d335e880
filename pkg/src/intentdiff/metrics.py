"""Displacement metrics, best-of-N protocol and benchmark reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import TrajectoryWindow


def ade(pred, gt) -> np.ndarray:
    """Mean Euclidean error over the horizon; leading axes are kept."""
    return np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=-1).mean(axis=-1)


def fde(pred, gt) -> np.ndarray:
    return np.linalg.norm(np.asarray(pred)[..., -1, :] - np.asarray(gt)[..., -1, :], axis=-1)


def best_of_n(preds, gt) -> tuple[float, float]:
    """Per-metric minimum over ``preds`` of shape ``(n, t_pred, 2)``.

    The ADE and FDE minima may come from different samples.
    """
    preds = np.asarray(preds)
    if preds.ndim != 3 or len(preds) == 0:
        raise ValueError(f"preds must be (n>=1, t_pred, 2), got {preds.shape}")
    return float(ade(preds, gt).min()), float(fde(preds, gt).min())


@dataclass
class EvalReport:
    """Best-of-N errors per scene, plus their unweighted average."""

    scenes: dict[str, tuple[float, float]]
    n_samples: int
    config_digest: str = ""
    seed: int = 0
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def average(self) -> tuple[float, float]:
        vals = np.array(list(self.scenes.values()))
        return float(vals[:, 0].mean()), float(vals[:, 1].mean())

    def to_dict(self) -> dict:
        return {
            "scenes": {k: {"ade": a, "fde": f} for k, (a, f) in self.scenes.items()},
            "average": dict(zip(("ade", "fde"), self.average)),
            "n_samples": self.n_samples,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            scenes={k: (v["ade"], v["fde"]) for k, v in d["scenes"].items()},
            n_samples=d["n_samples"],
            config_digest=d.get("config_digest", ""),
            seed=d.get("seed", 0),
            counts=d.get("counts", {}),
        )

    def table(self, precision: int = 2) -> str:
        """Aligned ``ADE / FDE`` table with an AVG column."""
        names = [n.upper() for n in self.scenes] + ["AVG"]
        cells = [format_cell(*v, precision) for v in self.scenes.values()] + [format_cell(*self.average, precision)]
        widths = [max(len(a), len(b)) for a, b in zip(names, cells)]
        head = "  ".join(n.center(w) for n, w in zip(names, widths))
        row = "  ".join(c.center(w) for c, w in zip(cells, widths))
        return f"{head}\n{row}"

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def format_cell(a: float, f: float, precision: int = 2) -> str:
    return f"{a:.{precision}f} / {f:.{precision}f}"


def evaluate_windows(predictor, windows: Sequence[TrajectoryWindow], n: int = 20, seed: int = 0) -> tuple[float, float]:
    """Mean over windows of the best-of-``n`` ADE and FDE."""
    if len(windows) == 0:
        raise ValueError("cannot evaluate an empty window set")
    preds = predictor.predict(windows, n, seed)
    gts = np.stack([w.fut for w in windows])
    a = ade(preds, gts[:, None]).min(axis=1)
    f = fde(preds, gts[:, None]).min(axis=1)
    return float(a.mean()), float(f.mean())


def evaluate_split(predictor, windows, n: int = 20, seed: int = 0, config_digest: str = "") -> EvalReport:
    """Evaluate windows grouped by their ``scene`` field.

    ``windows`` may also be a mapping of scene name to window list.
    """
    if isinstance(windows, dict):
        groups = {k: list(v) for k, v in windows.items()}
    else:
        groups = {}
        for w in windows:
            groups.setdefault(w.scene or "all", []).append(w)
    if not groups or not any(groups.values()):
        raise ValueError("cannot evaluate an empty window set")
    scenes = {name: evaluate_windows(predictor, ws, n, seed) for name, ws in groups.items()}
    return EvalReport(scenes=scenes, n_samples=n, config_digest=config_digest, seed=seed,
                      counts={k: len(v) for k, v in groups.items()})
