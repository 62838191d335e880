"""Static figures of observed paths, samples, endpoint hypotheses and intent."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from .data import TrajectoryWindow, stack_windows  # noqa: E402

OVERLAYS = ("observed", "ground_truth", "samples", "endpoints", "intent")


@dataclass
class PlotSpec:
    window_ids: Sequence[int]
    overlays: Sequence[str]
    output: str

    def validate(self) -> None:
        if not self.overlays:
            raise ValueError("plot needs at least one overlay")
        bad = [o for o in self.overlays if o not in OVERLAYS]
        if bad:
            raise ValueError(f"unknown overlays {bad}; choose from {OVERLAYS}")
        if not self.window_ids:
            raise ValueError("plot needs at least one window id")
        parent = Path(self.output).resolve().parent
        if not parent.is_dir():
            raise ValueError(f"output directory {parent} does not exist")


def _hypotheses(model, windows):
    """Endpoint hypotheses and predicted intent in world coordinates, or ``None``."""
    if not hasattr(model, "conditions"):
        return None, None
    obs, _, offsets = stack_windows(windows)
    scale = model.scale
    with torch.no_grad():
        cond = model.conditions(torch.as_tensor(obs / scale, dtype=torch.float32))
    hyp = None
    if cond.endpoints is not None:
        pts = cond.endpoints.points.double().numpy() * scale + offsets[:, None]
        hyp = (pts, cond.endpoints.probs.double().numpy())
    intent = None
    if cond.intent is not None:
        intent = (cond.intent.theta.double().numpy(), cond.intent.radius.double().numpy())
    return hyp, intent


def plot_windows(model, windows: Sequence[TrajectoryWindow], spec: PlotSpec, n: int = 20, seed: int = 0,
                 config_digest: str = "") -> dict:
    """Render one panel per selected window and write a JSON sidecar.

    Returns the sidecar metadata, which records how many artists of each
    overlay were drawn per panel.
    """
    spec.validate()
    ids = list(spec.window_ids)
    chosen = [windows[i] for i in ids]
    overlays = set(spec.overlays)
    samples = model.predict(chosen, n, seed, window_ids=ids) if overlays & {"samples", "intent"} else None
    hyp, intent = _hypotheses(model, chosen) if overlays & {"endpoints", "intent"} else (None, None)
    if "endpoints" in overlays and hyp is None:
        raise ValueError("endpoints overlay needs a model with the endpoint predictor enabled")
    if "intent" in overlays and intent is None:
        raise ValueError("intent overlay needs a model with the intent predictor enabled")

    fig, axes = plt.subplots(1, len(chosen), figsize=(4.5 * len(chosen), 4.5), squeeze=False)
    panels = []
    for j, (wid, w, ax) in enumerate(zip(ids, chosen, axes[0])):
        meta = {"window_id": wid, "scene": w.scene, "pedestrian_id": int(w.pedestrian_id)}
        if "samples" in overlays:
            for s in samples[j]:
                ax.plot(s[:, 0], s[:, 1], color="tab:orange", alpha=0.35, lw=1)
            meta["samples_drawn"] = int(len(samples[j]))
        if "observed" in overlays:
            ax.plot(w.obs[:, 0], w.obs[:, 1], "o-", color="tab:blue", ms=3, label="observed")
        if "ground_truth" in overlays:
            gt = np.vstack([w.obs[-1:], w.fut])
            ax.plot(gt[:, 0], gt[:, 1], "o-", color="tab:green", ms=3, label="ground truth")
        if "endpoints" in overlays:
            pts, probs = hyp[0][j], hyp[1][j]
            ax.scatter(pts[:, 0], pts[:, 1], s=30 + 400 * probs, marker="*", color="tab:red",
                       edgecolor="k", zorder=5, label="endpoints")
            meta["endpoint_markers"] = int(len(pts))
            meta["endpoint_probs"] = probs.tolist()
        if "intent" in overlays:
            theta, radius = intent[0][j], intent[1][j]
            anchors = samples[j].mean(axis=0)
            length = 0.5 * radius / max(float(radius.max()), 1e-9)
            ax.quiver(anchors[:, 0], anchors[:, 1], length * np.cos(theta), length * np.sin(theta),
                      angles="xy", scale_units="xy", scale=1, color="tab:purple", width=0.004)
            meta["intent_arrows"] = int(len(theta))
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_title(f"window {wid}")
        panels.append(meta)
    axes[0][0].legend(loc="best", fontsize=7)
    fig.tight_layout()
    fig.savefig(spec.output)
    plt.close(fig)

    sidecar = {
        "output": str(spec.output),
        "window_ids": ids,
        "overlays": list(spec.overlays),
        "seed": seed,
        "n_samples": n,
        "config_digest": config_digest,
        "panels": panels,
    }
    Path(str(spec.output) + ".json").write_text(json.dumps(sidecar, indent=2))
    return sidecar
