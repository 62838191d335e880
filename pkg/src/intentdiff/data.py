"""Trajectory file parsing, windowing and normalization.

Two on-disk formats are understood:

* ``ethucy``: whitespace separated ``frame_id pedestrian_id x y`` rows in meters.
* ``sdd``: Stanford Drone ``annotations.txt`` rows
  (``track_id xmin ymin xmax ymax frame lost occluded generated "label"``),
  reduced to bounding-box centroids in pixels and subsampled to 2.5 fps.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ETHUCY_FRAME_INTERVAL = 0.4
SDD_FRAME_INTERVAL = 0.4
# SDD video is 30 fps; every 12th frame gives 0.4 s spacing.
SDD_FRAME_SKIP = 12

ETHUCY_SCENES = ("eth", "hotel", "univ", "zara1", "zara2")


class DataError(ValueError):
    """Raised for unreadable or malformed trajectory data."""


@dataclass(frozen=True)
class Scene:
    """All tracks of one recording.

    ``records`` is an ``(N, 4)`` float array of ``(frame_id, pedestrian_id, x, y)``
    sorted by pedestrian then frame.
    """

    name: str
    records: np.ndarray
    frame_interval: float
    frame_step: int

    @property
    def pedestrian_ids(self) -> np.ndarray:
        return np.unique(self.records[:, 1].astype(np.int64))

    def tracks(self):
        """Yield ``(pedestrian_id, frame_ids, positions)`` per pedestrian."""
        ids = self.records[:, 1].astype(np.int64)
        if len(ids) == 0:
            return
        bounds = np.flatnonzero(np.diff(ids)) + 1
        for chunk in np.split(np.arange(len(ids)), bounds):
            rows = self.records[chunk]
            yield int(ids[chunk[0]]), rows[:, 0].astype(np.int64), rows[:, 2:4]


@dataclass(frozen=True)
class TrajectoryWindow:
    obs: np.ndarray
    fut: np.ndarray
    pedestrian_id: int = -1
    scene: str = ""
    start_frame: int = -1

    @property
    def t_obs(self) -> int:
        return len(self.obs)

    @property
    def t_pred(self) -> int:
        return len(self.fut)


def _parse_ethucy(lines: Iterable[str], path) -> list[tuple[int, int, float, float]]:
    rows = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
        try:
            frame, ped, x, y = (float(p) for p in parts)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise DataError(f"{path}:{lineno}: non-finite coordinate")
        rows.append((int(frame), int(ped), x, y))
    return rows


def _parse_sdd(lines: Iterable[str], path, labels, frame_skip) -> list[tuple[int, int, float, float]]:
    rows = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 9:
            raise DataError(f"{path}:{lineno}: expected at least 9 columns, got {len(parts)}")
        try:
            track = int(parts[0])
            xmin, ymin, xmax, ymax = (float(p) for p in parts[1:5])
            frame, lost = int(parts[5]), int(parts[6])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        label = parts[9].strip('"') if len(parts) > 9 else ""
        if lost or frame % frame_skip:
            continue
        if labels and label not in labels:
            continue
        rows.append((frame, track, (xmin + xmax) / 2.0, (ymin + ymax) / 2.0))
    return rows


def infer_frame_step(records: np.ndarray) -> int:
    """Most common positive frame increment within a pedestrian's track."""
    diffs = np.diff(records[:, 0].astype(np.int64))
    same = np.diff(records[:, 1].astype(np.int64)) == 0
    steps = diffs[same & (diffs > 0)]
    if len(steps) == 0:
        return 1
    return Counter(steps.tolist()).most_common(1)[0][0]


def make_scene(name: str, rows, frame_interval: float, frame_step: int | None = None) -> Scene:
    records = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    if len(records) == 0:
        raise DataError(f"{name}: no trajectory records")
    order = np.lexsort((records[:, 0], records[:, 1]))
    records = records[order]
    ids = records[:, 1]
    frames = records[:, 0]
    dup = (np.diff(ids) == 0) & (np.diff(frames) == 0)
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise DataError(f"{name}: duplicate record for frame {int(frames[i])}, pedestrian {int(ids[i])}")
    step = frame_step if frame_step is not None else infer_frame_step(records)
    return Scene(name=name, records=records, frame_interval=frame_interval, frame_step=int(step))


def load_scene(
    path,
    format: str = "ethucy",
    name: str | None = None,
    frame_step: int | None = None,
    sdd_labels: Sequence[str] = ("Pedestrian",),
    sdd_frame_skip: int = SDD_FRAME_SKIP,
) -> Scene:
    """Read a trajectory file into a :class:`Scene`.

    Raises:
        DataError: the file is missing, empty, or has a malformed line (the
            message carries ``path:line``).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with open(path) as f:
        lines = f.readlines()
    if name is None:
        name = path.stem
    if format == "ethucy":
        rows = _parse_ethucy(lines, path)
        interval = ETHUCY_FRAME_INTERVAL
    elif format == "sdd":
        rows = _parse_sdd(lines, path, tuple(sdd_labels), sdd_frame_skip)
        interval = SDD_FRAME_INTERVAL
        if frame_step is None:
            frame_step = sdd_frame_skip
    else:
        raise ValueError(f"unknown trajectory format {format!r}")
    if not rows:
        raise DataError(f"{path}: empty file")
    return make_scene(name, rows, interval, frame_step)


def contiguous_runs(frames: np.ndarray, frame_step: int) -> list[slice]:
    """Index slices of maximal runs whose frames advance by exactly ``frame_step``."""
    if len(frames) == 0:
        return []
    breaks = np.flatnonzero(np.diff(frames) != frame_step) + 1
    starts = np.concatenate([[0], breaks])
    stops = np.concatenate([breaks, [len(frames)]])
    return [slice(int(a), int(b)) for a, b in zip(starts, stops)]


def window_scene(scene: Scene, t_obs: int = 8, t_pred: int = 12, stride: int = 1) -> list[TrajectoryWindow]:
    """Slice every pedestrian's contiguous runs into observation/future windows."""
    if t_obs < 2 or t_pred < 1 or stride < 1:
        raise ValueError("need t_obs >= 2, t_pred >= 1, stride >= 1")
    total = t_obs + t_pred
    windows = []
    for ped, frames, pos in scene.tracks():
        for run in contiguous_runs(frames, scene.frame_step):
            rf, rp = frames[run], pos[run]
            for s in range(0, len(rf) - total + 1, stride):
                seg = rp[s : s + total]
                windows.append(
                    TrajectoryWindow(
                        obs=seg[:t_obs].copy(),
                        fut=seg[t_obs:].copy(),
                        pedestrian_id=ped,
                        scene=scene.name,
                        start_frame=int(rf[s]),
                    )
                )
    return windows


def normalize_window(w: TrajectoryWindow) -> tuple[TrajectoryWindow, np.ndarray]:
    """Translate a window so its last observed position is the origin."""
    offset = w.obs[-1].copy()
    return replace(w, obs=w.obs - offset, fut=w.fut - offset), offset


def denormalize_window(w: TrajectoryWindow, offset) -> TrajectoryWindow:
    offset = np.asarray(offset)
    return replace(w, obs=w.obs + offset, fut=w.fut + offset)


def stack_windows(windows: Sequence[TrajectoryWindow]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize and stack windows into ``(obs, fut, offsets)`` arrays."""
    if not windows:
        raise DataError("no windows to stack")
    obs, fut, off = [], [], []
    for w in windows:
        nw, o = normalize_window(w)
        obs.append(nw.obs)
        fut.append(nw.fut)
        off.append(o)
    return np.stack(obs), np.stack(fut), np.stack(off)


# ---------------------------------------------------------------------------
# scene collections


def scene_files(data_dir) -> dict[str, list[Path]]:
    """Group trajectory files in ``data_dir`` by benchmark scene.

    Files are matched to a scene by filename prefix (``univ-001.txt`` belongs
    to ``univ``); unknown names become their own scene.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data_dir: {data_dir} is not a directory")
    groups: dict[str, list[Path]] = {}
    for p in sorted(data_dir.rglob("*")):
        if not p.is_file() or p.suffix not in (".txt", ".csv", ".tsv"):
            continue
        stem = p.stem.lower()
        if stem == "annotations":
            # SDD layout: <scene>/<video>/annotations.txt
            key = p.parent.parent.name
        else:
            key = next((s for s in ETHUCY_SCENES if stem.startswith(s)), stem)
            if stem.startswith("students"):
                key = "univ"
        groups.setdefault(key, []).append(p)
    if not groups:
        raise DataError(f"data_dir: {data_dir} holds no trajectory files")
    return groups


def load_windows(paths: Sequence[os.PathLike], format: str, t_obs=8, t_pred=12, stride=1) -> list[TrajectoryWindow]:
    out = []
    for p in paths:
        scene = load_scene(p, format=format)
        out.extend(window_scene(scene, t_obs, t_pred, stride))
    return out


def leave_one_out(data_dir, held_out: str, format: str = "ethucy", t_obs=8, t_pred=12, stride=1):
    """Train windows from every scene except ``held_out``; test windows from it."""
    groups = scene_files(data_dir)
    if held_out not in groups:
        raise DataError(f"split: scene {held_out!r} not found in {data_dir} (have {sorted(groups)})")
    train = [p for k, ps in groups.items() if k != held_out for p in ps]
    if not train:
        raise DataError(f"split: no training scenes left after holding out {held_out!r}")
    return (
        load_windows(train, format, t_obs, t_pred, stride),
        load_windows(groups[held_out], format, t_obs, t_pred, stride),
    )


# ---------------------------------------------------------------------------
# synthetic agents


@dataclass
class SyntheticSpec:
    kinds: tuple[str, ...] = ("straight", "turning", "stopping")
    speed: tuple[float, float] = (0.8, 1.8)
    yaw_rate: tuple[float, float] = (0.25, 0.6)
    noise: float = 0.02
    dt: float = 0.4
    extent: float = 10.0
    extra: dict = field(default_factory=dict)


def synthetic_windows(
    count: int,
    seed: int = 0,
    t_obs: int = 8,
    t_pred: int = 12,
    spec: SyntheticSpec | None = None,
) -> list[TrajectoryWindow]:
    """Generate a mixture of straight, turning and stopping agents.

    Turning agents hold a constant yaw rate from a random onset frame; stopping
    agents decelerate uniformly to rest within the horizon.
    """
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    total = t_obs + t_pred
    out = []
    for i in range(count):
        kind = spec.kinds[i % len(spec.kinds)]
        speed = rng.uniform(*spec.speed)
        heading = rng.uniform(-np.pi, np.pi)
        start = rng.uniform(-spec.extent, spec.extent, size=2)
        yaw = np.zeros(total)
        accel = np.zeros(total)
        if kind == "turning":
            onset = rng.integers(t_obs - 3, t_obs + 4)
            yaw[onset:] = rng.choice([-1.0, 1.0]) * rng.uniform(*spec.yaw_rate)
        elif kind == "stopping":
            onset = rng.integers(t_obs - 2, t_obs + 4)
            duration = rng.uniform(0.4, 0.9) * (total - onset) * spec.dt
            accel[onset:] = -speed / duration
        elif kind != "straight":
            raise ValueError(f"unknown synthetic agent kind {kind!r}")
        pos = np.zeros((total, 2))
        p = start.copy()
        v = speed
        for t in range(total):
            pos[t] = p
            heading += yaw[t] * spec.dt
            v = max(0.0, v + accel[t] * spec.dt)
            p = p + v * spec.dt * np.array([np.cos(heading), np.sin(heading)])
        pos += spec.noise * rng.standard_normal(pos.shape)
        out.append(TrajectoryWindow(obs=pos[:t_obs], fut=pos[t_obs:], pedestrian_id=i, scene="synthetic", start_frame=0))
    return out


def mean_future_displacement(windows: Sequence[TrajectoryWindow]) -> float:
    """Average distance of future positions from the last observed position.

    This is the ADE a predictor that stays put would score.
    """
    vals = [np.linalg.norm(w.fut - w.obs[-1], axis=-1).mean() for w in windows]
    return float(np.mean(vals))
