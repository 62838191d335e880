"""Ablation matrices over components, endpoint count, diffusion steps and refiner I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .config import ExperimentConfig
from .metrics import EvalReport, format_cell
from .train import run_experiment

AXES = ("components", "L_count", "K_steps", "refine_io")

# (long, short, softmask, refine)
COMPONENT_ROWS = (
    (True, True, True, True),
    (True, True, True, False),
    (True, True, False, True),
    (True, False, True, True),
    (False, True, True, True),
)
L_VALUES = (1, 3, 5, 10, 20)
K_VALUES = (10, 50, 100, 150, 200)
# (refiner input, refiner output)
REFINE_IO_ROWS = (("eps", "eps"), ("eps", "y0"), ("y", "eps"), ("y", "y0"))

_IO_LABEL = {"eps": "eps_k", "y": "Y_k"}
_OUT_LABEL = {"eps": "d_eps_k", "y0": "d_Y_0"}
_DATASET_LABEL = {"ethucy": "ETH & UCY", "sdd": "SDD", "synthetic": "SYNTHETIC"}


def stride_for(K: int, base: ExperimentConfig) -> int:
    """DDIM stride for ``K`` that keeps the base config's number of sampling steps."""
    n_steps = max(1, base.K // base.gamma)
    return K // n_steps if K % n_steps == 0 else 1


def ablation_configs(cfg: ExperimentConfig, axis: str) -> list[tuple[dict, ExperimentConfig]]:
    if axis == "components":
        return [
            (
                {"long": lo, "short": sh, "softmask": sm, "refine": rf},
                cfg.replace(enable_long=lo, enable_short=sh, enable_softmask=sm, enable_refine=rf),
            )
            for lo, sh, sm, rf in COMPONENT_ROWS
        ]
    if axis == "L_count":
        return [({"L": v}, cfg.replace(L=v)) for v in L_VALUES]
    if axis == "K_steps":
        return [({"K": v}, cfg.replace(K=v, gamma=stride_for(v, cfg))) for v in K_VALUES]
    if axis == "refine_io":
        return [
            ({"in": i, "out": o}, cfg.replace(enable_refine=True, refine_in=i, refine_out=o))
            for i, o in REFINE_IO_ROWS
        ]
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {AXES}")


@dataclass
class AblationTable:
    axis: str
    header: list[str]
    rows: list[list[str]]
    runs: list[dict] = field(default_factory=list)

    def render(self) -> str:
        widths = [max(len(r[i]) for r in [self.header] + self.rows) for i in range(len(self.header))]
        fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
        rule = "-" * len(fmt(self.header))
        return "\n".join([fmt(self.header), rule] + [fmt(r) for r in self.rows])

    def to_dict(self) -> dict:
        return {"axis": self.axis, "header": self.header, "rows": self.rows, "runs": self.runs}

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"ablation_{self.axis}.txt").write_text(self.render() + "\n")
        (out_dir / f"ablation_{self.axis}.json").write_text(json.dumps(self.to_dict(), indent=2))


def build_table(axis: str, cfg: ExperimentConfig, results: list[tuple[dict, EvalReport]]) -> AblationTable:
    col = _DATASET_LABEL[cfg.dataset]
    runs = [{"variant": lab, "report": rep.to_dict()} for lab, rep in results]
    if axis in ("components", "refine_io"):
        if axis == "components":
            header = ["Long", "Short", "Softmask", "Refine", col]
            rows = [
                ["\u2713" if lab[k] else "" for k in ("long", "short", "softmask", "refine")] + [format_cell(*rep.average)]
                for lab, rep in results
            ]
        else:
            header = ["In", "Out", col]
            rows = [[_IO_LABEL[lab["in"]], _OUT_LABEL[lab["out"]], format_cell(*rep.average)] for lab, rep in results]
        return AblationTable(axis, header, rows, runs)
    key = "L" if axis == "L_count" else "K"
    header = ["M" if key == "L" else "K"] + [str(lab[key]) for lab, _ in results]
    scenes = list(results[0][1].scenes)
    rows = [[s.upper()] + [format_cell(*rep.scenes[s]) for _, rep in results] for s in scenes]
    rows.append(["AVG"] + [format_cell(*rep.average) for _, rep in results])
    return AblationTable(axis, header, rows, runs)


def run_ablation(
    cfg: ExperimentConfig,
    axis: str,
    out_dir=None,
    runner: Callable[[ExperimentConfig, Path | None], EvalReport] = run_experiment,
) -> AblationTable:
    """Train and evaluate every variant along ``axis`` and tabulate the results."""
    out_dir = Path(out_dir) if out_dir else None
    results = []
    for label, variant in ablation_configs(cfg, axis):
        tag = "_".join(f"{k}-{v}" for k, v in label.items())
        results.append((label, runner(variant, out_dir / axis / tag if out_dir else None)))
    table = build_table(axis, cfg, results)
    if out_dir is not None:
        table.save(out_dir)
    return table
