"""Ablation runner: trains one config per grid cell with shared seed and
data, then reports F1/IoU per cell.

Three axes mirror the component, noise-mechanism, and shift-parameter
studies: five branch configurations, the zero/ddpm/rf mechanisms, and
shift values {0.5, 1.0, 3.0, 4.0, 6.0}.
"""

import json
from pathlib import Path

from .config import ExperimentConfig, config_from_dict, config_to_dict
from .errors import ConfigurationError
from .train import evaluate_checkpoint, resolve, train

# (forensic denoiser branch, semantic branch) per row
COMPONENT_GRID = (
    ("tuned", "frozen"),
    ("tuned", "removed"),
    ("removed", "tuned"),
    ("frozen", "tuned"),
    ("tuned", "tuned"),
)

NOISE_GRID = ("zero", "ddpm", "rf")

SHIFT_GRID = (0.5, 1.0, 3.0, 4.0, 6.0)

AXES = ("components", "noise", "shift")


def _cell_config(base: ExperimentConfig, updates: dict, cell_name: str):
    data = config_to_dict(base)
    for path, value in updates.items():
        node = data
        keys = path.split(".")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    data["output_dir"] = str(Path(base.output_dir) / "ablation" / cell_name)
    return config_from_dict(data)


def ablation_grid(base: ExperimentConfig, axis: str):
    """(label, config) pairs for one ablation axis."""
    if axis == "components":
        cells = []
        for sd, sam in COMPONENT_GRID:
            label = {"sd3": sd, "sam": sam}
            cells.append((label, _cell_config(
                base, {"forensic_branch": sd, "semantic_branch": sam},
                f"components_sd3-{sd}_sam-{sam}")))
        return cells
    if axis == "noise":
        return [({"mechanism": mech},
                 _cell_config(base, {"noise.mechanism": mech}, f"noise_{mech}"))
                for mech in NOISE_GRID]
    if axis == "shift":
        return [({"shift_s": s},
                 _cell_config(base, {"noise.shift_s": s, "noise.mechanism": "rf"},
                              f"shift_{s}"))
                for s in SHIFT_GRID]
    raise ConfigurationError(f"unknown ablation axis {axis!r}, expected {AXES}")


def run_ablation(base: ExperimentConfig, axis: str, split: str = "test") -> list:
    """Train and evaluate every cell; rows keep the grid order."""
    rows = []
    for label, cfg in ablation_grid(base, axis):
        result = train(cfg)
        report = evaluate_checkpoint(result["best_checkpoint"], split=split)
        row = {"axis": axis, **label,
               "f1": report.weighted_f1, "iou": report.weighted_iou,
               "n_images": sum(d.n_images for d in report.datasets)}
        rows.append(row)
    return rows


def ablation_to_csv(rows) -> str:
    if not rows:
        raise ConfigurationError("no ablation rows to render")
    label_keys = [k for k in rows[0] if k not in ("axis", "f1", "iou", "n_images")]
    header = ["axis"] + label_keys + ["n_images", "f1", "iou"]
    lines = [",".join(header)]
    for r in rows:
        cells = [r["axis"]] + [str(r[k]) for k in label_keys]
        cells += [str(r["n_images"]), f"{r['f1']:.6f}", f"{r['iou']:.6f}"]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_ablation(rows, out_dir, axis: str):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablation_{axis}.csv").write_text(ablation_to_csv(rows))
    (out / f"ablation_{axis}.json").write_text(
        json.dumps(rows, indent=2, sort_keys=True) + "\n")
