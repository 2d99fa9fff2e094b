"""Ablation and view-count sweeps over adaptation runs.

Each harness adapts a fresh copy of the source model per repeat (repeats vary
only the run seed), evaluates on a held-out labeled target split, and emits
rows with a fixed schema: task, preset, accuracy_mean, accuracy_std.
"""

from __future__ import annotations

import csv
from dataclasses import replace

import numpy as np

from .adapt import AdaptConfig, adapt_run, evaluate, load_state_copy
from .data import Dataset
from .models import Model
from .rng import derive_seed

# Loss-subset presets, in canonical report order: entropy only, epistemic
# only, both consistency terms, then the full objective without or with the
# epistemic term.
PRESET_ORDER = ("entropy-only", "epistemic-only", "consistency-only", "faust", "faust-u")

PRESET_OVERRIDES: dict[str, dict] = {
    "entropy-only": {"include_consistency": False, "alpha": 0.0, "beta": 1.0, "gamma": 0},
    "epistemic-only": {"include_consistency": False, "alpha": 0.0, "beta": 0.0, "gamma": 1},
    "consistency-only": {"include_consistency": True, "beta": 0.0, "gamma": 0},
    "faust": {"include_consistency": True, "gamma": 0},
    "faust-u": {"include_consistency": True, "gamma": 1},
}

CSV_COLUMNS = ("task", "preset", "accuracy_mean", "accuracy_std")


def task_name(descriptor: dict) -> str:
    family = descriptor.get("family", "unknown")
    if family == "two-moons":
        return f"two-moons/rot{descriptor.get('rotation_deg', 0):g}"
    if family == "blobs":
        return f"blobs/shift{descriptor.get('shift_magnitude', 0):g}"
    if family == "tiny-digits":
        return "tiny-digits/invert"
    return family


def _repeat_accuracies(
    source: Model,
    target: Dataset,
    eval_split: Dataset,
    config: AdaptConfig,
    repeats: int,
) -> list[float]:
    accs = []
    for r in range(repeats):
        cfg = replace(config, seed=derive_seed(config.seed, "repeat", r))
        result = adapt_run(load_state_copy(source), target.model_inputs(), cfg)
        accs.append(evaluate(result.model, eval_split.model_inputs(), eval_split.labels))
    return accs


def _row(task: str, preset: str, accs: list[float]) -> dict:
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    return {
        "task": task,
        "preset": preset,
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": std,
    }


def run_ablation(
    source: Model,
    target: Dataset,
    eval_split: Dataset,
    base_config: AdaptConfig,
    presets: tuple[str, ...] = PRESET_ORDER,
    repeats: int = 3,
) -> list[dict]:
    """Adapt under each loss-subset preset; rows come back in canonical
    preset order regardless of the order requested."""
    unknown = [p for p in presets if p not in PRESET_OVERRIDES]
    if unknown:
        raise ValueError(f"unknown presets: {unknown}; expected {list(PRESET_ORDER)}")
    task = task_name(target.descriptor)
    rows = []
    for preset in PRESET_ORDER:
        if preset not in presets:
            continue
        cfg = replace(base_config, **PRESET_OVERRIDES[preset])
        accs = _repeat_accuracies(source, target, eval_split, cfg, repeats)
        rows.append(_row(task, preset, accs))
    return rows


def run_views_sweep(
    source: Model,
    target: Dataset,
    eval_split: Dataset,
    base_config: AdaptConfig,
    views: tuple[int, ...] = (1, 2, 3, 4, 5),
    repeats: int = 3,
) -> list[dict]:
    """Adapt with each view count; preset column records ``v=<n>``."""
    if any(v < 1 for v in views):
        raise ValueError(f"view counts must be >= 1, got {views}")
    task = task_name(target.descriptor)
    rows = []
    for v in sorted(set(views)):
        cfg = replace(base_config, views=v)
        accs = _repeat_accuracies(source, target, eval_split, cfg, repeats)
        rows.append(_row(task, f"v={v}", accs))
    return rows


def write_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})
