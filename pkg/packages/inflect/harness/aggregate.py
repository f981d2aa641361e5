"""
Fold per-run report records into per-(regime, strategy) cells.

Records are the dicts written as ``report.json``, so an aggregate can be
rebuilt from disk without re-running anything. Cells and runs are visited in
sorted order, which keeps the fold deterministic.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from inflect.errors import InvalidInputError

logger = logging.getLogger(__name__)

COMPLETED = "completed"
DIAGNOSTIC_METRICS = ("attention_entropy", "activation_grad_norm", "param_grad_norm")


def mean_std(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and sample standard deviation (ddof=1); std is None below two values."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        return None, None
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size >= 2 else None
    return mean, std


def _layer_mean(rows: List[List[float]]) -> Optional[List[float]]:
    rows = [row for row in rows if row]
    if not rows:
        return None
    lengths = {len(row) for row in rows}
    if len(lengths) != 1:
        raise InvalidInputError(f"per-layer series of different lengths {sorted(lengths)}")
    return np.mean(np.asarray(rows, dtype=np.float64), axis=0).tolist()


def _cell(records: List[dict]) -> dict:
    completed = sorted((r for r in records if r["status"] == COMPLETED), key=lambda r: r["seed"])
    failed = sorted(r["seed"] for r in records if r["status"] != COMPLETED)
    accuracy_mean, accuracy_std = mean_std([r["final_accuracy"] for r in completed])
    params_mean, _ = mean_std([r["trainable_params"] for r in completed])

    diagnostics = {}
    overall = {}
    for metric in DIAGNOSTIC_METRICS:
        rows = [r["diagnostics"]["mean"][metric] for r in completed if r.get("diagnostics")]
        diagnostics[metric] = _layer_mean(rows)
        overall[metric] = mean_std([np.mean(row) for row in rows])[0]

    probe = {}
    for record in completed:
        for kind, values in ((record.get("probe") or {}).get("accuracy") or {}).items():
            probe.setdefault(kind, []).append(values)

    return {
        "regime": records[0]["regime"],
        "strategy": records[0]["strategy"],
        "seeds": [r["seed"] for r in completed],
        "failed_seeds": failed,
        "partial": bool(failed),
        "accuracy_mean": accuracy_mean,
        "accuracy_std": accuracy_std,
        "accuracies": [r["final_accuracy"] for r in completed],
        "trainable_params": params_mean,
        "diagnostics": diagnostics,
        "diagnostics_overall": overall,
        "delta_cka": _layer_mean([r.get("delta_cka") or [] for r in completed]),
        "probe": {kind: _layer_mean(rows) for kind, rows in sorted(probe.items())},
        "bands": {str(r["seed"]): (r.get("locator") or {}).get("band") for r in completed},
        "runs": sorted(r["run_id"] for r in records),
    }


def band_consistency(cells: Iterable[dict]) -> Dict[str, dict]:
    """Per regime: the calibrated band of each seed, and whether all seeds agree."""
    by_regime: Dict[str, Dict[str, list]] = defaultdict(dict)
    for cell in cells:
        for seed, band in cell["bands"].items():
            if band is not None:
                by_regime[cell["regime"]].setdefault(seed, band)
    result = {}
    for regime, bands in sorted(by_regime.items()):
        distinct = {tuple(band) for band in bands.values()}
        result[regime] = {"bands": dict(sorted(bands.items())), "consistent": len(distinct) == 1}
        if len(distinct) > 1:
            logger.info(f"Finding: locator bands differ across seeds for {regime}: {dict(sorted(bands.items()))}")
    return result


def band_gradient_lift(records: Sequence[dict]) -> Dict[str, dict]:
    """
    Per regime and seed: mean activation-gradient norm over the selective-lora band,
    for selective-lora and for the shallow baseline of the same seed.

    ``rises`` marks seeds where adapting the band draws more gradient there than
    shallow fine-tuning does.
    """
    selective, shallow = {}, {}
    for record in records:
        if record["status"] != COMPLETED or not record.get("diagnostics"):
            continue
        key = (record["regime"], record["seed"])
        if record["strategy"] == "selective-lora":
            selective[key] = record
        elif record["strategy"].startswith("shallow"):
            shallow[key] = record

    result: Dict[str, dict] = {}
    for regime, seed in sorted(selective):
        baseline = shallow.get((regime, seed))
        band = selective[(regime, seed)].get("band") or []
        if baseline is None or not band:
            continue
        means = [float(np.mean([r["diagnostics"]["mean"]["activation_grad_norm"][layer] for layer in band]))
                 for r in (selective[(regime, seed)], baseline)]
        result.setdefault(regime, {})[str(seed)] = {
            "band": list(band), "selective": means[0], "shallow": means[1], "rises": means[0] > means[1],
        }
    for regime, seeds in result.items():
        rising = sorted(seed for seed, entry in seeds.items() if entry["rises"])
        logger.info(f"Finding: band activation gradients rise over shallow for {regime} "
                    f"in {len(rising)}/{len(seeds)} seeds {rising}")
    return result


def aggregate_reports(records: Sequence[dict]) -> dict:
    if not records:
        raise InvalidInputError("no run reports to aggregate")
    groups: Dict[Tuple[str, str], List[dict]] = defaultdict(list)
    for record in records:
        groups[(record["regime"], record["strategy"])].append(record)

    cells = [_cell(groups[key]) for key in sorted(groups)]
    failed = sorted({f"{c['regime']}/{c['strategy']}/seed-{s}" for c in cells for s in c["failed_seeds"]})
    if failed:
        logger.warning(f"Aggregate is partial; failed runs: {failed}")
    return {
        "cells": cells,
        "partial": bool(failed),
        "failed": failed,
        "band_consistency": band_consistency(cells),
        "gradient_ratios": gradient_ratios(cells),
        "band_gradient_lift": band_gradient_lift(records),
    }


def gradient_ratios(cells: Sequence[dict]) -> Dict[str, dict]:
    """OVER/UNDER ratio of mean activation- and parameter-gradient norms per strategy."""
    lookup = {(cell["regime"], cell["strategy"]): cell for cell in cells}
    ratios = {}
    for strategy in sorted({cell["strategy"] for cell in cells}):
        over, under = lookup.get(("OVER", strategy)), lookup.get(("UNDER", strategy))
        if over is None or under is None:
            continue
        ratios[strategy] = {}
        for metric in ("activation_grad_norm", "param_grad_norm"):
            numerator = over["diagnostics_overall"].get(metric)
            denominator = under["diagnostics_overall"].get(metric)
            ratios[strategy][metric] = (numerator / denominator
                                        if numerator is not None and denominator else None)
    return ratios


def _format(mean: Optional[float], std: Optional[float]) -> str:
    if mean is None:
        return "n/a"
    if std is None:
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f}±{100 * std:.2f}"


def summary_table(aggregate: dict) -> pd.DataFrame:
    """One row per strategy: trainable parameters and accuracy mean±std (in %) per regime."""
    cells = aggregate["cells"]
    regimes = sorted({cell["regime"] for cell in cells}, key=lambda r: (r != "UNDER", r))
    rows = []
    for strategy in sorted({cell["strategy"] for cell in cells}):
        row = {"method": strategy}
        for regime in regimes:
            cell = next((c for c in cells if c["regime"] == regime and c["strategy"] == strategy), None)
            if cell is None:
                continue
            row.setdefault("trainable_params", cell["trainable_params"])
            row[regime] = _format(cell["accuracy_mean"], cell["accuracy_std"])
            row[f"{regime}_mean"] = cell["accuracy_mean"]
            row[f"{regime}_std"] = cell["accuracy_std"]
        ratio = aggregate.get("gradient_ratios", {}).get(strategy, {})
        row["actgrad_over_under"] = ratio.get("activation_grad_norm")
        rows.append(row)
    frame = pd.DataFrame(rows)
    return frame.sort_values(["trainable_params", "method"], kind="stable", na_position="last").reset_index(drop=True)
