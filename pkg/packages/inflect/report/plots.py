"""
Static SVG figures of per-layer diagnostics.

Rendering goes through a bare ``Figure`` on the Agg canvas with a fixed SVG
hash salt and no date metadata, so identical input gives identical bytes.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from inflect.errors import InvalidInputError

logger = logging.getLogger(__name__)

ENTROPY_BY_LAYER = "entropy-by-layer"
ACTGRAD_BY_LAYER = "actgrad-by-layer"
PARAMGRAD_BY_LAYER = "paramgrad-by-layer"
DELTACKA_BY_LAYER = "deltacka-by-layer"
PROBE_BY_LAYER = "probe-accuracy-by-layer"
ACCURACY_VS_PARAMS = "accuracy-vs-params"

Y_LABELS = {
    ENTROPY_BY_LAYER: "attention entropy (nats)",
    ACTGRAD_BY_LAYER: "activation gradient norm",
    PARAMGRAD_BY_LAYER: "parameter gradient norm",
    DELTACKA_BY_LAYER: "ΔCKA (1 - CKA)",
    PROBE_BY_LAYER: "probe accuracy",
    ACCURACY_VS_PARAMS: "target accuracy",
}
KINDS = tuple(Y_LABELS)

RC_PARAMS = {
    "svg.hashsalt": "inflect",
    "svg.fonttype": "none",
    "path.simplify": False,
    "font.family": "DejaVu Sans",
}

Series = Tuple[str, Sequence[Union[float, Tuple[float, float]]]]


@dataclass
class PlotSpec:
    kind: str
    series: List[Series]
    output: Union[str, Path]
    title: str = ""

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown plot kind '{self.kind}', expected one of {KINDS}")
        if not self.series:
            raise InvalidInputError("plot needs at least one series")
        if self.kind == ACCURACY_VS_PARAMS:
            for label, points in self.series:
                if any(len(point) != 2 or point[0] <= 0 for point in points):
                    raise InvalidInputError(f"series '{label}' needs (params > 0, accuracy) points")
            return
        lengths = {len(values) for _, values in self.series}
        if len(lengths) != 1 or 0 in lengths:
            raise InvalidInputError(f"per-layer series must share one non-zero length, got {sorted(lengths)}")


def padded_limits(values: Sequence[float]) -> Tuple[float, float]:
    """Data range with 5% padding on both sides; a constant series gets a symmetric band around it."""
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    if high == low:
        pad = abs(low) * 0.1 or 1.0
    else:
        pad = 0.05 * (high - low)
    return low - pad, high + pad


def render_plot(spec: PlotSpec) -> Path:
    spec.validate()
    output = Path(spec.output)
    output.parent.mkdir(parents=True, exist_ok=True)

    with matplotlib.rc_context(RC_PARAMS):
        figure = Figure(figsize=(6.0, 4.0))
        axes = figure.subplots()
        if spec.kind == ACCURACY_VS_PARAMS:
            for label, points in spec.series:
                x, y = zip(*points)
                axes.scatter(x, y, label=label)
            axes.set_xscale("log")
            axes.set_xlabel("trainable parameters (log scale)")
            all_y = [point[1] for _, points in spec.series for point in points]
        else:
            num_layers = len(spec.series[0][1])
            layers = np.arange(num_layers)
            for label, values in spec.series:
                axes.plot(layers, values, marker="o", label=label)
            axes.set_xticks(layers)
            axes.set_xlabel("layer")
            all_y = [value for _, values in spec.series for value in values]
        axes.set_ylim(*padded_limits(all_y))
        axes.set_ylabel(Y_LABELS[spec.kind])
        if spec.title:
            axes.set_title(spec.title)
        axes.grid(True, alpha=0.3)
        axes.legend()
        figure.tight_layout()
        figure.savefig(output, format="svg", metadata={"Date": None})
    logger.info(f"Wrote {spec.kind} plot to {output}")
    return output


def _mean_rows(rows: List[Sequence[float]]) -> List[float]:
    return np.mean(np.asarray(rows, dtype=np.float64), axis=0).tolist()


def aggregate_plot_specs(aggregate: dict, out_dir) -> List[PlotSpec]:
    """Layer figures per regime and per strategy, plus accuracy against trainable parameters."""
    out_dir = Path(out_dir)
    cells = aggregate["cells"]
    specs = []
    per_layer = [
        (ENTROPY_BY_LAYER, lambda c: c["diagnostics"].get("attention_entropy")),
        (ACTGRAD_BY_LAYER, lambda c: c["diagnostics"].get("activation_grad_norm")),
        (PARAMGRAD_BY_LAYER, lambda c: c["diagnostics"].get("param_grad_norm")),
        (DELTACKA_BY_LAYER, lambda c: c.get("delta_cka")),
        (PROBE_BY_LAYER, lambda c: (c.get("probe") or {}).get("linear")),
    ]
    for regime in sorted({cell["regime"] for cell in cells}):
        regime_cells = sorted((c for c in cells if c["regime"] == regime), key=lambda c: c["strategy"])
        for kind, pick in per_layer:
            series = [(cell["strategy"], pick(cell)) for cell in regime_cells if pick(cell)]
            if series:
                specs.append(PlotSpec(kind, series, out_dir / f"{kind}-{regime}.svg", title=regime))

    for strategy in sorted({cell["strategy"] for cell in cells}):
        strategy_cells = sorted((c for c in cells if c["strategy"] == strategy),
                                key=lambda c: (c["regime"] != "UNDER", c["regime"]))
        for kind, pick in per_layer:
            series = [(cell["regime"], pick(cell)) for cell in strategy_cells if pick(cell)]
            if series:
                specs.append(PlotSpec(kind, series, out_dir / f"{kind}-{strategy}-regimes.svg", title=strategy))

    scatter: Dict[str, list] = defaultdict(list)
    for cell in cells:
        if cell["accuracy_mean"] is not None and cell["trainable_params"]:
            scatter[cell["regime"]].append((cell["trainable_params"], cell["accuracy_mean"]))
    if scatter:
        specs.append(PlotSpec(ACCURACY_VS_PARAMS, sorted(scatter.items()), out_dir / f"{ACCURACY_VS_PARAMS}.svg"))
    return specs


def pretrain_plot_specs(records: List[dict], out_dir) -> List[PlotSpec]:
    """Source-domain entropy and target-batch activation gradients by layer, one series per regime."""
    out_dir = Path(out_dir)
    entropy: Dict[str, list] = defaultdict(list)
    gradient: Dict[str, list] = defaultdict(list)
    for record in records:
        regime = record["regime"]["name"]
        entropy[regime].append(record["source"]["attention_entropy"])
        gradient[regime].append(record["target"]["activation_grad_norm"])
    if not entropy:
        return []
    return [
        PlotSpec(ENTROPY_BY_LAYER, [(r, _mean_rows(rows)) for r, rows in sorted(entropy.items())],
                 out_dir / "pretrain-entropy-by-layer.svg", title="source domain"),
        PlotSpec(ACTGRAD_BY_LAYER, [(r, _mean_rows(rows)) for r, rows in sorted(gradient.items())],
                 out_dir / "pretrain-actgrad-by-layer.svg", title="target batches"),
    ]
