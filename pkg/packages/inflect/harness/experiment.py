"""
Pretraining, fine-tuning and the multi-seed grid.

Layout of one experiment under ``out_dir``::

    seed-<seed>/task.json
    seed-<seed>/<regime>/pretrained.pt
    seed-<seed>/<regime>/pretrain.json
    seed-<seed>/<regime>/<strategy>/{report.json, metrics.csv, probes.csv, locator.json}
    aggregate.json, summary.csv
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from lightning import seed_everything
from lightning.pytorch.trainer import Trainer
from tqdm import tqdm

from inflect.diagnostics.callbacks import LayerDiagnosticsCallback
from inflect.diagnostics.cka import delta_cka_profile
from inflect.diagnostics.locator import locate
from inflect.diagnostics.metrics import ACTIVATION_GRAD, ENTROPY, DiagnosticsLog, collect_cls, profile_model
from inflect.diagnostics.probes import ProbeReport, probe_sweep
from inflect.errors import DegenerateInputError, InvalidInputError, NumericError, RunFailure, StateError
from inflect.harness.aggregate import aggregate_reports, summary_table
from inflect.harness.specs import (EXPLICIT, FROZEN_ALL, FULL, LORA_EVERYWHERE, SELECTIVE_LORA, SHALLOW,
                                   ExperimentConfig, RegimeSpec, StrategySpec)
from inflect.harness.tasks import TransferTask, generate_task
from inflect.model import architectures
from inflect.model.architectures.encoder import MiniEncoder, count_total, count_trainable, set_strategy
from inflect.model.checkpoint import load_checkpoint, save_checkpoint
from inflect.model.data_module import TransferDataModule
from inflect.model.dataset import TokenSet
from inflect.model.lightning_module import TransferModule
from inflect.model.lora import merge, mount
from inflect.report.artifacts import run_header, write_frame, write_json, write_metrics_csv, write_probe_csv
from inflect.utility.seeding import derive_seed, stream_seeds

logger = logging.getLogger(__name__)

COMPLETED = "completed"
FAILED = "failed"


def build_trainer(max_steps: int = -1, max_epochs: Optional[int] = None, callbacks=(), progress: bool = False) -> Trainer:
    return Trainer(
        accelerator="cpu",
        devices=1,
        precision="64-true",
        deterministic=True,
        max_steps=max_steps,
        max_epochs=max_epochs if max_epochs is not None else -1,
        logger=False,
        enable_checkpointing=False,
        enable_progress_bar=progress,
        enable_model_summary=False,
        num_sanity_val_steps=0,
        callbacks=list(callbacks),
    )


def fit(model: MiniEncoder, train: TokenSet, lr: float, weight_decay: float, batch_size: int, seed: int,
        max_steps: int = -1, max_epochs: Optional[int] = None, progress: bool = False) -> DiagnosticsLog:
    """
    Train whatever is currently trainable and return the per-step diagnostics.

    Divergence (a non-finite loss or logit) surfaces as RunFailure carrying
    the diagnostics recorded so far.
    """
    seed_everything(seed)
    module = TransferModule(model, lr=lr, weight_decay=weight_decay)
    diagnostics = LayerDiagnosticsCallback(model.num_layers)
    data_module = TransferDataModule(train, batch_size=batch_size, seed=seed)
    trainer = build_trainer(max_steps=max_steps, max_epochs=max_epochs, callbacks=[diagnostics], progress=progress)
    try:
        trainer.fit(module, train_dataloaders=data_module.train_dataloader())
    except NumericError as e:
        raise RunFailure(f"training diverged after {len(diagnostics.diagnostics_log)} steps: {e}",
                         diagnostics={"steps": diagnostics.diagnostics_log}) from e
    return diagnostics.diagnostics_log


def evaluate(model: MiniEncoder, token_set: TokenSet, batch_size: int = 256) -> float:
    """Accuracy on ``token_set`` in eval mode."""
    module = TransferModule(model, lr=0.0)
    data_module = TransferDataModule(None, val=token_set, val_batch_size=batch_size)
    results = build_trainer().validate(module, dataloaders=data_module.val_dataloader(), verbose=False)
    return float(results[0]["val_acc"])


def frozen_checksum(model: MiniEncoder) -> str:
    digest = hashlib.sha256()
    for name, param in model.named_parameters():
        if not param.requires_grad:
            digest.update(name.encode("utf-8"))
            digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


@dataclass
class PretrainResult:
    checkpoint: Path
    record: dict


def pretrain(model: MiniEncoder, task: TransferTask, regime: RegimeSpec, seed: int,
             run_dir, eval_batch_size: int = 256, progress: bool = False) -> PretrainResult:
    """
    Train every parameter on the source domain for ``regime.source_epochs``
    epochs and save the checkpoint.

    The summary record holds mean max-softmax and per-layer entropy on held-out
    source data and per-layer activation-gradient norms on target batches.
    """
    if getattr(model, "pretrained_regime", None) is not None:
        raise StateError(f"model was already pretrained ({model.pretrained_regime})")
    run_dir = Path(run_dir)
    seeds = stream_seeds(seed)

    set_strategy(model, architectures.FULL)
    log = fit(model, task.source_train, regime.lr, regime.weight_decay, regime.batch_size,
              seed=seeds["pretrain"], max_epochs=regime.source_epochs, progress=progress)
    model.pretrained_regime = regime.name

    source = profile_model(model, task.source_val, eval_batch_size)
    target = profile_model(model, task.target_val, eval_batch_size)
    record = {
        "header": run_header(seed, regime=regime.name),
        "regime": dataclasses.asdict(regime),
        "steps": len(log),
        "source": source.to_dict(),
        "target": target.to_dict(),
    }
    logger.info(f"[{regime.name} seed {seed}] source confidence {source.confidence:.4f}, "
                f"min layer entropy {min(source.attention_entropy):.4f}, "
                f"target mean activation grad {np.mean(target.activation_grad_norm):.3e}")

    checkpoint = save_checkpoint(model, run_dir / "pretrained.pt", meta={
        "root_seed": seed, "stream_seeds": seeds, "regime": regime.name})
    write_json(record, run_dir / "pretrain.json")
    return PretrainResult(checkpoint, record)


@dataclass
class RunReport:
    seed: int
    regime: str
    strategy: str
    status: str = COMPLETED
    header: dict = field(default_factory=dict)
    trainable_params: int = 0
    total_params: int = 0
    steps: int = 0
    band: List[int] = field(default_factory=list)
    locator: Optional[dict] = None
    diagnostics: Optional[DiagnosticsLog] = None
    delta_cka: List[float] = field(default_factory=list)
    probe: Optional[ProbeReport] = None
    final_accuracy: Optional[float] = None
    frozen_checksum: Optional[str] = None
    warnings: List[str] = field(default_factory=list)
    error: Optional[str] = None
    model: Optional[MiniEncoder] = field(default=None, repr=False, compare=False)

    @property
    def run_id(self) -> str:
        return f"{self.regime}/{self.strategy}/seed-{self.seed}"

    def to_dict(self) -> dict:
        record = {
            "run_id": self.run_id,
            "seed": self.seed,
            "regime": self.regime,
            "strategy": self.strategy,
            "status": self.status,
            "header": self.header,
            "trainable_params": self.trainable_params,
            "total_params": self.total_params,
            "steps": self.steps,
            "band": list(self.band),
            "locator": self.locator,
            "final_accuracy": self.final_accuracy,
            "frozen_checksum": self.frozen_checksum,
            "warnings": list(self.warnings),
            "error": self.error,
            "diagnostics": self.diagnostics.summary() if self.diagnostics is not None and len(self.diagnostics) else None,
            "delta_cka": list(self.delta_cka),
            "delta_cka_halves": _halves(self.delta_cka),
            "probe": self.probe.to_dict() if self.probe is not None else None,
        }
        return record


def _halves(values: Sequence[float]) -> Optional[Dict[str, float]]:
    """Mean over the lower and upper half of the layers (the middle layer joins the upper half)."""
    if not values:
        return None
    middle = len(values) // 2
    lower = values[:middle] or values
    return {"lower": float(np.mean(lower)), "upper": float(np.mean(values[middle:]))}


def calibrate(model: MiniEncoder, task: TransferTask, strategy: StrategySpec, experiment: ExperimentConfig,
              seed: int) -> Optional[DiagnosticsLog]:
    """Classifier-only training on a copy of ``model``; the copy is discarded, the profiles are returned."""
    steps = experiment.locator.calibration_steps
    if steps == 0:
        return None
    scratch = copy.deepcopy(model)
    set_strategy(scratch, architectures.FROZEN_BACKBONE)
    return fit(scratch, task.target_train, strategy.lr, strategy.weight_decay, strategy.batch_size,
               seed=seed, max_steps=steps, progress=False)


def resolve_band(strategy: StrategySpec, calibration: Optional[DiagnosticsLog], experiment: ExperimentConfig,
                 num_layers: int, warnings: List[str]) -> tuple:
    """Pick the adapter band and return (band, locator result or None)."""
    fallback = list(strategy.band) or list(range(num_layers))
    if calibration is None:
        if strategy.band_source != EXPLICIT:
            warnings.append("no calibration steps; using the explicit band")
        return fallback, None

    method = strategy.band_source if strategy.band_source != EXPLICIT else experiment.locator.method
    try:
        result = locate(calibration.means(ENTROPY), calibration.means(ACTIVATION_GRAD),
                        dataclasses.replace(experiment.locator, method=method))
    except DegenerateInputError as e:
        message = f"locator input degenerate ({e}); falling back to band {fallback}"
        logger.warning(message)
        warnings.append(message)
        return fallback, None
    if strategy.band_source == EXPLICIT:
        return fallback, result
    return list(result.band), result


def apply_strategy(model: MiniEncoder, strategy: StrategySpec, band: Sequence[int], lora_seed: int) -> None:
    if strategy.name == SHALLOW:
        set_strategy(model, architectures.SHALLOW, k=strategy.k)
    elif strategy.name == FULL:
        set_strategy(model, architectures.FULL)
    elif strategy.name == SELECTIVE_LORA:
        mount(model, strategy.lora.with_layers(band), seed=lora_seed)
    elif strategy.name == LORA_EVERYWHERE:
        mount(model, strategy.lora.with_layers(range(model.num_layers)), seed=lora_seed)
    elif strategy.name == FROZEN_ALL:
        set_strategy(model, architectures.FROZEN_ALL)
    else:
        raise InvalidInputError(f"unknown strategy '{strategy.name}'")


def finetune(checkpoint, task: TransferTask, strategy: StrategySpec, seed: int,
             experiment: ExperimentConfig, regime: Optional[str] = None) -> RunReport:
    """
    Fine-tune a pretrained checkpoint on the target domain with one strategy.

    Diagnostics are recorded on every step for every layer. ΔCKA compares
    validation [CLS] representations cached just before the first step and
    after the last one.
    """
    model, meta = load_checkpoint(checkpoint)
    regime = regime or meta.get("regime", "UNKNOWN")
    seeds = stream_seeds(seed)
    report = RunReport(seed=seed, regime=regime, strategy=strategy.label,
                       header=run_header(seed, regime=regime, strategy=strategy.to_dict()))

    calibration = calibrate(model, task, strategy, experiment, seeds["calibrate"])
    band, located = resolve_band(strategy, calibration, experiment, model.num_layers, report.warnings)
    report.locator = located.to_dict() if located is not None else None
    report.band = list(band) if strategy.uses_lora else []

    apply_strategy(model, strategy, band, seeds["lora"])
    report.trainable_params = count_trainable(model)
    report.total_params = count_total(model)
    frozen = frozen_checksum(model)

    cka_set = task.target_val.head(experiment.diagnostics.cka_samples)
    batch_size = experiment.diagnostics.eval_batch_size
    before = collect_cls(model, cka_set, batch_size)

    log = DiagnosticsLog(model.num_layers)
    if strategy.steps > 0:
        log = fit(model, task.target_train, strategy.lr, strategy.weight_decay, strategy.batch_size,
                  seed=seeds["finetune"], max_steps=strategy.steps, progress=experiment.progress)
    report.steps = len(log)
    report.diagnostics = log

    if frozen_checksum(model) != frozen:
        raise RunFailure("frozen parameters changed during fine-tuning", diagnostics={"steps": log})
    report.frozen_checksum = frozen

    after = collect_cls(model, cka_set, batch_size)
    report.delta_cka = delta_cka_profile(before, after, experiment.diagnostics.pca_dim)
    report.final_accuracy = evaluate(model, task.target_val, batch_size)
    report.probe = probe_sweep(model, task.target_train, task.target_val,
                               dataclasses.replace(experiment.probe, seed=seeds["probe"]))
    report.model = model
    logger.info(f"[{report.run_id}] accuracy {report.final_accuracy:.4f}, trainable {report.trainable_params}, "
                f"band {report.band}")
    return report


def export_merged(report: RunReport, path) -> Path:
    """Save a copy of the fine-tuned model with every adapter folded into its base weight."""
    if report.model is None:
        raise StateError("report carries no model to merge")
    merged = copy.deepcopy(report.model).eval()
    merge(merged)
    return save_checkpoint(merged, path, meta={"root_seed": report.seed, "regime": report.regime,
                                               "strategy": report.strategy, "merged": True})


def write_run(report: RunReport, run_dir) -> Path:
    run_dir = Path(run_dir)
    if report.diagnostics is not None:
        write_metrics_csv(report.diagnostics, run_dir / "metrics.csv")
    if report.probe is not None:
        write_probe_csv(report.probe, run_dir / "probes.csv")
    if report.locator is not None:
        write_json({"header": report.header, **report.locator}, run_dir / "locator.json")
    return write_json(report.to_dict(), run_dir / "report.json")


def failed_report(seed: int, regime: str, strategy: StrategySpec, error: Exception) -> RunReport:
    report = RunReport(seed=seed, regime=regime, strategy=strategy.label, status=FAILED,
                       header=run_header(seed, regime=regime, strategy=strategy.to_dict()), error=str(error))
    steps = getattr(error, "diagnostics", {}).get("steps")
    if isinstance(steps, DiagnosticsLog):
        report.diagnostics = steps
        report.steps = len(steps)
    return report


def task_for_seed(experiment: ExperimentConfig, seed: int) -> TransferTask:
    return generate_task(dataclasses.replace(experiment.task, seed=derive_seed(seed, "data")))


def run_seed(experiment: ExperimentConfig, seed: int, out_dir=None) -> List[RunReport]:
    """Both regimes and every strategy for one root seed; failed runs are reported, not raised."""
    out_dir = Path(out_dir or experiment.out_dir) / f"seed-{seed}"
    task = task_for_seed(experiment, seed)
    write_json({"header": run_header(seed), **task.summary()}, out_dir / "task.json")

    reports = []
    for regime in experiment.regimes:
        regime_dir = out_dir / regime.name
        model = MiniEncoder(experiment.model, seed=derive_seed(seed, "init"))
        try:
            checkpoint = pretrain(model, task, regime, seed, regime_dir,
                                  experiment.diagnostics.eval_batch_size, experiment.progress).checkpoint
        except RunFailure as e:
            logger.error(f"Pretraining {regime.name} for seed {seed} failed: {e}")
            for strategy in experiment.strategies:
                report = failed_report(seed, regime.name, strategy, e)
                write_run(report, regime_dir / strategy.label)
                reports.append(report)
            continue

        for strategy in experiment.strategies:
            try:
                report = finetune(checkpoint, task, strategy, seed, experiment, regime=regime.name)
            except RunFailure as e:
                logger.error(f"Run {regime.name}/{strategy.label}/seed-{seed} failed: {e}")
                report = failed_report(seed, regime.name, strategy, e)
            write_run(report, regime_dir / strategy.label)
            report.model = None
            reports.append(report)
    return reports


def calibration_bands(experiment: ExperimentConfig, regime_name: str, seeds: Sequence[int], out_dir) -> Dict[int, list]:
    """Pretrain, calibrate and locate the selective-lora band for each seed, without fine-tuning."""
    regime = experiment.regime(regime_name)
    strategy = experiment.strategy(SELECTIVE_LORA)
    bands = {}
    for seed in seeds:
        task = task_for_seed(experiment, seed)
        model = MiniEncoder(experiment.model, seed=derive_seed(seed, "init"))
        checkpoint = pretrain(model, task, regime, seed, Path(out_dir) / f"seed-{seed}" / regime.name,
                              experiment.diagnostics.eval_batch_size).checkpoint
        model, _ = load_checkpoint(checkpoint)
        calibration = calibrate(model, task, strategy, experiment, stream_seeds(seed)["calibrate"])
        bands[seed], _ = resolve_band(strategy, calibration, experiment, model.num_layers, [])
    if len({tuple(band) for band in bands.values()}) > 1:
        logger.info(f"Finding: locator bands differ across seeds for {regime.name}: {bands}")
    return bands


def multi_seed(experiment: ExperimentConfig, seeds: Optional[Sequence[int]] = None, out_dir=None) -> dict:
    """
    Run the full grid for every seed and aggregate.

    Runs execute one after another in (seed, regime, strategy) order. The
    aggregate and a summary CSV (one row per strategy) are written next to the per-run
    directories.
    """
    seeds = list(seeds if seeds is not None else experiment.seeds)
    if len(seeds) < 2:
        raise InvalidInputError(f"multi-seed aggregation needs at least 2 seeds, got {seeds}")
    out_dir = Path(out_dir or experiment.out_dir)

    records = []
    for seed in tqdm(seeds, desc="seeds", disable=not experiment.progress):
        records.extend(report.to_dict() for report in run_seed(experiment, seed, out_dir))

    aggregate = aggregate_reports(records)
    write_json(aggregate, out_dir / "aggregate.json")
    write_frame(summary_table(aggregate), out_dir / "summary.csv")
    return aggregate
