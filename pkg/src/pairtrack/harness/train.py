"""Training loop, evaluation, and the ablation grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericError
from ..losses import (
    Box,
    LossBundle,
    box_iou,
    giou_loss,
    l1_box_loss,
    total_loss,
    weighted_focal,
)
from ..numerics import Tensor, add, backward, constant, no_grad, smul
from .config import RunConfig
from .data import SyntheticSample, complementary_split, generate_dataset
from .metrics import MetricsRecord, usage_entropy
from .model import ForwardOutput, Tracker, gaussian_center_map


@dataclass
class TrackResult:
    box_prediction: Box
    bundle: LossBundle
    output: ForwardOutput


def _mean_balance(output: ForwardOutput) -> Tensor:
    if not output.balances:
        return constant(np.asarray(0.0))
    acc = output.balances[0]
    for b in output.balances[1:]:
        acc = add(acc, b)
    return smul(acc, 1.0 / len(output.balances))


def forward_track(sample: SyntheticSample, model: Tracker) -> TrackResult:
    """One tracking forward pass plus the full loss bundle against gt."""
    output = model.forward(sample)
    gt_map = gaussian_center_map(model.cfg.heatmap_side, sample.gt_box)
    cls = weighted_focal(output.center_map, gt_map)
    iou = giou_loss(output.box_tensor, sample.gt_box)
    l1 = l1_box_loss(output.box_tensor, sample.gt_box)
    eb = _mean_balance(output)
    bundle = total_loss(cls, iou, l1, eb, model.cfg.loss_weights())
    return TrackResult(box_prediction=output.box, bundle=bundle, output=output)


@dataclass
class TrainResult:
    records: list[MetricsRecord]
    model: Tracker
    initial_loss: float
    final_loss: float


def _batch_loss(model: Tracker, samples: list[SyntheticSample], step: int):
    """Mean loss bundle over samples in a fixed reduction order."""
    components = {"cls": 0.0, "iou": 0.0, "l1": 0.0, "eb": 0.0, "total": 0.0}
    usage = np.zeros(model.cfg.n_experts, dtype=np.int64)
    total_t = None
    for sample in samples:
        try:
            result = forward_track(sample, model)
        except NumericError as exc:
            raise NumericError(f"{exc} (training step {step})") from exc
        values = result.bundle.values()
        for name in components:
            value = values[name]
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss component '{name}' at step {step}"
                )
            components[name] += value
        usage += result.output.usage_histogram(model.cfg.n_experts)
        total_t = result.bundle.total if total_t is None else add(total_t, result.bundle.total)
    n = len(samples)
    for name in components:
        components[name] /= n
    return smul(total_t, 1.0 / n), components, usage


def evaluate(model: Tracker, dataset: list[SyntheticSample], step: int = 0) -> MetricsRecord:
    """Mean IoU and success rates plus loss components, without gradients."""
    if not dataset:
        raise ContractError("evaluate: empty dataset")
    with no_grad():
        components = {"cls": 0.0, "iou": 0.0, "l1": 0.0, "eb": 0.0, "total": 0.0}
        usage = np.zeros(model.cfg.n_experts, dtype=np.int64)
        ious = []
        for sample in dataset:
            result = forward_track(sample, model)
            for name, value in result.bundle.values().items():
                components[name] += value
            usage += result.output.usage_histogram(model.cfg.n_experts)
            ious.append(box_iou(result.box_prediction, sample.gt_box))
    n = len(dataset)
    ious = np.asarray(ious)
    return MetricsRecord(
        step=step,
        total=components["total"] / n, cls=components["cls"] / n,
        iou=components["iou"] / n, l1=components["l1"] / n, eb=components["eb"] / n,
        expert_usage=usage, entropy=usage_entropy(usage),
        mean_iou=float(ious.mean()),
        success_at_50=float((ious >= 0.5).mean()),
        success_at_70=float((ious >= 0.7).mean()),
    )


def train(cfg: RunConfig, eval_each_log: bool = True) -> TrainResult:
    """Gradient descent over deterministically cycled minibatches.

    Initial and final losses are both measured on the full training set, so
    the convergence ratio is batch-size independent. Frozen weights never
    move: the optimizer skips them.
    """
    model = Tracker(cfg)
    train_set = generate_dataset(cfg, cfg.n_train, "data")
    eval_set = generate_dataset(cfg, cfg.n_eval, "eval")
    batch = min(cfg.batch_size, len(train_set))
    records: list[MetricsRecord] = []
    initial = evaluate(model, train_set).total
    for step in range(cfg.steps):
        start = (step * batch) % len(train_set)
        samples = [train_set[(start + j) % len(train_set)] for j in range(batch)]
        model.store.zero_grad()
        loss_t, components, usage = _batch_loss(model, samples, step)
        if step % cfg.log_interval == 0 or step == cfg.steps - 1:
            eval_rec = evaluate(model, eval_set, step) if eval_each_log else None
            records.append(MetricsRecord(
                step=step,
                total=components["total"], cls=components["cls"],
                iou=components["iou"], l1=components["l1"], eb=components["eb"],
                expert_usage=usage, entropy=usage_entropy(usage),
                mean_iou=eval_rec.mean_iou if eval_rec else 0.0,
                success_at_50=eval_rec.success_at_50 if eval_rec else 0.0,
                success_at_70=eval_rec.success_at_70 if eval_rec else 0.0,
            ))
        backward(loss_t)
        model.store.sgd_step(cfg.lr)
    final = evaluate(model, train_set).total
    return TrainResult(records=records, model=model, initial_loss=initial, final_loss=final)


ABLATION_VARIANTS = (
    ("baseline", (False, False, False, False)),
    ("+moe", (True, False, False, False)),
    ("+moe+mff", (True, True, False, False)),
    ("full", (True, True, True, True)),
)


@dataclass
class AblationRow:
    name: str
    trainable_params: int
    adapter_params: int
    record: MetricsRecord


def ablate(cfg: RunConfig) -> list[AblationRow]:
    """Train the standard variant ladder on shared data and compare."""
    rows = []
    test_split = complementary_split(generate_dataset(cfg, cfg.n_eval, "eval"))
    for name, toggles in ABLATION_VARIANTS:
        variant_cfg = cfg.with_toggles(*toggles)
        result = train(variant_cfg, eval_each_log=False)
        record = evaluate(result.model, test_split)
        rows.append(AblationRow(
            name=name,
            trainable_params=result.model.n_trainable(),
            adapter_params=result.model.n_adapter_params(),
            record=record,
        ))
    return rows
