"""Benchmark orchestration: attack tables, defense checks, report emission.

Attacks fan out over (image, target) pairs, optionally on a process pool
capped by the ADMM_ADVERSARY_THREADS environment variable (unset or 0 means
serial). Results are keyed by pair and reduced in a fixed order, so serial
and parallel runs emit byte-identical reports.
"""

import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, drivers
from .classifier import (LabeledDataset, MlpModel, checkpoint_bytes,
                         init_model, load_model, model_from_bytes, train)
from .data import load_dataset
from .drivers import TargetMode, reduce_case, select_targets
from .engine import AttackResult
from .numerics import Norm

log = logging.getLogger(__name__)

IFGM_STEPS = 10


class BenchmarkError(RuntimeError):
    """Raised when an experiment cannot run as configured."""


@dataclass(frozen=True)
class TrainParams:
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    temperature: float = 1.0
    train_fraction: float = 0.8


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "digits"
    dataset_format: str = "digits"
    model_path: str | None = None
    methods: tuple[str, ...] = ("admm", "fgm", "ifgm")
    norm: Norm = Norm.L2
    cases: tuple[TargetMode, ...] = (TargetMode.AVERAGE,)
    image_count: int = 100
    seed: int = 0
    output: str | None = None
    report_format: str = "json"
    attack_overrides: dict = field(default_factory=dict)
    train: TrainParams = field(default_factory=TrainParams)
    augment_count: int = 150


@dataclass(frozen=True)
class BenchmarkReport:
    meta: dict
    rows: list

    def to_document(self) -> dict:
        return {"meta": self.meta, "rows": self.rows}


# -- report emission ----------------------------------------------------------


def _document_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"


def _document_csv(doc: dict) -> str:
    rows = doc["rows"]
    if not rows:
        return "\n"
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for row in rows:
        cells = []
        for k in keys:
            v = row.get(k)
            cells.append("N.A." if v is None else repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_report(doc: dict, path, fmt: str = "json") -> None:
    """Atomic write: temp file in the target directory, then rename."""
    text = _document_json(doc) if fmt == "json" else _document_csv(doc)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- attack execution ---------------------------------------------------------


def _pool_size() -> int:
    raw = os.environ.get("ADMM_ADVERSARY_THREADS", "")
    if not raw:
        return 0
    try:
        return max(0, int(raw))
    except ValueError:
        log.warning("ignoring non-integer ADMM_ADVERSARY_THREADS=%r", raw)
        return 0


def _run_one(model: MlpModel, x0, target: int, method: str, norm: Norm,
             overrides: dict) -> AttackResult:
    if method == "admm":
        return drivers.attack(model, x0, target, norm, **overrides)
    if method in ("fgm", "ifgm"):
        steps = 1 if method == "fgm" else IFGM_STEPS
        grid = baselines.default_grid(norm)
        return baselines.grid_search_attack(model, x0, target, grid, steps, norm)
    raise BenchmarkError(f"unknown attack method {method!r}")


_WORKER_MODEL: MlpModel | None = None


def _worker_init(model_blob: bytes) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = model_from_bytes(model_blob)


def _worker_task(task):
    image_idx, target, method, norm, x0, overrides = task
    result = _run_one(_WORKER_MODEL, x0, target, method, norm, overrides)
    return (image_idx, target), result


def _execute_pairs(model: MlpModel, subset: LabeledDataset, plan, method: str,
                   norm: Norm, overrides: dict) -> dict:
    tasks = [
        (i, t, method, norm, subset.inputs[i], overrides)
        for i in range(len(subset))
        for t in plan.targets[i]
    ]
    workers = _pool_size()
    results = {}
    if workers <= 1:
        for task in tasks:
            image_idx, target = task[0], task[1]
            results[(image_idx, target)] = _run_one(
                model, task[4], target, method, norm, overrides
            )
    else:
        blob = checkpoint_bytes(model)
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(blob,)
        ) as pool:
            for key, result in pool.map(_worker_task, tasks, chunksize=4):
                results[key] = result
    return results


def _verify_successes(model: MlpModel, results: dict) -> None:
    from .classifier import predict

    for (image_idx, target), result in results.items():
        if result.success and predict(model, result.adversarial) != target:
            raise BenchmarkError(
                f"success for image {image_idx} target {target} failed re-verification"
            )


def _select_images(model: MlpModel, dataset: LabeledDataset, image_count: int,
                   seed: int) -> LabeledDataset:
    from .classifier import _forward_batch

    if image_count < 1:
        raise BenchmarkError("image_count must be at least 1")
    logits = _forward_batch(model, dataset.inputs)[-1]
    correct = np.flatnonzero(np.argmax(logits, axis=1) == dataset.labels)
    if len(correct) < image_count:
        raise BenchmarkError(
            f"need {image_count} correctly classified images, have {len(correct)} "
            f"(short by {image_count - len(correct)})"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(correct, size=image_count, replace=False))
    return dataset.subset(chosen)


def _aggregate(per_image: list, method: str, case: TargetMode) -> dict:
    successes = [r for r in per_image if r.success]
    asr = 100.0 * len(successes) / len(per_image)
    row = {"method": method, "case": case.value, "asr_pct": asr}
    for key in ("l0", "l1", "l2", "linf"):
        row[f"mean_{key}"] = (
            float(np.mean([r.distortions[key] for r in successes]))
            if successes else None
        )
    return row


def _bench_on_model(model: MlpModel, pool: LabeledDataset,
                    config: ExperimentConfig):
    """Shared core: sample, plan targets, attack, reduce; returns rows + raw."""
    subset = _select_images(model, pool, config.image_count, config.seed)
    methods = list(config.methods)
    if config.norm not in baselines.BASELINE_NORMS:
        skipped = [m for m in methods if m != "admm"]
        if skipped:
            log.info("no %s baseline for norm %s; skipping", skipped, config.norm.value)
        methods = [m for m in methods if m == "admm"]
    rows = []
    raw = {}
    for case in config.cases:
        plan = select_targets(subset, model, case, config.seed)
        for method in methods:
            results = _execute_pairs(model, subset, plan, method, config.norm,
                                     config.attack_overrides)
            _verify_successes(model, results)
            per_image = [
                reduce_case([results[(i, t)] for t in plan.targets[i]], case)
                for i in range(len(subset))
            ]
            rows.append(_aggregate(per_image, method, case))
            raw[(method, case)] = {"pairs": results, "per_image": per_image}
    return rows, raw, subset


def _meta(config: ExperimentConfig, model: MlpModel, extra: dict | None = None) -> dict:
    meta = {
        "seed": config.seed,
        "model_sha256": hashlib.sha256(checkpoint_bytes(model)).hexdigest(),
        "config": {
            "dataset": config.dataset,
            "dataset_format": config.dataset_format,
            "model_path": config.model_path,
            "methods": list(config.methods),
            "norm": config.norm.value,
            "cases": [c.value for c in config.cases],
            "image_count": config.image_count,
            "report_format": config.report_format,
            "attack_overrides": {k: str(v) for k, v in
                                 sorted(config.attack_overrides.items())},
        },
    }
    if extra:
        meta.update(extra)
    return meta


def run_benchmark_detailed(config: ExperimentConfig):
    if config.model_path is None:
        raise BenchmarkError("benchmark needs a model checkpoint path")
    model = load_model(config.model_path)
    dataset = load_dataset(config.dataset, config.dataset_format)
    rows, raw, subset = _bench_on_model(model, dataset, config)
    report = BenchmarkReport(meta=_meta(config, model), rows=rows)
    if config.output:
        write_report(report.to_document(), config.output, config.report_format)
    return report, raw, model, subset


def run_benchmark(config: ExperimentConfig) -> BenchmarkReport:
    report, _, _, _ = run_benchmark_detailed(config)
    return report


# -- defense and transfer experiments -----------------------------------------


def _split_dataset(dataset: LabeledDataset, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    cut = int(len(dataset) * fraction)
    return dataset.subset(order[:cut]), dataset.subset(order[cut:])


def _train_fresh(dataset: LabeledDataset, params: TrainParams, seed: int,
                 temperature: float) -> MlpModel:
    dims = (dataset.inputs.shape[1], *params.hidden, int(dataset.labels.max()) + 1)
    model = init_model(dims, seed=seed, temperature=temperature)
    return train(model, dataset, params.epochs, params.batch_size, params.lr, seed)


def distillation_experiment(config: ExperimentConfig, temperatures):
    """Train one model per softmax temperature and attack each of them."""
    dataset = load_dataset(config.dataset, config.dataset_format)
    train_split, eval_split = _split_dataset(dataset, config.train.train_fraction,
                                             config.seed)
    reports = {}
    for temperature in temperatures:
        model = _train_fresh(train_split, config.train, config.seed, temperature)
        rows, raw, _ = _bench_on_model(model, eval_split, config)
        for row in rows:
            row["temperature"] = temperature
        reports[temperature] = (
            BenchmarkReport(
                meta=_meta(config, model, {"temperature": temperature}), rows=rows
            ),
            raw,
            model,
        )
    if config.output:
        combined = {
            "meta": {"seed": config.seed, "temperatures": list(temperatures)},
            "rows": [row for t in temperatures for row in reports[t][0].rows],
        }
        write_report(combined, config.output, config.report_format)
    return reports


def adversarial_training_experiment(config: ExperimentConfig):
    """Retrain on self-generated adversarial examples and compare distortions.

    The comparison covers the undefended model and the model retrained with
    this package's L2 examples only; no third-party attack corpus is mixed in.
    """
    dataset = load_dataset(config.dataset, config.dataset_format)
    train_split, eval_split = _split_dataset(dataset, config.train.train_fraction,
                                             config.seed)
    base = _train_fresh(train_split, config.train, config.seed,
                        config.train.temperature)

    source_cfg = replace(config, image_count=config.augment_count,
                         methods=("admm",), cases=(TargetMode.AVERAGE,),
                         norm=Norm.L2)
    _, raw, source_subset = _bench_on_model(base, train_split, source_cfg)
    pairs = raw[("admm", TargetMode.AVERAGE)]["pairs"]
    adv_inputs, adv_labels = [], []
    for (image_idx, _target), result in sorted(pairs.items()):
        if result.success:
            adv_inputs.append(result.adversarial)
            adv_labels.append(source_subset.labels[image_idx])
    if adv_inputs:
        enlarged = LabeledDataset(
            np.vstack([train_split.inputs, np.array(adv_inputs)]),
            np.concatenate([train_split.labels, np.array(adv_labels, dtype=np.int64)]),
        )
    else:
        enlarged = train_split
    retrained = _train_fresh(enlarged, config.train, config.seed,
                             config.train.temperature)

    eval_cfg = replace(config, methods=("admm",), norm=Norm.L2)
    rows = []
    details = {}
    for name, model in (("undefended", base), ("adversarially_trained", retrained)):
        model_rows, model_raw, _ = _bench_on_model(model, eval_split, eval_cfg)
        for row in model_rows:
            row["model"] = name
            rows.append(row)
        details[name] = (model, model_raw)
    report = BenchmarkReport(
        meta=_meta(eval_cfg, base, {"injected_examples": len(adv_inputs)}),
        rows=rows,
    )
    if config.output:
        write_report(report.to_document(), config.output, config.report_format)
    return report, details


def transferability_sweep(source_model: MlpModel, transfer_model: MlpModel,
                          kappa_values, config: ExperimentConfig):
    """Generate at growing confidence on the source, measure transfer ASR."""
    from .classifier import predict

    if source_model.input_dim != transfer_model.input_dim or \
            source_model.num_classes != transfer_model.num_classes:
        raise BenchmarkError("source and transfer models disagree in shape")
    dataset = load_dataset(config.dataset, config.dataset_format)
    _, eval_split = _split_dataset(dataset, config.train.train_fraction, config.seed)
    subset = _select_images(source_model, eval_split, config.image_count, config.seed)
    plan = select_targets(subset, source_model, TargetMode.AVERAGE, config.seed)
    rows = []
    raw = {}
    for kappa in kappa_values:
        overrides = dict(config.attack_overrides)
        overrides.update(kappa=float(kappa), kappa_report=float(kappa))
        results = _execute_pairs(source_model, subset, plan, "admm", Norm.L2,
                                 overrides)
        _verify_successes(source_model, results)
        total = len(results)
        generated = [(key, r) for key, r in sorted(results.items()) if r.success]
        transferred = sum(
            1 for (_, target), r in generated
            if predict(transfer_model, r.adversarial) == target
        )
        rows.append({
            "kappa": float(kappa),
            "generation_asr_pct": 100.0 * len(generated) / total,
            "transfer_asr_pct": 100.0 * transferred / total,
        })
        raw[float(kappa)] = results
    report = BenchmarkReport(
        meta=_meta(config, source_model, {
            "transfer_model_sha256":
                hashlib.sha256(checkpoint_bytes(transfer_model)).hexdigest(),
            "kappa_values": [float(k) for k in kappa_values],
        }),
        rows=rows,
    )
    if config.output:
        write_report(report.to_document(), config.output, config.report_format)
    return report, raw
