"""Training and evaluation.

Nesterov SGD with warmup + cosine decay, deterministic seeded batching, the
graph-scale-aware sample preparation (including per-sample geometric
adjacency stacks), and top-1/confusion reporting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape
from .features import BRANCHES, apply_graph_scale, bone_vectors, bone_branch, \
    joint_branch, mirror_second_body, motion_branch
from .graph import LAYOUTS, geometric_adjacency
from .model import ModelConfig, TwoPersonGCN, build_model
from .skeleton_io import DatasetManifest, SkeletonSequence, load_sample, resample_temporal


class DataEmpty(Exception):
    pass


class ClassCountMismatch(Exception):
    pass


@dataclass
class TrainConfig:
    epochs: int = 65
    warmup_epochs: int = 5
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0002
    batch_size: int = 16
    seed: int = 0
    lr_schedule: str = "cosine"  # or "step"
    loss: str = "cross_entropy"

    def __post_init__(self):
        if not self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))


class NesterovSGD:
    """SGD with Nesterov momentum and L2 weight decay folded into the gradient."""

    def __init__(self, params: list[Parameter], momentum: float = 0.9,
                 weight_decay: float = 0.0, nesterov: bool = True):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self._buffers = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float):
        for p, buf in zip(self.params, self._buffers):
            g = p.grad
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.data
            buf *= self.momentum
            buf += g
            update = g + self.momentum * buf if self.nesterov else buf
            p.data -= lr * update

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def lr_at(epoch: int, step: int, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Learning rate at a (epoch, step) position: linear warmup, then decay."""
    if epoch >= config.epochs:
        raise ValueError(f"epoch {epoch} out of range for {config.epochs}-epoch run")
    global_step = epoch * steps_per_epoch + step
    warm_total = config.warmup_epochs * steps_per_epoch
    if global_step < warm_total:
        return config.base_lr * (global_step + 1) / warm_total
    if config.lr_schedule == "step":
        # fixed 10x drops at 60% and 80% of the run
        frac = epoch / config.epochs
        factor = 0.01 if frac >= 0.8 else (0.1 if frac >= 0.6 else 1.0)
        return config.base_lr * factor
    total = config.epochs * steps_per_epoch
    progress = (global_step - warm_total) / (total - warm_total)
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class GraphSample:
    """One graph-level input: four streams plus its optional private adjacency."""

    streams: dict[str, np.ndarray]  # tag -> [6, T, V]
    raw: np.ndarray  # [C, T, V] raw coordinates (batch-scope geometric)
    adjacency: np.ndarray | None  # [K, V, V] normalized stack or None
    label: int
    sample_id: str


def _graph_features(x: np.ndarray, topology) -> dict[str, np.ndarray]:
    bones = bone_vectors(x, topology)
    return {"J": joint_branch(x, topology), "B": bone_branch(x, topology),
            "JM": motion_branch(x), "BM": motion_branch(bones)}


def _sample_graphs(seq: SkeletonSequence, config: ModelConfig, *, mode: str,
                   mirror: str = "off") -> list[GraphSample]:
    topology = LAYOUTS[config.layout]
    if mirror != "off" and not np.any(seq.data[:, :, 1, :]):
        seq = mirror_second_body(seq, topology, mode=mirror)
    seq = resample_temporal(seq, config.frames)
    graphs = []
    for x in apply_graph_scale(seq, mode):
        adjacency = None
        if config.strategy == "geometric" and config.geometric_scope == "sample":
            adj = geometric_adjacency(x.transpose(1, 2, 0).astype(np.float64),
                                      topology, two_person=x.shape[2] != topology.joint_count)
            adjacency = adj.A_norm.astype(config.np_dtype)
        graphs.append(GraphSample(streams=_graph_features(x, topology), raw=x,
                                  adjacency=adjacency, label=seq.label,
                                  sample_id=seq.sample_id))
    return graphs


def prepare_groups(manifest: DatasetManifest, config: ModelConfig, *, root=None,
                   mirror: str = "off", training: bool = False) -> list[list[GraphSample]]:
    """Load and preprocess every sample; one group of graphs per sample.

    Groups have one graph (mutual), two orders (symmetry, and randomswap during
    training, where the loop picks one per epoch), or two bodies (baseline).
    """
    if not manifest.entries:
        raise DataEmpty("manifest has no entries")
    if config.num_classes != manifest.num_classes:
        raise ClassCountMismatch(
            f"model expects {config.num_classes} classes, manifest has {manifest.num_classes}")
    mode = config.mode
    if mode == "randomswap":
        mode = "symmetry" if training else "mutual"
    groups = []
    for entry in manifest.entries:
        seq = load_sample(entry, root=root)
        groups.append(_sample_graphs(seq, config, mode=mode, mirror=mirror))
    return groups


def _batch_adjacency(graphs: list[GraphSample], config: ModelConfig) -> np.ndarray | None:
    if config.strategy != "geometric":
        return None
    if config.geometric_scope == "sample":
        return np.stack([g.adjacency for g in graphs])
    # batch scope: one stack from the batch-mean sequence
    topology = LAYOUTS[config.layout]
    mean_raw = np.mean([g.raw for g in graphs], axis=0)
    adj = geometric_adjacency(mean_raw.transpose(1, 2, 0).astype(np.float64), topology,
                              two_person=mean_raw.shape[2] != topology.joint_count)
    stack = adj.A_norm.astype(config.np_dtype)
    return np.repeat(stack[None], len(graphs), axis=0)


def _forward_batch(model: TwoPersonGCN, graphs: list[GraphSample], config: ModelConfig):
    streams = {tag: np.stack([g.streams[tag] for g in graphs]) for tag in BRANCHES}
    return model(streams, _batch_adjacency(graphs, config))


@dataclass
class EvalReport:
    top1: float
    per_class: np.ndarray
    confusion: np.ndarray  # [true, predicted]
    count: int

    def to_dict(self) -> dict:
        return {"top1": self.top1, "per_class": self.per_class.tolist(),
                "confusion": self.confusion.tolist(), "count": self.count}


def evaluate_groups(model: TwoPersonGCN, groups: list[list[GraphSample]],
                    config: ModelConfig, batch_size: int = 16) -> EvalReport:
    """Top-1 accuracy with per-sample logits averaged over each sample's graphs."""
    model.eval()
    flat = [g for group in groups for g in group]
    logits = np.zeros((len(flat), config.num_classes))
    for start in range(0, len(flat), batch_size):
        chunk = flat[start:start + batch_size]
        logits[start:start + len(chunk)] = _forward_batch(model, chunk, config).data
    confusion = np.zeros((config.num_classes, config.num_classes), dtype=np.int64)
    pos = 0
    for group in groups:
        avg = logits[pos:pos + len(group)].mean(axis=0)
        pos += len(group)
        confusion[group[0].label, int(np.argmax(avg))] += 1
    totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(totals > 0, np.diag(confusion) / np.maximum(totals, 1), 0.0)
    top1 = float(np.trace(confusion)) / max(1, confusion.sum())
    return EvalReport(top1=top1, per_class=per_class, confusion=confusion,
                      count=int(confusion.sum()))


def evaluate(model: TwoPersonGCN, manifest: DatasetManifest, config: ModelConfig,
             *, root=None, batch_size: int = 16) -> EvalReport:
    groups = prepare_groups(manifest, config, root=root, training=False)
    return evaluate_groups(model, groups, config, batch_size=batch_size)


@dataclass
class TrainResult:
    metrics: list[dict]
    best_top1: float
    best_epoch: int
    checkpoint: bytes
    model: TwoPersonGCN


def train(train_manifest: DatasetManifest, model_config: ModelConfig,
          train_config: TrainConfig, *, val_manifest: DatasetManifest | None = None,
          root=None, mirror: str = "off", out_dir=None, emit=None) -> TrainResult:
    """Run the full training loop; deterministic for a fixed seed and thread count.

    Emits one metrics record per epoch and split through ``emit`` (and to
    ``out_dir/metrics.jsonl`` when given); keeps the best-validation checkpoint.
    """
    groups = prepare_groups(train_manifest, model_config, root=root, mirror=mirror,
                            training=True)
    val_groups = (prepare_groups(val_manifest, model_config, root=root, training=False)
                  if val_manifest is not None else None)

    randomswap = model_config.mode == "randomswap"
    if randomswap:
        units = groups  # pick one order per epoch below
    else:
        units = [[g] for group in groups for g in group]

    model = build_model(model_config, seed=train_config.seed)
    optimizer = NesterovSGD(model.parameters(), momentum=train_config.momentum,
                            weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    steps_per_epoch = max(1, math.ceil(len(units) / train_config.batch_size))

    metrics: list[dict] = []
    sink = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sink = (out_dir / "metrics.jsonl").open("w")

    def record(rec: dict):
        metrics.append(rec)
        if emit is not None:
            emit(rec)
        if sink is not None:
            sink.write(json.dumps(rec) + "\n")
            sink.flush()

    best_top1, best_epoch, best_state = -1.0, -1, model.save_checkpoint()
    try:
        for epoch in range(train_config.epochs):
            model.train()
            order = rng.permutation(len(units))
            if randomswap:
                coins = rng.random(len(units)) < 0.5
                epoch_units = [[units[i][1 if coins[i] else 0]] for i in order]
            else:
                epoch_units = [units[i] for i in order]
            losses, hits, seen = [], 0, 0
            for step in range(steps_per_epoch):
                batch = [u[0] for u in
                         epoch_units[step * train_config.batch_size:
                                     (step + 1) * train_config.batch_size]]
                if not batch:
                    continue
                labels = np.array([g.label for g in batch])
                model.zero_grad()
                with Tape():
                    logits = _forward_batch(model, batch, model_config)
                    loss = ad.cross_entropy_logits(logits, labels)
                ad.backward(loss)
                optimizer.step(lr_at(epoch, step, train_config, steps_per_epoch))
                losses.append(loss.item() * len(batch))
                hits += int((np.argmax(logits.data, axis=1) == labels).sum())
                seen += len(batch)
            record({"epoch": epoch, "split": "train",
                    "loss": float(np.sum(losses) / seen), "top1": hits / seen})
            if val_groups is not None:
                report = evaluate_groups(model, val_groups, model_config,
                                         batch_size=train_config.batch_size)
                record({"epoch": epoch, "split": "val", "loss": None,
                        "top1": report.top1})
                if report.top1 > best_top1:
                    best_top1, best_epoch = report.top1, epoch
                    best_state = model.save_checkpoint()
    finally:
        if sink is not None:
            sink.close()

    if val_groups is None:
        best_state = model.save_checkpoint()
        best_epoch = train_config.epochs - 1
        best_top1 = metrics[-1]["top1"] if metrics else 0.0
    if out_dir is not None:
        (out_dir / "best.ckpt").write_bytes(best_state)
        (out_dir / "last.ckpt").write_bytes(model.save_checkpoint())
    return TrainResult(metrics=metrics, best_top1=best_top1, best_epoch=best_epoch,
                       checkpoint=best_state, model=model)
