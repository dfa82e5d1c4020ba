"""The two-person GCN: layers, block assembly, and complexity accounting.

Per-frame features are mixed over the joint graph by the spatial graph
convolution (one learnable channel transform per hop subset, optional
learnable edge masks), passed through a four-branch multi-scale temporal
convolution, and gated by an attention module that scores frames and body
parts. Four input branches (joint / bone / joint motion / bone motion) are
fused mid-network by channel concatenation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .features import BRANCHES
from .graph import (LAYOUTS, LabeledAdjacency, NUM_PARTS, SkeletonTopology,
                    build_adjacency)
from .layers import BatchNorm, Linear, Module, TemporalConv, he_normal


class ConfigMismatch(Exception):
    pass


@dataclass
class ModelConfig:
    """Architecture plan plus the graph options the model is built around."""

    num_classes: int = 11
    layout: str = "ntu"
    strategy: str = "geometric"
    mode: str = "symmetry"
    frames: int = 64
    input_plan: tuple = ((6, 64), (64, 64), (64, 32))
    main_plan: tuple = ((128, 128), (128, 128), (128, 128), (128, 256),
                        (256, 256), (256, 256))
    main_strides: tuple = (2, 1, 1, 2, 1, 1)
    attention: bool = True
    edge_mask: bool = True
    reduction: int = 4
    dtype: str = "f32"
    geometric_scope: str = "sample"  # "sample" or "batch"
    interactive_all_pairs: bool = False

    def __post_init__(self):
        self.input_plan = tuple(tuple(p) for p in self.input_plan)
        self.main_plan = tuple(tuple(p) for p in self.main_plan)
        self.main_strides = tuple(self.main_strides)
        if 4 * self.input_plan[-1][1] != self.main_plan[0][0]:
            raise ConfigMismatch(
                f"4 x last input channels ({self.input_plan[-1][1]}) must equal "
                f"first main channels ({self.main_plan[0][0]})")
        if len(self.main_strides) != len(self.main_plan):
            raise ConfigMismatch("one temporal stride per main block required")
        if self.input_plan[0][0] != 6:
            raise ConfigMismatch("input branches consume 2C = 6 channels")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "f64" else np.float32

    @property
    def graphs_per_sample(self) -> int:
        return 2 if self.mode in ("symmetry", "baseline") else 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def tiny_config(**overrides) -> ModelConfig:
    """Desk-scale preset: same structure, small channels and short clips."""
    base = dict(num_classes=4, mode="mutual", frames=16,
                input_plan=((6, 16), (16, 8)), main_plan=((32, 32), (32, 64)),
                main_strides=(2, 1))
    base.update(overrides)
    return ModelConfig(**base)


class SpatialGraphConv(Module):
    """Hop-partitioned graph convolution with per-hop channel transforms.

    The fixed normalized stack can be overridden per batch element (used by
    sample-scoped geometric labeling).
    """

    def __init__(self, in_channels: int, out_channels: int, a_norm: np.ndarray,
                 rng: np.random.Generator, edge_mask: bool = True, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.hops = a_norm.shape[0]
        self.vertices = a_norm.shape[1]
        self.register_buffer("a_norm", a_norm.astype(dtype))
        fan = in_channels * self.hops
        self.hop_weights = [
            Parameter(he_normal(rng, (in_channels, out_channels), fan, dtype))
            for _ in range(self.hops)
        ]
        self.mask = (Parameter(np.ones((self.hops, self.vertices, self.vertices),
                                       dtype=dtype))
                     if edge_mask else None)

    def forward(self, x: Tensor, a_override: np.ndarray | None = None) -> Tensor:
        if x.shape[-1] != self.vertices:
            raise ad.ShapeMismatch(
                f"input joints {x.shape[-1]} vs graph vertices {self.vertices}")
        v = self.vertices
        out = None
        for d in range(self.hops):
            if a_override is None:
                base = Tensor(self.a_norm[d])
            else:
                base = Tensor(a_override[:, d][:, None].astype(self.a_norm.dtype))
            if self.mask is not None:
                mask_d = ad.reshape(ad.narrow(self.mask, 0, d, 1), (v, v))
                eff = ad.mul(base, mask_d)
            else:
                eff = base
            axes = (1, 0) if eff.ndim == 2 else (0, 1, 3, 2)
            mixed = ad.matmul(x, ad.transpose(eff, axes))
            hid = ad.transpose(mixed, (0, 2, 3, 1))
            hid = ad.matmul(hid, self.hop_weights[d])
            term = ad.transpose(hid, (0, 3, 1, 2))
            out = term if out is None else ad.add(out, term)
        return out

    def macs(self, t: int) -> int:
        v = self.vertices
        mix = self.in_channels * t * v * v
        transform = self.in_channels * self.out_channels * t * v
        return self.hops * (mix + transform)


def sgc_reference(f_in: np.ndarray, adjacency: np.ndarray, weights, max_hop: int = 2) -> np.ndarray:
    """Slow per-vertex neighborhood form of the graph convolution (test oracle).

    Walks every vertex, gathers neighbors by shortest-path distance computed
    with Floyd-Warshall, and normalizes each pair by the square roots of the
    endpoints' subset degrees. Independent of the matrix-form implementation.
    """
    v = adjacency.shape[0]
    support = adjacency != 0
    big = 10 ** 9
    dist = np.full((v, v), big, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    dist[support] = 1
    for k in range(v):
        for i in range(v):
            for j in range(v):
                if dist[i, k] + dist[k, j] < dist[i, j]:
                    dist[i, j] = dist[i, k] + dist[k, j]
    pair_w = np.where(support, adjacency, 1.0)

    b, c, t, _ = f_in.shape
    c_out = weights[0].shape[1]
    f_out = np.zeros((b, c_out, t, v), dtype=np.float64)
    for i in range(v):
        for d in range(max_hop + 1):
            if d == 0:
                members = [i]
            else:
                members = [j for j in range(v) if dist[i, j] == d]
            for j in members:
                if d == 0:
                    coef = 1.0
                else:
                    deg_i = sum(pair_w[i, jj] for jj in range(v) if dist[i, jj] == d)
                    deg_j = sum(pair_w[j, ii] for ii in range(v) if dist[j, ii] == d)
                    coef = pair_w[i, j] / (np.sqrt(deg_i) * np.sqrt(deg_j))
                contrib = np.einsum("bct,co->bot", f_in[:, :, :, j].astype(np.float64),
                                    weights[d].astype(np.float64))
                f_out[:, :, :, i] += coef * contrib
    return f_out


class _ConvBnRelu(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, dilation=1, dtype=np.float32):
        super().__init__()
        self.conv = TemporalConv(in_ch, out_ch, kernel, rng, stride=stride,
                                 dilation=dilation, dtype=dtype)
        self.bn = BatchNorm(out_ch, dtype=dtype)

    def forward(self, x):
        return ad.relu(self.bn(self.conv(x)))

    def macs(self, t, v):
        return self.conv.macs(t, v)

    def out_length(self, t):
        return self.conv.out_length(t)


class _Residual(Module):
    """Identity shortcut, or a strided 1 x 1 projection when shapes change."""

    def __init__(self, in_ch, out_ch, stride, rng, dtype=np.float32):
        super().__init__()
        self.identity = in_ch == out_ch and stride == 1
        if not self.identity:
            self.conv = TemporalConv(in_ch, out_ch, 1, rng, stride=stride, dtype=dtype)
            self.bn = BatchNorm(out_ch, dtype=dtype)

    def forward(self, x):
        if self.identity:
            return x
        return self.bn(self.conv(x))

    def macs(self, t, v):
        return 0 if self.identity else self.conv.macs(t, v)


class MultiScaleTemporalConv(Module):
    """Four-branch temporal layer: two dilated 3 x 1 convs, a max-pool branch,
    and a pointwise branch, each behind a 1 x 1 bottleneck, with a residual."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 stride: int = 1, dtype=np.float32):
        super().__init__()
        if out_channels % 4 != 0:
            raise ConfigMismatch(f"MS-TCN output channels {out_channels} not divisible by 4")
        hidden = out_channels // 4
        self.stride = stride
        self.bottle1 = _ConvBnRelu(in_channels, hidden, 1, rng, dtype=dtype)
        self.dil1 = TemporalConv(hidden, hidden, 3, rng, stride=stride, dilation=1, dtype=dtype)
        self.bottle2 = _ConvBnRelu(in_channels, hidden, 1, rng, dtype=dtype)
        self.dil2 = TemporalConv(hidden, hidden, 3, rng, stride=stride, dilation=2, dtype=dtype)
        self.bottle3 = _ConvBnRelu(in_channels, hidden, 1, rng, dtype=dtype)
        self.bottle4 = _ConvBnRelu(in_channels, hidden, 1, rng, stride=stride, dtype=dtype)
        self.bn_out = BatchNorm(out_channels, dtype=dtype)
        self.residual = _Residual(in_channels, out_channels, stride, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b1 = self.dil1(self.bottle1(x))
        b2 = self.dil2(self.bottle2(x))
        b3 = ad.temporal_maxpool(self.bottle3(x), kernel=3, stride=self.stride, padding=1)
        b4 = self.bottle4(x)
        merged = self.bn_out(ad.concat([b1, b2, b3, b4], axis=1))
        return ad.relu(ad.add(merged, self.residual(x)))

    def out_length(self, t: int) -> int:
        return self.dil1.out_length(t)

    def macs(self, t: int, v: int) -> int:
        total = self.bottle1.macs(t, v) + self.dil1.macs(t, v)
        total += self.bottle2.macs(t, v) + self.dil2.macs(t, v)
        total += self.bottle3.macs(t, v)
        total += self.bottle4.macs(t, v)
        total += self.residual.macs(t, v)
        return total


class PlainTemporalConv(Module):
    """Standard 3 x 1 temporal convolution block with the same residual rule."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 stride: int = 1, dtype=np.float32):
        super().__init__()
        self.conv = TemporalConv(in_channels, out_channels, 3, rng, stride=stride, dtype=dtype)
        self.bn = BatchNorm(out_channels, dtype=dtype)
        self.residual = _Residual(in_channels, out_channels, stride, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.relu(ad.add(self.bn(self.conv(x)), self.residual(x)))

    def out_length(self, t: int) -> int:
        return self.conv.out_length(t)

    def macs(self, t: int, v: int) -> int:
        return self.conv.macs(t, v) + self.residual.macs(t, v)


class SpatialTemporalPartAttention(Module):
    """Frame-wise and part-wise gating scores multiplied into the feature map."""

    def __init__(self, channels: int, part_ids: np.ndarray, rng: np.random.Generator,
                 reduction: int = 4, dtype=np.float32):
        super().__init__()
        part_ids = np.asarray(part_ids)
        self.channels = channels
        self.groups = int(part_ids.max()) + 1
        v = part_ids.shape[0]
        pool = np.zeros((v, self.groups), dtype=dtype)
        for g in range(self.groups):
            members = part_ids == g
            if not members.any():
                raise ConfigMismatch(f"part {g} has no joints")
            pool[members, g] = 1.0 / members.sum()
        self.register_buffer("part_pool", pool)  # columns average each part
        member = np.zeros((self.groups, v), dtype=dtype)
        member[part_ids, np.arange(v)] = 1.0
        self.register_buffer("part_expand", member)
        hidden = max(1, channels // reduction)
        self.fc_reduce = Linear(channels, hidden, rng, dtype=dtype)
        self.bn = BatchNorm(hidden, dtype=dtype)
        self.fc_frame = Linear(hidden, channels, rng, dtype=dtype)
        self.fc_part = Linear(hidden, channels, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, t, v = x.shape
        frame_pool = ad.mean(x, axis=3)  # [B, C, T]
        joint_mean = ad.mean(x, axis=2)  # [B, C, V]
        part_pool = ad.matmul(joint_mean, Tensor(self.part_pool))  # [B, C, 2P]
        cat = ad.concat([frame_pool, part_pool], axis=2)  # [B, C, T + 2P]
        length = t + self.groups
        red = self.fc_reduce(ad.transpose(cat, (0, 2, 1)))  # [B, L, C/r]
        red = ad.reshape(ad.transpose(red, (0, 2, 1)), (b, -1, length, 1))
        red = ad.relu(self.bn(red))
        red = ad.transpose(ad.reshape(red, (b, -1, length)), (0, 2, 1))  # [B, L, C/r]
        frame_scores = ad.sigmoid(self.fc_frame(ad.narrow(red, 1, 0, t)))  # [B, T, C]
        part_scores = ad.sigmoid(self.fc_part(ad.narrow(red, 1, t, self.groups)))
        frame_scores = ad.transpose(frame_scores, (0, 2, 1))  # [B, C, T]
        part_joint = ad.matmul(ad.transpose(part_scores, (0, 2, 1)),
                               Tensor(self.part_expand))  # [B, C, V]
        att = ad.mul(ad.reshape(frame_scores, (b, c, t, 1)),
                     ad.reshape(part_joint, (b, c, 1, v)))
        return ad.mul(x, att)

    def macs(self, t: int, v: int) -> int:
        length = t + self.groups
        hidden = self.fc_reduce.weight.data.shape[1]
        total = self.channels * self.groups * v  # part pooling matmul
        total += length * self.channels * hidden
        total += t * hidden * self.channels
        total += self.groups * hidden * self.channels
        total += self.channels * self.groups * v  # expanding part scores
        return total


class GcnBlock(Module):
    """One network block: graph conv + BN + ReLU, temporal layer, attention."""

    def __init__(self, in_channels: int, out_channels: int, a_norm: np.ndarray,
                 part_ids: np.ndarray, rng: np.random.Generator, *, stride: int = 1,
                 plain_tcn: bool = False, attention: bool = True,
                 edge_mask: bool = True, reduction: int = 4, dtype=np.float32):
        super().__init__()
        self.sgc = SpatialGraphConv(in_channels, out_channels, a_norm, rng,
                                    edge_mask=edge_mask, dtype=dtype)
        self.bn = BatchNorm(out_channels, dtype=dtype)
        if plain_tcn:
            self.tcn = PlainTemporalConv(out_channels, out_channels, rng,
                                         stride=stride, dtype=dtype)
        else:
            self.tcn = MultiScaleTemporalConv(out_channels, out_channels, rng,
                                              stride=stride, dtype=dtype)
        self.att = (SpatialTemporalPartAttention(out_channels, part_ids, rng,
                                                 reduction=reduction, dtype=dtype)
                    if attention else None)

    def forward(self, x: Tensor, a_override: np.ndarray | None = None) -> Tensor:
        y = ad.relu(self.bn(self.sgc(x, a_override)))
        y = self.tcn(y)
        if self.att is not None:
            y = self.att(y)
        return y

    def out_length(self, t: int) -> int:
        return self.tcn.out_length(t)

    def macs(self, t: int, v: int) -> tuple[int, int]:
        total = self.sgc.macs(t) + self.tcn.macs(t, v)
        t_out = self.tcn.out_length(t)
        if self.att is not None:
            total += self.att.macs(t_out, v)
        return total, t_out


def _two_person_part_ids(topology: SkeletonTopology, persons: int) -> np.ndarray:
    base = np.asarray(topology.part_assignment)
    return np.concatenate([base + p * NUM_PARTS for p in range(persons)])


class TwoPersonGCN(Module):
    """Four input branches fused mid-network into one main branch."""

    def __init__(self, config: ModelConfig, a_norm: np.ndarray, part_ids: np.ndarray,
                 rng: np.random.Generator):
        super().__init__()
        dtype = config.np_dtype
        self.config = config
        self.vertices = a_norm.shape[1]

        def make_branch():
            blocks = []
            for i, (c_in, c_out) in enumerate(config.input_plan):
                blocks.append(GcnBlock(
                    c_in, c_out, a_norm, part_ids, rng, stride=1,
                    plain_tcn=(i == 0), attention=config.attention,
                    edge_mask=config.edge_mask, reduction=config.reduction,
                    dtype=dtype))
            return blocks

        self.branch_joint = make_branch()
        self.branch_bone = make_branch()
        self.branch_joint_motion = make_branch()
        self.branch_bone_motion = make_branch()
        self.main = [
            GcnBlock(c_in, c_out, a_norm, part_ids, rng, stride=stride,
                     plain_tcn=False, attention=config.attention,
                     edge_mask=config.edge_mask, reduction=config.reduction,
                     dtype=dtype)
            for (c_in, c_out), stride in zip(config.main_plan, config.main_strides)
        ]
        self.head = Linear(config.main_plan[-1][1], config.num_classes, rng, dtype=dtype)

    def _branches(self):
        return {"J": self.branch_joint, "B": self.branch_bone,
                "JM": self.branch_joint_motion, "BM": self.branch_bone_motion}

    def forward(self, streams: dict[str, np.ndarray],
                a_override: np.ndarray | None = None) -> Tensor:
        """streams maps branch tag -> [B, 6, T, V] arrays; returns logits."""
        outputs = []
        branches = self._branches()
        for tag in BRANCHES:
            x = Tensor(np.asarray(streams[tag], dtype=self.config.np_dtype))
            if x.shape[-1] != self.vertices:
                raise ConfigMismatch(
                    f"stream {tag} has {x.shape[-1]} joints, model expects {self.vertices}")
            for block in branches[tag]:
                x = block(x, a_override)
            outputs.append(x)
        y = ad.concat(outputs, axis=1)
        for block in self.main:
            y = block(y, a_override)
        pooled = ad.mean(y, axis=(2, 3))  # global average over frames and joints
        return self.head(pooled)

    def macs_per_graph(self, frames: int | None = None) -> int:
        t = frames if frames is not None else self.config.frames
        v = self.vertices
        total = 0
        for blocks in self._branches().values():
            t_b = t
            for block in blocks:
                macs, t_b = block.macs(t_b, v)
                total += macs
        t_m = t
        for block in self.main:
            macs, t_m = block.macs(t_m, v)
            total += macs
        total += self.head.macs(1)
        return total


def count_params(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def estimate_flops(model: TwoPersonGCN, frames: int | None = None) -> int:
    """Closed-form 2 x MAC count per sample, doubled for two-graph modes."""
    per_graph = 2 * model.macs_per_graph(frames)
    return per_graph * model.config.graphs_per_sample


def build_model(config: ModelConfig, adjacency: LabeledAdjacency | None = None,
                seed: int = 0) -> TwoPersonGCN:
    """Construct the network for a config, building the graph if not given."""
    topology = LAYOUTS[config.layout]
    two_person = config.mode != "baseline"
    if adjacency is None:
        # sample-scoped geometric labeling feeds per-sample stacks at forward
        # time; the physical stack is the build-time placeholder
        strategy = "physical" if config.strategy == "geometric" else config.strategy
        adjacency = build_adjacency(
            strategy, topology, two_person=two_person,
            interactive_all_pairs=config.interactive_all_pairs)
    persons = 2 if two_person else 1
    if adjacency.V != persons * topology.joint_count:
        raise ConfigMismatch(
            f"adjacency has {adjacency.V} vertices, config implies "
            f"{persons * topology.joint_count}")
    part_ids = _two_person_part_ids(topology, persons)
    rng = np.random.default_rng(seed)
    return TwoPersonGCN(config, adjacency.A_norm, part_ids, rng)
