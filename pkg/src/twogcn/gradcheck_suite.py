"""Finite-difference verification battery for every network layer.

Everything runs in float64 with batch norm in eval mode (frozen statistics),
on a 6-joint-per-body toy topology so the full model check stays fast.

Each case jitters all parameters and running statistics before checking. At
the pristine initialization (zero shifts, unit scales, bias-free convs)
exact zeros propagate through ReLU, pooling and residual adds, so some ReLU
inputs sit exactly on the kink where a finite-difference comparison is
ill-posed; the jitter moves the evaluation to a generic, differentiable
point without changing what is being verified.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, grad_check
from .graph import SkeletonTopology, build_adjacency
from .layers import Module
from .model import (GcnBlock, ModelConfig, MultiScaleTemporalConv,
                    SpatialGraphConv, SpatialTemporalPartAttention, TwoPersonGCN,
                    _two_person_part_ids)

TEST_TOPOLOGY = SkeletonTopology(
    joint_count=6,
    bone_edges=((1, 0), (2, 1), (3, 1), (4, 0), (5, 0)),
    center_joint=0,
    part_assignment=(0, 0, 1, 2, 3, 4),
    hand_joints=(2, 3),
    leg_joints=(4, 5),
)


def randomize_state(module: Module, rng: np.random.Generator, scale: float = 0.05):
    """Shift every parameter and running statistic to a generic point."""
    for _, p in module.named_parameters():
        p.data += rng.uniform(-scale, scale, size=p.data.shape)
    for owner in module._walk():
        for name, buf in owner._buffers.items():
            if name.endswith("running_mean"):
                buf += rng.uniform(-scale, scale, size=buf.shape)
            elif name.endswith("running_var"):
                buf *= rng.uniform(1.0, 1.0 + scale, size=buf.shape)


def _sgc_case(rng):
    adj = build_adjacency("pairwise", TEST_TOPOLOGY)
    layer = SpatialGraphConv(3, 4, adj.A_norm, rng, edge_mask=True, dtype=np.float64)
    randomize_state(layer, rng)
    x = Tensor(rng.normal(size=(2, 3, 3, 12)))
    labels = np.array([0, 1])

    def loss():
        pooled = ad.mean(layer(x), axis=(2, 3))
        return ad.cross_entropy_logits(pooled, labels)

    return loss, layer.parameters()


def _mstcn_case(rng):
    layer = MultiScaleTemporalConv(6, 8, rng, stride=2, dtype=np.float64).eval()
    randomize_state(layer, rng)
    x = Tensor(rng.normal(size=(2, 6, 6, 4)))

    def loss():
        out = layer(x)
        return ad.tensor_sum(ad.mul(out, ad.mul(out, 0.05)))

    return loss, layer.parameters()


def _attention_case(rng):
    part_ids = _two_person_part_ids(TEST_TOPOLOGY, 2)
    layer = SpatialTemporalPartAttention(8, part_ids, rng, dtype=np.float64).eval()
    randomize_state(layer, rng)
    x = Tensor(rng.normal(size=(2, 8, 5, 12)))

    def loss():
        out = layer(x)
        return ad.mean(ad.mul(out, out))

    return loss, layer.parameters()


def _block_case(rng):
    adj = build_adjacency("physical", TEST_TOPOLOGY)
    part_ids = _two_person_part_ids(TEST_TOPOLOGY, 2)
    block = GcnBlock(3, 8, adj.A_norm, part_ids, rng, stride=2,
                     dtype=np.float64).eval()
    randomize_state(block, rng)
    x = Tensor(rng.normal(size=(2, 3, 6, 12)))
    labels = np.array([1, 0])

    def loss():
        pooled = ad.mean(block(x), axis=(2, 3))
        return ad.cross_entropy_logits(pooled, labels)

    return loss, block.parameters()


def _tiny_model_case(rng):
    config = ModelConfig(num_classes=3, mode="mutual", strategy="physical",
                         frames=8, input_plan=((6, 2), (2, 4)),
                         main_plan=((16, 8),), main_strides=(1,),
                         edge_mask=False, dtype="f64")
    adj = build_adjacency("physical", TEST_TOPOLOGY)
    part_ids = _two_person_part_ids(TEST_TOPOLOGY, 2)
    model = TwoPersonGCN(config, adj.A_norm, part_ids, rng).eval()
    randomize_state(model, rng)
    streams = {tag: rng.normal(size=(1, 6, 8, 12)) for tag in ("J", "B", "JM", "BM")}
    labels = np.array([2])

    def loss():
        return ad.cross_entropy_logits(model(streams), labels)

    return loss, model.parameters()


CASES = {
    "sgc": _sgc_case,
    "ms_tcn": _mstcn_case,
    "st_part_att": _attention_case,
    "block": _block_case,
    "tiny_model": _tiny_model_case,
}


def run_gradcheck_battery(tol: float = 1e-4, h: float = 1e-5,
                          cases=None) -> dict[str, GradCheckReport]:
    reports = {}
    for name in (cases or CASES):
        rng = np.random.default_rng(hash(name) % (2 ** 31))
        loss, params = CASES[name](rng)
        reports[name] = grad_check(loss, params, h=h, tol=tol)
    return reports
