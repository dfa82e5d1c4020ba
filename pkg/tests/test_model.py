import numpy as np
import pytest

from twogcn import autodiff as ad
from twogcn import model as tm
from twogcn.graph import NTU_TOPOLOGY, build_adjacency, hop_partition, normalize
from twogcn.layers import CheckpointMismatch, Linear


def random_graph(rng, v, weighted=False):
    """Random connected-ish symmetric adjacency with zero diagonal."""
    a = np.zeros((v, v))
    for i in range(v - 1):  # a path backbone keeps most nodes reachable
        a[i, i + 1] = a[i + 1, i] = 1.0
    extra = rng.random((v, v)) < 0.25
    extra = np.triu(extra, 1)
    a[extra | extra.T] = 1.0
    if weighted:
        w = rng.uniform(0.3, 1.0, size=(v, v))
        w = (w + w.T) / 2
        a *= w
    return a


def sgc_pair(rng, v, c_in=3, c_out=4, dtype=np.float64, weighted=False):
    a = random_graph(rng, v, weighted)
    _, a_d = hop_partition(a, 2)
    layer = tm.SpatialGraphConv(c_in, c_out, normalize(a_d), rng,
                                edge_mask=False, dtype=dtype)
    weights = [p.data for p in layer.hop_weights]
    return a, layer, weights


class TestSpatialGraphConv:
    def test_identity_graph_identity_weights(self):
        rng = np.random.default_rng(0)
        a_norm = np.eye(4)[None]  # single hop subset: self-loops only
        layer = tm.SpatialGraphConv(3, 3, a_norm, rng, edge_mask=False)
        layer.hop_weights[0].data[...] = np.eye(3)
        x = rng.normal(size=(2, 3, 5, 4)).astype(np.float32)
        out = layer(ad.Tensor(x))
        assert np.allclose(out.data, x, atol=1e-6)

    def test_matches_vertex_reference_f64(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            v = int(rng.integers(4, 13))
            a, layer, weights = sgc_pair(rng, v, weighted=bool(trial % 2))
            x = rng.normal(size=(2, 3, 3, v))
            got = layer(ad.Tensor(x)).data
            want = tm.sgc_reference(x, a, weights, max_hop=2)
            assert np.max(np.abs(got - want)) < 1e-10

    def test_scale_of_raw_adjacency_cancels(self):
        rng = np.random.default_rng(2)
        a = random_graph(rng, 8, weighted=True)
        x = rng.normal(size=(1, 3, 2, 8))
        outs = []
        for scale in (1.0, 7.5):
            _, a_d = hop_partition(a * scale, 2)
            layer = tm.SpatialGraphConv(3, 4, normalize(a_d), np.random.default_rng(5),
                                        edge_mask=False, dtype=np.float64)
            outs.append(layer(ad.Tensor(x)).data)
        assert np.allclose(outs[0], outs[1], atol=1e-6)

    def test_per_sample_override_matches_fixed(self):
        rng = np.random.default_rng(3)
        a, layer, weights = sgc_pair(rng, 6)
        x = rng.normal(size=(3, 3, 2, 6))
        fixed = layer(ad.Tensor(x)).data
        override = np.repeat(layer.a_norm[None], 3, axis=0)
        assert np.allclose(layer(ad.Tensor(x), override).data, fixed, atol=1e-12)

    def test_swap_equivariance(self):
        rng = np.random.default_rng(4)
        adj = build_adjacency("pairwise", NTU_TOPOLOGY)
        layer = tm.SpatialGraphConv(3, 4, adj.A_norm, rng, dtype=np.float64)
        x = rng.normal(size=(1, 3, 2, 50))
        perm = np.concatenate([np.arange(25, 50), np.arange(25)])
        out = layer(ad.Tensor(x)).data
        out_swapped = layer(ad.Tensor(x[:, :, :, perm])).data
        assert np.allclose(out_swapped, out[:, :, :, perm], atol=1e-12)

    def test_vertex_count_mismatch(self):
        rng = np.random.default_rng(5)
        _, layer, _ = sgc_pair(rng, 6)
        with pytest.raises(ad.ShapeMismatch):
            layer(ad.Tensor(np.zeros((1, 3, 2, 9))))


class TestTemporalLayers:
    def test_mstcn_stride_one_preserves_t(self):
        rng = np.random.default_rng(6)
        layer = tm.MultiScaleTemporalConv(8, 8, rng)
        x = rng.normal(size=(2, 8, 10, 5)).astype(np.float32)
        assert layer(ad.Tensor(x)).shape == (2, 8, 10, 5)

    @pytest.mark.parametrize("t", [9, 10, 16])
    def test_mstcn_stride_two_ceils(self, t):
        rng = np.random.default_rng(7)
        layer = tm.MultiScaleTemporalConv(8, 8, rng, stride=2)
        x = rng.normal(size=(1, 8, t, 3)).astype(np.float32)
        assert layer(ad.Tensor(x)).shape[2] == -(-t // 2)

    def test_mstcn_channel_mix(self):
        rng = np.random.default_rng(8)
        layer = tm.MultiScaleTemporalConv(6, 12, rng, stride=1)
        x = rng.normal(size=(2, 6, 8, 4)).astype(np.float32)
        assert layer(ad.Tensor(x)).shape == (2, 12, 8, 4)

    def test_mstcn_rejects_bad_width(self):
        with pytest.raises(tm.ConfigMismatch):
            tm.MultiScaleTemporalConv(8, 10, np.random.default_rng(0))

    def test_plain_tcn_shapes(self):
        rng = np.random.default_rng(9)
        layer = tm.PlainTemporalConv(4, 8, rng, stride=2)
        x = rng.normal(size=(2, 4, 12, 5)).astype(np.float32)
        assert layer(ad.Tensor(x)).shape == (2, 8, 6, 5)


class TestAttention:
    def make(self, channels=8, rng=None):
        rng = rng or np.random.default_rng(10)
        part_ids = tm._two_person_part_ids(NTU_TOPOLOGY, 2)
        return tm.SpatialTemporalPartAttention(channels, part_ids, rng)

    def test_zero_weights_give_quarter_gain(self):
        att = self.make()
        for p in att.parameters():
            p.data[...] = 0
        att.bn.gamma.data[...] = 1  # batch norm affine stays default
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 8, 6, 50)).astype(np.float32)
        out = att(ad.Tensor(x))
        assert np.allclose(out.data, 0.25 * x, atol=1e-6)

    def test_output_bounded_by_input(self):
        att = self.make()
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 8, 6, 50)).astype(np.float32)
        out = att(ad.Tensor(x)).data
        assert np.all(np.abs(out) <= np.abs(x) + 1e-7)

    def test_same_part_joint_permutation_invariance(self):
        att = self.make()
        att.eval()
        rng = np.random.default_rng(13)
        x = rng.normal(size=(1, 8, 4, 50)).astype(np.float32)
        part_ids = tm._two_person_part_ids(NTU_TOPOLOGY, 2)
        i, j = np.nonzero(part_ids == 1)[0][:2]  # two joints of one part
        perm = np.arange(50)
        perm[[i, j]] = perm[[j, i]]
        base = att(ad.Tensor(x)).data
        swapped = att(ad.Tensor(x[:, :, :, perm])).data
        assert np.allclose(swapped, base[:, :, :, perm], atol=1e-5)


class TestModelAssembly:
    def test_tiny_forward_shapes(self):
        config = tm.tiny_config()
        model = tm.build_model(config, seed=0).eval()
        rng = np.random.default_rng(14)
        streams = {tag: rng.normal(size=(2, 6, 16, 50)).astype(np.float32)
                   for tag in ("J", "B", "JM", "BM")}
        logits = model(streams)
        assert logits.shape == (2, 4)

    def test_zero_input_finite_logits(self):
        config = tm.tiny_config()
        model = tm.build_model(config, seed=0).eval()
        streams = {tag: np.zeros((1, 6, 16, 50), dtype=np.float32)
                   for tag in ("J", "B", "JM", "BM")}
        logits = model(streams)
        assert np.all(np.isfinite(logits.data))

    def test_full_config_logit_shape(self):
        config = tm.ModelConfig(num_classes=11)
        model = tm.build_model(config, seed=0).eval()
        rng = np.random.default_rng(15)
        streams = {tag: rng.normal(size=(2, 6, 64, 50)).astype(np.float32)
                   for tag in ("J", "B", "JM", "BM")}
        logits = model(streams)
        assert logits.shape == (2, 11)

    def test_config_plan_validation(self):
        with pytest.raises(tm.ConfigMismatch):
            tm.ModelConfig(input_plan=((6, 16), (16, 16)), main_plan=((32, 32),),
                           main_strides=(1,))

    def test_config_json_roundtrip(self):
        config = tm.tiny_config(strategy="pairwise")
        back = tm.ModelConfig.from_json(config.to_json())
        assert back == config

    def test_state_dict_roundtrip(self):
        config = tm.tiny_config()
        model = tm.build_model(config, seed=1)
        blob = model.save_checkpoint()
        other = tm.build_model(config, seed=2)
        other.load_checkpoint(blob)
        for (_, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
            assert np.array_equal(a.data, b.data)

    def test_checkpoint_mismatch(self):
        model = tm.build_model(tm.tiny_config(), seed=0)
        other = tm.build_model(tm.tiny_config(num_classes=7), seed=0)
        with pytest.raises(CheckpointMismatch):
            other.load_state_dict(model.state_dict())


class TestComplexity:
    def test_linear_param_count(self):
        layer = Linear(10, 5, np.random.default_rng(0))
        assert tm.count_params(layer) == 55

    def test_full_config_param_budget(self):
        model = tm.build_model(tm.ModelConfig(num_classes=11), seed=0)
        params = tm.count_params(model)
        assert 1_320_000 <= params <= 1_620_000, params

    def test_symmetry_flops_double_mutual(self):
        sym = tm.build_model(tm.ModelConfig(num_classes=11, mode="symmetry"), seed=0)
        mut = tm.build_model(tm.ModelConfig(num_classes=11, mode="mutual"), seed=0)
        assert tm.estimate_flops(sym) == 2 * tm.estimate_flops(mut)
        assert tm.count_params(sym) == tm.count_params(mut)


class TestGradients:
    def test_sgc_layer_gradcheck(self):
        rng = np.random.default_rng(16)
        a, layer, _ = sgc_pair(rng, 5, c_in=2, c_out=3)
        x = ad.Tensor(rng.normal(size=(2, 2, 3, 5)))
        labels = np.array([0, 2])

        def loss():
            out = layer(x)
            pooled = ad.mean(out, axis=(2, 3))
            return ad.cross_entropy_logits(pooled, labels)

        report = ad.grad_check(loss, layer.parameters(), tol=1e-4)
        assert report.passed, str(report)
