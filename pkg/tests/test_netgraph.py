"""Graph construction, wiring, forward semantics, and fusion equivalences."""

import numpy as np
import pytest

from sensorimotor import ops
from sensorimotor.archspec import ArchSpecError, FusionSpec, LayerName, parse_arch_spec
from sensorimotor.netgraph import (ConfigError, NetworkGraph, ScaleConfig,
                                   build_appearance_cnn, build_fused,
                                   build_st_cnn_lstm, build_tm_cnn,
                                   capture_layer, forward, list_layers,
                                   structure)
from sensorimotor.tensor import DimensionError, Tensor

DESK = ScaleConfig.desk()
SMALL = ScaleConfig(input_side=32, group_channels=(4, 4, 6, 6, 6),
                    convs_per_group=(2, 2, 3, 3, 3), fc_width=16,
                    lstm_layers=2, lstm_hidden=8)


def appearance_param_count(cfg: ScaleConfig, classes: int = 14) -> int:
    total = 0
    cin = 3
    for g in range(5):
        for _ in range(cfg.convs_per_group[g]):
            cout = cfg.group_channels[g]
            total += cout * cin * 9 + cout
            cin = cout
    flat = cfg.group_channels[4] * (cfg.input_side // 32) ** 2
    total += cfg.fc_width * flat + cfg.fc_width
    total += cfg.fc_width * cfg.fc_width + cfg.fc_width
    total += classes * cfg.fc_width + classes
    return total


class TestScaleConfig:
    def test_desk_defaults(self):
        assert DESK.input_side == 64 and DESK.fc_width == 128

    def test_paper_scale(self):
        p = ScaleConfig.paper()
        assert p.input_side == 224
        assert p.group_channels == (64, 128, 256, 512, 512)
        assert p.lstm_layers == 3 and p.lstm_hidden == 4096

    def test_invalid(self):
        with pytest.raises(ConfigError):
            ScaleConfig(input_side=48)
        with pytest.raises(ConfigError):
            ScaleConfig(fc_width=0)


class TestSingleStreams:
    def test_appearance_layer_listing(self):
        g = build_appearance_cnn(DESK)
        names = [str(n) for n in list_layers(g)]
        assert names[:5] == ["CONV1_1", "RL1_1", "CONV1_2", "RL1_2", "POOL1"]
        for expect in ["CONV5_3", "FC6", "RL6", "FC7", "RL7", "FC8", "SOFTMAX"]:
            assert expect in names
        assert names.index("FC6") > names.index("POOL5")
        kinds = [n.kind for n in list_layers(g)]
        assert kinds.count("CONV") == 13  # the 16 trainable layers: 13 conv + 3 fc
        assert kinds.count("FC") == 3

    def test_appearance_output_is_14way(self, rng):
        g = build_appearance_cnn(DESK, seed=1)
        out = forward(g, {"app": Tensor(rng.random((3, 64, 64)))})
        assert out.data.shape == (14,)
        assert abs(out.data.sum() - 1.0) < 1e-9

    def test_appearance_param_count_formula(self):
        for cfg in (DESK, SMALL):
            g = build_appearance_cnn(cfg)
            assert sum(p.size for p in g.parameters()) == appearance_param_count(cfg)

    def test_tm_mirrors_appearance_topology(self):
        app = build_appearance_cnn(DESK)
        tm = build_tm_cnn(DESK)
        assert tm.class_count == 13
        assert [str(n) for n in list_layers(app)] == [str(n) for n in list_layers(tm)]

    def test_tm_zero_image_gives_finite_simplex(self):
        g = build_tm_cnn(SMALL, seed=2)
        out = forward(g, {"aff": Tensor(np.zeros((3, 32, 32)))})
        assert out.data.shape == (13,)
        assert np.all(np.isfinite(out.data))
        assert abs(out.data.sum() - 1.0) < 1e-9

    def test_st_20_frames_give_20_distributions(self, rng):
        g = build_st_cnn_lstm(SMALL, seed=0)
        frames = [Tensor(rng.random((3, 32, 32))) for _ in range(20)]
        outs = forward(g, {"aff": frames})
        assert len(outs) == 20
        assert all(o.data.shape == (13,) for o in outs)
        h_nodes = [n for n in g.nodes if n.kind == "lstm"]
        assert h_nodes[-1].meta["hidden"] == SMALL.lstm_hidden

    def test_st_single_frame_equals_manual_composition(self, rng):
        g = build_st_cnn_lstm(SMALL, seed=3)
        frame = Tensor(rng.random((3, 32, 32)))
        out = forward(g, {"aff": [frame]})[0]

        # manual: trunk to RL7, one lstm step per layer from zero state, head
        values = None
        x = frame
        from sensorimotor.ops import LstmState, lstm_step
        for node in g.nodes:
            if node.kind == "input":
                cur = x
            elif node.kind == "conv":
                cur = ops.conv2d(cur, node.params["w"], node.params["b"])
            elif node.kind == "pool":
                cur = ops.maxpool2(cur)
            elif node.kind == "relu":
                cur = ops.relu(cur)
            elif node.kind == "fc":
                cur = ops.linear(ops.flatten(cur), node.params["w"], node.params["b"])
            elif node.kind == "lstm":
                state = LstmState.zeros(node.meta["hidden"])
                cur = lstm_step(cur, state, node.params["w_ih"],
                                node.params["w_hh"], node.params["b"]).h
            elif node.kind == "softmax":
                cur = ops.softmax(cur)
        np.testing.assert_allclose(out.data, cur.data, atol=1e-12)


TABLE_SPECS = [
    "GTM_LS(FC6)",
    "GTM_LS(RL5_3,tail=1c1f)",
    "GTM_LS(RL5_3,tail=1c2f)",
    "GTM_LS(RL5_3,tail=2c1f)",
    "GTM_LS(RL5_3,tail=2c2f)",
    "GTM_SSL(RL3_3:app,RL3_3:aff)",
    "GTM_SSL(RL4_3:app,RL4_3:aff)",
    "GTM_SSL(RL4_3:app,RL4_1:aff)",
    "GTM_SSL(RL5_3:app,RL5_1:aff)",
    "GTM_SML(RL5_3:app,RL5_1:aff,RL6)",
    "GTM_SML(RL5_3:app,RL5_3:aff,RL6)",
    "GST_LS(agg=last)",
    "GST_LS(agg=all,tail=1c2f)",
    "GST_LA(tau=2,agg=all)",
    "GST_LA(tau=4,agg=all,tail=1c2f)",
    "GST_LA(tau=6,agg=all,tail=1c2f)",
    "GST_SSL(agg=all,tail=1c2f)",
]


class TestFusedBuilds:
    @pytest.mark.parametrize("text", TABLE_SPECS)
    def test_every_table_row_builds_and_runs(self, text, rng):
        g = build_fused(parse_arch_spec(text), SMALL, seed=1)
        assert g.class_count == 14
        if g.recurrent:
            ins = {s: [Tensor(rng.random((3, 32, 32))) for _ in range(8)]
                   for s in g.input_streams}
            outs = forward(g, ins)
            assert len(outs) == 8
            assert all(abs(o.data.sum() - 1.0) < 1e-9 for o in outs)
        else:
            ins = {s: Tensor(rng.random((3, 32, 32))) for s in g.input_streams}
            out = forward(g, ins)
            assert abs(out.data.sum() - 1.0) < 1e-9

    def test_ls_rl53_tail_order(self):
        g = build_fused(parse_arch_spec("GTM_LS(RL5_3,tail=1c2f)"), DESK)
        lines = structure(g)
        j = next(i for i, l in enumerate(lines) if "stack" in l)
        assert lines[j] == "CONCAT:fused[stack RL5_3:app + RL5_3:aff]"
        assert lines[j + 1:] == ["CONV6_1:fused", "RL6_1:fused", "FC7:fused",
                                 "RL7:fused", "FC8:fused", "SOFTMAX:fused"]

    def test_sml_junctions_at_rl5_3_and_rl6(self):
        g = build_fused(parse_arch_spec("GTM_SML(RL5_3:app,RL5_3:aff,RL6)"), DESK)
        lines = structure(g)
        junctions = [l for l in lines if "CONCAT" in l]
        assert junctions == [
            "CONCAT:fused[stack RL5_3:app + RL5_3:aff]",
            "CONCAT:fused[concat RL6:fused + RL6:aff]",
        ]
        assert lines[-4:] == ["FC7:fused", "RL7:fused", "FC8:fused", "SOFTMAX:fused"]

    def test_no_affordance_processing_past_final_junction(self):
        # nothing affordance-side may feed the object head except through a junction
        for text in TABLE_SPECS:
            g = build_fused(parse_arch_spec(text), SMALL)
            last_junction = max(g.junctions)
            for idx, node in enumerate(g.nodes):
                if node.name.stream == "aff" and node.kind != "input":
                    assert idx < last_junction, (text, node.describe())

    def test_stack_channel_count_adds(self, rng):
        g = build_fused(parse_arch_spec("GTM_SSL(RL4_3:app,RL4_1:aff)"), SMALL)
        ins = {s: Tensor(rng.random((3, 32, 32))) for s in g.input_streams}
        _, stacked = capture_layer(g, ins, "CONCAT:fused")
        assert stacked.data.shape[0] == 2 * SMALL.group_channels[3]
        assert stacked.data.shape[1:] == (4, 4)  # spatial extents unchanged

    def test_mismatched_spatial_dims_rejected(self):
        with pytest.raises(DimensionError):
            build_fused(parse_arch_spec("GTM_SSL(RL4_3:app,RL3_3:aff)"), SMALL)

    def test_ls_conv_point_must_be_last_conv(self):
        with pytest.raises(ArchSpecError):
            build_fused(parse_arch_spec("GTM_LS(RL5_1)"), SMALL)

    def test_nonexistent_point_rejected(self):
        with pytest.raises(ArchSpecError):
            build_fused(parse_arch_spec("GTM_SSL(RL4_9:app,RL4_1:aff)"), SMALL)

    def test_empty_graph_lists_nothing(self):
        assert list_layers(NetworkGraph()) == []


class TestGstEquivalences:
    def _inputs(self, rng, T=6):
        return {s: [Tensor(rng.random((3, 32, 32))) for _ in range(T)]
                for s in ("app", "aff")}

    def test_la_tau0_equals_ls_outputs_and_gradients(self, rng):
        ls = build_fused(parse_arch_spec("GST_LS()"), SMALL, seed=5)
        la_spec = FusionSpec(gat="GST", ft="LA", delay_tau=0)
        la = build_fused(la_spec, SMALL, seed=5)
        ins1 = self._inputs(np.random.default_rng(0))
        ins2 = {k: [Tensor(t.data.copy()) for t in v] for k, v in ins1.items()}

        out_ls = forward(ls, ins1)
        out_la = forward(la, ins2)
        for a, b in zip(out_ls, out_la):
            np.testing.assert_allclose(a.data, b.data, atol=1e-12)

        for g, outs in ((ls, out_ls), (la, out_la)):
            loss = ops.nll_loss(outs[-1], 3)
            g.zero_grad()
            loss.backward()
        for p, q in zip(ls.parameters(), la.parameters()):
            np.testing.assert_allclose(p.grad, q.grad, atol=1e-12)

    def test_la_warmup_uses_zero_state(self, rng):
        la = build_fused(parse_arch_spec("GST_LA(tau=2)"), SMALL, seed=5)
        ins = self._inputs(rng, T=4)
        concat_idx = la.junctions[0]
        passes = []
        forward(la, ins, collect=passes)
        app_w = SMALL.fc_width
        for t in (0, 1):  # delayed half must be all zero during warm-up
            joined = passes[t][concat_idx].data
            np.testing.assert_allclose(joined[app_w:], 0.0)
        assert np.any(passes[2][concat_idx].data[app_w:] != 0.0)

    def test_la_reads_h_from_tau_frames_back(self, rng):
        la = build_fused(parse_arch_spec("GST_LA(tau=2)"), SMALL, seed=5)
        ins = self._inputs(rng, T=5)
        lstm_idx = max(i for i, n in enumerate(la.nodes) if n.kind == "lstm")
        concat_idx = la.junctions[0]
        passes = []
        forward(la, ins, collect=passes)
        app_w = SMALL.fc_width
        for t in range(2, 5):
            np.testing.assert_allclose(passes[t][concat_idx].data[app_w:],
                                       passes[t - 2][lstm_idx].data)


class TestForward:
    def test_deterministic_under_fixed_seed(self, rng):
        x = rng.random((3, 32, 32))
        a = forward(build_appearance_cnn(SMALL, seed=9), {"app": Tensor(x.copy())})
        b = forward(build_appearance_cnn(SMALL, seed=9), {"app": Tensor(x.copy())})
        np.testing.assert_array_equal(a.data, b.data)

    def test_two_layer_toy_matches_manual_composition(self, rng):
        g = build_appearance_cnn(SMALL, seed=4)
        x = Tensor(rng.random((3, 32, 32)))
        out = forward(g, {"app": x})
        cur = x
        for node in g.nodes[1:]:
            if node.kind == "conv":
                cur = ops.conv2d(cur, node.params["w"], node.params["b"])
            elif node.kind == "pool":
                cur = ops.maxpool2(cur)
            elif node.kind == "relu":
                cur = ops.relu(cur)
            elif node.kind == "fc":
                cur = ops.linear(ops.flatten(cur), node.params["w"], node.params["b"])
            elif node.kind == "softmax":
                cur = ops.softmax(cur)
        np.testing.assert_allclose(out.data, cur.data)

    def test_wrong_input_side_rejected(self, rng):
        g = build_appearance_cnn(SMALL)
        with pytest.raises(DimensionError):
            forward(g, {"app": Tensor(rng.random((3, 16, 16)))})

    def test_missing_stream_rejected(self, rng):
        g = build_fused(parse_arch_spec("GTM_LS(FC6)"), SMALL)
        with pytest.raises(ConfigError):
            forward(g, {"app": Tensor(rng.random((3, 32, 32)))})

    def test_batched_forward_matches_loop(self, rng):
        g = build_appearance_cnn(SMALL, seed=7)
        xs = rng.random((3, 3, 32, 32))
        batch = forward(g, {"app": Tensor(xs)})
        assert batch.data.shape == (3, 14)
        for n in range(3):
            single = forward(g, {"app": Tensor(xs[n])})
            np.testing.assert_allclose(batch.data[n], single.data, atol=1e-12)


class TestStateDict:
    def test_snapshot_exchange_between_same_scale_graphs(self, rng):
        g1 = build_appearance_cnn(SMALL, seed=1)
        g2 = build_appearance_cnn(SMALL, seed=2)
        x = Tensor(rng.random((3, 32, 32)))
        g2.load_state_dict(g1.state_dict())
        np.testing.assert_allclose(forward(g1, {"app": x}).data,
                                   forward(g2, {"app": x}).data)

    def test_shape_mismatch_rejected(self):
        g1 = build_appearance_cnn(SMALL)
        state = g1.state_dict()
        state["CONV1_1:app/w"] = np.zeros((2, 2))
        with pytest.raises(DimensionError):
            g1.load_state_dict(state)

    def test_missing_key_rejected(self):
        g1 = build_appearance_cnn(SMALL)
        state = g1.state_dict()
        del state["FC8:app/b"]
        with pytest.raises(ConfigError):
            g1.load_state_dict(state)
