"""Taxonomy fixture, manifests, subject splits, generator, snapshots."""

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from sensorimotor.dataio import (DataError, load_manifest, load_split,
                                 load_snapshot, save_manifest, save_snapshot,
                                 save_split, split_by_subject)
from sensorimotor.snapshot import SnapshotError, load_tensor, save_tensor
from sensorimotor.synthgen import (CONFUSABLE_PAIRS, OBJECT_HEIGHTS_MM,
                                   SynthConfig, synth_generate)
from sensorimotor.taxonomy import AFFORDANCES, OBJECTS, TAXONOMY


class TestTaxonomy:
    def test_exactly_54_combinations(self):
        assert TAXONOMY.valid.sum() == 54
        assert len(TAXONOMY.valid_pairs()) == 54

    def test_grasp_and_lift_full_columns(self):
        g = TAXONOMY.affordance_index("Grasp")
        l = TAXONOMY.affordance_index("Lift")
        assert TAXONOMY.valid[:, g].sum() == 14
        assert TAXONOMY.valid[:, l].sum() == 14

    def test_type_column_singleton(self):
        t = TAXONOMY.affordance_index("Type")
        assert TAXONOMY.valid[:, t].sum() == 1
        assert TAXONOMY.is_valid("Smartphone", "Type")

    def test_column_sums_match_table(self):
        expected = {"Grasp": 14, "Lift": 14, "Push": 9, "Rotate": 4, "Open": 2,
                    "Hammer": 2, "Cut": 2, "Pour": 2, "Squeeze": 1, "Unlock": 1,
                    "Paint": 1, "Write": 1, "Type": 1}
        for aff, count in expected.items():
            assert TAXONOMY.valid[:, TAXONOMY.affordance_index(aff)].sum() == count

    def test_row_sums_match_table(self):
        expected = {"Ball": 3, "Book": 5, "Bottle": 4, "Box": 5, "Brush": 3,
                    "Can": 3, "Cup": 4, "Hammer": 3, "Key": 4, "Knife": 3,
                    "Pen": 3, "Pitcher": 5, "Smartphone": 4, "Sponge": 5}
        for obj, count in expected.items():
            assert TAXONOMY.valid[TAXONOMY.object_index(obj)].sum() == count

    def test_ball_affords_no_cut(self):
        assert not TAXONOMY.is_valid("Ball", "Cut")

    def test_label_sets(self):
        assert len(OBJECTS) == 14 and OBJECTS[0] == "Ball" and OBJECTS[-1] == "Sponge"
        assert len(AFFORDANCES) == 13 and AFFORDANCES[0] == "Grasp"
        assert AFFORDANCES[-1] == "Type"


class TestManifest:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("")
        assert load_manifest(p) == []

    def test_roundtrip(self, tiny_corpus):
        root, clips = tiny_corpus
        loaded = load_manifest(root / "manifest.tsv")
        assert len(loaded) == len(clips) == 108
        assert [c.id for c in loaded] == [c.id for c in clips]  # order preserved
        assert loaded[0].object_label == clips[0].object_label

    def test_invalid_combination_rejected(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("c1\ts0\t0\tBall\tCut\tclips/c1\tclips/c1\t5\n")
        with pytest.raises(DataError) as e:
            load_manifest(p, check_frames=False)
        assert "Ball" in str(e.value) and ":1" in str(e.value)

    def test_malformed_line_reports_number(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("# header\nc1\ts0\tonly-three\tfields\n")
        with pytest.raises(DataError) as e:
            load_manifest(p)
        assert ":2" in str(e.value)

    def test_missing_frame_file(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("c1\ts0\t0\tBall\tGrasp\tclips/c1\tclips/c1\t5\n")
        with pytest.raises(DataError) as e:
            load_manifest(p)
        assert "missing frame file" in str(e.value)

    def test_unknown_label(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("c1\ts0\t0\tZeppelin\tGrasp\tx\tx\t5\n")
        with pytest.raises(DataError):
            load_manifest(p, check_frames=False)


def _stub_clips(subjects, per_subject=3):
    from sensorimotor.dataio import InteractionClip
    from pathlib import Path
    clips = []
    for s in subjects:
        for k in range(per_subject):
            clips.append(InteractionClip(f"{s}_{k}", s, 0, 0, Path("."), Path("."), 1))
    return clips


class TestSplit:
    def test_four_subjects_1_1_2(self):
        split = split_by_subject(_stub_clips(["a", "b", "c", "d"]), seed=3)
        assert (len(split.train), len(split.val), len(split.test)) == (1, 1, 2)

    def test_same_seed_identical(self):
        clips = _stub_clips([f"s{i}" for i in range(9)])
        a = split_by_subject(clips, seed=42)
        b = split_by_subject(clips, seed=42)
        assert (a.train, a.val, a.test) == (b.train, b.val, b.test)

    def test_single_subject_degenerates_with_warning(self):
        with pytest.warns(UserWarning):
            split = split_by_subject(_stub_clips(["solo"]))
        assert split.train == {"solo"} and not split.val and not split.test

    @given(st.integers(0, 10_000), st.integers(2, 40))
    @settings(max_examples=40, deadline=None)
    def test_disjoint_and_covering_for_any_seed(self, seed, n_subjects):
        clips = _stub_clips([f"s{i}" for i in range(n_subjects)], per_subject=1)
        split = split_by_subject(clips, seed=seed)
        all_subjects = {c.subject for c in clips}
        assert split.train | split.val | split.test == all_subjects
        assert not (split.train & split.val)
        assert not (split.train & split.test)
        assert not (split.val & split.test)

    def test_floor_then_remainder_rounding(self):
        split = split_by_subject(_stub_clips([f"s{i}" for i in range(7)]), seed=0)
        assert (len(split.train), len(split.val), len(split.test)) == (1, 1, 5)

    def test_split_file_roundtrip(self, tmp_path):
        split = split_by_subject(_stub_clips(["a", "b", "c", "d"]), seed=1)
        save_split(tmp_path / "split.tsv", split)
        loaded = load_split(tmp_path / "split.tsv")
        assert (loaded.train, loaded.val, loaded.test) == \
            (split.train, split.val, split.test)

    def test_bad_ratios(self):
        with pytest.raises(DataError):
            split_by_subject(_stub_clips(["a", "b"]), ratios=(0.5, 0.6, 0.5))


class TestSynthGenerator:
    def test_counts(self, tiny_corpus):
        _, clips = tiny_corpus
        assert len(clips) == 108  # 54 combos x 2 subjects x 1 clip
        assert len({c.subject for c in clips}) == 2

    def test_all_pairs_valid_and_complete(self, tiny_corpus):
        _, clips = tiny_corpus
        seen = set()
        for c in clips:
            assert TAXONOMY.valid[c.object_label, c.affordance_label]
            seen.add((c.object_label, c.affordance_label))
        assert len(seen) == 54

    def test_confusable_pair_shares_silhouette_and_height(self):
        from sensorimotor.synthgen import object_silhouette
        pen = TAXONOMY.object_index("Pen")
        brush = TAXONOMY.object_index("Brush")
        assert OBJECT_HEIGHTS_MM[pen] == OBJECT_HEIGHTS_MM[brush]
        yy, xx = np.mgrid[-3:3:41j, -3:3:41j]
        np.testing.assert_array_equal(object_silhouette(pen, xx, yy),
                                      object_silhouette(brush, xx, yy))
        assert CONFUSABLE_PAIRS == (("Pen", "Brush"),)

    def test_distinct_silhouettes_otherwise(self):
        from sensorimotor.synthgen import object_silhouette
        yy, xx = np.mgrid[-3:3:41j, -3:3:41j]
        masks = [object_silhouette(o, xx, yy).tobytes() for o in range(14)]
        pen, brush = TAXONOMY.object_index("Pen"), TAXONOMY.object_index("Brush")
        for i in range(14):
            for j in range(i + 1, 14):
                if {i, j} == {pen, brush}:
                    continue
                assert masks[i] != masks[j], (OBJECTS[i], OBJECTS[j])

    def test_byte_identical_regeneration(self, tmp_path):
        cfg = SynthConfig(frame_side=40, border=3, min_frames=6, max_frames=8)
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            synth_generate(out, n_subjects=1, clips_per_combo=1, cfg=cfg, seed=5)
        assert (a / "manifest.tsv").read_bytes() == (b / "manifest.tsv").read_bytes()
        clip = "s00_o00_a00_k0"
        for name in ("d_00000.png", "c_00000.png"):
            assert (a / "clips" / clip / name).read_bytes() == \
                (b / "clips" / clip / name).read_bytes()

    def test_different_seed_different_bytes(self, tmp_path):
        cfg = SynthConfig(frame_side=40, border=3, min_frames=6, max_frames=8)
        a = tmp_path / "a"
        b = tmp_path / "b"
        synth_generate(a, 1, 1, cfg, seed=5)
        synth_generate(b, 1, 1, cfg, seed=6)
        clip = "s00_o00_a00_k0"
        assert (a / "clips" / clip / "d_00000.png").read_bytes() != \
            (b / "clips" / clip / "d_00000.png").read_bytes()


class TestSnapshots:
    def test_single_tensor_roundtrip_f32(self, tmp_path, rng):
        arr = rng.standard_normal((3, 4, 5))
        save_tensor(tmp_path / "t.smt", arr)
        back = load_tensor(tmp_path / "t.smt")
        np.testing.assert_array_equal(back, arr.astype(np.float32).astype(np.float64))

    def test_container_roundtrip_names_and_shapes(self, tmp_path, rng):
        tensors = {"a/w": rng.standard_normal((2, 3)),
                   "b/bias": rng.standard_normal(7)}
        save_snapshot(tmp_path / "c.smtm", tensors)
        back = load_snapshot(tmp_path / "c.smtm")
        assert set(back) == set(tensors)
        for k in tensors:
            np.testing.assert_allclose(back[k], tensors[k], atol=1e-6)
            assert back[k].shape == tensors[k].shape

    def test_truncated_file_structured_error(self, tmp_path, rng):
        path = tmp_path / "t.smt"
        save_tensor(path, rng.standard_normal((4, 4)))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(SnapshotError) as e:
            load_tensor(path)
        assert "truncated" in str(e.value)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.smt"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(SnapshotError):
            load_tensor(p)
        with pytest.raises(DataError):
            load_snapshot(p)

    def test_checkpoint_exchange_load_then_forward_parity(self, tmp_path, rng):
        from sensorimotor.netgraph import ScaleConfig, build_tm_cnn, forward
        from sensorimotor.tensor import Tensor
        cfg = ScaleConfig(input_side=32, group_channels=(4, 4, 4, 4, 4),
                          convs_per_group=(1, 1, 1, 1, 1), fc_width=8,
                          lstm_layers=1, lstm_hidden=4)
        g1 = build_tm_cnn(cfg, seed=1)
        save_snapshot(tmp_path / "ck.smtm", g1.state_dict())
        g2 = build_tm_cnn(cfg, seed=99)
        g2.load_state_dict(load_snapshot(tmp_path / "ck.smtm"))
        x = Tensor(rng.random((3, 32, 32)))
        a = forward(g1, {"aff": x}).data
        b = forward(g2, {"aff": x}).data
        np.testing.assert_allclose(a, b, atol=1e-6)  # f32 storage precision
