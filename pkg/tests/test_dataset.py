"""Manifest parsing, batching, one-hot encoding, synthetic data."""

import numpy as np
import pytest

from sesn.data import (LABEL_TO_INDEX, SCENE_LABELS, Manifest, batcher,
                       format_manifest, load_manifest, one_hot,
                       parse_manifest, save_manifest, synth_dataset)
from sesn.errors import InputError, ParseError


class TestLabels:
    def test_ten_alphabetical_labels(self):
        assert len(SCENE_LABELS) == 10
        assert list(SCENE_LABELS) == sorted(SCENE_LABELS)

    def test_index_map_matches_tuple(self):
        for i, name in enumerate(SCENE_LABELS):
            assert LABEL_TO_INDEX[name] == i


class TestManifest:
    def test_parse_basic(self):
        text = "a/x.wav\tairport\nb/y.wav\ttram\n"
        m = parse_manifest(text, split="train")
        assert m.split == "train"
        assert m.entries == (("a/x.wav", "airport"), ("b/y.wav", "tram"))

    def test_round_trip(self, tmp_path):
        m = Manifest((("p/q.wav", "bus"), ("r.wav", "park")), "validation")
        path = tmp_path / "val.tsv"
        save_manifest(path, m)
        back = load_manifest(path, split="validation")
        assert back == m

    def test_blank_lines_and_comments_skipped(self):
        text = "# header\n\na.wav\tmetro\n  \nb.wav\tpark\n"
        m = parse_manifest(text, split="train")
        assert len(m.entries) == 2

    def test_missing_tab_names_line(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_manifest("a.wav\tbus\nno-separator-here\n", split="train")

    def test_unknown_label_named(self):
        with pytest.raises(ParseError, match="beach"):
            parse_manifest("a.wav\tbeach\n", split="train")

    def test_empty_path_rejected(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_manifest("\tbus\n", split="train")

    def test_bad_split_rejected(self):
        with pytest.raises(InputError):
            Manifest((("a.wav", "bus"),), "test")

    def test_format_ends_with_newline(self):
        m = Manifest((("a.wav", "bus"),), "train")
        assert format_manifest(m) == "a.wav\tbus\n"


class TestOneHot:
    def test_values(self):
        out = one_hot(np.array([0, 3, 9]), num_classes=10)
        want = np.zeros((3, 10))
        want[0, 0] = want[1, 3] = want[2, 9] = 1.0
        assert np.array_equal(out, want)

    def test_out_of_range(self):
        with pytest.raises(InputError):
            one_hot(np.array([10]), num_classes=10)
        with pytest.raises(InputError):
            one_hot(np.array([-1]), num_classes=10)


class TestBatcher:
    @staticmethod
    def toy(n):
        feats = np.arange(n * 6, dtype=np.float64).reshape(n, 1, 2, 3)
        labels = np.arange(n) % 10
        return feats, labels

    def test_batch_sizes_with_short_tail(self):
        feats, labels = self.toy(100)
        sizes = [bx.shape[0] for bx, _ in batcher(feats, labels, 32)]
        assert sizes == [32, 32, 32, 4]

    def test_exact_division_no_tail(self):
        feats, labels = self.toy(64)
        sizes = [bx.shape[0] for bx, _ in batcher(feats, labels, 32)]
        assert sizes == [32, 32]

    def test_unshuffled_preserves_order(self):
        feats, labels = self.toy(10)
        bx, by = next(batcher(feats, labels, 4))
        assert np.array_equal(bx, feats[:4])
        assert np.array_equal(by, one_hot(labels[:4], 10))

    def test_same_seed_same_batches(self):
        feats, labels = self.toy(50)
        a = [bx.copy() for bx, _ in batcher(feats, labels, 16, shuffle_seed=7)]
        b = [bx.copy() for bx, _ in batcher(feats, labels, 16, shuffle_seed=7)]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_different_seed_different_order(self):
        feats, labels = self.toy(50)
        a = np.concatenate([bx for bx, _ in batcher(feats, labels, 16, shuffle_seed=1)])
        b = np.concatenate([bx for bx, _ in batcher(feats, labels, 16, shuffle_seed=2)])
        assert not np.array_equal(a, b)

    def test_shuffle_covers_every_item_once(self):
        feats, labels = self.toy(37)
        seen = np.concatenate([bx for bx, _ in batcher(feats, labels, 8, shuffle_seed=3)])
        assert np.array_equal(np.sort(seen[:, 0, 0, 0]), feats[:, 0, 0, 0])

    def test_labels_travel_with_features(self):
        feats, labels = self.toy(30)
        for bx, by in batcher(feats, labels, 7, shuffle_seed=5):
            idx = (bx[:, 0, 0, 0] / 6).astype(int)
            assert np.array_equal(by, one_hot(labels[idx], 10))

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            next(batcher(np.zeros((0, 1, 2, 3)), np.zeros(0, dtype=int), 4))

    def test_length_mismatch_rejected(self):
        feats, labels = self.toy(10)
        with pytest.raises(InputError):
            next(batcher(feats, labels[:5], 4))

    def test_bad_batch_size_rejected(self):
        feats, labels = self.toy(10)
        with pytest.raises(InputError):
            next(batcher(feats, labels, 0))


class TestSynthDataset:
    def test_shapes_and_count(self):
        feats, labels = synth_dataset(classes=10, per_class=4, shape=(8, 20, 3), seed=0)
        assert feats.shape == (40, 8, 20, 3)
        assert labels.shape == (40,)
        assert np.array_equal(np.bincount(labels, minlength=10), np.full(10, 4))

    def test_deterministic(self):
        a, la = synth_dataset(seed=42, per_class=2)
        b, lb = synth_dataset(seed=42, per_class=2)
        assert np.array_equal(a, b)
        assert np.array_equal(la, lb)

    def test_seed_changes_samples(self):
        a, _ = synth_dataset(seed=1, per_class=2)
        b, _ = synth_dataset(seed=2, per_class=2)
        assert not np.array_equal(a, b)

    def test_class_means_separated_by_three_sigma(self):
        # noise-free means differ in two coordinates by 3/sqrt(2) each,
        # a Euclidean gap of exactly 3 against unit noise
        feats, labels = synth_dataset(classes=10, per_class=200, shape=(8, 20, 3), seed=0)
        flat = feats.reshape(feats.shape[0], -1)
        means = np.stack([flat[labels == c].mean(axis=0) for c in range(10)])
        for i in range(10):
            for j in range(i + 1, 10):
                assert np.linalg.norm(means[i] - means[j]) > 2.5

    def test_linearly_separable_in_practice(self):
        # least-squares one-hot regression is an independent classifier;
        # 3 sigma spacing should make it nearly perfect
        feats, labels = synth_dataset(classes=10, per_class=20, shape=(8, 20, 3), seed=0)
        flat = np.concatenate([feats.reshape(feats.shape[0], -1),
                               np.ones((feats.shape[0], 1))], axis=1)
        coef, *_ = np.linalg.lstsq(flat, one_hot(labels, 10), rcond=None)
        preds = (flat @ coef).argmax(axis=1)
        assert (preds == labels).mean() > 0.9

    def test_bad_arguments(self):
        with pytest.raises(InputError):
            synth_dataset(classes=0)
        with pytest.raises(InputError):
            synth_dataset(per_class=0)
        with pytest.raises(InputError):
            synth_dataset(classes=10, shape=(3, 3, 1))
