from __future__ import annotations

import numpy as np
import pytest
import torch

from osctrain.data import preprocess, split_rows
from osctrain.manifest import ManifestRow
from osctrain.network import FaceNet, build_network, conv_grid_sides


class TestFaceNet:
    def test_grid_arithmetic_at_reference_input(self):
        assert conv_grid_sides(227) == (27, 13, 6)
        net = FaceNet(input_side=227)
        assert net.feature_grid == 13
        assert net.fc6.in_features == 256 * 6 * 6

    def test_forward_shapes_small_input(self):
        net = FaceNet(input_side=99)
        net.eval()
        x = torch.zeros(2, 3, 99, 99)
        with torch.no_grad():
            acts = net.activations(x, ["relu5", "flat", "prob"])
        grid = net.feature_grid
        assert acts["relu5"].shape == (2, 256, grid, grid)
        assert acts["flat"].shape == (2, net.fc6.in_features)
        assert acts["prob"].shape == (2, 2)

    def test_probabilities_sum_to_one(self):
        net = FaceNet(input_side=99)
        net.eval()
        with torch.no_grad():
            prob = net.activations(torch.randn(3, 3, 99, 99), ["prob"])["prob"]
        assert torch.all(prob >= 0)
        assert torch.allclose(prob.sum(dim=1), torch.ones(3), atol=1e-5)

    def test_reference_feature_map_is_13x13x256(self):
        net = FaceNet()
        net.eval()
        with torch.no_grad():
            feats = net.activations(torch.zeros(1, 3, 227, 227), ["relu5"])["relu5"]
        assert feats.shape == (1, 256, 13, 13)

    def test_rejects_undersized_input(self):
        with pytest.raises(ValueError, match="input side"):
            FaceNet(input_side=50)

    def test_stage_names_are_unique(self):
        names = FaceNet(input_side=99).stage_names()
        assert len(names) == len(set(names))
        assert names[0] == "conv1"
        assert names[-1] == "prob"

    def test_activations_rejects_unknown_layer(self):
        net = FaceNet(input_side=99)
        with pytest.raises(ValueError, match="pool9"):
            net.activations(torch.zeros(1, 3, 99, 99), ["pool9"])


class TestBuildNetwork:
    def test_random_is_reproducible(self):
        a = build_network("random:7", input_side=99)
        b = build_network("random:7", input_side=99)
        for key, value in a.state_dict().items():
            assert torch.equal(value, b.state_dict()[key])

    def test_different_seeds_differ(self):
        a = build_network("random:1", input_side=99)
        b = build_network("random:2", input_side=99)
        assert not torch.equal(a.conv1.weight, b.conv1.weight)

    def test_bad_seed_rejected(self):
        with pytest.raises(ValueError, match="random seed"):
            build_network("random:lots")

    def test_missing_weights_file(self, tmp_path):
        with pytest.raises(ValueError, match="not found"):
            build_network(str(tmp_path / "none.pt"))

    def test_state_file_round_trip(self, tmp_path):
        src = build_network("random:3", input_side=99)
        torch.save(src.state_dict(), tmp_path / "w.pt")
        loaded = build_network(str(tmp_path / "w.pt"), input_side=99)
        for key, value in src.state_dict().items():
            assert torch.equal(value, loaded.state_dict()[key])

    def test_wide_head_is_replaced(self, tmp_path):
        torch.manual_seed(11)
        src = FaceNet(class_count=7, input_side=99)
        torch.save(src.state_dict(), tmp_path / "w7.pt")
        loaded = build_network(str(tmp_path / "w7.pt"), class_count=2, input_side=99)
        assert loaded.fc8.weight.shape == (2, 4096)
        assert torch.equal(loaded.conv1.weight, src.conv1.weight)
        assert torch.equal(loaded.fc7.bias, src.fc7.bias)

    def test_key_mismatch_rejected(self, tmp_path):
        state = FaceNet(input_side=99).state_dict()
        del state["conv3.bias"]
        torch.save(state, tmp_path / "w.pt")
        with pytest.raises(ValueError, match="conv3.bias"):
            build_network(str(tmp_path / "w.pt"), input_side=99)

    def test_body_shape_mismatch_rejected(self, tmp_path):
        # a 227 state dict cannot initialize a 99-input network: fc6 differs
        torch.save(FaceNet(input_side=227).state_dict(), tmp_path / "w.pt")
        with pytest.raises(ValueError, match="fc6"):
            build_network(str(tmp_path / "w.pt"), input_side=99)


class TestData:
    def test_preprocess_scales_to_unit_range(self):
        img = np.zeros((99, 99, 3), dtype=np.uint8)
        img[0, 0] = 255
        t = preprocess(img, 99)
        assert t.shape == (3, 99, 99)
        assert float(t.min()) == -1.0
        assert float(t[0, 0, 0]) == 1.0

    def test_preprocess_resizes(self):
        img = np.full((40, 60, 3), 128, dtype=np.uint8)
        assert preprocess(img, 99).shape == (3, 99, 99)

    def test_preprocess_rejects_float_input(self):
        with pytest.raises(ValueError, match="uint8"):
            preprocess(np.zeros((9, 9, 3)), 9)

    def test_split_is_stratified_and_deterministic(self):
        rows = [
            ManifestRow(f"{label}/{i}.png", label, f"s{i}", "op")
            for label in ("pos", "neg")
            for i in range(10)
        ]
        train, val = split_rows(rows, 0.2, seed=5)
        assert len(train) == 16 and len(val) == 4
        assert sum(r.label == "pos" for r in val) == 2
        assert set(r.path for r in train).isdisjoint(r.path for r in val)
        again = split_rows(rows, 0.2, seed=5)
        assert again == (train, val)

    def test_split_needs_rows_left_for_training(self):
        rows = [ManifestRow("a.png", "pos", "s", "op")]
        with pytest.raises(ValueError, match="validation"):
            split_rows(rows, 0.5, seed=0)
