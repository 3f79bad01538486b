import numpy as np
import pytest

from cascast.autograd import Tape, Tensor
from cascast.backbone import BackboneConfig, backbone_forward, init_backbone
from cascast.storage import (
    embedding_to_csv,
    load_checkpoint,
    load_embedding,
    load_into,
    load_local_rows,
    load_token_dataset,
    save_checkpoint,
    save_embedding,
    save_local_rows,
    save_token_dataset,
)
from cascast.training import TokenDataset


def sample_tensors(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "a.w": Tensor(rng.standard_normal((3, 4)), requires_grad=True),
        "a.b": Tensor(rng.standard_normal((1, 4)), requires_grad=True),
        "z": Tensor(rng.standard_normal((2, 2))),
    }


class TestCheckpoint:
    def test_round_trip_preserves_float32_values(self, tmp_path):
        tensors = sample_tensors()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(tensors)
        for name, t in tensors.items():
            np.testing.assert_array_equal(loaded[name], t.values.astype(np.float32))

    def test_same_content_bitwise_identical_files(self, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, sample_tensors(3))
        save_checkpoint(p2, sample_tensors(3))
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_into_updates_values(self, tmp_path):
        src = sample_tensors(1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, src)
        dst = sample_tensors(2)
        load_into(dst, path)
        for name in src:
            np.testing.assert_array_equal(
                dst[name].values, src[name].values.astype(np.float32)
            )

    def test_load_into_rejects_shape_mismatch(self, tmp_path):
        src = sample_tensors(1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, src)
        dst = sample_tensors(2)
        dst["a.w"] = Tensor(np.zeros((5, 4)), requires_grad=True)
        with pytest.raises(ValueError, match="'a.w' has shape"):
            load_into(dst, path)

    def test_load_into_rejects_name_mismatch(self, tmp_path):
        src = sample_tensors(1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, src)
        extra = dict(sample_tensors(2), extra=Tensor(np.zeros((1, 1))))
        with pytest.raises(ValueError, match="missing tensors"):
            load_into(extra, path)
        smaller = sample_tensors(2)
        del smaller["z"]
        with pytest.raises(ValueError, match="unexpected tensors"):
            load_into(smaller, path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, sample_tensors())
        whole = path.read_bytes()
        path.write_bytes(whole[: len(whole) - 7])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_backbone_replay_is_deterministic(self, tmp_path):
        cfg = BackboneConfig(model_dim=16, layers=2, heads=2, ffn_mult=2, max_context=8)
        params = init_backbone(cfg)
        path = tmp_path / "bb.ckpt"
        save_checkpoint(path, params.tensors)
        x = np.random.default_rng(0).standard_normal((5, 16))
        outs = []
        for _ in range(2):
            fresh = init_backbone(cfg)
            load_into(fresh.tensors, path)
            out = backbone_forward(Tape(), fresh, Tensor(x))
            outs.append(out.values.copy())
        np.testing.assert_array_equal(outs[0], outs[1])


class TestEmbeddingCache:
    def test_round_trip(self, tmp_path):
        mat = np.random.default_rng(4).standard_normal((7, 5))
        path = tmp_path / "emb.bin"
        save_embedding(path, mat)
        loaded = load_embedding(path)
        assert loaded.shape == (7, 5)
        np.testing.assert_array_equal(loaded, mat.astype(np.float32))

    def test_rejects_non_matrix(self, tmp_path):
        with pytest.raises(ValueError, match="2-d"):
            save_embedding(tmp_path / "x.bin", np.zeros(3))

    def test_csv_round_trips_float32(self, tmp_path):
        mat = np.random.default_rng(5).standard_normal((4, 3)).astype(np.float32)
        path = tmp_path / "emb.csv"
        embedding_to_csv(path, mat, ids=[10, 11, 12, 13])
        rows = [line.split(",") for line in path.read_text().splitlines()]
        assert [r[0] for r in rows] == ["10", "11", "12", "13"]
        parsed = np.array([[np.float32(v) for v in r[1:]] for r in rows])
        np.testing.assert_array_equal(parsed, mat)

    def test_local_rows_directory(self, tmp_path):
        rows = {
            "c2": np.random.default_rng(1).standard_normal((4, 6)),
            "c1": np.random.default_rng(2).standard_normal((2, 6)),
        }
        save_local_rows(tmp_path / "cache", rows)
        loaded = load_local_rows(tmp_path / "cache")
        assert set(loaded) == {"c1", "c2"}
        for cid in rows:
            np.testing.assert_array_equal(loaded[cid], rows[cid].astype(np.float32))


class TestTokenCache:
    def make_dataset(self):
        rng = np.random.default_rng(9)
        tokens = {f"c{k}": rng.standard_normal((3, 8)) for k in range(5)}
        targets = {cid: int(rng.integers(1, 50)) for cid in tokens}
        splits = {cid: ("train" if k < 3 else "test") for k, cid in enumerate(tokens)}
        return TokenDataset("synthetic", 20.0, tokens, targets, splits)

    def test_round_trip(self, tmp_path):
        data = self.make_dataset()
        path = tmp_path / "tokens.bin"
        save_token_dataset(path, data)
        loaded = load_token_dataset(path)
        assert loaded.name == "synthetic"
        assert loaded.t_obs == 20.0
        assert loaded.targets == data.targets
        assert loaded.splits == data.splits
        for cid in data.tokens:
            np.testing.assert_array_equal(
                loaded.tokens[cid], data.tokens[cid].astype(np.float32)
            )

    def test_rejects_ragged_shapes(self, tmp_path):
        data = self.make_dataset()
        data.tokens["c1"] = np.zeros((4, 8))
        with pytest.raises(ValueError, match="token shape"):
            save_token_dataset(tmp_path / "t.bin", data)

    def test_rejects_empty(self, tmp_path):
        data = TokenDataset("synthetic", 20.0, {}, {}, {})
        with pytest.raises(ValueError, match="empty"):
            save_token_dataset(tmp_path / "t.bin", data)
