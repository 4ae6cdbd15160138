import numpy as np
import pytest

from dwellrec.checkpoint import load_checkpoint, save_checkpoint


def sample_params():
    rng = np.random.default_rng(0)
    return {
        "b.weight": rng.normal(size=(3, 4)).astype(np.float32),
        "a.bias": rng.normal(size=4),
        "scalar": np.array(2.5),
        "empty": np.zeros((0, 3), dtype=np.float32),
    }


def test_round_trip_preserves_order_dtype_and_values(tmp_path):
    params = sample_params()
    save_checkpoint(tmp_path / "m.ckpt", params, {"epoch": 3, "note": "x"})
    loaded, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert list(loaded) == list(params)
    for k, v in params.items():
        assert loaded[k].dtype == v.dtype and loaded[k].shape == v.shape
        np.testing.assert_array_equal(loaded[k], v)
    assert meta == {"epoch": 3, "note": "x"}


def test_bytes_are_stable(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", sample_params(), {"k": [1, 2], "a": 1})
    save_checkpoint(tmp_path / "b.ckpt", sample_params(), {"a": 1, "k": [1, 2]})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_missing_and_foreign_files(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.ckpt"):
        load_checkpoint(tmp_path / "nope.ckpt")
    (tmp_path / "junk").write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "junk")
