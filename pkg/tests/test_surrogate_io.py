import numpy as np
import pytest

from probuq import dgp, gp, mogp
from probuq.errors import CorruptFile, VersionMismatch
from probuq.kernels import ArdKernelParams, LmcBasisParams
from probuq.surrogate_io import MAGIC, load_any, read_surrogate, write_surrogate


def test_round_trip_is_bitwise(tmp_path, rng):
    arrays = {"a": rng.standard_normal((3, 4)), "b": np.array([np.pi, 1e-300, -0.0])}
    path = write_surrogate(tmp_path / "x.bin", "GP", arrays, {"note": "hi"})
    kind, out, meta = read_surrogate(path)
    assert kind == "GP" and meta == {"note": "hi"}
    for k, v in arrays.items():
        assert out[k].tobytes() == np.asarray(v, dtype="<f8").tobytes()


def test_rejects_corruption(tmp_path, rng):
    path = write_surrogate(tmp_path / "x.bin", "GP", {"a": rng.standard_normal(5)})
    raw = bytearray(path.read_bytes())
    assert raw[:8] == MAGIC

    bad_magic = tmp_path / "m.bin"
    bad_magic.write_bytes(b"XXXXXXXX" + bytes(raw[8:]))
    with pytest.raises(CorruptFile):
        read_surrogate(bad_magic)

    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    (tmp_path / "f.bin").write_bytes(bytes(flipped))
    with pytest.raises(CorruptFile):
        read_surrogate(tmp_path / "f.bin")

    (tmp_path / "t.bin").write_bytes(bytes(raw[:10]))
    with pytest.raises(CorruptFile):
        read_surrogate(tmp_path / "t.bin")

    version = bytearray(raw)
    version[8] = 2
    (tmp_path / "v.bin").write_bytes(bytes(version))
    with pytest.raises(VersionMismatch):
        read_surrogate(tmp_path / "v.bin")

    with pytest.raises(CorruptFile):
        read_surrogate(path, expected_kind="MOGP")


def test_load_any_dispatches(tmp_path, rng):
    X = rng.uniform(-1, 1, (6, 1))
    y = np.sin(3 * X[:, 0])
    g = gp.GpModel.fit(X, y, ArdKernelParams([0.5], 1.0, 0.01))
    m = mogp.MogpModel.fit(X, np.c_[y, -y], [ArdKernelParams([0.5])], [LmcBasisParams([[1.0], [-1.0]], [0.1, 0.1])],
                           0.01)
    post = dgp.train_dgp(X, y, dgp.DgpMcmcConfig(samples=20, thinning=5, seed=0))
    for model, cls in ((g, gp.GpModel), (m, mogp.MogpModel), (post, dgp.DgpPosterior)):
        path = model.save(tmp_path / f"{cls.__name__}.bin")
        loaded = load_any(path)
        assert isinstance(loaded, cls)
        np.testing.assert_array_equal(np.asarray(loaded.predict(X).mean), np.asarray(model.predict(X).mean))
