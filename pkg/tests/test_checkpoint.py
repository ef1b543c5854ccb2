import struct

import numpy as np
import pytest

from sunsplat import checkpoint
from sunsplat.appearance import MlpParams
from sunsplat.config import RunConfig
from sunsplat.model import initialize_cloud
from sunsplat.trainer import new_state


@pytest.fixture
def state():
    rng = np.random.default_rng(0)
    st = new_state(rng.uniform(-1, 1, (40, 3)), RunConfig(config_id="d", n_init=40), 1.7)
    st.round, st.step, st.frames_consumed = 3, 30, 55
    return st


def test_round_trip(state, tmp_path):
    path = tmp_path / "x.sgsc"
    checkpoint.save(path, state)
    ck = checkpoint.load(path)
    cloud, mlps, cfg = checkpoint.restore(ck)
    assert cfg.to_dict() == state.config.to_dict()
    for name, arr in state.cloud.arrays().items():
        assert np.allclose(getattr(cloud, name), arr, rtol=1e-6, atol=1e-7)
    for net in ("phi", "psi"):
        src = getattr(state.mlps, net).params
        for k, v in getattr(mlps, net).params.items():
            assert np.allclose(v, src[k], rtol=1e-6, atol=1e-7)
    assert ck.state["round"] == 3 and ck.state["step"] == 30 and ck.state["frames_consumed"] == 55
    assert ck.state["gaussian_count"] == 40


def test_saving_twice_is_byte_identical(state, tmp_path):
    checkpoint.save(tmp_path / "a", state)
    checkpoint.save(tmp_path / "b", state)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_version_mismatch(state, tmp_path):
    path = tmp_path / "x.sgsc"
    checkpoint.save(path, state)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", checkpoint.VERSION + 1)
    with pytest.raises(checkpoint.VersionMismatch):
        checkpoint.loads(bytes(raw))
    with pytest.raises(ValueError):
        checkpoint.loads(b"NOPE" + bytes(raw[4:]))


def test_fresh_networks_restore_to_the_same_outputs(tmp_path):
    rng = np.random.default_rng(5)
    mlps = MlpParams.create(rng)
    cloud = initialize_cloud(rng.uniform(-1, 1, (10, 3)), rng)
    x = rng.normal(size=(4, mlps.phi.n_in))
    st = new_state(np.array([[0.0, 0, 0], [1, 0, 0]]), RunConfig(config_id="c", n_init=2), 1.0)
    st.cloud, st.mlps = cloud, mlps
    checkpoint.save(tmp_path / "m", st)
    _, back, _ = checkpoint.restore(checkpoint.load(tmp_path / "m"))
    assert np.allclose(back.phi.forward(x)[0], mlps.phi.forward(x)[0], atol=1e-5)
