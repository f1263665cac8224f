import numpy as np
import pytest

from satmamba.model import (
    CheckpointError,
    desk_config,
    init_model,
    load_checkpoint,
    params_from_checkpoint,
    params_to_arrays,
    save_checkpoint,
)
from satmamba.ndgrad import Rng


def small_cfg():
    return desk_config(enc_dim=32, enc_depth=1, dec_dim=16, dec_depth=1,
                       state_dim=4, head_dim=16)


def test_roundtrip_is_bit_identical(tmp_path):
    cfg = small_cfg()
    params = init_model(cfg, seed=4)
    arrays = params_to_arrays(params)
    arrays["norm.mean"] = Rng(1).normal((3,), dtype=np.float32)
    arrays["extra.f64"] = Rng(2).normal((5, 2), dtype=np.float64)
    path = tmp_path / "m.smck"
    save_checkpoint(path, cfg, arrays, step=17,
                    rng_states={"seed": 9, "epoch": 3})
    ck = load_checkpoint(path)
    assert ck.version == 1
    assert ck.step == 17
    assert ck.rng_states == {"seed": 9, "epoch": 3}
    assert ck.config == cfg
    assert set(ck.arrays) == set(arrays)
    for name, arr in arrays.items():
        assert ck.arrays[name].dtype == arr.dtype
        assert ck.arrays[name].tobytes() == arr.tobytes(), name


def test_params_from_checkpoint_restores_exact_values(tmp_path):
    cfg = small_cfg()
    params = init_model(cfg, seed=11)
    path = tmp_path / "m.smck"
    save_checkpoint(path, cfg, params_to_arrays(params))
    restored = params_from_checkpoint(load_checkpoint(path))
    for (na, ta), (nb, tb) in zip(params.named_parameters(),
                                  restored.named_parameters()):
        assert na == nb
        assert ta.data.tobytes() == tb.data.tobytes(), na
        assert tb.requires_grad


def test_magic_and_version_checked(tmp_path):
    path = tmp_path / "bad.smck"
    path.write_bytes(b"JUNKxxxxxxxx")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    good = tmp_path / "good.smck"
    save_checkpoint(good, small_cfg(), {})
    raw = bytearray(good.read_bytes())
    raw[4] = 99
    bad_ver = tmp_path / "ver.smck"
    bad_ver.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad_ver)


def test_shape_mismatch_detected(tmp_path):
    cfg = small_cfg()
    params = init_model(cfg, seed=0)
    arrays = params_to_arrays(params)
    arrays["patch_embed.b"] = np.zeros(7, dtype=np.float32)
    path = tmp_path / "m.smck"
    save_checkpoint(path, cfg, arrays)
    with pytest.raises(CheckpointError, match="shape"):
        params_from_checkpoint(load_checkpoint(path))


def test_missing_parameter_detected(tmp_path):
    cfg = small_cfg()
    params = init_model(cfg, seed=0)
    arrays = params_to_arrays(params)
    del arrays["mask_token"]
    path = tmp_path / "m.smck"
    save_checkpoint(path, cfg, arrays)
    with pytest.raises(CheckpointError, match="missing"):
        params_from_checkpoint(load_checkpoint(path))
