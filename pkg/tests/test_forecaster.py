import struct

import numpy as np
import pytest

from handcast import checkpoint as ck
from handcast import forecaster as fc
from handcast.dataio import NormStats, denormalize
from handcast.nnkernel.layers import ConfigError, init_parameters, linear_shapes, sinusoidal_encoding
from handcast.nnkernel.prng import Prng
from handcast.nnkernel.gradcheck import grad_check
from handcast.nnkernel.tensor import sum_
from handcast.selfcheck import check_end_to_end, miniature_batch, miniature_model


def closed_form_count(D, dv, dt, n_enc, n_dec, t_fut):
    block = 16 * D * D + 19 * D  # cross + self attention (4D^2+6D each) and FFN (8D^2+7D)
    return (168 * D + D) + (dv * D + D) + (dt * D + D) + n_enc * block + t_fut * D + n_dec * block + 126 * D + 126


def test_parameter_count_default():
    cfg = fc.ModelConfig()
    assert fc.parameter_count(cfg) == closed_form_count(64, 5, 16, 2, 2, 10)
    assert sum(p.data.size for p in fc.build(cfg).params.values()) == fc.parameter_count(cfg)


def test_build_deterministic_and_seeded():
    a, b = fc.build(fc.ModelConfig(seed=3)), fc.build(fc.ModelConfig(seed=3))
    assert list(a.params) == list(b.params)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    c = fc.build(fc.ModelConfig(seed=4))
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_init_distribution():
    p = fc.build(fc.ModelConfig()).params
    assert np.max(np.abs(p["state.W"].data)) <= np.sqrt(1 / 168)
    assert np.all(p["state.b"].data == 0) and np.all(p["enc0.cross.ln.g"].data == 1)
    assert abs(np.std(p["queries"].data) - 0.02) < 0.005


@pytest.mark.parametrize("kw", [{"d_model": 30, "heads": 4}, {"enc_blocks": 0}, {"t_fut": 0}])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        fc.build(fc.ModelConfig(**kw))


def state_params(D=8):
    return init_parameters(linear_shapes("state", 168, D), Prng(0))


def test_encode_state_zero_case():
    p = state_params()
    p["state.W"].data[:] = 0
    s = fc.encode_state(np.zeros((1, 20, 42, 3)), np.zeros((1, 20, 42), bool), p)
    assert np.array_equal(s.data[0], sinusoidal_encoding(np.arange(20), 8))


def test_encode_state_masked_slots_ignored(rng):
    p = state_params()
    obs = rng.uniform(size=(2, 20, 42, 3))
    mask = rng.uniform(size=(2, 20, 42)) < 0.7
    junk = obs.copy()
    junk[~mask] = 99.0
    assert np.array_equal(fc.encode_state(obs, mask, p).data, fc.encode_state(junk, mask, p).data)


def test_encode_state_gradient(rng):
    p = state_params()
    obs, mask = rng.uniform(size=(2, 5, 42, 3)), rng.uniform(size=(2, 5, 42)) < 0.8
    assert grad_check(lambda: sum_(fc.encode_state(obs, mask, p) * fc.encode_state(obs, mask, p)), p) < 1e-4


def test_encode_state_shape_error():
    with pytest.raises(ValueError):
        fc.encode_state(np.zeros((1, 20, 42, 2)), np.zeros((1, 20, 42), bool), state_params())


def test_forward_shape_and_determinism():
    model = miniature_model(0)
    batch = miniature_batch(1, model.config)
    a = fc.forward(model, batch).data
    assert a.shape == (2, 2, 42, 3)
    assert np.array_equal(a, fc.forward(model, batch).data)


def test_default_forward_on_samples(small_samples):
    model = fc.build(fc.ModelConfig(), fc.NormStats(np.zeros(3), np.ones(3)))
    out = fc.predict(model, small_samples.train[:3])
    assert out.shape == (3, 10, 42, 3) and np.all(np.isfinite(out))


def test_zero_head_closed_form():
    model = miniature_model(0)
    model.norm = NormStats(np.array([-1.0, 0.0, 2.0]), np.array([1.0, 4.0, 2.0]))
    model.params["head.W"].data[:] = 0.0
    model.params["head.b"].data[:] = 0.0
    out = fc.forward(model, miniature_batch(1, model.config)).data
    expect = denormalize(np.full(3, 0.5), model.norm)  # mid-range
    assert np.array_equal(out, np.broadcast_to(expect, out.shape))
    assert expect.tolist() == [0.0, 2.0, 2.0]

    bias = np.linspace(-0.25, 0.25, 126)
    model.params["head.b"].data[:] = bias
    out = fc.forward(model, miniature_batch(1, model.config)).data
    expect = denormalize((0.5 + bias).reshape(42, 3), model.norm)
    assert np.max(np.abs(out - expect)) < 1e-15


def test_denormalized_output_path(rng):
    model = miniature_model(0)
    model.norm = NormStats(np.array([-1.0, 0.0, 0.5]), np.array([1.0, 4.0, 2.0]))
    batch = miniature_batch(1, model.config)
    normed = fc.forward_normalized(model, batch).data
    out = fc.forward(model, batch).data
    assert np.max(np.abs(out - denormalize(normed, model.norm))) < 1e-12


def test_end_to_end_gradient():
    assert check_end_to_end(0) < 1e-3


def test_checkpoint_round_trip(tmp_path):
    model = miniature_model(2)
    model.norm = NormStats(np.array([-0.3, 0.1, 0.2]), np.array([0.7, 0.9, 1.3]))
    batch = miniature_batch(1, model.config)
    fc.save_checkpoint(model, tmp_path / "m.ckpt")
    back = fc.load_checkpoint(tmp_path / "m.ckpt")
    assert list(back.params) == list(model.params)
    assert np.array_equal(fc.forward(model, batch).data, fc.forward(back, batch).data)
    assert np.array_equal(back.norm.lo, model.norm.lo) and back.config == model.config
    blob = (tmp_path / "m.ckpt").read_bytes()
    assert blob[:4] == b"EGGH" and struct.unpack_from("<I", blob, 4)[0] == 1


def test_checkpoint_bytes_are_stable(tmp_path):
    fc.save_checkpoint(miniature_model(2), tmp_path / "a")
    fc.save_checkpoint(miniature_model(2), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def corrupt(path, fn):
    path.write_bytes(fn(path.read_bytes()))


def test_checkpoint_errors(tmp_path):
    good = tmp_path / "m.ckpt"
    fc.save_checkpoint(miniature_model(0), good)
    raw = good.read_bytes()

    bad = tmp_path / "bad"
    bad.write_bytes(raw[:-10])
    with pytest.raises(ck.LengthError):
        fc.load_checkpoint(bad)
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ck.MagicError):
        fc.load_checkpoint(bad)
    bad.write_bytes(raw[:4] + struct.pack("<I", 7) + raw[8:])
    with pytest.raises(ck.VersionError):
        fc.load_checkpoint(bad)

    # a config that implies a different parameter count than the payload holds
    header, payload = ck.read_container(good)
    header["config"]["d_model"] = 12
    header["config"]["heads"] = 2
    ck.write_container(bad, header, np.zeros(0))
    bad.write_bytes(bad.read_bytes()[:-8] + struct.pack("<Q", len(payload)) + payload)
    with pytest.raises(ck.IntegrityError):
        fc.load_checkpoint(bad)
    kinds = [ck.LengthError, ck.MagicError, ck.VersionError, ck.IntegrityError]
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)
