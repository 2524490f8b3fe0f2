import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maskbench import diffcore as dc
from maskbench.errors import InputError
from maskbench.frontend import (
    FrontendConfig, Waveform, apply_mask, decode, encode, init_frontend_params, num_frames,
    read_wav, write_wav,
)


def params(cfg, seed=0):
    p = init_frontend_params(cfg, np.random.default_rng(seed))
    return p["encoder.weight"], p["decoder.weight"]


def test_defaults():
    cfg = FrontendConfig.from_ms(2.0, 8000)
    assert cfg.window == 16 and cfg.stride == 8 and cfg.feature_dim == 64
    with pytest.raises(ValueError):
        FrontendConfig(window=8, stride=9)


def test_frame_count():
    assert num_frames(32, 16, 8) == 3
    cfg = FrontendConfig(window=16, stride=8, feature_dim=4)
    enc, _ = params(cfg)
    assert encode(np.random.default_rng(0).standard_normal(32), enc, cfg).shape == (4, 3)
    assert encode(np.zeros(37), enc, cfg).shape == (4, 4)   # tail padded to 40


def test_short_input_rejected():
    cfg = FrontendConfig(window=16)
    enc, _ = params(cfg)
    with pytest.raises(InputError):
        encode(np.zeros(15), enc, cfg)


def test_zero_wave_and_linearity():
    cfg = FrontendConfig(window=16, stride=8, feature_dim=8)
    enc, dec = params(cfg)
    assert np.all(encode(np.zeros(64), enc, cfg).data == 0)
    x = np.random.default_rng(1).standard_normal(64)
    for a in (0.3, 2.0, 11.0):
        np.testing.assert_allclose(encode(a * x, enc, cfg, linear=True).data,
                                   a * encode(x, enc, cfg, linear=True).data, rtol=1e-12)
    S = dc.Tensor(np.random.default_rng(2).standard_normal((8, 7)))
    np.testing.assert_allclose(decode(S * 3.0, dec, cfg).data, 3.0 * decode(S, dec, cfg).data, rtol=1e-12)
    assert np.all(decode(dc.Tensor(np.zeros((8, 7))), dec, cfg).data == 0)


def test_apply_mask():
    rng = np.random.default_rng(3)
    S = dc.Tensor(rng.standard_normal((5, 6)))
    assert np.array_equal(apply_mask(S, np.ones((5, 6))).data, S.data)
    assert np.all(apply_mask(S, np.zeros((5, 6))).data == 0)
    with pytest.raises(dc.DimensionError):
        apply_mask(S, np.ones((5, 5)))


def test_pseudo_inverse_reconstruction():
    cfg = FrontendConfig(window=8, stride=8, feature_dim=12, nonlinearity="identity")
    enc, _ = params(cfg)
    dec = dc.Tensor(np.linalg.pinv(enc.data))
    x = np.random.default_rng(4).standard_normal(80)
    y = decode(encode(x, enc, cfg), dec, cfg, length=80).data
    assert np.max(np.abs(y - x)) / np.max(np.abs(x)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 12), st.integers(0, 60), st.integers(0, 1000))
def test_length_contract_and_distributivity(window, stride, extra, seed):
    stride = min(stride, window)
    cfg = FrontendConfig(window=window, stride=stride, feature_dim=5)
    enc, dec = params(cfg, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(window + extra)
    S = encode(x, enc, cfg)
    M1, M2 = rng.standard_normal(S.shape), rng.standard_normal(S.shape)
    out = lambda M: decode(apply_mask(S, M), dec, cfg, length=x.size).data
    assert out(M1).shape == x.shape
    lhs, rhs = out(M1 + M2), out(M1) + out(M2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(np.max(np.abs(lhs)), 1e-300)


def test_gradient_reaches_encoder_and_decoder():
    cfg = FrontendConfig(window=6, stride=3, feature_dim=4)
    enc, dec = params(cfg, 5)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(30)
    M, ref = rng.uniform(0.2, 1.0, (4, 9)), rng.standard_normal(30)
    fn = lambda: dc.tsum(dc.square(decode(apply_mask(encode(x, enc, cfg), M), dec, cfg, 30) - ref))
    assert dc.grad_check_many(fn, [enc, dec]) < 1e-5


def test_wav_round_trip(tmp_path):
    x = np.random.default_rng(6).uniform(-0.9, 0.9, 400)
    write_wav(tmp_path / "a.wav", x, 8000)
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate == 8000 and len(w) == 400
    assert np.max(np.abs(w.samples - x)) <= 0.5 / 32768 + 1e-12
    write_wav(tmp_path / "b.wav", w)
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_waveform_rejects_nonfinite():
    with pytest.raises(ValueError):
        Waveform([0.0, np.nan])
