import numpy as np
import pytest

from imukit.diffusion import (
    DenoiserModel, ModelConfig, build_schedule, load_model, predict_noise, save_model,
)
from imukit.diffusion.model import bottleneck_features
from imukit.diffusion.text import PAD_ID
from oracle_forward import oracle_forward


@pytest.fixture()
def prompt(tiny_model):
    return tiny_model.encode_prompt([1, 17, 20, 4, 21, 0, 0, 0])


def test_output_shape_matches_input(tiny_model, prompt, rng):
    x = rng.random((16, 16, 3)).astype(np.float32)
    for t in (0, 7, 19):
        eps, rec = predict_noise(tiny_model, x, t, prompt)
        assert eps.shape == (16, 16, 3)
        assert rec is None


def test_captured_maps_rows_sum_to_one(tiny_model, prompt, rng):
    x = rng.random((16, 16, 3)).astype(np.float32)
    _, rec = predict_noise(tiny_model, x, 3, prompt, capture_attention=True)
    assert len(rec.per_block) == 2
    assert rec.resolutions == [(8, 8), (4, 4)]
    for maps in rec.per_block:
        sums = maps.data.sum(axis=-1)
        assert np.abs(sums - 1.0).max() <= 1e-6
        assert (maps.data >= 0).all()


def test_capture_does_not_change_prediction(tiny_model, prompt, rng):
    x = rng.random((16, 16, 3)).astype(np.float32)
    e1, _ = predict_noise(tiny_model, x, 5, prompt, capture_attention=True)
    e2, _ = predict_noise(tiny_model, x, 5, prompt)
    assert np.array_equal(e1.data, e2.data)


def test_prediction_deterministic(tiny_model, prompt, rng):
    x = rng.random((16, 16, 3)).astype(np.float32)
    e1, _ = predict_noise(tiny_model, x, 5, prompt)
    e2, _ = predict_noise(tiny_model, x, 5, prompt)
    assert np.array_equal(e1.data, e2.data)


def test_forward_matches_float64_reference(tiny_model, rng):
    ids = [2, 18, 20, 9, 21, 0, 0, 0]
    prompt = tiny_model.encode_prompt(ids)
    x = rng.random((16, 16, 3)).astype(np.float32)
    eps, rec = predict_noise(tiny_model, x, 4, prompt, capture_attention=True)
    ref_eps, ref_maps = oracle_forward(tiny_model, x.astype(np.float64), 4, ids)
    assert np.allclose(eps.data, ref_eps, rtol=1e-4, atol=1e-5)
    for got, want in zip(rec.per_block, ref_maps):
        assert np.allclose(got.data, want, rtol=1e-4, atol=1e-6)


def test_encode_prompt_validation(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.encode_prompt([1, 2, 3])  # wrong length
    with pytest.raises(ValueError):
        tiny_model.encode_prompt([999] * 8)  # out of vocabulary
    p = tiny_model.encode_prompt([5, 0, 0, 0, 0, 0, 0, 0])
    assert p.content_mask.tolist() == [True] + [False] * 7
    assert p.matrix.shape == (8, tiny_model.config.d_text)


def test_timestep_validation(tiny_model, prompt, rng):
    x = rng.random((16, 16, 3)).astype(np.float32)
    with pytest.raises(ValueError):
        predict_noise(tiny_model, x, 20, prompt)


def test_input_shape_validation(tiny_model, prompt):
    with pytest.raises(ValueError):
        predict_noise(tiny_model, np.zeros((8, 8, 3), dtype=np.float32), 1, prompt)


def test_serialization_round_trip_bit_exact(tmp_path, tiny_model, prompt, rng):
    path = tmp_path / "model.bin"
    save_model(tiny_model, path)
    loaded = load_model(path)
    assert loaded.config == tiny_model.config
    assert loaded.schedule.T == tiny_model.schedule.T
    for name in tiny_model.param_names():
        assert np.array_equal(loaded.params[name].data, tiny_model.params[name].data)
    x = rng.random((16, 16, 3)).astype(np.float32)
    p2 = loaded.encode_prompt(prompt.token_ids)
    e1, _ = predict_noise(tiny_model, x, 2, prompt)
    e2, _ = predict_noise(loaded, x, 2, p2)
    assert np.array_equal(e1.data, e2.data)


def test_save_twice_byte_identical(tmp_path, tiny_model):
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(tiny_model, p1)
    save_model(tiny_model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_bottleneck_features_deterministic(tiny_model, rng):
    x = rng.random((16, 16, 3)).astype(np.float32)
    neutral = tiny_model.encode_prompt([PAD_ID] * 8)
    f1 = bottleneck_features(tiny_model, x, 1, neutral)
    f2 = bottleneck_features(tiny_model, x, 1, neutral)
    assert f1.shape == (4, 4, tiny_model.config.widths[2])
    assert np.array_equal(f1, f2)


def test_init_is_seeded():
    sched = build_schedule(20)
    cfg = ModelConfig(image_size=16, widths=(8, 12, 16), d_k=8, d_text=8, d_time=16)
    a = DenoiserModel.init(cfg, seed=3, schedule=sched)
    b = DenoiserModel.init(cfg, seed=3, schedule=sched)
    c = DenoiserModel.init(cfg, seed=4, schedule=sched)
    assert np.array_equal(a.params["enc0_w"].data, b.params["enc0_w"].data)
    assert not np.array_equal(a.params["enc0_w"].data, c.params["enc0_w"].data)
