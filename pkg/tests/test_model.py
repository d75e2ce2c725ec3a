import numpy as np
import pytest

from caepad import model as M
from caepad import tensor as T
from caepad.model import CaeConfig, ConfigError, Threshold
from caepad.tensor import ShapeError
from caepad.training import load_checkpoint, round_to_float32, save_checkpoint

from gradcheck import numerical_grad, rel_error

SMALL = CaeConfig(encoder_channels=(2, 4, 8))


@pytest.fixture(scope="module")
def model():
    return M.build_model(CaeConfig(), seed=3)


@pytest.fixture
def image():
    return np.random.default_rng(7).random((3, 64, 64))


def test_build_is_deterministic():
    a, b = M.build_model(CaeConfig(), 11), M.build_model(CaeConfig(), 11)
    for p, q in zip(a.parameters(), b.parameters()):
        assert p.tobytes() == q.tobytes()
    c = M.build_model(CaeConfig(), 12)
    assert not np.array_equal(a.parameters()[0], c.parameters()[0])


def test_default_encoder_shapes(model):
    assert M.encode_shapes(model) == [(16, 32, 32), (32, 16, 16), (64, 8, 8)]
    assert model.config.latent_shape() == (64, 8, 8)


def test_decoder_mirrors_encoder(model, image):
    _, cache = M.forward(model, image)
    enc_in = [c[0].shape for c in cache[:3]]
    dec_out = [c[1].shape for c in cache[3:]]
    # decoder stage i produces the shape encoder stage (2 - i) consumed, channels aside
    assert [s[1:] for s in dec_out] == [s[1:] for s in enc_in[::-1]]
    assert dec_out[-1] == (3, 64, 64)


def test_initialization_bounds(model):
    for layer in model.layers():
        fan_in = layer.in_channels * layer.kernel_size**2
        assert np.abs(layer.weights).max() <= np.sqrt(6.0 / fan_in)
        assert not layer.bias.any()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"encoder_channels": (8, 16, 32, 64, 128)},
        {"encoder_channels": (8, 16)},
        {"kernel_size": 4},
        {"encoder_channels": (8, 0, 16)},
        {"input_size": (3, 60, 60)},
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        CaeConfig(**kwargs)


def test_reconstruct_shape_and_range(model, image):
    out = M.reconstruct(model, image)
    assert out.shape == image.shape
    assert np.all(np.isfinite(out))
    assert np.all((out > 0) & (out < 1))


def test_reconstruct_rejects_bad_shape(model):
    with pytest.raises(ShapeError):
        M.reconstruct(model, np.zeros((3, 32, 32)))
    with pytest.raises(ShapeError):
        M.reconstruction_error(model, np.zeros((1, 64, 64)))


def test_error_is_euclidean_distance(model, image):
    err = M.reconstruction_error(model, image)
    rec = M.reconstruct(model, image)
    assert err == pytest.approx(np.linalg.norm((image - rec).ravel()), rel=1e-12)
    mse, _ = T.mse_loss(rec, image)
    assert err**2 == pytest.approx(12288 * mse, rel=1e-12)


def test_error_constant_offset_closed_form(monkeypatch, image):
    model = M.build_model(SMALL, 0)
    d = 0.125
    monkeypatch.setattr(M, "reconstruct", lambda m, x: x + d)
    assert M.reconstruction_error(model, image) == pytest.approx(d * np.sqrt(12288), rel=1e-12)
    monkeypatch.setattr(M, "reconstruct", lambda m, x: x.copy())
    assert M.reconstruction_error(model, image) == 0.0


def test_batch_error_matches_single(model):
    x = np.random.default_rng(2).random((4, 3, 64, 64))
    batch = M.reconstruction_error(model, x)
    for n in range(4):
        assert batch[n] == pytest.approx(M.reconstruction_error(model, x[n]), rel=1e-12)


@pytest.mark.parametrize("err,expected", [(0.3, M.CLIENT), (0.7, M.IMPOSTER), (0.5, M.IMPOSTER)])
def test_decision_rule(err, expected):
    assert M.decide(err, Threshold(0.5)) == expected


def test_classify_uses_reconstruction_error(model, image):
    err = M.reconstruction_error(model, image)
    assert M.classify(model, image, Threshold(err)) == M.IMPOSTER
    assert M.classify(model, image, Threshold(np.nextafter(err, np.inf))) == M.CLIENT


def test_classify_monotone_in_threshold():
    errors = np.random.default_rng(0).random(200) * 3
    thresholds = np.sort(np.random.default_rng(1).random(30) * 3)
    for e in errors:
        labels = [M.decide(e, Threshold(t)) for t in thresholds]
        first_client = labels.index(M.CLIENT) if M.CLIENT in labels else len(labels)
        assert all(lab == M.CLIENT for lab in labels[first_client:])


def test_threshold_must_be_non_negative():
    with pytest.raises(ValueError):
        Threshold(-0.1)


def test_serialization_round_trip_scores(tmp_path, model, image):
    path = tmp_path / "m.cae"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    reference = M.reconstruction_error(round_to_float32(model), image)
    assert M.reconstruction_error(loaded, image) == reference
    assert np.float32(M.reconstruction_error(loaded, image)) == pytest.approx(
        np.float32(M.reconstruction_error(model, image)), rel=1e-5
    )


def test_end_to_end_gradient_matches_finite_differences():
    """Every parameter of the width-reduced model, on one random 3x64x64 input."""
    model = M.build_model(SMALL, seed=5)
    for i, layer in enumerate(model.layers()):
        layer.bias = np.random.default_rng(100 + i).normal(scale=0.1, size=layer.bias.shape)
    x = np.random.default_rng(9).random((3, 64, 64))

    def loss():
        return T.mse_loss(M.reconstruct(model, x), x)[0]

    out, cache = M.forward(model, x)
    _, g = T.mse_loss(out, x)
    grads = M.backward(model, cache, out, g)
    for name, p, ga in zip(model.parameter_names(), model.parameters(), grads):
        gn = numerical_grad(loss, p)
        err = rel_error(ga, gn)
        assert err.max() < 1e-3, (name, err.max())
