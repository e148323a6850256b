import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timessm import autodiff as ad
from timessm.model import (
    STD_FLOOR,
    ModelConfig,
    TimeSSM,
    Variant,
    VariantMismatch,
    denormalize,
    instance_normalize,
    load_checkpoint,
    pad_to_patches,
    patch_embed,
    save_checkpoint,
    variable_kernel,
)

TINY = dict(lookback=32, horizon=8, patch_len=8, d_model=16, d_state=8, n_vars=2)


def tiny(**kw):
    return ModelConfig(**{**TINY, **kw})


def batch(seed=0, shape=(3, 32, 2)):
    return np.random.default_rng(seed).standard_normal(shape)


# -- configuration ------------------------------------------------------------


def test_defaults():
    c = ModelConfig()
    assert (c.lookback, c.horizon, c.patch_len, c.d_model, c.d_state, c.n_layers) == (96, 96, 16, 256, 64, 2)
    assert c.stride == c.patch_len
    assert c.k_modes == 64 and c.ar_pad == 0


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(stride=8)
    with pytest.raises(ValueError):
        ModelConfig(variant="legt-complex", d_state=7)
    with pytest.raises(ValueError):
        ModelConfig(variant="mamba")
    with pytest.raises(ValueError):
        ModelConfig(horizon=0)
    with pytest.raises(ValueError):
        ModelConfig(activation="relu")


def test_config_dict_round_trip():
    c = tiny(variant="legp-complex", legp_scales=2)
    assert ModelConfig.from_dict(c.to_dict()) == c


# -- normalization and patching ---------------------------------------------


def test_constant_channel_normalizes_to_zero():
    u = np.full((1, 10, 1), 4.2)
    u_norm, stats = instance_normalize(u)
    # one ulp of rounding in the mean, amplified by the std floor
    assert np.max(np.abs(u_norm)) < 1e-9
    assert stats.std[0, 0, 0] == STD_FLOOR
    np.testing.assert_allclose(denormalize(u_norm, stats), u)


def test_normalization_round_trip_and_moments():
    u = batch(1) * 7 + 3
    u_norm, stats = instance_normalize(u)
    assert np.max(np.abs(denormalize(u_norm, stats) - u)) < 1e-10
    assert np.max(np.abs(u_norm.mean(axis=1))) < 1e-12
    np.testing.assert_allclose(u_norm.std(axis=1), 1.0, rtol=1e-12)


def test_normalization_needs_two_steps():
    with pytest.raises(ValueError):
        instance_normalize(np.ones((1, 1, 1)))


def test_patch_count_with_padding():
    assert tiny(lookback=95, patch_len=16).n_patches() == 6
    u = np.arange(95.0).reshape(1, 95, 1)
    padded = pad_to_patches(u, 16)
    assert padded.shape == (1, 96, 1)
    assert padded[0, -1, 0] == 94.0


def test_single_patch_per_channel():
    tokens = patch_embed(batch(0, (2, 8, 3)), np.ones((4, 8)))
    assert tokens.shape == (2, 3, 1, 4)


def test_identity_embedding_yields_raw_patches():
    u = batch(2, (2, 32, 3))
    tokens = patch_embed(u, np.eye(8))
    np.testing.assert_array_equal(tokens[1, 2, 3], u[1, 24:32, 2])


# -- parameter generation ---------------------------------------------------


@pytest.mark.parametrize("variant", [v for v in Variant if not v.is_dense])
def test_step_sizes_are_positive(variant):
    model = TimeSSM(tiny(variant=variant))
    x = np.random.default_rng(0).standard_normal((4, 4, 16)) * 10
    dt, _, _, _ = model._step_factors(None, 0, x)
    assert np.all(dt > 0)


def test_dense_variant_has_no_step_factors():
    with pytest.raises(VariantMismatch):
        TimeSSM(tiny(variant="legs-dense"))._step_factors(None, 0, np.zeros((1, 4, 16)))


@pytest.mark.parametrize("variant", ["legs-complex", "legt-complex", "s4d-real"])
def test_zero_input_map_leaves_only_linear_path(variant):
    model = TimeSSM(tiny(variant=variant))
    for layer in range(2):
        model.params[f"layer{layer}/W_B"].value[:] = 0
    x = np.random.default_rng(1).standard_normal((2, 4, 16))
    _, B_bar, _ = model.generate_params(None, 0, x)
    np.testing.assert_array_equal(B_bar, 0)
    expected = ad.gelu(x @ model.params["layer0/W"].value.T + model.params["layer0/W_b"].value)
    np.testing.assert_allclose(model.layer_forward(None, 0, x), expected, atol=1e-14)


def test_eigenbasis_round_trip():
    model = TimeSSM(tiny(variant="legs-complex"))
    V = model._complex("V")
    b = np.random.default_rng(2).standard_normal(8)
    assert np.max(np.abs(V @ (V.conj().T @ b) - b)) < 1e-10


def test_identity_activation_without_linear_path_is_raw_ssm():
    model = TimeSSM(tiny(use_w=False, activation="identity"))
    x = np.random.default_rng(3).standard_normal((2, 4, 16))
    np.testing.assert_array_equal(model.layer_forward(None, 0, x), model._ssm(None, 0, x))


def test_layers_keep_shapes():
    model = TimeSSM(tiny())
    x = np.random.default_rng(4).standard_normal((2, 4, 16))
    assert model.layer_forward(None, 1, model.layer_forward(None, 0, x)).shape == x.shape


def test_dense_variant_uses_fixed_step():
    # Dense path equals a sequential loop with A_bar = exp(A/Lp), B_bar = B/Lp
    from timessm.tensor import matexp

    model = TimeSSM(tiny(variant="legt-dense"))
    x = np.random.default_rng(5).standard_normal((1, 4, 16))
    A, B, C = (model.params[k].value for k in ("hippo/A", "hippo/B", "layer0/C"))
    A_bar, B_bar = matexp(A / 4), B / 4
    state = np.zeros((16, 8))
    expected = []
    for t in range(4):
        state = state @ A_bar.T + np.outer(x[0, t], B_bar)
        expected.append(np.sum(C * state, axis=1))
    np.testing.assert_allclose(model._ssm(None, 0, x)[0], expected, atol=1e-12)


# -- variable kernel ---------------------------------------------------------


def test_variable_kernel_identity_when_all_modes_kept():
    y = np.random.default_rng(6).standard_normal((2, 5, 3, 4))
    out = variable_kernel(y, np.ones(5, dtype=complex), k_modes=64, axis=1)
    assert np.max(np.abs(out - y)) < 1e-10


def test_variable_kernel_single_channel_scales():
    y = np.random.default_rng(7).standard_normal((2, 1, 3, 4))
    np.testing.assert_allclose(variable_kernel(y, np.array([2.5 + 1j]), 4, axis=1), 2.5 * y, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9), st.integers(1, 9))
def test_variable_kernel_removes_energy(seed, D, k):
    y = np.random.default_rng(seed).standard_normal((2, D, 3))
    out = variable_kernel(y, np.ones(D, dtype=complex), k, axis=1)
    assert np.linalg.norm(out) <= np.linalg.norm(y) * (1 + 1e-12)


def test_variable_kernel_starts_as_residual_identity():
    u = batch(8)
    plain = TimeSSM(tiny()).forward(u)
    with_vk = TimeSSM(tiny(variable_kernel=True)).forward(u)
    np.testing.assert_array_equal(plain, with_vk)


# -- head ------------------------------------------------------------------


def test_head_width():
    model = TimeSSM(ModelConfig(n_vars=7, n_layers=1, d_state=4))
    assert model.params["head/Q"].value.shape == (96, 6 * 256)


def test_zero_tokens_give_the_mean():
    model = TimeSSM(tiny())
    model.params["head/b"].value[:] = 0
    u = batch(9) + 5
    _, stats = instance_normalize(u)
    y = model.head_project(None, np.zeros((3, 2, 4, 16)))
    np.testing.assert_array_equal(denormalize(y, stats), np.broadcast_to(stats.mean, (3, 8, 2)))


@pytest.mark.parametrize("variant", list(Variant))
def test_forward_shape_for_every_variant(variant):
    out = TimeSSM(tiny(variant=variant)).forward(batch(10))
    assert out.shape == (3, 8, 2)
    assert np.all(np.isfinite(out))


def test_wrong_lookback_rejected():
    with pytest.raises(ValueError):
        TimeSSM(tiny()).forward(batch(0, (1, 30, 2)))


# -- autoregressive mode ---------------------------------------------------------


def test_ar_without_padding_is_standard_forward():
    model = TimeSSM(tiny(ar_pad=8))
    u = batch(11)
    assert np.array_equal(model.forward_ar_padded(u, 0), model.forward(u))


@pytest.mark.parametrize("pad", [4, 8, 20])
def test_ar_output_length_is_horizon(pad):
    model = TimeSSM(tiny(ar_pad=pad))
    out = model.forward_ar_padded(batch(12))
    assert out.shape == (3, 8, 2)
    assert np.all(np.isfinite(out))


def test_padded_region_receives_nonzero_predictions():
    model = TimeSSM(tiny(ar_pad=8, use_w=False))
    u_norm, _ = instance_normalize(batch(13))
    out = model.predict_ar_normalized(u_norm, 8)
    assert np.all(np.abs(out - model.params["ar_head/b"].value[0]) > 0)


def test_ar_needs_its_head():
    model = TimeSSM(tiny())
    with pytest.raises(VariantMismatch):
        model.forward_ar_padded(batch(0), 8)


# -- invariants -----------------------------------------------------------------


@pytest.mark.parametrize("variant", ["s4d-real", "legs-complex", "legt-dense"])
@settings(max_examples=10, deadline=None)
@given(shift=st.floats(-100, 100))
def test_shift_equivariance(variant, shift):
    model = TimeSSM(tiny(variant=variant))
    u = batch(14)
    c = np.array([shift, -0.5 * shift])
    assert np.max(np.abs(model.forward(u + c) - model.forward(u) - c)) < 1e-8 * max(1, abs(shift))


def test_removing_eigenbasis_is_noop_for_real_diagonal():
    u = batch(15)
    np.testing.assert_array_equal(TimeSSM(tiny()).forward(u), TimeSSM(tiny(use_v=False)).forward(u))


def test_legp_without_scales_equals_legt():
    u = batch(16)
    legt = TimeSSM(tiny(variant="legt-complex")).forward(u)
    legp = TimeSSM(tiny(variant="legp-complex", legp_scales=0)).forward(u)
    assert np.array_equal(legt, legp)


def test_legp_scales_change_the_output():
    u = batch(16)
    legt = TimeSSM(tiny(variant="legt-complex")).forward(u)
    legp = TimeSSM(tiny(variant="legp-complex", legp_scales=2)).forward(u)
    assert not np.allclose(legt, legp)


@pytest.mark.parametrize(
    "variant,base", [("legs-complex", "s4d-real"), ("legs-dense", "s4d-real"), ("legt-dense", "s4d-real"), ("robust-b", "legs-complex")]
)
def test_frozen_hippo_params_get_zero_grads(variant, base):
    model = TimeSSM(tiny(variant=variant, robust_base=base))
    frozen = [p for name, p in model.params.items() if name.startswith("hippo/")]
    assert frozen and not any(p.trainable for p in frozen)
    tape = ad.Tape()
    tape.backward(ad.mean(ad.square(model.predict_normalized(instance_normalize(batch(17))[0], tape))))
    for p in frozen:
        np.testing.assert_array_equal(p.grad, 0)
    assert any(np.any(p.grad != 0) for p in model.parameters() if p.trainable)


@pytest.mark.parametrize("variant", ["s4d-real", "legp-complex", "full-select"])
def test_model_gradients(variant):
    model = TimeSSM(tiny(variant=variant, variable_kernel=True), seed=1)
    model.params["vk/W_re"].value[:] = [0.3, -0.2]
    u_norm, _ = instance_normalize(batch(18, (2, 32, 2)))
    y = batch(19, (2, 8, 2))
    err = ad.grad_check(lambda t: ad.mean(ad.square(model.predict_normalized(u_norm, t) - y)), model.parameters())
    assert err < 1e-4


def test_same_seed_same_model():
    u = batch(20)
    assert np.array_equal(TimeSSM(tiny(), seed=3).forward(u), TimeSSM(tiny(), seed=3).forward(u))
    assert not np.array_equal(TimeSSM(tiny(), seed=3).forward(u), TimeSSM(tiny(), seed=4).forward(u))


@pytest.mark.parametrize("variant", ["legs-complex", "legt-dense", "legp-complex"])
def test_checkpoint_round_trip(tmp_path, variant):
    model = TimeSSM(tiny(variant=variant, ar_pad=4), seed=2)
    model.params["layer0/W"].value += 0.125
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, {"note": "x"})
    assert path.read_text().splitlines()[0] == "timessm-v1"
    loaded, meta = load_checkpoint(path)
    assert meta["note"] == "x"
    u = batch(21)
    assert np.array_equal(loaded.forward(u), model.forward(u))
    assert [p.trainable for p in loaded.parameters()] == [p.trainable for p in model.parameters()]


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)
