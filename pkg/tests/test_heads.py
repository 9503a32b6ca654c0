import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsk.gradcheck import head_gradient_errors
from tsk.heads import (
    CONTINUOUS_KINDS,
    SEGMENTED_KINDS,
    ConfigError,
    HeadConfig,
    Model,
    abbreviate,
    bilstm_forward,
    count_parameters,
    forward_continuous,
    forward_segmented,
    pyramid_bounds,
    pyramid_pool,
)
from tsk.tensor import ShapeError, Tensor
from tsk.training import AdamState, adam_step

from oracles import pyramid_oracle

SMALL = dict(hidden=4, M=2, N=2, super_M=2)


def small_config(mode, kind, D=3, C=2, **kw):
    extra = dict(SMALL)
    if kind == "temporal_conv" or mode == "continuous":
        extra.setdefault("L", 3 if kind != "pyramid" else 4)
    if kind == "pyramid" and mode == "continuous":
        extra["pyramid_levels"] = [1, 2, 4]
    extra.update(kw)
    return HeadConfig(mode, kind, D, C, **extra)


def set_params(model, **values):
    for name, value in values.items():
        model[name].data[...] = value


# -- configuration ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["per_frame", "super_events", "sub_super"])
def test_continuous_only_kinds_rejected_in_segmented_mode(kind):
    with pytest.raises(ConfigError):
        HeadConfig("segmented", kind, 4, 2)


@pytest.mark.parametrize("bad", [dict(kind="nope"), dict(mode="both"), dict(D=0), dict(C=0), dict(N=1, kind="sub_events")])
def test_invalid_configs(bad):
    args = dict(mode="segmented", kind="max_pool", D=4, C=2) | bad
    with pytest.raises(ConfigError):
        HeadConfig(**args)


def test_task_defaults_and_mismatch():
    assert HeadConfig("segmented", "max_pool", 4, 2).task == "multilabel"
    assert HeadConfig("continuous", "max_pool", 4, 2).task == "detection"
    with pytest.raises(ConfigError):
        HeadConfig("segmented", "max_pool", 4, 2, task="detection")
    with pytest.raises(ConfigError):
        HeadConfig("segmented", "max_pool", 4, 2, task="speed")


def test_config_dict_roundtrip():
    cfg = HeadConfig("continuous", "sub_super", 5, 3, L=6, M=2)
    assert HeadConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        HeadConfig.from_dict(cfg.to_dict() | {"extra": 1})


def test_default_lengths_and_levels():
    assert HeadConfig("segmented", "temporal_conv", 4, 2).L == 8
    assert HeadConfig("continuous", "max_pool", 4, 2).L == 16
    assert HeadConfig("segmented", "pyramid", 4, 2).pyramid_levels == [1, 2, 4]
    assert HeadConfig("continuous", "pyramid", 4, 2).pyramid_levels == [2, 4, 8]


# -- parameter counts ----------------------------------------------------------------


def test_parameter_counts_at_full_scale():
    count = lambda kind, **kw: count_parameters(HeadConfig("segmented", kind, 2048, 8, **kw))
    assert count("max_pool") == count("mean_pool") == 2048 * 8 + 8 == 16_392
    assert count("pyramid") == 7 * 2048 * 8 + 8 == 114_696
    lstm = 2 * (2048 * 2048 + 512 * 2048 + 2048)
    assert lstm == 10_489_856
    assert count("bilstm") == lstm + 1024 * 8 + 8 == 10_498_056
    assert count("sub_events") == 3 * 3 + 9 * 2048 * 8 + 8
    assert count("temporal_conv") == 8 * 2048 * 2048 + 2048 * 8 + 8


def test_abbreviations():
    assert abbreviate(16_392) == "16K"
    assert abbreviate(114_696) == "115K"
    assert abbreviate(10_498_056) == "10.5M"
    assert abbreviate(10_489_856) == "10.5M"
    assert abbreviate(512) == "512"


@pytest.mark.parametrize("mode,kind", [("segmented", k) for k in SEGMENTED_KINDS] + [("continuous", k) for k in CONTINUOUS_KINDS])
def test_count_equals_scalars_moved_by_one_adam_step(mode, kind):
    model = Model.init(small_config(mode, kind), seed=1)
    before = {k: p.data.copy() for k, p in model.parameters.items()}
    grads = {k: np.ones_like(p.data) for k, p in model.parameters.items()}
    adam_step(AdamState(), {k: p.data for k, p in model.parameters.items()}, grads, 0.01)
    moved = sum(int(np.sum(model[k].data != before[k])) for k in before)
    assert moved == count_parameters(model.config) == model.num_parameters()


def test_init_is_seeded():
    cfg = small_config("continuous", "sub_super")
    a, b, c = Model.init(cfg, 3), Model.init(cfg, 3), Model.init(cfg, 4)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a.parameters)
    assert not np.array_equal(a["classifier.weight"].data, c["classifier.weight"].data)


def test_model_rejects_wrong_parameters():
    cfg = small_config("segmented", "max_pool")
    with pytest.raises(ConfigError):
        Model(cfg, {"classifier.weight": Tensor(np.zeros((3, 2)))})
    with pytest.raises(ConfigError):
        Model(cfg, {"classifier.weight": Tensor(np.zeros((2, 2))), "classifier.bias": Tensor(np.zeros(2))})


# -- pyramid pooling -----------------------------------------------------------------


def test_pyramid_of_ramp():
    v = Tensor(np.arange(8.0).reshape(8, 1))
    np.testing.assert_array_equal(pyramid_pool(v, [1, 2, 4]).data.ravel(), [7, 3, 7, 1, 3, 5, 7])


def test_pyramid_remainder_goes_to_earliest_intervals():
    assert pyramid_bounds(7, [2]) == [(0, 4), (4, 7)]
    assert pyramid_bounds(10, [4]) == [(0, 3), (3, 6), (6, 8), (8, 10)]


def test_pyramid_too_short():
    with pytest.raises(ShapeError, match="T >= 4"):
        pyramid_pool(Tensor(np.ones((3, 2))), [1, 2, 4])


def test_pyramid_matches_interval_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        T = int(rng.integers(8, 30))
        v = rng.normal(size=(T, 3))
        np.testing.assert_allclose(pyramid_pool(Tensor(v), [2, 4, 8]).data, pyramid_oracle(v, [2, 4, 8]), rtol=0, atol=1e-10)


@given(st.integers(4, 40), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_pyramid_of_constant(T, c):
    out = pyramid_pool(Tensor(np.full((T, 2), c)), [1, 2, 4]).data
    assert np.all(out == c)


# -- segmented heads -----------------------------------------------------------------


def test_max_pool_head_with_selector_classifier():
    model = Model.init(HeadConfig("segmented", "max_pool", 2, 2), 0)
    set_params(model, **{"classifier.weight": np.eye(2), "classifier.bias": 0.0})
    v = np.array([[0.1, 4.0], [2.0, -1.0], [0.5, 0.0]])
    np.testing.assert_array_equal(forward_segmented(model, v).data, [2.0, 4.0])


def test_sub_events_delta_filter_reads_one_frame():
    T, D = 10, 2
    model = Model.init(HeadConfig("segmented", "sub_events", D, D, M=1, N=2), 0)
    # g = T/2 (g~ + 1) = 6 with zero stride puts both Gaussians on frame 6
    set_params(model, **{"sub.center": 0.2, "sub.stride": 0.0, "sub.width": 1e-3})
    set_params(model, **{"classifier.weight": np.vstack([np.eye(D), np.zeros((D, D))]), "classifier.bias": 0.0})
    v = np.random.default_rng(1).normal(size=(T, D))
    np.testing.assert_allclose(forward_segmented(model, v).data, v[6])


def test_wide_sub_event_filters_reproduce_mean_pool():
    T, D = 12, 3
    sub = Model.init(HeadConfig("segmented", "sub_events", D, 2, M=1, N=2), 0)
    # a width far beyond T makes every Gaussian row uniform
    set_params(sub, **{"sub.width": 1e6})
    mean = Model.init(HeadConfig("segmented", "mean_pool", D, 2), 0)
    w = np.random.default_rng(2).normal(size=(D, 2))
    set_params(mean, **{"classifier.weight": w, "classifier.bias": 0.0})
    set_params(sub, **{"classifier.weight": np.vstack([w, np.zeros((D, 2))]), "classifier.bias": 0.0})
    v = np.random.default_rng(3).normal(size=(T, D))
    np.testing.assert_allclose(forward_segmented(sub, v).data, forward_segmented(mean, v).data, atol=1e-9)


@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_max_pool_head_is_permutation_invariant(T, seed):
    rng = np.random.default_rng(seed)
    model = Model.init(HeadConfig("segmented", "max_pool", 4, 3), 0)
    v = rng.normal(size=(T, 4))
    assert np.array_equal(forward_segmented(model, v).data, forward_segmented(model, v[rng.permutation(T)]).data)


def test_segmented_output_shapes():
    v = np.random.default_rng(4).normal(size=(9, 3))
    for kind in SEGMENTED_KINDS:
        assert forward_segmented(Model.init(small_config("segmented", kind), 0), v).shape == (2,)


def test_temporal_conv_too_short():
    model = Model.init(HeadConfig("segmented", "temporal_conv", 2, 2), 0)
    with pytest.raises(ShapeError, match="T >= 8"):
        forward_segmented(model, np.ones((5, 2)))


def test_wrong_feature_width():
    model = Model.init(HeadConfig("segmented", "max_pool", 3, 2), 0)
    with pytest.raises(ShapeError):
        model(np.ones((4, 5)))


def test_bilstm_zero_weights_give_zero_state():
    model = Model.init(small_config("segmented", "bilstm"), 0)
    for name in model.parameters:
        if name.startswith("lstm."):
            set_params(model, **{name: 0.0})
    out = bilstm_forward(model, np.random.default_rng(5).normal(size=(6, 3)))
    np.testing.assert_array_equal(out.data, np.zeros(8))


def test_bilstm_single_frame_directions_agree():
    model = Model.init(small_config("segmented", "bilstm"), 0)
    for part in ("w_input", "w_hidden", "bias"):
        model[f"lstm.bwd.{part}"].data[...] = model[f"lstm.fwd.{part}"].data
    out = bilstm_forward(model, np.random.default_rng(6).normal(size=(1, 3))).data
    np.testing.assert_array_equal(out[:4], out[4:])


def test_bilstm_matches_reference_recurrence():
    model = Model.init(small_config("segmented", "bilstm"), 2)
    v = np.random.default_rng(7).normal(size=(5, 3))
    sig = lambda x: 1 / (1 + np.exp(-x))
    H = 4

    def run(d, frames):
        W, U, b = (model[f"lstm.{d}.{k}"].data for k in ("w_input", "w_hidden", "bias"))
        h, c = np.zeros(H), np.zeros(H)
        for x in frames:
            z = x @ W + h @ U + b
            c = sig(z[H:2 * H]) * c + sig(z[:H]) * np.tanh(z[2 * H:3 * H])
            h = sig(z[3 * H:]) * np.tanh(c)
        return h

    expected = np.concatenate([run("fwd", v), run("bwd", v[::-1])])
    np.testing.assert_allclose(bilstm_forward(model, v).data, expected, atol=1e-12)


# -- continuous heads ----------------------------------------------------------------


@pytest.mark.parametrize("kind", CONTINUOUS_KINDS)
def test_continuous_output_has_t_rows(kind):
    model = Model.init(small_config("continuous", kind), 0)
    for T in (4, 7, 11):
        assert forward_continuous(model, np.random.default_rng(T).normal(size=(T, 3))).shape == (T, 2)


def test_per_frame_constant_input_constant_logits():
    model = Model.init(HeadConfig("continuous", "per_frame", 3, 2), 0)
    out = forward_continuous(model, np.tile([[0.3, -1.0, 2.0]], (6, 1))).data
    assert np.all(out == out[0])


def test_sliding_max_pool_replicates_edges():
    model = Model.init(HeadConfig("continuous", "max_pool", 1, 1, L=3), 0)
    set_params(model, **{"classifier.weight": 1.0, "classifier.bias": 0.0})
    out = forward_continuous(model, np.array([[1.0], [2.0], [3.0]])).data
    np.testing.assert_array_equal(out.ravel(), [2, 3, 3])


def test_super_events_context_is_shared_across_frames():
    model = Model.init(HeadConfig("continuous", "super_events", 2, 3, super_M=2), 0)
    w = np.zeros((2 + 3 * 2, 3))
    w[2:] = np.random.default_rng(8).normal(size=(6, 3))
    set_params(model, **{"classifier.weight": w, "classifier.bias": 0.0})
    out = forward_continuous(model, np.random.default_rng(9).normal(size=(7, 2))).data
    np.testing.assert_allclose(out, np.tile(out[0], (7, 1)))


def test_window_longer_than_video():
    model = Model.init(HeadConfig("continuous", "sub_events", 2, 2, L=8), 0)
    with pytest.raises(ShapeError, match="L=8"):
        forward_continuous(model, np.ones((5, 2)))


def test_mode_mismatch():
    with pytest.raises(ConfigError):
        forward_continuous(Model.init(HeadConfig("segmented", "max_pool", 2, 2), 0), np.ones((3, 2)))
    with pytest.raises(ConfigError):
        forward_segmented(Model.init(HeadConfig("continuous", "max_pool", 2, 2, L=2), 0), np.ones((3, 2)))


# -- gradients -------------------------------------------------------------------------


@pytest.mark.parametrize("mode,kind", [("segmented", k) for k in SEGMENTED_KINDS] + [("continuous", k) for k in CONTINUOUS_KINDS])
def test_head_gradients(mode, kind):
    errs = head_gradient_errors(small_config(mode, kind), T=9, seed=0)
    assert max(errs.values()) <= 1e-4, errs


@pytest.mark.parametrize("task,C", [("speed", 1), ("pitch_type", 4)])
def test_regression_and_softmax_head_gradients(task, C):
    errs = head_gradient_errors(small_config("segmented", "sub_events", C=C, task=task), T=8, seed=1)
    assert max(errs.values()) <= 1e-4, errs


def test_bilstm_gradients_at_hidden_8():
    errs = head_gradient_errors(HeadConfig("segmented", "bilstm", 3, 2, hidden=8), T=5, seed=2)
    assert max(errs.values()) <= 1e-4, errs
