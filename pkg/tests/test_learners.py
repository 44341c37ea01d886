import numpy as np
import pytest

from latentpde import (DataFormatError, DivergenceError, LinearMap, ParameterError,
                       TrainConfig, fit_least_squares, fit_sgd, fit_superres,
                       history_sweep, mse_loss_and_grad)


def make_linear_problem(samples, k, m, out_dim, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    histories = rng.standard_normal((samples, k, m))
    true_w = rng.standard_normal((out_dim, k * m))
    true_b = rng.standard_normal(out_dim)
    targets = histories.reshape(samples, -1) @ true_w.T + true_b
    if noise:
        targets = targets + noise * rng.standard_normal(targets.shape)
    return histories, targets, true_w, true_b


def test_least_squares_recovers_exact_map():
    histories, targets, true_w, true_b = make_linear_problem(200, 3, 5, 4, seed=0)
    fitted = fit_least_squares(histories, targets)
    np.testing.assert_allclose(fitted.weights, true_w, atol=1e-9)
    np.testing.assert_allclose(fitted.bias, true_b, atol=1e-9)
    assert fitted.history_len == 3 and fitted.token_dim == 5
    assert fitted.output_shape == (4,)


def test_least_squares_is_optimal():
    histories, targets, _, _ = make_linear_problem(150, 2, 4, 3, seed=1, noise=0.3)
    fitted = fit_least_squares(histories, targets)
    x = histories.reshape(150, -1)
    best = np.mean((x @ fitted.weights.T + fitted.bias - targets) ** 2)
    rng = np.random.default_rng(2)
    for _ in range(100):
        dw = 1e-3 * rng.standard_normal(fitted.weights.shape)
        db = 1e-3 * rng.standard_normal(fitted.bias.shape)
        perturbed = np.mean((x @ (fitted.weights + dw).T + fitted.bias + db
                             - targets) ** 2)
        assert perturbed >= best - 1e-12


def test_no_bias_option():
    histories, targets, true_w, _ = make_linear_problem(100, 2, 3, 2, seed=3)
    fitted = fit_least_squares(histories, targets, bias=False)
    assert fitted.bias is None
    # without an intercept the recovered weights must absorb nothing
    centered_targets = histories.reshape(100, -1) @ true_w.T
    refit = fit_least_squares(histories, centered_targets, bias=False)
    np.testing.assert_allclose(refit.weights, true_w, atol=1e-9)


def test_ridge_shrinks_weights_not_bias():
    histories, targets, _, _ = make_linear_problem(300, 2, 4, 3, seed=4, noise=0.1)
    plain = fit_least_squares(histories, targets)
    ridged = fit_least_squares(histories, targets, ridge=10.0)
    assert np.linalg.norm(ridged.weights) < np.linalg.norm(plain.weights)
    # a large constant shift must still be tracked exactly by the intercept
    shifted = fit_least_squares(histories, targets + 100.0, ridge=10.0)
    np.testing.assert_allclose(shifted.weights, ridged.weights, atol=1e-8)
    np.testing.assert_allclose(shifted.bias, ridged.bias + 100.0, atol=1e-8)


def test_ridge_matches_normal_equations():
    histories, targets, _, _ = make_linear_problem(80, 2, 3, 2, seed=5, noise=0.2)
    s = histories.shape[0]
    ridge = 0.7
    fitted = fit_least_squares(histories, targets, ridge=ridge)
    x = np.hstack([histories.reshape(s, -1), np.ones((s, 1))])
    reg = ridge * s * np.eye(x.shape[1])
    reg[-1, -1] = 0.0  # intercept not penalised
    theta = np.linalg.solve(x.T @ x + reg, x.T @ targets)
    np.testing.assert_allclose(fitted.weights, theta[:-1].T, atol=1e-8)
    np.testing.assert_allclose(fitted.bias, theta[-1], atol=1e-8)


def test_rank_deficient_duplicate_feature():
    rng = np.random.default_rng(6)
    base = rng.standard_normal((50, 1, 3))
    histories = np.concatenate([base, base[:, :, :1]], axis=2)  # column 3 = column 0
    targets = base[:, 0, :1] * 2.0
    with pytest.warns(RuntimeWarning, match="rank"):
        fitted = fit_least_squares(histories, targets)
    assert fitted.design_rank == 4
    # minimum-norm solution splits the weight across the duplicates
    assert fitted.weights[0, 0] == pytest.approx(fitted.weights[0, 3], abs=1e-8)
    pred = fitted.apply(histories)
    np.testing.assert_allclose(pred, targets, atol=1e-8)


def test_sample_order_invariance():
    histories, targets, _, _ = make_linear_problem(120, 2, 4, 3, seed=7, noise=0.05)
    fitted = fit_least_squares(histories, targets)
    perm = np.random.default_rng(8).permutation(120)
    refit = fit_least_squares(histories[perm], targets[perm])
    np.testing.assert_allclose(refit.weights, fitted.weights, atol=1e-9)
    np.testing.assert_allclose(refit.bias, fitted.bias, atol=1e-9)


def test_apply_shapes():
    histories, targets, _, _ = make_linear_problem(10, 2, 3, 4, seed=9)
    fitted = fit_least_squares(histories, targets)
    single = fitted.apply(histories[0])
    assert single.shape == (4,)
    np.testing.assert_allclose(single, fitted.apply(histories)[0])
    with pytest.raises(ParameterError):
        fitted.apply(np.ones((3, 3)))


def test_superres_recovers_field_map():
    rng = np.random.default_rng(10)
    histories = rng.standard_normal((120, 2, 4))
    true_w = rng.standard_normal((36, 8))
    fields = (histories.reshape(120, -1) @ true_w.T).reshape(120, 6, 6)
    fitted = fit_superres(histories, fields)
    assert fitted.output_shape == (6, 6)
    np.testing.assert_allclose(fitted.weights, true_w, atol=1e-8)
    pred = fitted.apply(histories[3])
    np.testing.assert_allclose(pred, fields[3], atol=1e-8)


def test_save_load_roundtrip(tmp_path):
    histories, targets, _, _ = make_linear_problem(40, 2, 3, 2, seed=11)
    fitted = fit_least_squares(histories, targets)
    path = tmp_path / "map.lpm"
    fitted.save(path)
    loaded = LinearMap.load(path)
    np.testing.assert_array_equal(loaded.weights, fitted.weights)
    np.testing.assert_array_equal(loaded.bias, fitted.bias)
    assert loaded.history_len == fitted.history_len
    assert loaded.output_shape == fitted.output_shape


def test_load_rejects_corrupt_files(tmp_path):
    histories, targets, _, _ = make_linear_problem(40, 2, 3, 2, seed=12)
    fitted = fit_least_squares(histories, targets)
    path = tmp_path / "map.lpm"
    fitted.save(path)
    raw = path.read_bytes()
    (tmp_path / "trunc.lpm").write_bytes(raw[:-16])
    with pytest.raises(DataFormatError):
        LinearMap.load(tmp_path / "trunc.lpm")
    (tmp_path / "garbage.lpm").write_bytes(b"not a model" + raw)
    with pytest.raises(DataFormatError):
        LinearMap.load(tmp_path / "garbage.lpm")


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((30, 8))
    y = rng.standard_normal((30, 3))
    w = rng.standard_normal((3, 8))
    b = rng.standard_normal(3)
    loss, gw, gb = mse_loss_and_grad(w, b, x, y, ridge=0.3)
    eps = 1e-6
    for idx in [(0, 0), (1, 4), (2, 7)]:
        wp = w.copy()
        wp[idx] += eps
        wm = w.copy()
        wm[idx] -= eps
        lp, _, _ = mse_loss_and_grad(wp, b, x, y, ridge=0.3)
        lm, _, _ = mse_loss_and_grad(wm, b, x, y, ridge=0.3)
        fd = (lp - lm) / (2 * eps)
        assert gw[idx] == pytest.approx(fd, rel=1e-6)
    bp = b.copy()
    bp[1] += eps
    bm = b.copy()
    bm[1] -= eps
    lp, _, _ = mse_loss_and_grad(w, bp, x, y, ridge=0.3)
    lm, _, _ = mse_loss_and_grad(w, bm, x, y, ridge=0.3)
    assert gb[1] == pytest.approx((lp - lm) / (2 * eps), rel=1e-6)


def test_sgd_deterministic_and_converging():
    histories, targets, _, _ = make_linear_problem(200, 1, 4, 2, seed=14)
    config = TrainConfig(learning_rate=0.05, steps=4000, batch_size=32, seed=3)
    fitted, curves = fit_sgd(histories, targets, config)
    again, _ = fit_sgd(histories, targets, config)
    np.testing.assert_array_equal(fitted.weights, again.weights)
    assert curves["train"][-1] < curves["train"][0] / 100
    assert len(curves["eval"]) == len(curves["train"])
    exact = fit_least_squares(histories, targets)
    assert np.abs(fitted.weights - exact.weights).max() < 0.05


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_sgd_zero_steps_and_divergence():
    histories, targets, _, _ = make_linear_problem(50, 1, 3, 2, seed=15)
    fitted, curves = fit_sgd(histories, targets, TrainConfig(steps=0))
    assert np.all(fitted.weights == 0.0) and np.all(fitted.bias == 0.0)
    assert len(curves["train"]) == 1
    # Adam step sizes are bounded by the learning rate, so overflow needs
    # a rate near the float ceiling
    huge = TrainConfig(learning_rate=1e300, steps=500, batch_size=16)
    with pytest.raises(DivergenceError) as err:
        fit_sgd(histories, targets, huge)
    assert err.value.step is not None


def test_train_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ParameterError):
        TrainConfig(batch_size=0)
    with pytest.raises(ParameterError):
        TrainConfig(beta1=1.5)


@pytest.mark.filterwarnings("ignore:rank-deficient:RuntimeWarning")
def test_history_sweep_prefers_sufficient_history():
    # second-order scalar recurrence: one frame of history cannot predict,
    # two frames predict exactly
    rng = np.random.default_rng(16)
    trajectories = []
    for _ in range(12):
        tok = np.empty((60, 2))
        tok[0] = rng.standard_normal(2)
        tok[1] = rng.standard_normal(2)
        for t in range(2, 60):
            tok[t] = 1.5 * tok[t - 1] - 0.9 * tok[t - 2]
        trajectories.append(tok / np.abs(tok).max())
    rows = history_sweep(trajectories[:8], trajectories[8:], k_values=[1, 2, 4])
    by_k = {row["k"]: row for row in rows}
    assert set(by_k) == {1, 2, 4}
    assert by_k[2]["l1_mean"] < by_k[1]["l1_mean"] / 50
    assert by_k[4]["l1_mean"] < by_k[1]["l1_mean"] / 50
    assert all(row["trials"] == 4 for row in rows)
    assert by_k[1]["l1_std"] > 0.0
    with pytest.raises(ParameterError):
        history_sweep(trajectories[:8], trajectories[8:], k_values=[0])
