import numpy as np
import pytest

from grf.flow import GrfModel, ModelConfig, toy_config
from grf.graphs import pad_graph
from grf.chem import parse_smiles
from grf.training import (AdamState, TrainConfig, adam_state_arrays,
                          adam_state_from_arrays, adam_step, epoch_mean_nll,
                          grad_nll, train, write_history_csv)


def graphs_for(schema, smiles_list):
    return [pad_graph(parse_smiles(s), schema) for s in smiles_list]


def tiny_model(**overrides):
    base = dict(n_max=3, atom_symbols=("C", "O"), gcn_blocks=1, gcn_layers=1,
                mlp_blocks=2, mlp_layers=2, adjacency_mode="node", seed=0)
    base.update(overrides)
    return GrfModel(ModelConfig(**base))


def fd_gradient(model, batch, cfg, path, index, h):
    arr = dict(model.named_parameters())[path]
    flat = arr.ravel()
    old = flat[index]
    flat[index] = old + h
    lp, _, _ = grad_nll(model, batch, cfg)
    flat[index] = old - h
    lm, _, _ = grad_nll(model, batch, cfg)
    flat[index] = old
    return (lp - lm) / (2 * h)


# -- gradients -----------------------------------------------------------------

def test_grad_scalar_toy_flow_matches_finite_differences():
    model = GrfModel(ModelConfig(n_max=1, atom_symbols=("C",), n_bond_types=2,
                                 gcn_blocks=1, gcn_layers=1, mlp_blocks=1,
                                 mlp_layers=1, adjacency_mode="flat", seed=1))
    batch = [pad_graph(parse_smiles("C"), model.schema)]
    cfg = TrainConfig(series_terms=6, hutchinson_samples=2, rng_seed=2)
    _, grads, _ = grad_nll(model, batch, cfg)
    for path, arr in model.named_parameters():
        for index in range(arr.size):
            fd = fd_gradient(model, batch, cfg, path, index, 1e-5)
            an = grads[path].ravel()[index]
            assert an == pytest.approx(fd, rel=1e-4, abs=1e-8), path


def test_grad_zero_weight_model_matches_finite_differences():
    model = tiny_model()
    for _, arr in model.named_parameters():
        arr[...] = 0.0
    batch = graphs_for(model.schema, ["CO", "CC"])
    cfg = TrainConfig(series_terms=5, hutchinson_samples=2, rng_seed=3)
    loss, grads, stats = grad_nll(model, batch, cfg)
    # with an identity flow the loss is exactly the prior of the dequantized input
    assert loss == pytest.approx(-stats["prior_mean"], abs=1e-9)
    for path in list(grads)[:3]:
        fd = fd_gradient(model, batch, cfg, path, 0, 1e-5)
        assert grads[path].ravel()[0] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_grad_every_parameter_small_random_model():
    model = tiny_model(seed=4, use_bias=True)
    batch = graphs_for(model.schema, ["CO", "C", "CCO"])
    cfg = TrainConfig(series_terms=4, hutchinson_samples=2, rng_seed=5)
    _, grads, _ = grad_nll(model, batch, cfg)
    rng = np.random.default_rng(6)
    for path, arr in model.named_parameters():
        for index in rng.choice(arr.size, size=min(3, arr.size), replace=False):
            fd = fd_gradient(model, batch, cfg, path, int(index), 1e-5)
            an = grads[path].ravel()[int(index)]
            assert an == pytest.approx(fd, rel=1e-3, abs=1e-7), path


def test_grad_deterministic_given_seed():
    model = tiny_model(seed=7)
    batch = graphs_for(model.schema, ["CO"])
    cfg = TrainConfig(series_terms=4, hutchinson_samples=2, rng_seed=8)
    l1, g1, _ = grad_nll(model, batch, cfg)
    l2, g2, _ = grad_nll(model, batch, cfg)
    assert l1 == l2
    for path in g1:
        assert np.array_equal(g1[path], g2[path])


def test_grad_rejects_empty_batch():
    with pytest.raises(ValueError):
        grad_nll(tiny_model(), [], TrainConfig())


def test_grad_nonfinite_loss_names_offending_layer():
    from grf.linalg import NumericalError

    model = tiny_model(seed=21)
    model.adjacency_layers[1].weights[0][0, 0] = np.nan
    batch = graphs_for(model.schema, ["CO"])
    with pytest.raises(NumericalError) as exc:
        grad_nll(model, batch, TrainConfig(series_terms=3, hutchinson_samples=1))
    assert "adjacency.1" in str(exc.value) or "prior" in str(exc.value)


# -- Adam -----------------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    model = tiny_model(seed=9)
    before = {p: a.copy() for p, a in model.named_parameters()}
    grads = {p: np.zeros_like(a) for p, a in model.named_parameters()}
    state = adam_step(model, grads, AdamState(), TrainConfig(learning_rate=1e-3))
    for p, a in model.named_parameters():
        assert np.allclose(a, before[p], atol=1e-12)
    # nonzero moments decay geometrically under zero gradients
    state.m = {p: np.ones_like(a) for p, a in model.named_parameters()}
    state.v = {p: np.ones_like(a) for p, a in model.named_parameters()}
    adam_step(model, grads, state, TrainConfig(learning_rate=1e-3))
    for p, _ in model.named_parameters():
        assert np.allclose(state.m[p], 0.9)
        assert np.allclose(state.v[p], 0.999)


def test_adam_first_step_closed_form():
    model = tiny_model(seed=10)
    path0, arr0 = model.named_parameters()[0]
    before = arr0.copy()
    grads = {p: np.zeros_like(a) for p, a in model.named_parameters()}
    grads[path0] = np.ones_like(arr0)
    cfg = TrainConfig(learning_rate=1e-3)
    adam_step(model, grads, AdamState(), cfg)
    # bias-corrected first step is -lr * g / (|g| + eps), here -lr
    arr_now = dict(model.named_parameters())[path0]
    expected = before - cfg.learning_rate / (1.0 + cfg.adam_eps)
    # projection may rescale; undo is impossible, so check the pre-projection
    # step on a weight whose norm stays within budget
    assert np.allclose(arr_now, expected, atol=1e-6) or \
        np.allclose(arr_now / np.linalg.norm(arr_now),
                    expected / np.linalg.norm(expected), atol=1e-9)


def test_adam_step_respects_budget():
    model = tiny_model(seed=11)
    cfg = TrainConfig(learning_rate=0.5)  # huge steps push against the budget
    rng = np.random.default_rng(12)
    state = AdamState()
    for _ in range(3):
        grads = {p: rng.standard_normal(a.shape) for p, a in model.named_parameters()}
        adam_step(model, grads, state, cfg)
        for block in model.blocks():
            bound = block.per_weight_bound()
            for _, w in block.weight_items():
                sigma = np.linalg.svd(w, compute_uv=False).max()
                assert sigma <= bound * (1 + 1e-6)


# -- training loop ------------------------------------------------------------------

def test_loss_decreases_on_single_molecule():
    model = tiny_model(seed=13)
    batch = graphs_for(model.schema, ["CO"])
    cfg = TrainConfig(batch_size=1, epochs=12, learning_rate=2e-3,
                      series_terms=4, hutchinson_samples=2, rng_seed=14)
    history = train(model, batch, cfg)
    assert history[10]["nll"] < history[0]["nll"]


def test_training_reproducible(toy_graphs):
    cfg = TrainConfig(batch_size=10, epochs=2, rng_seed=15,
                      series_terms=4, hutchinson_samples=2)
    h1 = train(GrfModel(toy_config(seed=16)), toy_graphs[:20], cfg)
    h2 = train(GrfModel(toy_config(seed=16)), toy_graphs[:20], cfg)
    assert h1 == h2


def test_training_resume_bit_identical(tmp_path, toy_graphs):
    data = toy_graphs[:16]
    cfg = TrainConfig(batch_size=8, epochs=4, rng_seed=17,
                      series_terms=4, hutchinson_samples=2, checkpoint_every=2)
    full_model = GrfModel(toy_config(seed=18))
    full_history = train(full_model, data, cfg, out_dir=tmp_path)

    from grf.flow import load_checkpoint

    resumed, extra_arrays, extra_meta = load_checkpoint(
        tmp_path / "checkpoint_epoch0002.npz")
    state = adam_state_from_arrays(extra_arrays)
    resumed_history = train(resumed, data, cfg, start_epoch=extra_meta["next_epoch"],
                            adam_state=state)
    for (p1, a1), (p2, a2) in zip(full_model.named_parameters(),
                                  resumed.named_parameters()):
        assert p1 == p2 and np.array_equal(a1, a2)
    assert resumed_history == full_history[len(full_history) - len(resumed_history):]


def test_train_budget_override():
    model = tiny_model(seed=19, init_scale=0.85)
    cfg = TrainConfig(epochs=1, batch_size=4, lipschitz_budget=0.5,
                      series_terms=3, hutchinson_samples=1, rng_seed=20)
    train(model, graphs_for(model.schema, ["CO", "CC"]), cfg)
    for block in model.blocks():
        assert block.certified_bound() <= 0.5 + 1e-6


def test_history_csv_and_epoch_means(tmp_path):
    history = [{"epoch": 0, "step": 0, "nll": 2.0, "logdet_mean": 0.1, "prior_mean": -2.1},
               {"epoch": 0, "step": 1, "nll": 1.0, "logdet_mean": 0.2, "prior_mean": -1.2},
               {"epoch": 1, "step": 0, "nll": 0.5, "logdet_mean": 0.3, "prior_mean": -0.8}]
    path = tmp_path / "h.csv"
    write_history_csv(history, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,step,nll,logdet_mean,prior_mean"
    assert len(lines) == 4
    means = epoch_mean_nll(history)
    assert means[0] == pytest.approx(1.5) and means[1] == pytest.approx(0.5)


def test_adam_state_array_roundtrip():
    state = AdamState(step=7)
    state.m = {"a.w0": np.arange(4.0)}
    state.v = {"a.w0": np.arange(4.0) ** 2}
    back = adam_state_from_arrays(adam_state_arrays(state))
    assert back.step == 7
    assert np.array_equal(back.m["a.w0"], state.m["a.w0"])
    assert np.array_equal(back.v["a.w0"], state.v["a.w0"])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
