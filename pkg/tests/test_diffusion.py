import numpy as np
import pytest

from diffscm.diffusion import DiffusionNodeModel, make_schedule, train_node
from diffscm.metrics import mmd_rbf
from diffscm.rng import substream


def const_model(fn, dim=1, parent_dim=1, T=100):
    return DiffusionNodeModel(1, dim, parent_dim, make_schedule(T), fn)


def test_schedule_endpoints_and_products():
    s = make_schedule(100, 1e-4, 0.1)
    assert s.betas[0] == pytest.approx(1e-4)
    assert s.betas[-1] == pytest.approx(0.1)
    prod = 1.0
    for t, b in enumerate(s.betas, start=1):
        prod *= 1.0 - b
        assert s.alphas[t] == pytest.approx(prod, abs=1e-12)
    assert s.alphas[0] == 1.0
    assert np.all(np.diff(s.alphas) < 0) and 0 < s.alphas[-1] < 1
    assert np.all(np.diff(s.betas) >= 0)


def test_schedule_single_step_and_errors():
    s = make_schedule(1, 0.1, 0.5)
    assert s.betas.tolist() == [0.1]
    assert s.alphas[1] == pytest.approx(0.9)
    for args in [(0, 1e-4, 0.1), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 1e-4, 1.0)]:
        with pytest.raises(ValueError):
            make_schedule(*args)


def test_zero_eps_encode_telescopes():
    m = const_model(lambda inp: np.zeros((len(inp), 1)))
    x = np.array([[2.0], [-0.5]])
    np.testing.assert_allclose(m.encode(x, np.zeros((2, 1))), np.sqrt(m.schedule.alphas[-1]) * x, rtol=1e-12)
    one = DiffusionNodeModel(1, 1, 0, make_schedule(1, 0.1, 0.1), lambda inp: np.zeros((len(inp), 1)))
    assert one.encode(np.array([2.0]))[0] == pytest.approx(np.sqrt(0.9) * 2, abs=1e-12)
    assert one.encode(np.array([2.0]))[0] == pytest.approx(1.897367, abs=1e-6)


def test_zero_eps_round_trip_exact():
    rng = np.random.default_rng(0)
    m = const_model(lambda inp: np.zeros((len(inp), 1)))
    x, pa = rng.normal(size=(1000, 1)), rng.normal(size=(1000, 1))
    assert np.max(np.abs(m.decode(m.encode(x, pa), pa) - x)) <= 1e-9


def test_parent_only_eps_round_trip_exact():
    # eps that ignores the noisy value and the step inverts step by step
    rng = np.random.default_rng(1)
    m = const_model(lambda inp: np.sin(3 * inp[:, 1:2]) + 0.5)
    x, pa = rng.normal(size=(1000, 1)), rng.normal(size=(1000, 1))
    assert np.max(np.abs(m.decode(m.encode(x, pa), pa) - x)) <= 1e-9


def test_affine_eps_round_trip_error_scales_with_slope():
    # encode evaluates eps at (Z^t, t), decode at (X^{t+1}, t+1), so any
    # dependence on the noisy value or on t leaves a first-order residual
    rng = np.random.default_rng(2)
    x, pa = rng.normal(size=(1000, 1)), rng.normal(size=(1000, 1))
    errs = []
    for slope in (1e-4, 1e-3, 1e-2):
        m = const_model(lambda inp, s=slope: s * inp[:, :1] + 0.3 * inp[:, 1:2] - 0.1)
        errs.append(np.max(np.abs(m.decode(m.encode(x, pa), pa) - x)))
    assert errs[0] < errs[1] < errs[2]
    assert errs[1] / errs[0] == pytest.approx(10, rel=0.2)
    assert errs[0] < 1e-4


def test_encode_decode_deterministic_and_shapes():
    rng = np.random.default_rng(3)
    m = DiffusionNodeModel.create(1, 2, 3, make_schedule(10), rng, hidden=(8,))
    x, pa = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    np.testing.assert_array_equal(m.encode(x, pa), m.encode(x, pa))
    assert m.encode(x[0], pa[0]).shape == (2,)
    # a single parent row broadcasts
    np.testing.assert_array_equal(m.decode(x, pa[:1])[1], m.decode(x[1:2], pa[:1])[0])
    with pytest.raises(ValueError):
        m.encode(x, pa[:, :2])


def test_training_deterministic():
    def run():
        rng = np.random.default_rng(4)
        pa = rng.normal(size=(100, 1))
        x = pa ** 2 + rng.normal(size=(100, 1))
        m = DiffusionNodeModel.create(1, 1, 1, make_schedule(), rng, hidden=(8, 8))
        return train_node(m, x, pa, 2, 16, 1e-3, rng)

    (m1, l1), (m2, l2) = run(), run()
    np.testing.assert_array_equal(m1.net.params, m2.net.params)
    assert l1 == l2


def test_training_errors():
    rng = np.random.default_rng(5)
    m = DiffusionNodeModel.create(1, 1, 1, make_schedule(), rng, hidden=(4,))
    with pytest.raises(ValueError):
        train_node(m, np.zeros((4, 1)), np.zeros((4, 1)), 0, 2, 1e-3, rng)
    with pytest.raises(FloatingPointError):
        train_node(m, np.full((4, 1), 1e300), np.zeros((4, 1)), 1, 2, 1e-3, rng)
    with pytest.raises(TypeError):
        train_node(const_model(lambda i: i[:, :1]), np.zeros((4, 1)), np.zeros((4, 1)), 1, 2, 1e-3, rng)


def test_json_round_trip():
    rng = np.random.default_rng(6)
    m = DiffusionNodeModel.create(2, 1, 2, make_schedule(10), rng, hidden=(4,))
    back = DiffusionNodeModel.from_json(m.to_json())
    x, pa = rng.normal(size=(3, 1)), rng.normal(size=(3, 2))
    np.testing.assert_array_equal(back.encode(x, pa), m.encode(x, pa))
    obj = m.to_json()
    obj["schema_version"] = 0
    with pytest.raises(ValueError):
        DiffusionNodeModel.from_json(obj)


# ---------------------------------------------------------------- trained chain


def test_trained_loss_halves(trained_chain):
    model, _, _ = trained_chain
    for trace in model.loss_traces.values():
        assert trace[-1] <= 0.5 * trace[0]


def test_trained_reconstruction_rmse(trained_chain):
    model, _, held = trained_chain
    g = model.graph
    for i, nm in model.node_models.items():
        x = held.values[:, g.slices()[i]]
        pa = held.values[:, g.parent_columns(i)]
        rmse = np.sqrt(np.mean((nm.decode(nm.encode(x, pa), pa) - x) ** 2))
        assert rmse < 0.05, (i, rmse)


def test_trained_latent_whiteness(trained_chain):
    model, _, held = trained_chain
    g = model.graph
    for i, nm in model.node_models.items():
        z = nm.encode(held.values[:, g.slices()[i]], held.values[:, g.parent_columns(i)])
        assert np.all(np.abs(z.mean(axis=0)) <= 0.3)
        assert np.all((z.var(axis=0) >= 0.6) & (z.var(axis=0) <= 1.4))


def test_decoding_white_noise_reproduces_conditional_law(trained_chain, chain_nlin):
    model, _, _ = trained_chain
    nm = model.node_models[1]
    rng = substream(0, "conditional")
    for gamma in (-1.0, 0.0, 1.0):
        gen = nm.decode(rng.standard_normal((500, 1)), np.full((500, 1), gamma))
        truth = chain_nlin.sample({0: gamma}, 500, rng)[:, 1:2]
        assert mmd_rbf(gen, truth) < 0.02
