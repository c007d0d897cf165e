import numpy as np
import pytest

from diffscm.graph import CausalGraph, named_graph
from diffscm.metrics import mmd_rbf
from diffscm.rng import substream
from diffscm.scm import (
    FORMULAS,
    FunctionMechanism,
    GroundTruthScm,
    RootMechanism,
    TracedBatch,
    benchmark_scm,
    build_benchmark_scm,
    fixed_scm,
    linear_scm,
    noise_signal_ratio,
    scm_from_mechanisms,
)


def test_root_values_equal_noise():
    scm = scm_from_mechanisms(CausalGraph((1,), ((),)), [RootMechanism()])
    batch = scm.sample_observational(3, np.random.default_rng(0))
    np.testing.assert_array_equal(batch.values, batch.noises)


@pytest.mark.parametrize("kind", ["chain", "triangle", "diamond", "y"])
@pytest.mark.parametrize("sem", ["NLIN", "NADD"])
def test_reevaluation_is_bit_exact(kind, sem):
    scm = fixed_scm(kind, sem)
    batch = scm.sample_observational(200, np.random.default_rng(1))
    np.testing.assert_array_equal(scm.evaluate(batch.noises), batch.values)


def test_intervened_column_is_constant():
    scm = fixed_scm("chain", "NLIN")
    vals = scm.sample({0: 0.7}, 50, np.random.default_rng(0))
    assert np.all(vals[:, 0] == 0.7)
    with pytest.raises(ValueError):
        scm.sample({0: [1.0, 2.0]}, 5, np.random.default_rng(0))


def test_sink_intervention_leaves_other_marginals():
    scm = fixed_scm("chain", "NLIN")
    obs = scm.sample({}, 500, substream(0, "a"))
    intv = scm.sample({2: 0.0}, 500, substream(0, "b"))
    assert mmd_rbf(obs[:, :2], intv[:, :2]) < 0.01


def _raw_chain():
    g = named_graph("chain")
    mechs = [
        RootMechanism(),
        FunctionMechanism(lambda p, u: np.exp(p[:, :1] / 2) + u / 4, True),
        FunctionMechanism(lambda p, u: (p - 5) ** 3 / 15 + u, True),
    ]
    return scm_from_mechanisms(g, mechs)


def test_chain_do_x1_zero_mean_is_one():
    vals = _raw_chain().sample({0: 0.0}, 20000, np.random.default_rng(2))[:, 1]
    se = vals.std() / np.sqrt(len(vals))
    assert abs(vals.mean() - 1.0) < 3 * se


def test_chain_counterfactual_closed_form():
    scm = _raw_chain()
    factual = TracedBatch(np.zeros((1, 3)), np.array([[0.0, 1.0, 0.0]]))
    factual = TracedBatch(scm.evaluate(factual.noises), factual.noises)
    assert factual.values[0, 1] == pytest.approx(1.25)
    cf = scm.true_counterfactual(factual, {0: 2.0})
    assert cf[0, 1] == pytest.approx(np.exp(1) + 0.25, abs=1e-12)


def test_linear_counterfactual_closed_form():
    g = CausalGraph.from_edges(2, [(0, 1)])
    scm = linear_scm(g, {1: 2.0})
    factual = TracedBatch(np.array([[1.0, 2.5]]), np.array([[1.0, 0.5]]))
    assert scm.true_counterfactual(factual, {0: 0.0})[0, 1] == pytest.approx(0.5)
    np.testing.assert_array_equal(scm.true_counterfactual(factual, {}), factual.values)


def test_counterfactual_needs_noise():
    scm = fixed_scm("chain", "NLIN")
    with pytest.raises(ValueError):
        scm.true_counterfactual(np.zeros((1, 3)), {0: 1.0})


@pytest.mark.parametrize("kind", ["chain", "triangle", "y"])
def test_counterfactual_at_factual_values_is_identity(kind):
    scm = fixed_scm(kind, "NADD")
    batch = scm.sample_observational(100, np.random.default_rng(3))
    for i in range(scm.graph.num_nodes):
        for row in range(5):
            b = batch[row]
            cf = scm.true_counterfactual(b, {i: b.values[0, i]})
            np.testing.assert_allclose(cf, b.values, rtol=0, atol=1e-12)


def test_counterfactual_involution():
    scm = fixed_scm("triangle", "NLIN")
    b = scm.sample_observational(10, np.random.default_rng(4))
    cf = scm.true_counterfactual(b, {0: 1.3})
    # undo: counterfactual of the counterfactual back to the factual root value
    back = np.array([scm.true_counterfactual(TracedBatch(cf[r:r + 1], b.noises[r:r + 1]),
                                             {0: b.values[r, 0]})[0] for r in range(10)])
    np.testing.assert_allclose(back, b.values, atol=1e-12)


def test_additivity_property():
    scm = fixed_scm("chain", "NLIN")
    assert scm.is_additive
    b = scm.sample_observational(50, np.random.default_rng(5))
    cf = scm.true_counterfactual(b, {0: 0.4})
    # x2 = (exp(x1/2) + u/4 - shift) / scale: differences scale with the noise
    d_cf = cf[:, 1] - cf[0, 1]
    d_u = (b.noises[:, 1] - b.noises[0, 1]) / 4 / scm.scale[1][0]
    np.testing.assert_allclose(d_cf, d_u, atol=1e-12)


def test_formula_examples_pre_normalization():
    p = np.array([[0.3, -0.7]])
    u = np.array([0.2])
    assert FORMULAS["chain", "NLIN", 1](p, u)[0] == pytest.approx(np.exp(0.15) + 0.05)
    assert FORMULAS["triangle", "NLIN", 2](p, u)[0] == pytest.approx(20 / (1 + np.exp(-0.49 + 0.3)) + 0.2)
    assert FORMULAS["y", "NADD", 3](p, u)[0] == pytest.approx((np.cos(0.3) + 0.1) ** 2)


@pytest.mark.parametrize("kind", ["chain", "triangle", "y"])
@pytest.mark.parametrize("sem", ["NLIN", "NADD"])
def test_fixed_scm_is_normalized(kind, sem):
    scm = fixed_scm(kind, sem)
    var = scm.sample({}, 10000, np.random.default_rng(6)).var(axis=0)
    assert np.all((var > 0.8) & (var < 1.2)), var


def test_fixed_scm_deterministic():
    a, b = fixed_scm("chain", "NLIN"), fixed_scm("chain", "NLIN")
    assert a.to_json() == b.to_json()


@pytest.mark.parametrize("kind", ["ladder", "random"])
@pytest.mark.parametrize("sem", ["NLIN", "NADD"])
def test_benchmark_scm_calibration(kind, sem):
    scm = build_benchmark_scm(kind, sem, substream(3, "scm"))
    g = scm.graph
    assert all(d == 3 for d in g.node_dims)
    for i in range(g.num_nodes):
        if g.parent_sets[i]:
            ratio = noise_signal_ratio(scm, i, np.random.default_rng(7))
            assert 0.05 <= ratio <= 0.5, (i, ratio)
    batch = scm.sample_observational(10000, np.random.default_rng(8))
    var = batch.values.var(axis=0)
    assert np.all((var > 0.8) & (var < 1.2)), var
    # roots are the identity on their noise
    for i in g.roots:
        np.testing.assert_array_equal(batch.values[:, g.slices()[i]], batch.noises[:, g.slices()[i]])


def test_benchmark_scm_json_round_trip(tmp_path):
    scm = benchmark_scm("ladder", "NADD", substream(0, "scm"))
    path = tmp_path / "scm.json"
    scm.save(path)
    back = GroundTruthScm.load(path)
    noise = scm.draw_noise(20, np.random.default_rng(0))
    np.testing.assert_array_equal(scm.evaluate(noise), back.evaluate(noise))


def test_schema_version_checked():
    obj = fixed_scm("chain", "NLIN").to_json()
    obj["schema_version"] = 99
    with pytest.raises(ValueError, match="schema_version"):
        GroundTruthScm.from_json(obj)
