import math

import numpy as np
import pytest

from modules.algorithms import PLUGINS, available_algorithms, create_plugin, get_plugin_class
from modules.algorithms.aggregation import (
    Apfl,
    apfl_kernel,
    ala_adapt,
    ala_blend,
    ala_weight_step,
    fedamp_cloud_models,
    fedamp_weights,
)
from modules.algorithms.base import ce_objective, prox_kernel, sgd_kernel
from modules.algorithms.distillation import (
    aggregate_tables,
    class_means,
    feddistill_loss_grad,
    nearest_prototype,
)
from modules.algorithms.meta import pair_batches, perfedavg_kernel
from modules.algorithms.regularized import Ditto, pfedme_kernel
from modules.algorithms.splitting import (
    balanced_adjustment,
    balanced_ce_grad,
    fedrod_logits,
    finetune_head,
)
from modules.algorithms.tfl import FedAvg, FedProx, Scaffold, scaffold_kernel
from modules.engine import ClientState, Message, PayloadKind, Simulation, epoch_batches, full_batch
from modules.errors import ConfigError, UnknownAlgorithmError
from modules.numcore import Batch, ParamVector, backward, ce_logit_grad, derive_rng, forward, init_model, loss_ce, sgd_step

NO_BATCH = [None]


# =============================================================================
# registry
# =============================================================================


def test_registry_holds_sixteen_algorithms():
    names = available_algorithms()
    assert len(names) == 16 == len(set(names))
    for plugin in PLUGINS:
        assert get_plugin_class(plugin.name.upper()) is plugin


def test_lookup_ignores_case_and_punctuation():
    assert get_plugin_class("per_fedavg") is get_plugin_class("Per-FedAvg")
    assert get_plugin_class("lgfedavg").name == "LG-FedAvg"


def test_unknown_algorithm_lists_every_name():
    with pytest.raises(UnknownAlgorithmError) as info:
        create_plugin("NoSuchAlgo")
    for name in available_algorithms():
        assert name in str(info.value)


def test_unknown_hyperparameter_lists_accepted_ones():
    with pytest.raises(ConfigError, match="accepted: mu"):
        create_plugin("FedProx", {"lambda": 1.0})


def test_hyperparameter_ranges_are_checked():
    with pytest.raises(ConfigError):
        create_plugin("FedProx", {"mu": -1})
    with pytest.raises(ConfigError):
        create_plugin("pFedMe", {"k_inner": 2.5})
    assert create_plugin("Ditto", {"LAMBDA": 0.5}).hp["lambda"] == 0.5


# =============================================================================
# one-parameter oracles
# =============================================================================


def test_fedprox_step_oracle(scalar, quadratic):
    v, _ = prox_kernel(scalar(1.0), scalar(1.0), NO_BATCH, quadratic(2.0), lr=0.5, mu=1.0)
    assert v.data[0] == pytest.approx(1.5, abs=1e-9)


def test_scaffold_step_oracle(scalar, quadratic):
    v, c_new, _ = scaffold_kernel(scalar(0.0), scalar(0.2), scalar(0.1), NO_BATCH, quadratic(1.0), lr=0.1)
    assert v.data[0] == pytest.approx(0.09, abs=1e-9)
    assert c_new.data[0] == pytest.approx(-1.0, abs=1e-9)


def test_scaffold_zero_variates_is_sgd(scalar, quadratic):
    objective = quadratic(3.0)
    v, _, _ = scaffold_kernel(scalar(0.5), scalar(0.0), scalar(0.0), NO_BATCH, objective, lr=0.1)
    _, grad = objective(scalar(0.5), None)
    assert np.array_equal(v.data, sgd_step(scalar(0.5), grad, 0.1).data)


def test_perfedavg_step_oracle(scalar, quadratic):
    v, _ = perfedavg_kernel(scalar(0.0), [(None, None)], quadratic(1.0), alpha=0.1, beta=0.1)
    assert v.data[0] == pytest.approx(0.09, abs=1e-9)


def test_perfedavg_without_inner_step_is_sgd_on_second_batch():
    rng = np.random.default_rng(0)
    model = init_model(3, 4, 2, rng)
    first = Batch(rng.normal(size=(5, 3)), rng.integers(0, 2, size=5))
    second = Batch(rng.normal(size=(5, 3)), rng.integers(0, 2, size=5))
    v, _ = perfedavg_kernel(model.params, [(first, second)], ce_objective(model), alpha=0.0, beta=0.2)
    expected = sgd_step(model.params, backward(model, second), 0.2)
    assert np.array_equal(v.data, expected.data)


def test_pair_batches_halves_a_trailing_batch():
    batches = [Batch(np.zeros((4, 1)), np.zeros(4, dtype=int)) for _ in range(3)]
    pairs = pair_batches(batches)
    assert len(pairs) == 2
    assert (pairs[1][0].size, pairs[1][1].size) == (2, 2)


def test_pfedme_proximal_oracle(scalar, quadratic):
    w, theta, _ = pfedme_kernel(scalar(0.0), NO_BATCH, quadratic(2.0), lr=0.1, lam=1.0, k_inner=200, eta_inner=0.1)
    assert theta.data[0] == pytest.approx(1.0, abs=1e-9)
    assert w.data[0] == pytest.approx(0.1, abs=1e-9)


def test_pfedme_zero_lambda_never_moves_w(scalar, quadratic):
    w, _, _ = pfedme_kernel(scalar(0.7), NO_BATCH * 4, quadratic(2.0), lr=0.1, lam=0.0, k_inner=5, eta_inner=0.1)
    assert w.data[0] == 0.7


def test_fedamp_two_client_oracle(scalar):
    clouds = fedamp_cloud_models([scalar(0.0), scalar(1.0)], sigma=1.0, alpha_amp=0.1)
    assert clouds[0].data[0] == pytest.approx(0.1 * math.exp(-1.0), abs=1e-9)
    assert clouds[0].data[0] == pytest.approx(0.0368, abs=1e-4)


def test_fedamp_identical_models_are_returned_exactly(scalar):
    params = [ParamVector.from_arrays([("w", np.array([0.3, -1.7]), "body")])] * 4
    for cloud in fedamp_cloud_models(params, sigma=1.0, alpha_amp=0.2):
        assert np.array_equal(cloud.data, params[0].data)


def test_fedamp_weights_are_row_stochastic():
    rng = np.random.default_rng(1)
    for _ in range(30):
        m = int(rng.integers(2, 12))
        params = [ParamVector.from_arrays([("w", rng.normal(scale=0.1, size=3), "body")]) for _ in range(m)]
        xi = fedamp_weights(params, sigma=float(rng.uniform(0.1, 10)), alpha_amp=float(rng.uniform(0, 0.99)))
        assert np.all(xi >= 0)
        np.testing.assert_allclose(xi.sum(axis=1), 1.0, atol=1e-12)


def test_fedamp_tiny_sigma_isolates_clients(scalar):
    clouds = fedamp_cloud_models([scalar(0.0), scalar(1.0)], sigma=1e-6, alpha_amp=0.5)
    assert clouds[0].data[0] == 0.0
    assert clouds[1].data[0] == 1.0


def test_fedala_weight_step_oracle(scalar):
    updated = ala_weight_step(scalar(0.5), scalar(1.0), scalar(2.0), scalar(0.0), ala_lr=0.1)
    assert updated.data[0] == pytest.approx(0.3, abs=1e-9)


def test_fedala_weight_step_stays_in_unit_interval(scalar):
    assert ala_weight_step(scalar(0.5), scalar(-10.0), scalar(2.0), scalar(0.0), ala_lr=1.0).data[0] == 1.0
    assert ala_weight_step(scalar(0.5), scalar(10.0), scalar(2.0), scalar(0.0), ala_lr=1.0).data[0] == 0.0


def test_fedala_unit_weights_blend_to_global():
    rng = np.random.default_rng(7)
    model = init_model(3, 5, 4, rng)
    h_old = model.params.select("head")
    h_global = h_old.with_data(rng.normal(size=h_old.size))
    blended = ala_blend(h_old, h_global, h_old.full_like(1.0))
    assert np.array_equal(blended.data, h_global.data)
    np.testing.assert_allclose(ala_blend(h_old, h_global, h_old.full_like(0.0)).data, h_old.data, rtol=0, atol=1e-12)


def test_fedala_equal_heads_leave_weights_unchanged():
    rng = np.random.default_rng(2)
    model = init_model(3, 4, 2, rng)
    batch = Batch(rng.normal(size=(6, 3)), rng.integers(0, 2, size=6))
    weights = model.params.select("head").full_like(0.4)
    blended, new_weights, _ = ala_adapt(
        model.params, model.params, weights, batch, ce_objective(model), ala_lr=1.0, threshold=0.0, max_iters=5
    )
    assert np.array_equal(new_weights.data, weights.data)
    assert np.array_equal(blended.data, model.params.data)


def test_apfl_alpha_moves_against_the_gradient(scalar, quadratic):
    # g(m) = m − 5 < 0 and v > w, so the inner product is negative: alpha must grow
    _, _, alpha, _ = apfl_kernel(scalar(0.0), scalar(1.0), 0.5, NO_BATCH, quadratic(5.0), lr=0.1, adapt_alpha=True)
    assert alpha > 0.5
    # g(m) > 0 with v > w: alpha must shrink
    _, _, alpha, _ = apfl_kernel(scalar(0.0), scalar(1.0), 0.5, NO_BATCH, quadratic(-5.0), lr=0.1, adapt_alpha=True)
    assert alpha < 0.5


def test_fedrod_adjustment_oracle():
    adjust = balanced_adjustment(np.array([9, 1]))
    assert adjust[0] - adjust[1] == pytest.approx(math.log(9), abs=1e-12)
    logits = np.array([[0.2, -0.4]])
    _, grad = balanced_ce_grad(logits, np.array([1]), np.array([9, 1]))
    z = logits[0] + np.array([math.log(9), 0.0])
    p = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(grad[0], p - np.array([0.0, 1.0]), atol=1e-12)


def test_fedrod_uniform_counts_match_plain_softmax():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(7, 4))
    labels = rng.integers(0, 4, size=7)
    _, grad = balanced_ce_grad(logits, labels, np.full(4, 25))
    np.testing.assert_allclose(grad, ce_logit_grad(logits, labels), atol=1e-12)


def test_fedrod_zero_personal_head_gives_generic_logits():
    rng = np.random.default_rng(4)
    model = init_model(3, 5, 3, rng)
    inputs = rng.normal(size=(4, 3))
    personal = (np.zeros((5, 3)), np.zeros(3))
    np.testing.assert_array_equal(fedrod_logits(model, personal, inputs), forward(model, inputs)[1])


def test_fedproto_two_client_mean():
    merged = aggregate_tables([
        ({0: np.array([0.0])}, {0: 10}),
        ({0: np.array([2.0])}, {0: 10}),
    ])
    assert merged[0].tolist() == [1.0]


def test_fedproto_single_client_keeps_its_prototypes():
    table, counts = class_means(np.array([[0.1, 0.7], [0.3, 0.2], [5.0, 1.0]]), np.array([0, 0, 2]))
    merged = aggregate_tables([(table, counts)])
    for c in table:
        assert np.array_equal(merged[c], table[c])


def test_nearest_prototype_prefers_lowest_class_on_ties():
    prototypes = {3: np.array([1.0, 0.0]), 1: np.array([-1.0, 0.0])}
    assert nearest_prototype(np.array([[0.0, 0.0], [0.9, 0.0]]), prototypes).tolist() == [1, 3]


def test_feddistill_zero_gamma_is_plain_cross_entropy():
    rng = np.random.default_rng(5)
    model = init_model(3, 4, 3, rng)
    batch = Batch(rng.normal(size=(6, 3)), rng.integers(0, 3, size=6))
    table = {0: np.ones(3), 1: -np.ones(3), 2: np.zeros(3)}
    loss, grad = feddistill_loss_grad(model, batch, table, gamma=0.0)
    assert loss == loss_ce(forward(model, batch.inputs)[1], batch.labels)
    assert np.array_equal(grad.data, backward(model, batch).data)


def test_feddistill_penalty_vanishes_on_matching_logits():
    rng = np.random.default_rng(6)
    model = init_model(3, 4, 3, rng)
    batch = Batch(rng.normal(size=(1, 3)), np.array([2]))
    logits = forward(model, batch.inputs)[1][0]
    loss, _ = feddistill_loss_grad(model, batch, {2: logits}, gamma=5.0)
    assert loss == pytest.approx(loss_ce(logits[None, :], batch.labels), abs=1e-12)


# =============================================================================
# proximity sweeps
# =============================================================================


def mlp_problem(seed=0):
    rng = np.random.default_rng(seed)
    model = init_model(4, 6, 3, rng)
    batches = [Batch(rng.normal(size=(8, 4)), rng.integers(0, 3, size=8)) for _ in range(10)]
    return model, batches


def test_fedprox_pull_grows_with_mu():
    model, batches = mlp_problem()
    gaps = []
    for mu in (0.0, 1.0, 10.0, 100.0):
        v, _ = prox_kernel(model.params, model.params, batches, ce_objective(model), lr=0.005, mu=mu)
        gaps.append(np.linalg.norm(v.data - model.params.data))
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def make_client(scenario, cid, model, seed=0):
    data = scenario.clients[cid]
    return ClientState(cid, data.train, data.test, model, derive_rng(seed, "train", cid))


def test_ditto_personal_gap_shrinks_with_lambda(make_scenario, run_config):
    scenario = make_scenario()
    config = run_config(learning_rate=0.005, local_epochs=3).bind(scenario.num_clients)
    w = init_model(scenario.input_dim, 6, scenario.num_classes, np.random.default_rng(0))
    payload = Message(PayloadKind.FULL, params=w.params)
    gaps = []
    for lam in (0.0, 1.0, 10.0, 100.0):
        client = make_client(scenario, 0, w)
        client.personal = w
        client.state["personal_rng"] = derive_rng(0, "personal", 0)
        Ditto({"lambda": lam}).local_train(client, payload, config)
        gaps.append(np.linalg.norm(client.personal.params.data - w.params.data))
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


# =============================================================================
# reduction identities
# =============================================================================


def trajectory(scenario, config, plugin, rounds=5):
    sim = Simulation(scenario, config, plugin=plugin, hidden_dim=8)
    out = []
    for _ in range(rounds):
        sim.step()
        out.append(sim.server.global_model.params.data.copy())
    return out


@pytest.mark.parametrize("plugin", [
    lambda: FedProx({"mu": 0.0}),
    lambda: Ditto({"lambda": 0.3}),
    lambda: Apfl({"alpha0": 0.0, "adapt_alpha": 0.0}),
])
def test_global_branch_matches_fedavg_bit_for_bit(make_scenario, run_config, plugin):
    scenario = make_scenario(kind="practical", num_clients=5, alpha=0.5, min_samples_per_client=6)
    config = run_config(join_ratio=0.6, local_epochs=2, num_rounds=5)
    reference = trajectory(scenario, config, FedAvg())
    candidate = trajectory(scenario, config, plugin())
    for a, b in zip(reference, candidate):
        assert np.array_equal(a, b)


def test_apfl_zero_alpha_infers_with_the_local_branch(make_scenario, run_config):
    sim = Simulation(make_scenario(), run_config(), plugin=Apfl({"alpha0": 0.0, "adapt_alpha": 0.0}), hidden_dim=8)
    sim.step()
    for client in sim.clients:
        model = sim.plugin.inference_model(sim.server, client)
        assert np.array_equal(model.params.data, client.local.params.data)


def test_scaffold_single_client_reaches_local_model(make_scenario, run_config):
    sim = Simulation(make_scenario(kind="iid", num_clients=1), run_config(), plugin=Scaffold(), hidden_dim=8)
    sim.step()
    np.testing.assert_allclose(sim.server.global_model.params.data, sim.clients[0].local.params.data, atol=1e-12)


# =============================================================================
# split discipline
# =============================================================================


@pytest.mark.parametrize("algorithm, frozen", [
    ("FedPer", "head"),
    ("FedRep", "head"),
    ("FedBABU", "head"),
    ("LG-FedAvg", "body"),
])
def test_unshared_server_segments_never_change(make_scenario, run_config, algorithm, frozen):
    sim = Simulation(make_scenario(), run_config(algorithm=algorithm, num_rounds=50, join_ratio=0.5), hidden_dim=6)
    initial = sim.server.global_model.params.select(frozen).data.copy()
    for _ in range(50):
        sim.step()
        assert np.array_equal(sim.server.global_model.params.select(frozen).data, initial)


def test_fedbabu_client_heads_stay_at_initialisation(make_scenario, run_config):
    sim = Simulation(make_scenario(), run_config(algorithm="FedBABU", num_rounds=5), hidden_dim=6)
    initial = sim.server.global_model.params.select("head").data.copy()
    sim.run()
    for client in sim.clients:
        assert np.array_equal(client.local.params.select("head").data, initial)


def test_fedbabu_without_finetuning_infers_with_frozen_head(make_scenario, run_config):
    sim = Simulation(make_scenario(), run_config(algorithm="FedBABU", hyperparams={"finetune_steps": 0}), hidden_dim=6)
    sim.step()
    client = sim.clients[0]
    assert np.array_equal(sim.plugin.inference_model(sim.server, client).params.data, client.local.params.data)


def test_head_finetuning_lowers_training_loss():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = init_model(3, 5, 3, rng)
        batch = Batch(rng.normal(size=(20, 3)), rng.integers(0, 3, size=20))
        tuned = finetune_head(model, batch, steps=10, lr=0.01)
        assert loss_ce(forward(tuned, batch.inputs)[1], batch.labels) < loss_ce(forward(model, batch.inputs)[1], batch.labels)
        assert np.array_equal(tuned.params.select("body").data, model.params.select("body").data)


def test_fedrep_without_body_epochs_keeps_the_received_body(make_scenario, run_config):
    scenario = make_scenario()
    config = run_config().bind(scenario.num_clients)
    plugin = create_plugin("FedRep", {"body_epochs": 0})
    w = init_model(scenario.input_dim, 6, scenario.num_classes, np.random.default_rng(0))
    client = make_client(scenario, 2, w)
    update = plugin.local_train(client, Message(PayloadKind.SEGMENTS, params=w.params.select("body")), config)
    assert np.array_equal(update.params.data, w.params.select("body").data)
    assert not np.array_equal(client.local.params.select("head").data, w.params.select("head").data)


def test_local_sgd_helpers_share_one_stream(make_scenario):
    scenario = make_scenario()
    w = init_model(scenario.input_dim, 6, scenario.num_classes, np.random.default_rng(0))
    data = scenario.clients[0].train
    batches = epoch_batches(data, 2, 8, derive_rng(0, "train", 0))
    assert sum(b.size for b in batches) == 2 * data.size
    v, loss = sgd_kernel(w.params, [full_batch(data)], ce_objective(w), lr=0.1)
    assert loss > 0 and not np.array_equal(v.data, w.params.data)
