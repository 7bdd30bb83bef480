import math
import random

import pytest
import torch

from tssl_snn import (
    BackpropConfig,
    ContractViolation,
    DeltaTrace,
    GradientSet,
    NeuronConfig,
    NeuronTrace,
    PhiTable,
    SpikeRecord,
    build_phi,
    delta_hidden,
    delta_output,
    dense_layer,
    dpsc_dtm,
    dreset_dtm,
    du_dt_at_spike,
    phi_direct,
    psc_filter,
    random_phi_instance,
    weight_grad,
)


def _trace(u, i_net, raster, tau_s):
    u = torch.tensor(u, dtype=torch.float64)
    i_net = torch.tensor(i_net, dtype=torch.float64)
    raster = torch.tensor(raster, dtype=torch.float64)
    return NeuronTrace(u=u, a=psc_filter(raster, tau_s), i_net=i_net), SpikeRecord(raster)


def _single(u, i_net):
    return NeuronTrace(
        u=torch.tensor([u], dtype=torch.float64),
        a=torch.tensor([1.0], dtype=torch.float64),
        i_net=torch.tensor([i_net], dtype=torch.float64),
    )


def test_du_dt_at_spike():
    assert float(du_dt_at_spike(_single(1.0, 2.0), 0, NeuronConfig(tau_m=2.0))) == pytest.approx(0.5)
    assert float(du_dt_at_spike(_single(1.0, 3.0), 0, NeuronConfig(tau_m=4.0))) == pytest.approx(0.5)


def test_du_dt_at_spike_clamps_flat_slope():
    cfg = NeuronConfig(tau_m=2.0)
    assert float(du_dt_at_spike(_single(1.0, 1.0), 0, cfg)) == pytest.approx(0.1 / 2.0)
    assert float(du_dt_at_spike(_single(1.0, 1.0), 0, cfg, slope_eps=0.3)) == pytest.approx(0.3)


def test_du_dt_at_spike_needs_a_spike():
    with pytest.raises(ContractViolation):
        du_dt_at_spike(_single(0.5, 2.0), 0, NeuronConfig())
    with pytest.raises(ContractViolation):
        du_dt_at_spike(_single(1.0, 2.0), 1, NeuronConfig())


def test_dpsc_dtm():
    cfg = NeuronConfig(tau_s=2.0)
    assert dpsc_dtm(3, 3, cfg) == pytest.approx(0.5)
    assert dpsc_dtm(4, 2, cfg) == pytest.approx(0.18394, rel=1e-4)
    assert dpsc_dtm(10, 0, cfg) == pytest.approx(0.0033690, rel=1e-4)
    assert dpsc_dtm(1, 2, cfg) == 0.0
    assert dpsc_dtm(4, 2, cfg, "emergence") == pytest.approx(-dpsc_dtm(4, 2, cfg))


def test_dreset_dtm():
    cfg = NeuronConfig(tau_m=4.0, v_th=2.0)
    assert dreset_dtm(3, 1, cfg) == pytest.approx(-0.5 * math.exp(-0.5))


def test_phi_single_spike():
    cfg = NeuronConfig(tau_m=2.0, tau_s=2.0)
    trace, spikes = _trace(
        [0.2, 1.0, 0.3, 0.1], [0.2, 2.0, 0.5, 0.2], [0, 1, 0, 0], cfg.tau_s
    )
    phi = build_phi(trace, spikes, cfg, 4).values
    assert float(phi[3, 1]) == pytest.approx(-math.exp(-1.0), rel=1e-12)
    assert float(phi[1, 1]) == pytest.approx(-1.0, rel=1e-12)
    # only the firing column is populated, and only on or below the diagonal
    mask = torch.zeros(4, 4, dtype=torch.bool)
    mask[1:, 1] = True
    assert bool((phi[~mask] == 0).all())


def test_phi_intra_term_through_next_spike():
    cfg = NeuronConfig(tau_m=3.0, tau_s=2.0)
    u = [1.5, 0.4, 1.2, 0.3, 0.2]
    i_net = [2.0, 0.6, 2.5, 0.4, 0.3]
    trace, spikes = _trace(u, i_net, [1, 0, 1, 0, 0], cfg.tau_s)
    phi = build_phi(trace, spikes, cfg, 5).values

    dt_du = [-1.0 / max((-u[t] + i_net[t]) / cfg.tau_m, 0.1 / cfg.tau_m) for t in range(5)]
    for k in range(5):
        inter = dpsc_dtm(k, 0, cfg) * dt_du[0]
        intra = phi[k, 2] * dreset_dtm(2, 0, cfg) * dt_du[0] if k > 2 else 0.0
        assert float(phi[k, 0]) == pytest.approx(float(inter + intra), rel=1e-12)
    # the later spike has no spike after it
    for k in range(2, 5):
        assert float(phi[k, 2]) == pytest.approx(dpsc_dtm(k, 2, cfg) * dt_du[2], rel=1e-12)
    assert float(phi[1, 2]) == 0.0
    assert bool((phi[:, [1, 3, 4]] == 0).all())


def test_silent_neuron_table():
    cfg = NeuronConfig()
    trace, spikes = _trace([0.3, 0.5, 0.2], [0.3, 0.4, 0.1], [0, 0, 0], cfg.tau_s)
    assert build_phi(trace, spikes, cfg, 3).values.abs().sum() == 0

    phi = build_phi(trace, spikes, cfg, 3, BackpropConfig(dead_kappa=2.0)).values
    sig = torch.sigmoid(trace.u - cfg.v_th)
    assert torch.allclose(torch.diagonal(phi), 2.0 * sig * (1 - sig))
    assert float(phi.sum()) == pytest.approx(float(torch.diagonal(phi).sum()))


@pytest.mark.parametrize(
    "backprop",
    [
        BackpropConfig(),
        BackpropConfig(psc_convention="emergence"),
        BackpropConfig(dead_kappa=1.0, slope_eps=0.05),
    ],
)
def test_build_phi_matches_direct(backprop):
    rng = random.Random(0)
    for _ in range(1000):
        trace, spikes, cfg = random_phi_instance(rng)
        fast = build_phi(trace, spikes, cfg, trace.n_steps, backprop).values
        direct = phi_direct(spikes, trace, cfg, backprop).values
        scale = max(float(fast.abs().max()), float(direct.abs().max()), 1e-300)
        assert float((fast - direct).abs().max()) <= 1e-12 * scale


def test_dense_and_sparse_storage_agree():
    rng = random.Random(1)
    gen = torch.Generator().manual_seed(1)
    for _ in range(50):
        trace, spikes, cfg = random_phi_instance(rng)
        n_steps = trace.n_steps
        dense = build_phi(trace, spikes, cfg, n_steps, BackpropConfig(phi_storage="dense"))
        sparse = build_phi(trace, spikes, cfg, n_steps, BackpropConfig(phi_storage="sparse"))
        assert sparse.sparse and not dense.sparse
        assert torch.equal(dense.values, sparse.values)
        grad = torch.randn(trace.u.shape, generator=gen, dtype=torch.float64)
        assert torch.allclose(dense.contract(grad), sparse.contract(grad), rtol=1e-10, atol=1e-12)


def test_sparse_rows_gather_stored_blocks():
    gen = torch.Generator().manual_seed(3)
    dense = PhiTable((6,), 4, sparse=False)
    sparse = PhiTable((6,), 4, sparse=True)
    for t_m, rows in ((3, [4, 0]), (3, [2]), (1, [5, 1, 3])):
        values = torch.randn(len(rows), 4, generator=gen, dtype=torch.float64)
        dense.set_column(t_m, torch.tensor(rows), values)
        sparse.set_column(t_m, torch.tensor(rows), values)
    for t_m in range(4):
        for query in ([0, 2, 4], [5, 3], [1], [4, 1, 2, 0]):
            query = torch.tensor(query)
            assert torch.equal(sparse.rows(t_m, query), dense.rows(t_m, query))
    assert sparse.rows(2, torch.tensor([0, 1])).abs().sum() == 0
    assert torch.equal(sparse.values, dense.values)


def test_auto_storage_switches_on_window_length():
    assert not PhiTable((2,), 64).sparse
    assert PhiTable((2,), 65).sparse


def test_delta_output_contracts_phi():
    rng = random.Random(2)
    trace, spikes, cfg = random_phi_instance(rng, max_neurons=4, max_steps=6)
    n_steps = trace.n_steps
    phi = build_phi(trace, spikes, cfg, n_steps)
    target = psc_filter(torch.ones_like(spikes.raster), cfg.tau_s)
    delta = delta_output(trace.a, target, phi, n_steps).delta

    values = phi.values
    err = trace.a - target
    for n in range(trace.u.shape[0]):
        for m in range(n_steps):
            expected = sum(float(err[n, k] * values[n, k, m]) for k in range(m, n_steps))
            assert float(delta[n, m]) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_delta_output_shape_errors():
    cfg = NeuronConfig()
    trace, spikes = _trace([[1.2, 0.1]], [[2.0, 0.2]], [[1, 0]], cfg.tau_s)
    phi = build_phi(trace, spikes, cfg, 2)
    with pytest.raises(ContractViolation):
        delta_output(trace.a, torch.zeros(1, 3), phi, 2)
    with pytest.raises(ContractViolation):
        delta_output(torch.zeros(2, 2), torch.zeros(2, 2), phi, 2)


def test_delta_hidden_back_projects_through_weights():
    cfg = NeuronConfig()
    gen = torch.Generator().manual_seed(0)
    u = 2.0 * torch.rand(1, 3, 4, generator=gen, dtype=torch.float64)
    i_net = u + torch.rand(1, 3, 4, generator=gen, dtype=torch.float64)
    raster = (u >= cfg.v_th).to(torch.float64)
    trace = NeuronTrace(u=u, a=psc_filter(raster, cfg.tau_s), i_net=i_net)
    phi = build_phi(trace, SpikeRecord(raster), cfg, 4)

    above = dense_layer((3,), 2, weights=torch.randn(2, 3, generator=gen, dtype=torch.float64))
    upper = DeltaTrace(torch.randn(1, 2, 4, generator=gen, dtype=torch.float64))
    got = delta_hidden(above, upper, phi, 4).delta
    back = torch.einsum("oi,bot->bit", above.weights, upper.delta)
    assert torch.allclose(got, phi.contract(back))

    with pytest.raises(ContractViolation):
        delta_hidden(above, DeltaTrace(torch.zeros(1, 2, 5)), phi, 4)


def test_weight_grad_outer_product():
    grad = weight_grad(
        torch.tensor([[0.5]], dtype=torch.float64),
        DeltaTrace(torch.tensor([[0.3]], dtype=torch.float64)),
    )
    assert float(grad[0, 0]) == pytest.approx(0.15)


def test_gradient_set():
    a = GradientSet([torch.ones(2), None])
    b = GradientSet([torch.full((2,), 2.0), None])
    total = (a + b).scale(0.5)
    assert total[0].tolist() == [1.5, 1.5]
    assert total[1] is None
    assert total.first_non_finite() is None
    assert GradientSet([None, torch.tensor([math.nan])]).first_non_finite() == 1
    with pytest.raises(ContractViolation):
        a + GradientSet([None])


@pytest.mark.parametrize(
    "kwargs", [dict(slope_eps=0.0), dict(dead_kappa=-1.0), dict(psc_convention="late")]
)
def test_backprop_config_rejects(kwargs):
    with pytest.raises(ContractViolation):
        BackpropConfig(**kwargs)
