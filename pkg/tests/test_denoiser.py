import numpy as np
import pytest

from oracles import LAYER_GROUPS, equivariance_error, fd_gradient_errors, random_denoiser_problem
from syngand.denoiser import (DenoiserConfig, GraphBatch, forward, gradients, init_params,
                              param_count, param_shapes, predict)
from syngand.toy import random_molecule

SMALL = dict(n_layers=2, hidden=8, edge_hidden=4, global_hidden=6, heads=2, d=2, max_nodes=6, T=20)


@pytest.mark.parametrize("y_param,use_y", [("eps", True), ("eps", False), ("clean", True), ("clean", False)])
def test_backprop_matches_central_differences(y_param, use_y):
    cfg = DenoiserConfig(**SMALL, y_param=y_param, use_y_input=use_y)
    errors = fd_gradient_errors(cfg, np.random.default_rng(0))
    assert set(errors) == set(LAYER_GROUPS)
    for group, err in errors.items():
        assert len(err) >= 20, group
        assert err.max() <= 1e-4, (group, err.max())


def test_every_parameter_receives_a_gradient():
    cfg = DenoiserConfig(**SMALL)
    rng = np.random.default_rng(1)
    P = init_params(cfg, rng)
    batch, target, aux, eps, mask = random_denoiser_problem(rng, cfg)
    grads, _ = gradients(P, cfg, batch, aux, target, eps, mask)
    assert set(grads) == set(P)
    for k in P:
        assert grads[k].shape == P[k].shape and np.isfinite(grads[k]).all()


def test_mean_reduction_scales_sum():
    cfg = DenoiserConfig(**SMALL)
    rng = np.random.default_rng(2)
    P = init_params(cfg, rng)
    batch, target, aux, eps, mask = random_denoiser_problem(rng, cfg, B=4)
    gs, _ = gradients(P, cfg, batch, aux, target, eps, mask, reduction="sum")
    gm, _ = gradients(P, cfg, batch, aux, target, eps, mask, reduction="mean")
    for k in P:
        assert np.allclose(gm[k] * 4, gs[k], rtol=1e-12, atol=1e-15)


def test_permutation_equivariance():
    cfg = DenoiserConfig(n_layers=2, hidden=16, edge_hidden=8, global_hidden=8, heads=4, d=2,
                         max_nodes=12, T=50)
    rng = np.random.default_rng(3)
    P = init_params(cfg, rng)
    worst = 0.0
    for _ in range(100):
        g = random_molecule(rng, int(rng.integers(3, 12)))
        z = rng.standard_normal(2)
        worst = max(worst, equivariance_error(P, cfg, g, z, np.array([True, False]),
                                              int(rng.integers(1, 51)), rng))
    assert worst <= 1e-6


def test_padding_invariance():
    cfg = DenoiserConfig(**SMALL)
    rng = np.random.default_rng(4)
    P = init_params(cfg, rng)
    g = random_molecule(rng, 4)
    z, m = np.array([[0.3, -0.2]]), np.array([[True, True]])
    a = predict(P, cfg, GraphBatch.collate([g]), z, m, 7)
    b = predict(P, cfg, GraphBatch.collate([g], n=6), z, m, 7)
    assert np.abs(a.pX[0] - b.pX[0, :4]).max() <= 1e-12
    assert np.abs(a.pE[0] - b.pE[0, :4, :4]).max() <= 1e-12
    assert np.abs(a.eps - b.eps).max() <= 1e-12


def test_output_distributions_normalised():
    cfg = DenoiserConfig(**SMALL)
    rng = np.random.default_rng(5)
    P = init_params(cfg, rng)
    batch, _, aux, _, _ = random_denoiser_problem(rng, cfg)
    out, _ = forward(P, cfg, batch, aux)
    assert np.allclose(out.pX.sum(-1), 1) and np.allclose(out.pE.sum(-1), 1)
    assert out.eps.shape == (3, 2)


def test_clean_head_noise_identity():
    # With the clean head, z = alpha * y_hat + sigma * eps_hat must hold exactly.
    from syngand.continuous import cosine_alpha

    cfg = DenoiserConfig(**SMALL, y_param="clean")
    rng = np.random.default_rng(6)
    P = init_params(cfg, rng)
    batch, _, aux, _, _ = random_denoiser_problem(rng, cfg)
    out, cache = forward(P, cfg, batch, aux)
    t = np.rint(aux.t_frac * cfg.T).astype(int)
    a = cosine_alpha(cfg.T)[t][:, None]
    y_hat = (aux.z_y - np.sqrt(1 - a ** 2) * out.eps) / a
    head = cache[4][-1] @ P["out.Wy2"] + P["out.by2"]
    assert np.allclose(y_hat, head, atol=1e-9)


def test_config_and_param_table():
    cfg = DenoiserConfig(**SMALL)
    P = init_params(cfg, np.random.default_rng(0))
    assert [k for k, _ in param_shapes(cfg)] == list(P)
    assert param_count(P) == sum(int(np.prod(s)) for _, s in param_shapes(cfg))
    with pytest.raises(ValueError):
        DenoiserConfig(y_param="x0")
