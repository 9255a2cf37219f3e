import numpy as np
import pytest

from syngand.continuous import ContinuousSchedule, Standardizer
from syngand.denoiser import DenoiserConfig, DenoiserOutput
from syngand.discrete import DiscreteSchedule
from syngand.molgraph import parse_smiles
from syngand.sampling import InfillConfig, generate, infill_properties, sample_node_count

T = 20


class OracleModel:
    """Stand-in denoiser with known answers.

    Type predictions are the schedule marginals, so the reverse chain must
    leave type frequencies at those marginals. The property head returns the
    noise that reconstructs y = (node count, 0) exactly.
    """

    def __init__(self, sample_mask=(True, True)):
        self.cfg = DenoiserConfig(d=2, T=T, max_nodes=10)
        self.discrete = DiscreteSchedule.cosine(T, np.array([0.6, 0.3, 0.1] + [0.0] * 7),
                                                np.array([0.5, 0.3, 0.1, 0.05, 0.05]))
        self.continuous = ContinuousSchedule.cosine(T)
        self.standardizer = Standardizer(["n", "u"], [0.0, 0.0], [1.0, 1.0])
        self.node_hist = {3: 0.25, 5: 0.5, 8: 0.25}
        self.sample_mask = np.array(sample_mask)

    @property
    def T(self):
        return self.cfg.T

    def denoise(self, batch, z, y_mask, t):
        B, n = batch.X.shape
        pX = np.broadcast_to(self.discrete.m_X, (B, n, 10)).copy()
        pE = np.broadcast_to(self.discrete.m_E, (B, n, n, 5)).copy()
        y_true = np.stack([batch.sizes.astype(float), np.zeros(B)], axis=1)
        a, s = self.continuous.alpha[t], self.continuous.sigma[t]
        return DenoiserOutput(pX, pE, (z - a * y_true) / s)


def test_node_count_sampling():
    rng = np.random.default_rng(0)
    draws = sample_node_count({3: 0.25, 5: 0.5, 8: 0.25}, rng, size=40000)
    for k, p in ((3, 0.25), (5, 0.5), (8, 0.25)):
        assert abs((draws == k).mean() - p) < 0.01
    assert sample_node_count({4: 1.0}, rng) == 4
    with pytest.raises(ValueError):
        sample_node_count({}, rng)


def test_generation_keeps_type_marginals():
    model = OracleModel()
    out = generate(model, 400, np.random.default_rng(1))
    nodes = np.concatenate([g.nodes for g, _ in out])
    freq = np.bincount(nodes, minlength=10) / len(nodes)
    assert 0.5 * np.abs(freq - model.discrete.m_X).sum() < 0.03
    edges = np.concatenate([g.edges[np.triu_indices(g.n, 1)] for g, _ in out])
    freq = np.bincount(edges, minlength=5) / len(edges)
    assert 0.5 * np.abs(freq - model.discrete.m_E).sum() < 0.03
    sizes = np.array([g.n for g, _ in out])
    assert abs((sizes == 5).mean() - 0.5) < 0.08


def test_generation_property_follows_exact_head():
    out = generate(OracleModel(), 50, np.random.default_rng(2))
    for g, y in out:
        assert y[0] == pytest.approx(g.n, abs=1e-9)


def test_generation_deterministic_and_chunk_independent():
    a = generate(OracleModel(), 30, np.random.default_rng(3), chunk=8)
    b = generate(OracleModel(), 30, np.random.default_rng(3), chunk=8, jobs=2)
    assert len(a) == 30
    for (g, y), (h, z) in zip(a, b):
        assert g == h and np.array_equal(y, z)


def test_uncovered_channel_is_nan():
    out = generate(OracleModel(sample_mask=(True, False)), 5, np.random.default_rng(4))
    for _, y in out:
        assert np.isfinite(y[0]) and np.isnan(y[1])


def test_infill_step_count():
    graphs = [parse_smiles(s) for s in ("CCO", "c1ccccc1", "CC(=O)N")]
    calls = []
    cfg = InfillConfig(M=3, N=7)
    infill_properties(OracleModel(), graphs, np.zeros((3, 2)), cfg, np.random.default_rng(5),
                      on_step=calls.append)
    # one call per reverse step per chunk; all three graphs fit in one chunk
    assert len(calls) == cfg.M * cfg.N
    assert calls == list(range(7, 0, -1)) * 3


def test_infill_recovers_exact_property():
    graphs = [parse_smiles(s) for s in ("CCO", "c1ccccc1", "CC(=O)N", "C")]
    y = infill_properties(OracleModel(), graphs, np.zeros((4, 2)), InfillConfig(M=2, N=5),
                          np.random.default_rng(6))
    assert np.allclose(y[:, 0], [3, 6, 4, 1], atol=1e-9)


def test_infill_deterministic():
    graphs = [parse_smiles(s) for s in ("CCO", "CCN")]
    args = (OracleModel(), graphs, np.zeros((2, 2)), InfillConfig(M=2, N=5))
    a = infill_properties(*args, np.random.default_rng(7), chunk=1)
    b = infill_properties(*args, np.random.default_rng(7), jobs=2, chunk=1)
    assert np.array_equal(a, b)


def test_infill_config_checks():
    with pytest.raises(ValueError):
        InfillConfig(N=T).check(T)
    with pytest.raises(ValueError):
        InfillConfig(M=0).check(T)
    with pytest.raises(ValueError):
        InfillConfig(y_init="zeros").check(T)
    with pytest.raises(ValueError):
        infill_properties(OracleModel(), [parse_smiles("C" * 11)], np.zeros((1, 2)),
                          InfillConfig(N=5), np.random.default_rng(0))
