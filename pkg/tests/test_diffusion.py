import math

import numpy as np
import pytest

from motifdiff.diffusion import (
    DenoiserContractViolationError,
    DenoiserOutput,
    Marginals,
    NonDistributionInputError,
    OracleDenoiser,
    OutOfRangeStepError,
    Schedule,
    ScheduleDegeneracyError,
    ShapeMismatchError,
    UniformDenoiser,
    ZeroMassPosteriorError,
    alpha_bar,
    assemble_graph_transition,
    build_transitions,
    estimate_marginals,
    forward_sample,
    posterior,
    pretrain_loss,
    reverse_sample,
)
from motifdiff.smiles import parse_smiles
from motifdiff.tokenizer import FeatureLayout, encode, featurize
from motifdiff.context import DemoGroups, Task


def random_marginals(rng, k_motif=5):
    m_v = rng.random(k_motif) + 0.05
    m_v /= m_v.sum()
    m_e = rng.random(4) + 0.05
    m_e /= m_e.sum()
    m_ev = rng.random((4, k_motif)) + 0.05
    m_ev /= m_ev.sum(axis=1, keepdims=True)
    m_ve = rng.random((k_motif, 4)) + 0.05
    m_ve /= m_ve.sum(axis=1, keepdims=True)
    return Marginals(m_v, m_e, m_ev, m_ve)


# -- schedule --------------------------------------------------------------------


def test_alpha_bar_endpoints():
    sched = Schedule(16, 0.0)
    assert alpha_bar(0, sched) == 1.0
    assert alpha_bar(16, sched) == 0.0
    assert math.isclose(alpha_bar(8, sched), 0.5, abs_tol=1e-12)


def test_alpha_bar_endpoints_with_offset():
    sched = Schedule(10, 0.008)
    assert alpha_bar(0, sched) == 1.0
    assert alpha_bar(10, sched) == 0.0


def test_alpha_bar_monotone_nonincreasing():
    sched = Schedule(64, 0.008)
    values = [alpha_bar(t, sched) for t in range(65)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_alpha_bar_range_errors():
    sched = Schedule(4)
    with pytest.raises(OutOfRangeStepError):
        alpha_bar(-1, sched)
    with pytest.raises(OutOfRangeStepError):
        alpha_bar(5, sched)


def test_schedule_degeneracy():
    sched = Schedule(4, 0.0)
    with pytest.raises(OutOfRangeStepError):
        build_transitions(random_marginals(np.random.default_rng(0)), 5, sched)
    # alpha_bar(0) is pinned to 1, so a vanished previous coefficient can only
    # come from a schedule that breaks the contract; force one to hit the guard
    class Degenerate(Schedule):
        def alpha_bar(self, t):
            return 0.0

    with pytest.raises(ScheduleDegeneracyError):
        build_transitions(random_marginals(np.random.default_rng(0)), 1, Degenerate(2, 0.0))


# -- marginals ---------------------------------------------------------------------


def test_marginals_delta_on_single_motif_type():
    from motifdiff.vocab import train_vocabulary

    vocabulary = train_vocabulary([parse_smiles("C")], k=121, k_ring=0, min_frequency=1)
    h = encode(parse_smiles("C"), vocabulary)
    marginals = estimate_marginals([h, h, h], len(vocabulary))
    carbon = h.nodes[0]
    assert marginals.m_v[carbon] == 1.0
    assert marginals.m_v.sum() == pytest.approx(1.0, abs=1e-12)


def test_marginals_even_split():
    from motifdiff.vocab import train_vocabulary

    vocabulary = train_vocabulary([parse_smiles("C")], k=121, k_ring=0, min_frequency=1)
    h_c = encode(parse_smiles("C"), vocabulary)
    h_n = encode(parse_smiles("N"), vocabulary)
    marginals = estimate_marginals([h_c, h_n], len(vocabulary))
    assert sorted(marginals.m_v[marginals.m_v > 0]) == [0.5, 0.5]


def test_marginals_match_brute_force_tally(mini_encoded, mini_vocab):
    marginals = estimate_marginals(mini_encoded, len(mini_vocab))
    k = len(mini_vocab)
    v_counts = np.zeros(k)
    e_counts = np.zeros(4)
    ev_counts = np.zeros((4, k))
    for h in mini_encoded:
        for node in h.nodes:
            v_counts[node] += 1
        edges = {(e.source, e.target): e.bond_order for e in h.edges}
        for i in range(h.n):
            for j in range(h.n):
                if i == j:
                    continue
                cat = edges.get((i, j), 0)
                e_counts[cat] += 1
                ev_counts[cat, h.nodes[i]] += 1
    assert np.allclose(marginals.m_v, v_counts / v_counts.sum(), atol=1e-12)
    assert np.allclose(marginals.m_e, e_counts / e_counts.sum(), atol=1e-12)
    for b in range(4):
        if ev_counts[b].sum() > 0:
            assert np.allclose(
                marginals.m_ev[b], ev_counts[b] / ev_counts[b].sum(), atol=1e-12
            )
    assert np.allclose(marginals.m_ev.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(marginals.m_ve.sum(axis=1), 1.0, atol=1e-12)


def test_marginals_empty_corpus():
    from motifdiff.diffusion import EmptyCorpusError

    with pytest.raises(EmptyCorpusError):
        estimate_marginals([], 10)


# -- transitions ------------------------------------------------------------------


def test_identity_and_stationary_limits():
    rng = np.random.default_rng(1)
    m = random_marginals(rng)
    sched = Schedule(8, 0.0)
    near_identity = build_transitions(m, 1, sched)
    assert near_identity.alpha_bar_prev == 1.0
    # with alpha == 1 the per-step operator is exactly the identity
    ts = build_transitions(m, 1, Schedule(10**6, 0.0))
    assert np.allclose(ts.q_v, np.eye(len(m.m_v)), atol=1e-9)
    terminal = build_transitions(m, 8, sched)
    assert np.allclose(terminal.q_bar_v, np.outer(np.ones(len(m.m_v)), m.m_v), atol=1e-15)


def test_rows_are_stochastic():
    rng = np.random.default_rng(2)
    m = random_marginals(rng)
    sched = Schedule(16, 0.008)
    for t in (1, 7, 16):
        ts = build_transitions(m, t, sched)
        for q in (ts.q_v, ts.q_e, ts.q_ev, ts.q_ve, ts.q_bar_v, ts.q_bar_e):
            assert np.all(q >= 0)
            assert np.allclose(q.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("t_max", [16, 64])
def test_family_closure_product_equals_closed_form(t_max):
    rng = np.random.default_rng(3)
    m = random_marginals(rng, k_motif=6)
    sched = Schedule(t_max, 0.008)
    product_v = np.eye(6)
    product_e = np.eye(4)
    for t in range(1, t_max + 1):
        ts = build_transitions(m, t, sched)
        product_v = product_v @ ts.q_v
        product_e = product_e @ ts.q_e
        assert np.abs(product_v - ts.q_bar_v).max() < 1e-8
        assert np.abs(product_e - ts.q_bar_e).max() < 1e-8


def test_marginal_is_stationary_under_its_transition():
    rng = np.random.default_rng(4)
    m = random_marginals(rng)
    ts = build_transitions(m, 3, Schedule(8, 0.008))
    assert np.abs(m.m_v @ ts.q_v - m.m_v).max() < 1e-12
    assert np.abs(m.m_e @ ts.q_e - m.m_e).max() < 1e-12


def test_graph_transition_assembly():
    rng = np.random.default_rng(5)
    m = random_marginals(rng, k_motif=2)
    ts = build_transitions(m, 2, Schedule(4, 0.0))
    raw = assemble_graph_transition(ts, 1, normalize=False)
    assert np.allclose(raw[:2, :2], ts.q_v)
    q_g = assemble_graph_transition(ts, 2)
    assert q_g.shape == (2 + 2 * 4, 2 + 2 * 4)
    assert np.allclose(q_g.sum(axis=1), 1.0, atol=1e-12)
    # hand-assembled block oracle, n = 2
    top = np.hstack([ts.q_v, ts.q_ve, ts.q_ve])
    bottom = np.hstack(
        [
            np.vstack([ts.q_ev, ts.q_ev]),
            np.vstack([np.hstack([ts.q_e, ts.q_e])] * 2),
        ]
    )
    expected = np.vstack([top, bottom])
    expected /= expected.sum(axis=1, keepdims=True)
    assert np.allclose(q_g, expected, atol=1e-12)


# -- posterior ---------------------------------------------------------------------


def test_posterior_t1_is_point_mass():
    rng = np.random.default_rng(6)
    m = random_marginals(rng)
    ts = build_transitions(m, 1, Schedule(8, 0.008))
    for x0 in range(4):
        dist = posterior(2, x0, 1, ts, axis="bond")
        assert dist[x0] == pytest.approx(1.0, abs=1e-12)


def test_posterior_sums_to_one():
    rng = np.random.default_rng(7)
    m = random_marginals(rng)
    sched = Schedule(8, 0.008)
    for t in range(1, 9):
        ts = build_transitions(m, t, sched)
        for xt in range(len(m.m_v)):
            for x0 in range(len(m.m_v)):
                assert posterior(xt, x0, t, ts, axis="motif").sum() == pytest.approx(
                    1.0, abs=1e-12
                )


def test_posterior_matches_bayes_enumeration_all_small_cases():
    """q(x_{t-1} | x_t, x_0) via brute-force chain enumeration."""
    rng = np.random.default_rng(8)
    for k in range(2, 9):
        m_v = rng.random(k) + 0.1
        m_v /= m_v.sum()
        m = Marginals(
            m_v,
            np.full(4, 0.25),
            np.tile(m_v, (4, 1)),
            np.full((k, 4), 0.25),
        )
        for t_max in range(2, 9):
            sched = Schedule(t_max, 0.008)
            for t in range(2, t_max + 1):
                ts = build_transitions(m, t, sched)
                ts_prev_chain = [build_transitions(m, i, sched) for i in range(1, t + 1)]
                for x0 in range(k):
                    for xt in range(k):
                        # enumerate q(x_{t-1}=y | x0) q(x_t=xt | x_{t-1}=y)
                        joint = np.array(
                            [
                                ts.q_bar_v_prev[x0, y] * ts.q_v[y, xt]
                                for y in range(k)
                            ]
                        )
                        if joint.sum() == 0:
                            continue
                        expected = joint / joint.sum()
                        got = posterior(xt, x0, t, ts, axis="motif")
                        assert np.abs(got - expected).max() < 1e-10
                del ts_prev_chain


def test_posterior_zero_mass():
    m = Marginals(
        np.array([1.0, 0.0]),
        np.array([1.0, 0.0, 0.0, 0.0]),
        np.array([[1.0, 0.0]] * 4),
        np.array([[1.0, 0.0, 0.0, 0.0]] * 2),
    )
    ts = build_transitions(m, 2, Schedule(2, 0.0))
    with pytest.raises(ZeroMassPosteriorError):
        posterior(1, 0, 2, ts, axis="motif")


# -- forward sampling ---------------------------------------------------------------


@pytest.fixture(scope="module")
def small_setup():
    from motifdiff.vocab import train_vocabulary

    corpus = [
        parse_smiles(s)
        for s in ("CC(=O)Oc1ccccc1C(=O)O", "c1ccccc1CCN", "CCOC(=O)c1ccccc1", "CC(C)CC")
    ]
    vocabulary = train_vocabulary(corpus, k=200, k_ring=5, min_frequency=1)
    encoded = [encode(g, vocabulary) for g in corpus]
    layout = FeatureLayout.for_vocabulary(
        vocabulary, n_max=max(4, max(h.n for h in encoded)) + 2
    )
    marginals = estimate_marginals(encoded, len(vocabulary))
    return vocabulary, encoded, layout, marginals


def test_forward_t0_is_identity(small_setup):
    _, encoded, layout, marginals = small_setup
    x0 = featurize(encoded[0], layout)
    out = forward_sample(x0, 0, None, np.random.default_rng(0))
    assert np.array_equal(out.data, x0.data)


def test_forward_fixed_seed_is_deterministic(small_setup):
    _, encoded, layout, marginals = small_setup
    x0 = featurize(encoded[1], layout)
    ts = build_transitions(marginals, 5, Schedule(8, 0.008))
    a = forward_sample(x0, 5, ts, np.random.default_rng(11))
    b = forward_sample(x0, 5, ts, np.random.default_rng(11))
    assert np.array_equal(a.data, b.data)


def test_forward_keeps_blocks_well_formed(small_setup):
    _, encoded, layout, marginals = small_setup
    x0 = featurize(encoded[1], layout)
    ts = build_transitions(marginals, 8, Schedule(8, 0.008))
    noisy = forward_sample(x0, 8, ts, np.random.default_rng(3))
    cats = noisy.bond_categories()
    assert np.array_equal(cats[: noisy.n, : noisy.n], cats[: noisy.n, : noisy.n].T)
    assert (np.diag(cats[: noisy.n, : noisy.n]) == 0).all()
    assert (noisy.attachment_blocks() == 0).all()


def test_forward_terminal_matches_marginals_smoke(small_setup):
    _, encoded, layout, marginals = small_setup
    x0 = featurize(encoded[0], layout)
    ts = build_transitions(marginals, 8, Schedule(8, 0.008))
    rng = np.random.default_rng(17)
    counts = np.zeros(layout.f_motif)
    draws = 4000
    for _ in range(draws // x0.n):
        noisy = forward_sample(x0, 8, ts, rng)
        for cat in noisy.motif_ids():
            counts[cat] += 1
    total = counts.sum()
    for cat in range(layout.f_motif):
        p = marginals.m_v[cat]
        sigma = math.sqrt(total * p * (1 - p))
        assert abs(counts[cat] - total * p) <= 4 * sigma + 1e-9


# -- reverse sampling ----------------------------------------------------------------


def _task():
    return Task(context=DemoGroups(), query_score=1.0)


def test_oracle_denoiser_recovers_exactly(small_setup):
    _, encoded, layout, marginals = small_setup
    x0 = featurize(encoded[0], layout)
    sched = Schedule(8, 0.008)
    for seed in range(25):
        result = reverse_sample(
            OracleDenoiser(x0), _task(), layout, sched, marginals,
            np.random.default_rng(seed), n_nodes=x0.n,
        )
        assert np.array_equal(result.final.data, x0.data)
        assert result.motif_graph == encoded[0]
        assert len(result.trajectory) == sched.t_max + 1


def test_uniform_denoiser_never_crashes(small_setup):
    vocabulary, _, layout, marginals = small_setup
    sched = Schedule(6, 0.008)
    for seed in range(30):
        result = reverse_sample(
            UniformDenoiser(), _task(), layout, sched, marginals,
            np.random.default_rng(seed), n_nodes=4,
        )
        assert len(result.trajectory) == sched.t_max + 1
        from motifdiff.tokenizer import decode

        try:
            decode(result.motif_graph, vocabulary)
        except ValueError:
            pass  # structurally invalid samples are allowed, crashes are not


def test_reverse_sampling_is_seed_deterministic(small_setup):
    _, _, layout, marginals = small_setup
    sched = Schedule(6, 0.008)
    a = reverse_sample(
        UniformDenoiser(), _task(), layout, sched, marginals,
        np.random.default_rng(99), n_nodes=3,
    )
    b = reverse_sample(
        UniformDenoiser(), _task(), layout, sched, marginals,
        np.random.default_rng(99), n_nodes=3,
    )
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.trajectory, b.trajectory))


def test_argmax_mixing_variant(small_setup):
    _, encoded, layout, marginals = small_setup
    x0 = featurize(encoded[2], layout)
    result = reverse_sample(
        OracleDenoiser(x0), _task(), layout, Schedule(5, 0.008), marginals,
        np.random.default_rng(0), n_nodes=x0.n, x0_mixing="argmax",
    )
    assert np.array_equal(result.final.data, x0.data)


def test_bad_denoiser_violates_contract(small_setup):
    _, _, layout, marginals = small_setup

    def broken(noisy, t, context, query_score):
        return DenoiserOutput(
            np.full((noisy.n, layout.f_motif), 0.5),  # rows do not sum to 1
            np.full((noisy.n, layout.n_max, 4), 0.25),
            np.full((noisy.n, layout.n_max, layout.f_attach), 1.0 / layout.f_attach),
        )

    with pytest.raises(DenoiserContractViolationError):
        reverse_sample(
            broken, _task(), layout, Schedule(4, 0.008), marginals,
            np.random.default_rng(0), n_nodes=2,
        )


# -- loss ------------------------------------------------------------------------


def test_loss_zero_on_point_mass(small_setup):
    _, encoded, layout, _ = small_setup
    x0 = featurize(encoded[0], layout)
    pred = OracleDenoiser(x0)(x0, 1, None, 1.0)
    loss = pretrain_loss(pred, x0)
    assert loss.l_motif == 0.0 and loss.l_bond == 0.0 and loss.l_attach == 0.0
    assert loss.total == 0.0


def test_loss_uniform_closed_form():
    """Single node, no edges: bond term covers every dense pair block."""
    from motifdiff.tokenizer import GraphTokenMatrix

    layout = FeatureLayout(f_motif=4, f_attach=3, n_max=5)
    data = np.zeros((1, layout.width))
    data[0, 2] = 1.0
    for j in range(layout.n_max):
        data[0, layout.bond_block(j).start] = 1.0
    x0 = GraphTokenMatrix(data, layout, 1)
    pred = DenoiserOutput(
        np.full((1, 4), 0.25),
        np.full((1, 5, 4), 0.25),
        np.full((1, 5, 3), 1.0 / 3),
    )
    loss = pretrain_loss(pred, x0)
    assert loss.l_motif == pytest.approx(math.log(4), abs=1e-12)
    assert loss.l_bond == pytest.approx(5 * math.log(4), abs=1e-12)
    assert loss.l_attach == 0.0


def test_loss_matches_naive_summation_oracle(small_setup):
    _, encoded, layout, _ = small_setup
    rng = np.random.default_rng(20)
    for h in encoded:
        x0 = featurize(h, layout)
        n = x0.n
        motif = rng.random((n, layout.f_motif)) + 0.01
        motif /= motif.sum(axis=1, keepdims=True)
        bond = rng.random((n, layout.n_max, 4)) + 0.01
        bond /= bond.sum(axis=2, keepdims=True)
        attach = rng.random((n, layout.n_max, layout.f_attach)) + 0.01
        attach /= attach.sum(axis=2, keepdims=True)
        pred = DenoiserOutput(motif, bond, attach)
        loss = pretrain_loss(pred, x0)

        expected_motif = 0.0
        for i, node in enumerate(h.nodes):
            expected_motif -= math.log(motif[i, node])
        edges = {(e.source, e.target): e for e in h.edges}
        expected_bond = 0.0
        expected_attach = 0.0
        for i in range(n):
            for j in range(layout.n_max):
                edge = edges.get((i, j))
                cat = edge.bond_order if edge else 0
                expected_bond -= math.log(bond[i, j, cat])
                if edge:
                    expected_attach -= math.log(attach[i, j, edge.attachment])
        assert loss.l_motif == pytest.approx(expected_motif, abs=1e-12)
        assert loss.l_bond == pytest.approx(expected_bond, abs=1e-12)
        assert loss.l_attach == pytest.approx(expected_attach, abs=1e-12)
        assert loss.total == pytest.approx(
            expected_motif + expected_bond + expected_attach, abs=1e-12
        )
        assert loss.l_motif >= 0 and loss.l_bond >= 0 and loss.l_attach >= 0


def test_loss_shape_and_distribution_errors(small_setup):
    _, encoded, layout, _ = small_setup
    x0 = featurize(encoded[0], layout)
    n = x0.n
    good = OracleDenoiser(x0)(x0, 1, None, 1.0)
    with pytest.raises(ShapeMismatchError):
        pretrain_loss(
            DenoiserOutput(good.motif[:, :-1], good.bond, good.attach), x0
        )
    bad_rows = good.motif.copy()
    bad_rows[0] = 0.3
    with pytest.raises(NonDistributionInputError):
        pretrain_loss(DenoiserOutput(bad_rows, good.bond, good.attach), x0)
