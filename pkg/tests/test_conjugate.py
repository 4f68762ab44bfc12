import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from rdceg.conjugate import (
    DirichletParams,
    IGParams,
    PriorConfig,
    Scorer,
    SufficientStats,
    cluster_term,
    joint_density,
    log_bayes_factor,
    log_marginal_likelihood,
    phantom_priors,
    stage_term,
    update_dirichlet,
    update_ig,
)
from rdceg.graph import Clustering, Staging
from rdceg.laws import compound_density
from rdceg.models import falls_model, smoking_model
from rdceg.simulate import simulate_stats


def sequential_stage_oracle(alpha, counts):
    """Chain rule of Polya-urn predictives, one observation at a time."""
    a = list(map(float, alpha))
    total = 0.0
    for k, n in enumerate(counts):
        for _ in range(n):
            total += math.log(a[k] / sum(a))
            a[k] += 1
    return total


def sequential_cluster_oracle(zeta, beta, kappa, holds):
    """Chain rule of compound predictive densities, stripped of the Jacobian
    factor kappa * h^(kappa-1) that the score leaves out."""
    total = 0.0
    for h in holds:
        total += math.log(compound_density(zeta, beta, kappa, h)) - math.log(kappa * h ** (kappa - 1))
        zeta += 1
        beta += h**kappa
    return total


def quadrature_cluster_oracle(zeta, beta, kappa, holds):
    """Integrate the likelihood against the prior over the precision 1/theta,
    which is Gamma(zeta, rate beta); the integrand is rescaled at its peak."""
    s = float(np.sum(np.asarray(holds) ** kappa))
    n = len(holds)
    a, b = zeta + n, beta + s

    def log_g(phi):
        return (a - 1) * math.log(phi) - b * phi + zeta * math.log(beta) - math.lgamma(zeta)

    peak = max((a - 1) / b, 1e-300)
    width = math.sqrt(a) / b
    top = log_g(peak) if a > 1 else 0.0
    f = lambda phi: math.exp(log_g(phi) - top) if phi > 0 else 0.0
    knots = [0.0, peak, peak + width, peak + 10 * width, peak + 60 * width]
    total = sum(
        integrate.quad(f, lo, hi, limit=400, epsabs=0, epsrel=1e-13)[0] for lo, hi in zip(knots, knots[1:]) if hi > lo
    )
    return top + math.log(total)


@given(
    st.lists(st.floats(0.05, 10.0), min_size=2, max_size=4).flatmap(
        lambda a: st.tuples(st.just(a), st.lists(st.integers(0, 15), min_size=len(a), max_size=len(a)))
    )
)
def test_stage_term_equals_sequential_predictives(args):
    alpha, counts = args
    assert stage_term(alpha, counts) == pytest.approx(sequential_stage_oracle(alpha, counts), abs=1e-9)


@given(
    st.floats(0.3, 10.0),
    st.floats(0.1, 20.0),
    st.floats(0.5, 3.0),
    st.lists(st.floats(0.01, 10.0), min_size=0, max_size=12),
)
def test_cluster_term_equals_sequential_predictives(zeta, beta, kappa, holds):
    s = sum(h**kappa for h in holds)
    assert cluster_term(zeta, beta, len(holds), s) == pytest.approx(
        sequential_cluster_oracle(zeta, beta, kappa, holds), abs=1e-8
    )


@pytest.mark.parametrize(
    "zeta,beta,kappa,holds",
    [(1.0, 1.0, 1.0, [0.5, 2.0]), (2.5, 4.0, 2.0, [0.3, 1.1, 1.7]), (0.5, 20.0, 1.0, [10.0, 30.0, 5.0, 1.0])],
)
def test_cluster_term_matches_quadrature(zeta, beta, kappa, holds):
    s = sum(h**kappa for h in holds)
    assert cluster_term(zeta, beta, len(holds), s) == pytest.approx(
        quadrature_cluster_oracle(zeta, beta, kappa, holds), abs=1e-7
    )


def test_empty_cells_score_zero():
    assert stage_term([1.0, 2.0], [0, 0]) == 0.0
    assert cluster_term(2.0, 3.0, 0, 0.0) == 0.0


def test_updates():
    assert update_dirichlet(DirichletParams((1, 2)), [3, 4]).alpha == (4.0, 6.0)
    post = update_ig(IGParams(2.0, 1.0, 2.0), [1.0, 2.0])
    assert (post.zeta, post.beta, post.kappa) == (4.0, 6.0, 2.0)
    assert IGParams(3.0, 4.0).theta_mean == 2.0
    assert IGParams(1.0, 4.0).theta_mean == math.inf
    with pytest.raises(ValueError):
        update_dirichlet(DirichletParams((1, 2)), [1])
    with pytest.raises(ValueError):
        update_ig(IGParams(1, 1), [-1.0])
    with pytest.raises(ValueError):
        IGParams(0.0, 1.0)
    with pytest.raises(ValueError):
        DirichletParams((1.0, 0.0))


def test_joint_density():
    assert joint_density(0.25, None, 3.0) == 0.25
    assert joint_density(0.5, lambda h: 2 * h, 1.5) == 1.5
    with pytest.raises(ValueError):
        joint_density(1.5, None, 0.0)


def test_log_marginal_likelihood_sums_terms():
    d, ig = DirichletParams((1.0, 1.0)), IGParams(2.0, 3.0, 1.5)
    got = log_marginal_likelihood([(d, [2, 1])], [(ig, [0.5, 1.0])])
    want = stage_term((1, 1), (2, 1)) + cluster_term(2.0, 3.0, 2, 0.5**1.5 + 1.0)
    assert got == pytest.approx(want)
    with pytest.raises(ValueError):
        log_marginal_likelihood([(None, [1])], [])


def test_phantom_priors_spread_units_down_the_tree():
    tree = falls_model().modified
    d, ig = phantom_priors(tree, 6.0, 10.0, 1.0)
    t = tree.tree
    root_kids = t.children(t.root)
    assert sum(d[t.root].alpha) == pytest.approx(6.0)
    # each situation receives exactly what its incoming edge carried
    for s in t.situations:
        if s == t.root:
            continue
        parent_edge = t.parent_edge(s)
        assert sum(d[s].alpha) == pytest.approx(d[parent_edge.parent].alpha[0])
    for e in t.timed_edges:
        edge = t.edge(e)
        assert ig[e].zeta == pytest.approx(d[edge.parent].alpha[0])
        assert ig[e].beta == pytest.approx(10.0)
    assert len(root_kids) == len(d[t.root].alpha)
    with pytest.raises(ValueError):
        phantom_priors(tree, 0.0, 1.0)


def test_prior_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(censoring="bogus")
    with pytest.raises(ValueError):
        PriorConfig.from_dict({"alpha": 1})
    cfg = PriorConfig(alpha_total=2.0, tau=5.0, beta_rule="shared")
    assert PriorConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def falls_scorer():
    m = falls_model()
    stats = simulate_stats(m, 800, seed=3)
    return m, Scorer(m.modified, stats, m.kappa, PriorConfig(alpha_total=2.0, tau=20.0))


def test_bayes_factor_only_depends_on_changed_cells(falls_scorer):
    m, scorer = falls_scorer
    tree = m.modified.tree
    single = (Staging.singletons(tree), Clustering.singletons(tree, m.kappa))
    truth = (m.staging, m.clustering)
    lbf = log_bayes_factor(scorer, truth, single)
    assert lbf == pytest.approx(scorer.score(*truth) - scorer.score(*single), abs=1e-8)
    assert scorer.log_bayes_factor(truth, truth) == 0.0


def test_beta_rules_differ_only_in_beta(falls_scorer):
    m, scorer = falls_scorer
    cell = m.clustering.cells[0]
    shared = Scorer(m.modified, scorer.stats, m.kappa, PriorConfig(alpha_total=2.0, tau=20.0, beta_rule="shared"))
    assert shared.cluster_prior(cell).zeta == scorer.cluster_prior(cell).zeta
    if len(cell) > 1:
        assert shared.cluster_prior(cell).beta < scorer.cluster_prior(cell).beta


def test_survival_censoring_adds_exposure():
    m = smoking_model("b")
    t = m.modified.tree
    s = t.situation_id("w1")
    timed = [e for e in t.children(s) if e.timed]
    stats = SufficientStats(censored={s: [2.0, 3.0]})
    plain = Scorer(m.modified, stats, 1.0, PriorConfig(alpha_total=1.0, tau=1.0))
    surv = Scorer(m.modified, stats, 1.0, PriorConfig(alpha_total=1.0, tau=1.0, censoring="survival"))
    for e in timed:
        assert surv.cluster_data([e.id])[1] - plain.cluster_data([e.id])[1] == pytest.approx(5.0)


def test_default_prior_uses_root_arity_and_median_hold():
    m = smoking_model("b")
    stats = SufficientStats(holds={e: [1.0, 3.0, 5.0] for e in m.modified.tree.timed_edges})
    s = Scorer(m.modified, stats)
    assert s.alpha_total == len(m.modified.tree.children(m.modified.tree.root))
    assert s.tau == 3.0


def test_stats_add_and_equality():
    a = SufficientStats({1: 2}, {1: [0.5]})
    b = SufficientStats({1: 1, 2: 0}, {1: [1.5]})
    c = a.add(b)
    assert c.counts == {1: 3, 2: 0}
    assert c == SufficientStats({1: 3}, {1: [0.5, 1.5]})
    assert a.counts == {1: 2}
