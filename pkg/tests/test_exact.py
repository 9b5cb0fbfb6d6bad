import itertools

import numpy as np
import pytest

from extrapgen.errors import ContractError
from extrapgen.exact import (
    AssumptionError,
    DiscreteBayesNet,
    EnumerationBoundError,
    ExistenceError,
    Factor,
    SpecificationPartition,
    UndefinedConditionalError,
    Variable,
    WitnessNotFoundError,
    check_structure,
    conditional_mutual_information,
    condition,
    conservative_identify,
    construct_positive_point,
    fig3a_net,
    fig3b_leaky_net,
    fig3b_net,
    fig3b_unselected,
    fig3b_witness_template,
    identify_no_shared,
    joint,
    leak_weights,
    load_net,
    marginalize,
    net_from_dict,
    net_to_dict,
    nonidentifiability_witness,
    save_net,
    selected_joint,
)
from extrapgen.exact.identify import max_abs_diff, true_novel_conditional, tv_distance, witness_distances
from extrapgen.exact.bayesnet import FEATURE, SELECTION, SPECIFICATION
from extrapgen.numerics import Rng, derive_seed


def _nets(builder, n, tag, **kw):
    return [builder(Rng(derive_seed(99, tag, i)), **kw) for i in range(n)]


def _coin_net():
    v = [Variable("A", FEATURE), Variable("B", FEATURE), Variable("Z", SPECIFICATION), Variable("S", SELECTION)]
    half = np.array([0.5, 0.5])
    cpts = {"A": half, "B": half, "Z": np.array([[0.5, 0.5], [0.5, 0.5]]),
            "S": np.array([[0.0, 1.0], [0.0, 1.0]])}
    return DiscreteBayesNet(v, {"Z": ("A",), "S": ("Z",)}, cpts)


# Structure ---------------------------------------------------------------

def test_fig3b_topology_passes():
    assert check_structure(fig3b_net(Rng(0))).passed


def _with_edge(net, child, parent):
    parents = dict(net.parents)
    parents[child] = parents[child] + (parent,)
    cpts = dict(net.cpts)
    cpts[child] = np.stack([cpts[child], cpts[child]], axis=-2)
    return DiscreteBayesNet(net.variables, parents, cpts)


def test_spec_to_feature_edge_fails_i():
    net = _with_edge(fig3b_net(Rng(0)), "X3", "Z1")
    r = check_structure(net)
    assert not r.passed and not r.no_spec_to_feature


def test_spec_to_spec_edge_fails_ii():
    net = _with_edge(fig3b_net(Rng(0)), "Z2", "Z1")
    r = check_structure(net)
    assert not r.passed and not r.no_spec_to_spec


# Factor algebra ----------------------------------------------------------

def test_independent_coins_uniform():
    j = marginalize(joint(_coin_net()), ["A", "B"])
    np.testing.assert_allclose(j.table, 0.25)


def test_condition_on_full_scope_point_mass():
    f = joint(_coin_net())
    c = condition(f, {"A": 1, "B": 0, "Z": 1, "S": 1})
    assert c.total() == pytest.approx(1.0)


def test_zero_mass_condition_raises():
    with pytest.raises(UndefinedConditionalError):
        condition(joint(_coin_net()), {"S": 0})


def test_condition_marginalize_matches_enumeration():
    net = fig3b_net(Rng(3))
    f = joint(net)
    got = marginalize(condition(f, {"S": 1}), ["X2"])
    direct = np.zeros(2)
    for cell in itertools.product(*(range(c) for c in f.cards)):
        a = dict(zip(f.scope, cell))
        if a["S"] == 1:
            direct[a["X2"]] += f.table[cell]
    np.testing.assert_allclose(got.table, direct / direct.sum(), atol=1e-12)


def test_joint_total_one():
    f = joint(fig3b_net(Rng(4)))
    assert f.total() == pytest.approx(1.0, abs=1e-12)


def test_enumeration_bound():
    vs = [Variable(f"X{i}", FEATURE, 2) for i in range(21)] + [Variable("Z", SPECIFICATION), Variable("S", SELECTION)]
    cpts = {f"X{i}": np.array([0.5, 0.5]) for i in range(21)}
    cpts["Z"] = np.array([0.5, 0.5])
    cpts["S"] = np.array([[0.5, 0.5], [0.5, 0.5]])
    net = DiscreteBayesNet(vs, {"S": ("Z",)}, cpts)
    with pytest.raises(EnumerationBoundError):
        joint(net)


def test_cpt_rows_must_normalise():
    v = [Variable("X", FEATURE), Variable("Z", SPECIFICATION), Variable("S", SELECTION)]
    with pytest.raises(ContractError):
        DiscreteBayesNet(v, {"Z": ("X",), "S": ("Z",)},
                         {"X": np.array([0.3, 0.3]), "Z": np.full((2, 2), 0.5), "S": np.full((2, 2), 0.5)})


def test_specifications_independent_given_features():
    for net in _nets(fig3b_net, 10, "cmi"):
        f = joint(net)
        assert conditional_mutual_information(f, ["Z1"], ["Z2"], list(net.features)) < 1e-10


def test_net_roundtrip(tmp_path):
    net = fig3b_net(Rng(5))
    save_net(net, tmp_path / "n.json")
    back = load_net(tmp_path / "n.json")
    assert max_abs_diff(joint(net), joint(back)) == 0.0


# Identification ----------------------------------------------------------

def test_identify_no_shared_matches_oracle():
    for net in _nets(fig3a_net, 50, "a"):
        part = SpecificationPartition.singletons(net)
        assert max_abs_diff(identify_no_shared(net, part), true_novel_conditional(net)) < 1e-10


def _one_spec_net(seed):
    r = Rng(seed)
    v = [Variable("X1", FEATURE), Variable("X2", FEATURE), Variable("Z", SPECIFICATION), Variable("S", SELECTION)]
    p = r.uniform(0.1, 0.9, (2, 2))
    cpts = {"X1": np.array([0.4, 0.6]), "X2": np.array([0.7, 0.3]), "Z": np.stack([1 - p, p], -1),
            "S": np.array([[0.5, 0.5], [0.2, 0.8]])}
    return DiscreteBayesNet(v, {"Z": ("X1", "X2"), "S": ("Z",)}, cpts)


def test_identify_single_block_is_given_conditional():
    net = _one_spec_net(6)
    part = SpecificationPartition((("Z",),))
    given = marginalize(condition(selected_joint(net), {"Z": 1}), ["X1", "X2"])
    assert max_abs_diff(identify_no_shared(net, part), given) < 1e-12


def test_identify_rejects_shared_feature():
    net = fig3b_net(Rng(0))
    with pytest.raises(AssumptionError):
        identify_no_shared(net, SpecificationPartition.singletons(net))


def test_within_block_edge_still_identified():
    for net in _nets(fig3a_net, 10, "wb", within_block_edge=True):
        part = SpecificationPartition.singletons(net)
        assert max_abs_diff(identify_no_shared(net, part), true_novel_conditional(net)) < 1e-10


def test_positive_point_with_overlap():
    for net in _nets(fig3b_net, 50, "b"):
        part = SpecificationPartition.singletons(net, shared=("X2",))
        point = construct_positive_point(net, part)
        assert true_novel_conditional(net).prob(point) > 0


def test_positive_point_disjoint_supports_fail():
    for net in _nets(fig3b_net, 50, "nb", overlap=False):
        with pytest.raises(ExistenceError):
            construct_positive_point(net, SpecificationPartition.singletons(net, shared=("X2",)))


def test_positive_point_forced_choice():
    net = fig3b_net(Rng(1))
    z1 = np.array([[0.0, 0.7], [0.0, 0.6]])  # Z1=1 only when X2=1
    z2 = np.array([[0.0, 0.0], [0.8, 0.5]])  # Z2=1 only when X2=1
    net = net.with_cpts(Z1=np.stack([1 - z1, z1], -1), Z2=np.stack([1 - z2, z2], -1))
    point = construct_positive_point(net, SpecificationPartition.singletons(net, shared=("X2",)))
    assert point["X2"] == 1


def test_conservative_exact_without_selection():
    for net in _nets(fig3b_unselected, 10, "u"):
        part = SpecificationPartition.singletons(net, shared=("X2",))
        assert tv_distance(conservative_identify(net, part), true_novel_conditional(net)) < 1e-10


def test_conservative_single_block_collapses():
    net = fig3b_unselected(Rng(2))
    part = SpecificationPartition((("Z1", "Z2"),), ("X2",))
    out = conservative_identify(net, part)
    truth = true_novel_conditional(net)
    assert tv_distance(out, truth) < 1e-10


def test_conservative_tv_decreases_with_leakage():
    for i in range(20):
        rng = Rng(derive_seed(5, "leak", i))
        base = fig3b_net(rng)
        w = leak_weights(rng)
        part = SpecificationPartition.singletons(base, shared=("X2",))
        tvs = [tv_distance(conservative_identify(n, part), true_novel_conditional(n))
               for n in (fig3b_leaky_net(rng, d, w, base) for d in (0.1, 0.01, 0.001))]
        assert tvs[0] > tvs[1] > tvs[2]
        assert tvs[2] < 0.01


def test_witness_found():
    a, b, tv = nonidentifiability_witness(fig3b_witness_template(Rng(0)))
    gap, tv2 = witness_distances(a, b)
    assert gap < 1e-9 and tv2 >= 0.05 and tv == pytest.approx(tv2)
    assert check_structure(b).passed


def test_witness_identity_pair_has_zero_tv():
    net = fig3b_witness_template(Rng(0))
    assert witness_distances(net, net) == (0.0, 0.0)


def test_witness_not_found_without_selection():
    with pytest.raises((WitnessNotFoundError, AssumptionError)):
        nonidentifiability_witness(fig3b_unselected(Rng(0)), budget=200)


def test_hand_constructed_pair():
    # Only P(S | z) and the (1,1) mass differ: rescale the odds of Z1 at X2=1, keep the selected slice.
    a, b, _ = nonidentifiability_witness(fig3b_witness_template(Rng(1)), budget=50)
    sa, sb = selected_joint(a), selected_joint(b)
    assert max_abs_diff(sa, sb) < 1e-9
    assert tv_distance(true_novel_conditional(a), true_novel_conditional(b)) > 0.05
