"""Identification of the novel-specification distribution p(X | Z = 1) from the
selected (S = 1) distribution alone, plus the constructive and conservative
procedures for the shared-feature case.

Every formula here reads only ``condition(joint, S=1)``; population
quantities are touched solely to check assumptions and, in
:func:`construct_positive_point`, to verify the postcondition.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..numerics import Rng
from .bayesnet import (
    DiscreteBayesNet,
    Factor,
    StructureReport,
    UndefinedConditionalError,
    check_structure,
    condition,
    d_separated,
    divide,
    joint,
    marginalize,
    multiply,
    power,
)


class IdentificationError(ValueError):
    pass


class StructureError(IdentificationError):
    def __init__(self, report: StructureReport):
        self.report = report
        super().__init__(str(report))


class AssumptionError(IdentificationError):
    """A named precondition does not hold."""

    def __init__(self, assumption: str, detail: str):
        self.assumption = assumption
        super().__init__(f"{assumption}: {detail}")


class ExistenceError(IdentificationError):
    """No shared-feature value has positive given-data density under every block."""


class SingularityError(IdentificationError):
    pass


class WitnessNotFoundError(IdentificationError):
    def __init__(self, message: str, best_distance: float):
        self.best_distance = best_distance
        super().__init__(f"{message} (best selected-data distance {best_distance:.3e})")


@dataclass(frozen=True)
class SpecificationPartition:
    blocks: tuple[tuple[str, ...], ...]
    shared_features: tuple[str, ...] = ()

    @classmethod
    def singletons(cls, net: DiscreteBayesNet, shared=()) -> "SpecificationPartition":
        return cls(tuple((z,) for z in net.specifications), tuple(shared))


def _ones(names) -> dict[str, int]:
    return {n: 1 for n in names}


def block_parents(net: DiscreteBayesNet, block: Sequence[str]) -> tuple[str, ...]:
    ps = {p for z in block for p in net.parents[z]}
    return tuple(x for x in net.features if x in ps)


def _validate_partition(net: DiscreteBayesNet, part: SpecificationPartition) -> None:
    report = check_structure(net)
    if not report.passed:
        raise StructureError(report)
    flat = [z for b in part.blocks for z in b]
    if sorted(flat) != sorted(net.specifications) or len(set(flat)) != len(flat):
        raise AssumptionError("partition", "blocks must be disjoint and cover every specification")
    if not set(part.shared_features) <= set(net.features):
        raise AssumptionError("partition", "shared features must be features")


def _selected(net: DiscreteBayesNet) -> tuple[Factor, Factor]:
    full = joint(net)
    p_s1 = marginalize(full, [net.selection]).table[1]
    if p_s1 <= 0:
        raise AssumptionError("Assumption 1", "P(S=1) = 0: the given dataset is empty")
    return full, condition(full, {net.selection: 1})


def _check_block_coverage(net, part, given):
    for b in part.blocks:
        if marginalize(given, b).prob(_ones(b)) <= 0:
            raise AssumptionError("Assumption 1", f"P({'='.join(b)}=1 | S=1) = 0 for block {b}")


def _check_population_novel(net, full):
    specs = net.specifications
    if marginalize(full, specs).prob(_ones(specs)) <= 0:
        raise AssumptionError("Assumption 1", "P(Z=1) = 0: the target combination is infeasible")


def _block_conditional(given: Factor, block, keep) -> Factor:
    """p^D(keep | block = 1)."""
    return marginalize(condition(given, _ones(block)), keep)


def identify_no_shared(net: DiscreteBayesNet, part: SpecificationPartition) -> Factor:
    """p(X | Z=1) as the product over blocks of p^D(V_i | Z_i = 1).

    Requires the blocks' parent sets to be disjoint, pairwise non-adjacent and
    to cover all features.
    """
    _validate_partition(net, part)
    if part.shared_features:
        raise AssumptionError("no shared features", f"partition declares shared features {part.shared_features}")
    parent_sets = [block_parents(net, b) for b in part.blocks]
    for (i, a), (j, b) in itertools.combinations(enumerate(parent_sets), 2):
        if set(a) & set(b):
            raise AssumptionError("no shared features",
                                  f"blocks {part.blocks[i]} and {part.blocks[j]} share {sorted(set(a) & set(b))}")
        for p, c in net.edges():
            if (p in a and c in b) or (p in b and c in a):
                raise AssumptionError("non-adjacent blocks", f"edge {p} -> {c} joins two blocks")
    covered = set().union(*map(set, parent_sets)) if parent_sets else set()
    if covered != set(net.features):
        raise AssumptionError("coverage", f"features {sorted(set(net.features) - covered)} feed no specification")
    full, given = _selected(net)
    _check_population_novel(net, full)
    _check_block_coverage(net, part, given)
    out = Factor((), np.array(1.0))
    for b, v in zip(part.blocks, parent_sets):
        out = multiply(out, _block_conditional(given, b, v)).normalized()
    return out.reorder(net.features)


def _validate_shared(net: DiscreteBayesNet, part: SpecificationPartition):
    _validate_partition(net, part)
    xc = tuple(part.shared_features)
    rest = [tuple(x for x in block_parents(net, b) if x not in xc) for b in part.blocks]
    for (i, a), (j, b) in itertools.combinations(enumerate(rest), 2):
        if set(a) & set(b):
            raise AssumptionError("shared features",
                                  f"{sorted(set(a) & set(b))} feed blocks {i} and {j} but are not in X_c")
        if a and b and not d_separated(net, a, b, xc):
            raise AssumptionError("conditional independence",
                                  f"features {a} and {b} are dependent given X_c={xc}")
    covered = set(xc).union(*map(set, rest))
    if covered != set(net.features):
        raise AssumptionError("coverage", f"features {sorted(set(net.features) - covered)} feed no specification")
    return xc, rest


def construct_positive_point(net: DiscreteBayesNet, part: SpecificationPartition) -> dict[str, int]:
    """Assemble x~ with p(X = x~ | Z = 1) > 0 from given-data quantities.

    x~_c maximises min_i p^D(X_c = x_c | Z_i = 1); each block's remaining
    features take the mode of p^D(V_i \\ X_c | x~_c, Z_i = 1).
    """
    xc, rest = _validate_shared(net, part)
    if not xc:
        raise AssumptionError("shared features", "partition declares no shared features X_c")
    full, given = _selected(net)
    _check_block_coverage(net, part, given)

    per_block = [_block_conditional(given, b, xc).reorder(xc).table for b in part.blocks]
    worst = np.minimum.reduce(per_block)
    if worst.max() <= 0:
        raise ExistenceError(
            f"no value of X_c={xc} has positive given-data density under every block (Assumption 2 violated)"
        )
    best = np.unravel_index(int(np.argmax(worst)), worst.shape)
    point = {x: int(v) for x, v in zip(xc, best)}

    for b, r in zip(part.blocks, rest):
        if not r:
            continue
        cond = condition(given, {**_ones(b), **point})
        tab = marginalize(cond, r).reorder(r).table
        pick = np.unravel_index(int(np.argmax(tab)), tab.shape)
        point.update({x: int(v) for x, v in zip(r, pick)})

    # postcondition against the population joint
    target = condition(full, _ones(net.specifications))
    if marginalize(target, net.features).prob(point) <= 0:
        raise ExistenceError(f"constructed point {point} has zero probability under Z=1")
    return point


def conservative_identify(net: DiscreteBayesNet, part: SpecificationPartition) -> Factor:
    """Approximate p(X | Z = 1) assuming rare selection leakage.

    normalize( prod_i p^D(X_c | Z_i=1) / p^D(X_c)^(k-1)
               * prod_i p^D(V_i \\ X_c | X_c, Z_i=1) )
    """
    xc, rest = _validate_shared(net, part)
    _, given = _selected(net)
    _check_block_coverage(net, part, given)
    k = len(part.blocks)
    num = Factor((), np.array(1.0))
    for b in part.blocks:
        num = multiply(num, _block_conditional(given, b, xc))
    p_xc = marginalize(given, xc)
    try:
        ratio = divide(num, power(p_xc, k - 1))
    except ZeroDivisionError as e:
        raise SingularityError("p^D(X_c) = 0 where the block terms are positive") from e
    out = ratio
    for b, r in zip(part.blocks, rest):
        if not r:
            continue
        joint_b = marginalize(condition(given, _ones(b)), xc + r)
        marg_b = marginalize(joint_b, xc)
        # p^D(r | x_c, Z_b=1); zero where x_c has no block mass (the ratio is zero there too)
        out = multiply(out, divide(joint_b, marg_b))
    total = out.total()
    if total <= 0:
        raise SingularityError("conservative solution has zero total mass")
    return out.normalized().reorder(net.features)


def true_novel_conditional(net: DiscreteBayesNet) -> Factor:
    """Brute-force p(X | Z = 1) from the population joint."""
    full = joint(net)
    return marginalize(condition(full, _ones(net.specifications)), net.features).reorder(net.features)


def selected_joint(net: DiscreteBayesNet) -> Factor:
    full = joint(net)
    return condition(full, {net.selection: 1})


def tv_distance(p: Factor, q: Factor) -> float:
    q = q.reorder(p.scope)
    return 0.5 * float(np.abs(p.table - q.table).sum())


def max_abs_diff(p: Factor, q: Factor) -> float:
    return float(np.abs(p.table - q.reorder(p.scope).table).max())


def conditional_mutual_information(f: Factor, a, b, given) -> float:
    """I(a; b | given) in nats under the distribution ``f``."""
    keep = tuple(a) + tuple(b) + tuple(given)
    p = marginalize(f, keep).reorder(keep).table
    na, nb = len(tuple(a)), len(tuple(b))
    ax_a = tuple(range(na))
    ax_b = tuple(range(na, na + nb))
    p_c = p.sum(axis=ax_a + ax_b, keepdims=True)
    p_ac = p.sum(axis=ax_b, keepdims=True)
    p_bc = p.sum(axis=ax_a, keepdims=True)
    mask = p > 0
    ratio = np.where(mask, p * p_c / np.where(mask, p_ac * p_bc, 1.0), 1.0)
    return float(np.sum(np.where(mask, p * np.log(ratio), 0.0)))


# ---------------------------------------------------------------------------
# non-identifiability


def _odds_shift_candidate(net: DiscreteBayesNet, xc: tuple[str, ...], lam: np.ndarray) -> DiscreteBayesNet:
    """Net whose specification odds are scaled by lam(x_c) and whose feature
    CPTs are refit to keep the one-hot selected slices unchanged."""
    specs = net.specifications
    feats = net.features
    full = joint(net)
    px = marginalize(full, feats).reorder(feats).table
    card = {v.name: v.card for v in net.variables}

    def lam_on(scope):
        shape = [card[v] if v in xc else 1 for v in scope]
        order = [v for v in scope if v in xc]
        perm = [xc.index(v) for v in order]
        return np.transpose(lam, perm).reshape(shape) if order else lam.reshape(shape)

    new_cpts = {}
    weight = np.ones(px.shape)
    for z in specs:
        ps = net.parents[z]
        t = net.cpts[z]
        odds = t[..., 1] / t[..., 0]
        scale = lam_on(ps)
        new_odds = scale * odds
        new_row1 = new_odds / (1.0 + new_odds)
        new_cpts[z] = np.stack([1.0 - new_row1, new_row1], axis=-1)
        # (1 + lam*O) / (1 + O) expanded onto the feature axes
        f = Factor(ps, (1.0 + new_odds) / (1.0 + odds))
        weight = weight * np.broadcast_to(
            f.reorder([v for v in feats if v in ps]).table.reshape([card[v] if v in ps else 1 for v in feats]),
            px.shape,
        )
    lam_x = np.broadcast_to(lam_on(feats), px.shape)
    # only one-hot specification patterns are selected, so one factor of lam cancels
    new_px = px * weight / lam_x
    new_px = new_px / new_px.sum()
    pfac = Factor(feats, new_px)
    for x in feats:
        ps = net.parents[x]
        fam = marginalize(pfac, ps + (x,)).reorder(ps + (x,)).table
        denom = fam.sum(axis=-1, keepdims=True)
        uniform = np.full(fam.shape, 1.0 / card[x])
        new_cpts[x] = np.where(denom > 0, fam / np.where(denom > 0, denom, 1.0), uniform)
    return net.with_cpts(**new_cpts)


def witness_distances(net_a: DiscreteBayesNet, net_b: DiscreteBayesNet) -> tuple[float, float]:
    """(max-norm gap between selected joints, TV between novel conditionals)."""
    sa, sb = selected_joint(net_a), selected_joint(net_b)
    return max_abs_diff(sa, sb), tv_distance(true_novel_conditional(net_a), true_novel_conditional(net_b))


def _assumption1_holds(net: DiscreteBayesNet) -> bool:
    try:
        full, given = _selected(net)
        _check_population_novel(net, full)
        _check_block_coverage(net, SpecificationPartition.singletons(net), given)
    except (IdentificationError, UndefinedConditionalError):
        return False
    return True


def nonidentifiability_witness(
    template: DiscreteBayesNet,
    tv_floor: float = 0.05,
    agree_tol: float = 1e-9,
    budget: int = 10_000,
    seed: int = 0,
) -> tuple[DiscreteBayesNet, DiscreteBayesNet, float]:
    """Find a second net that agrees with ``template`` on p(. | S=1) but not on p(X | Z=1).

    Candidates scale each specification's odds by a positive function of the
    shared features and refit the feature CPTs. Single-cell spikes are tried
    first, then random log-uniform scalings up to ``budget`` trials.
    """
    report = check_structure(template)
    if not report.passed:
        raise StructureError(report)
    specs = template.specifications
    if any(template.var[z].card != 2 for z in specs):
        raise AssumptionError("binary specifications", "witness search needs binary specifications")
    full = joint(template)
    given = condition(full, {template.selection: 1})
    if marginalize(given, specs).prob(_ones(specs)) > 0:
        raise AssumptionError("novelty", "p(Z=1 | S=1) > 0: the combination is not novel")
    parent_sets = [set(template.parents[z]) for z in specs]
    xc = tuple(x for x in template.features if sum(x in s for s in parent_sets) > 1)
    if not xc:
        raise AssumptionError("shared features", "no feature feeds more than one specification")
    if not _assumption1_holds(template):
        raise AssumptionError("Assumption 1", "template violates the basic conditions")
    shape = tuple(template.var[x].card for x in xc)
    n_cells = int(np.prod(shape))

    def candidates():
        for cell in range(n_cells):
            for factor in (4.0, 0.25):
                lam = np.ones(n_cells)
                lam[cell] = factor
                yield lam.reshape(shape)
        rng = Rng(seed)
        for _ in range(max(0, budget - 2 * n_cells)):
            yield np.exp(rng.uniform(-np.log(8.0), np.log(8.0), n_cells)).reshape(shape)

    best = np.inf
    for lam in candidates():
        try:
            net_b = _odds_shift_candidate(template, xc, lam)
        except Exception:  # noqa: BLE001 - invalid candidate tables are skipped
            continue
        try:
            gap, tv = witness_distances(template, net_b)
        except UndefinedConditionalError:
            continue
        if tv >= tv_floor:
            best = min(best, gap)
            if gap < agree_tol and _assumption1_holds(net_b):
                return template, net_b, tv
    raise WitnessNotFoundError("no witness pair found within budget", best)
