"""Discrete Bayesian networks over features, specifications and one selection
variable, with brute-force enumeration as the ground-truth oracle."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import ContractError

FEATURE, SPECIFICATION, SELECTION = "feature", "specification", "selection"
ROLES = (FEATURE, SPECIFICATION, SELECTION)

# desk-scale oracle: at most 2**22 joint cells
MAX_LOG2_STATES = 22


class UndefinedConditionalError(ValueError):
    """Conditioning on an event of zero probability."""


class EnumerationBoundError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    role: str
    card: int = 2

    def __post_init__(self):
        if self.role not in ROLES:
            raise ContractError(f"variable {self.name!r}: unknown role {self.role!r}")
        if self.card < 2:
            raise ContractError(f"variable {self.name!r}: cardinality must be >= 2")


@dataclass(frozen=True)
class Factor:
    """Nonnegative table over the joint assignments of ``scope``.

    ``table`` has one axis per scope variable, in scope order.
    """

    scope: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != len(self.scope):
            raise ContractError(f"table rank {t.ndim} != scope length {len(self.scope)}")
        if (t < 0).any():
            raise ContractError("factor tables must be nonnegative")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def cards(self) -> tuple[int, ...]:
        return self.table.shape

    def total(self) -> float:
        return float(self.table.sum())

    def normalized(self) -> "Factor":
        z = self.total()
        if z <= 0:
            raise UndefinedConditionalError("cannot normalize a factor with zero mass")
        return Factor(self.scope, self.table / z)

    def prob(self, assignment: Mapping[str, int]) -> float:
        return float(self.table[tuple(int(assignment[v]) for v in self.scope)])

    def reorder(self, scope: Sequence[str]) -> "Factor":
        scope = tuple(scope)
        if sorted(scope) != sorted(self.scope):
            raise ContractError(f"reorder scope {scope} does not match {self.scope}")
        perm = [self.scope.index(v) for v in scope]
        return Factor(scope, np.transpose(self.table, perm))

    def __mul__(self, other: "Factor") -> "Factor":
        return multiply(self, other)


def _expand(f: Factor, scope: tuple[str, ...], cards: dict[str, int]) -> np.ndarray:
    """View f.table broadcastable against the axes of ``scope``."""
    order = [v for v in scope if v in f.scope]
    t = f.reorder(order).table if tuple(order) != f.scope else f.table
    shape = [cards[v] if v in f.scope else 1 for v in scope]
    return t.reshape(shape)


def multiply(f: Factor, g: Factor) -> Factor:
    scope = f.scope + tuple(v for v in g.scope if v not in f.scope)
    cards = dict(zip(f.scope, f.cards)) | dict(zip(g.scope, g.cards))
    return Factor(scope, _expand(f, scope, cards) * _expand(g, scope, cards))


def divide(f: Factor, g: Factor) -> Factor:
    """f / g with 0/0 := 0. Raises ZeroDivisionError where g = 0 < f."""
    scope = f.scope + tuple(v for v in g.scope if v not in f.scope)
    cards = dict(zip(f.scope, f.cards)) | dict(zip(g.scope, g.cards))
    num = np.broadcast_to(_expand(f, scope, cards), [cards[v] for v in scope])
    den = np.broadcast_to(_expand(g, scope, cards), num.shape)
    if ((den == 0) & (num > 0)).any():
        raise ZeroDivisionError("division by a zero cell with nonzero numerator")
    out = np.divide(num, den, out=np.zeros(num.shape), where=den > 0)
    return Factor(scope, out)


def power(f: Factor, k: float) -> Factor:
    if k == 0:
        return Factor(f.scope, np.ones(f.cards))
    return Factor(f.scope, f.table**k)


def condition(f: Factor, assignment: Mapping[str, int]) -> Factor:
    """Slice ``f`` at ``assignment`` and renormalise; assigned variables leave the scope."""
    for v in assignment:
        if v not in f.scope:
            raise ContractError(f"cannot condition on {v!r}: not in scope {f.scope}")
    idx = tuple(int(assignment[v]) if v in assignment else slice(None) for v in f.scope)
    sliced = np.asarray(f.table[idx], dtype=np.float64)
    mass = float(sliced.sum())
    if mass <= 0:
        raise UndefinedConditionalError(f"conditioning event {dict(assignment)} has zero probability")
    return Factor(tuple(v for v in f.scope if v not in assignment), sliced / mass)


def marginalize(f: Factor, keep) -> Factor:
    """Sum out every variable not in ``keep``; kept variables stay in scope order."""
    keep = set(keep)
    if not keep <= set(f.scope):
        raise ContractError(f"keep {sorted(keep - set(f.scope))} not in scope {f.scope}")
    axes = tuple(i for i, v in enumerate(f.scope) if v not in keep)
    return Factor(tuple(v for v in f.scope if v in keep), f.table.sum(axis=axes))


@dataclass(frozen=True)
class StructureReport:
    no_spec_to_feature: bool
    no_spec_to_spec: bool
    selection_ok: bool
    violations: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.no_spec_to_feature and self.no_spec_to_spec and self.selection_ok

    def __str__(self) -> str:
        lines = [f"structure: {'PASS' if self.passed else 'FAIL'}"]
        for name, flag in [("(i) no Z->X edges", self.no_spec_to_feature),
                           ("(ii) no Z-Z edges", self.no_spec_to_spec),
                           ("(iii) S childless, parents in Z", self.selection_ok)]:
            lines.append(f"  {name}: {'ok' if flag else 'violated'}")
        for key, edges in self.violations.items():
            for a, b in edges:
                lines.append(f"  {key}: {a} -> {b}")
        return "\n".join(lines)


class DiscreteBayesNet:
    """DAG with conditional probability tables.

    ``cpts[v]`` has shape ``(*parent_cards, card_v)`` with parents in the
    order given by ``parents[v]``; each last-axis row sums to one.
    """

    def __init__(self, variables: Sequence[Variable], parents: Mapping[str, Sequence[str]],
                 cpts: Mapping[str, np.ndarray]):
        self.variables = tuple(variables)
        self.var = {v.name: v for v in self.variables}
        if len(self.var) != len(self.variables):
            raise ContractError("duplicate variable names")
        self.parents = {v.name: tuple(parents.get(v.name, ())) for v in self.variables}
        for child, ps in self.parents.items():
            for p in ps:
                if p not in self.var:
                    raise ContractError(f"unknown parent {p!r} of {child!r}")
        self.order = self._toposort()
        sel = [v.name for v in self.variables if v.role == SELECTION]
        if len(sel) != 1:
            raise ContractError(f"exactly one selection variable required, found {len(sel)}")
        self.selection = sel[0]
        self.cpts = {}
        for v in self.variables:
            t = np.asarray(cpts[v.name], dtype=np.float64)
            shape = tuple(self.var[p].card for p in self.parents[v.name]) + (v.card,)
            if t.shape != shape:
                raise ContractError(f"cpt of {v.name!r} has shape {t.shape}, expected {shape}")
            if (t < 0).any():
                raise ContractError(f"cpt of {v.name!r} has negative entries")
            if np.abs(t.sum(axis=-1) - 1.0).max() > 1e-12:
                raise ContractError(f"cpt rows of {v.name!r} do not sum to 1")
            t = t.copy()
            t.setflags(write=False)
            self.cpts[v.name] = t

    def _toposort(self) -> tuple[str, ...]:
        done: list[str] = []
        state: dict[str, int] = {}

        def visit(n):
            if state.get(n) == 2:
                return
            if state.get(n) == 1:
                raise ContractError(f"graph has a cycle through {n!r}")
            state[n] = 1
            for p in self.parents[n]:
                visit(p)
            state[n] = 2
            done.append(n)

        for v in self.variables:
            visit(v.name)
        return tuple(done)

    def names(self, role: str) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables if v.role == role)

    @property
    def features(self) -> tuple[str, ...]:
        return self.names(FEATURE)

    @property
    def specifications(self) -> tuple[str, ...]:
        return self.names(SPECIFICATION)

    def edges(self) -> list[tuple[str, str]]:
        return [(p, c) for c in self.parents for p in self.parents[c]]

    def children(self, name: str) -> tuple[str, ...]:
        return tuple(c for c, ps in self.parents.items() if name in ps)

    def with_cpts(self, **updates) -> "DiscreteBayesNet":
        return DiscreteBayesNet(self.variables, self.parents, {**self.cpts, **updates})

    def log2_states(self) -> float:
        return sum(math.log2(v.card) for v in self.variables)

    def __repr__(self) -> str:
        return f"DiscreteBayesNet({[v.name for v in self.variables]}, edges={self.edges()})"


def check_structure(net: DiscreteBayesNet) -> StructureReport:
    role = {v.name: v.role for v in net.variables}
    bad: dict[str, list[tuple[str, str]]] = {"i": [], "ii": [], "iii": []}
    for p, c in net.edges():
        if role[p] == SPECIFICATION and role[c] == FEATURE:
            bad["i"].append((p, c))
        if role[p] == SPECIFICATION and role[c] == SPECIFICATION:
            bad["ii"].append((p, c))
        if role[p] == SELECTION:
            bad["iii"].append((p, c))
        if role[c] == SELECTION and role[p] != SPECIFICATION:
            bad["iii"].append((p, c))
    return StructureReport(
        no_spec_to_feature=not bad["i"],
        no_spec_to_spec=not bad["ii"],
        selection_ok=not bad["iii"],
        violations={k: v for k, v in bad.items() if v},
    )


def joint(net: DiscreteBayesNet) -> Factor:
    """Full joint table over all variables in declaration order."""
    if net.log2_states() > MAX_LOG2_STATES:
        raise EnumerationBoundError(
            f"joint has 2**{net.log2_states():.1f} cells, bound is 2**{MAX_LOG2_STATES}"
        )
    scope = tuple(v.name for v in net.variables)
    cards = {v.name: v.card for v in net.variables}
    table = np.ones([cards[v] for v in scope])
    for name in net.order:
        f = Factor(net.parents[name] + (name,), net.cpts[name])
        table = table * _expand(f, scope, cards)
        table = table / table.sum()
    return Factor(scope, table)


def d_separated(net: DiscreteBayesNet, xs, ys, given) -> bool:
    """Moralised-ancestral-graph test of xs _||_ ys | given."""
    xs, ys, given = set(xs), set(ys), set(given)
    anc = set()
    stack = list(xs | ys | given)
    while stack:
        n = stack.pop()
        if n in anc:
            continue
        anc.add(n)
        stack.extend(net.parents[n])
    adj: dict[str, set[str]] = {n: set() for n in anc}
    for c in anc:
        ps = [p for p in net.parents[c] if p in anc]
        for p in ps:
            adj[c].add(p)
            adj[p].add(c)
        for i, a in enumerate(ps):
            for b in ps[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)
    seen = set(xs)
    stack = [n for n in xs if n not in given]
    while stack:
        n = stack.pop()
        if n in ys:
            return False
        for m in adj[n]:
            if m not in seen and m not in given:
                seen.add(m)
                stack.append(m)
    return True


def load_net(path) -> DiscreteBayesNet:
    return net_from_dict(json.loads(Path(path).read_text()))


def net_from_dict(doc: Mapping) -> DiscreteBayesNet:
    """Build a net from the JSON description.

    Layout: ``variables`` = [{name, role, cardinality}], ``edges`` =
    [[parent, child], ...], ``cpts`` = {name: rows}. A variable's parents are
    taken in the order its incoming edges are listed; ``rows`` enumerate
    parent assignments lexicographically (last parent fastest).
    """
    variables = [Variable(v["name"], v["role"], int(v.get("cardinality", 2))) for v in doc["variables"]]
    card = {v.name: v.card for v in variables}
    parents: dict[str, list[str]] = {v.name: [] for v in variables}
    for p, c in doc.get("edges", []):
        parents[c].append(p)
    cpts = {}
    for v in variables:
        rows = np.asarray(doc["cpts"][v.name], dtype=np.float64)
        shape = tuple(card[p] for p in parents[v.name]) + (v.card,)
        cpts[v.name] = rows.reshape(shape)
    return DiscreteBayesNet(variables, parents, cpts)


def net_to_dict(net: DiscreteBayesNet) -> dict:
    return {
        "variables": [{"name": v.name, "role": v.role, "cardinality": v.card} for v in net.variables],
        "edges": [[p, c] for c in net.parents for p in net.parents[c]],
        "cpts": {v.name: net.cpts[v.name].reshape(-1, v.card).tolist() for v in net.variables},
    }


def save_net(net: DiscreteBayesNet, path) -> None:
    Path(path).write_text(json.dumps(net_to_dict(net), indent=2))
