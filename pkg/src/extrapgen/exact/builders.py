"""Random nets with the two reference topologies.

Four features split over two specifications with no shared parent
(``fig3a``), or three features where X2 feeds both specifications (``fig3b``).
"""

from __future__ import annotations

import numpy as np

from ..numerics import Rng
from .bayesnet import FEATURE, SELECTION, SPECIFICATION, DiscreteBayesNet, Variable


def _binary(p1) -> np.ndarray:
    p1 = np.asarray(p1, dtype=np.float64)
    return np.stack([1.0 - p1, p1], axis=-1)


def _selection_cpt(rng: Rng, novel_blocked: bool = True, block_00: bool = False) -> np.ndarray:
    """P(S | Z1, Z2). The (1,1) cell is never selected when ``novel_blocked``."""
    keep = rng.uniform(0.2, 1.0, (2, 2))
    if novel_blocked:
        keep[1, 1] = 0.0
    if block_00:
        keep[0, 0] = 0.0
    return _binary(keep)


def fig3a_net(rng: Rng, within_block_edge: bool = False) -> DiscreteBayesNet:
    names = ["X1", "X2", "X3", "X4"]
    variables = [Variable(n, FEATURE) for n in names]
    variables += [Variable("Z1", SPECIFICATION), Variable("Z2", SPECIFICATION), Variable("S", SELECTION)]
    parents = {"Z1": ("X1", "X2"), "Z2": ("X3", "X4"), "S": ("Z1", "Z2")}
    cpts = {n: _binary(rng.uniform(0.1, 0.9, ())) for n in names}
    if within_block_edge:
        parents["X2"] = ("X1",)
        cpts["X2"] = _binary(rng.uniform(0.1, 0.9, (2,)))
    cpts["Z1"] = _binary(rng.uniform(0.05, 0.95, (2, 2)))
    cpts["Z2"] = _binary(rng.uniform(0.05, 0.95, (2, 2)))
    cpts["S"] = _selection_cpt(rng)
    return DiscreteBayesNet(variables, parents, cpts)


def _fig3b_skeleton():
    variables = [Variable("X1", FEATURE), Variable("X2", FEATURE), Variable("X3", FEATURE),
                 Variable("Z1", SPECIFICATION), Variable("Z2", SPECIFICATION), Variable("S", SELECTION)]
    parents = {"Z1": ("X1", "X2"), "Z2": ("X2", "X3"), "S": ("Z1", "Z2")}
    return variables, parents


def fig3b_net(rng: Rng, overlap: bool = True) -> DiscreteBayesNet:
    """Shared-feature net with the (1,1) combination never selected.

    With ``overlap=False`` the given-data supports of X2 under Z1=1 and under
    Z2=1 are disjoint: Z1=1 forces X2=0 and Z2=1 forces X2=1.
    """
    variables, parents = _fig3b_skeleton()
    cpts = {x: _binary(rng.uniform(0.1, 0.9, ())) for x in ("X1", "X2", "X3")}
    z1 = rng.uniform(0.05, 0.95, (2, 2))  # indexed [x1, x2]
    z2 = rng.uniform(0.05, 0.95, (2, 2))  # indexed [x2, x3]
    if not overlap:
        z1[:, 1] = 0.0
        z2[0, :] = 0.0
    cpts["Z1"], cpts["Z2"] = _binary(z1), _binary(z2)
    cpts["S"] = _selection_cpt(rng)
    return DiscreteBayesNet(variables, parents, cpts)


def fig3b_leaky_net(rng: Rng, delta: float, weights: np.ndarray | None = None,
                    base: DiscreteBayesNet | None = None) -> DiscreteBayesNet:
    """Shared-feature net where P(S=0 | z) = delta * w_z with w_(1,1) = 1.

    Reusing ``weights`` and ``base`` gives the same net at a different leakage
    level, so max(P(S=0), P(S=0 | Z_i=1)) <= delta and delta = 0 means no
    selection at all.
    """
    net = base if base is not None else fig3b_net(rng)
    if weights is None:
        weights = rng.uniform(0.0, 1.0, (2, 2))
        weights[1, 1] = 1.0
    return net.with_cpts(S=_binary(1.0 - delta * np.asarray(weights)))


def leak_weights(rng: Rng) -> np.ndarray:
    w = rng.uniform(0.0, 1.0, (2, 2))
    w[1, 1] = 1.0
    return w


def fig3b_witness_template(rng: Rng) -> DiscreteBayesNet:
    """Shared-feature net in which only one-hot combinations are ever selected.

    At X2 = 1, Z1 ignores X1 and Z2 ignores X3. Under those CPTs the
    population odds at X2 = 1 can be rescaled without changing the
    selected data, which is what the witness search exploits.
    """
    variables, parents = _fig3b_skeleton()
    cpts = {x: _binary(rng.uniform(0.2, 0.8, ())) for x in ("X1", "X2", "X3")}
    z1 = rng.uniform(0.1, 0.9, (2, 2))
    z2 = rng.uniform(0.1, 0.9, (2, 2))
    z1[:, 1] = z1[0, 1]
    z2[1, :] = z2[1, 0]
    cpts["Z1"], cpts["Z2"] = _binary(z1), _binary(z2)
    cpts["S"] = _selection_cpt(rng, novel_blocked=True, block_00=True)
    return DiscreteBayesNet(variables, parents, cpts)


def fig3b_unselected(rng: Rng) -> DiscreteBayesNet:
    """Shared-feature net with S = 1 always."""
    net = fig3b_net(rng)
    return net.with_cpts(S=_binary(np.ones((2, 2))))
