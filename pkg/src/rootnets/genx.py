"""Deterministic and seeded generators for worked examples and test corpora.

Everything here is reproducible: the same spec and seed produce bit-identical
output.  Per-item seeds are derived from (seed, index) by a splitmix64 step,
so items can also be generated independently in any order.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

from .distr import Distribution, uniform_root
from .errors import CountOutOfRangeError, EvenLengthError, NetworkInvalidError
from .extension import Extension, parse_subset
from .netcore import MarkedNetwork, RootedNetwork

__all__ = [
    "GeneratorSpec",
    "path_graph",
    "cycle_graph",
    "star_graph",
    "pendant_cycle_graph",
    "gen_path_extension",
    "gen_pendant_cycle",
    "gen_marked",
    "gen_random_unimodular",
    "derive_seed",
    "build_from_spec",
]

_MASK = (1 << 64) - 1


def derive_seed(seed, index):
    """splitmix64 step on seed + (index+1)*golden; bit-exact across platforms."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


@dataclass(frozen=True)
class GeneratorSpec:
    """Named generator with parameters; same spec + seed -> identical output."""

    name: str
    params: dict = field(default_factory=dict)


# -- deterministic builders ------------------------------------------------


def path_graph(n, mark=""):
    return MarkedNetwork(
        [(i, mark) for i in range(n)],
        [(i, i, i + 1, "", "") for i in range(n - 1)],
    )


def cycle_graph(n, marks=None):
    if n == 1:
        return MarkedNetwork([(0, marks[0] if marks else "")], [(0, 0, 0, "", "")])
    if n == 2:
        vertices = [(i, marks[i] if marks else "") for i in range(2)]
        return MarkedNetwork(vertices, [(0, 0, 1, "", ""), (1, 0, 1, "", "")])
    vertices = [(i, marks[i] if marks else "") for i in range(n)]
    edges = [(i, i, (i + 1) % n, "", "") for i in range(n)]
    return MarkedNetwork(vertices, edges)


def star_graph(leaves):
    vertices = [(0, "")] + [(i, "") for i in range(1, leaves + 1)]
    edges = [(i - 1, 0, i, "", "") for i in range(1, leaves + 1)]
    return MarkedNetwork(vertices, edges)


def pendant_cycle_graph(n):
    """Cycle on 2n vertices with a "pendant"-marked leaf on each even vertex."""
    vertices = [(i, "") for i in range(2 * n)]
    edges = [(i, i, (i + 1) % (2 * n), "", "") for i in range(2 * n)]
    for k in range(n):
        vertices.append((2 * n + k, "pendant"))
        edges.append((2 * n + k, 2 * k, 2 * n + k, "", ""))
    return MarkedNetwork(vertices, edges)


# -- worked-example generators ----------------------------------------------


def gen_path_extension(length_weights, exact=True):
    """Odd-length paths rooted at the marked middle vertex; the middle is S.

    ``length_weights`` maps odd vertex counts to probabilities.  The
    restriction to S is a single marked vertex, so this extends the
    one-vertex base network.
    """
    atoms = []
    for length in sorted(length_weights):
        weight = length_weights[length]
        if length % 2 == 0 or length < 1:
            raise EvenLengthError(f"path extension needs odd vertex counts, got {length}")
        mid = length // 2
        vertices = [(i, "s" if i == mid else "") for i in range(length)]
        edges = [(i, i, i + 1, "", "") for i in range(length - 1)]
        net = MarkedNetwork(vertices, edges)
        if exact and not isinstance(weight, Fraction):
            weight = Fraction(weight) if isinstance(weight, int) else Fraction(str(weight))
        atoms.append((weight, RootedNetwork(net, mid)))
    spec = "mark-prefix:s"
    return Extension(Distribution(atoms), parse_subset(spec), subset_spec=spec)


def gen_pendant_cycle(n, root_mode="uniform-cycle", exact=True):
    """Pendant-decorated cycle; S is the (unmarked) cycle.

    ``uniform-cycle`` and ``fixed-deg3`` return extensions (the former
    proper, the latter improper); ``uniform-all`` returns the uniform-root
    distribution over all 3n vertices, which is unimodular.
    """
    if n < 2:
        raise ValueError("pendant cycle needs n >= 2")
    net = pendant_cycle_graph(n)
    spec = "predicate:unmarked"
    if root_mode == "uniform-cycle":
        w = Fraction(1, 2 * n) if exact else 1.0 / (2 * n)
        mu = Distribution((w, RootedNetwork(net, v)) for v in range(2 * n))
        return Extension(mu, parse_subset(spec), subset_spec=spec)
    if root_mode == "fixed-deg3":
        mu = Distribution([(Fraction(1) if exact else 1.0, RootedNetwork(net, 0))])
        return Extension(mu, parse_subset(spec), subset_spec=spec)
    if root_mode == "uniform-all":
        return uniform_root(net, exact=exact)
    raise ValueError(f"unknown root mode {root_mode!r}")


def _with_marks(net, ones):
    vertices = [(v, "1" if v in ones else "0") for v in net.vertex_ids]
    return MarkedNetwork(vertices, net.edges)


def gen_marked(net, ones, mode="fixed-set", exact=True):
    """{0,1}-mark a network with an exact count of ones, uniform root.

    ``fixed-set`` marks exactly the given vertex set; ``uniform-subsets-of-
    size-k`` mixes uniformly over all size-k mark patterns, which is
    unimodular by symmetry and keeps the count of ones deterministic.
    """
    n = len(net)
    if mode == "fixed-set":
        ones = set(ones)
        if not ones <= set(net.vertex_ids):
            raise CountOutOfRangeError("mark set contains unknown vertices")
        return uniform_root(_with_marks(net, ones), exact=exact)
    if mode == "uniform-subsets-of-size-k":
        k = int(ones)
        if not 0 <= k <= n:
            raise CountOutOfRangeError(f"mark count {k} out of range for {n} vertices")
        subsets = list(combinations(net.vertex_ids, k))
        share = (
            Fraction(1, len(subsets) * n) if exact else 1.0 / (len(subsets) * n)
        )
        atoms = []
        for subset in subsets:
            marked = _with_marks(net, set(subset))
            for v in marked.vertex_ids:
                atoms.append((share, RootedNetwork(marked, v)))
        return Distribution(atoms)
    raise ValueError(f"unknown marking mode {mode!r}")


def _random_connected(rng, n):
    """Erdos-Renyi at p = 2 ln(n)/n, rejected until connected; tree fallback."""
    if n == 1:
        return MarkedNetwork([(0, "")])
    p = min(1.0, 2 * math.log(n) / n)
    for _ in range(500):
        edges = []
        eid = 0
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < p:
                    edges.append((eid, u, v, "", ""))
                    eid += 1
        try:
            return MarkedNetwork([(i, "") for i in range(n)], edges)
        except NetworkInvalidError:
            continue
    # random recursive tree: always connected, still seed-deterministic
    edges = [(v - 1, rng.randrange(v), v, "", "") for v in range(1, n)]
    return MarkedNetwork([(i, "") for i in range(n)], edges)


def gen_random_unimodular(num_graphs, max_vertices, seed, exact=True):
    """Uniform mixture of uniform-root laws on seeded random connected graphs.

    Unimodular by construction: each component is the uniform root on a
    fixed finite graph.
    """
    atoms = []
    for index in range(num_graphs):
        rng = random.Random(derive_seed(seed, index))
        n = rng.randint(1, max_vertices)
        net = _random_connected(rng, n)
        share = (
            Fraction(1, num_graphs * len(net))
            if exact
            else 1.0 / (num_graphs * len(net))
        )
        for v in net.vertex_ids:
            atoms.append((share, RootedNetwork(net, v)))
    return Distribution(atoms)


def build_from_spec(spec, exact=True):
    """Dispatch a GeneratorSpec (or equivalent dict) to its generator."""
    if isinstance(spec, dict):
        spec = GeneratorSpec(spec["name"], spec.get("params", {}))
    params = dict(spec.params)
    if spec.name == "path-extension":
        weights = {int(k): Fraction(str(v)) for k, v in params["lengths"].items()}
        return gen_path_extension(weights, exact=exact)
    if spec.name == "pendant-cycle":
        return gen_pendant_cycle(
            int(params["n"]), params.get("root_mode", "uniform-cycle"), exact=exact
        )
    if spec.name == "marked":
        base = _base_graph(params)
        if "ones" in params:
            return gen_marked(base, set(params["ones"]), mode="fixed-set", exact=exact)
        return gen_marked(
            base, int(params["k"]), mode="uniform-subsets-of-size-k", exact=exact
        )
    if spec.name == "random-unimodular":
        return gen_random_unimodular(
            int(params["num_graphs"]),
            int(params["max_vertices"]),
            int(params.get("seed", 0)),
            exact=exact,
        )
    raise ValueError(f"unknown generator {spec.name!r}")


def _base_graph(params):
    if "cycle" in params:
        return cycle_graph(int(params["cycle"]))
    if "path" in params:
        return path_graph(int(params["path"]))
    if "star" in params:
        return star_graph(int(params["star"]))
    if "network" in params:
        from .netcore import network_from_json

        net, _, _ = network_from_json(params["network"])
        return net
    raise ValueError("marked generator needs a base graph (cycle/path/star/network)")
