"""Finite marked multigraphs, isomorphism keys, orbits, balls and the rooted metric.

Canonical forms are computed by iterated color refinement (vertex marks as
initial colors, half-edge mark multisets folded into each round) followed by
a branch-and-bound individualization search over the refined partition.  The
search is exact for every input; the worst case is exponential, which is
acceptable at the documented desk scale of roughly 32 vertices.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass

from .errors import NetworkInvalidError

__all__ = [
    "MarkedNetwork",
    "RootedNetwork",
    "DoublyRootedNetwork",
    "CanonicalKey",
    "OrbitPartition",
    "canonical_key",
    "vertex_orbits",
    "ball",
    "rooted_distance",
    "network_from_json",
    "network_to_json",
    "network_to_dot",
]


@dataclass(frozen=True, order=True)
class CanonicalKey:
    """Totally ordered encoding of an isomorphism class.

    Two objects of the same kind receive equal keys iff they are isomorphic
    (mark-preserving always, root-preserving for the rooted kinds).
    """

    kind: str
    encoding: bytes


class MarkedNetwork:
    """Finite connected multigraph with vertex marks and half-edge marks.

    ``vertices`` is an iterable of ``(id, mark)`` pairs and ``edges`` an
    iterable of ``(id, u, v, mark_at_u, mark_at_v)`` tuples; loops and
    parallel edges are permitted.  Marks are arbitrary strings compared by
    their UTF-8 bytes.  Instances are immutable after construction; derived
    data (incidence, distances, canonical forms) is cached on the instance.
    """

    def __init__(self, vertices, edges=()):
        marks = {}
        for vid, mark in vertices:
            if not isinstance(vid, int) or vid < 0:
                raise NetworkInvalidError(f"vertex id must be a nonnegative int, got {vid!r}")
            if vid in marks:
                raise NetworkInvalidError(f"duplicate vertex id {vid}")
            if not isinstance(mark, str):
                raise NetworkInvalidError(f"vertex mark must be a string, got {mark!r}")
            marks[vid] = mark
        if not marks:
            raise NetworkInvalidError("network must have at least one vertex")

        edge_list = []
        seen_eids = set()
        for eid, u, v, mu, mv in edges:
            if not isinstance(eid, int) or eid < 0:
                raise NetworkInvalidError(f"edge id must be a nonnegative int, got {eid!r}")
            if eid in seen_eids:
                raise NetworkInvalidError(f"duplicate edge id {eid}")
            seen_eids.add(eid)
            if u not in marks or v not in marks:
                raise NetworkInvalidError(f"edge {eid} references missing vertex")
            if not (isinstance(mu, str) and isinstance(mv, str)):
                raise NetworkInvalidError(f"edge {eid} half-edge marks must be strings")
            edge_list.append((eid, u, v, mu, mv))

        self._marks = marks
        self._edges = tuple(sorted(edge_list))
        self._vertex_ids = tuple(sorted(marks))

        # incidence[v] = list of (mark_here, mark_far, far_vertex); a loop
        # contributes both of its half-edges at the same vertex.
        incidence = {v: [] for v in self._vertex_ids}
        for eid, u, v, mu, mv in self._edges:
            incidence[u].append((mu, mv, v))
            incidence[v].append((mv, mu, u))
        self._incidence = {v: tuple(sorted(inc)) for v, inc in incidence.items()}

        self._check_connected()
        self._dist = {}
        self._diameter = None
        self._canon = {}
        self._orbit_cells = None

    # -- basic accessors -------------------------------------------------

    @property
    def vertex_ids(self):
        return self._vertex_ids

    @property
    def edges(self):
        return self._edges

    def mark(self, v):
        return self._marks[v]

    def __len__(self):
        return len(self._vertex_ids)

    def __repr__(self):
        return f"MarkedNetwork({len(self)} vertices, {len(self._edges)} edges)"

    def degree(self, v):
        return len(self._incidence[v])

    def neighbors(self, v):
        return sorted({far for _, _, far in self._incidence[v]})

    # -- distances -------------------------------------------------------

    def distances_from(self, v):
        """Graph distances from ``v`` (BFS, cached per source)."""
        cached = self._dist.get(v)
        if cached is not None:
            return cached
        dist = {v: 0}
        queue = deque([v])
        while queue:
            u = queue.popleft()
            for _, _, far in self._incidence[u]:
                if far not in dist:
                    dist[far] = dist[u] + 1
                    queue.append(far)
        self._dist[v] = dist
        return dist

    def distance(self, u, v):
        return self.distances_from(u)[v]

    @property
    def diameter(self):
        if self._diameter is None:
            self._diameter = max(
                max(self.distances_from(v).values()) for v in self._vertex_ids
            )
        return self._diameter

    def _check_connected(self):
        start = self._vertex_ids[0]
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for _, _, far in self._incidence[u]:
                if far not in seen:
                    seen.add(far)
                    queue.append(far)
        if len(seen) != len(self._vertex_ids):
            raise NetworkInvalidError("network must be connected")


@dataclass(frozen=True)
class RootedNetwork:
    """A network with a distinguished root vertex."""

    network: MarkedNetwork
    root: int

    def __post_init__(self):
        if self.root not in self.network._marks:
            raise NetworkInvalidError(f"root {self.root} is not a vertex")

    @property
    def key(self):
        return canonical_key(self)


@dataclass(frozen=True)
class DoublyRootedNetwork:
    """A network with an ordered pair of distinguished vertices (may coincide)."""

    network: MarkedNetwork
    root1: int
    root2: int

    def __post_init__(self):
        marks = self.network._marks
        if self.root1 not in marks or self.root2 not in marks:
            raise NetworkInvalidError("both roots must be vertices of the network")

    @property
    def key(self):
        return canonical_key(self)

    def swapped(self):
        return DoublyRootedNetwork(self.network, self.root2, self.root1)


@dataclass(frozen=True)
class OrbitPartition:
    """Vertex orbits under the automorphism group of the unrooted network."""

    network: MarkedNetwork
    cells: tuple

    def cell_of(self, v):
        for cell in self.cells:
            if v in cell:
                return cell
        raise KeyError(v)

    def __len__(self):
        return len(self.cells)


# -- canonicalization ----------------------------------------------------


def _refine(incidence, colors):
    """Color refinement until the partition stabilizes.

    Colors are rank integers; each round re-ranks vertices by
    (old color, sorted multiset of (mark_here, mark_far, far color)).
    Refinement only ever splits cells, so a stable class count means the
    partition is stable.
    """
    ncolors = len(set(colors.values()))
    while True:
        sigs = {
            v: (colors[v], tuple(sorted((mh, mf, colors[far]) for mh, mf, far in inc)))
            for v, inc in incidence.items()
        }
        ranking = {sig: i for i, sig in enumerate(sorted(set(sigs.values())))}
        colors = {v: ranking[sigs[v]] for v in colors}
        n_new = len(ranking)
        if n_new == ncolors:
            return colors
        ncolors = n_new


def _individualize(colors, v):
    """Split ``v`` out of its cell, placed before its former cellmates."""
    cv = colors[v]
    pairs = {u: (c, 1 if (c == cv and u != v) else 0) for u, c in colors.items()}
    ranking = {p: i for i, p in enumerate(sorted(set(pairs.values())))}
    return {u: ranking[pairs[u]] for u in colors}


def _histogram(colors):
    return tuple(sorted(Counter(colors.values()).items()))


def _encode(net, colors, roots):
    """Encoding of the network under the discrete coloring ``colors``."""
    order = sorted(net.vertex_ids, key=lambda v: colors[v])
    pos = {v: i for i, v in enumerate(order)}
    marks = tuple(net.mark(v) for v in order)
    norm_edges = []
    for _, u, v, mu, mv in net.edges:
        a, b = pos[u], pos[v]
        if a < b:
            norm_edges.append((a, b, mu, mv))
        elif a > b:
            norm_edges.append((b, a, mv, mu))
        else:
            lo, hi = sorted((mu, mv))
            norm_edges.append((a, b, lo, hi))
    return (len(order), marks, tuple(sorted(norm_edges)), tuple(pos[r] for r in roots))


def _canonical_search(net, roots):
    """Exact canonical encoding via individualization-refinement.

    Leaves are compared by (refinement-certificate path, encoding); both
    components are isomorphism invariants, so the minimum is a canonical
    form.  Sibling branches whose certificate is not minimal cannot contain
    the minimum leaf and are pruned.
    """
    incidence = net._incidence
    root_set1 = {roots[0]} if len(roots) >= 1 else set()
    root_set2 = {roots[1]} if len(roots) >= 2 else set()
    init = {
        v: (v in root_set1, v in root_set2, net.mark(v))
        for v in net.vertex_ids
    }
    ranking = {key: i for i, key in enumerate(sorted(set(init.values())))}
    colors = _refine(incidence, {v: ranking[init[v]] for v in init})

    def rec(colors, path):
        counts = Counter(colors.values())
        if len(counts) == len(colors):
            return path, _encode(net, colors, roots)
        target = min(c for c, k in counts.items() if k > 1)
        cell = sorted(v for v, c in colors.items() if c == target)
        kids = [_refine(incidence, _individualize(colors, v)) for v in cell]
        certs = [_histogram(k) for k in kids]
        best_cert = min(certs)
        best = None
        for kid, cert in zip(kids, certs):
            if cert != best_cert:
                continue
            result = rec(kid, path + (cert,))
            if best is None or result < best:
                best = result
        return best

    _, encoding = rec(colors, (_histogram(colors),))
    return encoding


_KINDS = {0: "unrooted", 1: "rooted", 2: "doubly-rooted"}


def canonical_key(obj):
    """Canonical key of a network, rooted network, or doubly-rooted network.

    Deterministic, independent of vertex/edge ids and of insertion order;
    idempotent and cached on the underlying network.
    """
    if isinstance(obj, MarkedNetwork):
        net, roots = obj, ()
    elif isinstance(obj, RootedNetwork):
        net, roots = obj.network, (obj.root,)
    elif isinstance(obj, DoublyRootedNetwork):
        net, roots = obj.network, (obj.root1, obj.root2)
    else:
        raise TypeError(f"cannot canonicalize {type(obj).__name__}")
    cached = net._canon.get(roots)
    if cached is None:
        encoding = repr(_canonical_search(net, roots)).encode("utf-8")
        cached = CanonicalKey(_KINDS[len(roots)], encoding)
        net._canon[roots] = cached
    return cached


def vertex_orbits(net):
    """Orbit cells: v, w share a cell iff their rooted keys coincide."""
    if net._orbit_cells is None:
        by_key = {}
        for v in net.vertex_ids:
            by_key.setdefault(canonical_key(RootedNetwork(net, v)), []).append(v)
        cells = tuple(tuple(by_key[k]) for k in sorted(by_key))
        net._orbit_cells = cells
    return OrbitPartition(net, net._orbit_cells)


def ball(net, v, r):
    """Closed ball of radius ``r`` around ``v`` as a rooted induced subnetwork."""
    dist = net.distances_from(v)
    keep = {u for u, d in dist.items() if d <= r}
    vertices = [(u, net.mark(u)) for u in sorted(keep)]
    edges = [e for e in net.edges if e[1] in keep and e[2] in keep]
    return RootedNetwork(MarkedNetwork(vertices, edges), v)


def rooted_distance(x, y):
    """Rooted-network distance 1/(1+r*) from agreement radius of root balls.

    ``r*`` is the largest radius at which the closed balls around the two
    roots are isomorphic; the distance is 0 exactly when the rooted classes
    are equal and 1 when already the 0-balls (root marks) differ.
    """
    if canonical_key(x) == canonical_key(y):
        return 0.0
    rmax = max(x.network.diameter, y.network.diameter) + 1
    for r in range(rmax + 1):
        kx = canonical_key(ball(x.network, x.root, r))
        ky = canonical_key(ball(y.network, y.root, r))
        if kx != ky:
            return 1.0 if r == 0 else 1.0 / r
    # balls at rmax are the whole networks, so the keys must have differed
    raise AssertionError("unreachable: full balls equal but rooted keys differ")


# -- serialization -------------------------------------------------------


def network_to_json(net, root=None, root2=None):
    """Network JSON: vertices, edges, optional roots."""
    payload = {
        "vertices": [{"id": v, "mark": net.mark(v)} for v in net.vertex_ids],
        "edges": [
            {"id": eid, "u": u, "v": v, "mu": mu, "mv": mv}
            for eid, u, v, mu, mv in net.edges
        ],
    }
    if root is not None:
        payload["root"] = root
    if root2 is not None:
        payload["root2"] = root2
    return payload


def network_from_json(payload):
    """Parse network JSON; returns (network, root-or-None, root2-or-None)."""
    try:
        vertices = [(v["id"], v.get("mark", "")) for v in payload["vertices"]]
        edges = [
            (e["id"], e["u"], e["v"], e.get("mu", ""), e.get("mv", ""))
            for e in payload.get("edges", [])
        ]
    except (KeyError, TypeError) as exc:
        raise NetworkInvalidError(f"malformed network JSON: {exc}") from exc
    net = MarkedNetwork(vertices, edges)
    return net, payload.get("root"), payload.get("root2")


def network_to_dot(net, root=None, root2=None):
    """DOT rendering; roots are drawn double-circled."""
    lines = ["graph network {"]
    for v in net.vertex_ids:
        attrs = [f'label="{v}:{net.mark(v)}"']
        if v == root or v == root2:
            attrs.append("peripheries=2")
        lines.append(f"  n{v} [{', '.join(attrs)}];")
    for eid, u, v, mu, mv in net.edges:
        label = f"{mu}|{mv}" if (mu or mv) else ""
        suffix = f' [label="{label}"]' if label else ""
        lines.append(f"  n{u} -- n{v}{suffix};")
    lines.append("}")
    return "\n".join(lines) + "\n"
