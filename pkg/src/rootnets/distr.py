"""Finite-support probability measures on rooted classes.

A Distribution stores merged atoms keyed by rooted canonical keys; all the
measure algebra (biasing, unrooting, conditional expectation given the
root-insensitive events, exact mass-transport checking) reduces to finite
bookkeeping over those keys.  Weights may be floats or Fractions; rational
inputs stay rational through every operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ._num import msum, parse_weight, weight_to_json
from .errors import InvariantViolationError, ZeroMassError
from .netcore import (
    DoublyRootedNetwork,
    RootedNetwork,
    canonical_key,
    network_from_json,
    network_to_json,
)

__all__ = [
    "VertexFunction",
    "Distribution",
    "UnrootedDistribution",
    "DoublyMeasure",
    "MTPReport",
    "symmetry_report",
    "max_atom_difference",
    "ConditionedDistribution",
    "uniform_root",
    "induced_doubly_measure",
    "swap",
    "is_unimodular",
    "bias",
    "unroot",
    "agree_on_invariant",
    "cond_expectation",
    "condition_on_subset",
    "distributions_equal",
    "validate_vertex_function",
    "vf_const",
    "vf_degree",
    "vf_vertex_count",
    "vf_mark",
    "vf_mark_indicator",
    "vf_scale",
    "vf_product",
    "distribution_from_json",
    "distribution_to_json",
]


@dataclass(frozen=True)
class VertexFunction:
    """Named nonnegative function of (network, vertex), class-invariant.

    The value may only depend on the rooted isomorphism class of the vertex;
    this is spot-checked by :func:`validate_vertex_function` on every atom of
    a distribution before use.
    """

    name: str
    fn: object

    def __call__(self, net, v):
        return self.fn(net, v)


def vf_const(c):
    return VertexFunction(f"const:{c}", lambda net, v: c)


def vf_degree():
    return VertexFunction("degree", lambda net, v: net.degree(v))


def vf_vertex_count():
    return VertexFunction("vertex-count", lambda net, v: len(net))


def vf_mark(value, x=1):
    """x if the vertex mark equals ``value``, else 0."""
    return VertexFunction(
        f"mark:{value}:{x}", lambda net, v: x if net.mark(v) == value else 0
    )


def vf_mark_indicator(value):
    return VertexFunction(
        f"indicator-mark:{value}", lambda net, v: 1 if net.mark(v) == value else 0
    )


def vf_scale(w, c):
    return VertexFunction(f"scale:{c}:{w.name}", lambda net, v: c * w.fn(net, v))


def vf_product(w1, w2):
    return VertexFunction(
        f"product:{w1.name}:{w2.name}", lambda net, v: w1.fn(net, v) * w2.fn(net, v)
    )


def validate_vertex_function(vf, mu):
    """Check class-invariance and nonnegativity of ``vf`` on every atom.

    Vertices of one atom network with equal rooted keys must receive equal
    values; a violation is a hard error since transport functions are defined
    on isomorphism classes only.
    """
    for _, rooted in mu.atoms:
        net = rooted.network
        by_orbit = {}
        for v in net.vertex_ids:
            value = vf(net, v)
            if value < 0:
                raise InvariantViolationError(
                    f"vertex function {vf.name!r} is negative at vertex {v}"
                )
            key = canonical_key(RootedNetwork(net, v))
            prev = by_orbit.setdefault(key, value)
            if prev != value:
                raise InvariantViolationError(
                    f"vertex function {vf.name!r} is not class-invariant: "
                    f"values {prev!r} and {value!r} on one orbit"
                )


class Distribution:
    """Finite-support probability measure on rooted isomorphism classes.

    Atoms with isomorphic representatives are merged; weights must sum to 1
    within ``tol`` (default 1e-12).  Atoms are kept sorted by canonical key,
    so equal distributions have identical atom sequences.
    """

    def __init__(self, atoms, tol=1e-12):
        merged = {}
        reps = {}
        for weight, rooted in atoms:
            if weight < 0:
                raise ValueError(f"atom weight must be nonnegative, got {weight!r}")
            if weight == 0:
                continue
            if isinstance(weight, int):
                weight = Fraction(weight)  # integers are exact; keep them so
            if not isinstance(rooted, RootedNetwork):
                raise TypeError("atoms must be (weight, RootedNetwork) pairs")
            key = canonical_key(rooted)
            if key in merged:
                merged[key] = merged[key] + weight
            else:
                merged[key] = weight
                reps[key] = rooted
        total = msum(merged.values())
        if abs(total - 1) > tol:
            raise ValueError(f"atom weights sum to {total!r}, not 1 (tol {tol})")
        self._keys = tuple(sorted(merged))
        self._weights = {k: merged[k] for k in self._keys}
        self._reps = {k: reps[k] for k in self._keys}

    @property
    def atoms(self):
        """Sorted tuple of (weight, representative RootedNetwork)."""
        return tuple((self._weights[k], self._reps[k]) for k in self._keys)

    @property
    def keys(self):
        return self._keys

    def weight(self, key):
        return self._weights.get(key, 0)

    def representative(self, key):
        return self._reps[key]

    def __len__(self):
        return len(self._keys)

    def __repr__(self):
        return f"Distribution({len(self)} atoms)"

    def support_networks(self):
        """One representative network per unrooted class in the support."""
        by_unrooted = {}
        for _, rooted in self.atoms:
            ukey = canonical_key(rooted.network)
            by_unrooted.setdefault(ukey, rooted.network)
        return [by_unrooted[k] for k in sorted(by_unrooted)]


class UnrootedDistribution:
    """Finite-support measure on unrooted classes (the root-forgetting image)."""

    def __init__(self, atoms, tol=1e-12):
        merged = {}
        reps = {}
        for weight, net in atoms:
            key = canonical_key(net)
            if key in merged:
                merged[key] = merged[key] + weight
            else:
                merged[key] = weight
                reps[key] = net
        total = msum(merged.values())
        if abs(total - 1) > tol:
            raise ValueError(f"unrooted weights sum to {total!r}, not 1")
        self._keys = tuple(sorted(merged))
        self._weights = {k: merged[k] for k in self._keys}
        self._reps = {k: reps[k] for k in self._keys}

    @property
    def atoms(self):
        return tuple((self._weights[k], self._reps[k]) for k in self._keys)

    @property
    def keys(self):
        return self._keys

    def weight(self, key):
        return self._weights.get(key, 0)

    def representative(self, key):
        return self._reps[key]

    def __len__(self):
        return len(self._keys)

    def equals(self, other, tol=0):
        keys = set(self._keys) | set(other._keys)
        return all(abs(self.weight(k) - other.weight(k)) <= tol for k in keys)


class DoublyMeasure:
    """Finite measure on doubly-rooted classes (couplings, induced measures)."""

    def __init__(self, entries=()):
        self._weights = {}
        self._reps = {}
        for weight, doubly in entries:
            self.add(weight, doubly)

    def add(self, weight, doubly):
        if weight < 0:
            raise ValueError("doubly-rooted mass must be nonnegative")
        if weight == 0:
            return
        key = canonical_key(doubly)
        if key in self._weights:
            self._weights[key] = self._weights[key] + weight
        else:
            self._weights[key] = weight
            self._reps[key] = doubly

    @property
    def keys(self):
        return tuple(sorted(self._weights))

    def weight(self, key):
        return self._weights.get(key, 0)

    def representative(self, key):
        return self._reps[key]

    def entries(self):
        return tuple((self._weights[k], self._reps[k]) for k in self.keys)

    @property
    def total_mass(self):
        return msum(self._weights.values())

    def __len__(self):
        return len(self._weights)


def uniform_root(net, exact=False):
    """Uniform root on a fixed network; unimodular by the vertex-sum symmetry."""
    n = len(net)
    w = Fraction(1, n) if exact else 1.0 / n
    return Distribution((w, RootedNetwork(net, v)) for v in net.vertex_ids)


def induced_doubly_measure(mu, restrict=None):
    """Spray each atom's mass over second roots, optionally restricted.

    For each atom (p, [G,o]) and each vertex v with ``restrict(G, v) > 0``
    (every v when no restriction), mass p is added at the doubly-rooted class
    [G,o,v].  Total mass is therefore sum of p * |admitted vertices|.
    """
    if restrict is not None:
        validate_vertex_function(restrict, mu)
    out = DoublyMeasure()
    for weight, rooted in mu.atoms:
        net = rooted.network
        for v in net.vertex_ids:
            if restrict is not None and not restrict(net, v) > 0:
                continue
            out.add(weight, DoublyRootedNetwork(net, rooted.root, v))
    return out


def swap(measure):
    """Exchange the two roots of every class; masses preserved (involution)."""
    out = DoublyMeasure()
    for weight, doubly in measure.entries():
        out.add(weight, doubly.swapped())
    return out


@dataclass(frozen=True)
class MTPReport:
    """Result of an exact mass-transport symmetry check."""

    passed: bool
    max_discrepancy: object
    witness: object  # DoublyRootedNetwork or None

    def to_json(self):
        payload = {
            "pass": self.passed,
            "max_discrepancy": float(self.max_discrepancy),
        }
        if self.witness is not None:
            payload["witness"] = network_to_json(
                self.witness.network, root=self.witness.root1, root2=self.witness.root2
            )
        return payload


def symmetry_report(measure, tol):
    swapped = swap(measure)
    worst = 0
    witness = None
    for key in sorted(set(measure.keys) | set(swapped.keys)):
        disc = abs(measure.weight(key) - swapped.weight(key))
        if disc > worst:
            worst = disc
            rep = measure._reps.get(key) or swapped._reps.get(key)
            witness = rep
    passed = worst <= tol
    return MTPReport(passed, worst, None if passed else witness)


def is_unimodular(mu, tol=1e-12):
    """Exact mass transport principle check.

    At finite support the principle for all invariant transport functions is
    equivalent to swap-symmetry of the induced doubly-rooted measure, since
    class indicators span every function by linearity.
    """
    return symmetry_report(induced_doubly_measure(mu), tol)


def bias(mu, w):
    """Multiply atom weights by ``w`` at the root and renormalize."""
    validate_vertex_function(w, mu)
    scaled = []
    for weight, rooted in mu.atoms:
        scaled.append((weight * w(rooted.network, rooted.root), rooted))
    total = msum(value for value, _ in scaled)
    if total <= 0:
        raise ZeroMassError(f"bias by {w.name!r} has zero total mass on the support")
    return Distribution((value / total, rooted) for value, rooted in scaled)


def unroot(mu):
    """Forget the roots: pushforward onto unrooted classes."""
    return UnrootedDistribution(
        (weight, rooted.network) for weight, rooted in mu.atoms
    )


def agree_on_invariant(mu1, mu2, tol=1e-12):
    """True iff the two distributions have equal unrooted laws within tol."""
    return unroot(mu1).equals(unroot(mu2), tol)


def cond_expectation(mu, w):
    """Conditional expectation of ``w`` given the unrooted class.

    At finite support this is the mass-weighted mean of root values within
    each group of atoms sharing an unrooted key.
    """
    validate_vertex_function(w, mu)
    groups = {}
    for weight, rooted in mu.atoms:
        ukey = canonical_key(rooted.network)
        num, den = groups.get(ukey, (0, 0))
        groups[ukey] = (num + weight * w(rooted.network, rooted.root), den + weight)
    return {ukey: num / den for ukey, (num, den) in groups.items()}


@dataclass(frozen=True)
class ConditionedDistribution:
    """Conditioned law plus the root-change reachability diagnostic.

    ``constant`` records whether the subset's conditional intensity is the
    same on every unrooted class, which is exactly the criterion for the
    conditioned law to be reachable from the input by a root-change.
    """

    distribution: Distribution
    intensities: dict
    constant: bool


def condition_on_subset(mu, subset, tol=1e-12):
    """Condition on the root lying in a covariant subset (bias by its indicator)."""
    intensities = cond_expectation(mu, subset)
    conditioned = bias(mu, subset)
    values = list(intensities.values())
    constant = all(abs(v - values[0]) <= tol for v in values)
    return ConditionedDistribution(conditioned, intensities, constant)


def distributions_equal(mu1, mu2, tol=0):
    keys = set(mu1.keys) | set(mu2.keys)
    return all(abs(mu1.weight(k) - mu2.weight(k)) <= tol for k in keys)


def max_atom_difference(mu1, mu2):
    keys = set(mu1.keys) | set(mu2.keys)
    return max(abs(mu1.weight(k) - mu2.weight(k)) for k in keys) if keys else 0


# -- serialization -------------------------------------------------------


def distribution_to_json(mu):
    return {
        "atoms": [
            {
                "weight": weight_to_json(weight),
                "network": network_to_json(rooted.network, root=rooted.root),
            }
            for weight, rooted in mu.atoms
        ]
    }


def distribution_from_json(payload, exact=False):
    atoms = []
    for entry in payload["atoms"]:
        weight = parse_weight(entry["weight"], exact=exact)
        net, root, _ = network_from_json(entry["network"])
        if root is None:
            raise ValueError("distribution atoms require a rooted network")
        atoms.append((weight, RootedNetwork(net, root)))
    return Distribution(atoms)
