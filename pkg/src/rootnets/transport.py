"""Invariant transport kernels, root-changes, couplings and shift-couplings.

A kernel is a nonnegative function of doubly-rooted classes, stored as a
table keyed by canonical keys (optionally backed by a closed-form rule that
is memoized per key, which makes class-invariance structural).  Two
constructive shift-couplings are provided: a direct per-class construction,
and the iterative residual-splitting construction driven by the uniform
spread kernel, with the coupling-to-kernel disintegration used after
convergence.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ._num import msum, parse_weight, weight_to_json
from .distr import (
    Distribution,
    DoublyMeasure,
    agree_on_invariant,
    swap,
    validate_vertex_function,
)
from .errors import (
    InvariantMismatchError,
    MarginalDominationError,
    MaxStagesExceededError,
    NotMarkovianError,
    SupportMismatchError,
    ZeroMassAtomError,
)
from .netcore import (
    DoublyRootedNetwork,
    RootedNetwork,
    canonical_key,
    network_from_json,
    network_to_json,
)

__all__ = [
    "Kernel",
    "KernelReport",
    "StageTrace",
    "identity_kernel",
    "uniform_kernel",
    "nearest_subset_kernel",
    "out_mass",
    "in_mass",
    "root_change",
    "compose",
    "reverse_kernel",
    "coupling_from_kernel",
    "kernel_from_coupling",
    "direct_shift_coupling",
    "thorisson_split",
    "iterative_shift_coupling",
    "is_balancing",
    "kernel_to_json",
    "kernel_from_json",
]


class Kernel:
    """Invariant transport kernel: doubly-rooted class -> nonnegative mass.

    Lookup order: explicit table, then the optional rule (evaluated once and
    memoized per key), else 0.  Lookups that fall through to the default are
    counted in ``unmatched_lookups``.
    """

    def __init__(self, entries=(), rule=None, name="kernel"):
        self.name = name
        self._rule = rule
        self._table = {}
        self._reps = {}
        self.unmatched_lookups = 0
        for doubly, value in entries:
            self.add_entry(doubly, value)

    def add_entry(self, doubly, value, tol=1e-9):
        if value < 0:
            raise ValueError("kernel values must be nonnegative")
        key = canonical_key(doubly)
        if key in self._table:
            if abs(self._table[key] - value) > tol:
                raise ValueError(
                    f"conflicting kernel values {self._table[key]!r} and {value!r} "
                    "on one doubly-rooted class"
                )
            return
        self._table[key] = value
        self._reps[key] = doubly

    def value(self, net, u, v):
        doubly = DoublyRootedNetwork(net, u, v)
        key = canonical_key(doubly)
        if key in self._table:
            return self._table[key]
        if self._rule is not None:
            val = self._rule(net, u, v)
            if val < 0:
                raise ValueError("kernel rule produced a negative value")
            self._table[key] = val
            self._reps[key] = doubly
            return val
        self.unmatched_lookups += 1
        return 0

    def row(self, net, u):
        return [self.value(net, u, v) for v in net.vertex_ids]

    def matrix(self, net):
        return [self.row(net, u) for u in net.vertex_ids]

    def entries(self):
        return tuple((self._reps[k], self._table[k]) for k in sorted(self._table))

    def __repr__(self):
        return f"Kernel({self.name!r}, {len(self._table)} entries)"


def identity_kernel():
    """Unit mass on the diagonal classes."""
    return Kernel(rule=lambda net, u, v: 1 if u == v else 0, name="identity")


def uniform_kernel(exact=False):
    """Spread mass 1/|V| to every vertex; Markovian on every finite network."""
    if exact:
        return Kernel(rule=lambda net, u, v: Fraction(1, len(net)), name="uniform")
    return Kernel(rule=lambda net, u, v: 1.0 / len(net), name="uniform")


def nearest_subset_kernel(subset, exact=False):
    """Send unit mass to the nearest subset vertices, split uniformly on ties."""

    def rule(net, u, v):
        inside = [x for x in net.vertex_ids if subset(net, x) > 0]
        if not inside:
            return 0
        dist = net.distances_from(u)
        best = min(dist[x] for x in inside)
        nearest = [x for x in inside if dist[x] == best]
        if v not in nearest:
            return 0
        return Fraction(1, len(nearest)) if exact else 1.0 / len(nearest)

    return Kernel(rule=rule, name=f"to-subset-nearest:{subset.name}")


def out_mass(kernel, net, v):
    """Row sum of the kernel at ``v``."""
    return msum(kernel.row(net, v))


def in_mass(kernel, net, v):
    """Column sum of the kernel at ``v``."""
    return msum(kernel.value(net, u, v) for u in net.vertex_ids)


def _markov_row(kernel, net, root, tol):
    row = kernel.row(net, root)
    total = msum(row)
    if abs(total - 1) > tol:
        raise NotMarkovianError(
            f"kernel {kernel.name!r} has out-mass {total!r} at a root, not 1"
        )
    # renormalize away float drift so pushforwards carry exact unit mass
    if total != 1:
        row = [value / total for value in row]
    return row


def root_change(mu, kernel, markov_tol=1e-9):
    """Move the root to a random vertex drawn from the kernel row at the root."""
    atoms = []
    for weight, rooted in mu.atoms:
        net = rooted.network
        row = _markov_row(kernel, net, rooted.root, markov_tol)
        for v, value in zip(net.vertex_ids, row):
            if value > 0:
                atoms.append((weight * value, RootedNetwork(net, v)))
    return Distribution(atoms)


def compose(first, second, mu, markov_tol=1e-9):
    """Two-step kernel: per-network matrix product over the support of ``mu``."""
    alpha = root_change(mu, first, markov_tol)
    for _, rooted in alpha.atoms:
        total = msum(second.row(rooted.network, rooted.root))
        if abs(total - 1) > markov_tol:
            raise SupportMismatchError(
                f"kernel {second.name!r} is not Markovian on the intermediate "
                f"support (out-mass {total!r})"
            )
    composed = Kernel(name=f"compose({first.name},{second.name})")
    for net in mu.support_networks():
        ids = net.vertex_ids
        m1 = first.matrix(net)
        m2 = second.matrix(net)
        for i, u in enumerate(ids):
            for j, v in enumerate(ids):
                value = msum(m1[i][k] * m2[k][j] for k in range(len(ids)))
                if value > 0:
                    composed.add_entry(DoublyRootedNetwork(net, u, v), value)
    return composed


def coupling_from_kernel(mu, kernel, markov_tol=1e-9):
    """Joint law of (root, new root): mass p * T(o, v) at [G,o,v]."""
    coupling = DoublyMeasure()
    for weight, rooted in mu.atoms:
        net = rooted.network
        row = _markov_row(kernel, net, rooted.root, markov_tol)
        for v, value in zip(net.vertex_ids, row):
            if value > 0:
                coupling.add(weight * value, DoublyRootedNetwork(net, rooted.root, v))
    return coupling


def kernel_from_coupling(coupling, marginal_tol=1e-9):
    """Disintegrate a coupling into a kernel over its first marginal.

    Per first-rooted class, the fiber's conditional law over second-rooted
    classes is realized on one representative network by targeting, for each
    second class, the set of nearest vertices realizing it, split uniformly.
    The first marginal must be a probability distribution.
    """
    fibers = {}
    for mass, doubly in coupling.entries():
        fkey = canonical_key(RootedNetwork(doubly.network, doubly.root1))
        fibers.setdefault(fkey, []).append((mass, doubly))

    total = msum(m for entries in fibers.values() for m, _ in entries)
    if abs(total - 1) > marginal_tol:
        raise ValueError(
            f"coupling's first marginal has mass {total!r}, not a probability"
        )

    kernel = Kernel(name="disintegrated")
    for fkey in sorted(fibers):
        entries = fibers[fkey]
        fiber_mass = msum(m for m, _ in entries)
        if fiber_mass <= 0:
            raise ZeroMassAtomError("coupling fiber has zero mass")
        rep = min(entries, key=lambda e: canonical_key(e[1]))[1]
        net, root = rep.network, rep.root1
        # conditional law over second-rooted classes
        nu = {}
        for mass, doubly in entries:
            skey = canonical_key(RootedNetwork(doubly.network, doubly.root2))
            nu[skey] = nu.get(skey, 0) + mass
        dist = net.distances_from(root)
        by_key = {}
        for v in net.vertex_ids:
            by_key.setdefault(canonical_key(RootedNetwork(net, v)), []).append(v)
        row = {v: 0 for v in net.vertex_ids}
        for skey, mass in nu.items():
            candidates = by_key[skey]
            best = min(dist[v] for v in candidates)
            nearest = [v for v in candidates if dist[v] == best]
            share = mass / fiber_mass / len(nearest)
            for v in nearest:
                row[v] = row[v] + share
        for v, value in row.items():
            if value > 0:
                kernel.add_entry(DoublyRootedNetwork(net, root, v), value)
    return kernel


def reverse_kernel(mu, kernel, markov_tol=1e-9):
    """Kernel inducing the reverse root-change.

    Built by swapping the coupling of ``mu`` with its root-change and
    disintegrating; the returned kernel is Markovian over the root-change of
    ``mu`` and pushes it back onto ``mu`` exactly.
    """
    coupling = coupling_from_kernel(mu, kernel, markov_tol)
    return kernel_from_coupling(swap(coupling), marginal_tol=max(markov_tol, 1e-9))


def direct_shift_coupling(mu1, mu2, tol=1e-12):
    """Shift-coupling kernel built per unrooted class from orbit masses.

    Requires equal unrooted laws.  Within each class the row (independent of
    the source vertex) targets each orbit with mu2's conditional mass split
    uniformly over the orbit, so the root-change of ``mu1`` is exactly
    ``mu2``.
    """
    if not agree_on_invariant(mu1, mu2, tol):
        raise InvariantMismatchError("distributions differ on the invariant events")
    from .distr import unroot

    law = unroot(mu1)
    kernel = Kernel(name="direct-shift-coupling")
    targets = {}
    for weight, rooted in mu2.atoms:
        ukey = canonical_key(rooted.network)
        targets.setdefault(ukey, []).append((weight, canonical_key(rooted)))
    for ukey in law.keys:
        net = law.representative(ukey)
        class_mass = law.weight(ukey)
        orbits = {}
        for v in net.vertex_ids:
            orbits.setdefault(canonical_key(RootedNetwork(net, v)), []).append(v)
        row = {v: 0 for v in net.vertex_ids}
        for weight, rkey in targets[ukey]:
            members = orbits[rkey]
            share = (weight / class_mass) / len(members)
            for v in members:
                row[v] = share
        for u in net.vertex_ids:
            for v, value in row.items():
                if value > 0:
                    kernel.add_entry(DoublyRootedNetwork(net, u, v), value)
    return kernel


def thorisson_split(target, coupling, i, tol=1e-12):
    """Sub-coupling of ``coupling`` with exact i-th marginal ``target``.

    ``target`` maps rooted keys to masses and must be dominated by the i-th
    marginal.  Fibers are scaled proportionally: Q'[k] = Q[k] * P(c) / m(c)
    with 0/0 read as 0.
    """
    if i not in (1, 2):
        raise ValueError("marginal index must be 1 or 2")
    marginal = {}
    for mass, doubly in coupling.entries():
        root = doubly.root1 if i == 1 else doubly.root2
        key = canonical_key(RootedNetwork(doubly.network, root))
        marginal[key] = marginal.get(key, 0) + mass
    for key, wanted in target.items():
        if wanted > marginal.get(key, 0) + tol:
            raise MarginalDominationError(
                f"target mass {wanted!r} exceeds marginal mass "
                f"{marginal.get(key, 0)!r} on a rooted class"
            )
    result = DoublyMeasure()
    for mass, doubly in coupling.entries():
        root = doubly.root1 if i == 1 else doubly.root2
        key = canonical_key(RootedNetwork(doubly.network, root))
        wanted = target.get(key, 0)
        if wanted <= 0:
            continue
        scale = min(wanted / marginal[key], 1)
        result.add(mass * scale, doubly)
    return result


@dataclass(frozen=True)
class StageTrace:
    stage: int
    lambda_mass: float
    residual_first: float
    residual_second: float


class _RootedMeasure:
    """Sub-probability measure over rooted keys with representatives."""

    def __init__(self):
        self.weights = {}
        self.reps = {}

    @classmethod
    def from_distribution(cls, mu):
        out = cls()
        for weight, rooted in mu.atoms:
            out.add(weight, rooted)
        return out

    def add(self, mass, rooted):
        if mass <= 0:
            return
        key = canonical_key(rooted)
        self.weights[key] = self.weights.get(key, 0) + mass
        self.reps.setdefault(key, rooted)

    def subtract(self, other):
        for key, mass in other.items():
            left = self.weights.get(key, 0) - mass
            self.weights[key] = max(left, 0)

    @property
    def mass(self):
        return msum(self.weights.values())

    def spread_up(self):
        """Uniform spread coupling: mass p/|V| at [G,o,v] for every v."""
        up = DoublyMeasure()
        for key, mass in self.weights.items():
            if mass <= 0:
                continue
            rooted = self.reps[key]
            net = rooted.network
            share = (
                mass / Fraction(len(net))
                if isinstance(mass, Fraction)
                else mass / len(net)
            )
            for v in net.vertex_ids:
                up.add(share, DoublyRootedNetwork(net, rooted.root, v))
        return up


def _second_marginal(coupling):
    out = {}
    for mass, doubly in coupling.entries():
        key = canonical_key(RootedNetwork(doubly.network, doubly.root2))
        out[key] = out.get(key, 0) + mass
    return out


def _first_marginal(coupling):
    out = {}
    for mass, doubly in coupling.entries():
        key = canonical_key(RootedNetwork(doubly.network, doubly.root1))
        out[key] = out.get(key, 0) + mass
    return out


def iterative_shift_coupling(mu1, mu2, max_stages=64, tol=1e-10):
    """Iterative shift-coupling via uniform spreading and residual splitting.

    Each stage spreads the residual measures uniformly over the vertices,
    intersects the spread images, carves matching sub-couplings out of both
    sides, and subtracts their first marginals from the residuals.  After the
    residuals drop below ``tol`` the accumulated couplings are disintegrated
    into kernels (the second through the swapped coupling) and composed.

    Returns (kernel, trace).  Raises MaxStagesExceededError when the residual
    target is not reached; the exception carries the final residual.
    """
    if not agree_on_invariant(mu1, mu2, tol):
        raise InvariantMismatchError("distributions differ on the invariant events")

    res1 = _RootedMeasure.from_distribution(mu1)
    res2 = _RootedMeasure.from_distribution(mu2)
    acc1 = DoublyMeasure()
    acc2 = DoublyMeasure()
    trace = []
    converged = False
    residual = 1.0
    for stage in range(1, max_stages + 1):
        up1 = res1.spread_up()
        up2 = res2.spread_up()
        down1 = _second_marginal(up1)
        down2 = _second_marginal(up2)
        lam = {}
        for key in set(down1) | set(down2):
            low = min(down1.get(key, 0), down2.get(key, 0))
            if low > 0:
                lam[key] = low
        q1 = thorisson_split(lam, up1, i=2)
        q2 = thorisson_split(lam, up2, i=2)
        for mass, doubly in q1.entries():
            acc1.add(mass, doubly)
        for mass, doubly in q2.entries():
            acc2.add(mass, doubly)
        res1.subtract(_first_marginal(q1))
        res2.subtract(_first_marginal(q2))
        r1, r2 = res1.mass, res2.mass
        trace.append(StageTrace(stage, float(msum(lam.values())), float(r1), float(r2)))
        residual = max(r1, r2)
        if residual < tol:
            converged = True
            break
        if not lam:
            break
    if not converged:
        raise MaxStagesExceededError(
            f"residual {float(residual)!r} above tolerance after {len(trace)} stages",
            float(residual),
        )
    loose = max(10 * tol, 1e-9)
    to_middle = kernel_from_coupling(acc1, marginal_tol=loose)
    from_middle = kernel_from_coupling(swap(acc2), marginal_tol=loose)
    kernel = compose(to_middle, from_middle, mu1, markov_tol=loose)
    return kernel, trace


@dataclass(frozen=True)
class KernelReport:
    """Per-vertex balance check of a kernel against two weight functions."""

    passed: bool
    max_out_discrepancy: object
    max_in_discrepancy: object
    per_atom: tuple
    witness: object  # (network, vertex, side) or None

    def to_json(self):
        payload = {
            "pass": self.passed,
            "max_out_discrepancy": float(self.max_out_discrepancy),
            "max_in_discrepancy": float(self.max_in_discrepancy),
        }
        if self.witness is not None:
            net, v, side = self.witness
            payload["witness"] = {
                "network": network_to_json(net, root=v),
                "side": side,
            }
        return payload


def is_balancing(mu, kernel, w1, w2, tol=1e-9):
    """Check T+ = w1 and T- = w2 at every vertex of every supported network."""
    validate_vertex_function(w1, mu)
    validate_vertex_function(w2, mu)
    worst_out = 0
    worst_in = 0
    witness = None
    per_atom = []
    for net in mu.support_networks():
        ids = net.vertex_ids
        matrix = kernel.matrix(net)
        outs = [msum(row) for row in matrix]
        ins = [msum(matrix[i][j] for i in range(len(ids))) for j in range(len(ids))]
        for idx, v in enumerate(ids):
            d_out = abs(outs[idx] - w1(net, v))
            d_in = abs(ins[idx] - w2(net, v))
            if d_out > worst_out:
                worst_out = d_out
                witness = (net, v, "out")
            if d_in > worst_in:
                worst_in = d_in
                if d_in >= worst_out:
                    witness = (net, v, "in")
        per_atom.append((canonical_key(net), ids, tuple(outs), tuple(ins)))
    passed = worst_out <= tol and worst_in <= tol
    return KernelReport(
        passed, worst_out, worst_in, tuple(per_atom), None if passed else witness
    )


# -- serialization -------------------------------------------------------


def kernel_to_json(kernel):
    return {
        "entries": [
            {
                "class": network_to_json(d.network, root=d.root1, root2=d.root2),
                "value": weight_to_json(value),
            }
            for d, value in kernel.entries()
        ]
    }


def kernel_from_json(payload, exact=False, subset_resolver=None):
    """Parse kernel JSON: explicit entries or a builtin reference."""
    if "builtin" in payload:
        name = payload["builtin"]
        params = payload.get("params", {})
        if name == "identity":
            return identity_kernel()
        if name == "uniform":
            return uniform_kernel(exact=exact)
        if name == "to-subset-nearest":
            if subset_resolver is None:
                raise ValueError("to-subset-nearest requires a subset resolver")
            subset = subset_resolver(params["subset"])
            return nearest_subset_kernel(subset, exact=exact)
        raise ValueError(f"unknown builtin kernel {name!r}")
    entries = []
    for entry in payload["entries"]:
        net, root, root2 = network_from_json(entry["class"])
        if root is None or root2 is None:
            raise ValueError("kernel entries require doubly-rooted networks")
        entries.append(
            (DoublyRootedNetwork(net, root, root2), parse_weight(entry["value"], exact))
        )
    return Kernel(entries, name="loaded")
