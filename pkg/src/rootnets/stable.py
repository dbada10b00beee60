"""Stable transport on a single finite network, and the kernels built on it.

The algorithm alternates application and rejection stages.  Every vertex
plays both roles: as a *site* it applies to the closest centers with enough
remaining capacity to absorb its supply w1; as a *center* it rejects the
farthest applications exceeding its capacity w2.  Applications and rejections
are monotone in the stage, so the limit transport exists; with the boundary
fractions solved exactly per stage the iteration stabilizes quickly on finite
networks.

The resulting transport is stable: no site and center mutually desire more
exchange.  When the per-class conditional intensities of w1 and w2 agree over
a unimodular input, the limit balances exactly, which yields constructive
kernels for conditioning, extra-head re-rooting and extension
unimodularization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from ._num import msum
from .distr import (
    Distribution,
    VertexFunction,
    cond_expectation,
    is_unimodular,
    validate_vertex_function,
    vf_const,
    vf_mark_indicator,
    vf_scale,
)
from .errors import (
    BalanceFailedError,
    IntensityMismatchError,
    MarkCountMismatchError,
    NonConstantIntensityError,
    NotUnimodularError,
)
from .netcore import DoublyRootedNetwork
from .transport import Kernel

__all__ = [
    "StableState",
    "StableResult",
    "application_step",
    "rejection_step",
    "stable_transport",
    "check_stability",
    "balancing_kernel",
    "extra_head_kernel",
    "conditioning_kernel",
    "stable_result_to_json",
]


def _weight_vector(net, w):
    """Evaluate a weight spec (VertexFunction, mapping, or callable) per vertex."""
    if isinstance(w, VertexFunction):
        values = [w(net, v) for v in net.vertex_ids]
    elif isinstance(w, dict):
        values = [w[v] for v in net.vertex_ids]
    else:
        values = [w(net, v) for v in net.vertex_ids]
    out = []
    for v, value in zip(net.vertex_ids, values):
        if value < 0:
            raise ValueError(f"weight at vertex {v} is negative")
        out.append(Fraction(value) if isinstance(value, int) else value)
    return out


@dataclass
class StableState:
    """Mutable per-stage state of the transport construction.

    ``applied`` and ``rejected`` are site x center matrices; ``app_radius``
    and ``rej_radius`` hold the per-site application radii and per-center
    rejection radii of the latest stage.  Applications, rejections and
    application radii are nondecreasing across stages; rejection radii are
    nonincreasing.
    """

    network: object
    w1: list
    w2: list
    applied: list
    rejected: list
    app_radius: list = field(default_factory=list)
    rej_radius: list = field(default_factory=list)
    stage: int = 0
    last_change: float = 0.0

    @classmethod
    def initial(cls, net, w1, w2):
        n = len(net)
        return cls(
            network=net,
            w1=_weight_vector(net, w1),
            w2=_weight_vector(net, w2),
            applied=[[0] * n for _ in range(n)],
            rejected=[[0] * n for _ in range(n)],
            app_radius=[0] * n,
            rej_radius=[0] * n,
        )

    def transport(self):
        n = len(self.network)
        return [
            [self.applied[i][j] - self.rejected[i][j] for j in range(n)]
            for i in range(n)
        ]


def _distance_buckets(net):
    """buckets[i] = list of (distance, [vertex indices]) sorted by distance."""
    ids = net.vertex_ids
    index = {v: i for i, v in enumerate(ids)}
    buckets = []
    for v in ids:
        dist = net.distances_from(v)
        by_d = {}
        for u, d in dist.items():
            by_d.setdefault(d, []).append(index[u])
        buckets.append(sorted(by_d.items()))
    return buckets


def application_step(state):
    """One application pass: each site applies to the closest open capacity.

    The application radius is the least radius whose ball holds enough
    unrejected capacity to absorb the site's supply; inside the radius the
    site applies for everything, on the boundary ring a fraction chosen so
    the net application equals the supply.  A site whose supply exceeds the
    whole network's capacity applies fully everywhere and stays unexhausted.
    """
    net = state.network
    n = len(net)
    buckets = _distance_buckets(net)
    delta = 0
    for i in range(n):
        rej_row = state.rejected[i]
        supply = state.w1[i]
        cum = 0
        radius = None
        for d, members in buckets[i]:
            cum += msum(state.w2[j] - rej_row[j] for j in members)
            if cum >= supply:
                radius = d
                break
        new_row = [0] * n
        if radius is None:
            # unreachable demand: apply fully everywhere, site stays unexhausted
            radius = net.diameter
            for d, members in buckets[i]:
                for j in members:
                    new_row[j] = state.w2[j]
        else:
            inner = 0
            ring = 0
            for d, members in buckets[i]:
                if d > radius:
                    break
                for j in members:
                    avail = state.w2[j] - rej_row[j]
                    if d < radius:
                        inner += avail
                        new_row[j] = state.w2[j]
                    else:
                        ring += avail
            if ring > 0:
                c = 1 - (supply - inner) / ring
                c = min(max(c, 0), 1)
            else:
                c = 1  # nothing new to apply on a zero-capacity ring
            for d, members in buckets[i]:
                if d > radius:
                    break
                if d == radius:
                    for j in members:
                        new_row[j] = c * rej_row[j] + (1 - c) * state.w2[j]
        for j in range(n):
            step = abs(new_row[j] - state.applied[i][j])
            if step > delta:
                delta = step
        state.applied[i] = new_row
        state.app_radius[i] = radius
    state.last_change = max(state.last_change, float(delta))
    return state


def rejection_step(state):
    """One rejection pass: each center keeps the closest applications.

    The rejection radius is the least radius whose ball already applies at
    least the center's capacity; farther applications are rejected outright,
    boundary-ring applications partially so the kept total equals capacity.
    An under-applied center rejects nothing and stays unsated.
    """
    net = state.network
    n = len(net)
    buckets = _distance_buckets(net)
    delta = 0
    for j in range(n):
        capacity = state.w2[j]
        cum = 0
        radius = None
        for d, members in buckets[j]:
            cum += msum(state.applied[i][j] for i in members)
            if cum >= capacity:
                radius = d
                break
        new_col = [0] * n
        if radius is None:
            radius = net.diameter  # unsated: keep everything
        else:
            inner = 0
            ring = 0
            for d, members in buckets[j]:
                for i in members:
                    if d < radius:
                        inner += state.applied[i][j]
                    elif d == radius:
                        ring += state.applied[i][j]
                    else:
                        new_col[i] = state.applied[i][j]
            if ring > 0:
                c = 1 - (capacity - inner) / ring
                c = min(max(c, 0), 1)
            else:
                c = 1
            for d, members in buckets[j]:
                if d == radius:
                    for i in members:
                        new_col[i] = c * state.applied[i][j]
        for i in range(n):
            step = abs(new_col[i] - state.rejected[i][j])
            if step > delta:
                delta = step
            state.rejected[i][j] = new_col[i]
        state.rej_radius[j] = radius
    state.last_change = max(state.last_change, float(delta))
    return state


@dataclass(frozen=True)
class StableResult:
    """Converged (or capped) output of the stable transport iteration.

    ``demoted`` is set when exact-rational state had to be downgraded to
    floats because the iteration approaches an irrational fixed point and
    exact denominators were growing without bound.
    """

    network: object
    vertex_ids: tuple
    transport: tuple
    converged: bool
    stages: int
    sup_change: float
    exhausted: tuple
    sated: tuple
    app_radius: tuple
    rej_radius: tuple
    trace: tuple
    demoted: bool = False

    def value(self, u, v):
        index = {x: i for i, x in enumerate(self.vertex_ids)}
        return self.transport[index[u]][index[v]]

    def out_masses(self):
        return tuple(msum(row) for row in self.transport)

    def in_masses(self):
        n = len(self.vertex_ids)
        return tuple(msum(self.transport[i][j] for i in range(n)) for j in range(n))


_EXACT_BIT_GUARD = 256
_LIMIT_STAGES = 4096


def _max_denominator_bits(state):
    bits = 0
    for matrix in (state.applied, state.rejected):
        for row in matrix:
            for value in row:
                if isinstance(value, Fraction):
                    b = value.denominator.bit_length()
                    if b > bits:
                        bits = b
    return bits


def _demote_to_float(state):
    state.w1 = [float(x) for x in state.w1]
    state.w2 = [float(x) for x in state.w2]
    state.applied = [[float(x) for x in row] for row in state.applied]
    state.rejected = [[float(x) for x in row] for row in state.rejected]


def stable_transport(net, w1, w2, max_stages=None, tol=1e-12, flag_tol=1e-9,
                     record_trace=False):
    """Run application/rejection stages to their limit on one network.

    Stops when the largest entry change over a full stage drops below ``tol``
    or after ``max_stages`` stages (default 4*(diameter+2)); a capped run is
    returned with ``converged=False`` and the last sup-change.  The transport
    satisfies T+ <= w1 and T- <= w2 entrywise at every stage.

    Exact (Fraction) weights are iterated exactly while denominators stay
    desk-sized; iterations approaching an irrational fixed point are demoted
    to float arithmetic (flagged on the result).
    """
    if max_stages is None:
        max_stages = 4 * (net.diameter + 2)
    state = StableState.initial(net, w1, w2)
    exact = any(isinstance(x, Fraction) for x in state.w1 + state.w2)
    demoted = False
    trace = []
    converged = False
    for stage in range(1, max_stages + 1):
        state.stage = stage
        state.last_change = 0.0
        application_step(state)
        rejection_step(state)
        if record_trace:
            trace.append(
                {
                    "stage": stage,
                    "a": list(state.app_radius),
                    "r": list(state.rej_radius),
                    "sup_change": state.last_change,
                }
            )
        if state.last_change < tol:
            converged = True
            break
        if exact and not demoted and _max_denominator_bits(state) > _EXACT_BIT_GUARD:
            _demote_to_float(state)
            demoted = True
    transport = state.transport()
    ids = net.vertex_ids
    outs = [msum(row) for row in transport]
    ins = [msum(transport[i][j] for i in range(len(ids))) for j in range(len(ids))]
    exhausted = tuple(
        v for i, v in enumerate(ids) if abs(outs[i] - state.w1[i]) <= flag_tol
    )
    sated = tuple(
        v for j, v in enumerate(ids) if abs(ins[j] - state.w2[j]) <= flag_tol
    )
    return StableResult(
        network=net,
        vertex_ids=ids,
        transport=tuple(tuple(row) for row in transport),
        converged=converged,
        stages=state.stage,
        sup_change=state.last_change,
        exhausted=exhausted,
        sated=sated,
        app_radius=tuple(state.app_radius),
        rej_radius=tuple(state.rej_radius),
        trace=tuple(trace),
        demoted=demoted,
    )


def check_stability(net, transport, w1, w2, tol=1e-12):
    """List all mutually-desiring (site, center) pairs; empty iff stable.

    A site desires a center if the pair transport is below the center's
    capacity and the site either is unexhausted or sends mass to some
    strictly farther center.  A center desires a site if the pair transport
    is below the center's capacity and the center either is unsated or
    receives mass from some strictly farther site.
    """
    ids = net.vertex_ids
    index = {v: i for i, v in enumerate(ids)}
    w1v = _weight_vector(net, w1)
    w2v = _weight_vector(net, w2)
    if hasattr(transport, "transport"):
        matrix = transport.transport
    else:
        matrix = transport
    n = len(ids)
    outs = [msum(matrix[i][j] for j in range(n)) for i in range(n)]
    ins = [msum(matrix[i][j] for i in range(n)) for j in range(n)]
    pairs = []
    for x in ids:
        i = index[x]
        dist_x = net.distances_from(x)
        for xi in ids:
            j = index[xi]
            if matrix[i][j] >= w2v[j] - tol:
                continue
            d = dist_x[xi]
            site_wants = outs[i] < w1v[i] - tol or any(
                matrix[i][k] > tol and dist_x[ids[k]] > d for k in range(n)
            )
            if not site_wants:
                continue
            dist_xi = net.distances_from(xi)
            center_wants = ins[j] < w2v[j] - tol or any(
                matrix[k][j] > tol and dist_xi[ids[k]] > d for k in range(n)
            )
            if center_wants:
                pairs.append((x, xi))
    return pairs


def _ensure_unimodular(mu, tol):
    report = is_unimodular(mu, tol=max(tol, 1e-12))
    if not report.passed:
        raise NotUnimodularError(
            f"input distribution violates mass transport "
            f"(discrepancy {float(report.max_discrepancy)!r})"
        )


def balancing_kernel(mu, w1, w2, tol=1e-9):
    """Class-keyed balancing kernel from per-network stable transports.

    Requires a unimodular input whose per-class conditional intensities of
    w1 and w2 agree (this is also necessary for a balancing kernel to
    exist).  Each supported network is solved independently; the converged
    transport must balance exactly, which is asserted.
    """
    validate_vertex_function(w1, mu)
    validate_vertex_function(w2, mu)
    _ensure_unimodular(mu, tol)
    e1 = cond_expectation(mu, w1)
    e2 = cond_expectation(mu, w2)
    for ukey, value in e1.items():
        if abs(value - e2[ukey]) > tol:
            raise IntensityMismatchError(
                f"conditional intensities differ on a class: "
                f"{float(value)!r} vs {float(e2[ukey])!r}"
            )
    kernel = Kernel(name=f"balancing({w1.name},{w2.name})")
    for net in mu.support_networks():
        # the kernel needs the limit transport, so iterate well past the
        # default stage cap; typical instances converge in a handful of stages
        result = stable_transport(net, w1, w2, max_stages=_LIMIT_STAGES)
        ids = result.vertex_ids
        outs = result.out_masses()
        ins = result.in_masses()
        for i, v in enumerate(ids):
            if abs(outs[i] - w1(net, v)) > tol or abs(ins[i] - w2(net, v)) > tol:
                raise BalanceFailedError(
                    f"stable transport did not balance at vertex {v} although "
                    "intensities match"
                )
        for i, u in enumerate(ids):
            for j, v in enumerate(ids):
                value = result.transport[i][j]
                if value > 0:
                    kernel.add_entry(DoublyRootedNetwork(net, u, v), value)
    return kernel


def extra_head_kernel(mu, p, tol=1e-9):
    """Re-rooting kernel forcing the root mark to 1 on {0,1}-marked networks.

    Every supported atom must carry exactly p*|V| vertices marked "1" (the
    exact-count surrogate of density-p marking, which is what makes the
    construction possible at finite size).  The kernel balances constant
    supply 1 against capacity 1/p on the 1-marked vertices; its root-change
    maps the input onto the law conditioned on a 1-marked root.
    """
    if not 0 < p <= 1:
        raise ValueError("mark density must lie in (0, 1]")
    for _, rooted in mu.atoms:
        net = rooted.network
        ones = sum(1 for v in net.vertex_ids if net.mark(v) == "1")
        expected = p * len(net)
        if abs(expected - round(expected)) > tol or ones != round(expected):
            raise MarkCountMismatchError(
                f"atom has {ones} ones but p*|V| = {float(expected)!r}"
            )
    scale = 1 / p if isinstance(p, Fraction) else 1.0 / p
    w2 = vf_scale(vf_mark_indicator("1"), scale)
    return balancing_kernel(mu, vf_const(1), w2, tol=tol)


def conditioning_kernel(mu, subset, tol=1e-9):
    """Re-rooting kernel realizing conditioning on a covariant subset.

    Requires the subset's conditional intensity to be the same constant on
    every unrooted class; the kernel balances supply 1 against capacity
    (1/intensity) on the subset, and its root-change equals the conditioned
    law.
    """
    validate_vertex_function(subset, mu)
    intensities = cond_expectation(mu, subset)
    values = sorted(intensities.values())
    if not values or values[0] <= 0:
        raise NonConstantIntensityError("subset has zero mass on some class")
    if abs(values[-1] - values[0]) > tol:
        raise NonConstantIntensityError(
            f"subset intensity varies across classes: "
            f"{float(values[0])!r} vs {float(values[-1])!r}"
        )
    prob = msum(
        weight * (1 if subset(rooted.network, rooted.root) > 0 else 0)
        for weight, rooted in mu.atoms
    )
    scale = 1 / prob if isinstance(prob, Fraction) else 1.0 / prob
    w2 = vf_scale(subset, scale)
    return balancing_kernel(mu, vf_const(1), w2, tol=tol)


def stable_result_to_json(result):
    return {
        "vertices": list(result.vertex_ids),
        "T": [[float(x) for x in row] for row in result.transport],
        "stages": result.stages,
        "converged": result.converged,
        "sup_change": result.sup_change,
        "exhausted": list(result.exhausted),
        "sated": list(result.sated),
        "trace": [
            {
                "stage": entry["stage"],
                "a": entry["a"],
                "r": entry["r"],
                "sup_change": entry["sup_change"],
            }
            for entry in result.trace
        ],
    }
