"""Greedy-policy regions of parameter space.

Linear action values Q(s, a) = phi(s, a)^T theta induce, for each parameter
theta, a greedy policy (argmax per state, ties broken toward the smaller
action index).  The set of parameters sharing a greedy policy is a cone, and
the nonempty cones partition R^d.  This module computes that partition:
exactly in the plane (by sweeping the candidate boundary rays), and by dense
direction sampling in higher dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import NotAdjacent, UnsupportedDimension
from .mdp import DeterministicPolicy

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FeatureMap:
    """Feature matrix with |S|*|A| rows, one per (s, a) pair.

    Rows follow the s * |A| + a convention: all actions of state 0 first,
    then state 1, and so on.
    """

    phi: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        phi.flags.writeable = False
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 2 or phi.shape[0] != self.n_states * self.n_actions:
            raise ValueError(
                f"phi must have {self.n_states * self.n_actions} rows, got shape {phi.shape}"
            )

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    def row(self, state: int, action: int) -> np.ndarray:
        return self.phi[state * self.n_actions + action]

    def state_block(self, state: int) -> np.ndarray:
        """(|A|, d) block of feature rows for one state."""
        lo = state * self.n_actions
        return self.phi[lo : lo + self.n_actions]


def greedy_policy_of(theta: np.ndarray, features: FeatureMap) -> DeterministicPolicy:
    """Greedy policy at theta; exact comparisons, smallest action index wins ties."""
    theta = np.asarray(theta, dtype=float)
    values = (features.phi @ theta).reshape(features.n_states, features.n_actions)
    return DeterministicPolicy(tuple(int(a) for a in np.argmax(values, axis=1)))


def greedy_policies_of(thetas: np.ndarray, features: FeatureMap) -> np.ndarray:
    """Vectorized greedy policies for a (N, d) batch; returns (N, S) action indices."""
    values = (np.asarray(thetas, dtype=float) @ features.phi.T).reshape(
        -1, features.n_states, features.n_actions
    )
    return np.argmax(values, axis=2)


@dataclass(frozen=True)
class Halfspace:
    """One active inequality of a region: winner beats loser in `state`.

    ``normal`` is the unit-normalized difference of the winner's and loser's
    feature rows; strictly positive dot product means the comparison holds
    strictly.
    """

    state: int
    winner: int
    loser: int
    normal: np.ndarray


def _policy_halfspaces(policy: DeterministicPolicy, features: FeatureMap) -> tuple[Halfspace, ...]:
    out = []
    for s in range(features.n_states):
        win = policy.action(s)
        for a in range(features.n_actions):
            if a == win:
                continue
            w = features.row(s, win) - features.row(s, a)
            norm = np.linalg.norm(w)
            if norm == 0.0:
                # identical feature rows carry no geometry; the tie is
                # resolved globally by action index order
                continue
            w = w / norm
            w.flags.writeable = False
            out.append(Halfspace(state=s, winner=win, loser=a, normal=w))
    return tuple(out)


@dataclass(frozen=True)
class GreedyRegion:
    """The cone of parameters whose greedy policy is `policy`."""

    policy: DeterministicPolicy
    halfspaces: tuple[Halfspace, ...]
    empty: bool = False
    #: angular extent [lo, hi) of the cone, set by the exact planar method
    sector: tuple[float, float] | None = None

    def closure_margin(self, theta: np.ndarray) -> float:
        """Smallest halfspace dot product at theta.

        >= 0 means theta is in the region's closure; strictly positive means
        interior.  A region with no halfspaces covers the whole space.
        """
        if not self.halfspaces:
            return math.inf
        return min(float(h.normal @ theta) for h in self.halfspaces)

    def contains(self, theta: np.ndarray, features: FeatureMap) -> bool:
        """Exact membership under the tie-break rule (argmax, index order)."""
        return greedy_policy_of(theta, features) == self.policy


@dataclass(frozen=True)
class Adjacency:
    """A shared (d-1)-dimensional boundary between two regions.

    ``normal`` is a unit vector vanishing on the boundary and positive on
    region ``i``'s side.  ``witnesses`` lists the (state, winner-in-i,
    winner-in-j) comparisons that flip across it.  In the plane, ``tangent``
    is the unit direction of the shared boundary ray; with only two regions
    the boundary is the full line through the origin spanned by it.
    """

    i: int
    j: int
    normal: np.ndarray
    witnesses: tuple[tuple[int, int, int], ...]
    tangent: np.ndarray | None = None


@dataclass(frozen=True)
class PartitionDiagram:
    """All nonempty greedy regions of a feature map, plus their adjacency."""

    features: FeatureMap
    regions: tuple[GreedyRegion, ...]
    adjacency: tuple[Adjacency, ...]
    method: str
    exact: bool
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "_index",
            {r.policy: k for k, r in enumerate(self.regions)},
        )

    def region_of(self, theta: np.ndarray) -> int:
        """Index of the region owning theta under the tie-break rule.

        With the sampled method the realized-policy list may be incomplete,
        so an unknown policy raises KeyError.
        """
        pol = greedy_policy_of(theta, self.features)
        try:
            return self._index[pol]
        except KeyError:
            raise KeyError(
                f"policy {pol.actions} not among the enumerated regions "
                f"(method={self.method})"
            ) from None

    def policy_codes(self) -> tuple[int, ...]:
        return tuple(r.policy.code(self.features.n_actions) for r in self.regions)


def _candidate_ray_angles(features: FeatureMap) -> list[float]:
    """Angles of every candidate boundary ray: for each nonzero pairwise
    feature difference w, the two directions orthogonal to w."""
    angles = []
    for s in range(features.n_states):
        block = features.state_block(s)
        for a in range(features.n_actions):
            for b in range(a + 1, features.n_actions):
                w = block[a] - block[b]
                if np.linalg.norm(w) == 0.0:
                    continue
                base = math.atan2(w[1], w[0])
                for off in (0.5 * math.pi, -0.5 * math.pi):
                    angles.append((base + off) % TWO_PI)
    return angles


def _dedupe_angles(angles: list[float], atol: float = 1e-12) -> list[float]:
    if not angles:
        return []
    out: list[float] = []
    for a in sorted(angles):
        if not out or a - out[-1] > atol:
            out.append(a)
    # wrap-around duplicate: first and last may be the same ray mod 2*pi
    if len(out) > 1 and (out[0] + TWO_PI) - out[-1] <= atol:
        out.pop()
    return out


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def enumerate_regions_exact2d(features: FeatureMap) -> PartitionDiagram:
    """Exact enumeration of the planar greedy partition.

    Collects every candidate boundary ray, reads off the greedy policy at
    the angular midpoint of each sector between consecutive rays, and merges
    adjacent sectors with identical policies into maximal cones.  Policy
    comparison is exact; policies are discrete.
    """
    if features.d != 2:
        raise UnsupportedDimension(
            f"exact enumeration requires d = 2, got d = {features.d}"
        )
    rays = _dedupe_angles(_candidate_ray_angles(features))

    if not rays:
        policy = greedy_policy_of(np.array([1.0, 0.0]), features)
        region = GreedyRegion(
            policy=policy, halfspaces=_policy_halfspaces(policy, features)
        )
        return PartitionDiagram(
            features=features,
            regions=(region,),
            adjacency=(),
            method="exact2d",
            exact=True,
        )

    # sectors between consecutive rays (circular), labelled by midpoint policy
    sectors: list[tuple[float, float, DeterministicPolicy]] = []
    for k, lo in enumerate(rays):
        hi = rays[(k + 1) % len(rays)]
        if k == len(rays) - 1:
            hi += TWO_PI
        mid = 0.5 * (lo + hi)
        sectors.append((lo, hi, greedy_policy_of(_unit(mid), features)))

    # merge circularly: rotate so a policy change sits at the seam
    n = len(sectors)
    start = 0
    for k in range(n):
        if sectors[k][2] != sectors[(k - 1) % n][2]:
            start = k
            break
    else:
        # every sector realizes the same policy: single full-plane region
        policy = sectors[0][2]
        region = GreedyRegion(
            policy=policy, halfspaces=_policy_halfspaces(policy, features)
        )
        return PartitionDiagram(
            features=features,
            regions=(region,),
            adjacency=(),
            method="exact2d",
            exact=True,
        )

    ordered = sectors[start:] + sectors[:start]
    merged: list[tuple[float, float, DeterministicPolicy]] = []
    for lo, hi, pol in ordered:
        if merged and merged[-1][2] == pol:
            merged[-1] = (merged[-1][0], merged[-1][1] + (hi - lo), pol)
        else:
            merged.append((lo, hi, pol))

    regions = tuple(
        GreedyRegion(
            policy=pol,
            halfspaces=_policy_halfspaces(pol, features),
            sector=(lo % TWO_PI, ((lo % TWO_PI) + (hi - lo))),
        )
        for lo, hi, pol in merged
    )

    adjacency = _sector_adjacency(regions, features)
    return PartitionDiagram(
        features=features,
        regions=regions,
        adjacency=adjacency,
        method="exact2d",
        exact=True,
    )


def _flip_witnesses(
    pol_i: DeterministicPolicy, pol_j: DeterministicPolicy, features: FeatureMap
) -> tuple[tuple[int, int, int], ...]:
    return tuple(
        (s, pol_i.action(s), pol_j.action(s))
        for s in range(features.n_states)
        if pol_i.action(s) != pol_j.action(s)
    )


def _pair_normal(
    pol_i: DeterministicPolicy, pol_j: DeterministicPolicy, features: FeatureMap
) -> tuple[np.ndarray, tuple[tuple[int, int, int], ...]]:
    witnesses = _flip_witnesses(pol_i, pol_j, features)
    if not witnesses:
        raise NotAdjacent("regions have identical policies")
    s, ai, aj = witnesses[0]
    w = features.row(s, ai) - features.row(s, aj)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise NotAdjacent("flipping comparison is degenerate")
    w = w / norm
    w.flags.writeable = False
    return w, witnesses


def _sector_adjacency(
    regions: tuple[GreedyRegion, ...], features: FeatureMap
) -> tuple[Adjacency, ...]:
    n = len(regions)
    if n < 2:
        return ()
    seen: set[tuple[int, int]] = set()
    out = []
    for k in range(n):
        i, j = k, (k + 1) % n
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        w, witnesses = _pair_normal(regions[i].policy, regions[j].policy, features)
        # the shared ray sits at region i's sector end (== region j's start)
        tangent = None
        if regions[i].sector is not None:
            tangent = _unit(regions[i].sector[1] % TWO_PI)
            tangent.flags.writeable = False
        out.append(
            Adjacency(i=i, j=j, normal=w, witnesses=witnesses, tangent=tangent)
        )
    return tuple(out)


def sphere_directions(n_dirs: int, d: int, seed: int) -> np.ndarray:
    """Deterministic quasi-uniform unit directions (seeded Gaussian, normalized)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    dirs = rng.standard_normal((n_dirs, d))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return dirs / norms


def enumerate_regions_sampled(
    features: FeatureMap, n_dirs: int, seed: int = 0
) -> PartitionDiagram:
    """Region census by evaluating the greedy policy on sampled unit directions.

    Works in any dimension but is only a lower bound on the realized policy
    set (thin cones can be missed), so the diagram is flagged approximate and
    carries no adjacency.
    """
    dirs = sphere_directions(n_dirs, features.d, seed)
    assignments = greedy_policies_of(dirs, features)
    policies = sorted(
        {tuple(int(a) for a in row) for row in assignments}
    )
    regions = tuple(
        GreedyRegion(
            policy=DeterministicPolicy(p),
            halfspaces=_policy_halfspaces(DeterministicPolicy(p), features),
        )
        for p in policies
    )
    return PartitionDiagram(
        features=features,
        regions=regions,
        adjacency=(),
        method=f"sampled({n_dirs})",
        exact=False,
    )


def enumerate_regions(
    features: FeatureMap,
    method: str = "exact2d",
    n_dirs: int = 100_000,
    seed: int = 0,
) -> PartitionDiagram:
    """Dispatch to the exact planar sweep or to direction sampling."""
    if method == "exact2d":
        return enumerate_regions_exact2d(features)
    if method == "sampled":
        return enumerate_regions_sampled(features, n_dirs=n_dirs, seed=seed)
    raise ValueError(f"unknown enumeration method {method!r}")


def boundary_between(
    diagram: PartitionDiagram, i: int, j: int
) -> tuple[np.ndarray, tuple[tuple[int, int, int], ...]]:
    """Unit normal of the boundary shared by regions i and j.

    Oriented so the dot product is positive on region i's side.  Raises
    :class:`NotAdjacent` when the diagram does not list the pair (including
    i == j).
    """
    for adj in diagram.adjacency:
        if (adj.i, adj.j) == (i, j):
            return adj.normal, adj.witnesses
        if (adj.i, adj.j) == (j, i):
            w = -adj.normal
            w.flags.writeable = False
            return w, tuple((s, aj, ai) for s, ai, aj in adj.witnesses)
    raise NotAdjacent(f"regions {i} and {j} are not adjacent in the diagram")


def partition_raster(
    diagram: PartitionDiagram,
    xmin: float,
    xmax: float,
    ymin: float,
    ymax: float,
    grid_n: int,
) -> list[tuple[float, float, int]]:
    """(x, y, policy_id) rows over a regular grid, for CSV export (d = 2)."""
    if diagram.features.d != 2:
        raise UnsupportedDimension("raster export requires d = 2")
    xs = np.linspace(xmin, xmax, grid_n)
    ys = np.linspace(ymin, ymax, grid_n)
    grid = np.array([(x, y) for y in ys for x in xs])
    assignments = greedy_policies_of(grid, diagram.features)
    n_actions = diagram.features.n_actions
    rows = []
    for (x, y), acts in zip(grid, assignments):
        code = DeterministicPolicy(tuple(int(a) for a in acts)).code(n_actions)
        rows.append((float(x), float(y), code))
    return rows
