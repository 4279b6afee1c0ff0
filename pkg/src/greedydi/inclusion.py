"""The piecewise-affine differential inclusion and its analysis.

The drift is single-valued inside each greedy region and set-valued on the
boundaries, where it is the convex hull of the adjacent regions' affine
drifts.  This module evaluates that set-valued field, locates interior and
boundary equilibria, classifies the limiting structure, and integrates
trajectories with Filippov sliding-mode handling on two-region boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .config import DEFAULT_TOLERANCES, Tolerances
from .dynamics import PieceDynamics
from .errors import SingularDynamics, StepFailure, UnsupportedDimension
from .mdp import DeterministicPolicy
from .partition import Adjacency, PartitionDiagram

#: maximum number of interior/sliding legs in one integration
_MAX_LEGS = 100_000


@dataclass(frozen=True)
class DriftSet:
    """Value of the set-valued drift at one point.

    ``drifts`` holds one affine drift per incident region (indices in
    ``regions``); the field value is the convex hull of those vectors, a
    singleton in region interiors.
    """

    drifts: tuple[np.ndarray, ...]
    regions: tuple[int, ...]
    hull: bool

    @property
    def singleton(self) -> bool:
        return len(self.drifts) == 1


@dataclass(frozen=True)
class DiField:
    """A partition diagram together with the affine piece on every region."""

    diagram: PartitionDiagram
    pieces: dict

    def __post_init__(self):
        for region in self.diagram.regions:
            if region.policy not in self.pieces:
                raise ValueError(
                    f"no dynamics piece for region policy {region.policy.actions}"
                )

    @property
    def d(self) -> int:
        return self.diagram.features.d

    def piece_of(self, region_index: int) -> PieceDynamics:
        return self.pieces[self.diagram.regions[region_index].policy]

    def drift_of(self, region_index: int, theta: np.ndarray) -> np.ndarray:
        return self.piece_of(region_index).drift(theta)

    def incident_regions(
        self, theta: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES
    ) -> tuple[int, ...]:
        """Regions whose closure passes within the boundary-proximity
        threshold of theta (unit normals make margins signed distances)."""
        theta = np.asarray(theta, dtype=float)
        near = tol.boundary_proximity * (1.0 + float(np.linalg.norm(theta)))
        out = []
        for k, region in enumerate(self.diagram.regions):
            if region.closure_margin(theta) >= -near:
                out.append(k)
        if not out:
            # numerical slack put theta fractionally outside every closure;
            # fall back to the tie-break owner
            out = [self.diagram.region_of(theta)]
        return tuple(out)

    def evaluate(
        self, theta: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES
    ) -> DriftSet:
        """Set-valued drift: one vector per region incident to theta."""
        theta = np.asarray(theta, dtype=float)
        regions = self.incident_regions(theta, tol)
        drifts = tuple(self.drift_of(k, theta) for k in regions)
        return DriftSet(drifts=drifts, regions=regions, hull=len(drifts) > 1)

    def evaluate_scaled_limit(self, theta: np.ndarray) -> DriftSet:
        """Large-radius limit of the rescaled field: offsets dropped, only
        the -A theta terms of the incident regions remain."""
        theta = np.asarray(theta, dtype=float)
        regions = self.incident_regions(theta)
        drifts = tuple(-self.piece_of(k).A @ theta for k in regions)
        return DriftSet(drifts=drifts, regions=regions, hull=len(drifts) > 1)


@dataclass(frozen=True)
class Equilibrium:
    """A zero of the set-valued drift.

    For boundary equilibria ``lam`` is the convex weight on the first
    witnessed region's drift with lam*f1 + (1-lam)*f2 = 0.
    """

    location: np.ndarray
    kind: str  # "interior-landmark" | "boundary-equilibrium"
    stability: str  # "stable" | "unstable" | "sliding-attractor"
    regions: tuple[int, ...]
    lam: float | None
    residual: float


@dataclass(frozen=True)
class BoundarySegment:
    """A continuum of boundary equilibria along one adjacency."""

    regions: tuple[int, int]
    lam_range: tuple[float, float]
    endpoints: tuple[np.ndarray, np.ndarray]


def _mixture_theta(lam: float, p1: PieceDynamics, p2: PieceDynamics) -> np.ndarray:
    M = lam * p1.A + (1.0 - lam) * p2.A
    bb = lam * p1.b + (1.0 - lam) * p2.b
    return np.linalg.solve(M, bb)


def _require_dissipative(field: DiField) -> None:
    bad = [
        p.policy.actions for p in field.pieces.values() if p.pd_margin <= 0.0
    ]
    if bad:
        raise SingularDynamics(
            f"equilibrium search needs positive-definite pieces; failing: {bad}"
        )


def _boundary_probe(
    field: DiField, adj: Adjacency, theta: np.ndarray, tol: Tolerances
) -> tuple[float, float]:
    """One-sided normal drift components just off the boundary: the first
    value on region i's side, the second on region j's side."""
    w = adj.normal
    delta = tol.stability_probe * (1.0 + float(np.linalg.norm(theta)))
    side_i = float(w @ field.drift_of(adj.i, theta + delta * w))
    side_j = float(w @ field.drift_of(adj.j, theta - delta * w))
    return side_i, side_j


def _classify_boundary(side_i: float, side_j: float) -> str:
    if side_i < 0.0 and side_j > 0.0:
        return "sliding-attractor"
    if side_i > 0.0 and side_j < 0.0:
        return "unstable"
    return "unstable"  # mixed transversal case, reported as unstable


def _on_shared_boundary(
    field: DiField, adj: Adjacency, theta: np.ndarray, tol: Tolerances
) -> bool:
    near = tol.boundary_proximity * (1.0 + float(np.linalg.norm(theta)))
    return (
        field.diagram.regions[adj.i].closure_margin(theta) >= -near
        and field.diagram.regions[adj.j].closure_margin(theta) >= -near
    )


def _adjacency_roots(
    field: DiField, adj: Adjacency, tol: Tolerances, n_sub: int = 1000
) -> list[tuple[float, np.ndarray]]:
    """Roots of g(lam) = w . theta(lam) on [0, 1] by sign scan + bisection,
    theta(lam) being the zero of the lam-mixture of the two affine drifts."""
    p1 = field.piece_of(adj.i)
    p2 = field.piece_of(adj.j)
    w = adj.normal
    lams = np.linspace(0.0, 1.0, n_sub + 1)
    gs = np.empty(n_sub + 1)
    thetas = np.empty((n_sub + 1, field.d))
    for k, lam in enumerate(lams):
        thetas[k] = _mixture_theta(lam, p1, p2)
        gs[k] = float(w @ thetas[k])

    roots: list[tuple[float, np.ndarray]] = []
    scale = 1.0 + np.abs(gs).max()
    for k in (0, n_sub):
        if abs(gs[k]) <= tol.equilibrium_residual * scale:
            roots.append((float(lams[k]), thetas[k]))
    for k in range(n_sub):
        g0, g1 = gs[k], gs[k + 1]
        if g0 == 0.0 or g1 == 0.0 or np.sign(g0) == np.sign(g1):
            continue
        lo, hi, glo = float(lams[k]), float(lams[k + 1]), g0
        while hi - lo > tol.bisection:
            mid = 0.5 * (lo + hi)
            gm = float(w @ _mixture_theta(mid, p1, p2))
            if gm == 0.0:
                lo = hi = mid
                break
            if np.sign(gm) == np.sign(glo):
                lo = mid
            else:
                hi = mid
        lam = 0.5 * (lo + hi)
        roots.append((lam, _mixture_theta(lam, p1, p2)))
    return roots


def boundary_segments(
    field: DiField, tol: Tolerances = DEFAULT_TOLERANCES, n_sub: int = 1000
) -> list[BoundarySegment]:
    """Adjacencies on which g(lam) vanishes identically over a lam interval,
    i.e. a continuum of boundary equilibria."""
    if field.d != 2:
        raise UnsupportedDimension("segment scan requires d = 2")
    _require_dissipative(field)
    out = []
    for adj in field.diagram.adjacency:
        p1 = field.piece_of(adj.i)
        p2 = field.piece_of(adj.j)
        w = adj.normal
        lams = np.linspace(0.0, 1.0, n_sub + 1)
        flat = []
        for lam in lams:
            th = _mixture_theta(float(lam), p1, p2)
            scale = 1.0 + float(np.linalg.norm(th))
            flat.append(abs(float(w @ th)) <= tol.equilibrium_residual * scale)
        # longest run of consecutive near-zero values
        best_lo = best_hi = None
        run_lo = None
        for k, ok in enumerate(flat + [False]):
            if ok and run_lo is None:
                run_lo = k
            elif not ok and run_lo is not None:
                if best_lo is None or (k - run_lo) > (best_hi - best_lo):
                    best_lo, best_hi = run_lo, k
                run_lo = None
        if best_lo is not None and (best_hi - best_lo) >= 3:
            lam_lo = float(lams[best_lo])
            lam_hi = float(lams[best_hi - 1])
            out.append(
                BoundarySegment(
                    regions=(adj.i, adj.j),
                    lam_range=(lam_lo, lam_hi),
                    endpoints=(
                        _mixture_theta(lam_lo, p1, p2),
                        _mixture_theta(lam_hi, p1, p2),
                    ),
                )
            )
    return out


def find_equilibria(
    field: DiField, tol: Tolerances = DEFAULT_TOLERANCES
) -> list[Equilibrium]:
    """All isolated zeros of the set-valued drift (d = 2).

    Interior self-consistent landmarks are stable (their piece is positive
    definite).  Boundary equilibria are the on-boundary zeros of the
    two-piece drift mixtures; they are kept only when they fall on the
    actual shared part of the boundary and classified by the signs of the
    one-sided normal drifts next to them.
    """
    if field.d != 2:
        raise UnsupportedDimension(
            f"equilibrium search requires d = 2, got d = {field.d}"
        )
    _require_dissipative(field)

    out: list[Equilibrium] = []
    for k, region in enumerate(field.diagram.regions):
        piece = field.pieces[region.policy]
        if piece.landmark is None or not piece.landmark_interior:
            continue
        residual = float(np.linalg.norm(piece.drift(piece.landmark)))
        out.append(
            Equilibrium(
                location=piece.landmark,
                kind="interior-landmark",
                stability="stable",
                regions=(k,),
                lam=None,
                residual=residual,
            )
        )

    for adj in field.diagram.adjacency:
        p1 = field.piece_of(adj.i)
        p2 = field.piece_of(adj.j)
        for lam, theta in _adjacency_roots(field, adj, tol):
            if not _on_shared_boundary(field, adj, theta, tol):
                continue
            f1 = p1.drift(theta)
            f2 = p2.drift(theta)
            residual = float(np.linalg.norm(lam * f1 + (1.0 - lam) * f2))
            side_i, side_j = _boundary_probe(field, adj, theta, tol)
            dup = False
            for eq in out:
                near = 1e-6 * (1.0 + float(np.linalg.norm(theta)))
                if np.linalg.norm(eq.location - theta) <= near:
                    dup = True
                    break
            if dup:
                continue
            out.append(
                Equilibrium(
                    location=theta,
                    kind="boundary-equilibrium",
                    stability=_classify_boundary(side_i, side_j),
                    regions=(adj.i, adj.j),
                    lam=float(lam),
                    residual=residual,
                )
            )
    return out


def classify_structure(
    field: DiField, tol: Tolerances = DEFAULT_TOLERANCES
) -> str:
    """Taxonomy label of the limiting structure.

    multiple-attractors: at least two attracting equilibria.
    sliding-attractor: the only attracting equilibrium is a boundary
    sliding attractor.  unique-interior-attractor: the only attracting
    equilibrium is a stable interior landmark.  boundary-segment: a
    continuum of boundary equilibria exists.  Anything else: unclassified.
    """
    if boundary_segments(field, tol):
        return "boundary-segment"
    eqs = find_equilibria(field, tol)
    stable_interior = [
        e for e in eqs if e.kind == "interior-landmark" and e.stability == "stable"
    ]
    sliding = [e for e in eqs if e.stability == "sliding-attractor"]
    attractors = stable_interior + sliding
    if len(attractors) >= 2:
        return "multiple-attractors"
    if len(attractors) == 1 and sliding:
        return "sliding-attractor"
    if len(attractors) == 1 and stable_interior:
        return "unique-interior-attractor"
    return "unclassified"


@dataclass(frozen=True)
class DiTrajectory:
    """Time-stamped solution of the inclusion with per-sample mode labels."""

    times: np.ndarray
    states: np.ndarray
    modes: tuple[str, ...]
    labels: tuple[str, ...]
    events: tuple[tuple[float, str], ...]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


class _Recorder:
    def __init__(self):
        self.times: list[float] = []
        self.states: list[np.ndarray] = []
        self.modes: list[str] = []
        self.labels: list[str] = []
        self.events: list[tuple[float, str]] = []

    def add(self, t, theta, mode, label):
        self.times.append(float(t))
        self.states.append(np.array(theta, dtype=float))
        self.modes.append(mode)
        self.labels.append(label)

    def note(self, t, what):
        self.events.append((float(t), what))

    def done(self):
        return DiTrajectory(
            times=np.array(self.times),
            states=np.array(self.states),
            modes=tuple(self.modes),
            labels=tuple(self.labels),
            events=tuple(self.events),
        )


def _region_adjacencies(field: DiField, k: int) -> list[tuple[Adjacency, float]]:
    """Adjacencies touching region k, with the sign that orients each normal
    positive on region k's side."""
    out = []
    for adj in field.diagram.adjacency:
        if adj.i == k:
            out.append((adj, 1.0))
        elif adj.j == k:
            out.append((adj, -1.0))
    return out


def _sliding_allowed(field: DiField) -> bool:
    # planar cone partitions, or a single hyperplane boundary in any d
    return field.d == 2 or (
        len(field.diagram.regions) == 2 and len(field.diagram.adjacency) == 1
    )


def _corner_guarded(field: DiField) -> bool:
    return field.d == 2 and len(field.diagram.regions) > 2


def integrate_di(
    field: DiField,
    theta0: np.ndarray,
    t_end: float,
    tol: float = 1e-9,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> DiTrajectory:
    """Integrate the inclusion from theta0 for t_end units of flow time.

    Interior legs run an adaptive embedded Runge-Kutta pair with terminal
    events on the boundary functions w . theta.  At a two-region boundary
    the normal drift components decide between crossing and attractive
    sliding; sliding follows the unique tangential convex combination until
    an exit event.  Starting on a repulsive boundary (both drifts pointing
    away) selects the side with the larger outward normal drift, ties going
    to the lower region index, which picks one concrete solution out of the
    several the inclusion admits there.  Corners where three or more
    regions meet stop with StepFailure.
    """
    theta = np.array(theta0, dtype=float)
    if theta.shape != (field.d,):
        raise ValueError(f"theta0 must have shape ({field.d},), got {theta.shape}")
    if t_end < 0.0:
        raise ValueError("t_end must be nonnegative")
    if len(field.diagram.regions) > 1 and not field.diagram.adjacency:
        raise ValueError(
            "integration needs boundary data; enumerate regions exactly"
        )

    rec = _Recorder()
    incident = field.incident_regions(theta, tolerances)
    if len(incident) > 2:
        raise StepFailure(
            "starting point touches three or more regions",
            location=theta,
            time=0.0,
        )

    t = 0.0
    if len(incident) == 1:
        mode: tuple = ("interior", incident[0])
    else:
        adj = _find_adjacency(field, incident[0], incident[1], theta, 0.0)
        mode = _filippov_decide(field, adj, theta, 0.0, rec, tolerances)
    rec.add(t, theta, _mode_name(mode), _mode_label(field, mode))

    legs = 0
    while t < t_end:
        legs += 1
        if legs > _MAX_LEGS:
            raise StepFailure(
                "mode-switch budget exhausted", location=theta, time=t
            )
        if mode[0] == "interior":
            t, theta, mode = _interior_leg(
                field, mode[1], theta, t, t_end, tol, rec, tolerances
            )
        else:
            t, theta, mode = _sliding_leg(
                field, mode[1], theta, t, t_end, tol, rec, tolerances
            )
    return rec.done()


def _mode_name(mode) -> str:
    return mode[0]


def _mode_label(field: DiField, mode) -> str:
    if mode[0] == "interior":
        return str(mode[1])
    adj = mode[1]
    return f"{adj.i}|{adj.j}"


def _find_adjacency(
    field: DiField, a: int, b: int, theta: np.ndarray, t: float
) -> Adjacency:
    for adj in field.diagram.adjacency:
        if {adj.i, adj.j} == {a, b}:
            return adj
    raise StepFailure(
        f"no recorded boundary between regions {a} and {b}",
        location=theta,
        time=t,
    )


def _filippov_decide(
    field: DiField,
    adj: Adjacency,
    theta: np.ndarray,
    t: float,
    rec: _Recorder,
    tolerances: Tolerances,
) -> tuple:
    """Mode selection at a point of the (i, j) boundary."""
    w = adj.normal
    gi = float(w @ field.drift_of(adj.i, theta))
    gj = float(w @ field.drift_of(adj.j, theta))
    if gi < 0.0 < gj:
        rec.note(t, f"sliding on {adj.i}|{adj.j}")
        return ("sliding", adj)
    if gi >= 0.0 and gj <= 0.0:
        # repulsive (or degenerate) boundary: pick the stronger outflow side
        if gi > -gj or (gi == -gj and adj.i < adj.j):
            rec.note(t, f"leaving repulsive boundary into region {adj.i}")
            return ("interior", adj.i)
        rec.note(t, f"leaving repulsive boundary into region {adj.j}")
        return ("interior", adj.j)
    # transversal: both normal components on one side's sign
    target = adj.j if gi < 0.0 else adj.i
    rec.note(t, f"crossing into region {target}")
    return ("interior", target)


def _interior_leg(
    field: DiField,
    k: int,
    theta: np.ndarray,
    t: float,
    t_end: float,
    tol: float,
    rec: _Recorder,
    tolerances: Tolerances,
):
    piece = field.piece_of(k)
    touching = _region_adjacencies(field, k)

    def rhs(_t, y):
        return piece.drift(y)

    events = []
    for adj, sign in touching:
        w = sign * adj.normal

        def ev(_t, y, w=w):
            return float(w @ y)

        ev.terminal = True
        ev.direction = -1.0
        events.append(ev)

    sol = solve_ivp(
        rhs, (t, t_end), theta, method="RK45", rtol=tol, atol=tol, events=events
    )
    if not sol.success:
        raise StepFailure(
            f"integrator failed in region {k}: {sol.message}",
            location=theta,
            time=t,
        )
    n = sol.t.shape[0]
    hit = sol.status == 1
    last = n - 1 if not hit else n - 1  # event point is the final column
    for idx in range(1, last + (0 if hit else 1)):
        rec.add(sol.t[idx], sol.y[:, idx], "interior", str(k))
    if not hit:
        return t_end, sol.y[:, -1], ("interior", k)

    which = next(i for i, te in enumerate(sol.t_events) if te.size)
    t_e = float(sol.t_events[which][0])
    y_e = sol.y_events[which][0].copy()
    adj, sign = touching[which]
    w = adj.normal
    y_e = y_e - (w @ y_e) * w  # snap onto the boundary

    if _corner_guarded(field):
        sigma = float(adj.tangent @ y_e) if adj.tangent is not None else 1.0
        near = tolerances.boundary_proximity * (1.0 + float(np.linalg.norm(y_e)))
        if sigma <= near:
            raise StepFailure(
                "trajectory reached a corner of the partition",
                location=y_e,
                time=t_e,
            )

    mode = _filippov_decide(field, adj, y_e, t_e, rec, tolerances)
    if mode[0] == "interior":
        if mode[1] == k:
            # grazing contact; continue in the same region just off the wall
            y_e = y_e + tol * (1.0 + np.linalg.norm(y_e)) * sign * w
            rec.add(t_e, y_e, "interior", str(k))
            return t_e, y_e, mode
        rec.add(t_e, y_e, "crossing", f"{adj.i}|{adj.j}")
    else:
        if not _sliding_allowed(field):
            raise StepFailure(
                "attractive sliding boundary in unsupported dimension",
                location=y_e,
                time=t_e,
            )
        rec.add(t_e, y_e, "sliding", _mode_label(field, mode))
    return t_e, y_e, mode


def _sliding_leg(
    field: DiField,
    adj: Adjacency,
    theta: np.ndarray,
    t: float,
    t_end: float,
    tol: float,
    rec: _Recorder,
    tolerances: Tolerances,
):
    pi = field.piece_of(adj.i)
    pj = field.piece_of(adj.j)
    w = adj.normal

    def mix(y):
        fi = pi.drift(y)
        fj = pj.drift(y)
        gi = float(w @ fi)
        gj = float(w @ fj)
        lam = gj / (gj - gi)
        return lam * fi + (1.0 - lam) * fj

    def rhs(_t, y):
        return mix(y)

    def exit_i(_t, y):
        return float(w @ pi.drift(y))

    exit_i.terminal = True
    exit_i.direction = 1.0

    def exit_j(_t, y):
        return float(w @ pj.drift(y))

    exit_j.terminal = True
    exit_j.direction = -1.0

    events = [exit_i, exit_j]
    if _corner_guarded(field) and adj.tangent is not None:

        def corner(_t, y):
            return float(adj.tangent @ y)

        corner.terminal = True
        corner.direction = -1.0
        events.append(corner)

    sol = solve_ivp(
        rhs, (t, t_end), theta, method="RK45", rtol=tol, atol=tol, events=events
    )
    if not sol.success:
        raise StepFailure(
            f"integrator failed while sliding on {adj.i}|{adj.j}: {sol.message}",
            location=theta,
            time=t,
        )
    label = f"{adj.i}|{adj.j}"
    hit = sol.status == 1
    n = sol.t.shape[0]
    for idx in range(1, n - (1 if hit else 0)):
        y = sol.y[:, idx]
        y = y - (w @ y) * w  # stay on the boundary
        rec.add(sol.t[idx], y, "sliding", label)
    if not hit:
        y = sol.y[:, -1]
        y = y - (w @ y) * w
        rec.add(t_end, y, "sliding", label)
        return t_end, y, ("sliding", adj)

    which = next(i for i, te in enumerate(sol.t_events) if te.size)
    t_e = float(sol.t_events[which][0])
    y_e = sol.y_events[which][0].copy()
    y_e = y_e - (w @ y_e) * w
    if which == 2:
        raise StepFailure(
            "sliding reached a corner of the partition", location=y_e, time=t_e
        )
    target = adj.i if which == 0 else adj.j
    rec.note(t_e, f"sliding exit into region {target}")
    rec.add(t_e, y_e, "interior", str(target))
    return t_e, y_e, ("interior", target)
