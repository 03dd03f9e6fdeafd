"""Expanding boundary codings and their symbolic dynamics.

For a regular-polygon surface group: an interval partition of the unit
circle on which the side-pairing maps act as an expanding Markov map.
For a Schottky group: the finite-type shift on circle symbols with
no-backtracking transitions. On top of either: transition matrices,
cylinder refinement, periodic orbits, the orbit-to-group-element
correspondence, and the expansion potential (minus log of the branch
derivative) with its periodic Birkhoff sums.
"""

import json

import numpy as np

from . import group_models as gm
from . import mobius
from .mobius import MoebiusMap

MARKOV_TOL = 1e-9           # image endpoints must hit cell endpoints this well
CONTAINMENT_TOL = 1e-10     # cell-in-interval containment slack
ENDPOINT_MERGE_TOL = 1e-10  # endpoint dedup during construction
ABUT_CONTACT_TOL = 1e-7     # geodesic-touches-polygon slack
BAD_POINT_TOL = 1e-12       # distance to the endpoint set marking bad points
FIXED_POINT_RESIDUAL = 1e-8
CHEB_SAMPLES = 32
APERIODICITY_CAP = 16
TWO_PI = 2 * np.pi


class BranchAssignmentFailure(RuntimeError):
    """A partition cell fits inside no side interval."""


class MarkovViolation(RuntimeError):
    """An image endpoint lands in a cell interior beyond tolerance."""


class EmptyCylinder(ValueError):
    """The requested symbol prefix is not admissible."""


class NonLoxodromicCycle(RuntimeError):
    """A periodic cell cycle composed to a non-loxodromic element."""


def chebyshev_fractions(count):
    """count Chebyshev-positioned interior fractions of (0, 1)."""
    i = np.arange(count)
    return 0.5 * (1 - np.cos(np.pi * (2 * i + 1) / (2 * count)))


def _wrap(x):
    return (x + np.pi) % TWO_PI - np.pi


def _mobius_apply(M, z):
    # supports a single matrix or a batch on the leading axes
    return ((M[..., 0, 0] * z + M[..., 0, 1])
            / (M[..., 1, 0] * z + M[..., 1, 1]))


class IntervalPartition:
    """Half-open circle arcs [start, end) with a branch map on each.

    branch[k] is the side index whose pairing element gamma acts as the
    expanding map on cell k; the arcs tile the circle exactly. Refined
    partitions additionally carry words: cell -> its base-cell itinerary.
    """

    def __init__(self, pres, rho, starts, ends, branch, abutting_count,
                 depth=1, words=None):
        self.presentation = pres
        self.representation = rho
        self.starts = starts
        self.ends = ends
        self.branch = branch
        self.abutting_count = abutting_count
        self.depth = depth
        self.words = words if words is not None else \
            np.arange(len(starts), dtype=np.int64)[:, None]
        self.n_cells = len(starts)
        n = pres.n_sides
        self.side_matrices = np.stack(
            [rho.generator(int(pres.side_symbols[j])).m for j in range(n)])
        self.side_inverses = np.stack(
            [np.linalg.inv(m) for m in self.side_matrices])

    @property
    def Q(self):
        return self.starts

    def widths(self):
        return self.ends - self.starts

    def cell_of(self, theta):
        """Index of the cell containing the angle (half-open convention)."""
        t = theta % TWO_PI
        if t < self.starts[0]:
            t += TWO_PI
        i = int(np.searchsorted(self.starts, t, side="right")) - 1
        return i % self.n_cells

    def branch_map(self, k):
        return MoebiusMap(self.side_matrices[self.branch[k]])

    def apply_branch(self, k, z):
        return _mobius_apply(self.side_matrices[self.branch[k]], z)

    def sample_angles(self, count=CHEB_SAMPLES):
        """(n_cells, count) interior Chebyshev sample angles."""
        fr = chebyshev_fractions(count)
        return self.starts[:, None] + fr[None, :] * self.widths()[:, None]

    def image_endpoint_angles(self, k):
        """Angles of the image arc endpoints of cell k (end unwrapped)."""
        M = self.side_matrices[self.branch[k]]
        a = np.angle(_mobius_apply(M, np.exp(1j * self.starts[k]))) % TWO_PI
        b = np.angle(_mobius_apply(M, np.exp(1j * self.ends[k]))) % TWO_PI
        if b <= a:
            b += TWO_PI
        return a, b


class SchottkyCoding:
    """Shift coding of a Schottky limit set: one symbol per circle.

    Symbol 2i+1 carries the points whose leading letter is generator i
    (they lie in the interior of circle 2i+1); symbol 2i carries leading
    letter inverse-of-generator-i. The branch map on a symbol is the
    inverse of its leading letter, the expanding shift on that cell.
    """

    def __init__(self, group):
        self.group = group
        k = group.rank
        self.n_cells = 2 * k
        self.circle_of_symbol = []
        self.branch_elements = []
        for i, (src, dst) in enumerate(group.pairs):
            gen = group.rho.maps[i]
            inv = mobius.inverse(gen)
            # even symbol: leading letter gen^{-1}, lives on the src circle
            self.circle_of_symbol += [group.circles[src], group.circles[dst]]
            self.branch_elements += [gen, inv]
        self.flip = np.arange(self.n_cells) ^ 1

    def transition(self):
        n = self.n_cells
        A = np.ones((n, n), dtype=np.uint8)
        A[np.arange(n), self.flip] = 0
        return A

    def sample_points(self, count=CHEB_SAMPLES):
        """(n_cells, count) sample points on the symbol circles."""
        fr = chebyshev_fractions(count)
        out = np.empty((self.n_cells, count), dtype=complex)
        for s, (c, r) in enumerate(self.circle_of_symbol):
            out[s] = c + r * np.exp(1j * TWO_PI * fr)
        return out


class TransitionMatrix:
    """0/1 transition matrix with an aperiodicity witness when found."""

    def __init__(self, A, aperiodicity_witness=None, markov_residual=None):
        self.A = A
        self.aperiodicity_witness = aperiodicity_witness
        self.markov_residual = markov_residual

    @property
    def n(self):
        return self.A.shape[0]


class SymbolicOrbit:
    """Periodic cell sequence up to cyclic rotation."""

    __slots__ = ("cells", "period", "primitive", "primitive_period")

    def __init__(self, cells, primitive_period):
        self.cells = tuple(int(c) for c in cells)
        self.period = len(self.cells)
        self.primitive_period = int(primitive_period)
        self.primitive = self.primitive_period == self.period

    def __repr__(self):
        return f"SymbolicOrbit({list(self.cells)}, primitive={self.primitive})"


# ---------------------------------------------------------------------------
# partition construction


def _abutting_translates(pres, rho):
    """Group elements whose polygon tile touches the base tile.

    Breadth-first search over side-pairing products, displacement-bounded,
    keeping elements that carry some vertex onto a vertex of the base
    polygon (tiles of a polygon tessellation meet along vertices).
    """
    n = pres.n_sides
    side = [rho.generator(int(pres.side_symbols[j])).m for j in range(n)]
    verts = pres.vertices
    rho_v = 2 * np.arctanh(pres.vertex_radius)
    cutoff = 2 * rho_v + 0.8

    def disp(M):
        return 2 * np.arctanh(min(abs(M[0, 1]) / abs(M[0, 0]), 1 - 1e-16))

    def key(M):
        flat = M.flatten()
        s = 1.0
        for z in flat:
            if abs(z) > 1e-9:
                if z.real < -1e-9 or (abs(z.real) <= 1e-9 and z.imag < 0):
                    s = -1.0
                break
        Mc = s * M
        return tuple(np.round([Mc[0, 0].real, Mc[0, 0].imag,
                               Mc[0, 1].real, Mc[0, 1].imag], 9))

    seen = {key(np.eye(2, dtype=complex))}
    frontier = [np.eye(2, dtype=complex)]
    cands = []
    while frontier:
        new = []
        for M in frontier:
            for G in side:
                Mn = M @ G
                if disp(Mn) > cutoff:
                    continue
                k = key(Mn)
                if k in seen:
                    continue
                seen.add(k)
                new.append(Mn)
        frontier = new
        cands.extend(new)
    out = []
    for M in cands:
        im = _mobius_apply(M, verts)
        if np.abs(im[:, None] - verts[None, :]).min() < 1e-9:
            out.append(M)
    return out


def build_bowen_series_partition(pres, rho):
    """Interval partition of the circle from abutting-tile side images.

    Endpoints are the images of all side-interval endpoints under the
    translates whose tiles touch the base polygon; each resulting arc is
    assigned the smallest side index whose interval contains it.
    """
    if gm.relator_residual(rho, pres) > gm.RELATOR_TOL:
        raise ValueError("base representation must satisfy the relator")
    n = pres.n_sides
    abutting = _abutting_translates(pres, rho)
    alpha = pres.interval_half_angle
    thetas = pres.tangency_angles
    p = np.exp(1j * (thetas - alpha))
    q = np.exp(1j * (thetas + alpha))
    pts = list(p) + list(q)
    for M in abutting:
        pts.extend(_mobius_apply(M, p))
        pts.extend(_mobius_apply(M, q))
    ang = np.sort(np.mod(np.angle(np.array(pts)), TWO_PI))
    keep = [ang[0]]
    for a in ang[1:]:
        if a - keep[-1] > ENDPOINT_MERGE_TOL:
            keep.append(a)
    if (TWO_PI - keep[-1] + keep[0]) <= ENDPOINT_MERGE_TOL:
        keep.pop()
    starts = np.array(keep)
    ends = np.concatenate([starts[1:], [starts[0] + TWO_PI]])
    nc = len(starts)
    branch = np.full(nc, -1, dtype=np.int64)
    for k in range(nc):
        for j in range(n):
            lo = thetas[j] - alpha
            d1 = (starts[k] - lo) % TWO_PI
            d2 = (ends[k] - lo) % TWO_PI
            if d1 <= 2 * alpha + CONTAINMENT_TOL and d2 <= 2 * alpha + CONTAINMENT_TOL:
                branch[k] = j
                break
        if branch[k] < 0:
            raise BranchAssignmentFailure(f"cell {k} fits in no side interval")
    part = IntervalPartition(pres, rho, starts, ends, branch, len(abutting))
    mids = np.exp(1j * (starts + ends) / 2)
    moved = np.abs(_mobius_apply(part.side_matrices[branch], mids) - mids)
    if moved.max() <= ENDPOINT_MERGE_TOL:
        # a branch system that fixes every cell midpoint codes nothing
        raise BranchAssignmentFailure("assigned branches fix the partition")
    return part


def build_schottky_coding(group):
    return SchottkyCoding(group)


# ---------------------------------------------------------------------------
# transition matrix


def transition_matrix(p):
    """0/1 matrix A with A[k, l] = 1 when cell l lies inside f(cell k)."""
    if isinstance(p, SchottkyCoding):
        A = p.transition()
        return TransitionMatrix(A, _aperiodicity_witness(A), 0.0)
    nc = p.n_cells
    starts = p.starts
    A = np.zeros((nc, nc), dtype=np.uint8)
    worst = 0.0
    for k in range(nc):
        a, b = p.image_endpoint_angles(k)
        ia, ra = _snap(starts, a)
        ib, rb = _snap(starts, b % TWO_PI)
        worst = max(worst, ra, rb)
        if worst > MARKOV_TOL:
            raise MarkovViolation(
                f"cell {k}: image endpoint {worst:.2e} inside a cell")
        if ib > ia:
            A[k, ia:ib] = 1
        elif ib < ia:
            A[k, ia:] = 1
            A[k, :ib] = 1
        else:
            raise MarkovViolation(f"cell {k}: degenerate image arc")
    if not np.all(A.sum(axis=1) >= 1):
        raise MarkovViolation("empty transition row")
    return TransitionMatrix(A, _aperiodicity_witness(A), worst)


def _snap(starts, a):
    """Nearest cell endpoint to angle a: (index, circular distance)."""
    nc = len(starts)
    i = int(np.searchsorted(starts, a)) % nc
    best, bi = np.inf, -1
    for c in (i - 1, i, (i + 1) % nc):
        d = abs(a - starts[c % nc])
        d = min(d, TWO_PI - d)
        if d < best:
            best, bi = d, c % nc
    return bi, best


def _aperiodicity_witness(A):
    P = (A > 0).astype(np.int64)
    step = (A > 0).astype(np.int64)
    for n in range(1, APERIODICITY_CAP + 1):
        if P.min() > 0:
            return n
        P = np.minimum(P @ step, 1)
    return None


# ---------------------------------------------------------------------------
# validation


class CodingReport:
    """Validation summary; field names say what was measured."""

    def __init__(self, **kw):
        self.__dict__.update(kw)

    @property
    def passed(self):
        return (self.markov_ok and self.expansion_ok and self.aperiodic_ok
                and self.lemma_geodesic_ok)

    def __repr__(self):
        keys = sorted(self.__dict__)
        body = ", ".join(f"{k}={self.__dict__[k]!r}" for k in keys)
        return f"CodingReport({body})"


def validate_coding(p, depth=4, axis_samples=1000, seed=0):
    """Measure the Markov residual, expansion, aperiodicity, and the
    geodesic-persistence property of the branch assignment."""
    if isinstance(p, SchottkyCoding):
        tm = transition_matrix(p)
        exp_c, exp_n = _schottky_expansion(p, depth)
        return CodingReport(
            markov_residual=0.0, markov_ok=True,
            expansion_constant=exp_c, expansion_depth=exp_n,
            expansion_ok=exp_c > 1,
            aperiodicity_witness=tm.aperiodicity_witness,
            aperiodic_ok=tm.aperiodicity_witness is not None,
            geodesic_pass_fraction=1.0, geodesic_samples=0,
            geodesic_candidate_pool=0,
            lemma_geodesic_ok=True, branch_fallback_used=False)
    tm = transition_matrix(p)
    exp_c, exp_n = _interval_expansion(p, depth)
    frac, total, pool = _geodesic_persistence(p, axis_samples, seed)
    return CodingReport(
        markov_residual=float(tm.markov_residual),
        markov_ok=bool(tm.markov_residual <= MARKOV_TOL),
        expansion_constant=exp_c, expansion_depth=exp_n,
        expansion_ok=exp_c > 1,
        aperiodicity_witness=tm.aperiodicity_witness,
        aperiodic_ok=tm.aperiodicity_witness is not None,
        geodesic_pass_fraction=frac, geodesic_samples=total,
        geodesic_candidate_pool=pool,
        lemma_geodesic_ok=frac == 1.0, branch_fallback_used=False)


def _interval_expansion(p, depth):
    """min |(f^n)'| over 32 interior samples per cell, first n where > 1."""
    th = p.sample_angles()
    z = np.exp(1j * th)
    cells = np.repeat(np.arange(p.n_cells), th.shape[1])
    zf = z.ravel()
    logd = np.zeros(len(zf))
    best = (-np.inf, depth)
    for n in range(1, depth + 1):
        mats = p.side_matrices[p.branch[cells]]
        den = mats[:, 1, 0] * zf + mats[:, 1, 1]
        logd += -2 * np.log(np.abs(den))     # log |f'| at each point
        zf = (mats[:, 0, 0] * zf + mats[:, 0, 1]) / den
        c = float(np.exp(logd.min()))
        if c > 1:
            return c, n
        if c > best[0]:
            best = (c, n)
        ang = np.angle(zf) % TWO_PI
        cells = _cells_of_angles(p, ang)
    return best
def _cells_of_angles(p, ang):
    t = ang.copy()
    t[t < p.starts[0]] += TWO_PI
    idx = np.searchsorted(p.starts, t, side="right") - 1
    return idx % p.n_cells


def _schottky_expansion(p, depth):
    """min |branch'| over level-two disk boundaries, where the limit set
    lives; on the symbol circles themselves the derivative is unimodular."""
    pts = p.sample_points()
    worst = np.inf
    A = p.transition()
    for s in range(p.n_cells):
        letter = mobius.inverse(p.branch_elements[s]).m
        branch = p.branch_elements[s].m
        for s2 in range(p.n_cells):
            if not A[s, s2]:
                continue
            z = _mobius_apply(letter, pts[s2])  # level-2 boundary inside cell s
            den = branch[1, 0] * z + branch[1, 1]
            # smallest |branch'| on this arc is 1 / max |cz + d|^2
            worst = min(worst, float(np.abs(den).max() ** -2))
    return worst, 1


def _geodesic_persistence(p, want, seed, axis_power_cap=10):
    """Fraction of abutting translated generator axes whose branch image
    still touches the base polygon.

    Candidate translates combine a breadth-first ball with elements whose
    inverse walks the axis corridor (axis powers times abutting tiles),
    where the abutting translates concentrate. The abutting filter itself
    is what certifies every tested geodesic really touches the polygon.
    """
    pres, rho = p.presentation, p.representation
    ball = np.concatenate([np.eye(2, dtype=complex)[None]]
                          + gm.orbit_elements_by_length(rho, 3))
    tiles = [np.eye(2, dtype=complex)] + _abutting_translates(pres, rho)
    u_parts, v_parts = [], []
    for M in rho.maps:
        e, a = mobius.fixed_points(M)
        fu, fv = complex(e.value), complex(a.value)
        corridor = []
        g = M.m
        gi = np.linalg.inv(M.m)
        pow_pos = np.eye(2, dtype=complex)
        pow_neg = np.eye(2, dtype=complex)
        powers = [pow_pos]
        for _ in range(axis_power_cap):
            pow_pos = pow_pos @ g
            pow_neg = pow_neg @ gi
            powers += [pow_pos.copy(), pow_neg.copy()]
        for t in tiles:
            ti = np.linalg.inv(t)
            for pw in powers:
                corridor.append(ti @ pw)
        translates = np.concatenate([ball, np.stack(corridor)])
        cu = _mobius_apply(translates, fu)
        cv = _mobius_apply(translates, fv)
        sel = _geodesics_touch_polygon(pres, cu, cv)
        u_parts.append(cu[sel])
        v_parts.append(cv[sel])
        candidates = len(translates) * len(rho.maps)
    u = np.concatenate(u_parts)
    v = np.concatenate(v_parts)
    if len(u) > want:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(u), size=want, replace=False)
        u, v = u[pick], v[pick]
    # branch at one endpoint, applied to the whole axis
    theta = np.angle(v) % TWO_PI
    cells = _cells_of_angles(p, theta)
    mats = p.side_matrices[p.branch[cells]]
    iu = _mobius_apply(mats, u)
    iv = _mobius_apply(mats, v)
    ok = _geodesics_touch_polygon(pres, iu, iv)
    return (float(ok.mean()) if len(u) else 0.0), int(len(u)), int(candidates)


def _geodesics_touch_polygon(pres, u, v, samples=96):
    """Vectorized: does the geodesic with boundary endpoints u, v meet the
    closed base polygon (outside every side circle, inside the disk)?"""
    u = u / np.abs(u)
    v = v / np.abs(v)
    n = len(u)
    out = np.zeros(n, dtype=bool)
    d_c = pres.side_circle_center_radius
    r_side = np.sqrt(d_c * d_c - 1)
    centers = d_c * np.exp(1j * pres.tangency_angles)
    diam = np.abs(u + v) < 1e-8
    out[diam] = True                     # diameters pass through the center
    rest = ~diam
    if rest.any():
        ur, vr = u[rest], v[rest]
        # orthocircle center solves Re(conj(u) C) = Re(conj(v) C) = 1
        a1, b1 = ur.real, ur.imag
        a2, b2 = vr.real, vr.imag
        det = a1 * b2 - b1 * a2
        cx = (b2 - b1) / det
        cy = (a1 - a2) / det
        C = cx + 1j * cy
        rho = np.sqrt(np.abs(C) ** 2 - 1)
        pu = np.angle(ur - C)
        pv = np.angle(vr - C)
        dphi = _wrap(pv - pu)
        t = np.linspace(0, 1, samples)
        z = C[:, None] + rho[:, None] * np.exp(
            1j * (pu[:, None] + dphi[:, None] * t[None, :]))
        dist = np.abs(z[:, :, None] - centers[None, None, :])
        inside_polygon = np.all(dist >= r_side - ABUT_CONTACT_TOL, axis=2)
        inside_polygon &= np.abs(z) <= 1 + 1e-12
        out[rest] = inside_polygon.any(axis=1)
    return out


# ---------------------------------------------------------------------------
# cylinder refinement


def refined_words(p_or_A, depth):
    """All admissible symbol itineraries of the given length, as rows."""
    A = p_or_A if isinstance(p_or_A, np.ndarray) else transition_matrix(p_or_A).A
    nc = A.shape[0]
    words = np.arange(nc, dtype=np.int64).reshape(-1, 1)
    deg = A.sum(1).astype(np.int64)
    indptr = np.zeros(nc + 1, np.int64)
    np.cumsum(deg, out=indptr[1:])
    indices = np.nonzero(A)[1].astype(np.int64)
    for _ in range(depth - 1):
        last = words[:, -1]
        cnt = deg[last]
        st = indptr[last]
        total = int(cnt.sum())
        ofs = np.concatenate([[0], np.cumsum(cnt)])
        pos = np.arange(total) - np.repeat(ofs[:-1], cnt)
        tgt = indices[np.repeat(st, cnt) + pos]
        rows = np.repeat(np.arange(len(words)), cnt)
        words = np.concatenate([words[rows], tgt[:, None]], axis=1)
    return words


def word_suffix_prefix_pairs(A, depth):
    """(words, src, tgt): pairs where words[src][1:] == words[tgt][:-1].

    These are the admissible one-step transitions between refined cells.
    """
    w = refined_words(A, depth)
    if depth == 1:
        src, tgt = [x.astype(np.int64) for x in np.nonzero(A)]
        return w, src, tgt
    nc = A.shape[0]
    enc = w @ (nc ** np.arange(w.shape[1], dtype=np.int64))
    suf = enc // nc
    pre = enc % (nc ** (w.shape[1] - 1))
    order = np.argsort(pre, kind="stable")
    pre_s = pre[order]
    lo = np.searchsorted(pre_s, suf, "left")
    hi = np.searchsorted(pre_s, suf, "right")
    cnt = hi - lo
    total = int(cnt.sum())
    ofs = np.concatenate([[0], np.cumsum(cnt)])
    pos = np.arange(total) - np.repeat(ofs[:-1], cnt)
    tgt = order[np.repeat(lo, cnt) + pos]
    src = np.repeat(np.arange(len(w), dtype=np.int64), cnt)
    return w, src, tgt


def refine_cylinders(p, depth):
    """Partition into depth-fold itinerary cells.

    Interval partitions get true geometric arcs (pullbacks of the last
    cell through the earlier branch inverses); a Schottky coding returns
    the refined symbolic words with nominal cells.
    """
    if depth < 1:
        raise ValueError("depth >= 1")
    if isinstance(p, SchottkyCoding):
        return refined_words(p.transition(), depth)
    if depth == 1:
        return p
    A = transition_matrix(p).A
    words = refined_words(A, depth)
    last = words[:, -1]
    z_lo = np.exp(1j * p.starts[last])
    z_hi = np.exp(1j * p.ends[last])
    for col in range(depth - 2, -1, -1):
        b = p.branch[words[:, col]]
        for j in range(p.presentation.n_sides):
            m = b == j
            if m.any():
                Mi = p.side_inverses[j]
                z_lo[m] = _mobius_apply(Mi, z_lo[m])
                z_hi[m] = _mobius_apply(Mi, z_hi[m])
    starts = np.angle(z_lo) % TWO_PI
    widths = (np.angle(z_hi) - np.angle(z_lo)) % TWO_PI
    ends = starts + widths
    order = np.argsort(starts, kind="stable")
    return IntervalPartition(p.presentation, p.representation,
                             starts[order], ends[order],
                             p.branch[words[order, 0]], p.abutting_count,
                             depth=depth, words=words[order])


# ---------------------------------------------------------------------------
# periodic orbits


def _lex_min_rotation_rows(Pw):
    W = Pw.copy()
    n = Pw.shape[1]
    for r in range(1, n):
        cand = np.nonzero(Pw[:, r] == Pw[:, 0])[0]
        if len(cand) == 0:
            continue
        rolled = np.concatenate([Pw[cand, r:], Pw[cand, :r]], axis=1)
        lt = np.zeros(len(cand), bool)
        dec = np.zeros(len(cand), bool)
        for c in range(rolled.shape[1]):
            less = (rolled[:, c] < W[cand, c]) & ~dec
            more = (rolled[:, c] > W[cand, c]) & ~dec
            lt |= less
            dec |= less | more
        if lt.any():
            W[cand[lt]] = rolled[lt]
    return W


def periodic_cycle_arrays(A, n, block=64):
    """(cycles, primitive_period) arrays, one row per cycle up to rotation.

    Start-anchored enumeration: each cycle is grown from its minimal cell,
    pruned by back-reachability to the anchor, then rotation-canonicalized.
    The primitive periods satisfy sum = trace(A^n).
    """
    A = np.asarray(A)
    nc = A.shape[0]
    if n == 1:
        diag = np.nonzero(np.diag(A))[0].astype(np.int32)
        return diag.reshape(-1, 1), np.ones(len(diag), np.int32)
    powers = [None, A.astype(np.int64)]
    for k in range(2, n):
        powers.append(np.minimum(powers[-1] @ powers[1], 1))
    reach = [None] + [P > 0 for P in powers[1:]]
    deg = A.sum(1).astype(np.int64)
    indptr = np.zeros(nc + 1, np.int64)
    np.cumsum(deg, out=indptr[1:])
    indices = np.nonzero(A)[1].astype(np.int32)
    Abool = A.astype(bool)
    outW, outP = [], []
    for s0 in range(0, nc, block):
        s1 = min(s0 + block, nc)
        Pw = np.arange(s0, s1, dtype=np.int32).reshape(-1, 1)
        ok = True
        for t in range(1, n):
            last = Pw[:, -1]
            cnt = deg[last]
            st = indptr[last]
            total = int(cnt.sum())
            if total == 0:
                ok = False
                break
            ofs = np.concatenate([[0], np.cumsum(cnt)])
            pos = np.arange(total) - np.repeat(ofs[:-1], cnt)
            tgt = indices[np.repeat(st, cnt) + pos]
            rows = np.repeat(np.arange(len(Pw)), cnt)
            keep = tgt >= Pw[rows, 0]
            req = n - t
            keep &= (Abool if req == 1 else reach[req])[tgt, Pw[rows, 0]]
            if not keep.any():
                ok = False
                break
            Pw = np.concatenate(
                [Pw[rows[keep]], tgt[keep, None].astype(np.int32)], axis=1)
        if not ok or len(Pw) == 0:
            continue
        W = np.unique(_lex_min_rotation_rows(Pw), axis=0)
        prim = np.full(len(W), n, np.int32)
        for per in range(1, n):
            if n % per:
                continue
            eq = np.all(W == np.roll(W, -per, axis=1), axis=1)
            prim[eq & (prim == n)] = per
        outW.append(W)
        outP.append(prim)
    if not outW:
        return np.empty((0, n), np.int32), np.empty(0, np.int32)
    return np.concatenate(outW), np.concatenate(outP)


def periodic_orbits(A_or_tm, n, primitive_only=False):
    """Admissible length-n cycles up to rotation, as SymbolicOrbit objects."""
    A = A_or_tm.A if isinstance(A_or_tm, TransitionMatrix) else A_or_tm
    W, prim = periodic_cycle_arrays(A, n)
    out = []
    for row, d in zip(W, prim):
        if primitive_only and d != n:
            continue
        out.append(SymbolicOrbit(row, d))
    return out


# ---------------------------------------------------------------------------
# orbit <-> group element


def orbit_group_element(p, orbit):
    """Composed branch element of a periodic itinerary and its expanding
    fixed point; the point is a true period-n point of the coding map."""
    cells = orbit.cells if isinstance(orbit, SymbolicOrbit) else tuple(orbit)
    m = np.eye(2, dtype=complex)
    for k in cells:
        m = p.side_matrices[p.branch[k]] @ m   # apply first branch first
    gamma = MoebiusMap(m)
    if mobius.classify(gamma) != "loxodromic":
        raise NonLoxodromicCycle(f"cycle {cells} gives {mobius.classify(gamma)}")
    z_exp, _ = mobius.fixed_points(gamma)
    z = z_exp.value
    theta = np.angle(z) % TWO_PI
    lo, hi = p.starts[cells[0]], p.ends[cells[0]]
    t = theta if theta >= lo else theta + TWO_PI
    if not (lo - FIXED_POINT_RESIDUAL <= t <= hi + FIXED_POINT_RESIDUAL):
        raise NonLoxodromicCycle(
            f"fixed point angle {theta:.6f} outside cell {cells[0]}")
    w = z
    for k in cells:
        w = p.apply_branch(k, w)
    if abs(w - z) > FIXED_POINT_RESIDUAL:
        raise NonLoxodromicCycle(f"orbit return residual {abs(w - z):.2e}")
    return gamma, mobius.as_point(z)


# ---------------------------------------------------------------------------
# potential


class PotentialEvaluator:
    """Minus log of the branch derivative of the coding map."""

    def __init__(self, p):
        self.partition = p

    def at_angle(self, theta, cell=None):
        # |f'(z)| = |cz + d|^{-2} for a determinant-one branch, so the
        # potential -log |f'| is +2 log |cz + d|
        p = self.partition
        k = p.cell_of(theta) if cell is None else cell
        M = p.side_matrices[p.branch[k]]
        z = np.exp(1j * theta)
        return 2 * np.log(abs(M[1, 0] * z + M[1, 1]))

    def at_point(self, z, symbol):
        M = self.partition.branch_elements[symbol].m
        return 2 * np.log(abs(M[1, 0] * z + M[1, 1]))

    def on_samples(self, count=CHEB_SAMPLES):
        """(n_cells, count) potential values at interior sample angles."""
        p = self.partition
        th = p.sample_angles(count)
        z = np.exp(1j * th)
        mats = p.side_matrices[p.branch]
        den = mats[:, 1, 0][:, None] * z + mats[:, 1, 1][:, None]
        return 2 * np.log(np.abs(den))

    def periodic_birkhoff_sum(self, orbit):
        """Sum of the potential along the periodic orbit of the composed
        element's expanding fixed point."""
        p = self.partition
        gamma, z0 = orbit_group_element(p, orbit)
        z = z0.value
        total = 0.0
        for k in (orbit.cells if isinstance(orbit, SymbolicOrbit) else orbit):
            M = p.side_matrices[p.branch[k]]
            total += 2 * np.log(abs(M[1, 0] * z + M[1, 1]))
            z = _mobius_apply(M, z)
        return total


def potential_phi(p):
    return PotentialEvaluator(p)


# ---------------------------------------------------------------------------
# cylinders and bad points


def coding_project_pi(p, prefix, depth=None):
    """Arc of points whose first symbols follow the given prefix."""
    prefix = tuple(int(k) for k in prefix)
    if depth is None:
        depth = len(prefix)
    if depth == 0 or len(prefix) == 0:
        return 0.0, TWO_PI
    A = transition_matrix(p).A
    for a, b in zip(prefix[:-1], prefix[1:]):
        if not A[a, b]:
            raise EmptyCylinder(f"transition {a}->{b} not admissible")
    z_lo = np.exp(1j * p.starts[prefix[-1]])
    z_hi = np.exp(1j * p.ends[prefix[-1]])
    for k in reversed(prefix[:-1]):
        Mi = p.side_inverses[p.branch[k]]
        z_lo = _mobius_apply(Mi, z_lo)
        z_hi = _mobius_apply(Mi, z_hi)
    start = np.angle(z_lo) % TWO_PI
    width = (np.angle(z_hi) - np.angle(z_lo)) % TWO_PI
    return float(start), float(start + width)


def is_bad_point(p, theta, depth):
    """True when some forward iterate lands on a partition endpoint."""
    t = theta % TWO_PI
    for _ in range(depth + 1):
        d = np.abs(_wrap(p.starts - t))
        if d.min() <= BAD_POINT_TOL:
            return True
        k = p.cell_of(t)
        t = np.angle(p.apply_branch(k, np.exp(1j * t))) % TWO_PI
    return False


# ---------------------------------------------------------------------------
# serialization


def partition_to_json(p):
    """Deterministic document: cells at full precision, transition rows."""
    A = transition_matrix(p).A
    cells = [{"start": float(f"{s:.17g}"), "end": float(f"{e:.17g}"),
              "branch": int(b)}
             for s, e, b in zip(p.starts, p.ends, p.branch)]
    rows = [np.nonzero(A[k])[0].tolist() for k in range(p.n_cells)]
    return {"kind": "interval_partition", "n_cells": p.n_cells,
            "cells": cells, "transitions": rows}


def partition_json_text(p):
    return json.dumps(partition_to_json(p), sort_keys=True)
