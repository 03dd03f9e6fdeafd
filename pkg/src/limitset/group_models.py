"""Group presentations and representations: regular 4g-gon surface groups,
Schottky groups, twist/bend deformation families, conjugacy classes, and
Poincare-series estimates.

Disk model throughout: fuchsian representations preserve the unit circle
(SU(1,1) matrices); deformed representations are arbitrary determinant-one
complex matrices.
"""

import json

import numpy as np

from . import mobius
from .mobius import MoebiusMap

RELATOR_TOL = 1e-10        # construction-time residual for fuchsian bases
FAMILY_RELATOR_TOL = 1e-9  # residual guard along deformation families
PAIRING_TOL = 1e-9         # side/circle pairing residual
DISJOINT_MARGIN = 1e-6     # minimum gap between Schottky circles
TRACE_HASH_DECIMALS = 8    # trace rounding for conjugacy dedup
DELTA_BIN_WIDTH = 0.5      # radius bin for the Poincare exponent fit
CANON_QUANT = 1e7          # matrix quantization for orbit dedup


class UnknownGenerator(KeyError):
    """Word refers to a generator index outside the representation."""


class UnsupportedCurve(ValueError):
    """Twist curve outside the supported standard family."""


class OverlappingCircles(ValueError):
    """Schottky circles not pairwise disjoint with the required margin."""


class InsufficientData(ValueError):
    """Not enough orbit data for the requested estimate."""


class Word:
    """Freely reduced word in signed 1-based generator indices."""

    __slots__ = ("letters", "cyclically_reduced")

    def __init__(self, letters):
        out = []
        for s in letters:
            s = int(s)
            if s == 0:
                raise ValueError("letters are nonzero signed indices")
            if out and out[-1] == -s:
                out.pop()
            else:
                out.append(s)
        self.letters = tuple(out)
        self.cyclically_reduced = not (len(out) >= 2 and out[0] == -out[-1])

    def cyclic_reduce(self):
        out = list(self.letters)
        while len(out) >= 2 and out[0] == -out[-1]:
            out = out[1:-1]
        return Word(out)

    def inverse(self):
        return Word([-s for s in reversed(self.letters)])

    def __len__(self):
        return len(self.letters)

    def __eq__(self, other):
        return isinstance(other, Word) and self.letters == other.letters

    def __hash__(self):
        return hash(self.letters)

    def __repr__(self):
        return f"Word({list(self.letters)})"


def _rot(phi):
    return np.array([[np.exp(1j * phi / 2), 0], [0, np.exp(-1j * phi / 2)]])


def _trans(r):
    # hyperbolic translation of the disk moving 0 to r along the real axis
    s = 1.0 / np.sqrt(1 - r * r)
    return np.array([[s, r * s], [r * s, s]], dtype=complex)


_FLIP = np.array([[1j, 0], [0, -1j]], dtype=complex)  # half-turn in the side frame


class SurfaceGroupPresentation:
    """Regular 4g-gon presentation with its polygon geometry.

    Sides are indexed 0..4g-1 counterclockwise; side i is tangent to the
    ray at angle 2 pi (i + 1/2) / (4g). Generators are named x1, y1, ...,
    xg, yg; the single relator is the product of the handle commutators.
    Each side carries the pairing element gamma_i (the side-pairing map
    carrying side i onto its partner), recorded as a signed generator
    symbol in side_symbols.
    """

    def __init__(self, genus):
        if genus < 2:
            raise ValueError("genus >= 2 required")
        n = 4 * genus
        self.genus = genus
        self.n_sides = n
        self.generator_names = []
        for h in range(genus):
            self.generator_names += [f"x{h + 1}", f"y{h + 1}"]
        rel = []
        for h in range(genus):
            a, b = 2 * h + 1, 2 * h + 2
            rel += [a, b, -a, -b]
        self.relator = Word(rel)
        # geometry
        self.edge_tangency_radius = np.tanh(np.arccosh(1 / np.tan(np.pi / n)) / 2)
        r_e = self.edge_tangency_radius
        self.side_circle_center_radius = (r_e + 1 / r_e) / 2   # euclidean center dist
        d_c = self.side_circle_center_radius
        self.interval_half_angle = np.arccos(1 / d_c)
        self.tangency_angles = 2 * np.pi * (np.arange(n) + 0.5) / n
        # vertex radius: intersection of adjacent side circles on the vertex ray
        cv = d_c * np.cos(np.pi / n)
        self.vertex_radius = cv - np.sqrt(cv * cv - 1)
        self.vertices = self.vertex_radius * np.exp(2j * np.pi * np.arange(n) / n)
        # pairing: per handle block of 4 sides, (4h <-> 4h+2), (4h+1 <-> 4h+3)
        self.side_pairing = np.empty(n, dtype=int)
        self.side_symbols = np.empty(n, dtype=int)
        for h in range(genus):
            b0 = 4 * h
            self.side_pairing[[b0, b0 + 1, b0 + 2, b0 + 3]] = \
                [b0 + 2, b0 + 3, b0, b0 + 1]
            xi, yi = 2 * h + 1, 2 * h + 2
            self.side_symbols[[b0, b0 + 1, b0 + 2, b0 + 3]] = [-xi, yi, xi, -yi]

    def interval(self, i):
        """Endpoint angles (start, end) of the short arc cut by side i."""
        th = self.tangency_angles[i]
        a = self.interval_half_angle
        return th - a, th + a

    def side_frame(self, i):
        """Map taking the side-0 reference frame to side i's frame."""
        return _rot(self.tangency_angles[i]) @ _trans(self.edge_tangency_radius) \
            @ _rot(np.pi / 2)


def _pairing_matrix(pres, i_to, j_from):
    return pres.side_frame(i_to) @ _FLIP @ np.linalg.inv(pres.side_frame(j_from))


class Representation:
    """Assignment of generator names to MoebiusMaps."""

    def __init__(self, names, maps):
        if len(names) != len(maps):
            raise ValueError("one map per generator name")
        self.names = list(names)
        self.maps = [m if isinstance(m, MoebiusMap) else MoebiusMap(m) for m in maps]
        self._index = {nm: k for k, nm in enumerate(self.names)}

    def generator(self, symbol):
        """MoebiusMap for a signed 1-based index or a generator name."""
        if isinstance(symbol, str):
            if symbol not in self._index:
                raise UnknownGenerator(symbol)
            return self.maps[self._index[symbol]]
        s = int(symbol)
        if not 1 <= abs(s) <= len(self.maps):
            raise UnknownGenerator(s)
        M = self.maps[abs(s) - 1]
        return M if s > 0 else mobius.inverse(M)

    def matrices_with_inverses(self):
        """(2k, 2, 2) array: generators then inverses, index k-1 / k+len-1."""
        k = len(self.maps)
        out = np.empty((2 * k, 2, 2), dtype=complex)
        for i, M in enumerate(self.maps):
            out[i] = M.m
            out[k + i] = mobius.inverse(M).m
        return out


def evaluate_word(rho, w):
    """Ordered product of generator images; empty word gives the identity."""
    letters = w.letters if isinstance(w, Word) else tuple(w)
    m = np.eye(2, dtype=complex)
    for s in letters:
        m = m @ rho.generator(s).m
    return MoebiusMap(m)


def relator_residual(rho, pres):
    """Frobenius distance of the evaluated relator from the nearer of +-I."""
    m = evaluate_word(rho, pres.relator).m
    eye = np.eye(2)
    return float(min(np.linalg.norm(m - eye), np.linalg.norm(m + eye)))


def build_regular_4g_gon_group(genus):
    """Regular 4g-gon surface group: presentation plus fuchsian representation.

    Polygon centered at the origin, first vertex on the positive real axis.
    Generators are the side-pairing maps of the first side of each handle
    block, oriented so the block relator [x_h, y_h] holds.
    """
    pres = SurfaceGroupPresentation(genus)
    maps = []
    for h in range(genus):
        b0 = 4 * h
        # x_h carries side b0+2 onto side b0; y_h carries b0+1 onto b0+3
        maps.append(MoebiusMap(_pairing_matrix(pres, b0, b0 + 2)))
        maps.append(MoebiusMap(_pairing_matrix(pres, b0 + 3, b0 + 1)))
    rho = Representation(pres.generator_names, maps)
    res = relator_residual(rho, pres)
    if res > RELATOR_TOL:
        raise RuntimeError(f"construction failed: relator residual {res:.2e}")
    return pres, rho


class SchottkyGroup:
    """Free group on circle pairings: generator i maps the exterior of
    circle pairs[i][0] onto the interior of circle pairs[i][1]."""

    def __init__(self, circles, pairs, rho):
        self.circles = circles          # list of (center: complex, radius: float)
        self.pairs = pairs              # list of (src circle idx, dst circle idx)
        self.rho = rho

    @property
    def rank(self):
        return len(self.pairs)


def _schottky_generator(c0, r0, c1, r1):
    # maps c0 + r0 e^{i t} -> c1 + r1 e^{-i t}: exterior of 0 onto interior of 1
    return np.array([[c1, -r0 * r1 - c0 * c1], [1.0, -c0]], dtype=complex) \
        / np.sqrt(r0 * r1 + 0j)


def build_schottky(circles, pairing=None):
    """Schottky group from pairwise disjoint circles.

    circles: list of (center, radius); pairing: list of (src, dst) circle
    index pairs, defaulting to (0,1), (2,3), ... Each pair yields one
    loxodromic generator.
    """
    circles = [(complex(c), float(r)) for c, r in circles]
    m = len(circles)
    for i in range(m):
        for j in range(i + 1, m):
            gap = abs(circles[i][0] - circles[j][0]) - circles[i][1] - circles[j][1]
            if gap < DISJOINT_MARGIN:
                raise OverlappingCircles(f"circles {i},{j}: gap {gap:.2e}")
    if pairing is None:
        if m % 2:
            raise ValueError("odd number of circles needs an explicit pairing")
        pairing = [(2 * i, 2 * i + 1) for i in range(m // 2)]
    used = [i for p in pairing for i in p]
    if sorted(used) != list(range(m)):
        raise ValueError("pairing must use each circle exactly once")
    maps = []
    for (i, j) in pairing:
        c0, r0 = circles[i]
        c1, r1 = circles[j]
        M = MoebiusMap(_schottky_generator(c0, r0, c1, r1))
        # pairing residual: sampled circle-i points must land on circle j
        t = np.linspace(0, 2 * np.pi, 17)
        z = c0 + r0 * np.exp(1j * t)
        img = (M.a * z + M.b) / (M.c * z + M.d)
        res = np.abs(np.abs(img - c1) - r1).max()
        if res > PAIRING_TOL:
            raise RuntimeError(f"pairing residual {res:.2e} for pair {(i, j)}")
        maps.append(M)
    names = [f"g{k + 1}" for k in range(len(maps))]
    return SchottkyGroup(circles, list(pairing), Representation(names, maps))


def axis_exponential(M, c):
    """exp((c/2) * axis generator of M): same axis, translation length c."""
    ev, V = np.linalg.eig(M.m if isinstance(M, MoebiusMap) else M)
    if abs(ev[0]) < abs(ev[1]):
        V = V[:, ::-1]
    return V @ np.diag([np.exp(c / 2), np.exp(-c / 2)]) @ np.linalg.inv(V)


_HANDLE_CURVES = {}  # populated per genus: curve letters -> surgery recipe


def _supported_curves(genus):
    out = {}
    for h in range(genus):
        xi, yi = 2 * h + 1, 2 * h + 2
        out[(xi,)] = ("handle_x", h)
        out[(yi,)] = ("handle_y", h)
    if genus == 2:
        out[(1, 2, -1, -2)] = ("separating", 0)
    return out


def _apply_surgery(mats, kind, h, tau):
    """One twist/bend surgery on the list of generator matrices (in place).

    Real tau shears, imaginary tau bends. The relator is preserved exactly:
    the modification multiplies one crossing generator by an element of the
    curve's one-parameter axis subgroup (handle curves), or conjugates the
    far handle by it (separating curve).
    """
    if kind == "handle_x":
        A = axis_exponential(mats[2 * h], tau)
        mats[2 * h + 1] = mats[2 * h + 1] @ A
    elif kind == "handle_y":
        A = axis_exponential(mats[2 * h + 1], tau)
        mats[2 * h] = mats[2 * h] @ A
    elif kind == "separating":
        x1, y1 = mats[0], mats[1]
        comm = x1 @ y1 @ np.linalg.inv(x1) @ np.linalg.inv(y1)
        T = axis_exponential(comm, tau)
        Ti = np.linalg.inv(T)
        mats[2] = T @ mats[2] @ Ti
        mats[3] = T @ mats[3] @ Ti
    else:
        raise UnsupportedCurve(kind)


class DeformationFamily:
    """Smooth family tau -> Representation over a list of twist curves.

    Each curve contributes one complex parameter: real part shears,
    imaginary part bends. Surgeries are applied left to right.
    """

    def __init__(self, base, pres, curves):
        self.base = base
        self.presentation = pres
        self.curves = list(curves)    # list of (kind, handle index, curve word)
        self.dim = 2 * len(self.curves)

    def at(self, taus):
        """Representation at the given complex parameters (scalar allowed)."""
        if np.isscalar(taus):
            taus = [taus]
        taus = list(taus)
        if len(taus) != len(self.curves):
            raise ValueError(f"expected {len(self.curves)} parameters")
        if all(t == 0 for t in taus):
            return self.base
        mats = [M.m.copy() for M in self.base.maps]
        for (kind, h, _w), tau in zip(self.curves, taus):
            _apply_surgery(mats, kind, h, complex(tau))
        return Representation(self.base.names, mats)

    def curve_words(self):
        return [w for (_k, _h, w) in self.curves]


def twist_bend_family(base, curve, pres):
    """Complex one-parameter twist/bend family along a supported curve."""
    key = curve.cyclic_reduce().letters if isinstance(curve, Word) else tuple(curve)
    supported = _supported_curves(pres.genus)
    if key not in supported:
        raise UnsupportedCurve(f"curve {key} not in the standard family")
    kind, h = supported[key]
    return DeformationFamily(base, pres, [(kind, h, Word(key))])


def multi_curve_family(base, curves, pres):
    """Family over several supported curves (one complex parameter each)."""
    specs = []
    supported = _supported_curves(pres.genus)
    for curve in curves:
        key = curve.cyclic_reduce().letters if isinstance(curve, Word) else tuple(curve)
        if key not in supported:
            raise UnsupportedCurve(f"curve {key} not in the standard family")
        kind, h = supported[key]
        specs.append((kind, h, Word(key)))
    return DeformationFamily(base, pres, specs)


# ---------------------------------------------------------------------------
# conjugacy classes

def _cyclic_words(rank, max_len):
    """All cyclically reduced words up to max_len, one per (rotation,
    inversion) class, by direct generation."""
    reps = []
    seen = set()
    alphabet = [s for k in range(1, rank + 1) for s in (k, -k)]

    def backtrack(word):
        if word:
            if len(word) >= 2 and word[0] == -word[-1]:
                pass
            else:
                key = _rotation_inversion_key(word)
                if key not in seen:
                    seen.add(key)
                    reps.append(Word(word))
        if len(word) == max_len:
            return
        for s in alphabet:
            if word and word[-1] == -s:
                continue
            backtrack(word + [s])

    backtrack([])
    return reps


def _rotation_inversion_key(letters):
    n = len(letters)
    cands = []
    for w in (list(letters), [-s for s in reversed(letters)]):
        for r in range(n):
            cands.append(tuple(w[r:] + w[:r]))
    return min(cands)


def enumerate_conjugacy_classes(pres_or_rank, max_len, rho=None,
                                primitive_only=False, conjugator_len=3):
    """Cyclically-reduced conjugacy-class representatives up to max_len.

    Classes are identified up to cyclic rotation and inversion. When a
    representation is supplied (surface groups), classes whose base traces
    collide after rounding are additionally tested for conjugacy by a
    bounded search over short conjugators, so relator-induced coincidences
    collapse while accidental trace collisions survive.
    """
    if isinstance(pres_or_rank, SurfaceGroupPresentation):
        rank = 2 * pres_or_rank.genus
    else:
        rank = int(pres_or_rank)
    reps = _cyclic_words(rank, max_len)
    if primitive_only:
        reps = [w for w in reps if _is_primitive(w)]
    if rho is None:
        return reps
    # trace-hash dedup at the representation
    buckets = {}
    for w in reps:
        t = np.trace(evaluate_word(rho, w).m)
        key = (round(t.real, TRACE_HASH_DECIMALS), round(abs(t.imag), TRACE_HASH_DECIMALS))
        buckets.setdefault(key, []).append(w)
    conjugators = _cyclic_words(rank, conjugator_len)
    out = []
    for key, group in buckets.items():
        kept = []
        for w in group:
            mw = evaluate_word(rho, w).m
            dup = False
            for v in kept:
                if _conjugate_in_rep(rho, mw, v, conjugators):
                    dup = True
                    break
            if not dup:
                kept.append(w)
        out.extend(kept)
    out.sort(key=lambda w: (len(w), w.letters))
    return out


def _is_primitive(w):
    n = len(w.letters)
    for p in range(1, n):
        if n % p == 0 and w.letters == w.letters[p:] + w.letters[:p]:
            return False
    return True


def _conjugate_in_rep(rho, mw, v, conjugators):
    mv = evaluate_word(rho, v).m
    for u in conjugators:
        mu = evaluate_word(rho, u).m
        c = mu @ mv @ np.linalg.inv(mu)
        if min(np.abs(c - mw).max(), np.abs(c + mw).max()) <= 1e-8:
            return True
    return False


# ---------------------------------------------------------------------------
# orbit enumeration and Poincare-series estimates

def _canon_keys(mats):
    """Sign-canonicalized quantized matrix keys for orbit dedup."""
    flat = mats.reshape(len(mats), 4)
    comps = np.stack([flat[:, 0].real, flat[:, 0].imag,
                      flat[:, 1].real, flat[:, 1].imag], axis=1)
    big = np.abs(comps) > 1e-7
    first = np.argmax(big, axis=1)
    sign = np.sign(comps[np.arange(len(mats)), first])
    sign[sign == 0] = 1.0
    canon = flat * sign[:, None]
    q = np.round(np.stack([canon.real, canon.imag], axis=2).reshape(len(mats), 8)
                 * CANON_QUANT).astype(np.int64)
    return q


def orbit_elements_by_length(rho, max_len):
    """Distinct nontrivial group elements by word length, as matrix arrays.

    Breadth-first over generator products with matrix-level dedup, so
    surface-group relations collapse and the counts are honest element
    counts in the group.
    """
    gens = rho.matrices_with_inverses()
    levels = []
    seen = None
    frontier = gens.copy()
    k0 = _canon_keys(np.concatenate([np.eye(2, dtype=complex)[None], frontier]))
    seen = np.unique(k0, axis=0)
    frontier = frontier[_unique_rows_mask(_canon_keys(frontier))]
    levels.append(frontier)
    for _ in range(1, max_len):
        prod = np.einsum('pij,gjk->pgik', frontier, gens).reshape(-1, 2, 2)
        keys = _canon_keys(prod)
        mask = _unique_rows_mask(keys)
        prod = prod[mask]
        keys = keys[mask]
        new_mask = ~_rows_in(keys, seen)
        frontier = prod[new_mask]
        if len(frontier) == 0:
            break
        seen = np.unique(np.concatenate([seen, keys[new_mask]]), axis=0)
        levels.append(frontier)
    return levels


def _unique_rows_mask(keys):
    _, idx = np.unique(keys, axis=0, return_index=True)
    mask = np.zeros(len(keys), dtype=bool)
    mask[idx] = True
    return mask


def _rows_in(keys, table):
    """Membership of int64 rows in a sorted table of rows."""
    if len(table) == 0:
        return np.zeros(len(keys), dtype=bool)
    view = np.ascontiguousarray(keys).view([('', np.int64)] * keys.shape[1]).ravel()
    tview = np.ascontiguousarray(table).view([('', np.int64)] * table.shape[1]).ravel()
    pos = np.searchsorted(tview, view)
    pos = np.clip(pos, 0, len(tview) - 1)
    return tview[pos] == view


def _displacements(mats):
    s = (np.abs(mats) ** 2).sum(axis=(1, 2)) / 2
    return np.arccosh(np.maximum(s, 1.0))


def poincare_delta_estimate(rho, max_len, return_details=False):
    """Exponent of convergence from orbit growth.

    Least-squares slope of log cumulative count against radius over the
    resolvable range: bins of width DELTA_BIN_WIDTH, last bin discarded,
    and only radii below the completeness radius (the smallest displacement
    on the deepest word-length frontier) enter the fit, since beyond it the
    word-length ball no longer contains every element of that radius.
    """
    levels = orbit_elements_by_length(rho, max_len)
    if not levels:
        raise InsufficientData("no orbit points")
    disp = np.concatenate([_displacements(lv) for lv in levels])
    complete_r = _displacements(levels[-1]).min()
    edges = np.arange(DELTA_BIN_WIDTH, disp.max() + DELTA_BIN_WIDTH, DELTA_BIN_WIDTH)
    edges = edges[:-1] if len(edges) > 1 else edges
    edges = edges[edges <= complete_r]
    counts = np.array([(disp <= r).sum() for r in edges])
    keep = counts > 0
    edges, counts = edges[keep], counts[keep]
    if len(edges) < 3:
        raise InsufficientData(f"{len(edges)} radius bins populated, need 3")
    slope, intercept = np.polyfit(edges, np.log(counts), 1)
    if return_details:
        return float(slope), dict(bins=edges, counts=counts,
                                  completeness_radius=float(complete_r))
    return float(slope)


def ps_orbit_measure_approx(rho, s, max_len):
    """Weighted orbit point set on the boundary sphere.

    Weights are proportional to e^{-s d(o, gamma o)}; points are the radial
    projections of the orbit of the disk center. Total mass one.
    """
    levels = orbit_elements_by_length(rho, max_len)
    if not levels:
        raise InsufficientData("no orbit points")
    mats = np.concatenate(levels)
    disp = _displacements(mats)
    img = mats[:, 0, 1] / mats[:, 1, 1]   # image of the disk center
    r = np.abs(img)
    ok = r > 1e-12
    if ok.sum() < 1:
        raise InsufficientData("all orbit points at the center")
    pts = img[ok] / r[ok]
    w = np.exp(-s * disp[ok])
    w = w / w.sum()
    return pts, w


# ---------------------------------------------------------------------------
# serialization

def _mat_to_json(M):
    return [[[float(x.real), float(x.imag)] for x in row] for row in M.m]


def _mat_from_json(rows):
    return [[complex(e[0], e[1]) for e in row] for row in rows]


def group_to_json(obj, rho=None):
    """JSON document for a surface or Schottky group (with matrices)."""
    if isinstance(obj, SurfaceGroupPresentation):
        if rho is None:
            raise ValueError("surface serialization needs the representation")
        return {"kind": "surface", "genus": obj.genus,
                "generators": [_mat_to_json(M) for M in rho.maps]}
    if isinstance(obj, SchottkyGroup):
        return {"kind": "schottky",
                "circles": [[[c.real, c.imag], r] for c, r in obj.circles],
                "pairing": [list(p) for p in obj.pairs],
                "generators": [_mat_to_json(M) for M in obj.rho.maps]}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def group_from_json(doc):
    """Inverse of group_to_json; bit-exact on matrix entries.

    Returns (presentation-or-SchottkyGroup, Representation). Surface
    documents rebuild the polygon presentation from the genus and attach
    the stored matrices (which may be deformed or conjugated).
    """
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("group document needs a 'kind' field")
    if doc["kind"] == "surface":
        pres = SurfaceGroupPresentation(int(doc["genus"]))
        maps = [MoebiusMap(_mat_from_json(g)) for g in doc["generators"]]
        rho = Representation(pres.generator_names, maps)
        return pres, rho
    if doc["kind"] == "schottky":
        circles = [(complex(c[0], c[1]), float(r)) for c, r in doc["circles"]]
        pairing = [tuple(p) for p in doc["pairing"]]
        grp = build_schottky(circles, pairing)
        stored = [MoebiusMap(_mat_from_json(g)) for g in doc["generators"]]
        grp = SchottkyGroup(circles, pairing,
                            Representation(grp.rho.names, stored))
        return grp, grp.rho
    raise ValueError(f"unknown kind {doc['kind']!r}")


def group_roundtrip_exact(obj, rho=None):
    """True when to-JSON -> text -> from-JSON reproduces the matrices bitwise."""
    doc = group_to_json(obj, rho)
    doc2 = json.loads(json.dumps(doc))
    _, rho2 = group_from_json(doc2)
    src = rho if rho is not None else obj.rho
    return all(np.array_equal(a.m, b.m) for a, b in zip(src.maps, rho2.maps))
