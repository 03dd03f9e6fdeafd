"""Transfer-operator discretizations, leading spectral data, pressure,
dimension roots, periodic-orbit ensembles, and coboundary testing.

Two engines solve the dimension equation (pressure of s times the expanding
potential equals zero). The operator engine discretizes the weighted
transfer operator on cylinder refinements of a validated coding; the orbit
engine truncates the pressure limit over periodic itineraries. A third,
higher-order collocation engine serves boundary-smooth (real shear)
deformations where the limit set stays a round circle.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from . import group_models as gm
from . import markov_coding as mc
from . import mobius
from . import numerics

RPF_RESIDUAL_FACTOR = 1e-10     # eigen residuals relative to the eigenvalue
SPECTRAL_GAP_FLOOR = 1e-6
OPERATOR_SAMPLE_NODES = 8
DEFAULT_BRACKET = (0.01, 2.5)
DIMENSION_RESOLUTION = 1e-6
ENSEMBLE_MIN_ORBITS = 50
BIRKHOFF_ORBIT_TOL = 1e-8
LIVSIC_TOL = 1e-8
GREEN_KUBO_CAP = 400
GREEN_KUBO_FLOOR = 1e-14
TAU_KEY_DECIMALS = 12

# bisection to 1e-8 bracket width, then secant polish to the residual floor
BOWEN_POLICY = numerics.NumericalPolicy(bisect_width=1e-8)

BracketFailure = numerics.BracketFailure


class NoSpectralGap(RuntimeError):
    """Leading-eigenvalue iteration found no usable contraction."""


class EnsembleTooSmall(ValueError):
    """Too few periodic orbits at the requested truncation level."""


# ---------------------------------------------------------------------------
# shared structure helpers


def _transition_of(p):
    if isinstance(p, np.ndarray):
        return p
    if isinstance(p, mc.TransitionMatrix):
        return p.A
    cache = _object_cache(p)
    if "A" not in cache:
        cache["A"] = mc.transition_matrix(p).A
    return cache["A"]


def _object_cache(p):
    try:
        return p.__dict__.setdefault("_thermo_cache", {})
    except AttributeError:
        return {}


def _structure(p, depth):
    """(words, src, tgt) suffix-prefix pair structure, cached per object."""
    cache = _object_cache(p)
    key = ("pairs", depth)
    if key not in cache:
        A = _transition_of(p)
        cache[key] = mc.word_suffix_prefix_pairs(A, depth)
    return cache[key]


def _interval_inverse_stack(p, rep):
    if rep is None:
        return p.side_inverses
    pres = p.presentation
    return np.stack([
        np.linalg.inv(rep.generator(int(pres.side_symbols[j])).m)
        for j in range(pres.n_sides)])


def _apply_stack(Mi, z):
    return (Mi[..., 0, 0] * z + Mi[..., 0, 1]) \
        / (Mi[..., 1, 0] * z + Mi[..., 1, 1])


def _refined_arcs(p, depth):
    """Start angle and width of every depth-cylinder arc, in the order of
    the refined word list: endpoint pullback through the branch inverses."""
    cache = _object_cache(p)
    key = ("arcs", depth)
    if key not in cache:
        words, _src, _tgt = _structure(p, depth)
        last = words[:, -1]
        z_lo = np.exp(1j * p.starts[last])
        z_hi = np.exp(1j * p.ends[last])
        for col in range(words.shape[1] - 2, -1, -1):
            Mi = p.side_inverses[p.branch[words[:, col]]]
            z_lo = _apply_stack(Mi, z_lo)
            z_hi = _apply_stack(Mi, z_hi)
        starts = np.angle(z_lo) % (2 * np.pi)
        widths = (np.angle(z_hi) - np.angle(z_lo)) % (2 * np.pi)
        cache[key] = (starts, widths)
    return cache[key]


def _geometric_pair_values(p, depth, rep, samples):
    """Per-pair potential samples: the expanding log-derivative of the
    source's first branch at interior sample points of the target cell.

    With the base representation, sample points sit uniformly inside the
    true refined arcs (the cell-averaged entries then reproduce the
    arc-length balance exactly in the limit). A deformed representation
    has no arc chart, so samples of the final base cell are transported
    through the deformed inverse branches instead.
    """
    words, src, tgt = _structure(p, depth)
    fr = (np.arange(samples) + 0.5) / samples
    if isinstance(p, mc.SchottkyCoding):
        if rep is not None:
            raise ValueError("Schottky codings carry their own maps")
        inv_stack = np.stack([mobius.inverse(b).m for b in p.branch_elements])
        cr = np.array(p.circle_of_symbol)
        last = words[:, -1]
        z = cr[last, 0][:, None] + cr[last, 1][:, None] \
            * np.exp(2j * np.pi * fr)[None, :]
        for col in range(words.shape[1] - 2, -1, -1):
            Mi = inv_stack[words[:, col], None]
            z = _apply_stack(Mi, z)
        Mi = inv_stack[words[src, 0], None]
    elif rep is None:
        starts, widths = _refined_arcs(p, depth)
        theta = starts[:, None] + fr[None, :] * widths[:, None]
        z = np.exp(1j * theta)
        Mi = p.side_inverses[p.branch[words[src, 0]], None]
    else:
        inv_stack = _interval_inverse_stack(p, rep)
        last = words[:, -1]
        theta = p.starts[last][:, None] \
            + fr[None, :] * (p.ends - p.starts)[last][:, None]
        z = np.exp(1j * theta)
        for col in range(words.shape[1] - 2, -1, -1):
            Mi = inv_stack[p.branch[words[:, col]], None]
            z = _apply_stack(Mi, z)
        Mi = inv_stack[p.branch[words[src, 0]], None]
    den = Mi[..., 1, 0] * z[tgt] + Mi[..., 1, 1]
    # phi(y) = log |(inverse branch)'(x)| at each target sample x
    return words, src, tgt, -2.0 * np.log(np.abs(den))


class TransferOperatorDiscretization:
    """Sparse nonnegative weighted-adjacency matrix on refined cylinders.

    Entry (target, source) holds e^{s phi(y)} where y is the inverse-branch
    preimage, in the source cylinder, of the target's sample point. The
    structure arrays are shared between inverse temperatures.
    """

    def __init__(self, partition, depth, words, src, tgt, log_values, s):
        self.partition = partition
        self.depth = depth
        self.words = words
        self.src = src
        self.tgt = tgt
        self.log_values = log_values
        self.s = float(s)
        self.n_cells = len(words)
        self._matrix = None

    def entry_values(self):
        """Per-pair entries aligned with the src/tgt arrays: the cell
        average of e^{s phi} over the target sample points."""
        e = np.exp(self.s * self.log_values)
        return e.mean(axis=1) if e.ndim == 2 else e

    @property
    def matrix(self):
        if self._matrix is None:
            self._matrix = sp.csr_matrix(
                (self.entry_values(), (self.tgt, self.src)),
                shape=(self.n_cells, self.n_cells))
        return self._matrix

    def with_inverse_temperature(self, s):
        return TransferOperatorDiscretization(
            self.partition, self.depth, self.words, self.src, self.tgt,
            self.log_values, s)

    def dense(self):
        return self.matrix.toarray()

    def column_sums(self):
        return np.asarray(self.matrix.sum(axis=0)).ravel()


def discretize_transfer_operator(p, depth, potential=None, s=1.0, rep=None,
                                 samples=OPERATOR_SAMPLE_NODES):
    """Locally-constant discretization of the weighted transfer operator.

    potential None uses the expanding-map log-derivative of the coding
    (optionally under a deformed representation); an array of per-symbol
    values is lifted to cylinders through their first symbol; an array
    matching the cylinder count is used directly.
    """
    if potential is None:
        if isinstance(p, np.ndarray):
            raise ValueError("a bare transition matrix needs explicit "
                             "potential values")
        words, src, tgt, vals = _geometric_pair_values(p, depth, rep,
                                                       samples)
        return TransferOperatorDiscretization(p, depth, words, src, tgt,
                                              vals, s)
    words, src, tgt = _structure(p, depth)
    pot = np.asarray(potential, dtype=float)
    n_base = _transition_of(p).shape[0]
    if pot.shape == (len(words),):
        vals = pot[src]
    elif pot.shape == (n_base,):
        vals = pot[words[src, 0]]
    else:
        raise ValueError(f"potential must have {n_base} per-symbol or "
                         f"{len(words)} per-cylinder values")
    return TransferOperatorDiscretization(p, depth, words, src, tgt, vals, s)


# ---------------------------------------------------------------------------
# leading spectral data


@dataclass
class RpfTriple:
    beta: float
    h: np.ndarray
    mu: np.ndarray
    gap_estimate: float
    right_residual: float
    left_residual: float
    discretization: TransferOperatorDiscretization


def _probe_contraction(A, beta, v, seed=0):
    """Re-measure the iterate contraction from a perturbed start; the
    ratio reported at convergence sits on the rounding floor."""
    rng = np.random.default_rng(seed)
    u = v + 1e-6 * rng.standard_normal(len(v)) * max(float(v.max()), 1e-300)
    u = np.abs(u)
    u /= u.sum()
    ratios = []
    prev = None
    for _ in range(12):
        w = A @ u
        w /= w.sum()
        diff = float(np.abs(w - u).max())
        if prev is not None and prev > 1e-15:
            ratios.append(diff / prev)
        prev = diff
        u = w
    return float(np.median(ratios)) if ratios else 1.0


def rpf_leading_triple(op, v0=None, policy=numerics.DEFAULT_POLICY):
    """Leading eigenvalue with right and left eigenvectors.

    Normalization: the left vector sums to one and pairs to one against
    the right vector. Raises NoSpectralGap when the iteration stalls
    without meeting the residual target.
    """
    A = op.matrix
    _br, h, _rr, ratio_r = numerics.power_iteration(A, v0=v0, policy=policy)
    _bl, mu, _rl, ratio_l = numerics.power_iteration(A, left=True,
                                                     policy=policy)
    # pairing the two sides cancels both first-order iterate errors; the
    # growth-factor estimate alone is noisy at the column-sum spread scale
    beta = float(mu @ (A @ h)) / float(mu @ h)
    if h.min() <= 0 or mu.min() < 0:
        raise NoSpectralGap("leading eigenvectors are not positive")
    mu = mu / mu.sum()
    h = h / float(mu @ h)
    # residuals are checked on the vectors as returned so callers can
    # reproduce them without undoing the normalization
    res_r = float(np.abs(A @ h - beta * h).max())
    res_l = float(np.abs(A.T @ mu - beta * mu).max())
    tol_r = RPF_RESIDUAL_FACTOR * beta * float(h.max())
    tol_l = RPF_RESIDUAL_FACTOR * beta * float(mu.max())
    if res_r > tol_r or res_l > tol_l:
        raise NoSpectralGap(
            f"eigen residuals {res_r:.2e}/{res_l:.2e} exceed "
            f"{tol_r:.2e}/{tol_l:.2e} "
            f"(contraction {max(ratio_r, ratio_l):.8f})")
    ratio = max(ratio_r, ratio_l)
    if ratio >= 1 - SPECTRAL_GAP_FLOOR:
        ratio = _probe_contraction(A, beta, h)
        if ratio >= 1 - SPECTRAL_GAP_FLOOR:
            raise NoSpectralGap(f"contraction ratio {ratio:.8f}")
    return RpfTriple(beta=float(beta), h=h, mu=mu,
                     gap_estimate=float(1 - ratio),
                     right_residual=float(res_r), left_residual=float(res_l),
                     discretization=op)


def pressure(op_or_triple, v0=None):
    """log of the leading eigenvalue."""
    triple = (op_or_triple if isinstance(op_or_triple, RpfTriple)
              else rpf_leading_triple(op_or_triple, v0=v0))
    return float(np.log(triple.beta))


def _paired_logbeta(A, warm):
    """Leading log-eigenvalue with left/right pairing and warm starts."""
    _b, v, _r, _c = numerics.power_iteration(A, v0=warm["v"])
    _b, u, _r, _c = numerics.power_iteration(A, left=True, v0=warm["u"])
    warm["v"], warm["u"] = v, u
    return float(np.log(float(u @ (A @ v)) / float(u @ v)))


def pressure_curve(op, s_values):
    """Pressure of one discretization across inverse temperatures.

    Warm-started along the grid; cheaper and less noisy than separate
    full eigensolves per point.
    """
    warm = {"v": None, "u": None}
    out = np.empty(len(s_values))
    for i, s in enumerate(np.asarray(s_values, dtype=float)):
        out[i] = _paired_logbeta(
            op.with_inverse_temperature(float(s)).matrix, warm)
    return out


# ---------------------------------------------------------------------------
# equilibrium measure


@dataclass
class EquilibriumMeasure:
    weights: np.ndarray
    depth: int
    invariance_residual: float


def equilibrium_measure(triple, depth=None):
    """Cell-weight probability vector h*mu with a shift-invariance check.

    The one-step extension mass mu[tgt]*L[tgt,src]*h[src]/beta has both
    marginals equal to the measure itself up to the eigen residuals; the
    reported residual is the worse of the two marginal gaps.
    """
    disc = triple.discretization
    if depth is not None and depth != disc.depth:
        raise ValueError(f"triple was computed at depth {disc.depth}")
    m = triple.h * triple.mu
    m = m / m.sum()
    plus = triple.mu[disc.tgt] * disc.entry_values() \
        * triple.h[disc.src] / triple.beta
    scale = float((triple.h * triple.mu).sum())
    push_tgt = np.bincount(disc.tgt, weights=plus,
                           minlength=disc.n_cells) / scale
    push_src = np.bincount(disc.src, weights=plus,
                           minlength=disc.n_cells) / scale
    residual = max(float(np.abs(push_tgt - m).max()),
                   float(np.abs(push_src - m).max()))
    return EquilibriumMeasure(weights=m, depth=disc.depth,
                              invariance_residual=residual)


# ---------------------------------------------------------------------------
# pressure derivatives


PressureDerivatives = namedtuple(
    "PressureDerivatives", ["integral", "fd1", "variance", "fd2"])


def _cylinder_values(p, depth, values):
    words, _src, _tgt = _structure(p, depth)
    v = np.asarray(values, dtype=float)
    if v.shape == (len(words),):
        return v
    n_base = _transition_of(p).shape[0]
    if v.shape == (n_base,):
        return v[words[:, 0]]
    raise ValueError("values must be per-symbol or per-cylinder")


def pressure_derivatives(p, f, g, m, delta=None):
    """First and second directional pressure derivatives at f along g.

    Returns (integral of g against the equilibrium measure, first central
    difference, autocorrelation variance, second central difference). The
    finite differences use Richardson extrapolation; the variance sums the
    correlation sequence of g under the normalized operator.
    """
    depth = m.depth
    fv = _cylinder_values(p, depth, f)
    gv = _cylinder_values(p, depth, g)
    warm = {"v": None}

    def P(t):
        op = discretize_transfer_operator(p, depth, potential=fv + t * gv)
        triple = rpf_leading_triple(op, v0=warm["v"])
        warm["v"] = triple.h
        return float(np.log(triple.beta))

    p0 = P(0.0)
    if abs(p0) > 1e-10:
        fv = fv - p0

    fd1 = numerics.fd_derivative(P, 0.0, order=1, delta=delta)
    fd2 = numerics.fd_derivative(P, 0.0, order=2, delta=delta)

    op0 = discretize_transfer_operator(p, depth, potential=fv)
    tri = rpf_leading_triple(op0)
    mvec = tri.h * tri.mu
    mvec = mvec / mvec.sum()
    integral = float(gv @ m.weights)
    gbar = float(gv @ mvec)
    gt = gv - gbar
    A = op0.matrix
    beta_h = tri.beta * tri.h
    var = float(mvec @ (gt * gt))
    w = gt.copy()
    for _ in range(GREEN_KUBO_CAP):
        w = (A @ (tri.h * w)) / beta_h
        ck = float(mvec @ (gt * w))
        var += 2 * ck
        if abs(ck) < GREEN_KUBO_FLOOR * max(1.0, var):
            break
    return PressureDerivatives(integral=integral, fd1=fd1.value,
                               variance=var, fd2=fd2.value)


# ---------------------------------------------------------------------------
# dimension roots


@dataclass
class BowenSolveResult:
    s_star: float
    bracket: tuple
    residual: float
    iterations: int
    engine: str
    depth_or_nmax: int
    error_estimate: float

    def to_dict(self, group_ref=None, timing_ms=None):
        out = {
            "engine": self.engine,
            "s_star": self.s_star,
            "residual_or_gap": max(self.residual, self.error_estimate),
            "depth_or_Nmax": self.depth_or_nmax,
            "group_ref": group_ref,
            "timing_ms": timing_ms,
        }
        return out


def _coerce_coding(source):
    if isinstance(source, (mc.SchottkyCoding, mc.IntervalPartition)):
        return source
    if isinstance(source, gm.SchottkyGroup):
        return mc.build_schottky_coding(source)
    if isinstance(source, tuple) and len(source) == 2:
        return mc.build_bowen_series_partition(*source)
    raise TypeError(f"cannot build a coding from {type(source).__name__}")


def _operator_root(p, depth, bracket, rep=None):
    op = discretize_transfer_operator(p, depth, rep=rep)
    warm = {"v": None, "u": None}

    def logbeta(s):
        return _paired_logbeta(op.with_inverse_temperature(s).matrix, warm)

    root, residual, its = numerics.bracketed_root(logbeta, bracket,
                                                  policy=BOWEN_POLICY)
    return root, residual, its


def bowen_dimension(source, engine="operator", resolution=None,
                    bracket=DEFAULT_BRACKET, rep=None, depth=None, tau=None):
    """Dimension of the limit set as the root of the pressure equation.

    Operator engine: adaptive cylinder refinement until two successive
    depths agree to `resolution` (or the depth cap); the reported error
    estimate is the last inter-depth gap. Orbit engine: pass an
    OrbitEnsemble as `source`; the error estimate is the consecutive
    truncation-level gap at the root.
    """
    if engine == "orbit":
        if not isinstance(source, OrbitEnsemble):
            raise TypeError("orbit engine requires an OrbitEnsemble")
        top = source.n_max
        root, residual, its = numerics.bracketed_root(
            lambda s: source.pressure(s, tau=tau, n=top), bracket,
            policy=BOWEN_POLICY)
        if top >= 2:
            gap = abs(source.pressure(root, tau=tau, n=top)
                      - source.pressure(root, tau=tau, n=top - 1))
        else:
            gap = float("inf")
        return BowenSolveResult(s_star=float(root), bracket=tuple(bracket),
                                residual=float(residual), iterations=its,
                                engine="orbit", depth_or_nmax=top,
                                error_estimate=float(gap))
    if engine != "operator":
        raise ValueError(f"unknown engine {engine!r}")
    if tau is not None:
        raise ValueError("operator engine deforms via rep=, not tau=")
    p = _coerce_coding(source)
    resolution = DIMENSION_RESOLUTION if resolution is None else resolution
    if isinstance(p, mc.SchottkyCoding):
        start, cap = 4, 11
    else:
        start, cap = 2, 4
    if depth is not None:
        root, residual, its = _operator_root(p, depth, bracket, rep=rep)
        return BowenSolveResult(s_star=float(root), bracket=tuple(bracket),
                                residual=float(residual), iterations=its,
                                engine="operator", depth_or_nmax=depth,
                                error_estimate=float("nan"))
    prev = None
    total_its = 0
    d = start
    while True:
        root, residual, its = _operator_root(p, d, bracket, rep=rep)
        total_its += its
        if prev is not None:
            gap = abs(root - prev)
            if gap < resolution or d >= cap:
                return BowenSolveResult(
                    s_star=float(root), bracket=tuple(bracket),
                    residual=float(residual), iterations=total_its,
                    engine="operator", depth_or_nmax=d,
                    error_estimate=float(gap))
        prev = root
        d += 1


def collocation_dimension(p, rep=None, depth=4, order=2,
                          bracket=(0.9, 1.1), xtol=1e-13):
    """Dimension by Lagrange collocation in the boundary angle chart.

    Test functions are degree-`order` polynomials in the angle on each
    refined cylinder, so the value is exact in the refinement limit for
    circle-preserving deformations (real shears).  For small bends the
    angle chart is only approximately invariant; the value still converges
    with `depth` and callers should quote depth-refinement gaps as error.
    """
    if not isinstance(p, mc.IntervalPartition):
        raise TypeError("collocation needs an interval partition")
    inv_stack = _interval_inverse_stack(p, rep)
    words, src, tgt = _structure(p, depth)
    M = len(words)
    K = order + 1
    fr = mc.chebyshev_fractions(K)
    width = p.ends - p.starts
    last = words[:, -1]
    th = p.starts[last][:, None] + fr[None, :] * width[last][:, None]
    zn = np.exp(1j * th)
    for col in range(words.shape[1] - 2, -1, -1):
        Mi = inv_stack[p.branch[words[:, col]]]
        zn = (Mi[:, None, 0, 0] * zn + Mi[:, None, 0, 1]) \
            / (Mi[:, None, 1, 0] * zn + Mi[:, None, 1, 1])
    angs = np.angle(zn)
    a0 = angs[src, 0]
    tnod = np.empty((len(src), K))
    tnod[:, 0] = 0.0
    for i in range(1, K):
        tnod[:, i] = mc._wrap(angs[src, i] - a0)
    Mi0 = inv_stack[p.branch[words[src, 0]]]
    nP = len(src)
    ROW = np.empty(K * K * nP, np.int64)
    COL = np.empty(K * K * nP, np.int64)
    LOGV = np.empty(K * K * nP)
    WGT = np.empty(K * K * nP)
    for jn in range(K):
        zt = zn[tgt, jn]
        den = Mi0[:, 1, 0] * zt + Mi0[:, 1, 1]
        y = (Mi0[:, 0, 0] * zt + Mi0[:, 0, 1]) / den
        val = -2.0 * np.log(np.abs(den))
        t = mc._wrap(np.angle(y) - a0)
        for i in range(K):
            w = np.ones(nP)
            for j2 in range(K):
                if j2 != i:
                    w *= (t - tnod[:, j2]) / (tnod[:, i] - tnod[:, j2])
            o = (jn * K + i) * nP
            ROW[o:o + nP] = K * tgt + jn
            COL[o:o + nP] = K * src + i
            LOGV[o:o + nP] = val
            WGT[o:o + nP] = w
    warm = [np.ones(K * M) / (K * M)]

    def logbeta(s):
        L = sp.csr_matrix((np.exp(s * LOGV) * WGT, (ROW, COL)),
                          shape=(K * M, K * M))
        v = warm[0]
        best, stall, lam = np.inf, 0, 1.0
        for _ in range(3000):
            wv = L @ v
            lam = wv.sum()
            wv /= lam
            diff = np.abs(wv - v).max()
            v = wv
            if diff < 1e-15:
                break
            # plateau detection: signed interpolation weights keep the
            # iterate from reaching the clean fixed-point floor
            if diff < 0.7 * best:
                best, stall = diff, 0
            else:
                stall += 1
                if stall >= 12 and best < 1e-12:
                    break
        warm[0] = v
        return float(np.log(lam))

    return float(brentq(logbeta, bracket[0], bracket[1], xtol=xtol))


# ---------------------------------------------------------------------------
# periodic-orbit ensembles


class OrbitLevel:
    __slots__ = ("cells", "prim", "side_index", "base_lengths", "base_sums",
                 "weights", "excluded")

    def __init__(self, cells, prim, side_index, base_lengths, base_sums,
                 weights, excluded):
        self.cells = cells
        self.prim = prim
        self.side_index = side_index
        self.base_lengths = base_lengths
        self.base_sums = base_sums
        self.weights = weights
        self.excluded = excluded


def _batch_products(stack, side_index):
    """Product of branch matrices along each row, first symbol applied
    first, tracked componentwise."""
    count = side_index.shape[0]
    a = np.ones(count, complex)
    b = np.zeros(count, complex)
    c = np.zeros(count, complex)
    d = np.ones(count, complex)
    for t in range(side_index.shape[1]):
        Mt = stack[side_index[:, t]]
        e, f = Mt[:, 0, 0], Mt[:, 0, 1]
        g, h = Mt[:, 1, 0], Mt[:, 1, 1]
        a, b, c, d = e * a + f * c, e * b + f * d, g * a + h * c, g * b + h * d
    return a, b, c, d


def _batch_lengths(a, d):
    tr = a + d
    disc = np.sqrt(tr * tr - 4.0 + 0j)
    lam = (tr + disc) / 2
    small = np.abs(lam) < 1
    lam[small] = (tr[small] - disc[small]) / 2
    return 2.0 * np.abs(np.log(np.abs(lam))), tr


def _expanding_fixed_points(a, b, c, d):
    """Root of the fixed-point quadratic with |c z + d| < 1."""
    disc = np.sqrt((a - d) ** 2 + 4 * b * c + 0j)
    z1 = (a - d + disc) / (2 * c)
    z2 = (a - d - disc) / (2 * c)
    pick2 = np.abs(c * z1 + d) > np.abs(c * z2 + d)
    z = np.where(pick2, z2, z1)
    return z


def _tau_key(taus):
    if taus is None:
        return None
    if np.isscalar(taus):
        taus = [taus]
    return tuple(complex(np.round(complex(t), TAU_KEY_DECIMALS))
                 for t in taus)


class OrbitEnsemble:
    """Periodic itineraries by truncation level with cached length data.

    Each level stores one row per cyclic itinerary class with its
    primitive period; weights are proportional to the primitive period
    times the exponential of the base Birkhoff sum.
    """

    def __init__(self, partition, family, n_max):
        self.partition = partition
        self.family = family
        self.n_max = n_max
        self.levels = {}
        self.birkhoff_worst = 0.0
        self._length_cache = {}
        A = _transition_of(partition)
        schottky = isinstance(partition, mc.SchottkyCoding)
        if schottky:
            stack = np.stack([m.m for m in partition.branch_elements])
        else:
            stack = partition.side_matrices
        self._base_stack = stack
        for n in range(1, n_max + 1):
            cells, prim = mc.periodic_cycle_arrays(A, n)
            side = cells if schottky else partition.branch[cells]
            a, b, c, d = _batch_products(stack, side)
            L0, tr = _batch_lengths(a, d)
            lox = np.abs(tr * tr - 4.0) > 1e-9
            S0, bad_pt = self._base_birkhoff(stack, side, schottky)
            resid = np.where(lox, np.abs(S0 + L0), np.inf)
            keep = lox & ~bad_pt & (resid <= BIRKHOFF_ORBIT_TOL)
            if keep.any():
                self.birkhoff_worst = max(self.birkhoff_worst,
                                          float(resid[keep].max()))
            w = prim[keep] * np.exp(S0[keep] - S0[keep].max())
            w = w / w.sum()
            self.levels[n] = OrbitLevel(
                cells=cells[keep], prim=prim[keep],
                side_index=side[keep], base_lengths=L0[keep],
                base_sums=S0[keep], weights=w,
                excluded=int((~keep).sum()))
        if len(self.levels[n_max].prim) < ENSEMBLE_MIN_ORBITS:
            raise EnsembleTooSmall(
                f"{len(self.levels[n_max].prim)} orbits at level {n_max}")

    def _base_birkhoff(self, stack, side, schottky):
        """Potential sums along periodic points, and an endpoint-proximity
        flag for itineraries whose point lands on a partition break.

        Each orbit point is the expanding fixed point of its own rotated
        word product: walking one point forward instead would amplify
        rounding error by the full derivative along the orbit.
        """
        n = side.shape[1]
        S = np.zeros(side.shape[0])
        bad = np.zeros(side.shape[0], dtype=bool)
        for k in range(n):
            rot = np.concatenate([side[:, k:], side[:, :k]], axis=1)
            a, b, c, d = _batch_products(stack, rot)
            zk = _expanding_fixed_points(
                a, b, np.where(np.abs(c) > 1e-300, c, 1e-300), d)
            Mk = stack[side[:, k]]
            den = Mk[:, 1, 0] * zk + Mk[:, 1, 1]
            S += 2.0 * np.log(np.abs(den))
            if k == 0 and not schottky:
                starts = self.partition.starts
                ang = np.angle(zk) % (2 * np.pi)
                i = np.searchsorted(starts, ang) % len(starts)
                near = np.minimum(np.abs(ang - starts[i]),
                                  np.abs(ang - starts[i - 1]))
                bad = near < mc.BAD_POINT_TOL
        return S, bad

    def level(self, n):
        return self.levels[n]

    def lengths(self, tau=None, n=None):
        """Per-orbit translation lengths at the family parameter."""
        n = self.n_max if n is None else n
        key = (_tau_key(tau), n)
        if key[0] is None or all(t == 0 for t in key[0]):
            return self.levels[n].base_lengths
        if self.family is None or not isinstance(self.family,
                                                 gm.DeformationFamily):
            raise ValueError("a deformation family is required for "
                             "nonzero parameters")
        if key not in self._length_cache:
            rep = self.family.at(tau)
            pres = self.partition.presentation
            stack = np.stack([
                rep.generator(int(pres.side_symbols[j])).m
                for j in range(pres.n_sides)])
            a, _b, _c, d = _batch_products(stack,
                                           self.levels[n].side_index)
            self._length_cache[key] = _batch_lengths(a, d)[0]
        return self._length_cache[key]

    def lengths_for_rep(self, rep, n=None):
        """Per-orbit lengths under an explicit representation (e.g. a
        conjugated copy); pure trace data, no coding rebuild."""
        n = self.n_max if n is None else n
        if isinstance(self.partition, mc.SchottkyCoding):
            raise ValueError("Schottky codings carry their own maps")
        pres = self.partition.presentation
        stack = np.stack([
            rep.generator(int(pres.side_symbols[j])).m
            for j in range(pres.n_sides)])
        a, _b, _c, d = _batch_products(stack, self.levels[n].side_index)
        return _batch_lengths(a, d)[0]

    def _pressure_of_lengths(self, s, L, n):
        lev = self.levels[n]
        x = -s * L + np.log(lev.prim)
        m = x.max()
        return float((m + np.log(np.exp(x - m).sum())) / n)

    def pressure(self, s, tau=None, n=None, rep=None):
        """Truncated pressure at level n: log of the weighted sum of
        e^{-s length} over period-n points, divided by n."""
        n = self.n_max if n is None else n
        if rep is not None:
            L = self.lengths_for_rep(rep, n=n)
        else:
            L = self.lengths(tau=tau, n=n)
        return self._pressure_of_lengths(s, L, n)

    def weighted_average(self, values, n=None):
        """Average of a per-orbit observable under the base Gibbs weights."""
        n = self.n_max if n is None else n
        v = np.asarray(values, dtype=float)
        lev = self.levels[n]
        if v.shape != lev.weights.shape:
            raise ValueError(f"expected {lev.weights.shape[0]} values "
                             f"at level {n}")
        return float(lev.weights @ v)


def orbit_pressure_ensemble(family, tau=None, n_max=None, partition=None):
    """(ensemble, pressure evaluator, weighted-average evaluator).

    The family may be a deformation family (its base coding is built and
    validated structurally here) or a fixed Schottky/interval coding for
    parameter-free use.
    """
    if isinstance(family, gm.DeformationFamily):
        p = partition if partition is not None else \
            mc.build_bowen_series_partition(family.presentation, family.base)
        fam = family
    elif isinstance(family, (mc.SchottkyCoding, mc.IntervalPartition)):
        p = family
        fam = None
    elif isinstance(family, gm.SchottkyGroup):
        p = mc.build_schottky_coding(family)
        fam = None
    else:
        raise TypeError(f"cannot build an ensemble from "
                        f"{type(family).__name__}")
    if n_max is None:
        n_max = 12 if isinstance(p, mc.SchottkyCoding) else 4
    ens = OrbitEnsemble(p, fam, n_max)
    if tau is not None and fam is None and _tau_key(tau) is not None \
            and any(t != 0 for t in _tau_key(tau)):
        raise ValueError("nonzero parameters need a deformation family")
    if tau is not None:
        ens.lengths(tau=tau)

    def pressure_fn(s, tau_=tau, n=None):
        return ens.pressure(s, tau=tau_, n=n)

    return ens, pressure_fn, ens.weighted_average


def livsic_test(ensemble, sums, tol=LIVSIC_TOL):
    """(largest per-symbol-normalized periodic sum, coboundary verdict).

    A coboundary has vanishing sums over every periodic itinerary; the
    verdict compares the worst normalized sum against the tolerance.
    """
    if isinstance(sums, dict):
        items = sums.items()
    else:
        items = [(ensemble.n_max, sums)]
    worst = 0.0
    for n, arr in items:
        a = np.asarray(arr, dtype=float)
        lev = ensemble.levels[n]
        if a.shape != lev.prim.shape:
            raise ValueError(f"expected {lev.prim.shape[0]} sums at "
                             f"level {n}")
        if len(a):
            worst = max(worst, float(np.abs(a).max() / n))
    return worst, worst <= tol
