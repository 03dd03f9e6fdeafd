"""Moebius / SL(2,C) algebra on the Riemann sphere.

Determinant-one 2x2 complex matrices acting by z -> (az+b)/(cz+d), with
classification, eigenvalue/trace data, translation and complex lengths,
fixed points, derivatives, cross-ratios, and displacement of the standard
basepoint of hyperbolic 3-space.
"""

import numpy as np

DET_TOL = 1e-12          # determinant-one residual after normalization
CLASS_TOL = 1e-10        # reality/equality band for classification
FIXED_POINT_TOL = 1e-10  # residual |M(z) - z| at computed fixed points
CONCYCLIC_TOL = 1e-9     # |Im| band for the cross-ratio reality test


class NotLoxodromic(ValueError):
    """Operation requires a loxodromic map."""


class DegenerateConfiguration(ValueError):
    """Cross-ratio of a configuration with repeated points."""


class BranchAmbiguity(ValueError):
    """Adjacent path samples too far apart to continue a branch."""


class ZeroDiagonal(ValueError):
    """Asymptotic expansion needs a nonzero leading diagonal entry."""


class DerivativeAtPole(ValueError):
    """Chart derivative blows up at z = -d/c; image is the infinite point."""

    def __init__(self, image):
        super().__init__("derivative pole: image is the point at infinity")
        self.image = image


class RiemannPoint:
    """Point of the extended complex plane: a finite value or infinity."""

    __slots__ = ("value", "is_infinity")

    def __init__(self, value=None, infinity=False):
        if infinity:
            self.value = None
            self.is_infinity = True
        else:
            v = complex(value)
            if not np.isfinite(v.real) or not np.isfinite(v.imag):
                raise ValueError("finite point required; use RiemannPoint.infinity()")
            self.value = v
            self.is_infinity = False

    @classmethod
    def infinity(cls):
        return cls(infinity=True)

    def __eq__(self, other):
        other = as_point(other)
        if self.is_infinity or other.is_infinity:
            return self.is_infinity and other.is_infinity
        return self.value == other.value

    def __hash__(self):
        return hash(None) if self.is_infinity else hash(self.value)

    def __repr__(self):
        return "RiemannPoint(infinity)" if self.is_infinity \
            else f"RiemannPoint({self.value!r})"


INFINITY = RiemannPoint.infinity()


def as_point(z):
    if isinstance(z, RiemannPoint):
        return z
    return RiemannPoint(z)


class MoebiusMap:
    """Determinant-one complex 2x2 matrix; immutable."""

    __slots__ = ("m",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError("2x2 matrix required")
        if not np.all(np.isfinite(m.view(float))):
            raise ValueError("matrix entries must be finite")
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if det == 0:
            raise ValueError("singular matrix")
        # the determinant of a large-entry matrix cannot be evaluated more
        # accurately than the cancellation floor |entry|^2 eps, so the check
        # scales with the entries
        scale = max(1.0, float(np.abs(m).max()) ** 2 * 1e-3)
        if abs(det - 1) > DET_TOL * scale:
            # already-normalized input is kept bitwise to make serialization
            # round-trips exact
            m = m / np.sqrt(det)
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if abs(det - 1) > DET_TOL * scale:
                raise ValueError(f"normalization failed, |det - 1| = {abs(det - 1):.2e}")
        self.m = m
        self.m.flags.writeable = False

    @property
    def a(self):
        return self.m[0, 0]

    @property
    def b(self):
        return self.m[0, 1]

    @property
    def c(self):
        return self.m[1, 0]

    @property
    def d(self):
        return self.m[1, 1]

    def __call__(self, z):
        return apply_and_derivative(self, z)[0]

    def __repr__(self):
        return f"MoebiusMap([[{self.a:.6g}, {self.b:.6g}], [{self.c:.6g}, {self.d:.6g}]])"


IDENTITY_MAP = MoebiusMap(np.eye(2))


def compose(M, N):
    """Matrix product, renormalized to determinant one."""
    return MoebiusMap(M.m @ N.m)


def inverse(M):
    return MoebiusMap(np.array([[M.m[1, 1], -M.m[0, 1]],
                                [-M.m[1, 0], M.m[0, 0]]]))


def classify(M):
    """One of 'identity', 'elliptic', 'parabolic', 'loxodromic'.

    Conjugation-invariant: decided by the squared trace, with a band of
    CLASS_TOL on the reality and equality tests.
    """
    if min(np.abs(M.m - np.eye(2)).max(), np.abs(M.m + np.eye(2)).max()) <= CLASS_TOL:
        return "identity"
    t2 = (M.a + M.d) ** 2
    if abs(t2 - 4) <= CLASS_TOL:
        return "parabolic"
    if abs(t2.imag) <= CLASS_TOL and -CLASS_TOL <= t2.real < 4:
        return "elliptic"
    return "loxodromic"


def eigenvalue_and_trace(M):
    """(lambda, t) with |lambda| > 1, lambda + 1/lambda = t, Re t >= 0.

    The lift sign is fixed so Re t >= 0 (ties broken toward Im t >= 0);
    path continuity of the sign is handled by complex_length_continuation.
    """
    if classify(M) != "loxodromic":
        raise NotLoxodromic(f"classify gave {classify(M)!r}")
    t = M.a + M.d
    if t.real < 0 or (t.real == 0 and t.imag < 0):
        t = -t
    disc = np.sqrt(t * t - 4)
    lam = (t + disc) / 2
    if abs(lam) < 1:
        lam = (t - disc) / 2
    return lam, t


def translation_length(M):
    """2 log|lambda|; equals log|M'(z)| at the expanding fixed point."""
    lam, _ = eigenvalue_and_trace(M)
    return 2.0 * np.log(abs(lam))


def complex_length_continuation(path):
    """Complex lengths along a path of loxodromic maps.

    Re = 2 log|lambda|; Im continued from 0 at the first sample, which must
    have real positive lambda^2. Raises BranchAmbiguity when the argument of
    lambda^2 jumps by pi or more between samples.
    """
    out = []
    theta = None
    for k, M in enumerate(path):
        lam, _ = eigenvalue_and_trace(M)
        mu = lam * lam
        ang = np.angle(mu)
        if theta is None:
            if abs(ang) > 1e-8:
                raise ValueError("path must start at a map with real positive lambda^2")
            theta = 0.0
        else:
            step = (ang - np.angle(prev_mu) + np.pi) % (2 * np.pi) - np.pi
            if abs(step) >= np.pi - 1e-12:
                raise BranchAmbiguity(f"argument jump {step:+.3f} at sample {k}")
            theta += step
        prev_mu = mu
        out.append(np.log(abs(mu)) + 1j * theta)
    return out


def _multiplier(M, p):
    """Derivative of M at a fixed point, in a chart regular there."""
    if p.is_infinity:
        # chart w = 1/z: multiplier d/a
        return M.d / M.a
    return 1.0 / (M.c * p.value + M.d) ** 2


def fixed_points(M):
    """(expanding, attracting) fixed points of a loxodromic map."""
    if classify(M) != "loxodromic":
        raise NotLoxodromic(f"classify gave {classify(M)!r}")
    a, b, c, d = M.a, M.b, M.c, M.d
    scale = max(abs(a), abs(b), abs(c), abs(d))
    if abs(c) <= 1e-14 * scale:
        pts = [INFINITY, RiemannPoint(b / (d - a))]
    else:
        disc = np.sqrt((a + d) ** 2 - 4)
        pts = [RiemannPoint(((a - d) + disc) / (2 * c)),
               RiemannPoint(((a - d) - disc) / (2 * c))]
    pts.sort(key=lambda p: -abs(_multiplier(M, p)))
    if not abs(_multiplier(M, pts[0])) > 1 > abs(_multiplier(M, pts[1])):
        raise NotLoxodromic("multipliers do not straddle 1")
    return pts[0], pts[1]


def apply_and_derivative(M, z):
    """(M(z), M'(z)) with M'(z) = 1/(cz+d)^2; infinity via limits."""
    p = as_point(z)
    a, b, c, d = M.a, M.b, M.c, M.d
    if p.is_infinity:
        if c == 0:
            return INFINITY, 1.0 / d ** 2
        return RiemannPoint(a / c), 0.0 + 0.0j
    den = c * p.value + d
    if den == 0:
        raise DerivativeAtPole(INFINITY)
    return RiemannPoint((a * p.value + b) / den), 1.0 / den ** 2


def cross_ratio(a, z, b, w):
    """(a - b)(z - w) / ((a - w)(z - b)), with limits at infinity.

    Real output (|Im| <= CONCYCLIC_TOL) detects concyclic configurations.
    """
    pts = [as_point(q) for q in (a, z, b, w)]
    for i in range(4):
        for j in range(i + 1, 4):
            if pts[i] == pts[j]:
                raise DegenerateConfiguration("repeated point in cross-ratio")
    pa, pz, pb, pw = pts
    if pa.is_infinity:
        return (pz.value - pw.value) / (pz.value - pb.value)
    if pz.is_infinity:
        return (pa.value - pb.value) / (pa.value - pw.value)
    if pb.is_infinity:
        return (pz.value - pw.value) / (pa.value - pw.value)
    if pw.is_infinity:
        return (pa.value - pb.value) / (pz.value - pb.value)
    return ((pa.value - pb.value) * (pz.value - pw.value)
            / ((pa.value - pw.value) * (pz.value - pb.value)))


def h3_displacement(M):
    """Hyperbolic distance moved by the basepoint above 0 at height 1.

    cosh d = (|a|^2 + |b|^2 + |c|^2 + |d|^2) / 2.
    """
    s = (np.abs(M.m) ** 2).sum() / 2
    return float(np.arccosh(max(s, 1.0)))


def eigenvalue_asymptotic_mu_n(lam_alpha, a, d, n):
    """Two-term large-eigenvalue approximation for diag(l, 1/l)^n @ B.

    B has diagonal entries a, d. Returns l^n a (1 + l^(-2n) (ad - 1)/a^2);
    the neglected remainder is O(l^(-4n)) relative.
    """
    lam_alpha = complex(lam_alpha)
    a = complex(a)
    d = complex(d)
    if a == 0:
        raise ZeroDiagonal("leading diagonal entry of B must be nonzero")
    if not abs(lam_alpha) > 1:
        raise ValueError("|lam_alpha| > 1 required")
    if n < 1:
        raise ValueError("n >= 1 required")
    return lam_alpha ** n * a * (1 + lam_alpha ** (-2 * n) * (a * d - 1) / a ** 2)
