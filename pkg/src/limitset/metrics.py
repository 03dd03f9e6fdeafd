"""Quadratic forms and derivative scans along deformation families.

Every form here is a second derivative of spectral data (dimension,
per-orbit lengths, mean-length ratios) along directions in the real
parameter chart of a deformation family.  The workhorse estimator is a
frozen ensemble of periodic itineraries: per-orbit lengths are exact
trace data at every chart point, so parameter finite differences are
noiseless up to rounding and the dominant uncertainty is the truncation
level, which is reported as an explicit gap between consecutive levels.
Path scans additionally support the collocation and transported-operator
dimension engines, with depth-refinement gaps playing the same role.
"""

import dataclasses
import math

import numpy as np

from . import group_models as gm
from . import markov_coding as mc
from . import mobius
from . import numerics
from . import thermo as th

FD_BASE_STEP = 1e-2         # first/second derivative base step, Richardson pairs with /2
HESSIAN_STEP = 5e-2         # chart Hessian entries; smaller steps hit level noise
FD_TOL_FLOOR = 1e-8
ZERO_THRESHOLD_FACTOR = 5.0   # Hessian eigenvalue null band, times entry error
NULL_VERDICT_FACTOR = 3.0     # form value consistent with zero, times error bar
CRITICAL_FACTOR = 3.0         # gradient resolvably nonzero, times FD tolerance
CHART_KEY_DECIMALS = 12
DIMENSION_BRACKET = (0.5, 2.0)
DEFAULT_SCAN_DEPTH = 3
CSV_HEADER = "tau,h,F,hF"

_TAGS = ("shear", "bend", "generic")


class NonLoxodromicOnPath(RuntimeError):
    """Every requested conjugacy class degenerated on the FD stencil."""


class NotCritical(ValueError):
    """Hessian requested where the gradient is resolvably nonzero."""


def chart_parameters(x):
    """Complex per-curve parameters from an interleaved real chart point."""
    x = np.asarray(x, dtype=float)
    return [complex(x[2 * i], x[2 * i + 1]) for i in range(x.size // 2)]


class TangentVector:
    """Unit direction in the real chart of a deformation family.

    The chart interleaves the per-curve complex parameters: component 2i
    is the real (shear) part and component 2i+1 the imaginary (bend)
    part of parameter i.  A "shear" tag asserts all bend components are
    zero and vice versa; "generic" asserts nothing.
    """

    def __init__(self, family, direction, tag="generic", basepoint=None):
        d = np.asarray(direction, dtype=float)
        if d.shape != (family.dim,):
            raise ValueError(f"direction must have {family.dim} components")
        nrm = float(np.linalg.norm(d))
        if nrm == 0.0:
            raise ValueError("direction must be nonzero")
        if tag not in _TAGS:
            raise ValueError(f"unknown tag {tag!r}")
        d = d / nrm
        if tag == "shear" and np.any(d[1::2] != 0.0):
            raise ValueError("shear direction has a bend component")
        if tag == "bend" and np.any(d[0::2] != 0.0):
            raise ValueError("bend direction has a shear component")
        if basepoint is None:
            basepoint = np.zeros(family.dim)
        b = np.asarray(basepoint, dtype=float)
        if b.shape != (family.dim,):
            raise ValueError(f"basepoint must have {family.dim} components")
        self.family = family
        self.direction = d
        self.tag = tag
        self.basepoint = b.copy()

    def point_at(self, t):
        return self.basepoint + float(t) * self.direction

    def rotated(self):
        """Quarter turn in every complex parameter plane.

        Multiplies each per-curve parameter by i, so shears trade places
        with bends over the same curves."""
        r = np.empty_like(self.direction)
        r[0::2] = -self.direction[1::2]
        r[1::2] = self.direction[0::2]
        tag = {"shear": "bend", "bend": "shear"}.get(self.tag, "generic")
        return TangentVector(self.family, r, tag=tag, basepoint=self.basepoint)


def shear_vector(family, curve=0, basepoint=None):
    d = np.zeros(family.dim)
    d[2 * curve] = 1.0
    return TangentVector(family, d, tag="shear", basepoint=basepoint)


def bend_vector(family, curve=0, basepoint=None):
    d = np.zeros(family.dim)
    d[2 * curve + 1] = 1.0
    return TangentVector(family, d, tag="bend", basepoint=basepoint)


def _check_direction(family, v):
    if v.family is not family:
        raise ValueError("direction was built for a different family")


class _Frame:
    """Cached per-level length and dimension data at chart points.

    The dimension at a point is the root of the truncated pressure on
    the point's own length data; averages always use the undeformed base
    weights, so deformations only move the per-orbit lengths.
    """

    def __init__(self, family, ensemble, basepoint):
        if isinstance(ensemble.partition, mc.SchottkyCoding):
            raise ValueError("metric forms need a surface-group ensemble")
        self.family = family
        self.ensemble = ensemble
        self.base_x = np.asarray(basepoint, dtype=float)
        self._lengths = {}
        self._dims = {}
        self._weights = {}

    def _key(self, x):
        return tuple(np.round(np.asarray(x, dtype=float), CHART_KEY_DECIMALS))

    def lengths(self, x, n):
        k = (self._key(x), n)
        if k not in self._lengths:
            x = np.asarray(x, dtype=float)
            if not x.any():
                L = self.ensemble.level(n).base_lengths
            else:
                rep = self.family.at(chart_parameters(x))
                L = self.ensemble.lengths_for_rep(rep, n)
            self._lengths[k] = L
        return self._lengths[k]

    def dim(self, x, n):
        k = (self._key(x), n)
        if k not in self._dims:
            L = self.lengths(x, n)
            root, _, _ = numerics.bracketed_root(
                lambda s: self.ensemble._pressure_of_lengths(s, L, n),
                DIMENSION_BRACKET)
            self._dims[k] = float(root)
        return self._dims[k]

    def weights(self, n):
        """Averaging weights at the frame basepoint.

        At the undeformed base the stored level weights are the Gibbs
        weights of the exactly normalized base potential, which is the
        best available measure there; reweighting to the truncated root
        would only erase the refinement trend the error analysis leans
        on. A deformed basepoint has no exact normalization, so it gets
        the Gibbs weights at its own truncated root, which also makes
        the two quadratic-form routes agree at finite level.
        """
        if not self.base_x.any():
            return self.ensemble.level(n).weights
        if n not in self._weights:
            L = self.lengths(self.base_x, n)
            prim = self.ensemble.level(n).prim
            g = np.log(prim) - self.dim(self.base_x, n) * L
            w = np.exp(g - g.max())
            self._weights[n] = w / w.sum()
        return self._weights[n]

    def ps_ratio(self, x, n):
        """Weighted mean length at x over the same mean at the basepoint."""
        w = self.weights(n)
        return float(w @ self.lengths(x, n)) / float(w @ self.lengths(self.base_x, n))


def _stencil(delta):
    return (0.0, 0.5 * delta, -0.5 * delta, delta, -delta,
            2.0 * delta, -2.0 * delta)


def _second5(f, h):
    # five-point second derivative on cached stencil values
    return (-f[2.0 * h] + 16.0 * f[h] - 30.0 * f[0.0]
            + 16.0 * f[-h] - f[-2.0 * h]) / (12.0 * h * h)


def _rich_first(f, h):
    """(Richardson first derivative, coarse-fine gap) from stencil values."""
    coarse = (f[h] - f[-h]) / (2.0 * h)
    fine = (f[0.5 * h] - f[-0.5 * h]) / h
    return (4.0 * fine - coarse) / 3.0, np.abs(fine - coarse)


@dataclasses.dataclass
class MetricEvaluation:
    """One direction's quadratic-form values with explicit error bars.

    `value` is the curvature-route number (the variance route is exactly
    zero on symmetry-null directions, so it cannot carry a refinement
    trend); `error` is the max of the FD gap, the two-route residual and
    the truncation-level gap. Extension fields stay None unless the
    extension form was requested.
    """
    basepoint: np.ndarray
    direction: np.ndarray
    tag: str
    level: int
    fd_step: float
    h_value: float
    variance_form: float
    curvature_form: float
    form_gap: float
    level_values: tuple
    value: float
    error: float
    extension_value: float = None
    extension_decomposed: float = None
    extension_error: float = None


def _pressure_forms(frame, v, n, delta):
    """Both quadratic-form routes at one truncation level.

    Variance route: weighted variance of the per-orbit potential's first
    parameter derivative. Curvature route: minus the weighted mean of its
    second derivative. Both divide by the mean of dimension times length.
    """
    w = frame.weights(n)
    L0 = frame.lengths(frame.base_x, n)
    denom = frame.dim(frame.base_x, n) * float(w @ L0)
    ph = {t: -frame.dim(v.point_at(t), n) * frame.lengths(v.point_at(t), n)
          for t in _stencil(delta)}
    dot, _ = _rich_first(ph, delta)
    coarse = (ph[delta] - ph[-delta]) / (2.0 * delta)
    fine = (ph[0.5 * delta] - ph[-0.5 * delta]) / delta

    def central_var(D):
        m = float(w @ D)
        return float(w @ ((D - m) ** 2))

    var = central_var(dot) / denom
    fd_var = abs(central_var(fine) - central_var(coarse)) / denom
    acc_coarse = -float(w @ _second5(ph, delta)) / denom
    acc_fine = -float(w @ _second5(ph, 0.5 * delta)) / denom
    fd_acc = abs(acc_fine - acc_coarse)
    return {"variance": var, "curvature": acc_fine,
            "form_gap": abs(var - acc_fine),
            "fd": max(fd_var, fd_acc), "dot": dot}


def _resolve_level(ensemble, level):
    top = ensemble.n_max if level is None else int(level)
    if top not in ensemble.levels or top - 1 not in ensemble.levels:
        raise ValueError("need two consecutive truncation levels")
    return top


def _pressure_evaluation(family, v, ensemble, level, delta, frame=None):
    _check_direction(family, v)
    top = _resolve_level(ensemble, level)
    if frame is None:
        frame = _Frame(family, ensemble, v.basepoint)
    prev = _pressure_forms(frame, v, top - 1, delta)
    cur = _pressure_forms(frame, v, top, delta)
    level_gap = abs(cur["curvature"] - prev["curvature"])
    err = max(cur["fd"], cur["form_gap"], level_gap, FD_TOL_FLOOR)
    ev = MetricEvaluation(
        basepoint=v.basepoint.copy(), direction=v.direction.copy(),
        tag=v.tag, level=top, fd_step=delta,
        h_value=frame.dim(frame.base_x, top),
        variance_form=cur["variance"], curvature_form=cur["curvature"],
        form_gap=cur["form_gap"],
        level_values=((top - 1, prev["curvature"]), (top, cur["curvature"])),
        value=cur["curvature"], error=err)
    return ev, frame, cur["dot"]


def pressure_metric(family, direction, ensemble, level=None,
                    delta=FD_BASE_STEP):
    """Second-derivative form of the normalized orbit potential.

    Evaluates the variance of the first parameter derivative of the
    per-orbit potential and minus the mean of its second derivative
    against the self-consistent truncation-level measure; the residual
    between the two routes is reported as form_gap and folded into the
    error bar together with FD and truncation-level gaps.
    """
    ev, _, _ = _pressure_evaluation(family, direction, ensemble, level, delta)
    return ev


def extension_metric(family, direction, ensemble, level=None,
                     delta=FD_BASE_STEP):
    """Quadratic form of dimension times the mean-length ratio.

    The direct route differentiates the product along the direction; the
    decomposed route assembles h''F + 2h'F' + hF'' from separate FDs of
    the factors. Their residual enters the error bar together with the
    FD and truncation-level gaps. Pressure-form fields are filled on the
    same returned record.
    """
    v = direction
    ev, frame, _ = _pressure_evaluation(family, v, ensemble, level, delta)
    top = ev.level
    direct = {}
    fd_gap = 0.0
    for n in (top - 1, top):
        hf = {t: frame.dim(v.point_at(t), n) * frame.ps_ratio(v.point_at(t), n)
              for t in _stencil(delta)}
        g_coarse = _second5(hf, delta)
        g_fine = _second5(hf, 0.5 * delta)
        direct[n] = g_fine
        if n == top:
            fd_gap = abs(g_fine - g_coarse)
    hs = {t: frame.dim(v.point_at(t), top) for t in _stencil(delta)}
    fs = {t: frame.ps_ratio(v.point_at(t), top) for t in _stencil(delta)}
    h1, _ = _rich_first(hs, delta)
    f1, _ = _rich_first(fs, delta)
    decomposed = (_second5(hs, 0.5 * delta) * fs[0.0]
                  + 2.0 * h1 * f1
                  + hs[0.0] * _second5(fs, 0.5 * delta))
    err = max(abs(direct[top] - decomposed), fd_gap,
              abs(direct[top] - direct[top - 1]), FD_TOL_FLOOR)
    ev.extension_value = float(direct[top])
    ev.extension_decomposed = float(decomposed)
    ev.extension_error = float(err)
    return ev


@dataclasses.dataclass
class ConformalCheck:
    evaluation: MetricEvaluation
    scaled_pressure: float      # dimension times the pressure form
    gap: float                  # relative residual, 0 when both vanish
    combined_error: float


def conformal_equivalence_check(family, direction, ensemble, level=None,
                                delta=FD_BASE_STEP):
    """Relative residual between the extension form and h times the
    pressure form along one direction.

    The comparison uses the variance route of the pressure form: mean
    curvature and the direct product derivative are linked algebraically
    through the shared averaging weights, so only the fluctuation route
    gives the identity independent content.
    """
    ev = extension_metric(family, direction, ensemble, level, delta)
    hw = ev.h_value * ev.variance_form
    scale = max(abs(ev.extension_value), abs(hw))
    gap = 0.0 if scale == 0.0 else abs(ev.extension_value - hw) / scale
    combined = ev.extension_error + ev.h_value * ev.error
    return ConformalCheck(evaluation=ev, scaled_pressure=float(hw),
                          gap=float(gap), combined_error=float(combined))


@dataclasses.dataclass
class BendIdentityReport:
    shear_direction: np.ndarray
    bend_direction: np.ndarray
    bend_hessian: float
    bend_hessian_error: float
    length_curvature: float
    length_curvature_error: float
    gap: float
    antisymmetry_residual: float
    antisymmetry_error: float
    h_engine: str
    level: int
    depth: int


def _resolve_partition(family, ensemble, partition):
    if partition is not None:
        return partition
    if ensemble is not None:
        return ensemble.partition
    return mc.build_bowen_series_partition(family.presentation, family.base)


def bend_hessian_identity(family, direction, ensemble, level=None,
                          h_engine="collocation", depth=DEFAULT_SCAN_DEPTH,
                          delta=FD_BASE_STEP, partition=None):
    """Dimension Hessian along the rotated direction against the length
    curvature along the original shear.

    The quarter turn carries a shear onto the bend supported on the same
    curves; the bend-direction second derivative of the dimension should
    reproduce the second derivative of the mean-length ratio along the
    original shear. Also reports the antisymmetry residual, the sum of
    the length curvatures along the direction and its rotation, which
    vanishes because per-orbit complex lengths depend holomorphically on
    the parameters.
    """
    v = direction
    _check_direction(family, v)
    if v.tag != "shear":
        raise ValueError("identity needs a shear direction")
    jv = v.rotated()
    frame = _Frame(family, ensemble, v.basepoint)
    top = _resolve_level(ensemble, level)

    def length_curvature(w):
        vals = {}
        fd = 0.0
        for n in (top - 1, top):
            fs = {t: frame.ps_ratio(w.point_at(t), n) for t in _stencil(delta)}
            fine = _second5(fs, 0.5 * delta)
            vals[n] = fine
            if n == top:
                fd = abs(fine - _second5(fs, delta))
        err = max(fd, abs(vals[top] - vals[top - 1]), FD_TOL_FLOOR)
        return float(vals[top]), float(err)

    f2_shear, f2_shear_err = length_curvature(v)
    f2_bend, f2_bend_err = length_curvature(jv)

    if h_engine == "collocation":
        part = _resolve_partition(family, ensemble, partition)

        def hval(t, d):
            rep = family.at(chart_parameters(jv.point_at(t)))
            return th.collocation_dimension(part, rep=rep, depth=d)

        hs = {t: hval(t, depth) for t in _stencil(delta)}
        hp = {t: hval(t, depth - 1) for t in _stencil(delta)}
        bh = _second5(hs, 0.5 * delta)
        bh_err = max(abs(bh - _second5(hp, 0.5 * delta)),
                     abs(bh - _second5(hs, delta)), FD_TOL_FLOOR)
    elif h_engine == "orbit":
        vals = {}
        fd = 0.0
        for n in (top - 1, top):
            hs = {t: frame.dim(jv.point_at(t), n) for t in _stencil(delta)}
            fine = _second5(hs, 0.5 * delta)
            vals[n] = fine
            if n == top:
                fd = abs(fine - _second5(hs, delta))
        bh = vals[top]
        bh_err = max(fd, abs(vals[top] - vals[top - 1]), FD_TOL_FLOOR)
    else:
        raise ValueError(f"unknown h_engine {h_engine!r}")

    scale = max(abs(bh), abs(f2_shear))
    gap = 0.0 if scale == 0.0 else abs(bh - f2_shear) / scale
    return BendIdentityReport(
        shear_direction=v.direction.copy(), bend_direction=jv.direction.copy(),
        bend_hessian=float(bh), bend_hessian_error=float(bh_err),
        length_curvature=f2_shear, length_curvature_error=f2_shear_err,
        gap=float(gap),
        antisymmetry_residual=float(f2_bend + f2_shear),
        antisymmetry_error=float(f2_bend_err + f2_shear_err),
        h_engine=h_engine, level=top, depth=depth)


def _as_chart(family, tau):
    """Chart point from a scalar, complex vector or real chart vector."""
    a = np.asarray(tau)
    if a.ndim == 0:
        if family.dim != 2:
            raise ValueError("scalar parameter needs a one-curve family")
        z = complex(a)
        return np.array([z.real, z.imag])
    if np.iscomplexobj(a):
        if a.shape != (family.dim // 2,):
            raise ValueError(f"expected {family.dim // 2} complex parameters")
        out = np.empty(family.dim)
        out[0::2] = a.real
        out[1::2] = a.imag
        return out
    a = a.astype(float)
    if a.shape != (family.dim,):
        raise ValueError(f"expected {family.dim} chart components")
    return a


def ps_length_function(family, tau, ensemble, level=None, basepoint=None):
    """Weighted mean translation length at a chart point, normalized to
    exactly one at the basepoint."""
    base = np.zeros(family.dim) if basepoint is None else \
        np.asarray(basepoint, dtype=float)
    frame = _Frame(family, ensemble, base)
    n = _resolve_level(ensemble, level)
    return frame.ps_ratio(_as_chart(family, tau), n)


@dataclasses.dataclass
class PSLengthCurve:
    parameters: np.ndarray
    values: np.ndarray
    level_gaps: np.ndarray
    level: int
    basepoint: np.ndarray
    direction: np.ndarray
    tag: str


def ps_length_curve(family, direction, parameters, ensemble, level=None):
    """Normalized mean-length ratio along a chart path, with per-point
    truncation-level gaps."""
    v = direction
    _check_direction(family, v)
    top = _resolve_level(ensemble, level)
    frame = _Frame(family, ensemble, v.basepoint)
    ts = np.asarray(parameters, dtype=float)
    vals = np.array([frame.ps_ratio(v.point_at(t), top) for t in ts])
    prev = np.array([frame.ps_ratio(v.point_at(t), top - 1) for t in ts])
    return PSLengthCurve(parameters=ts.copy(), values=vals,
                         level_gaps=np.abs(vals - prev), level=top,
                         basepoint=v.basepoint.copy(),
                         direction=v.direction.copy(), tag=v.tag)


@dataclasses.dataclass
class DimensionPathScan:
    parameters: np.ndarray
    values: np.ndarray
    refinement_gaps: np.ndarray
    engine: str
    resolution: int             # depth (collocation/operator) or level (orbit)
    basepoint: np.ndarray
    direction: np.ndarray
    tag: str
    f_values: np.ndarray = None


def hausdorff_path_scan(family, direction, parameters, engine="collocation",
                        depth=DEFAULT_SCAN_DEPTH, ensemble=None, level=None,
                        partition=None):
    """Dimension along a one-parameter chart path with per-point
    refinement gaps.

    Engines: "collocation" solves the pressure equation by boundary-chart
    collocation at `depth` and `depth - 1`; "operator" runs the
    transported transfer-operator ladder; "orbit" roots the truncated
    periodic-sum pressure and needs an ensemble. When an ensemble over an
    interval partition is available the normalized mean-length ratio is
    attached as f_values.
    """
    v = direction
    _check_direction(family, v)
    ts = np.asarray(parameters, dtype=float)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("parameters must be a nonempty 1-D array")
    points = [v.point_at(t) for t in ts]
    vals = np.empty(ts.size)
    gaps = np.empty(ts.size)
    if engine in ("collocation", "operator"):
        part = _resolve_partition(family, ensemble, partition)
        for i, x in enumerate(points):
            rep = family.at(chart_parameters(x)) if x.any() else None
            if engine == "collocation":
                cur = th.collocation_dimension(part, rep=rep, depth=depth)
                coarse = th.collocation_dimension(part, rep=rep,
                                                  depth=depth - 1)
                vals[i] = cur
                gaps[i] = abs(cur - coarse)
            else:
                r = th.bowen_dimension(part, engine="operator", rep=rep,
                                       depth=depth)
                vals[i] = r.s_star
                gaps[i] = r.error_estimate
        resolution = depth
    elif engine == "orbit":
        if ensemble is None:
            raise ValueError("orbit engine needs an ensemble")
        top = _resolve_level(ensemble, level)
        frame = _Frame(family, ensemble, v.basepoint)
        for i, x in enumerate(points):
            vals[i] = frame.dim(x, top)
            gaps[i] = abs(vals[i] - frame.dim(x, top - 1))
        resolution = top
    else:
        raise ValueError(f"unknown engine {engine!r}")
    f_values = None
    if ensemble is not None and \
            not isinstance(ensemble.partition, mc.SchottkyCoding):
        top = _resolve_level(ensemble, level)
        frame = _Frame(family, ensemble, v.basepoint)
        f_values = np.array([frame.ps_ratio(x, top) for x in points])
    return DimensionPathScan(parameters=ts.copy(), values=vals,
                             refinement_gaps=gaps, engine=engine,
                             resolution=resolution,
                             basepoint=v.basepoint.copy(),
                             direction=v.direction.copy(), tag=v.tag,
                             f_values=f_values)


def write_path_scan_csv(scan, destination):
    """Write a scan as tau,h,F,hF rows; the scan must carry f_values."""
    if scan.f_values is None:
        raise ValueError("scan carries no mean-length ratios")
    lines = [CSV_HEADER]
    for t, hv, fv in zip(scan.parameters, scan.values, scan.f_values):
        row = (t, hv, fv, hv * fv)
        lines.append(",".join("%.12e" % u for u in row))
    text = "\n".join(lines) + "\n"
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w") as fh:
            fh.write(text)


@dataclasses.dataclass
class LengthDerivativeScan:
    words: tuple
    base_lengths: np.ndarray
    length_derivative: np.ndarray         # per-class dL/dt
    scaled_length_derivative: np.ndarray  # d(h L)/dt
    lambda_ratio_real: np.ndarray         # Re of eigenvalue log-derivative
    proportionality_residual: np.ndarray  # |L' - k_hat L|
    k_hat: float
    h_value: float
    h_prime: float
    fd_tolerance: float
    skipped: tuple
    delta: float


def length_derivative_scan(family, direction, classes, ensemble=None,
                           level=None, delta=FD_BASE_STEP, h_engine="orbit",
                           depth=DEFAULT_SCAN_DEPTH, partition=None):
    """Per-class first derivatives of lengths along a chart direction.

    For each conjugacy class the translation length and the eigenvalue
    log-derivative are differenced on a shared four-point stencil; the
    scaled-length derivative adds the dimension's own rate, and k_hat is
    minus that rate over the dimension, the proportionality constant a
    conformal direction would impose on every class at once. Classes
    that stop being loxodromic anywhere on the stencil are skipped and
    reported; if none survive the scan raises NonLoxodromicOnPath.
    """
    v = direction
    _check_direction(family, v)
    offsets = (delta, -delta, 0.5 * delta, -0.5 * delta)
    reps = {t: family.at(chart_parameters(v.point_at(t))) for t in offsets}
    rep0 = family.at(chart_parameters(v.basepoint))

    if h_engine == "orbit":
        if ensemble is None:
            raise ValueError("orbit h_engine needs an ensemble")
        top = _resolve_level(ensemble, level)
        frame = _Frame(family, ensemble, v.basepoint)
        hs = {t: frame.dim(v.point_at(t), top) for t in (0.0,) + offsets}
        hp = {t: frame.dim(v.point_at(t), top - 1) for t in (0.0,) + offsets}
        h_prime, h_gap = _rich_first(hs, delta)
        h_prime_prev, _ = _rich_first(hp, delta)
        h_value = hs[0.0]
        h_tol = max(float(h_gap), abs(h_prime - h_prime_prev), FD_TOL_FLOOR)
    elif h_engine == "collocation":
        part = _resolve_partition(family, ensemble, partition)

        def hval(t, d):
            rep = family.at(chart_parameters(v.point_at(t)))
            return th.collocation_dimension(part, rep=rep, depth=d)

        hs = {t: hval(t, depth) for t in (0.0,) + offsets}
        hp = {t: hval(t, depth - 1) for t in (0.0,) + offsets}
        h_prime, h_gap = _rich_first(hs, delta)
        h_prime_prev, _ = _rich_first(hp, delta)
        h_value = hs[0.0]
        h_tol = max(float(h_gap), abs(h_prime - h_prime_prev), FD_TOL_FLOOR)
    else:
        raise ValueError(f"unknown h_engine {h_engine!r}")
    h_prime = float(h_prime)
    k_hat = -h_prime / h_value

    kept = []
    base_L = []
    dL = []
    dlam = []
    fd_worst = 0.0
    skipped = []
    for w in classes:
        letters = tuple(w.letters) if hasattr(w, "letters") else tuple(w)
        try:
            L0 = mobius.translation_length(gm.evaluate_word(rep0, letters))
            Ls = {}
            lams = {}
            for t in offsets:
                M = gm.evaluate_word(reps[t], letters)
                lam, _ = mobius.eigenvalue_and_trace(M)
                Ls[t] = mobius.translation_length(M)
                lams[t] = lam
        except mobius.NotLoxodromic as exc:
            skipped.append((letters, str(exc)))
            continue
        coarse = (Ls[delta] - Ls[-delta]) / (2.0 * delta)
        fine = (Ls[0.5 * delta] - Ls[-0.5 * delta]) / delta
        d1 = (4.0 * fine - coarse) / 3.0
        fd_worst = max(fd_worst, abs(fine - coarse))
        lc = (np.log(lams[delta]) - np.log(lams[-delta])) / (2.0 * delta)
        lf = (np.log(lams[0.5 * delta]) - np.log(lams[-0.5 * delta])) / delta
        kept.append(letters)
        base_L.append(L0)
        dL.append(d1)
        dlam.append(((4.0 * lf - lc) / 3.0).real)
    if not kept:
        raise NonLoxodromicOnPath("no class stayed loxodromic on the stencil")
    base_L = np.array(base_L)
    dL = np.array(dL)
    fd_tol = max(fd_worst, h_tol * float(base_L.max()), FD_TOL_FLOOR)
    return LengthDerivativeScan(
        words=tuple(kept), base_lengths=base_L, length_derivative=dL,
        scaled_length_derivative=h_prime * base_L + h_value * dL,
        lambda_ratio_real=np.array(dlam),
        proportionality_residual=np.abs(dL - k_hat * base_L),
        k_hat=float(k_hat), h_value=float(h_value), h_prime=h_prime,
        fd_tolerance=float(fd_tol), skipped=tuple(skipped),
        delta=float(delta))


@dataclasses.dataclass
class HessianSignature:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    inertia: tuple              # (positive, negative, zero) eigenvalue counts
    zero_threshold: float
    entry_errors: np.ndarray
    gradient: np.ndarray
    gradient_tolerance: np.ndarray
    quantity: str
    engine: str
    basepoint: np.ndarray
    step: float


def hessian_signature(family, chart, quantity="dimension", ensemble=None,
                      level=None, engine="orbit", step=HESSIAN_STEP,
                      gradient_step=FD_BASE_STEP, depth=DEFAULT_SCAN_DEPTH,
                      partition=None):
    """Inertia of the Hessian of a scalar quantity over a chart of
    directions.

    quantity "dimension" is the Hausdorff dimension; "scaled_length" is
    dimension times the mean-length ratio (the product whose Hessian the
    extension form diagonalizes). Entries use five-point diagonals and
    four-point mixed stencils, Richardson-extrapolated; each entry's
    error is the max of its FD gap and its refinement gap, and
    eigenvalues within ZERO_THRESHOLD_FACTOR times the worst entry error
    count as zero. The gradient is prechecked at gradient_step and
    NotCritical is raised if any component is resolvably nonzero.
    """
    if not chart:
        raise ValueError("chart must contain at least one direction")
    for v in chart:
        _check_direction(family, v)
    base = chart[0].basepoint
    for v in chart[1:]:
        if not np.array_equal(v.basepoint, base):
            raise ValueError("chart directions must share a basepoint")
    if quantity not in ("dimension", "scaled_length"):
        raise ValueError(f"unknown quantity {quantity!r}")
    if quantity == "scaled_length" and ensemble is None:
        raise ValueError("scaled_length needs an ensemble")

    if engine == "orbit":
        if ensemble is None:
            raise ValueError("orbit engine needs an ensemble")
        top = _resolve_level(ensemble, level)
        frame = _Frame(family, ensemble, base)
        slots = (top - 1, top)

        def make_q(slot):
            if quantity == "dimension":
                return lambda x: frame.dim(x, slot)
            return lambda x: frame.dim(x, slot) * frame.ps_ratio(x, slot)
    elif engine == "collocation":
        part = _resolve_partition(family, ensemble, partition)
        slots = (depth - 1, depth)
        if quantity == "scaled_length":
            ps_top = _resolve_level(ensemble, level)
            frame = _Frame(family, ensemble, base)

        def make_q(slot):
            def q(x):
                rep = family.at(chart_parameters(x)) if x.any() else None
                val = th.collocation_dimension(part, rep=rep, depth=slot)
                if quantity == "scaled_length":
                    val *= frame.ps_ratio(x, ps_top)
                return val
            return q
    else:
        raise ValueError(f"unknown engine {engine!r}")

    q_prev, q_top = make_q(slots[0]), make_q(slots[1])
    cache_prev, cache_top = {}, {}

    def ev(q, cache, x):
        k = tuple(np.round(x, CHART_KEY_DECIMALS))
        if k not in cache:
            cache[k] = q(x)
        return cache[k]

    m = len(chart)
    dirs = [v.direction for v in chart]

    grad = np.empty(m)
    grad_tol = np.empty(m)
    for i, d in enumerate(dirs):
        vals_top = {t: ev(q_top, cache_top, base + t * d)
                    for t in (gradient_step, -gradient_step,
                              0.5 * gradient_step, -0.5 * gradient_step)}
        vals_prev = {t: ev(q_prev, cache_prev, base + t * d)
                     for t in (gradient_step, -gradient_step,
                               0.5 * gradient_step, -0.5 * gradient_step)}
        g, gap = _rich_first(vals_top, gradient_step)
        g_prev, _ = _rich_first(vals_prev, gradient_step)
        grad[i] = g
        grad_tol[i] = max(float(gap), abs(g - g_prev), FD_TOL_FLOOR)
    bad = np.abs(grad) > CRITICAL_FACTOR * grad_tol
    if bad.any():
        i = int(np.argmax(np.abs(grad) / grad_tol))
        raise NotCritical(
            f"gradient component {i} is {grad[i]:.3e} against tolerance "
            f"{grad_tol[i]:.3e}; expand about a critical point")

    def hessian_at(q, cache, h):
        H = np.empty((m, m))
        for i, di in enumerate(dirs):
            f = {t: ev(q, cache, base + t * di)
                 for t in (0.0, h, -h, 2.0 * h, -2.0 * h)}
            H[i, i] = (-f[2.0 * h] + 16.0 * f[h] - 30.0 * f[0.0]
                       + 16.0 * f[-h] - f[-2.0 * h]) / (12.0 * h * h)
            for j in range(i + 1, m):
                dj = dirs[j]
                val = (ev(q, cache, base + h * (di + dj))
                       - ev(q, cache, base + h * (di - dj))
                       - ev(q, cache, base + h * (dj - di))
                       + ev(q, cache, base - h * (di + dj))) / (4.0 * h * h)
                H[i, j] = H[j, i] = val
        return H

    H_coarse = hessian_at(q_top, cache_top, step)
    H_fine = hessian_at(q_top, cache_top, 0.5 * step)
    H_prev = hessian_at(q_prev, cache_prev, step)
    H = (4.0 * H_fine - H_coarse) / 3.0
    H = 0.5 * (H + H.T)
    entry_errors = np.maximum(np.abs(H_fine - H_coarse),
                              np.abs(H_coarse - H_prev))
    threshold = ZERO_THRESHOLD_FACTOR * max(float(entry_errors.max()),
                                            FD_TOL_FLOOR)
    eigs = np.linalg.eigvalsh(H)
    pos = int((eigs > threshold).sum())
    neg = int((eigs < -threshold).sum())
    return HessianSignature(
        matrix=H, eigenvalues=eigs, inertia=(pos, neg, m - pos - neg),
        zero_threshold=float(threshold), entry_errors=entry_errors,
        gradient=grad, gradient_tolerance=grad_tol, quantity=quantity,
        engine=engine, basepoint=base.copy(), step=float(step))


@dataclasses.dataclass
class DegeneracyReport:
    evaluations: tuple
    null_verdicts: tuple
    livsic_rates: tuple
    livsic_verdicts: tuple
    separation_ratio: float


def degeneracy_probe(family, directions, ensemble, level=None,
                     delta=FD_BASE_STEP):
    """Classify chart directions as null or non-null for the pressure form.

    A direction is null when its form value is consistent with zero at
    NULL_VERDICT_FACTOR times its error bar. Each direction's per-orbit
    first-derivative sums are also run through the periodic-sum
    coboundary test, the dynamical mechanism behind a vanishing form.
    The separation ratio divides the smallest non-null value by the
    largest null value (infinite when the null values are all zero, None
    when either class is empty).
    """
    frames = {}
    evs = []
    nulls = []
    rates = []
    cobs = []
    for v in directions:
        key = tuple(np.round(v.basepoint, CHART_KEY_DECIMALS))
        frame = frames.get(key)
        ev, frame, dot = _pressure_evaluation(family, v, ensemble, level,
                                              delta, frame=frame)
        frames[key] = frame
        rate, is_cob = th.livsic_test(ensemble, {ev.level: dot})
        evs.append(ev)
        nulls.append(bool(abs(ev.value) <= NULL_VERDICT_FACTOR * ev.error))
        rates.append(float(rate))
        cobs.append(bool(is_cob))
    null_vals = [abs(e.value) for e, nl in zip(evs, nulls) if nl]
    live_vals = [abs(e.value) for e, nl in zip(evs, nulls) if not nl]
    if not null_vals or not live_vals:
        ratio = None
    elif max(null_vals) == 0.0:
        ratio = math.inf
    else:
        ratio = min(live_vals) / max(null_vals)
    return DegeneracyReport(
        evaluations=tuple(evs), null_verdicts=tuple(nulls),
        livsic_rates=tuple(rates), livsic_verdicts=tuple(cobs),
        separation_ratio=ratio)


def metric_report(family, direction, ensemble, level=None,
                  delta=FD_BASE_STEP):
    """JSON-ready summary of both forms along one direction."""
    chk = conformal_equivalence_check(family, direction, ensemble, level,
                                      delta)
    ev = chk.evaluation
    pair_mass = [float(np.hypot(ev.direction[2 * i], ev.direction[2 * i + 1]))
                 for i in range(ev.direction.size // 2)]
    return {
        "base": {
            "family": [[int(s) for s in w.letters]
                       for w in family.curve_words()],
            "tau": [float(u) for u in ev.basepoint],
        },
        "direction": {
            "curve": int(np.argmax(pair_mass)),
            "tag": ev.tag,
            "components": [float(u) for u in ev.direction],
        },
        "W": {
            "value": float(ev.curvature_form),
            "err": float(ev.error),
            "form_gap": float(ev.form_gap),
        },
        "G": {
            "value": float(ev.extension_value),
            "err": float(ev.extension_error),
        },
        "h": float(ev.h_value),
        "verdicts": {
            "null": bool(abs(ev.value) <= NULL_VERDICT_FACTOR * ev.error),
            "conformal_gap": float(chk.gap),
        },
    }
