"""Service-time distribution families.

Four of the six families share one functional skeleton: the response
time is at least some minimum ``delay`` T, an atom of probability may
sit exactly at T, and beyond T the survival probability decays as

    P(X > t) = alpha * exp(-rate * (m(t) - T)),    t >= T,

where ``m`` is a monotonically increasing time transform. The choice
of ``m`` picks the family: the identity gives the delayed
exponential, log(t+1) the delayed Pareto, and the delayed-tail family
exposes the transform directly (square root, or a user-supplied
monotone table). On top of those sit finite mixtures, the plain
exponential, and a degenerate point mass.

``alpha`` in (0, 1] controls the jump at the delay point: the CDF
steps to 1 - alpha*exp(-rate*(m(T) - T)) at t = T, which we represent
as an explicit atom so the CDF stays proper and sampling stays exact.
For transforms with m(T) < T that jump would be negative, which is
not a CDF at all; ``validate`` rejects such parameter sets instead of
clamping them.

All values are immutable; every operation is a pure function of its
inputs plus an explicitly passed RNG, so sharing across threads is
safe as long as each thread owns its RNG.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import DivergenceError, InstabilityError, InvalidDistributionError


class Family(str, Enum):
    """The supported service-time families."""

    DELAYED_EXP = "delayed_exp"
    DELAYED_PARETO = "delayed_pareto"
    DELAYED_TAIL = "delayed_tail"
    MIXTURE = "mixture"
    EXPONENTIAL = "exponential"
    POINT_MASS = "point_mass"


_NAMED_SHAPES = ("identity", "log1p", "sqrt")


@dataclass(frozen=True)
class TailShape:
    """Monotone time transform m(t) steering a delayed-tail family.

    Named shapes come from a fixed catalog ("identity", "log1p",
    "sqrt"). A "table" shape interpolates a user-supplied strictly
    increasing (t, m) table linearly and continues the final
    segment's slope beyond the last knot, so m keeps increasing and
    the induced CDF still reaches 1.
    """

    name: str
    table: tuple[tuple[float, float], ...] | None = None

    @classmethod
    def identity(cls) -> "TailShape":
        return cls("identity")

    @classmethod
    def log1p(cls) -> "TailShape":
        return cls("log1p")

    @classmethod
    def sqrt(cls) -> "TailShape":
        return cls("sqrt")

    @classmethod
    def from_table(cls, rows: Iterable[Sequence[float]]) -> "TailShape":
        return cls("table", tuple((float(t), float(m)) for t, m in rows))

    def _columns(self) -> tuple[np.ndarray, np.ndarray]:
        assert self.table is not None
        xs = np.array([r[0] for r in self.table], dtype=float)
        ys = np.array([r[1] for r in self.table], dtype=float)
        return xs, ys

    def transform(self, t):
        """Evaluate m(t); accepts scalars or arrays."""
        arr = np.asarray(t, dtype=float)
        if self.name == "identity":
            out = arr
        elif self.name == "log1p":
            out = np.log1p(arr)
        elif self.name == "sqrt":
            out = np.sqrt(arr)
        else:
            xs, ys = self._columns()
            out = np.interp(arr, xs, ys)
            # np.interp clamps beyond the last knot; continue the final slope
            slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
            out = np.where(arr > xs[-1], ys[-1] + (arr - xs[-1]) * slope, out)
        return out if arr.ndim else float(out)

    def inverse(self, y):
        """Evaluate m^{-1}(y) for y in the range of m."""
        arr = np.asarray(y, dtype=float)
        if self.name == "identity":
            out = arr
        elif self.name == "log1p":
            out = np.expm1(arr)
        elif self.name == "sqrt":
            out = np.square(arr)
        else:
            xs, ys = self._columns()
            out = np.interp(arr, ys, xs)
            slope = (xs[-1] - xs[-2]) / (ys[-1] - ys[-2])
            out = np.where(arr > ys[-1], xs[-1] + (arr - ys[-1]) * slope, out)
        return out if arr.ndim else float(out)

    def derivative(self, t):
        """Evaluate m'(t); may be +inf at an integrable singularity."""
        arr = np.asarray(t, dtype=float)
        if self.name == "identity":
            out = np.ones_like(arr)
        elif self.name == "log1p":
            out = 1.0 / (1.0 + arr)
        elif self.name == "sqrt":
            with np.errstate(divide="ignore"):
                out = 0.5 / np.sqrt(arr)
        else:
            xs, ys = self._columns()
            slopes = np.diff(ys) / np.diff(xs)
            idx = np.clip(np.searchsorted(xs, arr, side="right") - 1, 0, len(slopes) - 1)
            out = slopes[idx]
        return out if arr.ndim else float(out)


_IDENTITY = TailShape.identity()
_LOG1P = TailShape.log1p()


@dataclass(frozen=True)
class DistributionSpec:
    """Parametric description of one service-time distribution.

    Only the fields relevant to ``family`` are set; the classmethod
    constructors below are the intended way to build instances.
    ``validate`` checks every invariant and is the authority on what
    counts as a proper parameterization.
    """

    family: Family
    rate: float | None = None
    delay: float | None = None
    alpha: float | None = None
    tail_shape: TailShape | None = None
    location: float | None = None
    components: tuple[tuple[float, "DistributionSpec"], ...] | None = None

    @classmethod
    def delayed_exp(cls, rate: float, delay: float = 0.0, alpha: float = 1.0) -> "DistributionSpec":
        return cls(Family.DELAYED_EXP, rate=float(rate), delay=float(delay), alpha=float(alpha))

    @classmethod
    def delayed_pareto(cls, rate: float, delay: float = 0.0, alpha: float = 1.0) -> "DistributionSpec":
        return cls(Family.DELAYED_PARETO, rate=float(rate), delay=float(delay), alpha=float(alpha))

    @classmethod
    def delayed_tail(
        cls, rate: float, shape: TailShape, delay: float = 0.0, alpha: float = 1.0
    ) -> "DistributionSpec":
        return cls(
            Family.DELAYED_TAIL,
            rate=float(rate),
            delay=float(delay),
            alpha=float(alpha),
            tail_shape=shape,
        )

    @classmethod
    def exponential(cls, rate: float) -> "DistributionSpec":
        return cls(Family.EXPONENTIAL, rate=float(rate), delay=0.0, alpha=1.0)

    @classmethod
    def point_mass(cls, location: float) -> "DistributionSpec":
        return cls(Family.POINT_MASS, location=float(location))

    @classmethod
    def mixture(cls, components: Iterable[tuple[float, "DistributionSpec"]]) -> "DistributionSpec":
        parts = tuple((float(w), spec) for w, spec in components)
        return cls(Family.MIXTURE, components=parts)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _tail_params(spec: DistributionSpec) -> tuple[float, float, float, TailShape]:
    """(rate, delay, alpha, shape) for the four survival-skeleton families."""
    if spec.family is Family.DELAYED_EXP:
        return spec.rate, spec.delay, spec.alpha, _IDENTITY
    if spec.family is Family.DELAYED_PARETO:
        return spec.rate, spec.delay, spec.alpha, _LOG1P
    if spec.family is Family.DELAYED_TAIL:
        return spec.rate, spec.delay, spec.alpha, spec.tail_shape
    if spec.family is Family.EXPONENTIAL:
        return spec.rate, 0.0, 1.0, _IDENTITY
    raise ValueError(f"not a tail-type family: {spec.family}")


_TAIL_FAMILIES = (
    Family.DELAYED_EXP,
    Family.DELAYED_PARETO,
    Family.DELAYED_TAIL,
    Family.EXPONENTIAL,
)

# Fields each family is allowed to populate.
_USED_FIELDS = {
    Family.DELAYED_EXP: ("rate", "delay", "alpha"),
    Family.DELAYED_PARETO: ("rate", "delay", "alpha"),
    Family.DELAYED_TAIL: ("rate", "delay", "alpha", "tail_shape"),
    Family.EXPONENTIAL: ("rate", "delay", "alpha"),
    Family.POINT_MASS: ("location",),
    Family.MIXTURE: ("components",),
}
_ALL_FIELDS = ("rate", "delay", "alpha", "tail_shape", "location", "components")

WEIGHT_SUM_TOL = 1e-12


def validate(spec: DistributionSpec) -> list[str]:
    """Return every violated invariant; an empty list means valid."""
    out: list[str] = []
    _validate_into(spec, "", out)
    return out


def require_valid(spec: DistributionSpec) -> None:
    """Raise InvalidDistributionError if the spec violates any invariant."""
    problems = validate(spec)
    if problems:
        raise InvalidDistributionError(problems)


def _validate_into(spec: DistributionSpec, where: str, out: list[str]) -> None:
    def bad(msg: str) -> None:
        out.append(f"{where}: {msg}" if where else msg)

    if not isinstance(spec, DistributionSpec):
        bad(f"expected DistributionSpec, got {type(spec).__name__}")
        return
    if not isinstance(spec.family, Family):
        bad(f"unknown family {spec.family!r}")
        return

    used = _USED_FIELDS[spec.family]
    for name in _ALL_FIELDS:
        if name not in used and getattr(spec, name) is not None:
            bad(f"{spec.family.value} does not use field {name!r}")

    if spec.family in _TAIL_FAMILIES:
        ok = True
        if not _is_num(spec.rate) or spec.rate <= 0:
            bad(f"rate must be a positive finite number, got {spec.rate!r}")
            ok = False
        if not _is_num(spec.delay) or spec.delay < 0:
            bad(f"delay must be a non-negative finite number, got {spec.delay!r}")
            ok = False
        if not _is_num(spec.alpha) or not 0.0 < spec.alpha <= 1.0:
            bad(f"alpha must lie in (0, 1], got {spec.alpha!r}")
            ok = False
        if spec.family is Family.EXPONENTIAL:
            if spec.delay not in (None, 0.0) and spec.delay != 0.0:
                bad("exponential fixes delay = 0")
                ok = False
            if spec.alpha not in (None, 1.0) and spec.alpha != 1.0:
                bad("exponential fixes alpha = 1")
                ok = False
        shape = spec.tail_shape
        if spec.family is Family.DELAYED_TAIL:
            if shape is None:
                bad("delayed_tail requires a tail_shape")
                ok = False
            else:
                ok = _validate_shape(shape, bad) and ok
        if ok:
            _, delay, alpha, shape = _tail_params(spec)
            jump = -math.expm1(math.log(alpha) - spec.rate * (shape.transform(delay) - delay))
            if jump < -WEIGHT_SUM_TOL:
                bad(f"CDF negative at delay point (F({delay:g}) = {jump:.6g})")
    elif spec.family is Family.POINT_MASS:
        if not _is_num(spec.location) or spec.location < 0:
            bad(f"location must be a non-negative finite number, got {spec.location!r}")
    elif spec.family is Family.MIXTURE:
        comps = spec.components
        if not comps:
            bad("mixture requires at least one component")
            return
        total = 0.0
        for i, item in enumerate(comps):
            if not (isinstance(item, tuple) and len(item) == 2):
                bad(f"components[{i}]: expected a (weight, spec) pair")
                continue
            w, sub = item
            if not _is_num(w) or w < 0:
                bad(f"components[{i}]: weight must be a non-negative finite number, got {w!r}")
            else:
                total += w
            child_where = f"{where}.components[{i}]" if where else f"components[{i}]"
            _validate_into(sub, child_where, out)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            bad(f"weights sum {total:.6g} != 1")


def _validate_shape(shape: TailShape, bad) -> bool:
    if not isinstance(shape, TailShape):
        bad(f"tail_shape must be a TailShape, got {type(shape).__name__}")
        return False
    if shape.name in _NAMED_SHAPES:
        if shape.table is not None:
            bad(f"named shape {shape.name!r} does not take a table")
            return False
        return True
    if shape.name != "table":
        bad(f"unknown tail shape {shape.name!r}")
        return False
    rows = shape.table
    if rows is None or len(rows) < 2:
        bad("table shape needs at least 2 rows")
        return False
    for i, row in enumerate(rows):
        if len(row) != 2 or not (_is_num(row[0]) and _is_num(row[1])):
            bad(f"table row {i} must be a finite (t, m) pair")
            return False
    if rows[0][0] != 0.0:
        bad("table must start at t = 0")
        return False
    for i in range(1, len(rows)):
        if rows[i][0] <= rows[i - 1][0] or rows[i][1] <= rows[i - 1][1]:
            bad(f"table must be strictly increasing in both columns (row {i})")
            return False
    return True


# ---------------------------------------------------------------------------
# Evaluation


def cdf_values(spec: DistributionSpec, ts) -> np.ndarray:
    """Vectorized F(t) on an array of times (spec assumed valid)."""
    ts = np.asarray(ts, dtype=float)
    if spec.family is Family.POINT_MASS:
        return np.where(ts >= spec.location, 1.0, 0.0)
    if spec.family is Family.MIXTURE:
        acc = np.zeros(ts.shape)
        for w, comp in spec.components:
            acc += w * cdf_values(comp, ts)
        return acc
    rate, delay, alpha, shape = _tail_params(spec)
    m = shape.transform(np.maximum(ts, delay))
    vals = -np.expm1(math.log(alpha) - rate * (m - delay))
    return np.where(ts >= delay, vals, 0.0)


def eval_cdf(spec: DistributionSpec, t: float) -> float:
    """F(t) by the family's closed form; rejects invalid specs."""
    require_valid(spec)
    return float(cdf_values(spec, np.asarray(t, dtype=float)))


def pdf_values(spec: DistributionSpec, ts) -> np.ndarray:
    """Density of the continuous part (atoms excluded).

    May return +inf at an integrable singularity, e.g. the sqrt shape
    at t = 0; grid code averages such cells from the CDF instead.
    """
    ts = np.asarray(ts, dtype=float)
    if spec.family is Family.POINT_MASS:
        return np.zeros(ts.shape)
    if spec.family is Family.MIXTURE:
        acc = np.zeros(ts.shape)
        for w, comp in spec.components:
            acc += w * pdf_values(comp, ts)
        return acc
    rate, delay, alpha, shape = _tail_params(spec)
    tt = np.maximum(ts, delay)
    dens = rate * shape.derivative(tt) * np.exp(math.log(alpha) - rate * (shape.transform(tt) - delay))
    return np.where(ts >= delay, dens, 0.0)


def atoms(spec: DistributionSpec) -> tuple[tuple[float, float], ...]:
    """Point masses of the distribution as ((location, mass), ...)."""
    if spec.family is Family.POINT_MASS:
        return ((spec.location, 1.0),)
    if spec.family is Family.MIXTURE:
        merged: dict[float, float] = {}
        for w, comp in spec.components:
            if w == 0.0:
                continue
            for loc, mass in atoms(comp):
                merged[loc] = merged.get(loc, 0.0) + w * mass
        return tuple(sorted((loc, m) for loc, m in merged.items() if m > 1e-15))
    rate, delay, alpha, shape = _tail_params(spec)
    mass = -math.expm1(math.log(alpha) - rate * (shape.transform(delay) - delay))
    if mass > 1e-15:
        return ((delay, mass),)
    return ()


def quantile(spec: DistributionSpec, q: float) -> float:
    """Generalized inverse CDF: the smallest t with F(t) >= q."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q!r}")
    return _quantile_impl(spec, q)


def _quantile_impl(spec: DistributionSpec, q: float) -> float:
    if spec.family is Family.POINT_MASS:
        return spec.location
    if spec.family is Family.MIXTURE:
        if float(cdf_values(spec, 0.0)) >= q:
            return 0.0
        hi = max(_quantile_impl(comp, q) for w, comp in spec.components if w > 0)
        if hi <= 0.0:
            return 0.0

        def gap(t: float) -> float:
            return float(cdf_values(spec, t)) - q

        # F(hi) >= q because every positive-weight component has
        # F_i(hi) >= q; brentq lands on the jump point if F is
        # discontinuous there, which is exactly the generalized inverse.
        return float(optimize.brentq(gap, 0.0, hi, xtol=1e-12, maxiter=200))
    rate, delay, alpha, shape = _tail_params(spec)
    head = -math.expm1(math.log(alpha) - rate * (shape.transform(delay) - delay))
    if q <= head:
        return delay
    target = delay + (math.log(alpha) - math.log1p(-q)) / rate
    return float(shape.inverse(target))


# ---------------------------------------------------------------------------
# Moments

# Relative tail contribution beyond the 1 - 1e-7 quantile above which a
# numerically integrated moment is declared non-convergent.
_TAIL_BUDGET = 1e-3
_HEAD_QS = (0.5, 0.9, 0.99, 1.0 - 1e-4, 1.0 - 1e-5, 1.0 - 1e-6, 1.0 - 1e-7)
_FAR_QS = (1.0 - 1e-8, 1.0 - 1e-9, 1.0 - 1e-10)


def moments(spec: DistributionSpec) -> tuple[float, float]:
    """(mean, variance); closed form where available, else integrated.

    The delayed Pareto and delayed-tail families are integrated
    numerically from the survival function. If the integral up to the
    far horizon (the 1 - 1e-10 quantile) still receives more than a
    0.1% relative contribution beyond the 1 - 1e-7 quantile, the
    moment is treated as non-convergent and DivergenceError is raised
    rather than returning a number dominated by the unexplored tail.
    """
    require_valid(spec)
    return _moments_impl(spec)


def _moments_impl(spec: DistributionSpec) -> tuple[float, float]:
    if spec.family is Family.POINT_MASS:
        return spec.location, 0.0
    if spec.family is Family.EXPONENTIAL:
        return 1.0 / spec.rate, 1.0 / spec.rate**2
    if spec.family is Family.DELAYED_EXP:
        # X = T + Y with Y = 0 w.p. 1-alpha and Y ~ Exp(rate) w.p. alpha
        mean = spec.delay + spec.alpha / spec.rate
        var = (2.0 * spec.alpha - spec.alpha**2) / spec.rate**2
        return mean, var
    if spec.family is Family.MIXTURE:
        mean = 0.0
        second = 0.0
        for w, comp in spec.components:
            m, v = _moments_impl(comp)
            mean += w * m
            second += w * (v + m * m)
        return mean, second - mean * mean
    return _tail_moments(spec)


def _tail_moments(spec: DistributionSpec) -> tuple[float, float]:
    rate, delay, alpha, shape = _tail_params(spec)
    log_alpha = math.log(alpha)

    def surv(t: float) -> float:
        return math.exp(log_alpha - rate * (shape.transform(t) - delay))

    t1 = max(_quantile_impl(spec, 1.0 - 1e-7), delay)
    head_pts = _breakpoints(spec, delay, t1, _HEAD_QS, shape)
    far_pts = _breakpoints(spec, t1, _quantile_impl(spec, 1.0 - 1e-10), _FAR_QS, shape)

    head = _piecewise_quad(surv, head_pts)
    far = _piecewise_quad(surv, far_pts)
    if far > _TAIL_BUDGET * (head + far):
        raise DivergenceError(
            f"mean of {spec.family.value} does not converge: "
            f"{far / (head + far):.2%} of the integral lies beyond the 1-1e-7 quantile"
        )
    mean = delay + head + far

    def t_surv(t: float) -> float:
        return t * surv(t)

    head2 = _piecewise_quad(t_surv, head_pts)
    far2 = _piecewise_quad(t_surv, far_pts)
    if far2 > _TAIL_BUDGET * (head2 + far2):
        raise DivergenceError(
            f"variance of {spec.family.value} does not converge: "
            f"{far2 / (head2 + far2):.2%} of the integral lies beyond the 1-1e-7 quantile"
        )
    second = delay * delay + 2.0 * (head2 + far2)
    return mean, max(second - mean * mean, 0.0)


def _breakpoints(
    spec: DistributionSpec, lo: float, hi: float, qs: Sequence[float], shape: TailShape
) -> list[float]:
    pts = {lo, hi}
    for q in qs:
        t = _quantile_impl(spec, q)
        if lo < t < hi:
            pts.add(t)
    if shape.table is not None:
        pts.update(t for t, _ in shape.table if lo < t < hi)
    return sorted(pts)


def _piecewise_quad(f, pts: Sequence[float]) -> float:
    total = 0.0
    with warnings.catch_warnings():
        # convergence is judged by the head/far split in _tail_moments,
        # not by quad's own heuristics
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(pts[:-1], pts[1:]):
            if b > a:
                total += integrate.quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)[0]
    return total


# ---------------------------------------------------------------------------
# Sampling


def draw_count(spec: DistributionSpec) -> int:
    """Uniform draws consumed per sample by transform_uniforms."""
    if spec.family is Family.MIXTURE:
        return 1 + max(draw_count(comp) for _, comp in spec.components)
    return 1


def transform_uniforms(spec: DistributionSpec, u: np.ndarray) -> np.ndarray:
    """Map uniform(0,1) draws to response times by CDF inversion.

    ``u`` has one row per sample and ``draw_count(spec)`` columns.
    Column 0 selects the mixture component (or is the inversion draw
    itself); the remaining columns feed the chosen component. The
    layout is fixed, so identical uniforms give identical samples no
    matter how the caller blocks or partitions them.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    n = u.shape[0]
    if spec.family is Family.POINT_MASS:
        return np.full(n, spec.location)
    if spec.family is Family.MIXTURE:
        cum = np.cumsum([w for w, _ in spec.components])
        pick = np.minimum(np.searchsorted(cum, u[:, 0], side="right"), len(cum) - 1)
        out = np.empty(n)
        for j, (_, comp) in enumerate(spec.components):
            mask = pick == j
            if mask.any():
                out[mask] = transform_uniforms(comp, u[mask, 1 : 1 + draw_count(comp)])
        return out
    rate, delay, alpha, shape = _tail_params(spec)
    u0 = u[:, 0]
    log_alpha = math.log(alpha)
    head = -math.expm1(log_alpha - rate * (shape.transform(delay) - delay))
    target = delay + (log_alpha - np.log1p(-u0)) / rate
    vals = np.asarray(shape.inverse(target), dtype=float)
    return np.where(u0 <= head, delay, vals)


def sample_many(spec: DistributionSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n samples using the generator's uniform stream."""
    u = rng.random((n, draw_count(spec)))
    return transform_uniforms(spec, u)


def sample(spec: DistributionSpec, rng: np.random.Generator) -> float:
    """Draw one sample."""
    return float(sample_many(spec, rng, 1)[0])


# ---------------------------------------------------------------------------
# Fitting


def fit_delayed_exponential(samples) -> DistributionSpec:
    """Method-of-moments fit with alpha pinned to 1.

    Inverts mean = T + 1/rate and variance = 1/rate^2, clamping T at
    zero. A zero-variance sample degenerates to a point mass at the
    sample mean.
    """
    arr = np.asarray(list(samples), dtype=float)
    if arr.size < 2:
        raise ValueError(f"need at least 2 samples, got {arr.size}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("samples must be finite and non-negative")
    mean = float(arr.mean())
    var = float(arr.var())
    if var == 0.0:
        return DistributionSpec.point_mass(mean)
    sd = math.sqrt(var)
    return DistributionSpec.delayed_exp(rate=1.0 / sd, delay=max(0.0, mean - sd), alpha=1.0)


# ---------------------------------------------------------------------------
# Servers


@dataclass(frozen=True)
class ServerDescriptor:
    """An available server: an id plus exactly one response model.

    Either ``distribution`` gives the response-time law directly
    (load-independent), or ``service_rate`` declares a memoryless
    single-server queue whose stationary response under load lam is
    Exponential(service_rate - lam).
    """

    id: str
    distribution: DistributionSpec | None = None
    service_rate: float | None = None

    @classmethod
    def explicit(cls, id: str, distribution: DistributionSpec) -> "ServerDescriptor":
        return cls(id=id, distribution=distribution)

    @classmethod
    def queue(cls, id: str, service_rate: float) -> "ServerDescriptor":
        return cls(id=id, service_rate=float(service_rate))

    @property
    def model(self) -> str:
        return "queue" if self.service_rate is not None else "explicit"


def validate_server(server: ServerDescriptor) -> list[str]:
    """Violations for one server descriptor (ids are checked pool-wide)."""
    out: list[str] = []
    if not isinstance(server.id, str) or not server.id:
        out.append(f"server id must be a non-empty string, got {server.id!r}")
    has_dist = server.distribution is not None
    has_rate = server.service_rate is not None
    if has_dist == has_rate:
        out.append("server needs exactly one of distribution / service_rate")
        return out
    if has_rate and (not _is_num(server.service_rate) or server.service_rate <= 0):
        out.append(f"service_rate must be a positive finite number, got {server.service_rate!r}")
    if has_dist:
        out.extend(f"dist: {p}" for p in validate(server.distribution))
    return out


def queue_response(server: ServerDescriptor, load: float) -> DistributionSpec:
    """Stationary response-time law of a queue server under ``load``.

    A memoryless single-server queue with service rate mu and arrival
    rate lam responds in Exponential(mu - lam) time; the queue is
    unstable once lam >= mu.
    """
    if server.service_rate is None:
        raise ValueError(f"server {server.id!r} has no service rate")
    if load < 0:
        raise ValueError(f"arrival rate must be non-negative, got {load!r}")
    if load >= server.service_rate:
        raise InstabilityError(
            f"server {server.id!r} unstable: arrival rate {load:g} >= service rate {server.service_rate:g}"
        )
    return DistributionSpec.exponential(server.service_rate - load)


def response_distribution(server: ServerDescriptor, load: float | None = None) -> DistributionSpec:
    """Response-time law under ``load`` (ignored for explicit servers)."""
    if server.distribution is not None:
        return server.distribution
    if load is None:
        raise ValueError(f"server {server.id!r} is load-dependent; an arrival rate is required")
    return queue_response(server, load)


def unloaded_mean(server: ServerDescriptor) -> float:
    """Expected response time with no queueing load; allocator sort key."""
    if server.service_rate is not None:
        return 1.0 / server.service_rate
    return _moments_impl(server.distribution)[0]


# ---------------------------------------------------------------------------
# JSON codec
#
# {"family":"delayed_exp","rate":2.0,"delay":1.0,"alpha":0.5}
# {"family":"delayed_tail","shape":"sqrt"|{"table":[[t,m],...]},...}
# {"family":"mixture","components":[{"weight":0.3,"dist":{...}},...]}
# {"family":"point_mass","location":3.0}; {"family":"exponential","rate":1.0}
# Servers: {"id":"s1","service_rate":9.0} or {"id":"s2","dist":{...}}

_JSON_KEYS = {
    Family.DELAYED_EXP: {"family", "rate", "delay", "alpha"},
    Family.DELAYED_PARETO: {"family", "rate", "delay", "alpha"},
    Family.DELAYED_TAIL: {"family", "rate", "delay", "alpha", "shape"},
    Family.EXPONENTIAL: {"family", "rate"},
    Family.POINT_MASS: {"family", "location"},
    Family.MIXTURE: {"family", "components"},
}


def dist_from_json(obj, where: str = "") -> DistributionSpec:
    """Build a spec from its JSON form; raises ValueError with a path."""

    def fail(msg: str):
        raise ValueError(f"{where}: {msg}" if where else msg)

    def sub(key: str) -> str:
        return f"{where}.{key}" if where else key

    if not isinstance(obj, dict):
        fail(f"expected an object, got {type(obj).__name__}")
    name = obj.get("family")
    try:
        family = Family(name)
    except ValueError:
        fail(f"unknown family {name!r}")
    for key in obj:
        if key not in _JSON_KEYS[family]:
            fail(f"unexpected key {key!r} for family {name!r}")

    def num(key: str, default=None) -> float:
        if key not in obj:
            if default is None:
                fail(f"missing required key {key!r}")
            return default
        val = obj[key]
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ValueError(f"{sub(key)}: expected a number, got {val!r}")
        return float(val)

    if family is Family.EXPONENTIAL:
        return DistributionSpec.exponential(num("rate"))
    if family is Family.POINT_MASS:
        return DistributionSpec.point_mass(num("location"))
    if family is Family.MIXTURE:
        comps = obj.get("components")
        if not isinstance(comps, list) or not comps:
            fail("components must be a non-empty list")
        parts = []
        for i, item in enumerate(comps):
            item_where = f"{sub('components')}[{i}]"
            if not isinstance(item, dict) or set(item) != {"weight", "dist"}:
                raise ValueError(f"{item_where}: expected keys 'weight' and 'dist'")
            w = item["weight"]
            if not isinstance(w, (int, float)) or isinstance(w, bool):
                raise ValueError(f"{item_where}.weight: expected a number, got {w!r}")
            parts.append((float(w), dist_from_json(item["dist"], f"{item_where}.dist")))
        return DistributionSpec.mixture(parts)

    rate = num("rate")
    delay = num("delay", 0.0)
    alpha = num("alpha", 1.0)
    if family is Family.DELAYED_EXP:
        return DistributionSpec.delayed_exp(rate, delay, alpha)
    if family is Family.DELAYED_PARETO:
        return DistributionSpec.delayed_pareto(rate, delay, alpha)
    shape_obj = obj.get("shape")
    if shape_obj is None:
        fail("delayed_tail requires a 'shape'")
    if isinstance(shape_obj, str):
        if shape_obj not in _NAMED_SHAPES:
            raise ValueError(f"{sub('shape')}: unknown shape {shape_obj!r}")
        shape = TailShape(shape_obj)
    elif isinstance(shape_obj, dict) and set(shape_obj) == {"table"}:
        rows = shape_obj["table"]
        if not isinstance(rows, list) or any(
            not isinstance(r, list) or len(r) != 2 or not all(_is_num(v) for v in r) for r in rows
        ):
            raise ValueError(f"{sub('shape')}.table: expected a list of [t, m] number pairs")
        shape = TailShape.from_table(rows)
    else:
        raise ValueError(f"{sub('shape')}: expected a shape name or {{'table': ...}}")
    return DistributionSpec.delayed_tail(rate, shape, delay, alpha)


def dist_to_json(spec: DistributionSpec) -> dict:
    """Canonical JSON form; dist_from_json inverts it exactly."""
    if spec.family is Family.EXPONENTIAL:
        return {"family": spec.family.value, "rate": spec.rate}
    if spec.family is Family.POINT_MASS:
        return {"family": spec.family.value, "location": spec.location}
    if spec.family is Family.MIXTURE:
        return {
            "family": spec.family.value,
            "components": [{"weight": w, "dist": dist_to_json(c)} for w, c in spec.components],
        }
    out = {
        "family": spec.family.value,
        "rate": spec.rate,
        "delay": spec.delay,
        "alpha": spec.alpha,
    }
    if spec.family is Family.DELAYED_TAIL:
        shape = spec.tail_shape
        out["shape"] = shape.name if shape.table is None else {"table": [list(r) for r in shape.table]}
    return out


def server_from_json(obj, where: str = "server") -> ServerDescriptor:
    """Build a server descriptor from its JSON form."""
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in ("id", "service_rate", "dist"):
            raise ValueError(f"{where}: unexpected key {key!r}")
    ident = obj.get("id")
    if not isinstance(ident, str) or not ident:
        raise ValueError(f"{where}.id: expected a non-empty string, got {ident!r}")
    has_rate = "service_rate" in obj
    has_dist = "dist" in obj
    if has_rate == has_dist:
        raise ValueError(f"{where}: needs exactly one of 'service_rate' / 'dist'")
    if has_rate:
        mu = obj["service_rate"]
        if not isinstance(mu, (int, float)) or isinstance(mu, bool):
            raise ValueError(f"{where}.service_rate: expected a number, got {mu!r}")
        return ServerDescriptor.queue(ident, float(mu))
    return ServerDescriptor.explicit(ident, dist_from_json(obj["dist"], f"{where}.dist"))


def server_to_json(server: ServerDescriptor) -> dict:
    if server.service_rate is not None:
        return {"id": server.id, "service_rate": server.service_rate}
    return {"id": server.id, "dist": dist_to_json(server.distribution)}
