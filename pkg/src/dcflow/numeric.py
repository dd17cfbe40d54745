"""Discretized distribution arithmetic.

A NumericDistribution carries point masses (atoms) exactly and
separately from a continuous density sampled on a uniform grid that
always starts at t = 0. Keeping atoms out of the grid matters: the
families here have genuine jumps at their delay points, and smearing
a jump into grid cells would corrupt the CDF products used for
parallel composition.

Serial composition is discrete convolution of the densities (with a
trapezoid endpoint correction so quadrature stays second order) plus
exact atom handling; parallel composition multiplies CDFs on a merged
grid and recovers the density and atom jumps from the product.

Every result is renormalized so its total mass is exactly the target
(1 for normalized inputs). Discretization truncates at the configured
horizon quantile, so raw grid mass falls short by about the truncated
tail; scaling it back up keeps downstream compositions honest and is
checked against the exact CDF so a genuine quadrature bug cannot hide
behind the renormalization.

All functions are pure and the values immutable (arrays are frozen),
so compositions are safe to run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, signal

from .distributions import DistributionSpec, atoms, cdf_values, pdf_values, quantile, require_valid
from .errors import DcflowError, GridOverflowError, HorizonError

_trapz = getattr(np, "trapezoid", None) or np.trapz

ATOM_EPS = 1e-15
MAX_POINTS = 1 << 22
HORIZON_CAP = 1e12


@dataclass(frozen=True)
class GridConfig:
    """Uniform-grid settings for discretization.

    ``points`` cells span [0, t_max] where t_max is the
    ``horizon_quantile`` quantile of the distribution being
    discretized. Mass beyond the horizon is truncated and restored by
    renormalization, so quantiles far below 1 distort the shape; the
    default keeps the truncation at 1e-6.
    """

    points: int = 16384
    horizon_quantile: float = 1.0 - 1e-6

    def __post_init__(self) -> None:
        if not isinstance(self.points, int) or isinstance(self.points, bool) or self.points < 64:
            raise ValueError(f"grid points must be an integer >= 64, got {self.points!r}")
        if not 0.5 < self.horizon_quantile < 1.0:
            raise ValueError(f"horizon_quantile must lie in (0.5, 1), got {self.horizon_quantile!r}")


@dataclass(frozen=True, eq=False)
class NumericDistribution:
    """Atoms plus a density/CDF pair on a uniform grid from t = 0.

    ``cdf[i]`` is F(grid()[i]) including atom jumps at or before that
    grid point. A purely atomic distribution has empty arrays and
    grid_step 0.
    """

    atoms: tuple[tuple[float, float], ...]
    grid_start: float
    grid_step: float
    density: np.ndarray
    cdf: np.ndarray

    def grid(self) -> np.ndarray:
        return self.grid_start + self.grid_step * np.arange(len(self.density))

    @property
    def atom_mass(self) -> float:
        return sum(m for _, m in self.atoms)

    @property
    def continuous_mass(self) -> float:
        if len(self.density) < 2:
            return 0.0
        return float(_trapz(self.density, dx=self.grid_step))

    @property
    def total_mass(self) -> float:
        return self.atom_mass + self.continuous_mass

    @property
    def support_end(self) -> float:
        end = self.grid_step * max(len(self.density) - 1, 0)
        if self.atoms:
            end = max(end, self.atoms[-1][0])
        return end


def _build(
    raw_atoms: Sequence[tuple[float, float]],
    step: float,
    density: np.ndarray,
    target_total: float = 1.0,
) -> NumericDistribution:
    """Assemble a NumericDistribution, renormalizing the density.

    Atoms are merged by exact location and kept as given; the density
    is clipped at zero and scaled so atom mass + integral equals
    ``target_total`` exactly (up to one multiplication).
    """
    merged: dict[float, float] = {}
    for loc, mass in raw_atoms:
        if mass > ATOM_EPS:
            merged[loc] = merged.get(loc, 0.0) + mass
    atom_list = tuple(sorted(merged.items()))
    atom_mass = sum(m for _, m in atom_list)

    density = np.asarray(density, dtype=float)
    if density.size:
        density = np.maximum(density, 0.0)
    target_cont = target_total - atom_mass
    if target_cont <= 1e-12 or density.size < 2:
        density = np.zeros(0)
        cdf = np.zeros(0)
        step = 0.0
    else:
        raw = float(_trapz(density, dx=step))
        if raw <= 0.0:
            raise DcflowError(
                f"cannot renormalize: grid holds no mass but {target_cont:g} is required"
            )
        density = density * (target_cont / raw)
        cdf = integrate.cumulative_trapezoid(density, dx=step, initial=0.0)
        n = len(density)
        for loc, mass in atom_list:
            # atoms are expected to sit inside the grid span; clamping
            # guards against float dust at the far edge
            idx = min(max(int(math.ceil(loc / step - 1e-9)), 0), n - 1)
            cdf[idx:] += mass
    density.setflags(write=False)
    cdf.setflags(write=False)
    return NumericDistribution(
        atoms=atom_list, grid_start=0.0, grid_step=step, density=density, cdf=cdf
    )


def discretize(spec: DistributionSpec, cfg: GridConfig = GridConfig()) -> NumericDistribution:
    """Sample a spec onto a grid: exact atoms, pdf-sampled density.

    The grid spans [0, t_max] with t_max the horizon-quantile
    quantile (extended to cover every atom). Cells where the pdf is
    singular are filled with the cell-average slope of the continuous
    CDF, and the result is renormalized to total mass 1.
    """
    require_valid(spec)
    ats = atoms(spec)
    atom_mass = sum(m for _, m in ats)
    if atom_mass >= 1.0 - 1e-12:
        return _build(ats, 0.0, np.zeros(0), target_total=1.0)

    t_max = quantile(spec, cfg.horizon_quantile)
    if not math.isfinite(t_max) or t_max > HORIZON_CAP:
        raise HorizonError(
            f"{cfg.horizon_quantile} quantile is {t_max:g}; the tail decays too slowly to grid"
        )
    if ats:
        t_max = max(t_max, ats[-1][0])
    n = cfg.points
    step = t_max / (n - 1)
    ts = step * np.arange(n)
    dens = np.array(pdf_values(spec, ts), dtype=float)

    bad = np.nonzero(~np.isfinite(dens))[0]
    if bad.size:

        def cont_cdf(x: float) -> float:
            return float(cdf_values(spec, x)) - sum(m for loc, m in ats if loc <= x)

        for i in bad:
            lo = max(ts[i] - step / 2.0, 0.0)
            hi = ts[i] + step / 2.0
            dens[i] = (cont_cdf(hi) - cont_cdf(lo)) / (hi - lo)

    # quadrature sanity: compare the raw grid mass against the exact CDF
    # before renormalization hides any discrepancy
    raw = float(_trapz(dens, dx=step))
    expected = float(cdf_values(spec, t_max)) - sum(m for loc, m in ats if loc <= t_max)
    tol = float(np.max(dens)) * step + 0.02 * max(expected, 0.05) + 1e-9
    if abs(raw - expected) > tol:
        raise DcflowError(
            f"discretization mass check failed: grid holds {raw:.6g}, CDF says {expected:.6g}"
        )
    return _build(ats, step, dens, target_total=1.0)


def _resample(d: NumericDistribution, new_step: float) -> NumericDistribution:
    """Linearly resample the density onto a new step, preserving mass."""
    if not len(d.density) or new_step == d.grid_step:
        return d
    end = d.grid_step * (len(d.density) - 1)
    n_new = int(math.ceil(end / new_step)) + 1
    ts_new = new_step * np.arange(n_new)
    dens_new = np.interp(ts_new, d.grid(), d.density, right=0.0)
    return _build(d.atoms, new_step, dens_new, target_total=d.atom_mass + d.continuous_mass)


def _common_step(a: NumericDistribution, b: NumericDistribution) -> float:
    steps = [d.grid_step for d in (a, b) if len(d.density)]
    return min(steps)


def _shift_add(dest: np.ndarray, src: np.ndarray, offset: float, scale: float) -> None:
    """dest += scale * src shifted right by ``offset`` grid cells.

    Fractional offsets are split linearly between the two neighboring
    alignments, which preserves total mass exactly. The src endpoints
    carry half weight under the trapezoid measure while they sit on the
    array boundary; once shifted into the interior they would count in
    full, so the surplus halves are taken back out. Without this the
    shift plants ~step*src[0]/2 of phantom mass at the onset.
    """
    k = int(math.floor(offset))
    frac = offset - k
    for w, at in ((1.0 - frac, k), (frac, k + 1)):
        if w == 0.0 or not scale:
            continue
        dest[at : at + len(src)] += scale * w * src
        if at > 0:
            dest[at] -= 0.5 * scale * w * src[0]
        end = at + len(src) - 1
        if end < len(dest) - 1:
            dest[end] -= 0.5 * scale * w * src[-1]


def convolve(a: NumericDistribution, b: NumericDistribution) -> NumericDistribution:
    """Distribution of X_a + X_b (independent)."""
    out_atoms = [
        (la + lb, ma * mb) for la, ma in a.atoms for lb, mb in b.atoms
    ]
    if not len(a.density) and not len(b.density):
        return _build(out_atoms, 0.0, np.zeros(0), target_total=1.0)

    # choose the step from projected lengths alone, before any array is
    # resized; coarsen rather than exceed the point budget, giving up
    # after losing six octaves of resolution
    h = _common_step(a, b)
    for _ in range(7):
        needed = _projected_length(a, b, h)
        if needed <= MAX_POINTS:
            break
        h *= 2.0
    else:
        raise GridOverflowError(
            f"convolution needs {needed} grid points even after coarsening (budget {MAX_POINTS})"
        )
    a2, b2 = _resample(a, h), _resample(b, h)
    na, nb = len(a2.density), len(b2.density)

    dens = np.zeros(_conv_length(a2, b2, h))
    if na and nb:
        da, db = a2.density, b2.density
        full = signal.fftconvolve(da, db)
        # trapezoid endpoint weights: the s = 0 and s = t ends of the
        # convolution integral carry half weight
        corr = np.zeros(len(full))
        corr[: len(db)] += 0.5 * da[0] * db
        corr[: len(da)] += 0.5 * db[0] * da
        dens[: len(full)] += h * (full - corr)
    for loc, mass in a2.atoms:
        if nb:
            _shift_add(dens, b2.density, loc / h, mass)
    for loc, mass in b2.atoms:
        if na:
            _shift_add(dens, a2.density, loc / h, mass)
    return _build(out_atoms, h, dens, target_total=1.0)


def _conv_length(a: NumericDistribution, b: NumericDistribution, h: float) -> int:
    na, nb = len(a.density), len(b.density)
    length = na + nb - 1 if na and nb else 0
    for loc, _ in a.atoms:
        if nb:
            length = max(length, nb + int(math.floor(loc / h)) + 2)
    for loc, _ in b.atoms:
        if na:
            length = max(length, na + int(math.floor(loc / h)) + 2)
    return length


def _projected_length(a: NumericDistribution, b: NumericDistribution, h: float) -> int:
    """Upper bound on _conv_length at step ``h`` without resampling."""

    def cells(d: NumericDistribution) -> int:
        if not len(d.density):
            return 0
        return int(math.ceil(d.grid_step * (len(d.density) - 1) / h)) + 1

    na, nb = cells(a), cells(b)
    length = na + nb - 1 if na and nb else 0
    for loc, _ in a.atoms:
        if nb:
            length = max(length, nb + int(math.floor(loc / h)) + 2)
    for loc, _ in b.atoms:
        if na:
            length = max(length, na + int(math.floor(loc / h)) + 2)
    return length


def max_compose(a: NumericDistribution, b: NumericDistribution) -> NumericDistribution:
    """Distribution of max(X_a, X_b): the pointwise product of CDFs."""
    if not len(a.density) and not len(b.density):
        merged: dict[float, float] = {}
        for la, ma in a.atoms:
            for lb, mb in b.atoms:
                loc = max(la, lb)
                merged[loc] = merged.get(loc, 0.0) + ma * mb
        return _build(sorted(merged.items()), 0.0, np.zeros(0), target_total=1.0)

    h = _common_step(a, b)
    end = max(a.support_end, b.support_end)
    n = int(math.ceil(end / h)) + 1
    if n > MAX_POINTS:
        raise GridOverflowError(f"max composition needs {n} grid points (budget {MAX_POINTS})")
    ts = h * np.arange(n)

    fa = np.interp(ts, a.grid(), a.density, right=0.0) if len(a.density) else np.zeros(n)
    fb = np.interp(ts, b.grid(), b.density, right=0.0) if len(b.density) else np.zeros(n)
    Fa = cdf_at_many(a, ts)
    Fb = cdf_at_many(b, ts)
    dens = fa * Fb + Fa * fb

    out_atoms = []
    for loc in sorted({loc for loc, _ in a.atoms} | {loc for loc, _ in b.atoms}):
        fa_r = cdf_at(a, loc)
        fb_r = cdf_at(b, loc)
        fa_l = fa_r - dict(a.atoms).get(loc, 0.0)
        fb_l = fb_r - dict(b.atoms).get(loc, 0.0)
        jump = fa_r * fb_r - fa_l * fb_l
        if jump > ATOM_EPS:
            out_atoms.append((loc, jump))
    return _build(out_atoms, h, dens, target_total=1.0)


def numeric_moments(d: NumericDistribution) -> tuple[float, float]:
    """(mean, variance) by atom sums plus trapezoidal density integrals."""
    mean = sum(m * loc for loc, m in d.atoms)
    second = sum(m * loc * loc for loc, m in d.atoms)
    if len(d.density) >= 2:
        ts = d.grid()
        mean += float(_trapz(ts * d.density, dx=d.grid_step))
        second += float(_trapz(ts * ts * d.density, dx=d.grid_step))
    return mean, second - mean * mean


def cdf_at_many(d: NumericDistribution, ts) -> np.ndarray:
    """F(t) (right-continuous) at arbitrary times."""
    ts = np.asarray(ts, dtype=float)
    if len(d.density) >= 2:
        cont = integrate.cumulative_trapezoid(d.density, dx=d.grid_step, initial=0.0)
        out = np.interp(ts, d.grid(), cont, left=0.0, right=cont[-1])
    else:
        out = np.zeros(ts.shape)
    for loc, mass in d.atoms:
        out = out + mass * (ts >= loc)
    return np.minimum(out, 1.0)


def cdf_at(d: NumericDistribution, t: float) -> float:
    return float(cdf_at_many(d, np.asarray(t, dtype=float)))


def ks_distance(d: NumericDistribution, samples) -> float:
    """Sup distance between d's CDF and the empirical CDF of samples.

    Handles atoms exactly: at a sample equal to an atom location the
    comparison uses both the right value and the left limit of F, and
    tied samples are ranked by counts rather than positions.
    """
    xs = np.sort(np.asarray(samples, dtype=float))
    n = xs.size
    if n == 0:
        raise ValueError("ks_distance needs at least one sample")
    F = cdf_at_many(d, xs)
    if d.atoms:
        locs = np.array([loc for loc, _ in d.atoms])
        masses = np.array([m for _, m in d.atoms])
        idx = np.searchsorted(locs, xs)
        idx_c = np.minimum(idx, len(locs) - 1)
        at_atom = (idx < len(locs)) & (locs[idx_c] == xs)
        F_left = F - np.where(at_atom, masses[idx_c], 0.0)
    else:
        F_left = F
    hi = np.searchsorted(xs, xs, side="right") / n
    lo = np.searchsorted(xs, xs, side="left") / n
    return float(max(np.max(np.abs(hi - F)), np.max(np.abs(lo - F_left))))


def validate_numeric(d: NumericDistribution) -> list[str]:
    """Invariant violations (empty list when the value is well formed)."""
    out: list[str] = []
    if abs(d.total_mass - 1.0) > 1e-6:
        out.append(f"total mass {d.total_mass:.8g} != 1")
    if d.grid_start != 0.0:
        out.append(f"grid_start must be 0, got {d.grid_start!r}")
    for i in range(1, len(d.atoms)):
        if d.atoms[i][0] <= d.atoms[i - 1][0]:
            out.append("atom locations must be strictly increasing")
            break
    if any(m <= 0 for _, m in d.atoms):
        out.append("atom masses must be positive")
    if len(d.density) != len(d.cdf):
        out.append("density and cdf lengths differ")
        return out
    if len(d.density):
        if d.grid_step <= 0:
            out.append(f"grid_step must be positive, got {d.grid_step!r}")
            return out
        if not np.all(np.isfinite(d.density)) or np.any(d.density < 0):
            out.append("density must be finite and non-negative")
        if np.any(np.diff(d.cdf) < -1e-12):
            out.append("cdf must be non-decreasing")
        if d.cdf[-1] < 1.0 - 1e-6:
            out.append(f"cdf ends at {d.cdf[-1]:.8g} < 1 - 1e-6")
        rebuilt = integrate.cumulative_trapezoid(d.density, dx=d.grid_step, initial=0.0)
        for loc, mass in d.atoms:
            idx = min(max(int(math.ceil(loc / d.grid_step - 1e-9)), 0), len(rebuilt) - 1)
            rebuilt[idx:] += mass
        if np.max(np.abs(rebuilt - d.cdf)) > 1e-9:
            out.append("cdf inconsistent with atoms + cumulative density")
    elif d.atoms and abs(d.atom_mass - 1.0) > 1e-6:
        out.append(f"atom-only distribution has mass {d.atom_mass:.8g}")
    return out


# ---------------------------------------------------------------------------
# CSV form: header t,pdf,cdf,atom_mass; grid rows carry atom_mass 0,
# atom rows carry pdf 0 and the jump mass; rows ordered by t (atoms
# after a coinciding grid row). repr() floats round-trip exactly.


def to_csv(d: NumericDistribution) -> str:
    rows: list[tuple[float, int, str]] = []
    ts = d.grid()
    for i in range(len(d.density)):
        t, p, c = float(ts[i]), float(d.density[i]), float(d.cdf[i])
        rows.append((t, 0, f"{t!r},{p!r},{c!r},0.0"))
    for loc, mass in d.atoms:
        rows.append((loc, 1, f"{float(loc)!r},0.0,{cdf_at(d, loc)!r},{float(mass)!r}"))
    rows.sort(key=lambda r: (r[0], r[1]))
    return "t,pdf,cdf,atom_mass\n" + "".join(line + "\n" for _, _, line in rows)


def from_csv(text: str) -> NumericDistribution:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "t,pdf,cdf,atom_mass":
        raise ValueError("expected header 't,pdf,cdf,atom_mass'")
    ts: list[float] = []
    dens: list[float] = []
    cdf: list[float] = []
    ats: list[tuple[float, float]] = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"expected 4 columns, got {ln!r}")
        t, pdf, c, am = (float(p) for p in parts)
        if am > 0.0:
            ats.append((t, am))
        else:
            ts.append(t)
            dens.append(pdf)
            cdf.append(c)
    if len(ts) >= 2:
        step = ts[1] - ts[0]
        if any(abs((ts[i + 1] - ts[i]) - step) > 1e-9 * max(step, 1.0) for i in range(len(ts) - 1)):
            raise ValueError("grid rows are not uniformly spaced")
    else:
        step = 0.0
    density = np.array(dens, dtype=float)
    cdf_arr = np.array(cdf, dtype=float)
    density.setflags(write=False)
    cdf_arr.setflags(write=False)
    return NumericDistribution(
        atoms=tuple(ats), grid_start=0.0, grid_step=step, density=density, cdf=cdf_arr
    )
