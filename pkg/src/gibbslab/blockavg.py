"""Block-averaging coefficients and the coarse block matrix.

Averaging a per-ball energy estimate over every ball center inside a ball
around a reference site produces three weight families, all computed here by
direct enumeration over the finite box:

    p_i     = |B_R(k) /\\ B_R(i)|                       (bulk multiplicity)
    q_i     = sum_{l in B_R(k) /\\ B_R(i)} sum_{j outside B_R(l)} |M_ij| / 2
    kappa_kj = sum_{l in B_R(k), j outside B_R(l)} sum_{i in B_R(l)} |M_ij| / 2

R must be a half-integer (2R integer, R not an integer) so that the balls
centered on the sub-lattice (2R)Z^d tile the lattice.  The coarse matrix has
rho^2 on the diagonal and -C rho kappabar_kj off the diagonal, where kappabar
rescales the annulus-corrected kappa by the block volume; once it is strictly
diagonally dominant its inverse is entrywise nonnegative and inherits the
algebraic decay of the interaction, which is what the per-direction energy
bounds rest on.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import lattice as lt
from .errors import BadRadiusError, NotDominantError
from .fitting import FitResult, decay_window, fit_power_law


def _require_half_integer(radius: float):
    if not lt.is_half_integer(radius):
        raise BadRadiusError(
            f"radius {radius} must satisfy: 2R integer, R not integer"
        )


@dataclass(frozen=True)
class BlockCoefficients:
    center: tuple
    radius: float
    p: np.ndarray  # int, per site
    q: np.ndarray  # per site
    kappa: np.ndarray  # per site

    def as_maps(self, lattice: lt.Lattice):
        sites = lattice.sites()
        return (
            {s: int(v) for s, v in zip(sites, self.p)},
            {s: float(v) for s, v in zip(sites, self.q)},
            {s: float(v) for s, v in zip(sites, self.kappa)},
        )


def coefficients(model: lt.ModelSpec, center, radius: float) -> BlockCoefficients:
    """Exact enumeration of p, q, kappa for one reference site.

    All sums run over the finite box only; exterior couplings do not enter.
    """
    _require_half_integer(radius)
    lat = model.lattice
    k = lt.as_site(center)
    if k not in lat:
        raise KeyError(f"center {k} not in the lattice")
    return _coefficients_at(model, k, radius)


def _coefficients_at(model: lt.ModelSpec, point, radius: float) -> BlockCoefficients:
    """Enumeration core; the reference point may lie outside the box."""
    lat = model.lattice
    n = lat.n_sites
    dmat = lat.distance_matrix()
    absm_half = 0.5 * np.abs(model.interaction)
    d_k = lat.distances_from(point)
    ball_k = np.flatnonzero(d_k <= radius)

    p = np.zeros(n, dtype=np.int64)
    q = np.zeros(n)
    kappa = np.zeros(n)
    for ell in ball_k:
        in_ell = dmat[ell] <= radius  # members of B_R(l)
        p += in_ell
        out_sum = absm_half[:, ~in_ell].sum(axis=1)  # sum_{j not in B_R(l)} |M_ij|/2
        q[in_ell] += out_sum[in_ell]
        in_sum = absm_half[in_ell, :].sum(axis=0)  # sum_{i in B_R(l)} |M_ij|/2
        kappa[~in_ell] += in_sum[~in_ell]
    return BlockCoefficients(
        center=tuple(int(c) for c in lt.as_site(point)),
        radius=radius,
        p=p,
        q=q,
        kappa=kappa,
    )


def dist_to_ball(lattice: lt.Lattice, center, radius: float) -> np.ndarray:
    """Per-site sup distance to the (unclipped) ball around the center."""
    d = lattice.distances_from(center).astype(float)
    return np.maximum(d - math.floor(radius), 0.0)


@dataclass(frozen=True)
class RatioFamily:
    name: str
    values: dict  # radius -> sup ratio
    monotone_growth: bool


@dataclass(frozen=True)
class CoefficientReport:
    center: tuple
    radii: tuple
    epsilon: float
    alpha: float
    alpha_bar: float
    p_ok: bool
    p_min_interior: dict  # radius -> (min p over checked sites, required bound)
    families: tuple  # RatioFamily, ...

    @property
    def passed(self) -> bool:
        return self.p_ok and not any(f.monotone_growth for f in self.families)

    def rows(self, dim: int):
        out = []
        for r, (pmin, bound) in self.p_min_interior.items():
            out.append((dim, r, "p_min_interior", 0, pmin, bound, pmin / bound))
        for fam in self.families:
            for r, v in fam.values.items():
                out.append((dim, r, fam.name, 0, v, "", ""))
        return out


def _monotone_growth(values) -> bool:
    """Sustained monotone growth across the radius list.

    A correctly normalized family may still creep up toward its supremum, with
    increments dying out; a family off by a power of R keeps increments of
    constant or growing size.  Flag only the latter: strictly increasing
    everywhere with the final increment at least half the first one."""
    vs = list(values)
    if len(vs) < 2:
        return False
    if not all(b > a * (1 + 1e-12) for a, b in zip(vs, vs[1:])):
        return False
    if len(vs) == 2:
        return True
    increments = [b - a for a, b in zip(vs, vs[1:])]
    return increments[-1] > 0.5 * increments[0]


def verify_coefficient_bounds(
    model: lt.ModelSpec, radii, epsilon: float = 0.1, center=None
) -> CoefficientReport:
    """Scaling checks for the weight families across a list of radii.

    Interior means sup distance to the box rim greater than 4R; the bulk
    multiplicity bound p_i >= (floor(R)+1)^d applies to interior sites of
    B_R(k).  The two kappa envelopes normalize by R^{d-alphabar+eps} and
    R^{2d}; a family that grows strictly with R at every step is flagged.
    """
    radii = tuple(sorted(float(r) for r in radii))
    for r in radii:
        _require_half_integer(r)
    lat = model.lattice
    d = lat.dim
    alpha = model.decay.exponent - 2.0 * d
    alpha_bar = min(alpha, 1.0)
    if center is None:
        mid = tuple((lo + hi) // 2 for lo, hi in zip(lat.lo, lat.hi))
        center = mid
    depth = lat.rim_depth()

    p_ok = True
    p_min = {}
    q_ratio = {}
    kap_near = {}
    kap_far = {}
    for r in radii:
        co = coefficients(model, center, r)
        d_k = lat.distances_from(center)
        interior_ball = (d_k <= r) & (depth > 4.0 * r)
        bound = (math.floor(r) + 1) ** d
        if interior_ball.any():
            pmin = int(co.p[interior_ball].min())
            p_min[r] = (pmin, bound)
            p_ok = p_ok and pmin >= bound
        in_2r = d_k <= 2.0 * r
        q_ratio[r] = float(co.q[in_2r].max() / r ** (d - 1)) if in_2r.any() else 0.0
        gap = 1.0 + dist_to_ball(lat, center, 2.0 * r)
        kap_near[r] = float(
            (co.kappa * gap ** (d + epsilon)).max() / r ** (d - alpha_bar + epsilon)
        )
        kap_far[r] = float((co.kappa * gap ** (2 * d + alpha)).max() / r ** (2 * d))
    families = (
        RatioFamily("q_over_R^(d-1)", q_ratio, _monotone_growth(q_ratio.values())),
        RatioFamily(
            "kappa_near_envelope", kap_near, _monotone_growth(kap_near.values())
        ),
        RatioFamily(
            "kappa_far_envelope", kap_far, _monotone_growth(kap_far.values())
        ),
    )
    return CoefficientReport(
        center=tuple(center),
        radii=radii,
        epsilon=epsilon,
        alpha=alpha,
        alpha_bar=alpha_bar,
        p_ok=p_ok,
        p_min_interior=p_min,
        families=families,
    )


# ---------------------------------------------------------------------------
# Coarse block matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockMatrix:
    blocks: tuple  # sub-lattice indices k; ball center is (2R) * k
    radius: float
    rho: float
    big_c: float
    matrix: np.ndarray  # diagonal rho^2, off-diagonal -C rho kappabar
    kappabar: np.ndarray

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def dominance_margins(self) -> np.ndarray:
        off = np.abs(self.matrix).sum(axis=1) - np.abs(np.diag(self.matrix))
        return np.diag(self.matrix) - off

    def is_dominant(self) -> bool:
        return bool(self.dominance_margins().min() > 0.0)

    def block_of_site(self, site) -> int:
        k = lt.block_index(site, self.radius)
        return self.blocks.index(k)


def block_grid(lattice: lt.Lattice, radius: float):
    """Sub-lattice indices whose tiling balls intersect the box."""
    _require_half_integer(radius)
    w = 2.0 * radius
    ranges = []
    for lo, hi in zip(lattice.lo, lattice.hi):
        k_lo = math.ceil((lo - radius) / w)
        k_hi = math.floor((hi + radius) / w)
        ranges.append(range(k_lo, k_hi + 1))
    return [k for k in itertools.product(*ranges)]


def assemble_block_matrix(
    model: lt.ModelSpec, radius: float, rho: float, big_c: float = 1.0
) -> BlockMatrix:
    """Coarse matrix on the tiling sub-lattice.

    kappabar_kj = max_{i in block j} [kappa_{center(k), i}
                  + q_i 1(i in annulus of k)] / R^d.
    The annulus correction carries the exact boundary weights q_i (whose
    display bound is of order R^{d-1}); using the enumerated values keeps the
    matrix tight and makes a zero interaction give a purely diagonal matrix.
    The constant C scales the assembled off-diagonal.
    """
    _require_half_integer(radius)
    if rho <= 0:
        raise ValueError("rho must be positive")
    lat = model.lattice
    d = lat.dim
    blocks = block_grid(lat, radius)
    nb = len(blocks)
    w = 2.0 * radius
    centers = [tuple(int(round(w * c)) for c in k) for k in blocks]

    # site -> block membership masks
    member = np.zeros((nb, lat.n_sites), dtype=bool)
    for b, c in enumerate(centers):
        member[b] = lat.distances_from(c) <= radius

    kappabar = np.zeros((nb, nb))
    for a, c in enumerate(centers):
        co = _coefficients_at(model, c, radius)
        d_c = lat.distances_from(c)
        annulus = (d_c > radius) & (d_c <= 2.0 * radius)
        tilde = co.kappa + co.q * annulus
        for b in range(nb):
            if b == a:
                continue
            if member[b].any():
                kappabar[a, b] = tilde[member[b]].max() / radius**d

    a_mat = -big_c * rho * kappabar
    np.fill_diagonal(a_mat, rho * rho)
    return BlockMatrix(
        blocks=tuple(blocks),
        radius=radius,
        rho=rho,
        big_c=big_c,
        matrix=a_mat,
        kappabar=kappabar,
    )


def block_matrix_from_dense(matrix, blocks=None, radius: float = 0.5) -> BlockMatrix:
    """Wrap an explicit coarse matrix (testing hook for inverse-decay checks)."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if blocks is None:
        blocks = tuple((i,) for i in range(n))
    return BlockMatrix(
        blocks=tuple(blocks),
        radius=radius,
        rho=float(np.sqrt(max(m.diagonal().min(), 0.0))),
        big_c=1.0,
        matrix=m,
        kappabar=np.zeros_like(m),
    )


@dataclass(frozen=True)
class InverseDecayResult:
    table: tuple  # rows (distance, entry) for the entry envelope
    fit: FitResult | None  # None when there is nothing to fit (diagonal A)
    min_entry: float
    inverse: np.ndarray


def inverse_decay(bm: BlockMatrix) -> InverseDecayResult:
    """Dense inverse of the block matrix with its decay envelope fit.

    Requires strict diagonal dominance; with nonpositive off-diagonal entries
    the inverse must be entrywise nonnegative, and a violation beyond roundoff
    aborts.  The envelope is max |(A^-1)_kj| at each block distance, fitted on
    the default decay window; a purely diagonal matrix reports fit=None.
    """
    if bm.n_blocks > 1000:
        raise ValueError("dense inversion capped at 1000 blocks")
    margins = bm.dominance_margins()
    if margins.min() <= 0.0:
        k = int(np.argmin(margins))
        raise NotDominantError(
            f"block {bm.blocks[k]} has dominance margin {margins.min()}"
        )
    inv = np.linalg.inv(bm.matrix)
    scale = np.abs(inv).max()
    min_entry = float(inv.min())
    off = bm.matrix - np.diag(np.diag(bm.matrix))
    if np.all(off <= 0.0) and min_entry < -1e-10 * scale:
        raise ArithmeticError(
            f"inverse of a dominant matrix with nonpositive off-diagonal "
            f"entries has a negative entry {min_entry}"
        )
    coords = np.asarray(bm.blocks)
    dmat = np.abs(coords[:, None, :] - coords[None, :, :]).max(axis=2)
    env = {}
    for a in range(bm.n_blocks):
        for b in range(bm.n_blocks):
            r = int(dmat[a, b])
            if r == 0:
                continue
            env[r] = max(env.get(r, 0.0), abs(inv[a, b]))
    table = tuple(sorted(env.items()))
    positive = [(r, v) for r, v in table if v > 0.0]
    fit = None
    if len(positive) >= 4:
        windowed = decay_window(positive)
        if len(windowed) >= 4:
            fit = fit_power_law(windowed)
    return InverseDecayResult(table=table, fit=fit, min_entry=min_entry, inverse=inv)


def directional_bound(
    model: lt.ModelSpec,
    radius: float,
    rho: float,
    supp_f,
    big_c: float = 1.0,
) -> np.ndarray:
    """Per-site upper-bound profile for the directional energies of the
    Poisson potential of an observable supported on supp_f.

    Solves A Phi = sum_{k touching supp_f} e_k and maps each block value back
    to its member sites.  The profile is a shape: absolute comparisons
    calibrate the suppressed constant on a block near the support.
    """
    bm = assemble_block_matrix(model, radius, rho, big_c)
    margins = bm.dominance_margins()
    if margins.min() <= 0.0:
        raise NotDominantError(
            f"block matrix not dominant at R={radius} (margin {margins.min()})"
        )
    supp = [lt.as_site(s) for s in supp_f]
    lat = model.lattice
    if not supp:
        return np.zeros(lat.n_sites)
    rhs = np.zeros(bm.n_blocks)
    w = 2.0 * radius
    for b, k in enumerate(bm.blocks):
        c = tuple(int(round(w * ci)) for ci in k)
        if any(lt.dist(c, s) <= 2.0 * radius for s in supp):
            rhs[b] = 1.0
    phi = np.linalg.solve(bm.matrix, rhs)
    out = np.empty(lat.n_sites)
    block_pos = {k: b for b, k in enumerate(bm.blocks)}
    for t, site in enumerate(lat.sites()):
        out[t] = phi[block_pos[lt.block_index(site, radius)]]
    return out
