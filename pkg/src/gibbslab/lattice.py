"""Lattice geometry and model specification.

Sites live on a finite box in Z^d with the sup (l-infinity) metric.  A model
couples real-valued spins through a symmetric interaction matrix M, a linear
field s, per-site potentials, and boundary values on an exterior shell.

Energy convention: the quadratic part is the ordered double sum
``sum_{i,j} M_ij x_i x_j`` (the diagonal counted once, each distinct pair
twice), so the effective coupling between two distinct sites is ``2 M_ij``.
Downstream modules carry that factor of two explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import (
    AsymmetricInteractionError,
    BadRadiusError,
    DecayViolatedError,
    DimensionMismatchError,
    IllTemperedBoundaryError,
    NonDominantError,
)

Site = tuple  # integer coordinate tuple


def as_site(x) -> Site:
    """Normalize ints / sequences to a coordinate tuple."""
    if isinstance(x, (int, np.integer)):
        return (int(x),)
    return tuple(int(c) for c in x)


def dist(i, j) -> int:
    """Sup-metric distance between two sites."""
    a, b = as_site(i), as_site(j)
    if len(a) != len(b):
        raise DimensionMismatchError(f"sites {a} and {b} differ in dimension")
    return max(abs(p - q) for p, q in zip(a, b))


def is_half_integer(r: float) -> bool:
    """True when 2r is an integer but r is not (the tiling radii)."""
    two_r = 2.0 * r
    return abs(two_r - round(two_r)) < 1e-12 and abs(r - round(r)) > 1e-12


class Lattice:
    """Finite box ``prod_a [lo_a, hi_a]`` in Z^d, sites in lexicographic order."""

    def __init__(self, lo, hi):
        lo, hi = as_site(lo), as_site(hi)
        if len(lo) != len(hi):
            raise DimensionMismatchError("lo and hi differ in dimension")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"empty box lo={lo} hi={hi}")
        self.lo = lo
        self.hi = hi
        self.dim = len(lo)
        self.extents = tuple(h - l + 1 for l, h in zip(lo, hi))
        grids = np.meshgrid(
            *[np.arange(l, h + 1) for l, h in zip(lo, hi)], indexing="ij"
        )
        self._coords = np.stack([g.ravel() for g in grids], axis=1).astype(np.int32)
        self.n_sites = self._coords.shape[0]
        self._index = {tuple(int(c) for c in row): t for t, row in enumerate(self._coords)}
        self._dist = None

    @classmethod
    def box(cls, extents) -> "Lattice":
        """Box starting at the origin with the given per-axis extents."""
        e = as_site(extents)
        return cls(tuple(0 for _ in e), tuple(x - 1 for x in e))

    @classmethod
    def centered(cls, radius: int, dim: int = 1) -> "Lattice":
        """Symmetric box [-radius, radius]^dim."""
        return cls((-radius,) * dim, (radius,) * dim)

    def coords(self) -> np.ndarray:
        """All sites as an (n_sites, dim) integer array."""
        return self._coords

    def sites(self):
        return [tuple(int(c) for c in row) for row in self._coords]

    def index(self, site) -> int:
        s = as_site(site)
        if s not in self._index:
            raise KeyError(f"site {s} not in lattice")
        return self._index[s]

    def __contains__(self, site) -> bool:
        return as_site(site) in self._index

    def __len__(self) -> int:
        return self.n_sites

    def distance_matrix(self) -> np.ndarray:
        """Pairwise sup distances, cached after first use."""
        if self._dist is None:
            c = self._coords
            d = np.abs(c[:, None, :] - c[None, :, :]).max(axis=2)
            self._dist = d.astype(np.int32)
            self._dist.flags.writeable = False
        return self._dist

    def distances_from(self, site) -> np.ndarray:
        """Sup distances from one (possibly exterior) point to every site."""
        s = np.asarray(as_site(site), dtype=np.int64)
        if s.shape[0] != self.dim:
            raise DimensionMismatchError(f"site {tuple(s)} has wrong dimension")
        return np.abs(self._coords - s[None, :]).max(axis=1)

    def rim_depth(self) -> np.ndarray:
        """Per-site distance to the nearest box face (rim sites have depth 0)."""
        c = self._coords
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.minimum(c - lo[None, :], hi[None, :] - c).min(axis=1)


@dataclass(frozen=True)
class Box:
    """Sup-metric ball: center plus radius (half-integers tile the lattice)."""

    center: Site
    radius: float

    def contains(self, site) -> bool:
        return dist(self.center, site) <= self.radius

    def sites(self, lattice: Lattice):
        """Members of the ball clipped to the lattice."""
        return ball(self.center, self.radius, lattice)


def ball(center, radius: float, lattice: Lattice):
    """Sites of the lattice within sup distance <= radius of the center."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    mask = lattice.distances_from(center) <= radius
    return [tuple(int(c) for c in row) for row in lattice.coords()[mask]]


def ball_mask(center, radius: float, lattice: Lattice) -> np.ndarray:
    mask = lattice.distances_from(center) <= radius
    mask.flags.writeable = False
    return mask


def block_index(site, radius: float):
    """Index k of the unique tiling ball B_radius(2*radius*k) containing the site.

    Requires a half-integer radius; then the balls centered on the sub-lattice
    (2 radius) Z^d partition Z^d, so the assignment has no ties.
    """
    if not is_half_integer(radius):
        raise BadRadiusError(f"radius {radius} is not a half-integer")
    s = as_site(site)
    w = 2.0 * radius
    return tuple(int(math.floor(c / w + 0.5)) for c in s)


# ---------------------------------------------------------------------------
# Single-site potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Potential:
    """Bounded perturbation of a convex single-site potential.

    The convex part has nonnegative second derivative; the bounded part
    satisfies |value| + |derivative| <= bound_constant everywhere.  Both
    evaluators must accept numpy arrays.
    """

    name: str
    convex: Callable
    convex_deriv: Callable
    bounded: Callable
    bounded_deriv: Callable
    bound_constant: float
    even: bool
    is_zero: bool = False

    def value(self, r):
        if self.is_zero:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.convex(r) + self.bounded(r)

    def deriv(self, r):
        if self.is_zero:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.convex_deriv(r) + self.bounded_deriv(r)


def _zero(r):
    return np.zeros_like(np.asarray(r, dtype=float))


GAUSSIAN = Potential(
    name="gaussian",
    convex=_zero,
    convex_deriv=_zero,
    bounded=_zero,
    bounded_deriv=_zero,
    bound_constant=0.0,
    even=True,
    is_zero=True,
)


QUARTIC = Potential(
    name="quartic",
    convex=lambda r: np.asarray(r, dtype=float) ** 4 / 4.0,
    convex_deriv=lambda r: np.asarray(r, dtype=float) ** 3,
    bounded=_zero,
    bounded_deriv=_zero,
    bound_constant=0.0,
    even=True,
)


def bumped_quartic(amplitude: float) -> Potential:
    """Quartic well plus a cosine bump of the given amplitude."""
    a = float(amplitude)
    return Potential(
        name=f"bumped_quartic({a})",
        convex=lambda r: np.asarray(r, dtype=float) ** 4 / 4.0,
        convex_deriv=lambda r: np.asarray(r, dtype=float) ** 3,
        bounded=lambda r: a * np.cos(np.asarray(r, dtype=float)),
        bounded_deriv=lambda r: -a * np.sin(np.asarray(r, dtype=float)),
        bound_constant=2.0 * abs(a),
        even=True,
    )


BUILTIN_POTENTIALS = {
    "gaussian": lambda **kw: GAUSSIAN,
    "quartic": lambda **kw: QUARTIC,
    "bumped_quartic": lambda **kw: bumped_quartic(kw.get("amplitude", 0.1)),
}


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayParams:
    """Claimed algebraic envelope |M_ij| <= c / (1 + |i-j|)^exponent."""

    c: float
    exponent: float


@dataclass(frozen=True)
class ModelSpec:
    """Validated model: geometry, potentials, field, couplings, boundary.

    ``interaction`` is the dense symmetric matrix over the box; exterior
    couplings are the rectangle ``ext_interaction[i, b] = M_{i, ext_sites[b]}``
    and enter the energy only through the linear term ``2 sum M_ij x_i w_j``.
    ``delta`` is the diagonal-dominance margin including exterior couplings.
    """

    lattice: Lattice
    potentials: tuple
    field: np.ndarray
    interaction: np.ndarray
    ext_sites: tuple
    ext_interaction: np.ndarray
    boundary: np.ndarray
    decay: DecayParams
    delta: float

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def dim(self) -> int:
        return self.lattice.dim

    def boundary_field(self) -> np.ndarray:
        """Effective per-site field h_i = sum_{j exterior} M_ij w_j."""
        if self.ext_interaction.size == 0:
            return np.zeros(self.n_sites)
        return self.ext_interaction @ self.boundary

    def is_ferromagnetic(self) -> bool:
        off = self.interaction.copy()
        np.fill_diagonal(off, 0.0)
        return bool(np.all(off <= 0.0) and np.all(self.ext_interaction <= 0.0))

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(repr((self.lattice.lo, self.lattice.hi)).encode())
        h.update(repr(tuple(p.name for p in self.potentials)).encode())
        for arr in (self.field, self.interaction, self.ext_interaction, self.boundary):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(self.ext_sites).encode())
        return h.hexdigest()[:16]


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


def make_model(
    lattice: Lattice,
    potentials,
    interaction,
    field=None,
    ext_sites=(),
    ext_interaction=None,
    boundary=None,
    decay: DecayParams | None = None,
    decay_tol: float = 1e-9,
) -> ModelSpec:
    """Assemble and validate a model.

    Raises NonDominantError, AsymmetricInteractionError, DecayViolatedError,
    or IllTemperedBoundaryError naming an offending site pair.  When no decay
    claim is supplied, the tightest constant for exponent 2d+1 over the stored
    entries is recorded instead (so the claim is self-consistent by
    construction).
    """
    n = lattice.n_sites
    if isinstance(potentials, Potential):
        potentials = (potentials,) * n
    potentials = tuple(potentials)
    if len(potentials) != n:
        raise ValueError(f"need {n} potentials, got {len(potentials)}")

    m = np.array(interaction, dtype=float)
    if m.shape != (n, n):
        raise ValueError(f"interaction must be {n}x{n}, got {m.shape}")
    asym = np.abs(m - m.T)
    if asym.max() > 1e-12 * max(1.0, np.abs(m).max()):
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        raise AsymmetricInteractionError(
            f"M[{lattice.sites()[i]}, {lattice.sites()[j]}] != transpose "
            f"({m[i, j]} vs {m[j, i]})"
        )
    m = 0.5 * (m + m.T)  # remove roundoff asymmetry

    s = np.zeros(n) if field is None else np.array(field, dtype=float)
    if s.shape != (n,):
        raise ValueError(f"field must have shape ({n},)")

    ext_sites = tuple(as_site(e) for e in ext_sites)
    n_ext = len(ext_sites)
    for e in ext_sites:
        if e in lattice:
            raise ValueError(f"exterior site {e} lies inside the box")
    if ext_interaction is None:
        ext_interaction = np.zeros((n, n_ext))
    ext_m = np.array(ext_interaction, dtype=float).reshape(n, n_ext)
    omega = np.zeros(n_ext) if boundary is None else np.array(boundary, dtype=float)
    if omega.shape != (n_ext,):
        raise ValueError(f"boundary must have shape ({n_ext},)")

    # Diagonal dominance, exterior couplings included in the row sums.
    off = np.abs(m).sum(axis=1) - np.abs(np.diag(m))
    off = off + np.abs(ext_m).sum(axis=1)
    margins = np.diag(m) - off
    delta = float(margins.min())
    if delta <= 0.0:
        i = int(np.argmin(margins))
        raise NonDominantError(
            f"row {lattice.sites()[i]}: diagonal {m[i, i]} does not dominate "
            f"off-diagonal mass {off[i]} (margin {margins[i]})"
        )

    # Claimed algebraic decay on every stored off-diagonal pair.
    dmat = lattice.distance_matrix().astype(float)
    if decay is None:
        exponent = 2.0 * lattice.dim + 1.0
        cands = [np.abs(m) * (1.0 + dmat) ** exponent]
        if n_ext:
            ext_d = np.array(
                [lattice.distances_from(e) for e in ext_sites], dtype=float
            ).T
            cands.append(np.abs(ext_m) * (1.0 + ext_d) ** exponent)
        offmask = ~np.eye(n, dtype=bool)
        c_fit = max(
            float(cands[0][offmask].max()) if n > 1 else 0.0,
            float(cands[1].max()) if n_ext else 0.0,
        )
        decay = DecayParams(c=c_fit, exponent=exponent)
    else:
        env = decay.c / (1.0 + dmat) ** decay.exponent
        bad = np.abs(m) > env * (1.0 + decay_tol)
        np.fill_diagonal(bad, False)
        if bad.any():
            i, j = np.unravel_index(np.argmax(bad), bad.shape)
            raise DecayViolatedError(
                f"|M[{lattice.sites()[i]}, {lattice.sites()[j]}]| = {abs(m[i, j])} "
                f"exceeds {env[i, j]} claimed by (C={decay.c}, "
                f"exponent={decay.exponent})"
            )
        for b, e in enumerate(ext_sites):
            env_e = decay.c / (1.0 + lattice.distances_from(e)) ** decay.exponent
            bad_e = np.abs(ext_m[:, b]) > env_e * (1.0 + decay_tol)
            if bad_e.any():
                i = int(np.argmax(bad_e))
                raise DecayViolatedError(
                    f"|M[{lattice.sites()[i]}, {e}]| = {abs(ext_m[i, b])} exceeds "
                    f"{env_e[i]} claimed by (C={decay.c}, exponent={decay.exponent})"
                )

    # Well-tempered boundary: finite per-row coupling to the exterior data.
    if n_ext:
        with np.errstate(invalid="ignore"):
            load = np.abs(ext_m) * np.abs(omega)[None, :]
            row_load = load.sum(axis=1)
        if not np.all(np.isfinite(row_load)):
            i = int(np.argmax(~np.isfinite(row_load)))
            raise IllTemperedBoundaryError(
                f"row {lattice.sites()[i]}: non-finite boundary load"
            )

    return ModelSpec(
        lattice=lattice,
        potentials=potentials,
        field=_freeze(s),
        interaction=_freeze(m),
        ext_sites=ext_sites,
        ext_interaction=_freeze(ext_m),
        boundary=_freeze(omega),
        decay=decay,
        delta=delta,
    )


def _potential_groups(model: ModelSpec):
    """Indices of sites sharing the same potential object (for vector eval)."""
    groups = {}
    for t, p in enumerate(model.potentials):
        groups.setdefault(id(p), (p, []))[1].append(t)
    return [(p, np.asarray(ix)) for p, ix in groups.values()]


def potential_values(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Per-site psi_i(x_i), evaluated group-wise."""
    out = np.zeros_like(x, dtype=float)
    for p, ix in _potential_groups(model):
        if not p.is_zero:
            out[ix] = p.value(x[ix])
    return out


def potential_derivs(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Per-site psi_i'(x_i), evaluated group-wise."""
    out = np.zeros_like(x, dtype=float)
    for p, ix in _potential_groups(model):
        if not p.is_zero:
            out[ix] = p.deriv(x[ix])
    return out


def energy(model: ModelSpec, x) -> float:
    """Total energy of one configuration over the box."""
    x = np.asarray(x, dtype=float)
    psi = float(potential_values(model, x).sum())
    lin = float((model.field + 2.0 * model.boundary_field()) @ x)
    quad = float(x @ model.interaction @ x)
    return psi + lin + quad


def grad_energy(model: ModelSpec, x) -> np.ndarray:
    """Gradient of the energy: psi' + s + 2 M x + 2 * boundary field."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("configuration has non-finite entries")
    g = potential_derivs(model, x)
    return g + model.field + 2.0 * (model.interaction @ x) + 2.0 * model.boundary_field()


def ferromagnetize(model: ModelSpec) -> ModelSpec:
    """Flip every off-diagonal coupling to -|M_ij|; everything else unchanged.

    Absolute row sums are preserved, so the dominance margin is too.
    """
    m = model.interaction.copy()
    off = ~np.eye(model.n_sites, dtype=bool)
    m[off] = -np.abs(m[off])
    ext = -np.abs(model.ext_interaction)
    return replace(
        model,
        interaction=_freeze(m),
        ext_interaction=_freeze(ext),
    )


# ---------------------------------------------------------------------------
# Kernel-generated builders (shared by tests and the experiment runner)
# ---------------------------------------------------------------------------


def build_model(config) -> ModelSpec:
    """Assemble a validated model from an ExperimentConfig.

    Interaction kinds: power_law (amplitude, exponent, diagonal,
    ferromagnetic), nearest_neighbor (coupling alias amplitude, diagonal), or
    explicit (dense matrix).  Boundary kinds: zero, constant, or seeded
    random values on the truncated exterior shell; kernel kinds keep shell
    sites whose strongest coupling exceeds the cutoff.
    """
    from .errors import ConfigError

    lat_sec = config.section("lattice")
    extent = lat_sec.get("extent")
    if extent is None:
        raise ConfigError("[lattice] needs 'extent'")
    extents = as_site(extent)
    lo = lat_sec.get("lo")
    if lo is None:
        lattice = Lattice.box(extents)
    else:
        lo = as_site(lo)
        lattice = Lattice(lo, tuple(l + e - 1 for l, e in zip(lo, extents)))

    pot_sec = config.section("potential")
    kind = pot_sec.get("kind", "gaussian")
    if kind not in BUILTIN_POTENTIALS:
        raise ConfigError(
            f"[potential] kind {kind!r} not one of {sorted(BUILTIN_POTENTIALS)}"
        )
    potential = BUILTIN_POTENTIALS[kind](
        **{k: v for k, v in pot_sec.items() if k != "kind"}
    )

    int_sec = config.section("interaction")
    ikind = int_sec.get("kind", "power_law")
    diagonal = float(int_sec.get("diagonal", 1.0))
    ferromagnetic = bool(int_sec.get("ferromagnetic", True))
    amplitude = float(int_sec.get("amplitude", 0.0))
    exponent = float(int_sec.get("exponent", 2 * lattice.dim + 1))
    ext_sites, ext_m = (), None
    bnd_sec = config.section("boundary")
    bkind = bnd_sec.get("kind", "zero")
    width = bnd_sec.get("width")
    cutoff = float(bnd_sec.get("cutoff", 1e-12))

    if ikind == "power_law":
        m = power_law_interaction(
            lattice,
            amplitude,
            exponent,
            diagonal,
            ferromagnetic=ferromagnetic,
            sign_seed=int_sec.get("sign_seed"),
        )
        if bkind != "none":
            ext_sites, ext_m = power_law_exterior(
                lattice,
                amplitude,
                exponent,
                ferromagnetic=ferromagnetic,
                width=int(width) if width is not None else None,
                cutoff=cutoff,
            )
    elif ikind == "nearest_neighbor":
        coupling = float(int_sec.get("coupling", amplitude))
        if ferromagnetic:
            coupling = -abs(coupling)
        m = nearest_neighbor_interaction(lattice, coupling, diagonal)
        if bkind != "none":
            shell = [
                e
                for e in exterior_shell(lattice, 1)
                if (lattice.distances_from(e) == 1).any()
            ]
            cols = [
                coupling * (lattice.distances_from(e) == 1).astype(float)
                for e in shell
            ]
            ext_sites = tuple(shell)
            ext_m = (
                np.stack(cols, axis=1) if cols else np.zeros((lattice.n_sites, 0))
            )
    elif ikind == "explicit":
        m = np.array(int_sec.get("matrix"), dtype=float)
    else:
        raise ConfigError(f"[interaction] kind {ikind!r} unknown")

    if not np.all(np.isfinite(m)):
        raise ConfigError("interaction kernel produced non-finite entries")

    n_ext = len(ext_sites)
    if bkind == "zero" or n_ext == 0:
        omega = np.zeros(n_ext)
    elif bkind == "constant":
        omega = np.full(n_ext, float(bnd_sec.get("value", 0.0)))
    elif bkind == "random":
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(int(bnd_sec.get("seed", 0))))
        )
        scale = float(bnd_sec.get("value", 1.0))
        omega = rng.uniform(-scale, scale, size=n_ext)
    else:
        raise ConfigError(f"[boundary] kind {bkind!r} unknown")

    decay = None
    if "decay_c" in int_sec or "decay_exponent" in int_sec:
        decay = DecayParams(
            c=float(int_sec.get("decay_c", abs(amplitude) or 1.0)),
            exponent=float(int_sec.get("decay_exponent", exponent)),
        )
    elif ikind == "power_law":
        decay = DecayParams(c=abs(amplitude), exponent=exponent)

    return make_model(
        lattice,
        potential,
        m,
        ext_sites=ext_sites,
        ext_interaction=ext_m,
        boundary=omega,
        decay=decay,
    )


def power_law_interaction(
    lattice: Lattice,
    amplitude: float,
    exponent: float,
    diagonal: float,
    ferromagnetic: bool = True,
    sign_seed=None,
) -> np.ndarray:
    """Dense kernel |M_ij| = amplitude / (1+|i-j|)^exponent, M_ii = diagonal.

    Ferromagnetic means all off-diagonal entries negative; otherwise signs are
    drawn from the seeded generator (or taken positive when no seed is given).
    """
    d = lattice.distance_matrix().astype(float)
    m = abs(amplitude) / (1.0 + d) ** exponent
    if ferromagnetic:
        m = -m
    elif sign_seed is not None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(sign_seed)))
        signs = np.sign(rng.random((lattice.n_sites, lattice.n_sites)) - 0.5)
        signs = np.triu(signs, 1)
        signs = signs + signs.T
        m = m * signs
    np.fill_diagonal(m, diagonal)
    return m


def nearest_neighbor_interaction(
    lattice: Lattice, coupling: float, diagonal: float
) -> np.ndarray:
    d = lattice.distance_matrix()
    m = np.where(d == 1, coupling, 0.0)
    np.fill_diagonal(m, diagonal)
    return m


def exterior_shell(lattice: Lattice, width: int):
    """Exterior sites within sup distance `width` of the box."""
    lo = tuple(l - width for l in lattice.lo)
    hi = tuple(h + width for h in lattice.hi)
    outer = Lattice(lo, hi)
    return [s for s in outer.sites() if s not in lattice]


def power_law_exterior(
    lattice: Lattice,
    amplitude: float,
    exponent: float,
    ferromagnetic: bool = True,
    width: int | None = None,
    cutoff: float = 1e-12,
):
    """Kernel couplings from the box to a truncated exterior shell.

    The shell keeps only exterior sites whose strongest coupling into the box
    exceeds the cutoff; default width is three times the largest extent.
    """
    if width is None:
        width = 3 * max(lattice.extents)
    shell = exterior_shell(lattice, width)
    cols = []
    kept = []
    sgn = -1.0 if ferromagnetic else 1.0
    for e in shell:
        col = abs(amplitude) / (1.0 + lattice.distances_from(e).astype(float)) ** exponent
        if col.max() >= cutoff:
            kept.append(e)
            cols.append(sgn * col)
    if not kept:
        return (), np.zeros((lattice.n_sites, 0))
    return tuple(kept), np.stack(cols, axis=1)
