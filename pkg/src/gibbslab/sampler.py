"""Markov-chain estimation for lattices too large for exact quadrature.

Two reversible discrete-time kernels target the Gibbs measure exactly (no
step-size bias): random-scan single-site Metropolis with Gaussian proposals,
and full-vector MALA with Metropolis correction.  All randomness comes from a
counter-based Philox stream keyed by the chain seed, so runs are bit-for-bit
reproducible, and two chains given the same seed consume identical proposal
and acceptance streams (common random numbers).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import lattice as lt
from .errors import NonFiniteEnergyError, TooFewBatchesError
from .util import thread_count

SCHEMES = ("random-scan-metropolis", "full-step-mala")

_CHUNK_SWEEPS = 2048


@dataclass(frozen=True)
class ChainConfig:
    steps: int  # total sweeps (site updates per sweep = |box|)
    burn_in: int = 0
    thin: int = 1
    proposal_sd: float = 1.0
    seed: int = 0
    scheme: str = "random-scan-metropolis"
    n_batches: int = 32

    def __post_init__(self):
        if not (self.steps > self.burn_in >= 0):
            raise ValueError("need steps > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.proposal_sd <= 0:
            raise ValueError("proposal_sd must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.n_batches < 16:
            raise ValueError("n_batches must be at least 16")


@dataclass(frozen=True)
class SampleBatch:
    samples: np.ndarray  # (n_kept, n_sites), post burn-in, thinned
    accept_rate: float
    seed: int
    model_fingerprint: str
    scheme: str


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    stderr: float
    n_batches: int

    def __post_init__(self):
        if self.n_batches < 16:
            raise ValueError("estimates report at least 16 batches")
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    def within(self, reference: float, n_sigma: float = 3.0) -> bool:
        return abs(self.value - reference) <= n_sigma * self.stderr


def acceptance_probability(delta_energy: float) -> float:
    """Metropolis rule for a symmetric proposal: min(1, exp(-dH))."""
    if delta_energy <= 0.0:
        return 1.0
    return float(np.exp(-delta_energy))


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def derived_seed(seed: int, index: int) -> int:
    """Stable per-replicate seed for parallel chains."""
    ss = np.random.SeedSequence((int(seed), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_chain(model: lt.ModelSpec, cfg: ChainConfig) -> SampleBatch:
    """Sample the Gibbs measure; identical (model, cfg) gives identical output."""
    if cfg.scheme == "random-scan-metropolis":
        samples, acc = _run_metropolis(model, cfg)
    else:
        samples, acc = _run_mala(model, cfg)
    return SampleBatch(
        samples=samples,
        accept_rate=acc,
        seed=cfg.seed,
        model_fingerprint=model.fingerprint(),
        scheme=cfg.scheme,
    )


def _run_metropolis(model: lt.ModelSpec, cfg: ChainConfig):
    """Random-scan single-site Metropolis.

    State and local fields live in plain Python lists (numpy call overhead
    dominates per-site updates at these system sizes); randomness is drawn in
    bulk, chunk by chunk, from the Philox stream.  Local fields are refreshed
    from scratch every chunk to stop incremental roundoff drift.
    """
    from math import exp as _exp

    n = model.n_sites
    m = model.interaction
    m_rows = [[float(v) for v in m[i]] for i in range(n)]
    m_diag = [float(m[i, i]) for i in range(n)]
    lin = [float(v) for v in (model.field + 2.0 * model.boundary_field())]
    pots = model.potentials
    trivial_psi = all(p.is_zero for p in pots)

    rng = _rng(cfg.seed)
    x = [0.0] * n
    local = [0.0] * n  # local[i] = sum_j M_ij x_j, kept incrementally
    psi_cur = [0.0] * n if trivial_psi else [float(p.value(v)) for p, v in zip(pots, x)]

    n_kept = (cfg.steps - cfg.burn_in + cfg.thin - 1) // cfg.thin
    kept = np.empty((n_kept, n))
    kept_count = 0
    accepted = 0
    proposed = 0
    sd = cfg.proposal_sd
    sweep = 0
    while sweep < cfg.steps:
        chunk = min(_CHUNK_SWEEPS, cfg.steps - sweep)
        sites = rng.integers(0, n, size=chunk * n).tolist()
        zs = (rng.standard_normal(chunk * n) * sd).tolist()
        us = rng.random(chunk * n).tolist()
        pos = 0
        for c in range(chunk):
            for _ in range(n):
                i = sites[pos]
                z = zs[pos]
                u = us[pos]
                pos += 1
                xi = x[i]
                y = xi + z
                # quadratic part: M_ii (y^2 - x^2) + 2 dx sum_{j != i} M_ij x_j
                d_energy = (
                    lin[i] * z
                    + m_diag[i] * (y * y - xi * xi)
                    + 2.0 * z * (local[i] - m_diag[i] * xi)
                )
                if not trivial_psi:
                    psi_new = float(pots[i].value(y))
                    d_energy += psi_new - psi_cur[i]
                proposed += 1
                if d_energy <= 0.0 or u < _exp(-d_energy):
                    x[i] = y
                    row = m_rows[i]
                    for j in range(n):
                        local[j] += z * row[j]
                    if not trivial_psi:
                        psi_cur[i] = psi_new
                    accepted += 1
            t = sweep + c
            if t >= cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
                kept[kept_count] = x
                kept_count += 1
        if not all(map(np.isfinite, x)):
            raise NonFiniteEnergyError(f"state diverged near sweep {sweep + chunk}")
        sweep += chunk
        xv = np.asarray(x)
        local = list(map(float, m @ xv))  # refresh against roundoff drift
    return kept[:kept_count], accepted / max(proposed, 1)


def _run_mala(model: lt.ModelSpec, cfg: ChainConfig):
    n = model.n_sites
    rng = _rng(cfg.seed)
    sd = cfg.proposal_sd
    half_sd2 = 0.5 * sd * sd
    x = np.zeros(n)
    h_x = lt.energy(model, x)
    g_x = lt.grad_energy(model, x)
    kept = []
    accepted = 0
    for t in range(cfg.steps):
        z = rng.standard_normal(n)
        u = rng.random()
        y = x - half_sd2 * g_x + sd * z
        if not np.all(np.isfinite(y)):
            raise NonFiniteEnergyError(f"proposal diverged at step {t}")
        h_y = lt.energy(model, y)
        g_y = lt.grad_energy(model, y)
        fwd = y - x + half_sd2 * g_x  # = sd * z
        bwd = x - y + half_sd2 * g_y
        log_a = (h_x - h_y) + (fwd @ fwd - bwd @ bwd) / (2.0 * sd * sd)
        if log_a >= 0.0 or u < np.exp(log_a):
            x, h_x, g_x = y, h_y, g_y
            accepted += 1
        if t >= cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            kept.append(x.copy())
    return np.asarray(kept), accepted / max(cfg.steps, 1)


# ---------------------------------------------------------------------------
# Estimators (batch means)
# ---------------------------------------------------------------------------


def _batch_stats(series: np.ndarray, n_batches: int):
    """Mean and batch-means stderr of a scalar series."""
    size = series.size // n_batches
    if size < 1:
        raise TooFewBatchesError(
            f"{series.size} samples cannot fill {n_batches} batches"
        )
    trimmed = series[: size * n_batches]
    batches = trimmed.reshape(n_batches, size).mean(axis=1)
    value = float(batches.mean())
    stderr = float(batches.std(ddof=1) / np.sqrt(n_batches))
    return value, stderr


def _site_index(model: lt.ModelSpec, site) -> int:
    if isinstance(site, (int, np.integer)):
        if model.dim != 1:
            raise ValueError("bare integers only name sites on 1-d lattices")
        return model.lattice.index((int(site),))
    return model.lattice.index(site)


def estimate_mean(batch: SampleBatch, model: lt.ModelSpec, site, n_batches=None):
    nb = n_batches or 32
    t = _site_index(model, site)
    value, stderr = _batch_stats(batch.samples[:, t], nb)
    return EstimateWithError(value=value, stderr=stderr, n_batches=nb)


def estimate_cov(batch: SampleBatch, model: lt.ModelSpec, i, j, n_batches=None):
    """Empirical covariance of x_i and x_j with batch-means error bars.

    The product series is centered at the global means, so batch values are
    asymptotically independent estimates of the same covariance."""
    nb = n_batches or 32
    ti, tj = _site_index(model, i), _site_index(model, j)
    xi = batch.samples[:, ti]
    xj = batch.samples[:, tj]
    series = (xi - xi.mean()) * (xj - xj.mean())
    value, stderr = _batch_stats(series, nb)
    return EstimateWithError(value=value, stderr=stderr, n_batches=nb)


def ds_influence(
    model: lt.ModelSpec,
    observable_site,
    boundary_site,
    delta: float,
    cfg: ChainConfig,
) -> EstimateWithError:
    """Change of E[x_obs] when one exterior spin moves by delta.

    Both chains consume the same Philox stream (common random numbers), so the
    difference series has far smaller variance than either marginal estimate.
    """
    b = lt.as_site(boundary_site)
    if b not in model.ext_sites:
        raise KeyError(f"{b} is not a stored exterior site of the model")
    k = model.ext_sites.index(b)
    obs = _site_index(model, observable_site)

    omega2 = model.boundary.copy()
    omega2[k] += delta
    shifted = replace(model, boundary=_frozen(omega2))

    base = run_chain(model, cfg)
    moved = run_chain(shifted, cfg)
    diff = moved.samples[:, obs] - base.samples[:, obs]
    value, stderr = _batch_stats(diff, cfg.n_batches)
    return EstimateWithError(value=abs(value), stderr=stderr, n_batches=cfg.n_batches)


def _frozen(arr):
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class VarianceRow:
    omega_index: int
    site: tuple
    value: float
    stderr: float


def variance_sweep(model: lt.ModelSpec, boundary_family, cfg: ChainConfig):
    """Per-boundary, per-site variance estimates.

    Each boundary runs its own chain under a seed derived from (cfg.seed,
    index), so results do not depend on scheduling order."""
    family = [np.asarray(w, dtype=float) for w in boundary_family]
    for w in family:
        if w.shape != model.boundary.shape:
            raise ValueError("boundary values must match the stored shell")

    def one(idx_omega):
        idx, omega = idx_omega
        m = replace(model, boundary=_frozen(omega))
        batch = run_chain(m, replace(cfg, seed=derived_seed(cfg.seed, idx)))
        rows = []
        for t, site in enumerate(model.lattice.sites()):
            xs = batch.samples[:, t]
            series = (xs - xs.mean()) ** 2
            value, stderr = _batch_stats(series, cfg.n_batches)
            rows.append(VarianceRow(idx, site, value, stderr))
        return rows

    jobs = list(enumerate(family))
    workers = min(thread_count(), max(len(jobs), 1))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(one, jobs))
    else:
        chunks = [one(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]
