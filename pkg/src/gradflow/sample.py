"""Stochastic samplers on a deterministic randomness contract.

All methods draw from counter-based substreams addressed by (seed,
particle, step), so runs are reproducible bit for bit whatever the worker
count.  Per-step draw layout, in uniform columns:

* ula / ensemble: dim Gaussian coordinates
* mala:           dim Gaussian coordinates + 1 acceptance uniform
* bdl:            dim Gaussian coordinates + kill/duplicate uniform
                  + replacement-partner uniform

Ensemble initialization uses context 1 of the stream, dynamics context 0.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import ndtri

from .density import silverman_bandwidth
from .errors import DivergenceError, PreconditionerError
from .potentials import Potential
from .rng import RngStream

__all__ = [
    "Ensemble",
    "ChainStats",
    "SampleRun",
    "ula_step",
    "mala_acceptance",
    "mala_transition",
    "mala_step",
    "ensemble_covariance",
    "ensemble_langevin_step",
    "bdl_step",
    "run_sampler",
    "integrated_autocorr_time",
]


@dataclass
class Ensemble:
    """J particle positions plus the stream and step counter that evolve them."""

    particles: np.ndarray
    rng: RngStream
    step: int = 0

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.particles = arr
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError("particles must be a (J, dim) array with J >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("particles must be finite")

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @classmethod
    def gaussian(cls, rng: RngStream, size: int, mean, cov) -> "Ensemble":
        """Draw J particles from N(mean, cov) using the init context of the stream."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        chol = np.linalg.cholesky(cov)
        noise = rng.normal_rows(0, 0, size, mean.size, context=1)
        return cls(particles=mean + noise @ chol.T, rng=rng)

    @classmethod
    def at_points(cls, rng: RngStream, size: int, points) -> "Ensemble":
        """Place J particles on the given points, cycling when J exceeds them."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.arange(size) % pts.shape[0]
        return cls(particles=pts[idx].copy(), rng=rng)


@dataclass
class ChainStats:
    """Move accounting and pooled moments of the recorded states."""

    n_steps: int
    n_moves: int
    n_accepted: int
    mean: np.ndarray
    cov: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return 1.0 if self.n_moves == 0 else self.n_accepted / self.n_moves


@dataclass
class SampleRun:
    """Thinned snapshots of an ensemble: times (n,), states (n, J, dim)."""

    times: np.ndarray
    steps: np.ndarray
    states: np.ndarray
    stats: ChainStats

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def ula_step(p: Potential, theta, tau: float, noise) -> np.ndarray:
    """theta - tau grad V(theta) + sqrt(2 tau) noise; works on single points or batches."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    th = np.asarray(theta, dtype=float)
    return th - tau * p.grad(th) + np.sqrt(2.0 * tau) * np.asarray(noise, dtype=float)


def _log_proposal(p: Potential, x, x_new, tau: float):
    # Gaussian ULA proposal density, up to the constant that cancels in ratios
    mean = x - tau * p.grad(x)
    diff = np.asarray(x_new, dtype=float) - mean
    return -np.sum(diff * diff, axis=-1) / (4.0 * tau)


def mala_acceptance(p: Potential, theta, theta_star, tau: float) -> float:
    """Metropolis-Hastings acceptance probability for the ULA proposal.

    Computed entirely in log space, so scaling the unnormalized target by
    any constant leaves the result unchanged and extreme energies cannot
    overflow.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    th = np.asarray(theta, dtype=float)
    st = np.asarray(theta_star, dtype=float)
    log_ratio = (float(p.value(th)) - float(p.value(st))
                 + float(_log_proposal(p, st, th, tau))
                 - float(_log_proposal(p, th, st, tau)))
    if np.isnan(log_ratio):
        return 0.0
    return float(np.exp(min(0.0, log_ratio)))


def mala_transition(p: Potential, theta, tau: float, noise, u: float):
    """One accept/reject step with the randomness passed in explicitly."""
    th = np.asarray(theta, dtype=float)
    proposal = ula_step(p, th, tau, noise)
    accepted = u < mala_acceptance(p, th, proposal, tau)
    return (proposal if accepted else th.copy()), bool(accepted)


def mala_step(p: Potential, theta, tau: float, rng: RngStream, step: int,
              particle: int = 0):
    """Single-chain step drawing proposal noise and the acceptance uniform
    from the chain's substream at the given step index."""
    row = rng.uniform_row(step, particle, p.dim + 1)
    return mala_transition(p, theta, tau, ndtri(row[:p.dim]), row[p.dim])


def ensemble_covariance(e: Ensemble) -> np.ndarray:
    """Empirical covariance with divisor J (not J - 1), symmetrized exactly."""
    centered = e.particles - e.particles.mean(axis=0)
    cov = centered.T @ centered / e.size
    return 0.5 * (cov + cov.T)


def _spectral_roots(matrix: np.ndarray):
    w, q = np.linalg.eigh(matrix)
    if w.min() <= 1e-14:
        raise PreconditionerError(
            f"ensemble covariance is numerically singular (min eigenvalue "
            f"{w.min():.3e}); increase the ridge or the ensemble size")
    sqrt_m = (q * np.sqrt(w)) @ q.T
    return sqrt_m


def ensemble_langevin_step(p: Potential, e: Ensemble, tau: float,
                           ridge: Optional[float] = None,
                           workers: int = 1) -> Ensemble:
    """Interacting step preconditioned by the ensemble covariance.

    Every particle moves with mobility M = cov + ridge I shared across the
    ensemble: drift -tau M grad V, noise sqrt(2 tau) M^(1/2) xi, the matrix
    square root symmetric via eigendecomposition.  The default ridge is
    1e-6 trace(cov)/dim; the finite-ensemble scheme is used as printed,
    with no small-J correction drift.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    cov = ensemble_covariance(e)
    if ridge is None:
        ridge = 1e-6 * np.trace(cov) / e.dim
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    mobility = cov + ridge * np.eye(e.dim)
    sqrt_m = _spectral_roots(mobility)
    noise = _noise_matrix(e.rng, e.step, e.size, e.dim, workers)
    grads = p.grad(e.particles)
    new = e.particles - tau * grads @ mobility + np.sqrt(2.0 * tau) * noise @ sqrt_m
    return Ensemble(particles=new, rng=e.rng, step=e.step + 1)


def _ensemble_log_kde(particles: np.ndarray, bandwidth) -> np.ndarray:
    """Log of the Gaussian product-kernel density of the ensemble at its
    own points (self term included, so the sum never underflows)."""
    j, dim = particles.shape
    if bandwidth is None or bandwidth == "auto":
        h = np.empty(dim)
        for a in range(dim):
            col = particles[:, a]
            std = float(np.std(col, ddof=1))
            h[a] = silverman_bandwidth(col) if std > 0 else 1.0
            if std > 0:
                h[a] = max(h[a], 1e-3 * std)
    else:
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        h = np.full(dim, float(bandwidth))
    log_norm = -np.log(j) - np.sum(np.log(h * np.sqrt(2.0 * np.pi)))
    scaled = particles / h
    out = np.empty(j)
    chunk = max(1, 4_000_000 // j)
    sq_norms = np.sum(scaled**2, axis=1)
    for lo in range(0, j, chunk):
        hi = min(j, lo + chunk)
        d2 = (sq_norms[lo:hi, None] + sq_norms[None, :]
              - 2.0 * scaled[lo:hi] @ scaled.T)
        np.maximum(d2, 0.0, out=d2)
        out[lo:hi] = np.exp(-0.5 * d2).sum(axis=1)
    return np.log(np.maximum(out, 1e-300)) + log_norm


def bdl_step(p: Potential, e: Ensemble, tau: float, bandwidth="auto",
             log_density_fn: Optional[Callable] = None,
             workers: int = 1) -> Ensemble:
    """Langevin substep followed by a birth-death exchange.

    Rates r_i = log rho_hat(theta_i) + V(theta_i) are centered by their
    ensemble mean, which cancels the unknown normalizer of the target;
    particles with positive excess are killed (replaced by a uniformly
    chosen other particle) with probability 1 - exp(-beta tau), those with
    negative excess duplicated onto a uniform partner with probability
    1 - exp(beta tau).  The sweep runs serially in particle-index order on
    the current state, and the particle count is conserved exactly.
    ``log_density_fn`` overrides the kernel density estimate (used by
    stationarity checks with exact densities).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if e.size < 2:
        raise ValueError("birth-death needs at least 2 particles")
    width = e.dim + 2
    rows = _uniform_matrix(e.rng, e.step, e.size, width, workers)
    noise = ndtri(rows[:, :e.dim])
    u_decide = rows[:, e.dim]
    u_partner = rows[:, e.dim + 1]

    moved = ula_step(p, e.particles, tau, noise)
    if log_density_fn is not None:
        log_rho = np.asarray(log_density_fn(moved), dtype=float)
    else:
        log_rho = _ensemble_log_kde(moved, bandwidth)
    rates = log_rho + p.value(moved)
    beta = rates - rates.mean()

    particles = moved.copy()
    j = e.size
    partners = np.floor(u_partner * (j - 1)).astype(int)
    partners = np.minimum(partners, j - 2)
    for i in range(j):
        b = beta[i]
        if b == 0.0:
            continue
        partner = partners[i] + (1 if partners[i] >= i else 0)
        if b > 0:
            if u_decide[i] < -np.expm1(-b * tau):
                particles[i] = particles[partner]
        else:
            if u_decide[i] < -np.expm1(b * tau):
                particles[partner] = particles[i]
    return Ensemble(particles=particles, rng=e.rng, step=e.step + 1)


# --- vectorized driver -------------------------------------------------------

def _chunk_bounds(j: int, workers: int):
    workers = max(1, min(workers, j))
    size = (j + workers - 1) // workers
    return [(lo, min(j, lo + size)) for lo in range(0, j, size)]


def _uniform_matrix(rng: RngStream, step: int, j: int, width: int,
                    workers: int) -> np.ndarray:
    """Per-step uniforms, generated chunk by chunk; values do not depend on
    the chunking because every row is addressed by its particle index."""
    if workers <= 1:
        return rng.uniform_rows(step, 0, j, width)
    bounds = _chunk_bounds(j, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda ab: rng.uniform_rows(step, ab[0], ab[1], width), bounds))
    return np.concatenate(parts, axis=0)


def _noise_matrix(rng: RngStream, step: int, j: int, dim: int,
                  workers: int) -> np.ndarray:
    return ndtri(_uniform_matrix(rng, step, j, dim, workers))


def _check_finite(particles: np.ndarray, step: int):
    finite = np.isfinite(particles).all(axis=1)
    if not finite.all():
        raise DivergenceError(step=step, particle=int(np.argmin(finite)))


def run_sampler(method: str, p: Potential, init: Union[Ensemble, np.ndarray],
                tau: float, n_steps: int, thin: int = 1,
                rng: Optional[RngStream] = None, workers: int = 1,
                ridge: Optional[float] = None, bandwidth="auto") -> SampleRun:
    """Run a sampler for n_steps, recording every thin-th state.

    ``init`` is an Ensemble, or a single point combined with ``rng`` (run
    as one chain).  Output is deterministic given the stream seed; a
    non-finite state aborts with the offending step and particle.
    """
    if method not in ("ula", "mala", "ensemble", "bdl"):
        raise ValueError(f"unknown sampler method {method!r}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if isinstance(init, Ensemble):
        ens = init
    else:
        if rng is None:
            raise ValueError("vector init requires an explicit rng stream")
        ens = Ensemble(particles=np.atleast_2d(np.asarray(init, dtype=float)), rng=rng)
    if ens.dim != p.dim:
        raise ValueError(f"ensemble dimension {ens.dim} != potential dimension {p.dim}")

    particles = ens.particles.copy()
    stream = ens.rng
    j, dim = particles.shape
    step0 = ens.step
    sqrt2tau = np.sqrt(2.0 * tau)

    times = [step0 * tau]
    steps = [step0]
    snaps = [particles.copy()]
    n_accepted = 0
    n_moves = 0

    if method == "mala":
        energy = np.asarray(p.value(particles), dtype=float)
        grads = p.grad(particles)

    for local in range(1, n_steps + 1):
        k = step0 + local - 1  # stream step index for this transition
        if method == "ula":
            noise = _noise_matrix(stream, k, j, dim, workers)
            particles = particles - tau * p.grad(particles) + sqrt2tau * noise
            n_moves += j
            n_accepted += j
        elif method == "mala":
            rows = _uniform_matrix(stream, k, j, dim + 1, workers)
            noise = ndtri(rows[:, :dim])
            u = rows[:, dim]
            proposal = particles - tau * grads + sqrt2tau * noise
            prop_energy = np.asarray(p.value(proposal), dtype=float)
            prop_grads = p.grad(proposal)
            fwd = -np.sum((proposal - particles + tau * grads) ** 2, axis=-1) / (4 * tau)
            bwd = -np.sum((particles - proposal + tau * prop_grads) ** 2, axis=-1) / (4 * tau)
            log_a = energy - prop_energy + bwd - fwd
            accept = u < np.exp(np.minimum(0.0, log_a))
            particles = np.where(accept[:, None], proposal, particles)
            energy = np.where(accept, prop_energy, energy)
            grads = np.where(accept[:, None], prop_grads, grads)
            n_moves += j
            n_accepted += int(accept.sum())
        elif method == "ensemble":
            stepped = ensemble_langevin_step(
                p, Ensemble(particles=particles, rng=stream, step=k), tau,
                ridge=ridge, workers=workers)
            particles = stepped.particles
            n_moves += j
            n_accepted += j
        else:  # bdl
            stepped = bdl_step(
                p, Ensemble(particles=particles, rng=stream, step=k), tau,
                bandwidth=bandwidth, workers=workers)
            particles = stepped.particles
            n_moves += j
            n_accepted += j
        _check_finite(particles, k)
        if local % thin == 0:
            times.append((step0 + local) * tau)
            steps.append(step0 + local)
            snaps.append(particles.copy())

    states = np.stack(snaps)
    pooled = states[1:] if states.shape[0] > 1 else states
    flat = pooled.reshape(-1, dim)
    mean = flat.mean(axis=0)
    cov = np.atleast_2d(np.cov(flat.T)) if flat.shape[0] > 1 else np.zeros((dim, dim))
    stats = ChainStats(n_steps=n_steps, n_moves=n_moves, n_accepted=n_accepted,
                       mean=mean, cov=cov)
    return SampleRun(times=np.asarray(times), steps=np.asarray(steps, dtype=int),
                     states=states, stats=stats)


def integrated_autocorr_time(series: np.ndarray) -> float:
    """Integrated autocorrelation time 1 + 2 sum acf(l) of a stationary series.

    ``series`` is (n_steps,) or (n_steps, n_chains); the autocorrelation is
    averaged over chains and the sum truncated at its first nonpositive
    lag, the usual initial-sequence rule.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, chains = x.shape
    if n < 4:
        raise ValueError("series too short for autocorrelation analysis")
    x = x - x.mean(axis=0)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    acf = np.zeros(n)
    chunk = max(1, 64_000_000 // (16 * nfft))
    for lo in range(0, chains, chunk):
        f = np.fft.rfft(x[:, lo:lo + chunk], n=nfft, axis=0)
        acf += np.fft.irfft(f * np.conj(f), n=nfft, axis=0)[:n].sum(axis=1)
    acf /= acf[0]
    tail = np.nonzero(acf[1:] <= 0.0)[0]
    cutoff = (tail[0] + 1) if tail.size else n
    return float(1.0 + 2.0 * acf[1:cutoff].sum())
