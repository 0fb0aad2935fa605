"""Parallel-tempering MCMC with blockwise adaptive random-walk proposals.

Three proposal blocks: the kinetic parameters and the auxiliary
parameters use full-covariance adaptation (empirical covariance scaled by
2.38^2/d plus jitter); the initial-state block adapts per-coordinate
scales only, tuned toward 23.4% acceptance.  Adaptation runs for the
first ``n_adapt`` iterations (also the burn-in) and is then frozen.

Tempering applies to the full log-posterior.  Every ``swap_interval``
iterations adjacent chains propose state swaps with alternating even/odd
pairing.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SamplerConfig", "Archive", "ChainState", "BlockAdapter",
           "swap_sweep", "run", "geometric_ladder"]

THREADS_ENV_VAR = "DUALSIR_THREADS"


def geometric_ladder(n_chains: int, t_max: float = 50.0) -> np.ndarray:
    """Temperatures T_j = rho^(j-1) with T_1 = 1 and T_n = t_max."""
    if n_chains == 1:
        return np.array([1.0])
    return t_max ** (np.arange(n_chains) / (n_chains - 1))


@dataclass
class SamplerConfig:
    n_chains: int = 8
    n_iter: int = 200_000
    n_adapt: int = 100_000          # adaptation window, also burn-in
    ladder: np.ndarray | None = None  # default: geometric up to 50
    swap_interval: int = 10
    thin: int = 10
    seed: int = 0
    blocks: tuple | None = None     # default: posterior.blocks
    # adaptation modes per block: "cov" or "var"
    block_modes: tuple | None = None
    init_scale: float = 0.05        # pre-adaptation proposal std (unconstrained)
    target_accept: float = 0.234
    jitter: float = 1e-10
    max_init_tries: int = 1000

    def resolve_ladder(self) -> np.ndarray:
        if self.ladder is not None:
            ladder = np.asarray(self.ladder, dtype=float)
        else:
            ladder = geometric_ladder(self.n_chains)
        if ladder.size != self.n_chains or np.any(np.diff(ladder) <= 0):
            raise ValueError("temperature ladder must be strictly increasing "
                             "with one entry per chain")
        if ladder[0] != 1.0:
            raise ValueError("coldest temperature must be 1")
        if self.n_adapt > self.n_iter:
            raise ValueError("n_adapt must be <= n_iter")
        return ladder


class BlockAdapter:
    """Proposal adaptation for one parameter block.

    mode "cov": running empirical covariance, proposal (2.38^2/d) Cov + eps I.
    mode "var": per-coordinate scales, Robbins-Monro tuned acceptance.
    """

    # empirical-covariance proposals switch on after this many samples
    WARMUP = 10

    def __init__(self, dim: int, mode: str, init_scale: float,
                 target_accept: float, jitter: float):
        if mode not in ("cov", "var"):
            raise ValueError(f"unknown adaptation mode {mode!r}")
        self.dim = dim
        self.mode = mode
        self.target_accept = target_accept
        self.jitter = jitter
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))
        self.log_scales = np.full(dim, np.log(init_scale))
        self.init_scale = init_scale
        self.frozen = False
        self._chol = None
        self._chol_stale = True

    def proposal_step(self, rng: np.random.Generator) -> np.ndarray:
        if self.mode == "var":
            return np.exp(self.log_scales) * rng.standard_normal(self.dim)
        if self.count < self.WARMUP * self.dim:
            return self.init_scale * rng.standard_normal(self.dim)
        if self._chol_stale:
            d = self.dim
            cov = self.m2 / (self.count - 1)
            prop = (2.38 ** 2 / d) * cov + self.jitter * np.eye(d)
            self._chol = np.linalg.cholesky(prop)
            self._chol_stale = False
        return self._chol @ rng.standard_normal(self.dim)

    def update(self, sample: np.ndarray, accepted: bool, phase: int):
        """Feed the post-move block value and the acceptance outcome."""
        if self.frozen:
            return
        self.count += 1
        if self.mode == "cov":
            delta = sample - self.mean
            self.mean += delta / self.count
            self.m2 += np.outer(delta, sample - self.mean)
            # refresh the factor periodically rather than every step
            if self.count % 100 == 0:
                self._chol_stale = True
        else:
            gain = (self.count + 10.0) ** -0.6
            self.log_scales += gain * ((1.0 if accepted else 0.0)
                                       - self.target_accept)

    def freeze(self):
        if not self.frozen:
            if self.mode == "cov":
                self._chol_stale = True
            self.frozen = True

    def proposal_covariance(self) -> np.ndarray:
        """Current proposal covariance (diagnostic / test hook)."""
        if self.mode == "var":
            return np.diag(np.exp(2.0 * self.log_scales))
        if self.count < self.WARMUP * self.dim:
            return self.init_scale ** 2 * np.eye(self.dim)
        cov = self.m2 / (self.count - 1)
        return (2.38 ** 2 / self.dim) * cov + self.jitter * np.eye(self.dim)


@dataclass
class ChainState:
    z: np.ndarray
    log_post: float
    extras: object
    temperature: float
    rng: np.random.Generator              # proposal randomness
    seed_rng: np.random.Generator         # latent-path seed stream
    adapters: list = field(default_factory=list)
    n_accept: np.ndarray | None = None
    n_propose: np.ndarray | None = None
    noise_seed: int = 0

    def next_noise_seed(self) -> int:
        self.noise_seed = int(self.seed_rng.integers(0, 2 ** 63))
        return self.noise_seed


def swap_sweep(chains: list, rng: np.random.Generator, parity: int,
               counters: np.ndarray | None = None):
    """Propose adjacent swaps starting at index ``parity`` (0 or 1).

    Acceptance log-ratio: (1/T_j - 1/T_{j+1}) (logpi_{j+1} - logpi_j).
    Swaps exchange the sampled state (z, log-posterior, cached extras and
    noise seed); chains keep their temperatures and RNG streams.
    """
    for j in range(parity, len(chains) - 1, 2):
        a, b = chains[j], chains[j + 1]
        log_ratio = (1.0 / a.temperature - 1.0 / b.temperature) \
            * (b.log_post - a.log_post)
        if counters is not None:
            counters[j, 1] += 1
        if np.log(rng.random()) < log_ratio:
            a.z, b.z = b.z, a.z
            a.log_post, b.log_post = b.log_post, a.log_post
            a.extras, b.extras = b.extras, a.extras
            a.noise_seed, b.noise_seed = b.noise_seed, a.noise_seed
            if counters is not None:
                counters[j, 0] += 1


@dataclass
class Archive:
    """Post-burn-in cold-chain draws plus bookkeeping."""

    z: np.ndarray                    # (n_draws, dim) unconstrained draws
    log_post: np.ndarray             # (n_draws,)
    seeds: np.ndarray                # (n_draws,) latent-path seed per draw
    iterations: np.ndarray           # (n_draws,) source iteration index
    accept_rate: np.ndarray          # (n_chains, n_blocks)
    swap_accept: np.ndarray          # (n_chains-1, 2) accepted/proposed
    ladder: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.z.shape[0]


def _advance_chain(posterior, chain: ChainState, blocks, it: int,
                   n_adapt: int):
    """One full iteration of blockwise Metropolis for a single chain."""
    seed = chain.next_noise_seed()
    lp, ex = posterior.refresh(chain.z, seed, chain.extras)
    chain.log_post, chain.extras = lp, ex
    for b, idx in enumerate(blocks):
        step = chain.adapters[b].proposal_step(chain.rng)
        z_new = chain.z.copy()
        z_new[idx] += step
        lp_new, ex_new = posterior.logpdf(z_new, seed)
        chain.n_propose[b] += 1
        if not np.isfinite(lp_new):
            log_alpha = -np.inf
        elif not np.isfinite(chain.log_post):
            log_alpha = np.inf      # escape a state broken by a seed refresh
        else:
            log_alpha = (lp_new - chain.log_post) / chain.temperature
        accepted = np.log(chain.rng.random()) < log_alpha
        if accepted:
            chain.z = z_new
            chain.log_post = lp_new
            chain.extras = ex_new
            chain.n_accept[b] += 1
        chain.adapters[b].update(chain.z[idx], bool(accepted), it)
    if it + 1 == n_adapt:
        for ad in chain.adapters:
            ad.freeze()


def run(posterior, config: SamplerConfig) -> Archive:
    """Run the tempered sampler against a posterior object.

    The posterior must provide ``dim``, ``logpdf(z, seed)``,
    ``refresh(z, seed, extras)``, ``sample_initial(rng)``, and (optionally)
    ``blocks``.
    """
    ladder = config.resolve_ladder()
    blocks = config.blocks
    if blocks is None:
        blocks = getattr(posterior, "blocks", (np.arange(posterior.dim),))
    blocks = [np.asarray(b, dtype=int) for b in blocks]
    modes = config.block_modes
    if modes is None:
        modes = tuple("var" if i == 2 else "cov" for i in range(len(blocks)))
    if len(modes) != len(blocks):
        raise ValueError("block_modes must match blocks")

    root = np.random.SeedSequence(config.seed)
    init_seq, swap_seq, *chain_seqs = root.spawn(2 + 2 * config.n_chains)
    init_rng = np.random.default_rng(init_seq)
    swap_rng = np.random.default_rng(swap_seq)

    chains = []
    for j in range(config.n_chains):
        prop_rng = np.random.default_rng(chain_seqs[2 * j])
        seed_rng = np.random.default_rng(chain_seqs[2 * j + 1])
        lp, ex, z = -np.inf, None, None
        for _ in range(config.max_init_tries):
            z = posterior.sample_initial(init_rng)
            seed0 = int(seed_rng.integers(0, 2 ** 63))
            lp, ex = posterior.logpdf(z, seed0)
            if np.isfinite(lp):
                break
        else:
            raise RuntimeError(
                f"chain {j}: no finite posterior after "
                f"{config.max_init_tries} prior draws")
        adapters = [BlockAdapter(idx.size, modes[b], config.init_scale,
                                 config.target_accept, config.jitter)
                    for b, idx in enumerate(blocks)]
        chains.append(ChainState(
            z=z, log_post=lp, extras=ex, temperature=float(ladder[j]),
            rng=prop_rng, seed_rng=seed_rng, adapters=adapters,
            n_accept=np.zeros(len(blocks), dtype=np.int64),
            n_propose=np.zeros(len(blocks), dtype=np.int64)))

    n_threads = int(os.environ.get(THREADS_ENV_VAR, "1"))
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None

    swap_counters = np.zeros((max(config.n_chains - 1, 1), 2), dtype=np.int64)
    kept_z, kept_lp, kept_seed, kept_it = [], [], [], []
    parity = 0
    try:
        for it in range(config.n_iter):
            if pool is not None:
                futures = [pool.submit(_advance_chain, posterior, ch, blocks,
                                       it, config.n_adapt) for ch in chains]
                for f in futures:
                    f.result()
            else:
                for ch in chains:
                    _advance_chain(posterior, ch, blocks, it, config.n_adapt)
            if config.n_chains > 1 and (it + 1) % config.swap_interval == 0:
                swap_sweep(chains, swap_rng, parity, swap_counters)
                parity ^= 1
            if it >= config.n_adapt and (it - config.n_adapt) % config.thin == 0:
                cold = chains[0]
                kept_z.append(cold.z.copy())
                kept_lp.append(cold.log_post)
                kept_seed.append(cold.noise_seed)
                kept_it.append(it)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    accept_rate = np.array([ch.n_accept / np.maximum(ch.n_propose, 1)
                            for ch in chains])
    return Archive(
        z=np.array(kept_z), log_post=np.array(kept_lp),
        seeds=np.array(kept_seed, dtype=np.uint64),
        iterations=np.array(kept_it, dtype=np.int64),
        accept_rate=accept_rate, swap_accept=swap_counters, ladder=ladder)
