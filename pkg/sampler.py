"""
No-U-turn sampler on the unconstrained latent space of a LogDensityFn.

Transitions use multinomial sampling over the trajectory, built by
repeated doubling in a random direction. A subtree is abandoned when the
generalised U-turn criterion fires on it (checked on the whole subtree
and across the seam of its two halves) or when the energy error exceeds
``max_delta_h`` (a divergence). At the top level the new subtree's
proposal is preferred through biased progressive sampling.

Warmup adapts the step size with dual averaging toward ``target_accept``
and a diagonal inverse metric from windowed variance estimates: a fast
initial buffer, doubling slow windows, then a fast terminal buffer. At
the end of each slow window the metric is updated, a fresh step size is
searched for and dual averaging restarts.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from errors import ConfigError, InitializationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NutsConfig:
    warmup_draws: int = 2000
    posterior_draws: int = 10000
    max_tree_depth: int = 10
    target_accept: float = 0.8
    seed: int = 0
    chains: int = 1
    max_delta_h: float = 1000.0
    progress: bool = False

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError(f"target_accept must be in (0, 1), got {self.target_accept}")
        if self.max_tree_depth < 1:
            raise ConfigError("max_tree_depth must be at least 1")
        if self.warmup_draws < 0:
            raise ConfigError("warmup_draws must be non-negative")
        if self.posterior_draws < 1:
            raise ConfigError("posterior_draws must be at least 1")
        if self.chains < 1:
            raise ConfigError("chains must be at least 1")

    def as_dict(self):
        return {
            "warmup_draws": self.warmup_draws,
            "posterior_draws": self.posterior_draws,
            "max_tree_depth": self.max_tree_depth,
            "target_accept": self.target_accept,
            "chains": self.chains,
        }


@dataclass
class Trace:
    """Posterior draws in model space, shape (chains, draws, variables)."""

    names: list
    draws: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    diverging: np.ndarray
    step_size: np.ndarray = None
    inv_metric: np.ndarray = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def num_chains(self):
        return self.draws.shape[0]

    @property
    def num_draws(self):
        return self.draws.shape[1]

    @property
    def divergences(self):
        return int(self.diverging.sum())

    def values(self, name):
        """(chains, draws) array of one variable."""
        return self.draws[:, :, self.names.index(name)]

    def with_variables(self, columns):
        """New Trace with extra (chains, draws) columns appended, keyed by name."""
        if not columns:
            return self
        names = list(self.names) + list(columns)
        stacked = np.stack([np.asarray(columns[n], dtype=float) for n in columns], axis=-1)
        draws = np.concatenate([self.draws, stacked], axis=-1)
        return Trace(
            names,
            draws,
            self.accept_stat,
            self.tree_depth,
            self.diverging,
            self.step_size,
            self.inv_metric,
            self.wall_time,
            dict(self.extra),
        )

    def as_frame(self):
        chains, n, _ = self.draws.shape
        df = pd.DataFrame(self.draws.reshape(chains * n, -1), columns=self.names)
        df.insert(0, "draw", np.tile(np.arange(n), chains))
        df.insert(0, "chain", np.repeat(np.arange(chains), n))
        df["accept_stat"] = self.accept_stat.reshape(-1)
        df["tree_depth"] = self.tree_depth.reshape(-1)
        df["diverging"] = self.diverging.reshape(-1)
        return df


# ---------------------------------------------------------
# adaptation helpers
# ---------------------------------------------------------
@dataclass
class DualAveragingState:
    mu: float
    log_eps: float
    log_eps_bar: float = 0.0
    h_bar: float = 0.0
    t: int = 0

    @classmethod
    def start(cls, step_size):
        return cls(mu=math.log(10.0 * step_size), log_eps=math.log(step_size))

    def update(self, accept_stat, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.t += 1
        eta = 1.0 / (self.t + t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / gamma * self.h_bar
        w = self.t ** (-kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def final(self):
        return math.exp(self.log_eps_bar)


class RunningDiagVar:
    """Welford accumulator for per-coordinate variances."""

    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def regularized_var(self):
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        n = self.n
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def make_warmup_windows(num_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Slow adaptation windows [(start, end), ...] inside ``num_warmup`` iterations.

    Short warmups shrink the buffers to 15% / 10% / 75% of the budget.
    Window sizes double; the last window absorbs the remainder.
    """
    if num_warmup < 20:
        return []
    if init_buffer + term_buffer + base_window > num_warmup:
        init_buffer = int(0.15 * num_warmup)
        term_buffer = int(0.1 * num_warmup)
        base_window = num_warmup - init_buffer - term_buffer
    end_slow = num_warmup - term_buffer
    windows = []
    start, size = init_buffer, base_window
    while start < end_slow:
        end = start + size
        # a following window smaller than twice this one is merged in
        if end + 2 * size > end_slow:
            end = end_slow
        windows.append((start, end))
        start, size = end, 2 * size
    return windows


# ---------------------------------------------------------
# Hamiltonian dynamics
# ---------------------------------------------------------
@dataclass
class PhasePoint:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


def kinetic(p, inv_metric):
    return 0.5 * float(np.sum(p * p * inv_metric))


def hamiltonian(point, inv_metric):
    if not math.isfinite(point.logp):
        return math.inf
    return -point.logp + kinetic(point.p, inv_metric)


def leapfrog(fn, point, eps, inv_metric):
    p_half = point.p + 0.5 * eps * point.grad
    q = point.q + eps * inv_metric * p_half
    logp, grad = fn(q)
    p = p_half + 0.5 * eps * grad
    return PhasePoint(q, p, logp, grad)


def find_reasonable_step_size(fn, point, inv_metric, rng, init=1.0):
    """Halve or double the step until one leapfrog step crosses acceptance 0.5."""
    eps = init
    p0 = rng.normal(size=point.q.shape) / np.sqrt(inv_metric)
    start = PhasePoint(point.q, p0, point.logp, point.grad)
    h0 = hamiltonian(start, inv_metric)

    def log_accept(step):
        h1 = hamiltonian(leapfrog(fn, start, step, inv_metric), inv_metric)
        return h0 - h1 if math.isfinite(h1) else -math.inf

    direction = 1.0 if log_accept(eps) > math.log(0.5) else -1.0
    while 1e-8 < eps < 1e3:
        eps *= 2.0**direction
        crossed = log_accept(eps) > math.log(0.5)
        if (direction > 0 and not crossed) or (direction < 0 and crossed):
            break
    return float(min(max(eps, 1e-8), 1e3))


def init_point(fn, rng, tries=100):
    """Uniform(-2, 2) starting point with a finite log density."""
    for _ in range(tries):
        q = rng.uniform(-2.0, 2.0, size=fn.dim)
        logp, grad = fn(q)
        if math.isfinite(logp):
            return q
    raise InitializationError(f"no finite log density after {tries} random initialisations")


# ---------------------------------------------------------
# trajectory building
# ---------------------------------------------------------
@dataclass
class _Subtree:
    minus: PhasePoint
    plus: PhasePoint
    proposal: PhasePoint
    log_weight: float
    rho: np.ndarray
    n_leapfrog: int = 0
    accept_sum: float = 0.0
    diverging: bool = False
    turning: bool = False


class NutsKernel:
    def __init__(self, fn, inv_metric, step_size, rng, max_tree_depth=10, max_delta_h=1000.0):
        self.fn = fn
        self.inv_metric = inv_metric
        self.step_size = step_size
        self.rng = rng
        self.max_tree_depth = max_tree_depth
        self.max_delta_h = max_delta_h

    def _turning(self, minus, plus, rho):
        v_minus = self.inv_metric * minus.p
        v_plus = self.inv_metric * plus.p
        return float(v_minus @ rho) <= 0.0 or float(v_plus @ rho) <= 0.0

    def _merge_turning(self, left, right):
        """U-turn checks on the joined subtree and across its seam; left is the minus side."""
        rho = left.rho + right.rho
        if self._turning(left.minus, right.plus, rho):
            return True
        if self._turning(left.minus, right.minus, left.rho + right.minus.p):
            return True
        return self._turning(left.plus, right.plus, left.plus.p + right.rho)

    def _leaf(self, point, direction, h0):
        new = leapfrog(self.fn, point, direction * self.step_size, self.inv_metric)
        h = hamiltonian(new, self.inv_metric)
        delta = h - h0
        if not math.isfinite(delta):
            delta = math.inf
        diverging = delta > self.max_delta_h
        accept = math.exp(-delta) if delta > 0 else 1.0
        return _Subtree(new, new, new, -delta, new.p.copy(), 1, accept, diverging)

    def _build(self, point, depth, direction, h0):
        if depth == 0:
            return self._leaf(point, direction, h0)
        inner = self._build(point, depth - 1, direction, h0)
        if inner.diverging or inner.turning:
            return inner
        edge = inner.plus if direction > 0 else inner.minus
        outer = self._build(edge, depth - 1, direction, h0)
        n_leapfrog = inner.n_leapfrog + outer.n_leapfrog
        accept_sum = inner.accept_sum + outer.accept_sum
        if outer.diverging or outer.turning:
            inner.n_leapfrog, inner.accept_sum = n_leapfrog, accept_sum
            inner.diverging, inner.turning = outer.diverging, outer.turning
            return inner
        left, right = (inner, outer) if direction > 0 else (outer, inner)
        log_weight = np.logaddexp(inner.log_weight, outer.log_weight)
        proposal = inner.proposal
        if math.log(self.rng.uniform()) < outer.log_weight - log_weight:
            proposal = outer.proposal
        return _Subtree(
            left.minus,
            right.plus,
            proposal,
            log_weight,
            left.rho + right.rho,
            n_leapfrog,
            accept_sum,
            False,
            self._merge_turning(left, right),
        )

    def transition(self, q, logp, grad):
        """One NUTS step from q; returns (point, accept_stat, depth, diverging)."""
        p0 = self.rng.normal(size=q.shape) / np.sqrt(self.inv_metric)
        start = PhasePoint(q, p0, logp, grad)
        h0 = hamiltonian(start, self.inv_metric)
        tree = _Subtree(start, start, start, 0.0, p0.copy())
        n_leapfrog, accept_sum, diverging = 0, 0.0, False
        depth = 0
        while depth < self.max_tree_depth:
            direction = 1 if self.rng.uniform() < 0.5 else -1
            edge = tree.plus if direction > 0 else tree.minus
            sub = self._build(edge, depth, direction, h0)
            depth += 1
            n_leapfrog += sub.n_leapfrog
            accept_sum += sub.accept_sum
            if sub.diverging:
                diverging = True
                break
            if sub.turning:
                break
            # biased progressive sampling favours the newer subtree
            if math.log(self.rng.uniform()) < sub.log_weight - tree.log_weight:
                tree.proposal = sub.proposal
            left, right = (tree, sub) if direction > 0 else (sub, tree)
            turning = self._merge_turning(left, right)
            tree = _Subtree(
                left.minus,
                right.plus,
                tree.proposal,
                np.logaddexp(tree.log_weight, sub.log_weight),
                left.rho + right.rho,
            )
            if turning:
                break
        accept_stat = accept_sum / max(n_leapfrog, 1)
        return tree.proposal, accept_stat, depth, diverging


# ---------------------------------------------------------
# driver
# ---------------------------------------------------------
def _run_chain(fn, config, rng, chain, progress):
    dim = fn.dim
    q = init_point(fn, rng)
    logp, grad = fn(q)
    inv_metric = np.ones(dim)
    step = find_reasonable_step_size(fn, PhasePoint(q, None, logp, grad), inv_metric, rng)
    da = DualAveragingState.start(step)
    windows = make_warmup_windows(config.warmup_draws)
    window_ends = {end for _, end in windows}
    stats = RunningDiagVar(dim)
    kernel = NutsKernel(fn, inv_metric, step, rng, config.max_tree_depth, config.max_delta_h)

    n = config.posterior_draws
    draws = np.empty((n, dim))
    accept = np.empty(n)
    depths = np.empty(n, dtype=int)
    diverging = np.zeros(n, dtype=bool)

    total = config.warmup_draws + n
    with tqdm(total=total, desc=f"chain {chain}", disable=not progress, leave=False) as bar:
        for t in range(config.warmup_draws):
            point, a, _, _ = kernel.transition(q, logp, grad)
            q, logp, grad = point.q, point.logp, point.grad
            kernel.step_size = da.update(a, target=config.target_accept)
            if any(start <= t < end for start, end in windows):
                stats.update(q)
            if t + 1 in window_ends:
                kernel.inv_metric = stats.regularized_var()
                stats = RunningDiagVar(dim)
                step = find_reasonable_step_size(
                    fn, PhasePoint(q, None, logp, grad), kernel.inv_metric, rng, kernel.step_size
                )
                da = DualAveragingState.start(step)
                kernel.step_size = step
                logger.debug("chain %d: metric update at warmup iteration %d, eps=%.4g", chain, t + 1, step)
            bar.update()
        if config.warmup_draws:
            kernel.step_size = da.final()

        for t in range(n):
            point, accept[t], depths[t], diverging[t] = kernel.transition(q, logp, grad)
            q, logp, grad = point.q, point.logp, point.grad
            draws[t] = q
            bar.update()

    logger.info(
        "chain %d done: step size %.4g, mean accept %.3f, %d divergences",
        chain,
        kernel.step_size,
        float(accept.mean()),
        int(diverging.sum()),
    )
    return draws, accept, depths, diverging, kernel.step_size, kernel.inv_metric


def run_nuts(fn, config=None, rng=None):
    """Sample ``fn`` with NUTS; draws are returned in model (constrained) space."""
    config = config or NutsConfig()
    if fn.dim < 1:
        raise ConfigError("nothing to sample: the model has no latent variables")
    if rng is None:
        seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    else:
        seeds = rng.integers(0, 2**63 - 1, size=config.chains)
    rngs = [np.random.default_rng(s) for s in seeds]

    started = time.perf_counter()
    results = [_run_chain(fn, config, rngs[c], c, config.progress) for c in range(config.chains)]
    wall_time = time.perf_counter() - started

    unconstrained = np.stack([r[0] for r in results])
    trace = Trace(
        names=fn.names,
        draws=fn.constrain(unconstrained),
        accept_stat=np.stack([r[1] for r in results]),
        tree_depth=np.stack([r[2] for r in results]),
        diverging=np.stack([r[3] for r in results]),
        step_size=np.array([r[4] for r in results]),
        inv_metric=np.stack([r[5] for r in results]),
        wall_time=wall_time,
    )
    if trace.divergences:
        logger.warning("%d divergent transitions after warmup", trace.divergences)
    return trace
