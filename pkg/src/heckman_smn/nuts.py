"""No-U-Turn sampler with step-size and diagonal metric adaptation.

The transition is the multinomial variant: trajectories are doubled forwards
or backwards until the generalized U-turn condition fails (checked across the
merged tree and across the seam between subtrees) and the next state is drawn
from the trajectory with weights proportional to ``exp(-H)``.

:func:`sample` works on any ``logp_grad(u) -> (logp, grad)``; :func:`run_chains`
wires it to a selection model and records constrained draws and per-unit
log-likelihoods.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .sel_model import PriorSpec, SelectionData, SelectionModel, SelParams, to_unconstrained
from .special_fn import DomainError

log = logging.getLogger(__name__)

INIT_CHOICES = ("two-step", "random")


class SamplerError(RuntimeError):
    """Raised when warmup cannot produce a usable sampler state."""


@dataclass(frozen=True)
class SamplerConfig:
    warmup: int = 1000
    draws: int = 20000
    thin: int = 5
    chains: int = 1
    max_treedepth: int = 10
    target_accept: float = 0.85
    seed: int = 0
    init: str = "two-step"
    init_radius: float = 2.0
    adapt: bool = True
    threads: int = 1
    max_energy_error: float = 1000.0
    initial_step_size: float = 1.0

    def __post_init__(self):
        if self.adapt and self.warmup < 100:
            raise ValueError("warmup must be >= 100 when adaptation is on")
        if self.warmup < 0 or self.draws < 1:
            raise ValueError("warmup must be >= 0 and draws >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.chains < 1 or self.threads < 1:
            raise ValueError("chains and threads must be >= 1")
        if self.max_treedepth < 0:
            raise ValueError("max_treedepth must be >= 0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.init not in INIT_CHOICES:
            raise ValueError(f"init must be one of {INIT_CHOICES}")
        if not self.init_radius > 0:
            raise ValueError("init_radius must be > 0")

    @property
    def n_kept(self) -> int:
        return self.draws // self.thin


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Independent stream per chain, hashed from (seed, chain)."""
    return np.random.default_rng(np.random.SeedSequence([seed, chain]))


# -- adaptation -------------------------------------------------------------------


@dataclass
class DualAveraging:
    target: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    mu: float = 0.0
    counter: int = 0
    h_bar: float = 0.0
    log_eps_bar: float = 0.0

    def restart(self, eps: float):
        self.mu = math.log(10.0 * eps)
        self.counter = 0
        self.h_bar = 0.0
        self.log_eps_bar = 0.0

    def update(self, accept_stat: float) -> float:
        """Feed one acceptance statistic; returns the next step size."""
        self.counter += 1
        a = min(1.0, accept_stat) if np.isfinite(accept_stat) else 0.0
        eta = 1.0 / (self.counter + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - a)
        log_eps = self.mu - self.h_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.log_eps_bar = (1.0 - w) * self.log_eps_bar + w * log_eps
        return math.exp(log_eps)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.log_eps_bar)


@dataclass
class WindowSchedule:
    """Fast initial buffer, doubling slow windows, fast terminal buffer."""

    warmup: int
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25

    def __post_init__(self):
        if self.warmup < 20:
            self.init_buffer = self.term_buffer = self.base_window = 0
            return
        if self.init_buffer + self.base_window + self.term_buffer > self.warmup:
            self.init_buffer = int(0.15 * self.warmup)
            self.term_buffer = int(0.1 * self.warmup)
            self.base_window = self.warmup - self.init_buffer - self.term_buffer

    def window_ends(self) -> List[int]:
        """Iteration indices (0-based) at which a slow window closes."""
        if self.base_window == 0:
            return []
        ends = []
        start, size = self.init_buffer, self.base_window
        last = self.warmup - self.term_buffer
        while start + size <= last:
            end = start + size
            # stretch the final window if the next one would not fit
            if end + 2 * size > last:
                end = last
            ends.append(end - 1)
            start, size = end, 2 * size
            if end == last:
                break
        return ends

    def in_slow(self, i: int) -> bool:
        return self.base_window > 0 and self.init_buffer <= i < self.warmup - self.term_buffer


@dataclass
class AdaptState:
    step_size: float
    inv_mass: np.ndarray
    dual: DualAveraging
    schedule: WindowSchedule
    _n: int = 0
    _mean: Optional[np.ndarray] = None
    _m2: Optional[np.ndarray] = None
    _ends: frozenset = field(default_factory=frozenset)

    @classmethod
    def create(cls, dim: int, config: SamplerConfig) -> "AdaptState":
        sched = WindowSchedule(config.warmup)
        st = cls(config.initial_step_size, np.ones(dim), DualAveraging(config.target_accept), sched)
        st._ends = frozenset(sched.window_ends())
        st._reset_var(dim)
        return st

    @property
    def log_eps(self) -> float:
        return math.log(self.step_size)

    def _reset_var(self, dim):
        self._n = 0
        self._mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def observe(self, i: int, u: np.ndarray, accept_stat: float) -> bool:
        """Warmup bookkeeping after iteration ``i``; True when the metric changed."""
        self.step_size = self.dual.update(accept_stat)
        if not self.schedule.in_slow(i):
            return False
        self._n += 1
        delta = u - self._mean
        self._mean += delta / self._n
        self._m2 += delta * (u - self._mean)
        if i not in self._ends:
            return False
        n = self._n
        var = self._m2 / max(n - 1, 1)
        self.inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
        self._reset_var(u.size)
        return True

    def finish(self):
        self.step_size = self.dual.final_step_size


# -- integrator and transition ------------------------------------------------------


@dataclass
class State:
    q: np.ndarray
    logp: float
    grad: np.ndarray


def leapfrog(q, p, eps, grad_fn, inv_mass, grad=None):
    """One leapfrog step; returns ``(q', p')``.

    ``grad_fn(q) -> gradient of the log density``. Pass ``grad`` to reuse a
    gradient already known at ``q``.
    """
    g = grad_fn(q) if grad is None else grad
    p_half = p + 0.5 * eps * g
    q_new = q + eps * inv_mass * p_half
    p_new = p_half + 0.5 * eps * grad_fn(q_new)
    return q_new, p_new


def _step(state: State, p, eps, logp_grad, inv_mass):
    p_half = p + 0.5 * eps * state.grad
    q = state.q + eps * inv_mass * p_half
    try:
        # far-out proposals overflow; non-finite results are handled below
        with np.errstate(all="ignore"):
            lp, g = logp_grad(q)
    except (FloatingPointError, DomainError, OverflowError, ZeroDivisionError):
        lp, g = -np.inf, np.full_like(q, np.nan)
    lp = float(lp)
    if not (np.isfinite(lp) and np.all(np.isfinite(g))):
        return State(q, -np.inf, state.grad), np.full_like(p, np.nan)
    return State(q, lp, g), p_half + 0.5 * eps * g


def _hamiltonian(state, p, inv_mass):
    h = -state.logp + 0.5 * float(np.dot(p, inv_mass * p))
    return h if np.isfinite(h) else np.inf


def _no_uturn(p_sharp_minus, p_sharp_plus, rho):
    return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0


def _logaddexp(a, b):
    return float(np.logaddexp(a, b))


@dataclass
class TransitionStats:
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool
    energy: float
    step_size: float


class _Trajectory:
    """Mutable scratch for one NUTS transition."""

    def __init__(self, logp_grad, eps, inv_mass, h0, rng, max_energy_error):
        self.logp_grad = logp_grad
        self.eps = eps
        self.inv_mass = inv_mass
        self.h0 = h0
        self.rng = rng
        self.max_err = max_energy_error
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def build(self, state, p, depth, sign):
        """Grow a subtree of 2**depth steps from ``(state, p)``.

        Returns ``(ok, state_end, p_end, proposal, log_w, rho, p_beg, p_sharp_beg, p_sharp_end)``
        where ``p_beg``/``p_sharp_beg`` belong to the first new point.
        """
        if depth == 0:
            new, p_new = _step(state, p, sign * self.eps, self.logp_grad, self.inv_mass)
            self.n_leapfrog += 1
            h = _hamiltonian(new, p_new, self.inv_mass) if np.isfinite(new.logp) else np.inf
            if h - self.h0 > self.max_err or not np.isfinite(h):
                self.divergent = True
            log_w = self.h0 - h
            self.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
            ps = self.inv_mass * p_new
            return (not self.divergent, new, p_new, new, log_w, p_new.copy(), p_new, ps, ps)

        ok, s_mid, p_mid, prop1, lw1, rho1, p_beg, ps_beg, ps_init_end = self.build(state, p, depth - 1, sign)
        if not ok:
            return (False, s_mid, p_mid, prop1, lw1, rho1, p_beg, ps_beg, ps_init_end)
        p_init_end = p_mid
        ok, s_end, p_end, prop2, lw2, rho2, p_final_beg, ps_final_beg, ps_end = self.build(s_mid, p_mid, depth - 1, sign)
        if not ok:
            return (False, s_end, p_end, prop1, lw1, rho1, p_beg, ps_beg, ps_end)
        log_w = _logaddexp(lw1, lw2)
        # multinomial choice between the two halves
        proposal = prop1
        if lw2 > log_w or self.rng.random() < math.exp(lw2 - log_w):
            proposal = prop2
        rho = rho1 + rho2
        ok = _no_uturn(ps_beg, ps_end, rho)
        ok = ok and _no_uturn(ps_beg, ps_final_beg, rho1 + p_final_beg)
        ok = ok and _no_uturn(ps_init_end, ps_end, rho2 + p_init_end)
        return (ok, s_end, p_end, proposal, log_w, rho, p_beg, ps_beg, ps_end)


def nuts_transition(state: State, logp_grad: Callable, adapt: AdaptState, rng: np.random.Generator,
                    max_treedepth: int = 10, max_energy_error: float = 1000.0):
    """One NUTS iteration from ``state``. Returns ``(new_state, TransitionStats)``.

    ``max_treedepth`` 0 and 1 both allow a single leapfrog step, so depth 0
    is a Metropolis step with one leapfrog proposal.
    """
    inv_mass = adapt.inv_mass
    eps = adapt.step_size
    p0 = rng.standard_normal(state.q.size) / np.sqrt(inv_mass)
    h0 = _hamiltonian(state, p0, inv_mass)
    traj = _Trajectory(logp_grad, eps, inv_mass, h0, rng, max_energy_error)

    fwd_state, fwd_p = state, p0
    bck_state, bck_p = state, p0
    ps_fwd = ps_bck = inv_mass * p0
    rho = p0.copy()
    sample = state
    log_w = 0.0
    depth = 0
    limit = max(max_treedepth, 1)

    while depth < limit:
        if rng.random() > 0.5:
            old_p, old_ps = fwd_p, ps_fwd
            ok, fwd_state, fwd_p, prop, lw_sub, rho_sub, p_beg, ps_beg, ps_end = traj.build(fwd_state, fwd_p, depth, 1)
            ps_fwd = ps_end
            inner = ps_bck
        else:
            old_p, old_ps = bck_p, ps_bck
            ok, bck_state, bck_p, prop, lw_sub, rho_sub, p_beg, ps_beg, ps_end = traj.build(bck_state, bck_p, depth, -1)
            ps_bck = ps_end
            inner = ps_fwd
        if not ok:
            break
        depth += 1
        # biased progressive sampling favours the newer subtree
        if lw_sub > log_w or rng.random() < math.exp(lw_sub - log_w):
            sample = prop
        log_w = _logaddexp(log_w, lw_sub)
        rho_old = rho
        rho = rho_old + rho_sub
        go = _no_uturn(ps_bck, ps_fwd, rho)
        # old trajectory plus the first new point, and new subtree plus the old end point
        go = go and _no_uturn(inner, ps_beg, rho_old + p_beg)
        go = go and _no_uturn(old_ps, ps_end, rho_sub + old_p)
        if not go:
            break

    accept = traj.sum_metro / traj.n_leapfrog if traj.n_leapfrog else 0.0
    stats = TransitionStats(accept, depth, traj.n_leapfrog, traj.divergent, h0, eps)
    return sample, stats


def _find_reasonable_step(state, logp_grad, adapt, rng):
    """Double or halve the step until a one-step acceptance crosses 0.8."""
    eps = adapt.step_size
    inv_mass = adapt.inv_mass
    direction = 0
    for _ in range(100):
        p = rng.standard_normal(state.q.size) / np.sqrt(inv_mass)
        h0 = _hamiltonian(state, p, inv_mass)
        new, p_new = _step(state, p, eps, logp_grad, inv_mass)
        h = _hamiltonian(new, p_new, inv_mass) if np.isfinite(new.logp) else np.inf
        delta = h0 - h
        up = delta > math.log(0.8)
        if direction == 0:
            direction = 1 if up else -1
        elif (direction == 1 and not up) or (direction == -1 and up):
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
        if eps > 1e7 or eps < 1e-12:
            raise SamplerError("step size search failed; posterior may be improper or init is poor")
    adapt.step_size = eps
    return eps


# -- chains ---------------------------------------------------------------------------


@dataclass
class ChainSamples:
    """Unconstrained draws and per-draw sampler statistics for one chain."""

    u: np.ndarray
    logp: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    mean_accept: float
    n_divergent: int
    warmup_divergent: int
    init: str = "given"


def sample(logp_grad: Callable, u0, config: SamplerConfig, rng: np.random.Generator, chain: int = 0,
           progress: Optional[Callable] = None) -> ChainSamples:
    """Run warmup then sampling from ``u0`` and keep every ``thin``-th draw."""
    u0 = np.asarray(u0, dtype=float)
    lp, g = logp_grad(u0)
    if not (np.isfinite(lp) and np.all(np.isfinite(g))):
        raise SamplerError("log density or gradient not finite at the initial point")
    state = State(u0.copy(), float(lp), np.asarray(g, dtype=float))
    adapt = AdaptState.create(u0.size, config)
    if config.adapt:
        _find_reasonable_step(state, logp_grad, adapt, rng)
        adapt.dual.restart(adapt.step_size)

    warm_div = 0
    for i in range(config.warmup):
        state, st = nuts_transition(state, logp_grad, adapt, rng, config.max_treedepth, config.max_energy_error)
        warm_div += st.divergent
        if config.adapt and adapt.observe(i, state.q, st.accept_stat):
            _find_reasonable_step(state, logp_grad, adapt, rng)
            adapt.dual.restart(adapt.step_size)
        if progress is not None:
            progress(i, chain, warm_div)
    if config.warmup and warm_div == config.warmup:
        raise SamplerError(f"chain {chain}: every warmup transition diverged")
    if config.adapt and config.warmup:
        adapt.finish()

    k = config.n_kept
    d = u0.size
    out_u = np.empty((k, d))
    out_lp = np.empty(k)
    acc = np.empty(k)
    depth = np.empty(k, dtype=np.int16)
    nleap = np.empty(k, dtype=np.int32)
    div = np.zeros(k, dtype=bool)
    acc_sum, n_div, j = 0.0, 0, 0
    for i in range(config.draws):
        state, st = nuts_transition(state, logp_grad, adapt, rng, config.max_treedepth, config.max_energy_error)
        acc_sum += st.accept_stat
        n_div += st.divergent
        if (i + 1) % config.thin == 0 and j < k:
            out_u[j] = state.q
            out_lp[j] = state.logp
            acc[j] = st.accept_stat
            depth[j] = st.tree_depth
            nleap[j] = st.n_leapfrog
            div[j] = st.divergent
            j += 1
        if progress is not None:
            progress(config.warmup + i, chain, warm_div + n_div)
    return ChainSamples(
        u=out_u, logp=out_lp, accept_stat=acc, tree_depth=depth, n_leapfrog=nleap, divergent=div,
        step_size=adapt.step_size, inv_mass=adapt.inv_mass.copy(), mean_accept=acc_sum / config.draws,
        n_divergent=n_div, warmup_divergent=warm_div,
    )


def sample_chains(logp_grad: Callable, inits, config: SamplerConfig, progress: Optional[Callable] = None) -> List[ChainSamples]:
    """Run ``config.chains`` independent chains; ``inits`` is one point or one per chain."""
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    if inits.shape[0] == 1:
        inits = np.repeat(inits, config.chains, axis=0)

    def one(c):
        return sample(logp_grad, inits[c], config, chain_rng(config.seed, c), c, progress)

    if config.threads > 1 and config.chains > 1:
        with ThreadPoolExecutor(max_workers=min(config.threads, config.chains)) as ex:
            return list(ex.map(one, range(config.chains)))
    return [one(c) for c in range(config.chains)]


# -- selection-model driver -------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Per-chain constrained draws, per-unit log-likelihoods and sampler stats."""

    family: str
    names: List[str]
    params: List[np.ndarray]  # per chain: kept x d, constrained scale
    pointwise: List[np.ndarray]  # per chain: kept x n
    chains: List[ChainSamples]
    config: SamplerConfig
    init_method: str = "two-step"

    def __post_init__(self):
        for a, b, c in zip(self.params, self.pointwise, self.chains):
            if not (a.shape[0] == b.shape[0] == c.u.shape[0]):
                raise ValueError("row counts differ across draw fields")

    @property
    def n_chains(self) -> int:
        return len(self.params)

    @property
    def n_draws(self) -> int:
        return sum(a.shape[0] for a in self.params)

    def stacked(self) -> np.ndarray:
        """chains x draws x d array (chains must have equal length)."""
        return np.stack(self.params)

    def merged(self) -> np.ndarray:
        return np.concatenate(self.params, axis=0)

    def merged_pointwise(self) -> np.ndarray:
        return np.concatenate(self.pointwise, axis=0)

    def column(self, name: str) -> np.ndarray:
        return self.stacked()[:, :, self.names.index(name)]

    @property
    def divergent(self) -> np.ndarray:
        return np.concatenate([c.divergent for c in self.chains])

    @property
    def n_divergent(self) -> int:
        return int(sum(c.n_divergent for c in self.chains))

    @property
    def mean_accept(self) -> float:
        return float(np.mean([c.mean_accept for c in self.chains]))

    def selparams(self, row: np.ndarray) -> SelParams:
        p = sum(n.startswith("beta") for n in self.names)
        q = sum(n.startswith("gamma") for n in self.names)
        return SelParams.from_vector(row, self.family, p, q)


def initial_point(model: SelectionModel, config: SamplerConfig, rng: np.random.Generator):
    """Two-step start (falls back to random) or a uniform draw in the init box."""
    from .two_step import TwoStepError, family_init

    if config.init == "two-step":
        try:
            u = to_unconstrained(family_init(model.data, model.family))
            lp = model.log_density(u)
            if np.isfinite(lp):
                return u, "two-step"
            log.warning("two-step start has non-finite density; using random init")
        except (TwoStepError, DomainError, np.linalg.LinAlgError, ValueError) as exc:
            warnings.warn(f"two-step initialization failed ({exc}); falling back to random init", stacklevel=2)
    r = config.init_radius if config.init == "random" else 2.0
    return rng.uniform(-r, r, size=model.dim), "random"


def constrain_draws(model: SelectionModel, u: np.ndarray):
    params = np.empty_like(u)
    pw = np.empty((u.shape[0], model.data.n))
    for s in range(u.shape[0]):
        th = model.constrain(u[s])
        params[s] = th.as_vector()
        pw[s] = model.pointwise(th)
    return params, pw


def run_chains(data: SelectionData, spec: PriorSpec = PriorSpec(), family: str = "normal",
               config: SamplerConfig = SamplerConfig(), progress: Optional[Callable] = None) -> PosteriorDraws:
    """Fit one selection model by NUTS and return constrained draws."""
    model = SelectionModel(data, family, spec)
    inits, how = [], []
    for c in range(config.chains):
        # init randomness comes from a stream separate from the transitions
        u, m = initial_point(model, config, np.random.default_rng(np.random.SeedSequence([config.seed, c, 1])))
        inits.append(u)
        how.append(m)
    chains = sample_chains(model.log_density_and_grad, np.array(inits), config, progress)
    params, pointwise = [], []
    for ch in chains:
        a, b = constrain_draws(model, ch.u)
        params.append(a)
        pointwise.append(b)
    for ch, m in zip(chains, how):
        ch.init = m
    return PosteriorDraws(family, model.names, params, pointwise, chains, config,
                          "two-step" if all(m == "two-step" for m in how) else "random")
