"""BEAMFORMING
Amplify-and-forward relaying of the target message through the coalition
members to the base station. The optimal relay weights are found by
bisection on the SNR level t, each level being decided by a feasibility
problem.

With phase-aligned weights w_i = rho_i * exp(j arg k_i) the feasibility of
level t becomes the sign of

    max_{0 <= rho <= b}  a . rho - sqrt(t) * sqrt(q . rho^2 + sigma^2)

a concave maximization over a box, solved by projected gradient ascent.
The first-order (Frank-Wolfe) bound of the concave objective certifies
infeasibility, so the ascent stops as soon as the sign is known. The
closed-form maximizer of the SNR ratio is kept as a cross-check.

License: MIT
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, \
    Sequence, Tuple

import numpy as np

from libs.constants import Constants as c

logger = logging.getLogger('uavsim')


class BeamformingError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelState:
    """
    Channels of one coalition, relay 0 being the leader.
    """
    h_tu: Tuple[complex, ...]
    h_ub: Tuple[complex, ...]
    noise_cov_diag: Tuple[float, ...]
    sigma2_base: float

    def __post_init__(self):
        h_tu = tuple(complex(h) for h in self.h_tu)
        h_ub = tuple(complex(h) for h in self.h_ub)
        noise = tuple(float(s) for s in self.noise_cov_diag)
        if not len(h_tu) == len(h_ub) == len(noise):
            raise BeamformingError('Channel vectors must have the same length')
        if not all(np.isfinite(h_tu)) or not all(np.isfinite(h_ub)):
            raise BeamformingError('Channel gains must be finite')
        if any(not s > 0 for s in noise):
            raise BeamformingError('Relay noise powers must be positive')
        if not self.sigma2_base > 0:
            raise BeamformingError('Base station noise power must be positive')
        object.__setattr__(self, 'h_tu', h_tu)
        object.__setattr__(self, 'h_ub', h_ub)
        object.__setattr__(self, 'noise_cov_diag', noise)
        object.__setattr__(self, 'sigma2_base', float(self.sigma2_base))

    def __len__(self):
        return len(self.h_tu)

    @property
    def k(self) -> np.ndarray:
        """
        Effective gain vector: conj(h_ub) * h_tu / sqrt(Sigma), whitening
        included
        """
        return np.conj(np.array(self.h_ub)) * np.array(self.h_tu) / \
            np.sqrt(np.array(self.noise_cov_diag))

    @property
    def q(self) -> np.ndarray:
        """
        Diagonal of Q = H_UB^H H_UB
        """
        return np.abs(np.array(self.h_ub)) ** 2

    @property
    def received_gain(self) -> np.ndarray:
        """
        |h_tu|^2 / Sigma, the whitened target power at each relay
        """
        return np.abs(np.array(self.h_tu)) ** 2 / np.array(self.noise_cov_diag)

    def subset(self, indexes: Sequence[int]) -> ChannelState:
        return ChannelState(tuple(self.h_tu[i] for i in indexes),
                            tuple(self.h_ub[i] for i in indexes),
                            tuple(self.noise_cov_diag[i] for i in indexes),
                            self.sigma2_base)


@dataclass(frozen=True)
class BeamformingSolution:
    weights: Tuple[complex, ...]
    snr: float
    iterations: int
    t_up: float = 0.0
    brackets: Tuple[Tuple[float, float], ...] = field(default=(), repr=False)
    ascent_steps: int = 0

    def to_dict(self) -> dict:
        return {'snr': self.snr,
                't_up': self.t_up,
                'iterations': self.iterations,
                'ascent_steps': self.ascent_steps,
                'weights': [[w.real, w.imag] for w in self.weights]}


def _check_dimensions(weights, channels: ChannelState) -> np.ndarray:
    w = np.asarray(weights, dtype=complex)
    if w.shape != (len(channels),):
        raise BeamformingError(
            f'{w.shape[0] if w.ndim else 0} weights for {len(channels)} relays')
    return w


def snr_at_base(weights: Sequence[complex], channels: ChannelState) -> float:
    """
    SNR at the base station: |w^H k|^2 / (w^H Q w + sigma^2)
    """
    w = _check_dimensions(weights, channels)
    signal = abs(np.vdot(w, channels.k)) ** 2
    noise = float(np.sum(channels.q * np.abs(w) ** 2)) + channels.sigma2_base
    return float(signal / noise)


def relay_power(weights: Sequence[complex], channels: ChannelState,
                i: int) -> float:
    """
    Power spent by relay i: |w_i|^2 (|h_tu_i|^2 / Sigma_ii + 1)
    """
    w = _check_dimensions(weights, channels)
    if not 0 <= i < len(channels):
        raise BeamformingError(f'Relay index {i} out of range')
    return float(abs(w[i]) ** 2 * (channels.received_gain[i] + 1))


def snr_upper_bound(channels: ChannelState) -> float:
    """
    t_up = k^H Q^-1 k, relays that cannot reach the base station are dropped
    """
    q = channels.q
    reachable = q > 0
    return float(np.sum(np.abs(channels.k[reachable]) ** 2 / q[reachable]))


def magnitude_caps(channels: ChannelState,
                   power_caps: Sequence[float]) -> np.ndarray:
    """
    Largest weight magnitude each relay can afford under its power cap
    """
    caps = np.asarray(power_caps, dtype=float)
    if caps.shape != (len(channels),):
        raise BeamformingError('One power cap per relay is required')
    if np.any(caps < 0) or not np.all(np.isfinite(caps)):
        raise BeamformingError('Power caps must be finite and nonnegative')
    return np.sqrt(caps / (channels.received_gain + 1))


def phase_aligned(magnitudes: np.ndarray, channels: ChannelState) -> np.ndarray:
    return magnitudes * np.exp(1j * np.angle(channels.k))


class LevelDecision(NamedTuple):
    feasible: Optional[bool]  # None when the ascent ran out of iterations
    rho: np.ndarray
    steps: int


class _FeasibilityProblem:
    """
    Real magnitude version of the feasibility problem of one coalition.
    Relays with no effective gain or no power are fixed to zero.
    """
    def __init__(self, channels: ChannelState, power_caps: Sequence[float]):
        if not all(np.isfinite(channels.k)):
            raise BeamformingError('Non-finite channel values')
        self.channels = channels
        self.a = np.abs(channels.k)
        self.q = channels.q
        self.b = magnitude_caps(channels, power_caps)
        self.sigma2 = channels.sigma2_base
        self.active = (self.a > 0) & (self.q > 0) & (self.b > 0)

    @property
    def trivial(self) -> bool:
        return not np.any(self.active)

    def snr(self, rho: np.ndarray) -> float:
        return float(np.dot(self.a, rho) ** 2 /
                     (np.dot(self.q, rho ** 2) + self.sigma2))

    def maximizer(self) -> np.ndarray:
        """
        Box stationary points of the SNR ratio have the form
        rho_i = min(b_i, lam * a_i / q_i). Relays saturate in increasing
        order of b_i q_i / a_i and lam = (sum_S q b^2 + sigma^2) / sum_S a b
        for the saturated set S. The saturated set of the maximizer is one of
        these prefixes, so the best candidate is the global SNR maximizer.
        """
        rho = np.zeros_like(self.a)
        if self.trivial:
            return rho

        idx = np.flatnonzero(self.active)
        a, q, b = self.a[idx], self.q[idx], self.b[idx]
        order = np.argsort(b * q / a, kind='stable')
        saturated_ab = np.cumsum((a * b)[order])
        saturated_qb2 = np.cumsum((q * b ** 2)[order])

        best, best_snr = None, -1.0
        for lam in (saturated_qb2 + self.sigma2) / saturated_ab:
            candidate = np.minimum(b, lam * a / q)
            snr = float(np.dot(a, candidate) ** 2 /
                        (np.dot(q, candidate ** 2) + self.sigma2))
            if snr > best_snr:
                best, best_snr = candidate, snr

        rho[idx] = best
        return rho

    def check(self, t: float, start: Optional[np.ndarray] = None,
              tolerance: float = c.ascent_tolerance,
              max_iterations: int = c.ascent_max_iterations) -> LevelDecision:
        """
        Decide whether some magnitudes in the box reach SNR >= t by projected
        gradient ascent on a . rho - sqrt(t) * ||(Q rho, sigma)||.
        Each step maximizes the separable lower bound given by the concavity
        of the square root at the current point, so the objective never
        decreases: rho_i <- clip(a_i * spread / (sqrt(t) * q_i), 0, b_i).
        :param start: first iterate, zeros when omitted
        :return: decision, last iterate and number of ascent steps
        """
        if t < 0:
            raise BeamformingError(f'SNR level must be nonnegative: {t}')
        rho = np.zeros_like(self.a) if start is None else \
            np.clip(np.asarray(start, dtype=float), 0.0, self.b)
        rho[~self.active] = 0.0
        if t == 0:
            return LevelDecision(True, np.zeros_like(self.a), 0)
        if self.trivial:
            return LevelDecision(False, rho, 0)

        sqrt_t = math.sqrt(t)
        a, q = self.a[self.active], self.q[self.active]
        for step in range(max_iterations + 1):
            spread = math.sqrt(float(np.dot(self.q, rho ** 2)) + self.sigma2)
            value = float(np.dot(self.a, rho)) - sqrt_t * spread
            if value >= 0:
                return LevelDecision(True, rho, step)

            gradient = self.a - sqrt_t * self.q * rho / spread
            gradient[~self.active] = 0.0
            gain = float(np.sum(np.maximum(-gradient * rho,
                                           gradient * (self.b - rho))))
            if value + gain < 0 or gain <= tolerance:
                return LevelDecision(False, rho, step)
            if step == max_iterations:
                break

            rho = rho.copy()
            rho[self.active] = np.clip(a * spread / (sqrt_t * q), 0.0,
                                       self.b[self.active])

        logger.debug(f'Ascent undecided at t={t:.6g} after {max_iterations} steps')
        return LevelDecision(None, rho, max_iterations)


def max_snr(channels: ChannelState, power_caps: Sequence[float]) -> float:
    """
    Closed-form SNR maximum over the phase-aligned box, the cross-check of
    the ascent
    """
    problem = _FeasibilityProblem(channels, power_caps)
    return problem.snr(problem.maximizer())


def feasibility_check(t: float, channels: ChannelState,
                      power_caps: Sequence[float]
                      ) -> Tuple[bool, Optional[np.ndarray]]:
    """
    Is SNR >= t reachable with per-relay power below the caps?
    The ascent starts from zero weights. A level it cannot decide is
    settled by the closed-form maximizer.
    :return: (feasible, witness weights when feasible)
    """
    problem = _FeasibilityProblem(channels, power_caps)
    feasible, rho, _ = problem.check(t)
    if feasible is None:
        rho = problem.maximizer()
        feasible = problem.snr(rho) >= t
    if not feasible:
        return False, None
    return True, phase_aligned(rho, channels)


def optimize_snr(channels: ChannelState, power_caps: Sequence[float],
                 precision: Optional[float] = None,
                 relative_precision: float = c.relative_precision
                 ) -> BeamformingSolution:
    """
    Bisection on t over [0, t_up]. The lower bracket always holds a feasible
    witness and the upper bracket is infeasible or equal to t_up. Each level
    resumes the ascent from the last iterate of the previous one. The
    bisection stops early at a level the ascent cannot decide.
    :param channels: coalition channels
    :param power_caps: P_i^max for every relay
    :param precision: absolute precision delta, overrides relative_precision
    :param relative_precision: delta as a fraction of t_up
    :return: witness weights, their SNR and the number of bisection steps
    """
    problem = _FeasibilityProblem(channels, power_caps)
    t_up = snr_upper_bound(channels)
    zeros = tuple(0j for _ in range(len(channels)))
    if problem.trivial or t_up <= 0:
        return BeamformingSolution(zeros, 0.0, 0, t_up)

    delta = relative_precision * t_up if precision is None else precision
    if not delta > 0:
        raise BeamformingError(f'Bisection precision must be positive: {delta}')

    low, high = 0.0, t_up
    rho = np.zeros_like(problem.a)
    witness = rho
    brackets: List[Tuple[float, float]] = []
    iterations = ascent_steps = 0
    while high - low > delta:
        iterations += 1
        t = (low + high) / 2
        feasible, rho, steps = problem.check(t, start=rho)
        ascent_steps += steps
        if feasible is None:
            if problem.snr(rho) > low:
                witness, low = rho, problem.snr(rho)
            brackets.append((low, high))
            logger.debug(f'Bisection stopped at t={t:.6g}: level undecided')
            break
        if feasible:
            witness = rho
            low = min(max(t, problem.snr(rho)), high)
        else:
            high = t
        brackets.append((low, high))

    logger.debug(f'Bisection: t_up={t_up:.6g} snr={low:.6g} '
                 f'iterations={iterations} ascent_steps={ascent_steps}')
    weights = phase_aligned(witness, channels)
    return BeamformingSolution(tuple(complex(w) for w in weights),
                               snr_at_base(weights, channels),
                               iterations, t_up, tuple(brackets), ascent_steps)


def oracle_grid_search(channels: ChannelState, power_caps: Sequence[float],
                       grid_n: int) -> float:
    """
    Exhaustive search of the SNR over a grid of phase-aligned magnitudes,
    used as ground truth for small coalitions
    """
    n = len(channels)
    if n > c.oracle_max_size:
        raise BeamformingError(
            f'Grid oracle supports at most {c.oracle_max_size} relays, got {n}')
    if grid_n < 2:
        raise BeamformingError('The grid needs at least two points per axis')

    a = np.abs(channels.k)
    q = channels.q
    b = magnitude_caps(channels, power_caps)
    axes = [np.linspace(0.0, b_i, grid_n) for b_i in b]

    if n == 1:
        rho = axes[0]
        return float(np.max((a[0] * rho) ** 2 /
                            (q[0] * rho ** 2 + channels.sigma2_base)))

    rest = np.meshgrid(*axes[1:], indexing='ij')
    signal_rest = sum(a_i * r for a_i, r in zip(a[1:], rest))
    noise_rest = sum(q_i * r ** 2 for q_i, r in zip(q[1:], rest)) + \
        channels.sigma2_base

    best = 0.0
    for rho_0 in axes[0]:
        snr = (a[0] * rho_0 + signal_rest) ** 2 / (q[0] * rho_0 ** 2 + noise_rest)
        best = max(best, float(np.max(snr)))
    return best


class CoalitionSnr:
    """
    Optimized SNR of the coalitions of one leader during one negotiation
    round. Channels are frozen within a round so every member tuple is
    solved once.
    """
    def __init__(self, channel_factory: Callable[[Sequence[int]], ChannelState],
                 power_caps: Mapping[int, float],
                 relative_precision: float = c.relative_precision):
        self.channel_factory = channel_factory
        self.power_caps = power_caps
        self.relative_precision = relative_precision
        self._solutions: Dict[Tuple[int, ...], BeamformingSolution] = {}

    def solve(self, members: Sequence[int]) -> BeamformingSolution:
        key = tuple(members)
        if key not in self._solutions:
            channels = self.channel_factory(key)
            self._solutions[key] = optimize_snr(
                channels, [self.power_caps[i] for i in key],
                relative_precision=self.relative_precision)
        return self._solutions[key]

    def __call__(self, members: Sequence[int]) -> float:
        return self.solve(members).snr

    def __len__(self):
        return len(self._solutions)
