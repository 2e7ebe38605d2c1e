"""Behavioral statistics computed from EpisodeLogs.

Every function here is a pure function of its inputs.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ContractError

SYMBOLS = ("00", "01", "10", "11")


class UndefinedStatisticError(ContractError):
    """The statistic has no value for this input (e.g. Theil index of all zeros)."""


def _as_list(logs):
    return list(logs) if isinstance(logs, (list, tuple)) else [logs]


# --- sequential pulse intervals -------------------------------------------

@dataclass
class SpiDistribution:
    intervals: np.ndarray          # steps
    dt: float
    hist: np.ndarray               # probability mass per bin
    bin_edges: np.ndarray          # seconds, log-spaced
    tau: np.ndarray                # survival support (steps)
    survival: np.ndarray           # P(I >= tau)
    fit_slope: float               # d log S / d tau over the first decade
    fit_intercept: float
    rate_hz: float                 # exponential-fit rate
    tau90: float
    tail_excess: float
    empty: bool = False
    degenerate_fit: bool = False

    @property
    def intervals_s(self):
        return self.intervals * self.dt


def _eod_intervals(log, agent):
    eods = log.eods()
    agents = range(log.n_agents) if agent is None else [agent]
    out = []
    for a in agents:
        idx = np.flatnonzero(eods[:, a])
        out.append(np.diff(idx))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def spi_distribution(logs, agent=None, n_bins=20):
    """Inter-EOD intervals and their survival-function tail diagnostics.

    ``agent=None`` pools all agents. The exponential reference is a least-squares
    line through ``log S(tau)`` for tau in the first decade ``[tau_min, 10 tau_min]``;
    ``tail_excess`` compares the empirical survival against that line at the
    90th-percentile interval (positive means heavier than exponential).
    """
    logs = _as_list(logs)
    dt = logs[0].dt
    iv = np.concatenate([_eod_intervals(lg, agent) for lg in logs]).astype(np.int64)
    nan = math.nan
    if iv.size == 0:
        return SpiDistribution(iv, dt, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0),
                               nan, nan, nan, nan, nan, empty=True, degenerate_fit=True)
    tau = np.arange(iv.min(), iv.max() + 1)
    counts = np.bincount(iv - iv.min(), minlength=tau.size)
    survival = counts[::-1].cumsum()[::-1] / iv.size
    lo, hi = iv.min(), 10 * iv.min()
    sel = (tau >= lo) & (tau <= hi)
    tau90 = float(np.quantile(iv, 0.9, method="higher"))
    if np.count_nonzero(sel) >= 2:
        slope, intercept = np.polyfit(tau[sel].astype(float), np.log(survival[sel]), 1)
        s90 = survival[int(tau90) - iv.min()]
        tail_excess = float(np.log(s90) - (intercept + slope * tau90))
        degenerate = False
    else:
        slope = intercept = tail_excess = nan
        degenerate = True
    sec = iv * dt
    edges = np.geomspace(sec.min(), sec.max(), n_bins + 1) if sec.max() > sec.min() else \
        np.array([sec.min() * 0.5, sec.min() * 1.5])
    hist, _ = np.histogram(sec, bins=edges)
    return SpiDistribution(iv, dt, hist / hist.sum(), edges, tau, survival, float(slope), float(intercept),
                           float(-slope / dt) if not degenerate else nan, tau90, tail_excess,
                           degenerate_fit=degenerate)


# --- EOD probability --------------------------------------------------------

@dataclass
class EodRate:
    rate: float
    ci_low: float
    ci_high: float
    n_episodes: int
    n_eods: int
    n_agent_steps: int
    empty: bool = False


def matches(log, condition):
    """``condition`` maps competition_mode / knollenorgan_enabled / collective_sensing_enabled to values."""
    if not condition:
        return True
    return all(log.header[k] == v for k, v in condition.items())


def eod_probability(logs, condition=None, n_boot=1000, seed=0):
    """Pooled EOD rate per agent-step with a 95% bootstrap CI over episodes."""
    sel = [lg for lg in _as_list(logs) if matches(lg, condition)]
    if not sel:
        return EodRate(math.nan, math.nan, math.nan, 0, 0, 0, empty=True)
    dts = {lg.dt for lg in sel}
    layouts = {str(lg.header["layout"]) for lg in sel}
    if len(dts) > 1 or len(layouts) > 1:
        raise ContractError("logs differ in dt or observation layout")
    eods = np.array([lg.eods().sum() for lg in sel], dtype=np.int64)
    steps = np.array([lg.n_steps * lg.n_agents for lg in sel], dtype=np.int64)
    rate = eods.sum() / steps.sum()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(sel), size=(n_boot, len(sel)))
    boot = eods[idx].sum(1) / steps[idx].sum(1)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return EodRate(float(rate), float(lo), float(hi), len(sel), int(eods.sum()), int(steps.sum()))


# --- displacement -----------------------------------------------------------

@dataclass
class DisplacementStats:
    displacements: np.ndarray
    path_lengths: np.ndarray
    mean: float
    hist: np.ndarray
    bin_edges: np.ndarray
    window_steps: int
    overlap: str = "non-overlapping"


def displacement_stats(logs, window_steps=9, n_bins=20):
    """Start-to-end distance of each agent over non-overlapping windows.

    Window ``k`` runs from logged row ``k w`` to row ``k w + w``.
    """
    if window_steps < 1:
        raise ContractError("window_steps must be >= 1")
    w = int(window_steps)
    disp, path = [], []
    for lg in _as_list(logs):
        pos = lg.positions()
        T = pos.shape[0]
        n_win = (T - 1) // w
        if n_win <= 0:
            continue
        starts = np.arange(n_win) * w
        d = np.linalg.norm(pos[starts + w] - pos[starts], axis=-1)
        seg = np.linalg.norm(np.diff(pos, axis=0), axis=-1)
        csum = np.concatenate([np.zeros((1, pos.shape[1])), np.cumsum(seg, axis=0)])
        pl = csum[starts + w] - csum[starts]
        disp.append(d.T.ravel())
        path.append(pl.T.ravel())
    disp = np.concatenate(disp) if disp else np.zeros(0)
    path = np.concatenate(path) if path else np.zeros(0)
    if disp.size:
        hi = disp.max() if disp.max() > 0 else 1.0
        hist, edges = np.histogram(disp, bins=n_bins, range=(0.0, hi))
    else:
        hist, edges = np.zeros(n_bins, dtype=np.int64), np.linspace(0, 1, n_bins + 1)
    return DisplacementStats(disp, path, float(disp.mean()) if disp.size else math.nan, hist, edges, w)


# --- inequality -------------------------------------------------------------

def theil_index(consumptions):
    """Theil T index; zero entries contribute 0."""
    x = np.asarray(consumptions, dtype=np.float64).ravel()
    if x.size == 0:
        raise UndefinedStatisticError("Theil index of an empty population is undefined")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ContractError("consumptions must be finite and non-negative")
    mu = x.mean()
    if mu == 0:
        raise UndefinedStatisticError("Theil index is undefined when every agent consumed 0")
    s = x / mu
    terms = np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)
    return float(max(terms.mean(), 0.0))


def theil_per_episode(logs):
    return [theil_index(lg.food_totals()) for lg in _as_list(logs)]


# --- social motifs ----------------------------------------------------------

@dataclass
class MotifRecord:
    code: tuple
    count: int
    occurrences: list = field(default_factory=list)   # (log index, (first, second), start step)

    @property
    def pair(self):
        return self.occurrences[0][1] if self.occurrences else None

    @property
    def window(self):
        if not self.occurrences:
            return None
        start = self.occurrences[0][2]
        return (start, start + len(self.code))


def _runs(mask):
    """(start, length) of maximal True runs."""
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(m)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return zip(starts, ends - starts)


def motif_code(eod_i, eod_j, i, j):
    """Canonical code for a segment of two agents' EOD flags.

    The agent with more EODs in the segment comes first (lower id on ties);
    each symbol is ``<first><second>``.
    """
    ni, nj = int(np.sum(eod_i)), int(np.sum(eod_j))
    if nj > ni or (nj == ni and j < i):
        eod_i, eod_j, i, j = eod_j, eod_i, j, i
    code = tuple(f"{int(a)}{int(b)}" for a, b in zip(eod_i, eod_j))
    return code, (i, j)


def motif_counts(logs, d_motif=0.15, L_motif=4):
    """All canonical codes with their occurrences, before ranking."""
    if d_motif <= 0 or L_motif < 1:
        raise ContractError("d_motif must be > 0 and L_motif >= 1")
    counts = Counter()
    occ = {}
    for li, lg in enumerate(_as_list(logs)):
        pos = lg.positions()
        eods = lg.eods()
        for i, j in combinations(range(lg.n_agents), 2):
            close = np.linalg.norm(pos[:, i] - pos[:, j], axis=-1) < d_motif
            for start, length in _runs(close):
                for k in range(length // L_motif):
                    s = start + k * L_motif
                    code, pair = motif_code(eods[s:s + L_motif, i], eods[s:s + L_motif, j], i, j)
                    counts[code] += 1
                    occ.setdefault(code, []).append((li, pair, int(s)))
    return counts, occ


def mine_motifs(logs, d_motif=0.15, L_motif=4, k=6):
    """Top-``k`` pairwise EOD motifs by count (ties broken by code order)."""
    if k < 1:
        raise ContractError("k must be >= 1")
    counts, occ = motif_counts(logs, d_motif, L_motif)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [MotifRecord(code, n, occ[code]) for code, n in ranked]
