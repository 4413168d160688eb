"""Signal metrics for evaluating closed-loop runs.

Readouts from the spiking loop are noisy, so frequency is measured from
hysteresis-guarded zero crossings of the mean-removed signal (median
period), and periodicity as the median correlation of adjacent cycles.
NRMSE is the root-mean-square error divided by the target's standard
deviation; for closed-loop runs the reference is regenerated at the
measured output frequency and aligned at the common phase shift that
fits all four channels best (the loop paces itself, so frequency error is
scored separately from waveform error).
"""

from __future__ import annotations

import math

import numpy as np

from .cpg import GaitDefinition, target_trajectories

__all__ = [
    "nrmse",
    "measure_frequency_hz",
    "cycle_correlation",
    "best_phase_shift",
    "aligned_nrmse",
    "closed_loop_nrmse",
    "classify_gait",
    "gait_template",
    "pair_correlation",
]


def nrmse(signal: np.ndarray, target: np.ndarray) -> float:
    """Root-mean-square error normalized by the target standard deviation."""
    signal = np.asarray(signal, dtype=float)
    target = np.asarray(target, dtype=float)
    if signal.shape != target.shape:
        raise ValueError(f"shape mismatch {signal.shape} vs {target.shape}")
    scale = target.std()
    if scale == 0.0:
        return float(np.sqrt(np.mean((signal - target) ** 2)))
    return float(np.sqrt(np.mean((signal - target) ** 2)) / scale)


def measure_frequency_hz(
    signal: np.ndarray, dt_ms: float, hysteresis_frac: float = 0.25
) -> float:
    """Fundamental frequency from rising zero crossings with hysteresis.

    A crossing only counts after the signal has dipped below
    ``-hysteresis_frac * rms`` and then risen above ``+hysteresis_frac * rms``,
    which rejects chatter near zero. Returns NaN if fewer than two
    crossings are found.
    """
    x = np.asarray(signal, dtype=float)
    x = x - x.mean()
    rms = float(np.sqrt(np.mean(x**2)))
    if rms == 0.0:
        return math.nan
    h = hysteresis_frac * rms

    crossings = []
    armed = False
    prev = x[0]
    for i in range(1, x.shape[0]):
        cur = x[i]
        if cur < -h:
            armed = True
        elif armed and prev <= h < cur:
            frac = (h - prev) / (cur - prev)
            crossings.append((i - 1 + frac) * dt_ms * 1e-3)
            armed = False
        prev = cur
    if len(crossings) < 2:
        return math.nan
    periods = np.diff(crossings)
    return float(1.0 / np.median(periods))


def cycle_correlation(signal: np.ndarray, period_ticks: int) -> float:
    """Median Pearson correlation between adjacent cycles.

    Returns NaN when fewer than two full cycles fit.
    """
    x = np.asarray(signal, dtype=float)
    n_cycles = x.shape[0] // period_ticks
    if n_cycles < 2:
        return math.nan
    cycles = x[: n_cycles * period_ticks].reshape(n_cycles, period_ticks)
    corrs = []
    for i in range(n_cycles - 1):
        a = cycles[i] - cycles[i].mean()
        b = cycles[i + 1] - cycles[i + 1].mean()
        denom = np.linalg.norm(a) * np.linalg.norm(b)
        corrs.append(float(a @ b / denom) if denom > 0.0 else 0.0)
    return float(np.median(corrs))


def best_phase_shift(signals: np.ndarray, reference: np.ndarray, period_ticks: int) -> int:
    """Common circular shift of the reference minimizing total squared error.

    ``signals`` and ``reference`` are (rows, channels). The shift is
    searched over one full period.
    """
    sig = np.asarray(signals, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if sig.shape != ref.shape:
        raise ValueError(f"shape mismatch {sig.shape} vs {ref.shape}")
    best_shift, best_err = 0, math.inf
    for shift in range(period_ticks):
        err = float(np.sum((sig - np.roll(ref, shift, axis=0)) ** 2))
        if err < best_err:
            best_err, best_shift = err, shift
    return best_shift


def aligned_nrmse(
    signals: np.ndarray, reference: np.ndarray, period_ticks: int
) -> np.ndarray:
    """Per-channel NRMSE after aligning the reference at the best common shift."""
    shift = best_phase_shift(signals, reference, period_ticks)
    ref = np.roll(np.asarray(reference, dtype=float), shift, axis=0)
    sig = np.asarray(signals, dtype=float)
    return np.array([nrmse(sig[:, c], ref[:, c]) for c in range(sig.shape[1])])


def closed_loop_nrmse(
    readouts: np.ndarray,
    gait: GaitDefinition,
    dt_ms: float,
    measured_hz: float | None = None,
) -> tuple[np.ndarray, float]:
    """Waveform NRMSE of a self-paced closed-loop segment.

    The reference is the gait's target trajectory regenerated at the
    measured fundamental frequency (frequency error is a separate
    criterion), then phase-aligned. Returns (per-channel NRMSE, measured
    frequency in Hz).
    """
    readouts = np.asarray(readouts, dtype=float)
    if measured_hz is None or not math.isfinite(measured_hz):
        measured_hz = measure_frequency_hz(readouts[:, 0], dt_ms)
    if not math.isfinite(measured_hz) or measured_hz <= 0.0:
        return np.full(readouts.shape[1], math.inf), math.nan

    from dataclasses import replace

    ref_gait = replace(gait, frequency_hz=measured_hz)
    duration_s = (readouts.shape[0] - 1) * dt_ms * 1e-3
    min_dur = 2.0 * ref_gait.period_s
    ref = target_trajectories(ref_gait, max(duration_s, min_dur), dt_ms).angles
    ref = ref[: readouts.shape[0]]
    if ref.shape[0] < readouts.shape[0]:
        reps = math.ceil(readouts.shape[0] / ref.shape[0])
        ref = np.tile(ref, (reps, 1))[: readouts.shape[0]]
    period_ticks = max(1, int(round(1000.0 / (measured_hz * dt_ms))))
    return aligned_nrmse(readouts, ref, period_ticks), float(measured_hz)


def gait_template(gait: GaitDefinition, dt_ms: float) -> np.ndarray:
    """One cycle of the gait's target waveform, (period_ticks, 4)."""
    traj = target_trajectories(gait, 2.0 * gait.period_s, dt_ms)
    period_ticks = int(round(1000.0 / (gait.frequency_hz * dt_ms)))
    return traj.angles[:period_ticks]


def classify_gait(
    segment: np.ndarray, templates: dict[str, np.ndarray]
) -> tuple[str, dict[str, float]]:
    """Match a (rows, 4) segment against one-cycle gait templates.

    Each template is tiled to the segment length and scored by the mean
    per-channel correlation at its best circular shift; the winning label
    and all scores are returned.
    """
    seg = np.asarray(segment, dtype=float)
    seg0 = seg - seg.mean(axis=0)
    scores: dict[str, float] = {}
    for label, template in templates.items():
        period = template.shape[0]
        reps = math.ceil(seg.shape[0] / period)
        best = -math.inf
        for shift in range(period):
            tiled = np.tile(np.roll(template, shift, axis=0), (reps, 1))[: seg.shape[0]]
            tiled0 = tiled - tiled.mean(axis=0)
            score = 0.0
            for c in range(seg.shape[1]):
                denom = np.linalg.norm(seg0[:, c]) * np.linalg.norm(tiled0[:, c])
                score += float(seg0[:, c] @ tiled0[:, c] / denom) if denom > 0.0 else 0.0
            best = max(best, score / seg.shape[1])
        scores[label] = best
    winner = max(scores, key=scores.get)
    return winner, scores


def pair_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two equally long signals."""
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0.0 else 0.0
