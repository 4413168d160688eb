"""Covariance matrix adaptation evolution strategy, plus the gait search space.

Self-contained implementation of the standard strategy (rank-mu and
rank-one covariance updates, cumulative step-size adaptation, log-linear
positive recombination weights). Fitness is maximized. Sampling is
deterministic given (config, seed): one generator, advanced once per ask.

Strategy constants, restated so the implementation is self-contained
(n = dimension, lam = population size, mu = lam // 2):

    w_i     = ln((lam + 1) / 2) - ln(i + 1),  i < mu, normalized to sum 1
    mueff   = (sum w)^2 / sum w^2
    c_c     = (4 + mueff/n) / (n + 4 + 2 mueff/n)
    c_s     = (mueff + 2) / (n + mueff + 5)
    c_1     = 2 / ((n + 1.3)^2 + mueff)
    c_mu    = min(1 - c_1, 2 (mueff - 2 + 1/mueff) / ((n + 2)^2 + mueff))
    damps   = 1 + 2 max(0, sqrt((mueff - 1)/(n + 1)) - 1) + c_s
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cpg import CouplingSpec, GaitDefinition, LegProfile

__all__ = [
    "CmaesConfig",
    "CmaEs",
    "ParamRange",
    "GaitSearchSpace",
    "walking_search_space",
    "bounding_search_space",
    "GaitSearchResult",
    "optimize_gait",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CmaesConfig:
    """Search distribution setup. ``init_sd`` is the initial per-coordinate
    standard deviation (isotropic)."""

    dimension: int
    init_mean: float | Sequence[float] = 0.5
    init_sd: float = 0.2
    population: int = 25
    bounds: tuple[float, float] | None = None  # informational; applied at decode
    max_generations: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.population < 4:
            raise ValueError(f"population must be >= 4, got {self.population}")
        if self.init_sd <= 0.0:
            raise ValueError(f"init_sd must be > 0, got {self.init_sd}")

    def mean_vector(self) -> np.ndarray:
        m = np.asarray(self.init_mean, dtype=float)
        if m.ndim == 0:
            m = np.full(self.dimension, float(m))
        if m.shape != (self.dimension,):
            raise ValueError(f"init_mean shape {m.shape} != ({self.dimension},)")
        return m


class CmaEs:
    """ask/tell optimizer state. Higher fitness is better."""

    def __init__(self, config: CmaesConfig):
        self.config = config
        n = config.dimension
        self.n = n
        lam = config.population
        self.lam = lam
        self.mu = lam // 2

        w = np.log((lam + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = self.weights.sum() ** 2 / (self.weights**2).sum()

        self.cc = (4.0 + self.mueff / n) / (n + 4.0 + 2.0 * self.mueff / n)
        self.cs = (self.mueff + 2.0) / (n + self.mueff + 5.0)
        self.c1 = 2.0 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(
            1.0 - self.c1,
            2.0 * (self.mueff - 2.0 + 1.0 / self.mueff) / ((n + 2.0) ** 2 + self.mueff),
        )
        self.damps = 1.0 + 2.0 * max(0.0, math.sqrt((self.mueff - 1.0) / (n + 1.0)) - 1.0) + self.cs
        self.chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

        self.mean = config.mean_vector()
        self.sigma = float(config.init_sd)
        self.cov = np.eye(n)
        self.path_sigma = np.zeros(n)
        self.path_cov = np.zeros(n)
        self.generation = 0

        self._rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(config.seed))
        )
        self._eig_vals = np.ones(n)
        self._eig_vecs = np.eye(n)

    def _decompose(self) -> None:
        vals, vecs = np.linalg.eigh(self.cov)
        if vals.min() <= 0.0:
            raise RuntimeError(
                f"covariance lost positive definiteness (min eigenvalue {vals.min():.3e})"
            )
        self._eig_vals = vals
        self._eig_vecs = vecs

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.cov).min())

    def ask(self) -> np.ndarray:
        """Sample ``population`` candidates ~ N(mean, sigma^2 C), shape (lam, n).

        Candidates are not clamped here; bound handling happens at decode.
        """
        self._decompose()
        z = self._rng.standard_normal((self.lam, self.n))
        y = (z * np.sqrt(self._eig_vals)) @ self._eig_vecs.T
        return self.mean + self.sigma * y

    def tell(self, candidates: np.ndarray, fitnesses: Sequence[float]) -> None:
        """Rank candidates by fitness (descending) and update the distribution."""
        x = np.asarray(candidates, dtype=float)
        f = np.asarray(fitnesses, dtype=float)
        if x.shape != (self.lam, self.n):
            raise ValueError(f"candidates shape {x.shape} != ({self.lam}, {self.n})")
        if f.shape != (self.lam,):
            raise ValueError(f"expected {self.lam} fitness values, got {f.shape}")
        bad = ~np.isfinite(f)
        if bad.any():
            logger.warning(
                "%d non-finite fitness value(s) assigned worst rank", int(bad.sum())
            )
            f = f.copy()
            f[bad] = -np.inf

        order = np.argsort(-f, kind="stable")
        elite = x[order[: self.mu]]

        xold = self.mean
        self.mean = self.weights @ elite
        y = (self.mean - xold) / self.sigma

        # C^(-1/2) y via the eigensystem from the most recent ask.
        z = self._eig_vecs @ ((self._eig_vecs.T @ y) / np.sqrt(self._eig_vals))
        self.path_sigma = (1.0 - self.cs) * self.path_sigma + math.sqrt(
            self.cs * (2.0 - self.cs) * self.mueff
        ) * z

        self.generation += 1
        ps_norm = float(np.linalg.norm(self.path_sigma))
        expected = math.sqrt(1.0 - (1.0 - self.cs) ** (2.0 * self.generation))
        hsig = ps_norm / expected / self.chi_n < 1.4 + 2.0 / (self.n + 1.0)

        self.path_cov = (1.0 - self.cc) * self.path_cov + hsig * math.sqrt(
            self.cc * (2.0 - self.cc) * self.mueff
        ) * y

        artmp = (elite - xold) / self.sigma
        rank_mu = (artmp.T * self.weights) @ artmp
        self.cov = (
            (1.0 - self.c1 - self.cmu) * self.cov
            + self.c1
            * (
                np.outer(self.path_cov, self.path_cov)
                + (0.0 if hsig else self.cc * (2.0 - self.cc)) * self.cov
            )
            + self.cmu * rank_mu
        )
        self.cov = 0.5 * (self.cov + self.cov.T)

        self.sigma *= math.exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0))


@dataclass(frozen=True)
class ParamRange:
    """One searched gait parameter with its affine decode range."""

    name: str
    low: float
    high: float

    def decode(self, u: float) -> float:
        u = min(max(u, 0.0), 1.0)  # clamp at decode time, sampler stays unbiased
        return self.low + u * (self.high - self.low)


# Canonical gait parameter names understood by GaitSearchSpace.
_GAIT_PARAM_NAMES = (
    "front_amplitude", "hind_amplitude",
    "front_duty", "hind_duty",
    "front_offset", "hind_offset",
    "phase_fr", "phase_hl", "phase_hr",
)


@dataclass(frozen=True)
class GaitSearchSpace:
    """Maps a unit-scaled search vector to a gait definition.

    ``params`` are the searched dimensions (affine range maps with
    clamping); anything not searched takes its value from ``fixed`` or the
    built-in defaults. Frequency is held constant during search.
    """

    params: tuple[ParamRange, ...]
    fixed: dict = field(default_factory=dict)
    frequency_hz: float = 1.44
    coupling_strength: float = 2.0

    def __post_init__(self) -> None:
        for p in self.params:
            if p.name not in _GAIT_PARAM_NAMES:
                raise ValueError(f"unknown gait parameter {p.name!r}")
            if not p.low < p.high:
                raise ValueError(f"{p.name}: low must be < high")

    @property
    def dimension(self) -> int:
        return len(self.params)

    def decode(self, x: np.ndarray) -> GaitDefinition:
        values = {
            "front_amplitude": 80.0, "hind_amplitude": 80.0,
            "front_duty": 0.5, "hind_duty": 0.5,
            "front_offset": 0.0, "hind_offset": 0.0,
            "phase_fr": 180.0, "phase_hl": 270.0, "phase_hr": 90.0,
        }
        values.update(self.fixed)
        for p, u in zip(self.params, np.asarray(x, dtype=float)):
            values[p.name] = p.decode(float(u))
        w = self.coupling_strength
        return GaitDefinition(
            frequency_hz=self.frequency_hz,
            front=LegProfile(values["front_amplitude"], values["front_duty"],
                             values["front_offset"]),
            hind=LegProfile(values["hind_amplitude"], values["hind_duty"],
                            values["hind_offset"]),
            coupling=CouplingSpec(values["phase_fr"], values["phase_hl"],
                                  values["phase_hr"], w, w, w),
        )


def walking_search_space(frequency_hz: float = 1.44) -> GaitSearchSpace:
    """The nine-parameter walking search space."""
    return GaitSearchSpace(
        params=(
            ParamRange("front_amplitude", 20.0, 140.0),
            ParamRange("hind_amplitude", 20.0, 140.0),
            ParamRange("front_duty", 0.15, 0.85),
            ParamRange("hind_duty", 0.15, 0.85),
            ParamRange("front_offset", -60.0, 60.0),
            ParamRange("hind_offset", -60.0, 60.0),
            ParamRange("phase_fr", 150.0, 210.0),
            ParamRange("phase_hl", 240.0, 300.0),
            ParamRange("phase_hr", 60.0, 120.0),
        ),
        frequency_hz=frequency_hz,
    )


def bounding_search_space(frequency_hz: float = 1.44) -> GaitSearchSpace:
    """Constrained space: front pair in phase, hind pair in phase."""
    return GaitSearchSpace(
        params=(
            ParamRange("front_amplitude", 20.0, 140.0),
            ParamRange("hind_amplitude", 20.0, 140.0),
            ParamRange("front_duty", 0.15, 0.85),
            ParamRange("hind_duty", 0.15, 0.85),
            ParamRange("front_offset", -60.0, 60.0),
            ParamRange("hind_offset", -60.0, 60.0),
            ParamRange("phase_fr", -10.0, 10.0),
            ParamRange("phase_hl", 170.0, 190.0),
            ParamRange("phase_hr", 170.0, 190.0),
        ),
        frequency_hz=frequency_hz,
    )


@dataclass
class GaitSearchResult:
    best_gait: GaitDefinition
    best_fitness: float
    best_vector: np.ndarray
    history: list[dict]  # per generation: gen, best, median, sigma, cov_norm

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(
                f, fieldnames=["gen", "best", "median", "sigma", "cov_norm"]
            )
            writer.writeheader()
            for row in self.history:
                writer.writerow(row)


def optimize_gait(
    space: GaitSearchSpace,
    evaluator: Callable[[GaitDefinition], float],
    config: CmaesConfig | None = None,
    workers: int = 1,
    log_path=None,
) -> GaitSearchResult:
    """Run generations of ask/evaluate/tell over the gait space.

    The evaluator must be deterministic. Candidate evaluations may run on a
    thread pool (``workers`` > 1); results are collected in candidate order
    so the trajectory is identical to a serial run. An evaluator failure
    assigns the worst fitness and the search continues.
    """
    if config is None:
        config = CmaesConfig(dimension=space.dimension)
    if config.dimension != space.dimension:
        raise ValueError(
            f"config dimension {config.dimension} != space dimension {space.dimension}"
        )

    def safe_eval(gait: GaitDefinition) -> float:
        try:
            return float(evaluator(gait))
        except Exception:
            logger.warning("gait evaluation failed; assigning worst fitness", exc_info=True)
            return -math.inf

    es = CmaEs(config)
    best_fitness = -math.inf
    best_vector: np.ndarray | None = None
    history: list[dict] = []

    for gen in range(config.max_generations):
        candidates = es.ask()
        gaits = [space.decode(c) for c in candidates]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                fitnesses = list(pool.map(safe_eval, gaits))
        else:
            fitnesses = [safe_eval(g) for g in gaits]

        finite = [f for f in fitnesses if math.isfinite(f)]
        gen_best = int(np.argmax(fitnesses))
        if fitnesses[gen_best] > best_fitness:
            best_fitness = fitnesses[gen_best]
            best_vector = candidates[gen_best].copy()
        history.append(
            {
                "gen": gen,
                "best": fitnesses[gen_best],
                "median": float(np.median(finite)) if finite else -math.inf,
                "sigma": es.sigma,
                "cov_norm": float(np.linalg.norm(es.cov)),
            }
        )
        es.tell(candidates, fitnesses)

    if best_vector is None:
        raise RuntimeError("optimization produced no evaluable candidate")
    result = GaitSearchResult(
        best_gait=space.decode(best_vector),
        best_fitness=best_fitness,
        best_vector=best_vector,
        history=history,
    )
    if log_path is not None:
        result.write_log(log_path)
    return result
