"""Baseline metaheuristics over the discrete genotype space.

All optimizers share an ask/tell protocol: :meth:`Optimizer.ask` proposes a
batch of genotypes, the caller evaluates them, and :meth:`Optimizer.tell`
hands the accuracies back. Fitness is maximized.

GA works on integer genes directly. The continuous optimizers (PSO, DE,
CMA-ES, JADE, SHADE) search ``[0, 5)^6`` and map each point to a genotype
with :func:`transfer_decode` (clamp, then floor). That map is many-to-one:
every point in the unit box ``g + [0, 1)^6`` decodes to ``g``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, ClassVar, Mapping, Sequence

import numpy as np

from .benchmark import BenchmarkTable, Instance
from .records import TrialRecord, Tracker
from .search_space import NUM_EDGES, NUM_GENOTYPES, NUM_OPERATIONS, Genotype, genotype_from_index

LOWER = 0.0
UPPER = float(NUM_OPERATIONS)
DECODE_EPS = 1e-9


class InvalidSpec(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


class BudgetMismatch(ValueError):
    pass


def transfer_decode(x: Sequence[float]) -> Genotype:
    x = np.asarray(x, dtype=float)
    if x.shape != (NUM_EDGES,):
        raise ValueError(f"continuous genome must have {NUM_EDGES} coordinates")
    return Genotype(tuple(int(v) for v in decode_array(x)))


def decode_array(x: np.ndarray) -> np.ndarray:
    """Vectorized clamp-then-floor; works on (6,) or (n, 6) arrays."""
    return np.floor(np.clip(x, LOWER, UPPER - DECODE_EPS)).astype(np.int64)


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class OptimizerSpec:
    name: ClassVar[str] = ""
    population_size: int = 30
    budget: int = 3000

    def validate(self) -> None:
        if self.population_size < 2:
            raise InvalidSpec(f"{self.name}: population_size must be >= 2")
        if self.budget < self.population_size:
            raise InvalidSpec(f"{self.name}: budget must be >= population_size")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.metadata.get("probability") and not 0.0 <= v <= 1.0:
                raise InvalidSpec(f"{self.name}: {f.name}={v} is not a probability")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _prob(default: float):
    return dataclasses.field(default=default, metadata={"probability": True})


@dataclass(frozen=True)
class GASpec(OptimizerSpec):
    name: ClassVar[str] = "ga"
    pc: float = _prob(0.9)
    pm: float = _prob(0.01)
    tournament_size: int = 2

    def validate(self):
        super().validate()
        if not 1 <= self.tournament_size <= self.population_size:
            raise InvalidSpec("ga: tournament_size must lie in [1, population_size]")


@dataclass(frozen=True)
class PSOSpec(OptimizerSpec):
    name: ClassVar[str] = "pso"
    w: float = 1.0
    c1: float = 2.05
    c2: float = 2.05
    vmax: float = 2.0
    vmin: float = -2.0

    def validate(self):
        super().validate()
        if self.vmin >= self.vmax:
            raise InvalidSpec("pso: vmin must be below vmax")


@dataclass(frozen=True)
class DESpec(OptimizerSpec):
    name: ClassVar[str] = "de"
    F: float = 0.8
    Cr: float = _prob(0.9)

    def validate(self):
        super().validate()
        if self.population_size < 4:
            raise InvalidSpec("de: cur-to-rand/1 needs population_size >= 4")


@dataclass(frozen=True)
class CMAESSpec(OptimizerSpec):
    name: ClassVar[str] = "cmaes"
    sigma0: float = 1.3
    max_resamples: int = 100
    min_std: float = 0.6

    def validate(self):
        super().validate()
        if self.sigma0 <= 0:
            raise InvalidSpec("cmaes: sigma0 must be positive")
        if self.min_std < 0:
            raise InvalidSpec("cmaes: min_std must be non-negative")


@dataclass(frozen=True)
class JADESpec(OptimizerSpec):
    name: ClassVar[str] = "jade"
    mu_f0: float = _prob(0.5)
    mu_cr0: float = _prob(0.5)
    c: float = _prob(0.1)
    p: float = _prob(0.1)

    def validate(self):
        super().validate()
        if self.population_size < 4:
            raise InvalidSpec("jade: population_size must be >= 4")


@dataclass(frozen=True)
class SHADESpec(OptimizerSpec):
    name: ClassVar[str] = "shade"
    mu_f0: float = _prob(0.5)
    mu_cr0: float = _prob(0.5)
    memory_size: int = 10

    def validate(self):
        super().validate()
        if self.memory_size < 1:
            raise InvalidSpec("shade: memory_size must be >= 1")
        if self.population_size < 4:
            raise InvalidSpec("shade: population_size must be >= 4")


@dataclass(frozen=True)
class RandomSearchSpec(OptimizerSpec):
    """Uniform sampling; a reference point, not one of the compared baselines."""

    name: ClassVar[str] = "random"


@dataclass(frozen=True)
class ExhaustiveSpec(OptimizerSpec):
    """Walks the genotypes in index order; with budget 15625 it is an oracle."""

    name: ClassVar[str] = "exhaustive"
    budget: int = NUM_GENOTYPES


SPEC_TYPES: dict[str, type[OptimizerSpec]] = {
    cls.name: cls
    for cls in (GASpec, PSOSpec, DESpec, CMAESSpec, JADESpec, SHADESpec, RandomSearchSpec, ExhaustiveSpec)
}
BASELINES = ("ga", "pso", "de", "cmaes", "jade", "shade")


def spec_from_dict(name: str, params: Mapping[str, Any] | None = None) -> OptimizerSpec:
    """Build a spec from loosely typed values, e.g. strings from a config file."""
    try:
        cls = SPEC_TYPES[name.lower()]
    except KeyError:
        raise InvalidSpec(f"unknown optimizer {name!r}; choose from {', '.join(SPEC_TYPES)}") from None
    params = dict(params or {})
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in params:
            continue
        raw = params.pop(f.name)
        kind = type(f.default)
        try:
            kwargs[f.name] = int(raw) if kind is int else float(raw)
        except (TypeError, ValueError):
            raise InvalidSpec(f"{name}: {f.name}={raw!r} is not a number") from None
    if params:
        raise InvalidSpec(f"{name}: unknown parameter(s) {', '.join(sorted(params))}")
    spec = cls(**kwargs)
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# optimizers


class Optimizer:
    """Ask/tell base class with best-so-far bookkeeping."""

    def __init__(self, spec: OptimizerSpec, seed: int):
        spec.validate()
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.best_genotype: Genotype | None = None
        self.best_fitness = -math.inf
        self.generation = 0
        self._pending: list[Genotype] | None = None
        self._full_batch = 0

    @property
    def name(self) -> str:
        return self.spec.name

    def ask(self, max_size: int | None = None) -> list[Genotype]:
        if self._pending is not None:
            raise ProtocolError("ask called twice without tell")
        batch = self._propose()
        self._full_batch = len(batch)
        if max_size is not None:
            batch = batch[:max_size]
        self._pending = batch
        return list(batch)

    def tell(self, fitnesses: Sequence[float]) -> None:
        if self._pending is None:
            raise ProtocolError("tell called without a preceding ask")
        fitnesses = np.asarray(fitnesses, dtype=float)
        if len(fitnesses) != len(self._pending):
            raise BudgetMismatch(f"expected {len(self._pending)} fitness values, got {len(fitnesses)}")
        batch, self._pending = self._pending, None
        for g, f in zip(batch, fitnesses):
            if f > self.best_fitness:
                self.best_fitness = float(f)
                self.best_genotype = g
        if len(batch) == self._full_batch:
            self._update(fitnesses)
            self.generation += 1
        # a truncated final batch only updates the best-so-far; the run ends there

    def _propose(self) -> list[Genotype]:
        raise NotImplementedError

    def _update(self, fitnesses: np.ndarray) -> None:
        raise NotImplementedError


def _to_genotypes(genes: np.ndarray) -> list[Genotype]:
    return [Genotype(tuple(int(v) for v in row)) for row in genes]


class GeneticAlgorithm(Optimizer):
    """Generational GA on integer genes.

    Tournament selection, one-point crossover with probability ``pc`` and
    per-gene uniform reset mutation with probability ``pm``. The best
    individual of each generation survives unchanged.
    """

    def __init__(self, spec: GASpec, seed: int):
        super().__init__(spec, seed)
        n = spec.population_size
        self.population = self.rng.integers(0, NUM_OPERATIONS, size=(n, NUM_EDGES))
        self.fitness: np.ndarray | None = None
        self._offspring = self.population

    def _tournament(self) -> np.ndarray:
        k = self.spec.tournament_size
        picks = self.rng.choice(len(self.population), size=k, replace=False)
        return self.population[picks[np.argmax(self.fitness[picks])]]

    def _propose(self):
        if self.fitness is None:
            return _to_genotypes(self.population)
        spec = self.spec
        n = spec.population_size
        children = []
        # slot 0 is reserved for the elite
        while len(children) < n - 1:
            a, b = self._tournament().copy(), self._tournament().copy()
            if self.rng.random() < spec.pc:
                cut = self.rng.integers(1, NUM_EDGES)
                a[cut:], b[cut:] = b[cut:].copy(), a[cut:].copy()
            children.extend([a, b])
        children = np.array(children[: n - 1])
        mask = self.rng.random(children.shape) < spec.pm
        children[mask] = self.rng.integers(0, NUM_OPERATIONS, size=int(mask.sum()))
        elite = self.population[np.argmax(self.fitness)]
        self._offspring = np.vstack([elite[None, :], children])
        return _to_genotypes(self._offspring)

    def _update(self, fitnesses):
        self.population = self._offspring
        self.fitness = fitnesses.copy()


class _ContinuousOptimizer(Optimizer):
    def _init_positions(self) -> np.ndarray:
        return self.rng.uniform(LOWER, UPPER, size=(self.spec.population_size, NUM_EDGES))

    @staticmethod
    def _decode(x: np.ndarray) -> list[Genotype]:
        return _to_genotypes(decode_array(x))


class ParticleSwarm(_ContinuousOptimizer):
    """Global-best PSO. Velocities are clamped to [vmin, vmax]; positions are
    left free and only clamped by the decoder."""

    def __init__(self, spec: PSOSpec, seed: int):
        super().__init__(spec, seed)
        n = spec.population_size
        self.positions = self._init_positions()
        self.velocities = self.rng.uniform(spec.vmin, spec.vmax, size=(n, NUM_EDGES))
        self.pbest = self.positions.copy()
        self.pbest_fitness = np.full(n, -np.inf)
        self.gbest: np.ndarray | None = None
        self.gbest_fitness = -np.inf

    def _propose(self):
        if self.gbest is not None:
            s = self.spec
            r1 = self.rng.random(self.positions.shape)
            r2 = self.rng.random(self.positions.shape)
            v = (
                s.w * self.velocities
                + s.c1 * r1 * (self.pbest - self.positions)
                + s.c2 * r2 * (self.gbest - self.positions)
            )
            self.velocities = np.clip(v, s.vmin, s.vmax)
            self.positions = self.positions + self.velocities
        return self._decode(self.positions)

    def _update(self, fitnesses):
        better = fitnesses >= self.pbest_fitness
        self.pbest[better] = self.positions[better]
        self.pbest_fitness[better] = fitnesses[better]
        i = int(np.argmax(self.pbest_fitness))
        if self.pbest_fitness[i] > self.gbest_fitness or self.gbest is None:
            self.gbest = self.pbest[i].copy()
            self.gbest_fitness = float(self.pbest_fitness[i])


def _repair(v: np.ndarray, parent: np.ndarray) -> np.ndarray:
    """Out-of-box coordinates move halfway from the parent to the violated bound."""
    v = np.where(v < LOWER, (LOWER + parent) / 2, v)
    return np.where(v >= UPPER, (UPPER + parent) / 2, v)


def _binomial_crossover(rng: np.random.Generator, parent: np.ndarray, mutant: np.ndarray, cr: np.ndarray) -> np.ndarray:
    n, d = parent.shape
    take = rng.random((n, d)) < np.reshape(cr, (-1, 1))
    take[np.arange(n), rng.integers(0, d, size=n)] = True
    return np.where(take, mutant, parent)


def _distinct_others(rng: np.random.Generator, n: int, i: int, k: int) -> np.ndarray:
    """k distinct indices from range(n) excluding i."""
    pool = np.delete(np.arange(n), i)
    return rng.choice(pool, size=k, replace=False)


class _DEBase(_ContinuousOptimizer):
    def __init__(self, spec, seed):
        super().__init__(spec, seed)
        self.population = self._init_positions()
        self.fitness: np.ndarray | None = None
        self._trials = self.population

    def _propose(self):
        if self.fitness is None:
            self._trials = self.population
        else:
            self._trials = self._make_trials()
        return self._decode(self._trials)

    def _update(self, fitnesses):
        if self.fitness is None:
            self.fitness = fitnesses.copy()
            return
        improved = fitnesses > self.fitness
        accept = fitnesses >= self.fitness
        self._adapt(improved, fitnesses - self.fitness)
        self.population[accept] = self._trials[accept]
        self.fitness[accept] = fitnesses[accept]

    def _make_trials(self) -> np.ndarray:
        raise NotImplementedError

    def _adapt(self, improved: np.ndarray, gain: np.ndarray) -> None:
        pass


class DifferentialEvolution(_DEBase):
    """DE/current-to-rand/1/bin.

    ``v = x_i + K (x_r1 - x_i) + F (x_r2 - x_r3)`` with ``K ~ U(0, 1)`` drawn
    per individual, followed by binomial crossover with rate ``Cr``.
    """

    def _make_trials(self):
        s = self.spec
        x = self.population
        n = len(x)
        r = np.array([_distinct_others(self.rng, n, i, 3) for i in range(n)])
        k = self.rng.random((n, 1))
        mutant = x + k * (x[r[:, 0]] - x) + s.F * (x[r[:, 1]] - x[r[:, 2]])
        trial = _binomial_crossover(self.rng, x, mutant, np.full(n, s.Cr))
        return _repair(trial, x)


def _sample_cauchy_f(rng: np.random.Generator, loc: np.ndarray) -> np.ndarray:
    """F ~ Cauchy(loc, 0.1), redrawn while <= 0 and truncated to 1."""
    loc = np.asarray(loc, dtype=float)
    f = loc + 0.1 * np.tan(np.pi * (rng.random(loc.shape) - 0.5))
    bad = f <= 0
    while bad.any():
        f[bad] = loc[bad] + 0.1 * np.tan(np.pi * (rng.random(int(bad.sum())) - 0.5))
        bad = f <= 0
    return np.minimum(f, 1.0)


def _sample_normal_cr(rng: np.random.Generator, loc: np.ndarray) -> np.ndarray:
    loc = np.asarray(loc, dtype=float)
    return np.clip(rng.normal(loc, 0.1), 0.0, 1.0)


def _current_to_pbest(rng, x, fitness, f, top_counts) -> np.ndarray:
    """v = x_i + F (x_pbest - x_i) + F (x_r1 - x_r2), no external archive."""
    n = len(x)
    order = np.argsort(-fitness, kind="stable")
    mutant = np.empty_like(x)
    for i in range(n):
        pbest = order[rng.integers(0, top_counts[i])]
        r1, r2 = _distinct_others(rng, n, i, 2)
        mutant[i] = x[i] + f[i] * (x[pbest] - x[i]) + f[i] * (x[r1] - x[r2])
    return mutant


class JADE(_DEBase):
    """Adaptive DE with current-to-pbest/1 mutation and no archive."""

    def __init__(self, spec: JADESpec, seed: int):
        super().__init__(spec, seed)
        self.mu_f = spec.mu_f0
        self.mu_cr = spec.mu_cr0
        self._f = self._cr = None

    def _make_trials(self):
        x = self.population
        n = len(x)
        self._f = _sample_cauchy_f(self.rng, np.full(n, self.mu_f))
        self._cr = _sample_normal_cr(self.rng, np.full(n, self.mu_cr))
        top = max(1, int(round(self.spec.p * n)))
        mutant = _current_to_pbest(self.rng, x, self.fitness, self._f, np.full(n, top))
        trial = _binomial_crossover(self.rng, x, mutant, self._cr)
        return _repair(trial, x)

    def _adapt(self, improved, gain):
        if not improved.any():
            return
        c = self.spec.c
        sf, scr = self._f[improved], self._cr[improved]
        self.mu_cr = (1 - c) * self.mu_cr + c * float(np.mean(scr))
        self.mu_f = (1 - c) * self.mu_f + c * float(np.sum(sf**2) / np.sum(sf))


class SHADE(_DEBase):
    """Success-history adaptive DE with an H-slot (F, Cr) memory."""

    def __init__(self, spec: SHADESpec, seed: int):
        super().__init__(spec, seed)
        self.memory_f = np.full(spec.memory_size, spec.mu_f0)
        self.memory_cr = np.full(spec.memory_size, spec.mu_cr0)
        self._slot = 0
        self._f = self._cr = None

    def _make_trials(self):
        x = self.population
        n = len(x)
        r = self.rng.integers(0, self.spec.memory_size, size=n)
        self._f = _sample_cauchy_f(self.rng, self.memory_f[r])
        self._cr = _sample_normal_cr(self.rng, self.memory_cr[r])
        # small populations collapse the interval to the single point 2/n
        p_min = 2.0 / n
        p = self.rng.uniform(p_min, max(p_min, 0.2), size=n)
        top = np.clip(np.rint(p * n).astype(int), 2, n)
        mutant = _current_to_pbest(self.rng, x, self.fitness, self._f, top)
        trial = _binomial_crossover(self.rng, x, mutant, self._cr)
        return _repair(trial, x)

    def _adapt(self, improved, gain):
        if not improved.any():
            return
        w = gain[improved]
        w = w / w.sum()
        sf, scr = self._f[improved], self._cr[improved]
        self.memory_f[self._slot] = float(np.sum(w * sf**2) / np.sum(w * sf))
        self.memory_cr[self._slot] = float(np.sum(w * scr))
        self._slot = (self._slot + 1) % self.spec.memory_size


class CMAES(_ContinuousOptimizer):
    """(mu/mu_w, lambda)-CMA-ES with default strategy parameters.

    Samples outside the box are redrawn up to ``max_resamples`` times and
    then clamped. Because fitness is constant on each unit cell, the step
    size is kept large enough that every coordinate's sampling std stays at
    or above ``min_std`` (in cell widths); otherwise the search freezes in
    whichever cell the mean happens to settle in.
    """

    def __init__(self, spec: CMAESSpec, seed: int):
        super().__init__(spec, seed)
        n = NUM_EDGES
        lam = spec.population_size
        mu = lam // 2
        w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = w / w.sum()
        self.mu = mu
        self.mueff = 1.0 / np.sum(self.weights**2)
        mueff = self.mueff
        self.cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        self.cs = (mueff + 2) / (n + mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + mueff)
        self.cmu = min(1 - self.c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.mean = np.full(n, (LOWER + UPPER) / 2)
        self.sigma = spec.sigma0
        self.C = np.eye(n)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self._B = np.eye(n)
        self._D = np.ones(n)
        self._x = None

    def _propose(self):
        n = NUM_EDGES
        lam = self.spec.population_size
        x = np.empty((lam, n))
        for k in range(lam):
            for _ in range(self.spec.max_resamples):
                y = self._B @ (self._D * self.rng.standard_normal(n))
                cand = self.mean + self.sigma * y
                if np.all((cand >= LOWER) & (cand < UPPER)):
                    break
            x[k] = np.clip(cand, LOWER, UPPER - DECODE_EPS)
        self._x = x
        return self._decode(x)

    def _update(self, fitnesses):
        n = NUM_EDGES
        order = np.argsort(-fitnesses, kind="stable")
        xsel = self._x[order[: self.mu]]
        old = self.mean
        y = (xsel - old) / self.sigma
        ymean = self.weights @ y
        self.mean = old + self.sigma * ymean

        inv_sqrt_c = self._B @ np.diag(1 / self._D) @ self._B.T
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (inv_sqrt_c @ ymean)
        gen = self.generation + 1
        ps_norm = np.linalg.norm(self.ps)
        hsig = ps_norm / math.sqrt(1 - (1 - self.cs) ** (2 * gen)) / self.chi_n < 1.4 + 2 / (n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * ymean

        rank_mu = (y.T * self.weights) @ y
        self.C = (
            (1 - self.c1 - self.cmu) * self.C
            + self.c1 * (np.outer(self.pc, self.pc) + (1 - hsig) * self.cc * (2 - self.cc) * self.C)
            + self.cmu * rank_mu
        )
        self.C = (self.C + self.C.T) / 2
        self.sigma *= math.exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1))
        if self.spec.min_std > 0:
            self.sigma = max(self.sigma, self.spec.min_std / math.sqrt(np.min(np.diag(self.C))))

        eigvals, self._B = np.linalg.eigh(self.C)
        self._D = np.sqrt(np.maximum(eigvals, 1e-20))


class RandomSearch(Optimizer):
    def _propose(self):
        genes = self.rng.integers(0, NUM_OPERATIONS, size=(self.spec.population_size, NUM_EDGES))
        return _to_genotypes(genes)

    def _update(self, fitnesses):
        pass


class ExhaustiveSearch(Optimizer):
    def __init__(self, spec, seed):
        super().__init__(spec, seed)
        self._next = 0

    def _propose(self):
        stop = min(self._next + self.spec.population_size, NUM_GENOTYPES)
        batch = [genotype_from_index(i) for i in range(self._next, stop)]
        if not batch:
            raise ProtocolError("every genotype has already been proposed")
        return batch

    def ask(self, max_size=None):
        batch = super().ask(max_size)
        self._next += len(batch)
        return batch

    def _update(self, fitnesses):
        pass


OPTIMIZER_TYPES: dict[str, type[Optimizer]] = {
    "ga": GeneticAlgorithm,
    "pso": ParticleSwarm,
    "de": DifferentialEvolution,
    "cmaes": CMAES,
    "jade": JADE,
    "shade": SHADE,
    "random": RandomSearch,
    "exhaustive": ExhaustiveSearch,
}


def make_optimizer(spec: OptimizerSpec, rng_seed: int) -> Optimizer:
    spec.validate()
    return OPTIMIZER_TYPES[spec.name](spec, rng_seed)


def run_optimizer(
    spec: OptimizerSpec,
    seed: int,
    table: BenchmarkTable,
    instance: Instance,
    trial: int = 0,
    observer=None,
    keep_evaluated: bool = False,
) -> TrialRecord:
    """Drive one optimizer until its budget is spent.

    ``observer(optimizer)`` is called after every tell, e.g. to audit
    adaptation state.
    """
    opt = make_optimizer(spec, seed)
    tracker = Tracker(table, instance, spec.budget, keep_evaluated=keep_evaluated)
    while tracker.remaining > 0:
        batch = opt.ask(max_size=tracker.remaining)
        opt.tell([tracker.evaluate(g) for g in batch])
        if observer is not None:
            observer(opt)
    return tracker.record(spec.name, trial, seed)
