from __future__ import annotations

from dataclasses import dataclass, field

from .benchmark import BenchmarkTable, FitnessCounter, Instance, evaluate
from .search_space import Genotype


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one optimizer run on one instance.

    ``trace[k]`` is the best accuracy seen after ``k + 1`` fitness evaluations.
    """

    optimizer: str
    instance: Instance
    trial: int
    seed: int
    budget: int
    trace: tuple[float, ...]
    final_genotype: Genotype | None
    final_accuracy: float
    complete: bool = True
    evaluated: tuple[Genotype, ...] = field(default=(), compare=False, repr=False)

    @property
    def fes(self) -> int:
        return len(self.trace)


class Tracker:
    """Charges evaluations against a budget and keeps the best-so-far trace."""

    def __init__(self, table: BenchmarkTable, instance: Instance, budget: int, keep_evaluated: bool = False):
        self.table = table
        self.instance = instance
        self.counter = FitnessCounter(budget)
        self.trace: list[float] = []
        self.best_genotype: Genotype | None = None
        self.best_accuracy = float("-inf")
        self.keep_evaluated = keep_evaluated
        self.evaluated: list[Genotype] = []

    @property
    def remaining(self) -> int:
        return self.counter.remaining

    def evaluate(self, g: Genotype) -> float:
        acc = evaluate(self.table, g, self.instance.dataset, self.instance.attack, self.counter)
        # strict improvement keeps the earliest genotype on ties
        if acc > self.best_accuracy:
            self.best_accuracy = acc
            self.best_genotype = g
        self.trace.append(self.best_accuracy)
        if self.keep_evaluated:
            self.evaluated.append(g)
        return acc

    def record(self, optimizer: str, trial: int, seed: int, complete: bool = True) -> TrialRecord:
        return TrialRecord(
            optimizer=optimizer,
            instance=self.instance,
            trial=trial,
            seed=seed,
            budget=self.counter.budget,
            trace=tuple(self.trace),
            final_genotype=self.best_genotype,
            final_accuracy=self.best_accuracy if self.trace else float("nan"),
            complete=complete,
            evaluated=tuple(self.evaluated),
        )
