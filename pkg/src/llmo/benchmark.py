"""Tabular fitness oracle over the full genotype space.

A :class:`BenchmarkTable` stores accuracy percentages for every genotype on
every (dataset, attack) instance. Tables come either from a CSV file with
real benchmark data or from :func:`generate_surrogate`, a seeded synthetic
landscape whose optimum can be found by enumeration.
"""
from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .search_space import (
    EDGE_ORDER_TAG,
    NUM_EDGES,
    NUM_GENOTYPES,
    NUM_OPERATIONS,
    Genotype,
    all_genes_array,
    genotype_from_index,
    genotype_to_index,
)


class DatasetKind(enum.Enum):
    CIFAR10 = "cifar10"
    CIFAR100 = "cifar100"

    @property
    def column_prefix(self) -> str:
        return {"cifar10": "c10", "cifar100": "c100"}[self.value]


class AttackKind(enum.Enum):
    CLEAN = "clean"
    FGSM = "fgsm"
    PGD = "pgd"
    APGD = "apgd"
    SQUARE = "square"


@dataclass(frozen=True)
class Instance:
    dataset: DatasetKind
    attack: AttackKind

    def __str__(self):
        return f"{self.dataset.value}:{self.attack.value}"

    @property
    def column(self) -> str:
        return f"{self.dataset.column_prefix}_{self.attack.value}"

    @classmethod
    def parse(cls, text: str) -> "Instance":
        ds, sep, at = text.strip().lower().partition(":")
        if not sep:
            raise ValueError(f"instance must look like 'cifar10:clean', got {text!r}")
        return cls(DatasetKind(ds), AttackKind(at))

    def __lt__(self, other):
        return _instance_pos(self) < _instance_pos(other)


def _instance_pos(inst: Instance) -> tuple[int, int]:
    return list(DatasetKind).index(inst.dataset), list(AttackKind).index(inst.attack)


ALL_INSTANCES = tuple(Instance(d, a) for d in DatasetKind for a in AttackKind)
CSV_COLUMNS = tuple(inst.column for inst in ALL_INSTANCES)
CSV_HEADER = f"index,edge_order={EDGE_ORDER_TAG}"

# Optimal accuracy per instance in the real benchmark release.
TABLE_I_OPTIMA = {
    Instance(DatasetKind.CIFAR10, AttackKind.CLEAN): 94.6,
    Instance(DatasetKind.CIFAR10, AttackKind.FGSM): 69.2,
    Instance(DatasetKind.CIFAR10, AttackKind.PGD): 58.8,
    Instance(DatasetKind.CIFAR10, AttackKind.APGD): 54.0,
    Instance(DatasetKind.CIFAR10, AttackKind.SQUARE): 73.6,
    Instance(DatasetKind.CIFAR100, AttackKind.CLEAN): 73.6,
    Instance(DatasetKind.CIFAR100, AttackKind.FGSM): 29.4,
    Instance(DatasetKind.CIFAR100, AttackKind.PGD): 29.8,
    Instance(DatasetKind.CIFAR100, AttackKind.APGD): 26.3,
    Instance(DatasetKind.CIFAR100, AttackKind.SQUARE): 40.4,
}


class FormatError(ValueError):
    """Benchmark file cannot be read as a complete table."""


class BadHeader(FormatError):
    pass


class MissingEntry(FormatError):
    def __init__(self, index: int, dataset: DatasetKind | None = None, attack: AttackKind | None = None):
        where = f"genotype index {index}"
        if dataset is not None:
            where += f", {dataset.value}/{attack.value}"
        super().__init__(f"missing entry for {where}")
        self.index, self.dataset, self.attack = index, dataset, attack


class DuplicateEntry(FormatError):
    def __init__(self, index: int):
        super().__init__(f"duplicate row for genotype index {index}")
        self.index = index


class OutOfRangeAccuracy(FormatError):
    def __init__(self, index: int, column: str, value: float):
        super().__init__(f"accuracy {value} at index {index}, column {column} is outside [0, 100]")
        self.index, self.column, self.value = index, column, value


class BudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class RealSource:
    path: str


@dataclass(frozen=True)
class SurrogateSource:
    seed: int
    ruggedness: float


@dataclass(frozen=True, eq=False)
class BenchmarkTable:
    """Read-only accuracy lookup of shape (15625, 2, 5)."""

    source: RealSource | SurrogateSource
    accuracies: np.ndarray

    def __post_init__(self):
        acc = np.array(self.accuracies, dtype=np.float64)
        if acc.shape != (NUM_GENOTYPES, len(DatasetKind), len(AttackKind)):
            raise ValueError(f"accuracy array has shape {acc.shape}")
        if not np.all((acc >= 0.0) & (acc <= 100.0)):
            raise ValueError("accuracies must lie in [0, 100]")
        acc.flags.writeable = False
        object.__setattr__(self, "accuracies", acc)

    def __eq__(self, other):
        if not isinstance(other, BenchmarkTable):
            return NotImplemented
        return np.array_equal(self.accuracies, other.accuracies)

    __hash__ = None

    def column(self, dataset: DatasetKind, attack: AttackKind) -> np.ndarray:
        return self.accuracies[:, _dataset_pos(dataset), _attack_pos(attack)]

    def lookup(self, g: Genotype, dataset: DatasetKind, attack: AttackKind) -> float:
        return float(self.accuracies[genotype_to_index(g), _dataset_pos(dataset), _attack_pos(attack)])


def _dataset_pos(d: DatasetKind) -> int:
    return list(DatasetKind).index(d)


def _attack_pos(a: AttackKind) -> int:
    return list(AttackKind).index(a)


@dataclass
class FitnessCounter:
    budget: int
    used: int = 0

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be non-negative")

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    @property
    def exhausted(self) -> bool:
        return self.used >= self.budget


def evaluate(
    table: BenchmarkTable,
    g: Genotype,
    dataset: DatasetKind,
    attack: AttackKind,
    counter: FitnessCounter,
) -> float:
    """Look up one accuracy and charge one fitness evaluation."""
    if counter.used >= counter.budget:
        raise BudgetExhausted(f"budget of {counter.budget} evaluations exhausted")
    acc = table.lookup(g, dataset, attack)
    counter.used += 1
    return acc


def table_optimum(table: BenchmarkTable, dataset: DatasetKind, attack: AttackKind) -> tuple[Genotype, float]:
    col = table.column(dataset, attack)
    # argmax returns the first occurrence, i.e. the lowest genotype index
    i = int(np.argmax(col))
    return genotype_from_index(i), float(col[i])


# ---------------------------------------------------------------------------
# surrogate landscapes

SURROGATE_DECIMALS = 4


@dataclass(frozen=True)
class SurrogateParams:
    """Per-instance ingredients of a surrogate column."""

    base: float
    utilities: np.ndarray  # (edges, operations)
    interactions: np.ndarray  # (pairs, operations, operations)


EDGE_PAIRS = tuple(itertools.combinations(range(NUM_EDGES), 2))


def surrogate_params(seed: int, instance: Instance) -> SurrogateParams:
    d, a = _instance_pos(instance)
    rng = np.random.default_rng([seed, d, a])
    target = TABLE_I_OPTIMA[instance]
    scale = rng.uniform(1.0, 3.0)
    utilities = rng.uniform(0.0, scale, size=(NUM_EDGES, NUM_OPERATIONS))
    base = target - utilities.max(axis=1).sum()
    interactions = rng.normal(0.0, scale / np.sqrt(len(EDGE_PAIRS)), size=(len(EDGE_PAIRS), NUM_OPERATIONS, NUM_OPERATIONS))
    return SurrogateParams(base=float(base), utilities=utilities, interactions=interactions)


def surrogate_column(params: SurrogateParams, ruggedness: float, genes: np.ndarray | None = None) -> np.ndarray:
    if genes is None:
        genes = all_genes_array()
    acc = np.full(len(genes), params.base)
    for e in range(NUM_EDGES):
        acc += params.utilities[e, genes[:, e]]
    if ruggedness:
        noise = np.zeros(len(genes))
        for p, (e, f) in enumerate(EDGE_PAIRS):
            noise += params.interactions[p, genes[:, e], genes[:, f]]
        acc += ruggedness * noise
    return np.round(np.clip(acc, 0.0, 100.0), SURROGATE_DECIMALS)


def generate_surrogate(seed: int, ruggedness: float) -> BenchmarkTable:
    """Seeded synthetic table.

    Each column is ``base + sum of per-edge utilities + ruggedness * pairwise
    interaction noise``, clamped to [0, 100] and rounded to 4 decimals so the
    table survives a CSV round trip bit-exactly. With ``ruggedness == 0`` the
    landscape is edge-separable.
    """
    if not 0.0 <= ruggedness <= 1.0:
        raise ValueError(f"ruggedness must lie in [0, 1], got {ruggedness}")
    genes = all_genes_array()
    acc = np.empty((NUM_GENOTYPES, len(DatasetKind), len(AttackKind)))
    for inst in ALL_INSTANCES:
        d, a = _instance_pos(inst)
        acc[:, d, a] = surrogate_column(surrogate_params(seed, inst), ruggedness, genes)
    return BenchmarkTable(SurrogateSource(seed, ruggedness), acc)


# ---------------------------------------------------------------------------
# CSV format


def _format_accuracy(v: float) -> str:
    s = repr(float(v))
    if "e" in s or "E" in s:
        s = f"{v:.{SURROGATE_DECIMALS + 6}f}"
    return s


def iter_table_rows(table: BenchmarkTable) -> Iterator[str]:
    yield CSV_HEADER
    flat = table.accuracies.reshape(NUM_GENOTYPES, -1)
    for i in range(NUM_GENOTYPES):
        yield f"{i}," + ",".join(_format_accuracy(v) for v in flat[i])


def save_table(table: BenchmarkTable, path: str | Path) -> None:
    with open(path, "w", newline="\n") as fh:
        for line in iter_table_rows(table):
            fh.write(line + "\n")


def load_table(path: str | Path) -> BenchmarkTable:
    """Read and validate a benchmark CSV; the table must be complete."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(f"cannot open benchmark file {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or ",".join(c.strip() for c in first) != CSV_HEADER:
            raise BadHeader(f"first line must be {CSV_HEADER!r}")
        acc = np.full((NUM_GENOTYPES, len(CSV_COLUMNS)), np.nan)
        seen = np.zeros(NUM_GENOTYPES, dtype=bool)
        last = -1
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                idx = int(row[0])
            except ValueError:
                raise FormatError(f"line {lineno}: bad genotype index {row[0]!r}") from None
            if not 0 <= idx < NUM_GENOTYPES:
                raise FormatError(f"line {lineno}: genotype index {idx} out of range")
            if seen[idx]:
                raise DuplicateEntry(idx)
            if idx < last:
                raise FormatError(f"line {lineno}: rows must be in ascending index order")
            last = idx
            cells = row[1:]
            for k, name in enumerate(CSV_COLUMNS):
                if k >= len(cells) or not cells[k].strip():
                    inst = ALL_INSTANCES[k]
                    raise MissingEntry(idx, inst.dataset, inst.attack)
                try:
                    v = float(cells[k])
                except ValueError:
                    raise FormatError(f"line {lineno}: bad accuracy {cells[k]!r}") from None
                if not 0.0 <= v <= 100.0:
                    raise OutOfRangeAccuracy(idx, name, v)
                acc[idx, k] = v
            if len(cells) > len(CSV_COLUMNS):
                raise FormatError(f"line {lineno}: {len(cells)} accuracy cells, expected {len(CSV_COLUMNS)}")
            seen[idx] = True

    missing = np.flatnonzero(~seen)
    if missing.size:
        raise MissingEntry(int(missing[0]))
    shaped = acc.reshape(NUM_GENOTYPES, len(DatasetKind), len(AttackKind))
    return BenchmarkTable(RealSource(str(path)), shaped)
