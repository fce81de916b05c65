"""Cell genotypes of the NAS-Bench-201 style search space.

A cell has 4 nodes and 6 directed edges; each edge carries one of 5
operations. Edges are numbered in (source, target) lexicographic order::

    0: 0->1   1: 0->2   2: 1->2   3: 0->3   4: 1->3   5: 2->3

which is the order used in benchmark files (``edge_order=01;02;12;03;13;23``).
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

NUM_EDGES = 6
NUM_OPERATIONS = 5
NUM_GENOTYPES = NUM_OPERATIONS**NUM_EDGES

EDGES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
EDGE_ORDER_TAG = ";".join(f"{s}{t}" for s, t in EDGES)


class OperationKind(enum.IntEnum):
    CONV_1X1 = 0
    CONV_3X3 = 1
    AVG_POOL_3X3 = 2
    SKIP_CONNECT = 3
    ZEROIZE = 4

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]


_DISPLAY_NAMES = {
    OperationKind.CONV_1X1: "nor_conv_1x1",
    OperationKind.CONV_3X3: "nor_conv_3x3",
    OperationKind.AVG_POOL_3X3: "avg_pool_3x3",
    OperationKind.SKIP_CONNECT: "skip_connect",
    OperationKind.ZEROIZE: "none",
}


class ValidationError(ValueError):
    """Raised when an index sequence is not a valid genotype."""


class WrongLength(ValidationError):
    def __init__(self, n: int):
        super().__init__(f"expected {NUM_EDGES} genes, got {n}")
        self.n = n


class OutOfRange(ValidationError):
    def __init__(self, position: int, value):
        super().__init__(
            f"gene {position} has value {value!r}, expected an integer in [0, {NUM_OPERATIONS})"
        )
        self.position = position
        self.value = value


@dataclass(frozen=True, order=True)
class Genotype:
    """Six operation indices, one per edge, in canonical edge order."""

    genes: tuple[int, ...]

    def __post_init__(self):
        genes = self.genes
        if len(genes) != NUM_EDGES:
            raise WrongLength(len(genes))
        for pos, v in enumerate(genes):
            # bool is an int subclass but never a meaningful gene
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise OutOfRange(pos, v)
            if not 0 <= v < NUM_OPERATIONS:
                raise OutOfRange(pos, v)
        object.__setattr__(self, "genes", tuple(int(v) for v in genes))

    def __iter__(self):
        return iter(self.genes)

    def __len__(self):
        return NUM_EDGES

    def __getitem__(self, i):
        return self.genes[i]

    def __str__(self):
        return format_genotype(self)

    @property
    def operations(self) -> tuple[OperationKind, ...]:
        return tuple(OperationKind(v) for v in self.genes)

    @property
    def index(self) -> int:
        return genotype_to_index(self)

    @classmethod
    def from_index(cls, index: int) -> "Genotype":
        return genotype_from_index(index)


def genotype_from_indices(indices: Sequence[int]) -> Genotype:
    return Genotype(tuple(indices))


def genotype_to_index(g: Genotype) -> int:
    """Base-5 positional key, gene 0 most significant."""
    idx = 0
    for v in g.genes:
        idx = idx * NUM_OPERATIONS + v
    return idx


def genotype_from_index(index: int) -> Genotype:
    if not 0 <= index < NUM_GENOTYPES:
        raise ValueError(f"genotype index {index} outside [0, {NUM_GENOTYPES})")
    genes = []
    for _ in range(NUM_EDGES):
        index, r = divmod(index, NUM_OPERATIONS)
        genes.append(r)
    return Genotype(tuple(reversed(genes)))


def enumerate_all() -> Iterator[Genotype]:
    """All 15,625 genotypes in ascending index order."""
    for i in range(NUM_GENOTYPES):
        yield genotype_from_index(i)


def all_genes_array() -> np.ndarray:
    """(15625, 6) int array; row i holds the genes of genotype index i."""
    idx = np.arange(NUM_GENOTYPES)
    powers = NUM_OPERATIONS ** np.arange(NUM_EDGES - 1, -1, -1)
    return (idx[:, None] // powers[None, :]) % NUM_OPERATIONS


def random_genotype(rng: np.random.Generator) -> Genotype:
    return Genotype(tuple(int(v) for v in rng.integers(0, NUM_OPERATIONS, size=NUM_EDGES)))


def hamming_distance(a: Genotype, b: Genotype) -> int:
    return sum(x != y for x, y in zip(a.genes, b.genes))


def format_genotype(g: Genotype) -> str:
    return "[" + ",".join(str(v) for v in g.genes) + "]"


_TEXT_FORM = re.compile(r"^\s*\[\s*(\d+(?:\s*,\s*\d+)*)\s*\]\s*$")


def parse_genotype(text: str) -> Genotype:
    """Strict inverse of :func:`format_genotype` (spaces allowed)."""
    m = _TEXT_FORM.match(text)
    if m is None:
        raise ValidationError(f"not a bracketed integer list: {text!r}")
    return genotype_from_indices([int(v) for v in m.group(1).split(",")])
