import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llmo.search_space import (
    NUM_GENOTYPES,
    Genotype,
    OperationKind,
    OutOfRange,
    ValidationError,
    WrongLength,
    enumerate_all,
    format_genotype,
    genotype_from_index,
    genotype_from_indices,
    genotype_to_index,
    hamming_distance,
    parse_genotype,
    random_genotype,
)

genes = st.lists(st.integers(0, 4), min_size=6, max_size=6)
genotypes = genes.map(genotype_from_indices)


def test_operation_kind_bijection():
    assert len(OperationKind) == 5
    assert sorted(int(op) for op in OperationKind) == [0, 1, 2, 3, 4]
    for op in OperationKind:
        assert OperationKind(int(op)) is op
        assert op.display_name


def test_from_indices_examples():
    assert genotype_from_indices([0] * 6).operations == (OperationKind.CONV_1X1,) * 6
    assert genotype_from_indices([3, 1, 0, 4, 2, 2]).genes == (3, 1, 0, 4, 2, 2)
    with pytest.raises(OutOfRange) as exc:
        genotype_from_indices([5, 0, 0, 0, 0, 0])
    assert (exc.value.position, exc.value.value) == (0, 5)


@pytest.mark.parametrize("bad", [[], [0] * 5, [0] * 7])
def test_wrong_length(bad):
    with pytest.raises(WrongLength) as exc:
        genotype_from_indices(bad)
    assert exc.value.n == len(bad)


@pytest.mark.parametrize("bad", [[0, 0, 0, 0, 0, -1], [0, 0, 1.5, 0, 0, 0], [0, 0, 0, True, 0, 0]])
def test_rejects_non_gene_values(bad):
    with pytest.raises(OutOfRange):
        genotype_from_indices(bad)


def test_index_examples():
    assert genotype_to_index(genotype_from_indices([0] * 6)) == 0
    assert genotype_to_index(genotype_from_indices([0, 0, 0, 0, 0, 1])) == 1
    # 4 * (5^0 + ... + 5^5)
    assert genotype_to_index(genotype_from_indices([4] * 6)) == 4 * sum(5**k for k in range(6)) == 15624


@given(genes)
def test_index_round_trip(values):
    g = genotype_from_indices(values)
    assert list(genotype_from_index(genotype_to_index(g)).genes) == values


def test_enumerate_all():
    items = list(enumerate_all())
    assert len(items) == 15625 == NUM_GENOTYPES
    assert items[0].genes == (0,) * 6
    assert len(set(items)) == 15625
    assert [genotype_to_index(g) for g in items] == list(range(15625))


def test_random_genotype_deterministic():
    a = random_genotype(np.random.default_rng(11))
    b = random_genotype(np.random.default_rng(11))
    assert a == b


def test_random_genotype_uniform():
    rng = np.random.default_rng(2024)
    draws = np.array([random_genotype(rng).genes for _ in range(50_000)])
    for pos in range(6):
        freq = np.bincount(draws[:, pos], minlength=5) / len(draws)
        assert np.all(np.abs(freq - 0.2) <= 0.006), (pos, freq)


def test_hamming_examples():
    g = genotype_from_indices([3, 1, 0, 4, 2, 2])
    assert hamming_distance(g, g) == 0
    assert hamming_distance(genotype_from_indices([0] * 6), genotype_from_indices([1] * 6)) == 6
    assert hamming_distance(g, genotype_from_indices([3, 1, 1, 4, 2, 0])) == 2


@given(genotypes, genotypes, genotypes)
def test_hamming_is_metric(a, b, c):
    assert hamming_distance(a, b) == hamming_distance(b, a)
    assert (hamming_distance(a, b) == 0) == (a == b)
    assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)


@given(genotypes)
def test_text_form_round_trip(g):
    text = format_genotype(g)
    assert text.startswith("[") and " " not in text
    assert parse_genotype(text) == g
    assert parse_genotype(text.replace(",", " , ")) == g


def test_parse_genotype_rejects_garbage():
    with pytest.raises(ValidationError):
        parse_genotype("3,1,0,4,2,2")
    with pytest.raises(OutOfRange):
        parse_genotype("[3,1,0,4,2,9]")


def test_genotype_is_hashable_and_immutable():
    g = Genotype((1, 2, 3, 4, 0, 1))
    with pytest.raises(AttributeError):
        g.genes = (0,) * 6
    assert {g: 1}[Genotype((1, 2, 3, 4, 0, 1))] == 1
