# tests/test_code.py
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from sparkppr.services.code import (
    CodeError,
    CodewordWeights,
    SparkValue,
    SystematicCode,
    ThresholdSparkOracle,
    balance_deviation,
    build_generator,
    build_parity_check,
    poe_matrix,
    poe_set,
    random_rlc_generator,
    spark_subset_search,
    spark_via_codewords,
)
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix, rank


def _random_code(rng, q, K_max, eps_max):
    f = FieldSpec(q)
    K = int(rng.integers(1, K_max + 1))
    eps = int(rng.integers(1, eps_max + 1))
    return SystematicCode.from_p(FqMatrix.random(f, eps, K, rng))


# --- Генератор и проверочная матрица ---

def test_generator_is_systematic(hamming_code):
    G = build_generator(hamming_code)
    assert G.shape == (7, 4)
    assert G.take_rows(range(4)) == FqMatrix.identity(hamming_code.field, 4)
    assert G.take_rows(range(4, 7)) == hamming_code.P


def test_parity_check_uses_negated_p(gf3):
    P = FqMatrix.from_rows(gf3, [[1, 2]])
    H = build_parity_check(SystematicCode.from_p(P))
    assert H.shape == (3, 1)
    assert H.data.ravel().tolist() == [2, 1, 1]


def test_parity_check_annihilates_generator(rng):
    for _ in range(1000):
        code = _random_code(rng, int(rng.choice([2, 3, 5])), 10, 10)
        assert (build_parity_check(code).T @ build_generator(code)).is_zero()


@pytest.mark.parametrize("K, N", [(0, 3), (3, 3), (4, 2)])
def test_code_rejects_bad_dimensions(gf2, K, N):
    with pytest.raises(CodeError):
        SystematicCode(gf2, K, N, FqMatrix.zeros(gf2, max(N - K, 0), max(K, 0)))


def test_code_rejects_wrong_p_shape(gf2):
    with pytest.raises(CodeError):
        SystematicCode(gf2, 4, 6, FqMatrix.zeros(gf2, 3, 4))


# --- Spark ---

def test_spark_of_worked_example(example_matrix):
    spark = spark_subset_search(example_matrix)
    assert spark.value == 3
    assert spark.witness == (0, 1, 3)
    assert str(spark) == "3"


def test_spark_of_identity_is_unbounded(gf2):
    spark = spark_subset_search(FqMatrix.identity(gf2, 4))
    assert spark.is_unbounded
    assert str(spark) == "unbounded"
    assert spark.exceeds(100)


def test_spark_zero_and_repeated_columns(gf3):
    with_zero = FqMatrix.from_rows(gf3, [[1, 0, 2], [0, 0, 1]])
    assert spark_subset_search(with_zero).value == 1
    assert spark_subset_search(with_zero).witness == (1,)
    # столбец 2 = 2 × столбец 0 над F_3
    scaled = FqMatrix.from_rows(gf3, [[1, 0, 2], [1, 1, 2]])
    assert spark_subset_search(scaled).value == 2
    assert spark_subset_search(scaled).witness == (0, 2)


def test_capped_search_reports_lower_bound(example_matrix):
    spark = spark_subset_search(example_matrix, cap=2)
    assert spark == SparkValue(greater_than=2)
    assert str(spark) == ">2"
    assert spark.exceeds(2)
    with pytest.raises(CodeError):
        spark.exceeds(3)
    assert spark_subset_search(example_matrix, cap=3).value == 3


def test_threshold_oracle_answers_incrementally(example_matrix):
    oracle = ThresholdSparkOracle(example_matrix)
    assert oracle.exceeds(0)
    assert oracle.exceeds(2)
    assert oracle.known is None
    assert not oracle.exceeds(3)
    assert oracle.known.value == 3
    assert not oracle.exceeds(5)


def test_threshold_oracle_on_independent_columns(gf2):
    oracle = ThresholdSparkOracle(FqMatrix.identity(gf2, 3))
    assert oracle.exceeds(10)
    assert oracle.known.is_unbounded


def _spark_by_rank(a: FqMatrix):
    """Эталон: первое по размеру и лексикографически вырожденное подмножество столбцов."""
    for size in range(1, a.cols + 1):
        for subset in itertools.combinations(range(a.cols), size):
            if rank(a.take_cols(subset)) < size:
                return size, subset
    return None, None


@pytest.mark.parametrize("q", [2, 3, 5])
def test_block_scan_matches_rank_reference(monkeypatch, q):
    rng = np.random.default_rng([q, 17])
    f = FieldSpec(q)
    # мелкие блоки, чтобы носители расходились по многим блокам
    monkeypatch.setattr("sparkppr.services.code.SCAN_BLOCK", 3)
    monkeypatch.setattr("sparkppr.services.code.SCAN_CELLS", 40)
    for _ in range(80):
        a = FqMatrix.random(f, int(rng.integers(1, 6)), int(rng.integers(1, 8)), rng)
        value, witness = _spark_by_rank(a)
        spark = spark_subset_search(a)
        if value is None:
            assert spark.is_unbounded
        else:
            assert (spark.value, spark.witness) == (value, witness)


def test_binary_scan_beyond_64_rows(rng, gf2):
    for _ in range(20):
        a = FqMatrix.random(gf2, 6, 9, rng)
        tall = a.vstack(FqMatrix.zeros(gf2, 60, 9))
        assert tall.rows > 64
        assert spark_subset_search(tall) == spark_subset_search(a)
        oracle = ThresholdSparkOracle(tall)
        assert oracle.exceeds(1) == spark_subset_search(a).exceeds(1)


def test_oracle_skips_scan_for_independent_columns(gf3):
    a = FqMatrix.from_rows(gf3, [[1, 0, 2], [0, 1, 1], [0, 0, 1]])
    oracle = ThresholdSparkOracle(a)
    assert oracle.span_rank == 3
    assert oracle.known.is_unbounded
    assert oracle.exceeds(50)


def test_oracle_accepts_known_rank(example_matrix):
    oracle = ThresholdSparkOracle(example_matrix, span_rank=rank(example_matrix))
    assert oracle.span_rank == 3
    assert oracle.known is None
    assert not oracle.exceeds(3)
    assert spark_subset_search(example_matrix, span_rank=3).witness == oracle.known.witness


def test_hamming_code_spark(hamming_code):
    h_t = build_parity_check(hamming_code).T
    assert spark_subset_search(h_t).value == 3
    assert spark_via_codewords(hamming_code).value == 3


def test_codeword_witness_is_dependent_set(hamming_code):
    spark = spark_via_codewords(hamming_code)
    h_t = build_parity_check(hamming_code).T
    assert len(spark.witness) == spark.value
    assert rank(h_t.take_cols(spark.witness)) < spark.value


def test_spark_oracles_agree_on_random_codes(rng):
    for _ in range(200):
        q = int(rng.choice([2, 3]))
        f = FieldSpec(q)
        K = int(rng.integers(1, 7))
        eps = int(rng.integers(1, 12 - K + 1))
        code = SystematicCode.from_p(FqMatrix.random(f, eps, K, rng))
        by_subsets = spark_subset_search(build_parity_check(code).T)
        by_codewords = spark_via_codewords(code)
        # G·u для u = e_j есть слово веса <= eps + 1, поэтому spark всегда конечен
        assert by_subsets.value == by_codewords.value


def test_spark_respects_singleton_bound(rng):
    for _ in range(200):
        code = _random_code(rng, int(rng.choice([2, 3])), 6, 6)
        assert spark_via_codewords(code).value <= code.N - code.K + 1


def test_zero_column_in_p_iff_spark_one(rng):
    for _ in range(200):
        q = int(rng.choice([2, 3]))
        code = _random_code(rng, q, 6, 4)
        spark = spark_subset_search(code.parity_check().T)
        zero_cols = np.flatnonzero(~code.P.data.any(axis=0))
        assert (spark.value == 1) == bool(zero_cols.size)
        if zero_cols.size:
            assert spark.witness == (int(zero_cols[0]),)
        # обнуление столбца P сразу даёт spark 1, иначе spark не меньше 2
        j = int(rng.integers(0, code.K))
        data = code.P.data.copy()
        data[:, j] = 0
        assert spark_subset_search(build_parity_check(SystematicCode.from_p(FqMatrix(code.field, data))).T).value == 1
        data[:, j] = rng.integers(1, q, size=code.epsilon)
        data[:, ~data.any(axis=0)] = 1
        assert spark_subset_search(build_parity_check(SystematicCode.from_p(FqMatrix(code.field, data))).T).value >= 2


def test_codeword_enumeration_bound(gf2):
    code = SystematicCode.from_p(FqMatrix.zeros(gf2, 1, 10))
    with pytest.raises(CodeError):
        spark_via_codewords(code, bound=2 ** 8)


def test_codeword_weights_incremental_update(rng, gf3):
    code = SystematicCode.from_p(FqMatrix.random(gf3, 3, 4, rng))
    weights = CodewordWeights(code)
    for _ in range(30):
        i, j, value = int(rng.integers(0, 3)), int(rng.integers(0, 4)), int(rng.integers(0, 3))
        weights.set_entry(i, j, value)
        fresh = CodewordWeights(SystematicCode.from_p(weights.P))
        assert np.array_equal(weights.weights(), fresh.weights())
    spark, multiplicity = weights.spark_and_multiplicity()
    assert spark == spark_via_codewords(SystematicCode.from_p(weights.P)).value
    assert multiplicity >= 1


# --- Доли элементов ---

def test_poe_and_balance(gf2):
    P1 = FqMatrix.from_rows(gf2, [[1, 1, 1, 0, 1, 0, 1, 0]])
    P2 = FqMatrix.from_rows(gf2, [[1, 1, 1, 0, 1, 1, 1, 0]])
    assert poe_matrix(P1, 1) == Fraction(5, 8)
    assert poe_matrix(P2, 1) == Fraction(3, 4)
    assert balance_deviation(P1) < balance_deviation(P2)
    complement = FqMatrix(gf2, 1 - P1.data)
    assert poe_set([P1, complement], 1) == Fraction(1, 2)
    assert poe_set([P1, complement], 0) == Fraction(1, 2)


def test_poe_set_rejects_mixed_shapes(gf2):
    with pytest.raises(CodeError):
        poe_set([FqMatrix.zeros(gf2, 1, 2), FqMatrix.zeros(gf2, 2, 1)], 0)


@pytest.mark.parametrize("q", [2, 3, 5])
def test_poe_sums_to_one(q, rng):
    f = FieldSpec(q)
    for _ in range(50):
        eps, K = (int(v) for v in rng.integers(1, 6, size=2))
        members = [FqMatrix.random(f, eps, K, rng) for _ in range(int(rng.integers(1, 4)))]
        assert sum(poe_matrix(members[0], d) for d in f.elements()) == 1
        assert sum(poe_set(members, d) for d in f.elements()) == 1



# --- Ранг случайных несистематических генераторов ---

def _full_rank_probability(K: int, r: int) -> float:
    return math.prod(1 - 2.0 ** -(r - i) for i in range(K))


def test_full_rank_formula_by_enumeration(gf2):
    for K, r in [(1, 1), (2, 2), (2, 3), (3, 3)]:
        full = sum(
            rank(FqMatrix(gf2, np.array(bits).reshape(r, K))) == K
            for bits in itertools.product(range(2), repeat=r * K)
        )
        assert full / 2 ** (r * K) == pytest.approx(_full_rank_probability(K, r))


@pytest.mark.parametrize("K, r", [(2, 2), (3, 4), (4, 4), (4, 6), (4, 8)])
def test_random_rlc_rank_probability(gf2, K, r):
    rng = np.random.default_rng([7, K, r])
    trials = 4000
    hits = sum(rank(random_rlc_generator(gf2, r, K, rng)) == K for _ in range(trials))
    p = _full_rank_probability(K, r)
    sigma = math.sqrt(p * (1 - p) / trials)
    assert abs(hits / trials - p) <= 3 * sigma + 1e-9
