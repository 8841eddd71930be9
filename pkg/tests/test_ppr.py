# tests/test_ppr.py
import itertools

import numpy as np
import pytest

from sparkppr.services.code import SystematicCode, spark_subset_search, spark_via_codewords
from sparkppr.services.design import search_max_spark, select_mslc
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix
from sparkppr.services.ppr import (
    NoSolutionWithinCap,
    PprError,
    ReceptionState,
    compute_syndrome,
    decode,
    l0_solve_column,
    repair,
    restrict_parity,
    syndrome_from_errors,
)
from sparkppr.services.relay import CrcSpec


def _reception(code: SystematicCode, U: FqMatrix, errors: dict):
    """Y = G·U + E; строки с ошибками попадают в R̄, CRC считается по чистым строкам."""
    q = code.field.q
    X = code.generator() @ U
    E = np.zeros(X.shape, dtype=np.int64)
    for n, row in errors.items():
        E[n] = row
    Y = FqMatrix(code.field, (X.data + E) % q)
    crc_spec = CrcSpec(q)
    crcs = tuple(crc_spec.compute(X.data[n]) for n in range(code.N))
    Rbar = tuple(sorted(errors))
    R = tuple(n for n in range(code.N) if n not in errors)
    return X, ReceptionState(code, Y, R, Rbar, crcs, crc_spec)


def _brute_force(H_t: FqMatrix, s: np.ndarray):
    """Минимальный вес и число решений этого веса полным перебором."""
    q = H_t.q
    best, count = None, 0
    for w in itertools.product(range(q), repeat=H_t.cols):
        w = np.array(w, dtype=np.int64)
        if np.array_equal((H_t.data @ w) % q, s):
            weight = int(np.count_nonzero(w))
            if best is None or weight < best:
                best, count = weight, 1
            elif weight == best:
                count += 1
    return best, count


# --- Синдром ---

def test_syndrome_of_codeword_is_zero(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 6, rng)
    assert compute_syndrome(hamming_code, hamming_code.generator() @ U).is_zero()


@pytest.mark.parametrize("q", [2, 3])
def test_both_syndrome_forms_agree(q):
    rng = np.random.default_rng([q, 1])
    f = FieldSpec(q)
    for _ in range(50):
        code = SystematicCode.from_p(FqMatrix.random(f, 4, 5, rng))
        U = FqMatrix.random(f, 5, 7, rng)
        rows = sorted(rng.choice(code.N, size=int(rng.integers(1, code.N)), replace=False).tolist())
        errors = {n: rng.integers(0, q, size=7) for n in rows}
        _, state = _reception(code, U, errors)
        E_Rbar = FqMatrix(f, np.stack([errors[n] for n in rows]))
        assert compute_syndrome(code, state.Y) == syndrome_from_errors(code, rows, E_Rbar)


def test_syndrome_rejects_wrong_row_count(hamming_code):
    with pytest.raises(PprError):
        compute_syndrome(hamming_code, FqMatrix.zeros(hamming_code.field, 6, 2))


def test_restrict_parity(hamming_code):
    H = hamming_code.parity_check()
    assert restrict_parity(hamming_code, [4, 1]) == H.take_rows([4, 1])
    assert restrict_parity(hamming_code, []).shape == (0, 3)
    with pytest.raises(PprError):
        restrict_parity(hamming_code, [7])


# --- Поиск разреженного решения ---

def test_zero_syndrome_column(hamming_code):
    H_t = hamming_code.parity_check().T
    solution = l0_solve_column(H_t, np.zeros(3, dtype=np.int64))
    assert solution.weight == 0
    assert not solution.w.any()
    assert solution.certified_unique


def test_single_error_is_recovered_and_certified(hamming_code):
    H_t = hamming_code.parity_check().T
    for j in range(7):
        solution = l0_solve_column(H_t, H_t.data[:, j])
        assert solution.weight == 1
        assert np.flatnonzero(solution.w).tolist() == [j]
        assert solution.certified_unique
        assert not solution.ambiguous


def test_syndrome_outside_span(hamming_code):
    H_t = restrict_parity(hamming_code, [0]).T
    with pytest.raises(NoSolutionWithinCap) as info:
        l0_solve_column(H_t, np.array([1, 0, 0]))
    assert not info.value.cap_hit


def test_weight_limit(gf2):
    H_t = FqMatrix.identity(gf2, 4)
    s = np.array([1, 1, 1, 0])
    with pytest.raises(NoSolutionWithinCap):
        l0_solve_column(H_t, s, w_max=2)
    assert l0_solve_column(H_t, s, w_max=3).weight == 3
    with pytest.raises(PprError):
        l0_solve_column(H_t, s, w_max=5)


def test_work_cap_is_reported(gf2):
    H_t = FqMatrix.identity(gf2, 10)
    s = np.array([1, 1, 1] + [0] * 7)
    with pytest.raises(NoSolutionWithinCap) as info:
        l0_solve_column(H_t, s, work_cap=5)
    assert info.value.cap_hit


def test_ambiguous_weight_two_solutions(gf2):
    # столбцы 0+1 и 2+3 дают один и тот же синдром
    H_t = FqMatrix.from_rows(gf2, [[1, 0, 1, 0], [0, 1, 0, 1]])
    solution = l0_solve_column(H_t, np.array([1, 1]))
    assert solution.weight == 2
    assert np.flatnonzero(solution.w).tolist() == [0, 1]
    assert not solution.certified_unique
    assert solution.ambiguous


@pytest.mark.parametrize("q, max_n", [(2, 10), (3, 6)])
def test_solution_is_minimal_and_flags_match_brute_force(q, max_n):
    rng = np.random.default_rng([q, 42])
    f = FieldSpec(q)
    for _ in range(60):
        n = int(rng.integers(1, max_n + 1))
        rows = int(rng.integers(1, 7))
        H_t = FqMatrix.random(f, rows, n, rng)
        w0 = rng.integers(0, q, size=n) * (rng.random(n) < 0.4)
        s = (H_t.data @ w0) % q
        solution = l0_solve_column(H_t, s)
        best, count = _brute_force(H_t, s)
        assert np.array_equal((H_t.data @ solution.w) % q, s)
        assert solution.weight == best == int(np.count_nonzero(solution.w))
        if solution.certified_unique:
            assert count == 1
        else:
            assert solution.ambiguous == (count > 1)


def test_planted_sparse_errors_are_recovered(gf2):
    rng = np.random.default_rng(2024)
    recovered = 0
    for _ in range(100):
        H_t = FqMatrix.random(gf2, 8, 12, rng)
        spark = spark_subset_search(H_t)
        t_max = (spark.value - 1) // 2 if spark.is_exact else 6
        if t_max < 1:
            continue
        t = int(rng.integers(1, t_max + 1))
        w = np.zeros(12, dtype=np.int64)
        w[rng.choice(12, size=t, replace=False)] = 1
        solution = l0_solve_column(H_t, (H_t.data @ w) % 2)
        assert np.array_equal(solution.w, w)
        assert solution.certified_unique
        recovered += 1
    assert recovered > 0


# --- Исправление и декодирование ---

HAMMING_ERRORS = {
    3: [1, 0, 0, 0, 0, 1, 0, 0],
    4: [0, 1, 0, 0, 0, 0, 0, 0],
    5: [0, 0, 1, 0, 0, 0, 1, 0],
    6: [0, 0, 0, 1, 0, 0, 0, 0],
}


def test_repair_fixes_rows_with_sparse_columns(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 8, rng)
    X, state = _reception(hamming_code, U, HAMMING_ERRORS)
    assert state.crc_consistent()
    new_state, outcome = repair(state, compute_syndrome(hamming_code, state.Y), truth=X)
    assert outcome.nu == 4
    assert outcome.repaired_indices == (3, 4, 5, 6)
    assert outcome.false_accepts == 0
    assert outcome.all_used_certified
    assert outcome.solved_mask == outcome.certified_mask == 0xFF
    assert new_state.R == tuple(range(7))
    assert new_state.Rbar == ()
    assert new_state.Y == X


def test_decode_rescues_rank_deficient_reception(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 8, rng)
    X, state = _reception(hamming_code, U, HAMMING_ERRORS)
    plain = decode(state, use_sd=False)
    assert not plain.success
    assert plain.failure_reason == "rank"
    assert plain.rank_before == 3

    report = decode(state, truth=X)
    assert report.success
    assert report.sd_invoked and report.sd_changed_outcome
    assert report.rank_before == 3 and report.rank_after == 4
    assert report.nu == 4
    assert report.U == U
    assert all(report.column_certified)


def test_decode_without_corruption(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 5, rng)
    _, state = _reception(hamming_code, U, {})
    report = decode(state)
    assert report.success
    assert not report.sd_invoked
    assert report.U == U


def test_decode_with_full_rank_skips_repair(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 5, rng)
    _, state = _reception(hamming_code, U, {5: [1, 0, 0, 0, 0], 6: [0, 1, 1, 0, 0]})
    report = decode(state)
    assert report.success and not report.sd_invoked
    assert report.U == U


def test_repair_with_empty_rbar_is_noop(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 3, rng)
    _, state = _reception(hamming_code, U, {})
    new_state, outcome = repair(state, compute_syndrome(hamming_code, state.Y))
    assert new_state is state
    assert outcome.nu == 0


def test_repair_rejects_wrong_syndrome_shape(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 3, rng)
    _, state = _reception(hamming_code, U, {6: [1, 0, 0]})
    with pytest.raises(PprError):
        repair(state, FqMatrix.zeros(hamming_code.field, 3, 4))


def test_reception_state_requires_partition(rng, hamming_code):
    U = FqMatrix.random(hamming_code.field, 4, 3, rng)
    _, state = _reception(hamming_code, U, {6: [1, 0, 0]})
    with pytest.raises(PprError):
        ReceptionState(hamming_code, state.Y, (0, 1, 2, 3, 4, 5, 6), (6,), state.crcs, state.crc_spec)
    with pytest.raises(PprError):
        ReceptionState(hamming_code, state.Y, (0, 1, 2, 3, 4), (6,), state.crcs, state.crc_spec)


def test_zero_syndrome_with_corrupted_rows_repairs_nothing(rng, hamming_code):
    # ошибки на носителе кодового слова не видны в синдроме
    witness = spark_subset_search(hamming_code.parity_check().T).witness
    v = np.array([1, 0, 1, 1, 0, 0, 1, 0])
    U = FqMatrix.random(hamming_code.field, 4, 8, rng)
    X, state = _reception(hamming_code, U, {n: v for n in witness})
    S = compute_syndrome(hamming_code, state.Y)
    assert S.is_zero()
    new_state, outcome = repair(state, S, truth=X)
    assert outcome.nu == 0
    assert all(sol.weight == 0 for sol in outcome.per_column)
    assert new_state.Rbar == state.Rbar == witness
    assert new_state.Y == state.Y


def test_scan_block_size_does_not_change_solutions(monkeypatch):
    rng = np.random.default_rng(99)
    cases = []
    for _ in range(40):
        f = FieldSpec(int(rng.choice([2, 3])))
        n = int(rng.integers(1, 9))
        H_t = FqMatrix.random(f, int(rng.integers(1, 6)), n, rng)
        w0 = rng.integers(0, f.q, size=n) * (rng.random(n) < 0.4)
        cases.append((H_t, (H_t.data @ w0) % f.q))
    expected = [l0_solve_column(H_t, s) for H_t, s in cases]
    monkeypatch.setattr("sparkppr.services.code.SCAN_BLOCK", 2)
    monkeypatch.setattr("sparkppr.services.code.SCAN_CELLS", 16)
    for (H_t, s), before in zip(cases, expected):
        after = l0_solve_column(H_t, s)
        assert np.array_equal(after.w, before.w)
        assert (after.weight, after.certified_unique, after.ambiguous, after.candidates) == (
            before.weight, before.certified_unique, before.ambiguous, before.candidates,
        )
    with pytest.raises(NoSolutionWithinCap) as info:
        l0_solve_column(FqMatrix.identity(FieldSpec(2), 10), np.array([1, 1, 1] + [0] * 7), work_cap=5)
    assert info.value.cap_hit
    assert info.value.candidates == 6


def _binary_minimum(H_t: FqMatrix, s: np.ndarray):
    """Минимальный вес и число решений этого веса по всем 2^n двоичным векторам."""
    n = H_t.cols
    vectors = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    solutions = vectors[np.all((vectors @ H_t.data.T) % 2 == s, axis=1)]
    weights = solutions.sum(axis=1)
    best = int(weights.min())
    return best, int(np.count_nonzero(weights == best))


def test_minimality_over_restricted_parity_checks():
    rng = np.random.default_rng(500)
    f = FieldSpec(2)
    for _ in range(500):
        code = SystematicCode.from_p(FqMatrix.random(f, int(rng.integers(1, 7)), int(rng.integers(1, 9)), rng))
        size = int(rng.integers(1, min(10, code.N) + 1))
        Rbar = sorted(rng.choice(code.N, size=size, replace=False).tolist())
        H_t = restrict_parity(code, Rbar).T
        w0 = (rng.random(size) < 0.3).astype(np.int64)
        s = (H_t.data @ w0) % 2
        solution = l0_solve_column(H_t, s)
        best, count = _binary_minimum(H_t, s)
        assert np.array_equal((H_t.data @ solution.w) % 2, s)
        assert solution.weight == best
        if solution.certified_unique:
            assert count == 1
        else:
            assert solution.ambiguous == (count > 1)


# --- Коды каталога со spark 3, 4 и 5 ---

@pytest.fixture(scope="module")
def catalog_codes():
    f = FieldSpec(2)
    codes = {}
    for K, epsilon in [(4, 3), (3, 4), (2, 6)]:
        code = SystematicCode.from_p(select_mslc(search_max_spark(f, K, epsilon, budget=1000, seed=0)))
        codes[spark_via_codewords(code).value] = code
    assert sorted(codes) == [3, 4, 5]
    return codes


def _planted_errors(rng, code: SystematicCode, spark: int, L: int, size: int):
    """Ошибки в строках R̄, в каждом столбце меньше spark/2 ненулевых."""
    Rbar = sorted(rng.choice(code.N, size=size, replace=False).tolist())
    E = np.zeros((code.N, L), dtype=np.int64)
    for l in range(L):
        t = min(int(rng.integers(0, (spark - 1) // 2 + 1)), size)
        E[rng.choice(Rbar, size=t, replace=False), l] = 1
    return {n: E[n] for n in Rbar}


def test_planted_errors_below_half_spark_are_repaired_exactly(catalog_codes):
    rng = np.random.default_rng(1000)
    sparks = sorted(catalog_codes)
    L = 6
    for i in range(1000):
        spark = sparks[i % len(sparks)]
        code = catalog_codes[spark]
        errors = _planted_errors(rng, code, spark, L, int(rng.integers(1, code.N + 1)))
        Rbar = sorted(errors)
        U = FqMatrix.random(code.field, code.K, L, rng)
        X, state = _reception(code, U, errors)
        new_state, outcome = repair(state, compute_syndrome(code, state.Y), truth=X)
        E_Rbar = np.stack([errors[n] for n in Rbar])
        for l, solution in enumerate(outcome.per_column):
            assert np.array_equal(solution.w, E_Rbar[:, l])
            assert solution.certified_unique
        assert outcome.nu == len(Rbar)
        assert outcome.false_accepts == 0
        assert new_state.Y == X


def test_extra_clean_row_never_breaks_plain_decoding():
    rng = np.random.default_rng(77)
    f = FieldSpec(2)
    for _ in range(300):
        code = SystematicCode.from_p(FqMatrix.random(f, int(rng.integers(1, 6)), int(rng.integers(1, 6)), rng))
        U = FqMatrix.random(f, code.K, 4, rng)
        rows = rng.choice(code.N, size=int(rng.integers(1, code.N + 1)), replace=False).tolist()
        errors = {n: np.eye(4, dtype=np.int64)[int(rng.integers(0, 4))] for n in rows}
        _, state = _reception(code, U, errors)
        cleaned = dict(errors)
        del cleaned[rows[0]]
        _, better = _reception(code, U, cleaned)
        if decode(state, use_sd=False).success:
            assert decode(better, use_sd=False).success


def test_extra_clean_row_never_breaks_sd_decoding(catalog_codes):
    rng = np.random.default_rng(78)
    for spark, code in sorted(catalog_codes.items()):
        for _ in range(100):
            errors = _planted_errors(rng, code, spark, 5, int(rng.integers(2, code.N + 1)))
            U = FqMatrix.random(code.field, code.K, 5, rng)
            _, state = _reception(code, U, errors)
            report = decode(state)
            assert report.success
            for n in errors:
                cleaned = {m: row for m, row in errors.items() if m != n}
                _, better = _reception(code, U, cleaned)
                assert decode(better).success
