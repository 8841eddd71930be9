# sparkppr/services/ppr.py
"""
Декодирование RLC с восстановлением частично искажённых пакетов (PPR):
синдром, поиск самого разреженного вектора ошибок для каждого столбца,
сертификат единственности через spark, исправление строк и финальное решение для U.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sparkppr.core.config import settings
from sparkppr.services.code import (
    ColumnCombiner,
    SystematicCode,
    ThresholdSparkOracle,
    build_parity_check,
    nonzero_value_grid,
)
from sparkppr.services.fqlinalg import FqMatrix, NoUniqueSolution, rank, solve_unique
from sparkppr.services.relay import CrcSpec, Delivery

logger = logging.getLogger(__name__)


class PprError(Exception):
    """Ошибка в данных декодера (размерности, множества индексов)."""
    def __init__(self, message="PPR decoding error", details=None):
        self.message = message
        self.details = details
        super().__init__(self.message)


class NoSolutionWithinCap(Exception):
    """
    Ни один кандидат веса <= w_max не удовлетворяет синдрому.
    cap_hit=True означает, что перебор остановил лимит работы, а не w_max.
    """
    def __init__(self, message: str, cap_hit: bool = False, candidates: int = 0):
        self.message = message
        self.cap_hit = cap_hit
        self.candidates = candidates
        super().__init__(self.message)


@dataclass(frozen=True)
class ReceptionState:
    code: SystematicCode
    Y: FqMatrix
    R: Tuple[int, ...]
    Rbar: Tuple[int, ...]
    crcs: Tuple[int, ...]
    crc_spec: CrcSpec

    def __post_init__(self):
        N = self.code.N
        if self.Y.rows != N or self.Y.q != self.code.field.q:
            raise PprError(f"Y must be {N} rows over F_{self.code.field.q}, got {self.Y.shape} over F_{self.Y.q}")
        if len(self.crcs) != N:
            raise PprError(f"Expected {N} CRC values, got {len(self.crcs)}")
        if set(self.R) & set(self.Rbar) or sorted(self.R + self.Rbar) != list(range(N)):
            raise PprError("R and Rbar must partition the packet indices")
        if list(self.R) != sorted(self.R) or list(self.Rbar) != sorted(self.Rbar):
            raise PprError("R and Rbar must be ordered index sets")

    @classmethod
    def from_delivery(cls, code: SystematicCode, delivery: Delivery, crc_spec: CrcSpec) -> "ReceptionState":
        return cls(code, delivery.Y, delivery.R, delivery.Rbar, delivery.crcs, crc_spec)

    @property
    def N_R(self) -> int:
        return len(self.R)

    @property
    def L(self) -> int:
        return self.Y.cols

    def generator_rows(self) -> FqMatrix:
        """G_R: строки генератора, соответствующие R."""
        return self.code.generator().take_rows(self.R)

    def crc_consistent(self) -> bool:
        """Строки из R проходят CRC, строки из R̄ не проходят."""
        passing = {n for n in range(self.code.N) if self.crc_spec.check(self.Y.data[n], self.crcs[n])}
        return passing == set(self.R)


@dataclass(frozen=True)
class ColumnSolution:
    w: np.ndarray
    weight: int
    certified_unique: bool
    ambiguous: bool
    candidates: int = 0


@dataclass(frozen=True)
class RepairOutcome:
    nu: int
    repaired_indices: Tuple[int, ...]
    # None для столбцов, оставленных без решения
    per_column: Tuple[Optional[ColumnSolution], ...]
    false_accepts: int = 0
    cap_hits: int = 0

    @property
    def solved_mask(self) -> int:
        return sum(1 << l for l, sol in enumerate(self.per_column) if sol is not None)

    @property
    def certified_mask(self) -> int:
        return sum(1 << l for l, sol in enumerate(self.per_column) if sol is not None and sol.certified_unique)

    @property
    def all_used_certified(self) -> bool:
        """Каждое решение столбца, вошедшее в исправленные строки, сертифицировано."""
        return all(sol.certified_unique for sol in self.per_column if sol is not None)


@dataclass(frozen=True)
class DecodeReport:
    success: bool
    sd_invoked: bool
    sd_changed_outcome: bool
    nu: int
    rank_before: int
    rank_after: int
    U: Optional[FqMatrix] = None
    outcome: Optional[RepairOutcome] = None
    # inconsistent: G_R·U = Y_R несовместна (в R попала искажённая строка)
    failure_reason: Optional[str] = None
    column_certified: Tuple[bool, ...] = field(default=())


# --- Синдром ---

def compute_syndrome(code: SystematicCode, Y: FqMatrix) -> FqMatrix:
    """S = H^T·Y размера (N−K)×L; для Y = G·U + E это H^T·E."""
    if Y.rows != code.N:
        raise PprError(f"Y has {Y.rows} rows, the code has N={code.N}")
    return build_parity_check(code).T @ Y


def restrict_parity(code: SystematicCode, Rbar: Sequence[int]) -> FqMatrix:
    """H_R̄: строки H с индексами из R̄ в том же порядке."""
    if any(n < 0 or n >= code.N for n in Rbar):
        raise PprError(f"Rbar has indices outside 0..{code.N - 1}: {list(Rbar)}")
    return build_parity_check(code).take_rows(Rbar)


def syndrome_from_errors(code: SystematicCode, Rbar: Sequence[int], E_Rbar: FqMatrix) -> FqMatrix:
    """(H_R̄)^T·E_R̄ по известным ошибкам; совпадает с compute_syndrome при E_R = 0."""
    return restrict_parity(code, Rbar).T @ E_Rbar


# --- Поиск разреженного решения ---

def _in_column_span(H_t: FqMatrix, s_col: np.ndarray, span_rank: int) -> bool:
    augmented = H_t.hstack(FqMatrix(H_t.field, s_col.reshape(-1, 1)))
    return rank(augmented) == span_rank


def l0_solve_column(
    H_Rbar_T: FqMatrix,
    s_col: np.ndarray,
    w_max: Optional[int] = None,
    work_cap: Optional[int] = None,
    oracle: Optional[ThresholdSparkOracle] = None,
    span_rank: Optional[int] = None,
) -> ColumnSolution:
    """
    Самый разреженный w с (H_R̄)^T·w^T = s_col.

    Перебор весов t = 0, 1, …, w_max; для каждого t носители в лексикографическом
    порядке, ненулевые значения в порядке одометра. Первый найденный w возвращается;
    certified_unique = spark((H_R̄)^T) > 2t. Если сертификата нет, перебор веса t
    продолжается, чтобы узнать, есть ли второе решение того же веса.

    Raises:
        NoSolutionWithinCap: решения веса <= w_max нет или исчерпан лимит work_cap.
    """
    s_col = np.asarray(s_col, dtype=np.int64).ravel()
    n = H_Rbar_T.cols
    q = H_Rbar_T.q
    if s_col.size != H_Rbar_T.rows:
        raise PprError(f"Syndrome column has {s_col.size} entries, expected {H_Rbar_T.rows}")
    w_max = n if w_max is None else w_max
    if w_max > n:
        raise PprError(f"w_max={w_max} exceeds the number of corrupted packets {n}")
    work_cap = work_cap or settings.WORK_CAP
    if span_rank is None:
        span_rank = oracle.span_rank if oracle is not None else rank(H_Rbar_T)
    oracle = oracle or ThresholdSparkOracle(H_Rbar_T, span_rank)

    if not s_col.any():
        return ColumnSolution(np.zeros(n, dtype=np.int64), 0, oracle.exceeds(0), False, 1)
    if not _in_column_span(H_Rbar_T, s_col, span_rank):
        raise NoSolutionWithinCap("Syndrome column is outside the span of (H_Rbar)^T")
    # Базисное решение имеет не больше span_rank ненулевых элементов
    top = min(w_max, span_rank)

    combiner = ColumnCombiner(H_Rbar_T)
    checked = 0
    for t in range(1, top + 1):
        grid = nonzero_value_grid(q, t)
        per_support = grid.shape[1]
        found: Optional[np.ndarray] = None
        certified = False
        ambiguous = False
        stopped = False
        for block in combiner.supports(t, per_support):
            hits = combiner.matches(block, grid, s_col)
            counts = hits.sum(axis=1)
            # Лимит срабатывает после носителя с номером cap_at (если он в этом блоке)
            cap_at = (work_cap - checked) // per_support
            scan = counts if cap_at >= len(block) else counts[: cap_at + 1]
            for i in np.flatnonzero(scan):
                if found is None:
                    found = np.zeros(n, dtype=np.int64)
                    found[block[i]] = grid[:, int(np.argmax(hits[i]))]
                    certified = oracle.exceeds(2 * t)
                    # Два решения веса t дали бы зависимость из <= 2t столбцов
                    if not certified and counts[i] > 1:
                        ambiguous = True
                    if certified or ambiguous:
                        stopped = True
                else:
                    ambiguous = stopped = True
                if stopped:
                    checked += (int(i) + 1) * per_support
                    break
            if stopped:
                break
            if cap_at < len(block):
                checked += (cap_at + 1) * per_support
                if found is not None:
                    logger.debug(f"Work cap {work_cap} hit while checking ambiguity at weight {t}")
                    ambiguous = True
                    break
                logger.warning(f"Work cap {work_cap} hit at weight {t} over {n} unknowns")
                raise NoSolutionWithinCap(f"Work cap {work_cap} reached at weight {t}", cap_hit=True, candidates=checked)
            checked += len(block) * per_support
        if found is not None:
            return ColumnSolution(found, t, certified, ambiguous, checked)
    raise NoSolutionWithinCap(f"No solution of weight <= {top}", cap_hit=False, candidates=checked)


def repair(
    state: ReceptionState,
    S: FqMatrix,
    w_max: Optional[int] = None,
    work_cap: Optional[int] = None,
    truth: Optional[FqMatrix] = None,
) -> Tuple[ReceptionState, RepairOutcome]:
    """
    Решает все L столбцов независимо, собирает Ê_R̄ (нерешённые столбцы нулевые),
    вычисляет X̂_R̄ = Y_R̄ − Ê_R̄ и переносит строки, прошедшие CRC, из R̄ в R.
    truth (исходная X) нужна только для подсчёта ложных принятий в симуляции.
    """
    code = state.code
    if S.shape != (code.epsilon, state.L):
        raise PprError(f"Syndrome must be {(code.epsilon, state.L)}, got {S.shape}")
    Rbar = list(state.Rbar)
    if not Rbar:
        return state, RepairOutcome(0, (), tuple(None for _ in range(state.L)))

    if w_max is not None:
        w_max = min(w_max, len(Rbar))
    H_t = restrict_parity(code, Rbar).T
    span_rank = rank(H_t)
    oracle = ThresholdSparkOracle(H_t, span_rank)
    memo: Dict[bytes, Optional[ColumnSolution]] = {}
    per_column: List[Optional[ColumnSolution]] = []
    cap_hits = 0
    E_hat = np.zeros((len(Rbar), state.L), dtype=np.int64)
    for l in range(state.L):
        s_col = S.data[:, l]
        key = s_col.tobytes()
        if key not in memo:
            try:
                memo[key] = l0_solve_column(H_t, s_col, w_max, work_cap, oracle, span_rank)
            except NoSolutionWithinCap as e:
                memo[key] = None
                cap_hits += int(e.cap_hit)
        solution = memo[key]
        per_column.append(solution)
        if solution is not None:
            E_hat[:, l] = solution.w

    X_hat = (state.Y.take_rows(Rbar).data - E_hat) % code.field.q
    repaired = [n for i, n in enumerate(Rbar) if state.crc_spec.check(X_hat[i], state.crcs[n])]
    false_accepts = 0
    if truth is not None:
        false_accepts = sum(1 for i, n in enumerate(Rbar) if n in repaired and not np.array_equal(X_hat[i], truth.data[n]))
        if false_accepts:
            logger.warning(f"{false_accepts} repaired rows passed CRC but differ from the transmitted packets")

    rows = [Rbar.index(n) for n in repaired]
    Y_new = state.Y.with_rows(repaired, X_hat[rows]) if repaired else state.Y
    new_state = replace(
        state,
        Y=Y_new,
        R=tuple(sorted(state.R + tuple(repaired))),
        Rbar=tuple(n for n in Rbar if n not in repaired),
    )
    outcome = RepairOutcome(
        nu=len(repaired),
        repaired_indices=tuple(repaired),
        per_column=tuple(per_column),
        false_accepts=false_accepts,
        cap_hits=cap_hits,
    )
    logger.debug(f"Repair: {len(repaired)}/{len(Rbar)} rows fixed, {sum(s is None for s in per_column)} columns unsolved")
    return new_state, outcome


def _solve_source(state: ReceptionState) -> Tuple[Optional[FqMatrix], int, Optional[str]]:
    G_R = state.generator_rows()
    r = rank(G_R)
    if r < state.code.K:
        return None, r, "rank"
    Y_R = state.Y.take_rows(state.R)
    try:
        U = solve_unique(G_R, Y_R)
    except NoUniqueSolution as e:
        return None, r, e.reason
    # Повторное кодирование должно совпасть со всеми строками из R
    if (G_R @ U) != Y_R:
        return None, r, "round_trip"
    return U, r, None


def decode_plain(state: ReceptionState) -> DecodeReport:
    U, r, reason = _solve_source(state)
    return DecodeReport(
        success=U is not None, sd_invoked=False, sd_changed_outcome=False, nu=0,
        rank_before=r, rank_after=r, U=U, failure_reason=reason,
    )


def needs_sd(plain: DecodeReport, state: ReceptionState) -> bool:
    """SD имеет смысл только при нехватке ранга и непустом R̄."""
    return not plain.success and plain.failure_reason == "rank" and bool(state.Rbar)


def decode(
    state: ReceptionState,
    w_max: Optional[int] = None,
    use_sd: bool = True,
    work_cap: Optional[int] = None,
    truth: Optional[FqMatrix] = None,
    plain: Optional[DecodeReport] = None,
) -> DecodeReport:
    """
    (1) rank(G_R) = K: U из G_R·U = Y_R, SD не нужен.
    (2) Иначе (если use_sd) синдром, один проход repair и повторная проверка ранга.
    plain: уже полученный результат шага (1) для того же state.
    """
    plain = plain or decode_plain(state)
    if not use_sd or not needs_sd(plain, state):
        return plain
    rank_before = plain.rank_before

    S = compute_syndrome(state.code, state.Y)
    repaired_state, outcome = repair(state, S, w_max, work_cap, truth)
    U, rank_after, reason = _solve_source(repaired_state)
    flags = tuple(sol is not None and sol.certified_unique for sol in outcome.per_column)
    return DecodeReport(
        success=U is not None,
        sd_invoked=True,
        sd_changed_outcome=U is not None,
        nu=outcome.nu,
        rank_before=rank_before,
        rank_after=rank_after,
        U=U,
        outcome=outcome,
        failure_reason=reason,
        column_certified=flags,
    )
