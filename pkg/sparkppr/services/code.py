# sparkppr/services/code.py
"""
Систематические коды: генераторная матрица G = [I_K; P], проверочная матрица
H = [-P | I_{N-K}]^T, spark матрицы (два независимых алгоритма) и доли элементов (PoE).
"""
import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from sparkppr.core.config import settings
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix, pack_rows, rank

logger = logging.getLogger(__name__)


class CodeError(Exception):
    """Ошибка построения кода или вычисления его характеристик."""
    def __init__(self, message="Code construction error", details=None):
        self.message = message
        self.details = details
        super().__init__(self.message)


@dataclass(frozen=True)
class SystematicCode:
    field: FieldSpec
    K: int
    N: int
    P: FqMatrix

    def __post_init__(self):
        if self.K < 1 or self.N <= self.K:
            raise CodeError(f"Systematic code needs N > K >= 1, got K={self.K}, N={self.N}")
        if self.P.q != self.field.q:
            raise CodeError(f"P is over F_{self.P.q}, code is over F_{self.field.q}")
        if self.P.shape != (self.N - self.K, self.K):
            raise CodeError(f"P must be {(self.N - self.K, self.K)}, got {self.P.shape}")

    @classmethod
    def from_p(cls, P: FqMatrix) -> "SystematicCode":
        return cls(P.field, P.cols, P.rows + P.cols, P)

    @property
    def epsilon(self) -> int:
        return self.N - self.K

    def generator(self) -> FqMatrix:
        return build_generator(self)

    def parity_check(self) -> FqMatrix:
        return build_parity_check(self)


def build_generator(code: SystematicCode) -> FqMatrix:
    """N×K матрица [I_K над P]."""
    return FqMatrix.identity(code.field, code.K).vstack(code.P)


def build_parity_check(code: SystematicCode) -> FqMatrix:
    """N×(N−K) матрица H = [−P | I_{N−K}]^T; отрицание берётся в F_q."""
    h_t = code.P.neg().hstack(FqMatrix.identity(code.field, code.epsilon))
    return h_t.T


def random_rlc_generator(field_spec: FieldSpec, N: int, K: int, rng: np.random.Generator) -> FqMatrix:
    """Несистематический генератор RLC: все элементы i.i.d. равномерно из F_q."""
    return FqMatrix.random(field_spec, N, K, rng)


# --- Spark ---

@dataclass(frozen=True)
class SparkValue:
    """
    Результат вычисления spark.

    value=None и greater_than=None означает «не ограничен» (все столбцы независимы).
    value=None и greater_than=t означает, что поиск остановлен на пороге: spark > t.
    """
    value: Optional[int] = None
    witness: Tuple[int, ...] = ()
    greater_than: Optional[int] = None

    @property
    def is_unbounded(self) -> bool:
        return self.value is None and self.greater_than is None

    @property
    def is_exact(self) -> bool:
        return self.value is not None

    def exceeds(self, t: int) -> bool:
        """Верно ли, что spark > t."""
        if self.value is not None:
            return self.value > t
        if self.greater_than is None:
            return True
        if t <= self.greater_than:
            return True
        raise CodeError(f"Spark is only known to exceed {self.greater_than}; cannot compare with {t}")

    def __str__(self) -> str:
        if self.value is not None:
            return str(self.value)
        if self.greater_than is not None:
            return f">{self.greater_than}"
        return "unbounded"


# --- Векторизованный перебор носителей ---

# Носителей в одном блоке для упакованного пути F_2
SCAN_BLOCK = 1 << 14
# Предельный размер промежуточного массива rows × block × (t + grid) в общем пути
SCAN_CELLS = 1 << 22


def nonzero_value_grid(q: int, t: int) -> np.ndarray:
    """Все векторы из (F_q∖{0})^t в порядке одометра, по столбцу на вектор."""
    if t == 0:
        return np.zeros((0, 1), dtype=np.int64)
    return np.indices((q - 1,) * t, dtype=np.int64).reshape(t, -1) + 1


def dependency_grid(q: int, t: int) -> np.ndarray:
    """Коэффициенты зависимости с полным носителем, первый коэффициент нормирован к 1."""
    rest = nonzero_value_grid(q, t - 1)
    return np.vstack([np.ones((1, rest.shape[1]), dtype=np.int64), rest])


class ColumnCombiner:
    """
    Линейные комбинации столбцов A по блокам носителей. Носители идут в
    лексикографическом порядке, значения коэффициентов задаются сеткой (t × G).
    При q = 2 и не более 64 строках столбцы упакованы в uint64, комбинация есть XOR.
    """

    def __init__(self, a: FqMatrix):
        self.a = a
        self.q = a.q
        self._masks: Optional[np.ndarray] = None
        if a.field.is_binary and a.rows <= 64:
            self._masks = np.array(a.packed_cols(), dtype=np.uint64)

    def _block_size(self, t: int, grid_width: int) -> int:
        if self._masks is not None:
            return SCAN_BLOCK
        return max(1, SCAN_CELLS // (max(1, self.a.rows) * (t + grid_width)))

    def supports(self, t: int, grid_width: int = 1) -> Iterator[np.ndarray]:
        """Все t-подмножества столбцов блоками формы (k, t)."""
        combos = itertools.combinations(range(self.a.cols), t)
        block = self._block_size(t, grid_width)
        while True:
            flat = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, block)), dtype=np.int64)
            if flat.size == 0:
                return
            yield flat.reshape(-1, t)

    def matches(self, supports: np.ndarray, grid: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Булева матрица (k, G): A[:, support_i]·grid[:, g] == target."""
        if self._masks is not None:
            # над F_2 сетка состоит из одного столбца единиц
            packed = np.uint64(pack_rows(np.asarray(target, dtype=np.int64).reshape(1, -1))[0])
            acc = np.bitwise_xor.reduce(self._masks[supports], axis=1)
            return (acc == packed)[:, None]
        combos = (self.a.data[:, supports] @ grid) % self.q
        return np.all(combos == np.asarray(target, dtype=np.int64).reshape(-1, 1, 1), axis=0)

    def first_dependent(self, t: int) -> Optional[Tuple[int, ...]]:
        """
        Первое в лексикографическом порядке зависимое t-подмножество при условии, что все
        подмножества меньшего размера независимы (тогда зависимость имеет полный носитель).
        """
        grid = dependency_grid(self.q, t)
        zero = np.zeros(self.a.rows, dtype=np.int64)
        for block in self.supports(t, grid.shape[1]):
            hit = np.flatnonzero(self.matches(block, grid, zero).any(axis=1))
            if hit.size:
                return tuple(int(j) for j in block[hit[0]])
        return None


def spark_subset_search(a: FqMatrix, cap: Optional[int] = None, span_rank: Optional[int] = None) -> SparkValue:
    """
    Spark перебором подмножеств столбцов: размеры 1, 2, … по возрастанию,
    подмножества в лексикографическом порядке.
    Если задан cap, поиск не идёт дальше cap и возвращает сигнал «spark > cap».
    """
    r = rank(a) if span_rank is None else span_rank
    if r == a.cols:
        return SparkValue()
    # любые r + 1 столбцов зависимы
    limit = r + 1
    combiner = ColumnCombiner(a)
    top = limit if cap is None else min(limit, cap)
    for size in range(1, top + 1):
        witness = combiner.first_dependent(size)
        if witness is not None:
            return SparkValue(value=size, witness=witness)
    if cap is not None and cap < limit:
        return SparkValue(greater_than=cap)
    raise CodeError(f"No dependent subset of size <= {limit} although rank is {r}")


class ThresholdSparkOracle:
    """
    Отвечает на запросы «spark(A) > t?», расширяя перебор только по мере надобности.
    Результаты предыдущих запросов запоминаются. Если столбцы независимы
    (ранг равен числу столбцов), перебор не нужен вовсе.
    """

    def __init__(self, a: FqMatrix, span_rank: Optional[int] = None):
        self.a = a
        self.span_rank = rank(a) if span_rank is None else span_rank
        self._checked = 0  # все подмножества размера <= _checked независимы
        self._spark: Optional[SparkValue] = None
        self._combiner: Optional[ColumnCombiner] = None
        if self.span_rank == a.cols:
            self._spark = SparkValue()

    def exceeds(self, t: int) -> bool:
        if self._spark is not None:
            return self._spark.exceeds(t)
        if t <= self._checked:
            return True
        if self._combiner is None:
            self._combiner = ColumnCombiner(self.a)
        # spark <= rank + 1
        target = min(t, self.span_rank + 1)
        for size in range(self._checked + 1, target + 1):
            witness = self._combiner.first_dependent(size)
            if witness is not None:
                self._spark = SparkValue(value=size, witness=witness)
                return size > t
            self._checked = size
        return t <= self._checked

    @property
    def known(self) -> Optional[SparkValue]:
        return self._spark


def _all_message_vectors(field_spec: FieldSpec, K: int, bound: int) -> np.ndarray:
    """Все ненулевые u ∈ F_q^K в порядке одометра (первая координата старшая)."""
    total = field_spec.q ** K
    if total > bound:
        raise CodeError(
            f"Codeword enumeration of q^K = {total} exceeds the bound {bound}",
            details={"q": field_spec.q, "K": K, "bound": bound},
        )
    grid = np.indices((field_spec.q,) * K, dtype=np.int64).reshape(K, -1).T
    return grid[1:]


class CodewordWeights:
    """
    Веса всех ненулевых кодовых слов G·u^T систематического кода. Систематическая
    часть слова есть сам u, проверочная равна P·u^T; при изменении одного элемента P
    пересчитывается только одна строка проверочной части.
    """

    def __init__(self, code: SystematicCode, bound: Optional[int] = None):
        self.field = code.field
        self.K = code.K
        self.messages = _all_message_vectors(code.field, code.K, bound or settings.MAX_CODEWORD_ENUMERATION)
        self.message_weight = np.count_nonzero(self.messages, axis=1)
        self._p = code.P.data.copy()
        self._parity = (self.messages @ self._p.T) % self.field.q

    @property
    def P(self) -> FqMatrix:
        return FqMatrix(self.field, self._p)

    def weights(self) -> np.ndarray:
        return self.message_weight + np.count_nonzero(self._parity, axis=1)

    def spark_and_multiplicity(self) -> Tuple[int, int]:
        w = self.weights()
        d = int(w.min())
        return d, int(np.count_nonzero(w == d))

    def set_entry(self, i: int, j: int, value: int) -> int:
        """Меняет P[i, j]; возвращает прежнее значение."""
        old = int(self._p[i, j])
        if old != value:
            self._parity[:, i] = (self._parity[:, i] + (value - old) * self.messages[:, j]) % self.field.q
            self._p[i, j] = value
        return old

    def reset(self, P: np.ndarray):
        self._p = np.array(P, dtype=np.int64)
        self._parity = (self.messages @ self._p.T) % self.field.q


def spark_via_codewords(code: SystematicCode, bound: Optional[int] = None) -> SparkValue:
    """
    Spark(H^T) как минимальный вес ненулевого кодового слова G·u^T.
    Перебираются все q^K − 1 ненулевых u (не более bound, по умолчанию 2^24).
    """
    limit = bound or settings.MAX_CODEWORD_ENUMERATION
    total = code.field.q ** code.K
    if total > limit:
        raise CodeError(f"Codeword enumeration of q^K = {total} exceeds the bound {limit}")
    G = build_generator(code).data
    best: Optional[int] = None
    best_word: Optional[np.ndarray] = None
    chunk = 1 << 16
    # Перебор по кускам, чтобы не держать все q^K слов в памяти
    for start in range(1, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        digits = np.stack(np.unravel_index(idx, (code.field.q,) * code.K), axis=1).astype(np.int64)
        words = (digits @ G.T) % code.field.q
        w = np.count_nonzero(words, axis=1)
        k = int(np.argmin(w))
        if best is None or int(w[k]) < best:
            best = int(w[k])
            best_word = words[k]
    witness = tuple(int(j) for j in np.flatnonzero(best_word))
    return SparkValue(value=best, witness=witness)


# --- Доли элементов (PoE) ---

def element_counts(p: FqMatrix) -> Dict[int, int]:
    counts = np.bincount(p.data.ravel(), minlength=p.q)
    return {delta: int(counts[delta]) for delta in range(p.q)}


def poe_matrix(p: FqMatrix, delta: int) -> Fraction:
    """Доля элементов P, равных delta (точная рациональная арифметика)."""
    if p.rows == 0 or p.cols == 0:
        raise CodeError("PoE is undefined for an empty matrix")
    p.field.check(delta)
    return Fraction(int(np.count_nonzero(p.data == delta)), p.rows * p.cols)


def poe_set(matrices: Sequence[FqMatrix], delta: int) -> Fraction:
    """Средняя доля delta по набору матриц одинаковой формы."""
    if not matrices:
        raise CodeError("PoE of an empty set is undefined")
    shape = matrices[0].shape
    if any(m.shape != shape or m.q != matrices[0].q for m in matrices):
        raise CodeError("PoE set requires matrices of a uniform shape and field")
    return sum((poe_matrix(m, delta) for m in matrices), Fraction(0)) / len(matrices)


def balance_deviation(p: FqMatrix) -> Fraction:
    """Σ_δ (PoE(P, δ) − 1/q)^2, целевая функция выбора MS-LC."""
    target = Fraction(1, p.q)
    return sum(((poe_matrix(p, d) - target) ** 2 for d in range(p.q)), Fraction(0))


def balance_penalty(counts: np.ndarray, q: int, total: int) -> int:
    """Целочисленный эквивалент balance_deviation: Σ_δ (q·c_δ − total)^2."""
    return int(np.sum((q * counts - total) ** 2))
