# sparkppr/services/fqlinalg.py
"""
Точная арифметика и линейная алгебра над простыми полями F_q.

Общий путь построен на galois.GF(q); для q = 2 строки упаковываются в целые
числа Python (битовые маски), и операции над строками выполняются через XOR.
Оба пути дают одинаковый результат, это проверяется перекрёстными тестами.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Literal, Optional, Sequence, Tuple

import galois
import numpy as np

logger = logging.getLogger(__name__)

FieldOpKind = Literal["add", "sub", "mul", "div"]


class FieldError(Exception):
    """Ошибка арифметики поля (неверный модуль, деление на ноль, элемент вне поля)."""
    def __init__(self, message="Field arithmetic error", details=None):
        self.message = message
        self.details = details
        super().__init__(self.message)


class FqLinalgError(Exception):
    """Базовый класс для ошибок матричных операций над F_q."""
    def __init__(self, message="F_q linear algebra error", details=None):
        self.message = message
        self.details = details
        super().__init__(self.message)


class MatrixFormatError(FqLinalgError):
    """Текстовое представление матрицы не удалось разобрать."""
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}", details={"line": line})


class NoUniqueSolution(FqLinalgError):
    """Система a·X = rhs не имеет единственного решения."""
    def __init__(self, reason: Literal["underdetermined", "inconsistent"], rank: int, unknowns: int):
        self.reason = reason
        self.rank = rank
        self.unknowns = unknowns
        super().__init__(
            f"No unique solution ({reason}): rank {rank}, {unknowns} unknowns",
            details={"reason": reason, "rank": rank, "unknowns": unknowns},
        )


@lru_cache(maxsize=None)
def _galois_field(q: int):
    return galois.GF(q)


@dataclass(frozen=True)
class FieldSpec:
    """Простое поле F_q. Элементы хранятся как канонические представители из [0, q)."""
    q: int

    def __post_init__(self):
        q = self.q
        if isinstance(q, bool) or not isinstance(q, (int, np.integer)):
            raise FieldError(f"Field modulus must be an integer, got {q!r}")
        if q < 2 or not galois.is_prime(int(q)):
            raise FieldError(f"Field modulus must be a prime q >= 2, got {q}")
        object.__setattr__(self, "q", int(q))

    @property
    def gf(self):
        return _galois_field(self.q)

    @property
    def is_binary(self) -> bool:
        return self.q == 2

    def elements(self) -> range:
        return range(self.q)

    def check(self, a: int) -> int:
        if not 0 <= a < self.q:
            raise FieldError(f"Element {a} is not a canonical representative of F_{self.q}")
        return int(a)

    def op(self, a: int, b: int, kind: FieldOpKind) -> int:
        a, b = self.check(a), self.check(b)
        GF = self.gf
        if kind == "add":
            return int(GF(a) + GF(b))
        if kind == "sub":
            return int(GF(a) - GF(b))
        if kind == "mul":
            return int(GF(a) * GF(b))
        if kind == "div":
            if b == 0:
                raise FieldError(f"Division by zero in F_{self.q}")
            return int(GF(a) / GF(b))
        raise FieldError(f"Unknown field operation: {kind!r}")

    def neg(self, a: int) -> int:
        return self.op(0, a, "sub")

    def inv(self, a: int) -> int:
        return self.op(1, a, "div")


def field_op(field: FieldSpec, a: int, b: int, kind: FieldOpKind) -> int:
    """Операция add/sub/mul/div над F_q с каноническим результатом."""
    return field.op(a, b, kind)


# --- Упаковка строк для быстрого пути q = 2 ---

def pack_rows(arr: np.ndarray) -> List[int]:
    """Каждая строка 0/1-массива превращается в int, бит j = arr[r, j]."""
    rows, cols = arr.shape
    if rows == 0:
        return []
    if cols == 0:
        return [0] * rows
    packed = np.packbits(arr.astype(np.uint8), axis=1, bitorder="little")
    return [int.from_bytes(r.tobytes(), "little") for r in packed]


def unpack_rows(values: Sequence[int], cols: int) -> np.ndarray:
    if not values or cols == 0:
        return np.zeros((len(values), cols), dtype=np.int64)
    nbytes = (cols + 7) // 8
    buf = b"".join(v.to_bytes(nbytes, "little") for v in values)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(len(values), nbytes)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :cols]
    return bits.astype(np.int64)


def _gf2_rank(rows: List[int], n_cols: int) -> int:
    work = rows[:]
    rank = 0
    for col in range(n_cols):
        bit = 1 << col
        pivot = None
        for r in range(rank, len(work)):
            if work[r] & bit:
                pivot = r
                break
        if pivot is None:
            continue
        work[rank], work[pivot] = work[pivot], work[rank]
        for r in range(rank + 1, len(work)):
            if work[r] & bit:
                work[r] ^= work[rank]
        rank += 1
        if rank == len(work):
            break
    return rank


@dataclass(frozen=True, eq=False)
class FqMatrix:
    """
    Плотная матрица над F_q. После создания неизменяема (массив только для чтения),
    поэтому её можно безопасно передавать между воркерами.
    """
    field: FieldSpec
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.int64)
        if arr.ndim != 2:
            raise FqLinalgError(f"FqMatrix expects a 2-D array, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.field.q):
            raise FieldError(f"Matrix entries must lie in [0, {self.field.q})")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    # --- Конструкторы ---

    @classmethod
    def zeros(cls, field: FieldSpec, rows: int, cols: int) -> "FqMatrix":
        return cls(field, np.zeros((rows, cols), dtype=np.int64))

    @classmethod
    def identity(cls, field: FieldSpec, n: int) -> "FqMatrix":
        return cls(field, np.eye(n, dtype=np.int64))

    @classmethod
    def from_rows(cls, field: FieldSpec, rows: Sequence[Sequence[int]], cols: Optional[int] = None) -> "FqMatrix":
        if len(rows) == 0:
            return cls.zeros(field, 0, cols or 0)
        return cls(field, np.array(rows, dtype=np.int64).reshape(len(rows), -1))

    @classmethod
    def random(cls, field: FieldSpec, rows: int, cols: int, rng: np.random.Generator) -> "FqMatrix":
        return cls(field, rng.integers(0, field.q, size=(rows, cols), dtype=np.int64))

    # --- Свойства ---

    @property
    def q(self) -> int:
        return self.field.q

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def cols(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def entries(self) -> Tuple[int, ...]:
        return tuple(int(x) for x in self.data.ravel())

    @property
    def T(self) -> "FqMatrix":
        return FqMatrix(self.field, self.data.T)

    def lex_key(self) -> Tuple[int, ...]:
        return self.entries

    def is_zero(self) -> bool:
        return not self.data.any()

    def take_rows(self, indices: Sequence[int]) -> "FqMatrix":
        idx = list(indices)
        if any(i < 0 or i >= self.rows for i in idx):
            raise FqLinalgError(f"Row index out of range for a {self.rows}x{self.cols} matrix: {idx}")
        return FqMatrix(self.field, self.data[idx, :].reshape(len(idx), self.cols))

    def take_cols(self, indices: Sequence[int]) -> "FqMatrix":
        idx = list(indices)
        if any(j < 0 or j >= self.cols for j in idx):
            raise FqLinalgError(f"Column index out of range for a {self.rows}x{self.cols} matrix: {idx}")
        return FqMatrix(self.field, self.data[:, idx].reshape(self.rows, len(idx)))

    def with_rows(self, indices: Sequence[int], values: np.ndarray) -> "FqMatrix":
        """Копия матрицы, в которой строки indices заменены на values."""
        arr = self.data.copy()
        if len(indices):
            arr[list(indices), :] = np.asarray(values, dtype=np.int64).reshape(len(indices), self.cols)
        return FqMatrix(self.field, arr)

    def vstack(self, other: "FqMatrix") -> "FqMatrix":
        self._check_field(other)
        if self.cols != other.cols:
            raise FqLinalgError(f"Cannot stack {self.shape} above {other.shape}")
        return FqMatrix(self.field, np.vstack([self.data, other.data]))

    def hstack(self, other: "FqMatrix") -> "FqMatrix":
        self._check_field(other)
        if self.rows != other.rows:
            raise FqLinalgError(f"Cannot place {self.shape} beside {other.shape}")
        return FqMatrix(self.field, np.hstack([self.data, other.data]))

    def neg(self) -> "FqMatrix":
        return FqMatrix(self.field, (-self.data) % self.q)

    def __add__(self, other: "FqMatrix") -> "FqMatrix":
        self._check_same_shape(other)
        return FqMatrix(self.field, (self.data + other.data) % self.q)

    def __sub__(self, other: "FqMatrix") -> "FqMatrix":
        self._check_same_shape(other)
        return FqMatrix(self.field, (self.data - other.data) % self.q)

    def __matmul__(self, other: "FqMatrix") -> "FqMatrix":
        return mat_mul(self, other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FqMatrix):
            return NotImplemented
        return self.q == other.q and self.shape == other.shape and np.array_equal(self.data, other.data)

    def __hash__(self) -> int:
        return hash((self.q, self.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"FqMatrix(q={self.q}, shape={self.shape}, rows={self.data.tolist()})"

    def _check_field(self, other: "FqMatrix"):
        if self.q != other.q:
            raise FqLinalgError(f"Field mismatch: F_{self.q} vs F_{other.q}")

    def _check_same_shape(self, other: "FqMatrix"):
        self._check_field(other)
        if self.shape != other.shape:
            raise FqLinalgError(f"Shape mismatch: {self.shape} vs {other.shape}")

    # --- Быстрый путь для F_2 ---

    def packed_rows(self) -> List[int]:
        return pack_rows(self.data)

    def packed_cols(self) -> List[int]:
        return pack_rows(self.data.T)

    # --- Текстовый формат ---

    def to_text(self) -> str:
        lines = [f"{self.q} {self.rows} {self.cols}"]
        lines.extend(" ".join(str(int(x)) for x in row) for row in self.data)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FqMatrix":
        """Разбирает формат «q rows cols» + по строке на каждую строку матрицы."""
        lines = text.splitlines()
        if not lines or not lines[0].strip():
            raise MatrixFormatError("missing header 'q rows cols'", line=1)
        header = lines[0].split()
        if len(header) != 3:
            raise MatrixFormatError(f"header must have 3 fields, got {len(header)}", line=1)
        try:
            q, rows, cols = (int(x) for x in header)
        except ValueError as e:
            raise MatrixFormatError(f"header is not numeric: {lines[0]!r}", line=1) from e
        if rows < 0 or cols < 0:
            raise MatrixFormatError("negative dimensions", line=1)
        try:
            field = FieldSpec(q)
        except FieldError as e:
            raise MatrixFormatError(e.message, line=1) from e

        body = lines[1:]
        # Хвостовые пустые строки допустимы
        while len(body) > rows and not body[-1].strip():
            body.pop()
        if len(body) != rows:
            raise MatrixFormatError(f"expected {rows} matrix rows, got {len(body)}", line=len(lines))

        data = np.zeros((rows, cols), dtype=np.int64)
        for i, raw in enumerate(body):
            line_no = i + 2
            tokens = raw.split()
            if len(tokens) != cols:
                raise MatrixFormatError(f"expected {cols} entries, got {len(tokens)}", line=line_no)
            for j, tok in enumerate(tokens):
                try:
                    value = int(tok)
                except ValueError as e:
                    raise MatrixFormatError(f"entry {tok!r} is not an integer", line=line_no) from e
                if not 0 <= value < q:
                    raise MatrixFormatError(f"entry {value} outside [0, {q})", line=line_no)
                data[i, j] = value
        return cls(field, data)


# --- Операции ---

def mat_mul(a: FqMatrix, b: FqMatrix) -> FqMatrix:
    """Точное произведение a·b над F_q."""
    if a.q != b.q:
        raise FqLinalgError(f"Field mismatch: F_{a.q} vs F_{b.q}")
    if a.cols != b.rows:
        raise FqLinalgError(f"Dimension mismatch: {a.shape} @ {b.shape}")
    q = a.q
    if a.cols == 0 or a.rows == 0 or b.cols == 0:
        return FqMatrix.zeros(a.field, a.rows, b.cols)
    if (q - 1) ** 2 * a.cols < 2 ** 62:
        return FqMatrix(a.field, (a.data @ b.data) % q)
    # Большие q: пусть galois следит за переполнением
    GF = a.field.gf
    product = GF(a.data) @ GF(b.data)
    return FqMatrix(a.field, product.view(np.ndarray).astype(np.int64))


def rank(a: FqMatrix) -> int:
    """Ранг над F_q; 0 для пустой или нулевой матрицы."""
    if a.rows == 0 or a.cols == 0:
        return 0
    if a.field.is_binary:
        return _gf2_rank(a.packed_rows(), a.cols)
    return int(np.linalg.matrix_rank(a.field.gf(a.data)))


def solve_unique(a: FqMatrix, rhs: FqMatrix) -> FqMatrix:
    """
    Возвращает единственное X с a·X = rhs.

    Raises:
        NoUniqueSolution: reason='inconsistent', если система несовместна,
            иначе reason='underdetermined', если rank(a) < a.cols.
    """
    if a.q != rhs.q:
        raise FqLinalgError(f"Field mismatch: F_{a.q} vs F_{rhs.q}")
    if a.rows != rhs.rows:
        raise FqLinalgError(f"Dimension mismatch: a has {a.rows} rows, rhs has {rhs.rows}")
    n = a.cols
    if n == 0:
        if not rhs.is_zero():
            raise NoUniqueSolution("inconsistent", 0, 0)
        return FqMatrix.zeros(a.field, 0, rhs.cols)
    if a.rows == 0:
        raise NoUniqueSolution("underdetermined", 0, n)
    if a.field.is_binary:
        return _gf2_solve(a, rhs)
    return _galois_solve(a, rhs)


def _gf2_solve(a: FqMatrix, rhs: FqMatrix) -> FqMatrix:
    n = a.cols
    work = [ar | (br << n) for ar, br in zip(a.packed_rows(), rhs.packed_rows())]
    r = 0
    for col in range(n):
        bit = 1 << col
        pivot = None
        for i in range(r, len(work)):
            if work[i] & bit:
                pivot = i
                break
        if pivot is None:
            continue
        work[r], work[pivot] = work[pivot], work[r]
        for i in range(len(work)):
            if i != r and work[i] & bit:
                work[i] ^= work[r]
        r += 1
    # Строки ниже r имеют нулевую левую часть
    if any(row >> n for row in work[r:]):
        raise NoUniqueSolution("inconsistent", r, n)
    if r < n:
        raise NoUniqueSolution("underdetermined", r, n)
    return FqMatrix(a.field, unpack_rows([work[k] >> n for k in range(n)], rhs.cols))


def _galois_solve(a: FqMatrix, rhs: FqMatrix) -> FqMatrix:
    n = a.cols
    GF = a.field.gf
    augmented = GF(np.hstack([a.data, rhs.data]))
    reduced = augmented.row_reduce(ncols=n).view(np.ndarray).astype(np.int64)
    left, right = reduced[:, :n], reduced[:, n:]
    pivot_rows = left.any(axis=1)
    r = int(pivot_rows.sum())
    if np.any(~pivot_rows & right.any(axis=1)):
        raise NoUniqueSolution("inconsistent", r, n)
    if r < n:
        raise NoUniqueSolution("underdetermined", r, n)
    return FqMatrix(a.field, right[:n])
