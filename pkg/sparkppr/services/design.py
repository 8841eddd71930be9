# sparkppr/services/design.py
"""
Поиск матриц P с максимальным spark(H^T), выбор MS-LC, построение наборов OS-PRLC
с точным балансом элементов и хранение каталогов Q^(ε).
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from sparkppr.core.config import settings
from sparkppr.models.catalog import Catalog, CatalogEntry, MatrixRecord
from sparkppr.models.common import Scheme
from sparkppr.services.code import (
    CodewordWeights,
    SystematicCode,
    balance_deviation,
    balance_penalty,
    build_parity_check,
    element_counts,
    poe_matrix,
    poe_set,
    spark_subset_search,
)
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix

logger = logging.getLogger(__name__)

# Полный перебор, если матриц не больше 2^20
EXHAUSTIVE_LIMIT = 2 ** 20

Candidate = Tuple[FqMatrix, int]


class DesignError(Exception):
    """Построение набора не удалось (например, ограничение баланса невыполнимо)."""
    def __init__(self, message="Code design search failed", details=None):
        self.message = message
        self.details = details
        super().__init__(self.message)


class CatalogError(Exception):
    """Каталог не удалось прочитать или он не прошёл проверку."""
    def __init__(self, message="Catalog error", entry_id: Optional[str] = None, details=None):
        self.message = message
        self.entry_id = entry_id
        self.details = details
        super().__init__(self.message)


class CatalogNotFound(CatalogError):
    pass


class MissingCatalogEntry(CatalogError):
    pass


# --- Поиск максимального spark ---

def _code_for(field_spec: FieldSpec, K: int, P: np.ndarray) -> SystematicCode:
    return SystematicCode(field_spec, K, K + P.shape[0], FqMatrix(field_spec, P))


def is_exhaustive(field_spec: FieldSpec, K: int, epsilon: int) -> bool:
    return field_spec.q ** (epsilon * K) <= EXHAUSTIVE_LIMIT


def _exhaustive_search(field_spec: FieldSpec, K: int, epsilon: int) -> List[Candidate]:
    q = field_spec.q
    weights = CodewordWeights(_code_for(field_spec, K, np.zeros((epsilon, K), dtype=np.int64)))
    best = -1
    winners: List[Tuple[int, ...]] = []
    for entries in product(range(q), repeat=epsilon * K):
        weights.reset(np.array(entries, dtype=np.int64).reshape(epsilon, K))
        spark = int(weights.weights().min())
        if spark > best:
            best, winners = spark, [entries]
        elif spark == best:
            winners.append(entries)
    logger.info(f"Exhaustive search q={q} K={K} eps={epsilon}: spark {best}, {len(winners)} maximizers")
    return [(FqMatrix(field_spec, np.array(e).reshape(epsilon, K)), best) for e in winners]


class _Climber:
    """Один запуск hill-climbing: мутации одного элемента, ключ (spark, −кратность, −дисбаланс)."""

    def __init__(self, q: int, K: int, epsilon: int, rng: np.random.Generator):
        self.field = FieldSpec(q)
        self.q, self.K, self.epsilon = q, K, epsilon
        self.rng = rng
        self.total = epsilon * K
        self.weights = CodewordWeights(_code_for(self.field, K, np.zeros((epsilon, K), dtype=np.int64)))
        self.counts = np.zeros(q, dtype=np.int64)

    def load(self, P: np.ndarray):
        self.weights.reset(P)
        self.counts = np.bincount(P.ravel(), minlength=self.q).astype(np.int64)

    def key(self, balanced: bool = True) -> Tuple[int, int, int]:
        spark, multiplicity = self.weights.spark_and_multiplicity()
        penalty = balance_penalty(self.counts, self.q, self.total) if balanced else 0
        return spark, -multiplicity, -penalty

    def change(self, i: int, j: int, value: int) -> int:
        old = self.weights.set_entry(i, j, value)
        self.counts[old] -= 1
        self.counts[value] += 1
        return old

    def entries(self) -> Tuple[int, ...]:
        return tuple(int(x) for x in self.weights.P.data.ravel())


def _climb(q: int, K: int, epsilon: int, budget: int, seed: int, restart: int, patience: int) -> List[Tuple[Tuple[int, int, int], Tuple[int, ...]]]:
    """
    Hill-climbing с перезапусками внутри своего бюджета. Мутация принимается, если
    ключ не ухудшился; после patience шагов без строгого улучшения локальный оптимум
    запоминается и поиск начинается с новой случайной матрицы.
    """
    rng = np.random.default_rng([seed, epsilon, restart])
    climber = _Climber(q, K, epsilon, rng)
    climber.load(rng.integers(0, q, size=(epsilon, K)))
    current = climber.key()
    evaluations, stale = 1, 0
    optima = []
    batch = 1024
    while evaluations < budget:
        rows = rng.integers(0, epsilon, size=batch)
        cols = rng.integers(0, K, size=batch)
        shifts = rng.integers(1, q, size=batch)
        for i, j, shift in zip(rows.tolist(), cols.tolist(), shifts.tolist()):
            if evaluations >= budget:
                break
            value = (int(climber.weights.P.data[i, j]) + shift) % q
            old = climber.change(i, j, value)
            candidate = climber.key()
            evaluations += 1
            if candidate >= current:
                stale = 0 if candidate > current else stale + 1
                current = candidate
            else:
                climber.change(i, j, old)
                stale += 1
            if stale >= patience and evaluations < budget:
                optima.append((current, climber.entries()))
                climber.load(rng.integers(0, q, size=(epsilon, K)))
                current = climber.key()
                evaluations += 1
                stale = 0
    optima.append((current, climber.entries()))
    return optima


def _restart_plan(budget: int, restart_budget: int) -> List[int]:
    restart_budget = max(1, restart_budget)
    n = max(1, math.ceil(budget / restart_budget))
    plan = [restart_budget] * (n - 1)
    plan.append(budget - restart_budget * (n - 1))
    return plan


def _run_restarts(tasks: List[tuple], fn, workers: int) -> List:
    if workers <= 1 or len(tasks) == 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def search_max_spark(
    field_spec: FieldSpec,
    K: int,
    epsilon: int,
    budget: int,
    seed: int,
    workers: int = 1,
    restart_budget: Optional[int] = None,
) -> List[Candidate]:
    """
    Матрицы P (ε×K) с наибольшим найденным spark([−P | I_ε]).

    Полный перебор, если q^(εK) <= 2^20; иначе hill-climbing с перезапусками,
    пока не исчерпан бюджет оценок. Результат отсортирован: spark по убыванию,
    затем лексикографически по элементам; у всех матриц один и тот же spark.
    """
    if budget < 1:
        raise DesignError(f"Search budget must be positive, got {budget}")
    if is_exhaustive(field_spec, K, epsilon):
        return _exhaustive_search(field_spec, K, epsilon)

    q = field_spec.q
    patience = 4 * epsilon * K * (q - 1)
    plan = _restart_plan(budget, restart_budget or settings.RESTART_BUDGET)
    logger.info(f"Hill-climbing q={q} K={K} eps={epsilon}: budget {budget}, {len(plan)} restarts, seed {seed}")
    tasks = [(q, K, epsilon, b, seed, r, patience) for r, b in enumerate(plan)]
    results = _run_restarts(tasks, _climb, workers)

    optima = [item for chunk in results for item in chunk]
    best_spark = max(key[0] for key, _ in optima)
    distinct = sorted({entries for key, entries in optima if key[0] == best_spark})
    logger.info(f"Hill-climbing eps={epsilon} finished: best spark {best_spark}, {len(distinct)} distinct maximizers")
    return [(FqMatrix(field_spec, np.array(e).reshape(epsilon, K)), best_spark) for e in distinct]


def select_mslc(candidates: Sequence[Candidate]) -> FqMatrix:
    """
    Из матриц с максимальным spark выбирает ту, у которой доли элементов ближе всего
    к 1/q (минимум Σ_δ (PoE − 1/q)^2); ничьи разрешаются лексикографически.
    """
    if not candidates:
        raise DesignError("Cannot select an MS-LC matrix from an empty candidate list")
    best_spark = max(spark for _, spark in candidates)
    pool = [p for p, spark in candidates if spark == best_spark]
    return min(pool, key=lambda p: (balance_deviation(p), p.lex_key()))


# --- OS-PRLC ---

def _partner_compositions(base: FqMatrix, set_size: int) -> List[Dict[int, int]]:
    """Составы (число каждого δ) для партнёров base, дающие PoE набора ровно 1/q."""
    q = base.q
    total = base.rows * base.cols
    counts = element_counts(base)
    required = {d: Fraction(set_size * total, q) - counts[d] for d in range(q)}
    deficit = {d: v for d, v in required.items() if v < 0 or v.denominator != 1}
    if deficit:
        raise DesignError(
            f"Exact balance is infeasible for a set of {set_size}: per-element deficit {deficit}",
            details={"deficit": {d: str(v) for d, v in deficit.items()}},
        )
    pool = [d for d in range(q) for _ in range(int(required[d]))]
    partners = [dict.fromkeys(range(q), 0) for _ in range(set_size - 1)]
    for index, value in enumerate(pool):
        partners[index % (set_size - 1)][value] += 1
    return partners


def _climb_fixed_composition(q: int, K: int, epsilon: int, composition: Tuple[int, ...], budget: int, seed: int, restart: int, patience: int):
    """Hill-climbing с перестановками двух элементов: состав матрицы не меняется."""
    rng = np.random.default_rng([seed, epsilon, restart, 17])
    values = np.repeat(np.arange(q), composition)
    climber = _Climber(q, K, epsilon, rng)
    climber.load(rng.permutation(values).reshape(epsilon, K))
    current = climber.key(balanced=False)
    best = (current, climber.entries())
    if len(set(values.tolist())) == 1:
        return [best]
    evaluations, stale = 1, 0
    optima = []
    cells = epsilon * K
    while evaluations < budget:
        a, b = (int(x) for x in rng.integers(0, cells, size=2))
        P = climber.weights.P.data
        ia, ja, ib, jb = a // K, a % K, b // K, b % K
        va, vb = int(P[ia, ja]), int(P[ib, jb])
        if va == vb:
            continue
        climber.change(ia, ja, vb)
        climber.change(ib, jb, va)
        candidate = climber.key(balanced=False)
        evaluations += 1
        if candidate >= current:
            stale = 0 if candidate > current else stale + 1
            current = candidate
        else:
            climber.change(ia, ja, va)
            climber.change(ib, jb, vb)
            stale += 1
        if stale >= patience and evaluations < budget:
            optima.append((current, climber.entries()))
            climber.load(rng.permutation(values).reshape(epsilon, K))
            current = climber.key(balanced=False)
            evaluations += 1
            stale = 0
    optima.append((current, climber.entries()))
    return optima


def _score(P: FqMatrix) -> Tuple[int, int]:
    spark, multiplicity = CodewordWeights(SystematicCode.from_p(P)).spark_and_multiplicity()
    return spark, -multiplicity


def _find_partner(
    field_spec: FieldSpec,
    base: FqMatrix,
    composition: Dict[int, int],
    candidates: Sequence[Candidate],
    budget: int,
    seed: int,
    index: int,
    workers: int,
) -> FqMatrix:
    K, epsilon, q = base.cols, base.rows, base.q
    # Среди уже найденных максимизаторов может быть подходящий партнёр
    for P, _ in candidates:
        if P != base and element_counts(P) == composition:
            return P

    comp = tuple(composition[d] for d in range(q))
    patience = 4 * epsilon * K
    plan = _restart_plan(budget, settings.RESTART_BUDGET)
    tasks = [(q, K, epsilon, comp, b, seed, r + 1000 * index, patience) for r, b in enumerate(plan)]
    results = _run_restarts(tasks, _climb_fixed_composition, workers)
    optima = [item for chunk in results for item in chunk]
    best_key = max(key for key, _ in optima)
    found = min(entries for key, entries in optima if key == best_key)
    partner = FqMatrix(field_spec, np.array(found).reshape(epsilon, K))

    if q == 2:
        complement = FqMatrix(field_spec, 1 - base.data)
        if element_counts(complement) == composition and (partner == base or _score(complement) > _score(partner)):
            partner = complement
    return partner


def build_osprlc_set(
    field_spec: FieldSpec,
    K: int,
    epsilon: int,
    budget: int,
    seed: int,
    set_size: Optional[int] = None,
    candidates: Optional[Sequence[Candidate]] = None,
    workers: int = 1,
) -> List[FqMatrix]:
    """
    Набор OS-PRLC: лучшая матрица без ограничений плюс партнёры, подобранные так,
    что средняя доля каждого элемента по набору равна ровно 1/q. Spark партнёров
    может быть ниже максимального.
    """
    if budget < 1:
        raise DesignError(f"Search budget must be positive, got {budget}")
    set_size = set_size or settings.OSPRLC_SET_SIZE
    if set_size < 1:
        raise DesignError(f"OS-PRLC set size must be positive, got {set_size}")
    if candidates is None:
        candidates = search_max_spark(field_spec, K, epsilon, budget, seed, workers=workers)
    base = select_mslc(candidates)
    if set_size == 1:
        if any(poe_matrix(base, d) != Fraction(1, field_spec.q) for d in field_spec.elements()):
            raise DesignError("A single-matrix OS-PRLC set must itself be exactly balanced")
        return [base]

    members = [base]
    for index, composition in enumerate(_partner_compositions(base, set_size)):
        members.append(_find_partner(field_spec, base, composition, candidates, budget, seed, index, workers))

    for delta in field_spec.elements():
        if poe_set(members, delta) != Fraction(1, field_spec.q):
            raise DesignError(f"OS-PRLC set for epsilon={epsilon} violates exact balance at delta={delta}")
    return members


def sample_design(catalog: Catalog, scheme: Scheme, epsilon: int, rng: np.random.Generator) -> FqMatrix:
    """MS-LC: единственная матрица набора; OS-PRLC: равновероятный выбор из набора."""
    entry = catalog.find(scheme, epsilon)
    if entry is None:
        raise MissingCatalogEntry(f"Catalog has no {scheme.value} entry for epsilon={epsilon}", entry_id=f"{scheme.value}/{epsilon}")
    field_spec = FieldSpec(catalog.q)
    if scheme == Scheme.MSLC:
        record = entry.matrices[0]
    else:
        record = entry.matrices[int(rng.integers(0, len(entry.matrices)))]
    return FqMatrix.from_rows(field_spec, record.entries())


# --- Каталоги ---

def _record(P: FqMatrix) -> MatrixRecord:
    spark = spark_subset_search(build_parity_check(SystematicCode.from_p(P)).T)
    return MatrixRecord.build(P.data.tolist(), spark.value, {d: poe_matrix(P, d) for d in P.field.elements()})


def build_catalog(
    field_spec: FieldSpec,
    K: int,
    epsilons: Iterable[int],
    schemes: Sequence[Scheme],
    budget: int,
    seed: int,
    workers: int = 1,
) -> Catalog:
    """Строит Q^(ε) для каждого ε и каждой схемы (MSLC и/или OSPRLC)."""
    entries: List[CatalogEntry] = []
    for epsilon in epsilons:
        candidates = search_max_spark(field_spec, K, epsilon, budget, seed, workers=workers)
        if Scheme.MSLC in schemes:
            mslc = select_mslc(candidates)
            entries.append(CatalogEntry(
                q=field_spec.q, K=K, scheme=Scheme.MSLC, epsilon=epsilon, seed=seed, budget=budget,
                matrices=[_record(mslc)],
            ))
        if Scheme.OSPRLC in schemes:
            members = build_osprlc_set(field_spec, K, epsilon, budget, seed, candidates=candidates, workers=workers)
            entries.append(CatalogEntry(
                q=field_spec.q, K=K, scheme=Scheme.OSPRLC, epsilon=epsilon, seed=seed, budget=budget,
                matrices=[_record(P) for P in members],
            ))
        logger.info(f"Catalog entries for epsilon={epsilon} built ({', '.join(s.value for s in schemes)})")
    entries.sort(key=lambda e: (e.scheme.value, e.epsilon))
    return Catalog(q=field_spec.q, K=K, entries=entries)


def save_catalog(catalog: Catalog, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(catalog.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Catalog with {len(catalog.entries)} entries saved to {path}")
    return path


def verify_entry(entry: CatalogEntry):
    """Перепроверяет spark (ограниченным перебором подмножеств), PoE и баланс OS-PRLC."""
    field_spec = FieldSpec(entry.q)
    matrices = []
    for index, record in enumerate(entry.matrices):
        where = f"{entry.entry_id}/{index}"
        P = FqMatrix.from_rows(field_spec, record.entries())
        h_t = build_parity_check(SystematicCode.from_p(P)).T
        if record.spark == "unbounded":
            actual = spark_subset_search(h_t)
            if not actual.is_unbounded:
                raise CatalogError(f"{where}: stored spark 'unbounded', actual {actual}", entry_id=where)
        else:
            actual = spark_subset_search(h_t, cap=record.spark)
            if actual.value != record.spark:
                raise CatalogError(f"{where}: stored spark {record.spark}, actual {actual}", entry_id=where)
        stored_poe = record.poe_fractions()
        for delta in field_spec.elements():
            if stored_poe.get(delta) != poe_matrix(P, delta):
                raise CatalogError(f"{where}: stored PoE for delta={delta} does not match the matrix", entry_id=where)
        matrices.append(P)
    if entry.scheme == Scheme.OSPRLC:
        for delta in field_spec.elements():
            if poe_set(matrices, delta) != Fraction(1, field_spec.q):
                raise CatalogError(
                    f"{entry.entry_id}: set PoE for delta={delta} is {poe_set(matrices, delta)}, expected 1/{field_spec.q}",
                    entry_id=entry.entry_id,
                )


def load_catalog(path: Union[str, Path]) -> Catalog:
    path = Path(path)
    if not path.is_file():
        raise CatalogNotFound(f"Catalog file not found: {path}")
    try:
        catalog = Catalog.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        logger.error(f"Catalog {path} failed to parse: {e.error_count()} errors")
        raise CatalogError(f"Catalog {path} failed to parse: {e}", details=e.errors()) from e
    for entry in catalog.entries:
        verify_entry(entry)
    logger.info(f"Catalog {path} loaded and verified ({len(catalog.entries)} entries)")
    return catalog
