# sparkppr/services/sim.py
"""
Монте-Карло: вероятность декодирования по N для обычного декодера и декодера с SD,
разложение вклада SD и доверительные интервалы Уилсона.
"""
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sparkppr.dependencies import MatrixProvider, get_p_provider
from sparkppr.models.common import Decoder
from sparkppr.models.experiment import (
    REPORT_COLUMNS,
    CurvePoint,
    DecompositionPoint,
    ExperimentConfig,
    ReportRow,
    RunConfig,
)
from sparkppr.services.code import SystematicCode
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix
from sparkppr.services.ppr import ReceptionState, compute_syndrome, decode, decode_plain, syndrome_from_errors
from sparkppr.services.relay import CrcSpec, Delivery, deliver, frame, transmit, write_packet_dump

logger = logging.getLogger(__name__)

# Реализаций в одном задании для пула процессов
BATCH_SIZE = 500


class SimulationError(Exception):
    def __init__(self, message="Simulation error", details=None):
        self.message = message
        self.details = details
        super().__init__(self.message)


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    N: int
    plain_success: bool
    sd_success: bool
    sd_invoked: bool
    nu: int
    n_corrupted: int
    # Битовые маски по столбцам: решён / решён с сертификатом единственности
    solved_mask: int
    certified_mask: int
    cond_met: bool
    false_accepts: int
    repair_correct: bool
    syndrome_mismatch: bool

    @property
    def rescued(self) -> bool:
        return self.sd_success and not self.plain_success


@dataclass
class PointTally:
    """Итоги по одному N, свёрнутые в порядке номеров реализаций."""
    N: int
    trials: int = 0
    plain_successes: int = 0
    sd_successes: int = 0
    rescued_cond_met: int = 0
    rescued_cond_not_met: int = 0
    false_accepts: int = 0
    syndrome_mismatches: int = 0
    plain_bitmap: bytearray = field(default_factory=bytearray)
    sd_bitmap: bytearray = field(default_factory=bytearray)
    outcomes: Optional[List[TrialOutcome]] = None

    def add(self, outcome: TrialOutcome):
        if outcome.trial != self.trials:
            raise SimulationError(f"Trial {outcome.trial} folded out of order at N={self.N}")
        self.trials += 1
        self.plain_successes += outcome.plain_success
        self.sd_successes += outcome.sd_success
        if outcome.rescued:
            if outcome.cond_met:
                self.rescued_cond_met += 1
            else:
                self.rescued_cond_not_met += 1
        self.false_accepts += outcome.false_accepts
        self.syndrome_mismatches += outcome.syndrome_mismatch
        self.plain_bitmap.append(outcome.plain_success)
        self.sd_bitmap.append(outcome.sd_success)
        if self.outcomes is not None:
            self.outcomes.append(outcome)

    def successes(self, decoder: Decoder) -> int:
        return self.plain_successes if decoder == Decoder.PLAIN else self.sd_successes


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    points: Dict[int, PointTally]


def trial_rng(root_seed: int, N: int, trial: int) -> np.random.Generator:
    """Независимый поток для (seed, N, номер реализации); не зависит от порядка выполнения."""
    return np.random.default_rng([root_seed, N, trial])


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    if trials < 1:
        raise SimulationError("Wilson interval needs at least one trial")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    margin = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # Ошибки округления не должны выталкивать p за границы интервала
    return min(max(0.0, center - margin), p), max(min(1.0, center + margin), p)


# --- Одна реализация ---

def deliver_trial(
    config: ExperimentConfig,
    N: int,
    rng: np.random.Generator,
    provider: MatrixProvider,
) -> Tuple[SystematicCode, FqMatrix, Delivery, CrcSpec]:
    """P по схеме, случайные U, кодирование X = G·U, кадры, рассылка дронам и выбор копий."""
    field_spec = FieldSpec(config.q)
    P = provider(N - config.K, rng)
    code = SystematicCode(field_spec, config.K, N, P)
    U = FqMatrix.random(field_spec, config.K, config.channel.L, rng)
    X = code.generator() @ U
    crc_spec = CrcSpec(config.q, config.crc_packed)
    buffers = transmit(frame(X, crc_spec), config.channel, rng, field_spec)
    delivery = deliver(buffers, rng, crc_spec)
    return code, X, delivery, crc_spec


def run_trial(
    config: ExperimentConfig,
    N: int,
    rng: np.random.Generator,
    provider: Optional[MatrixProvider] = None,
    trial: int = 0,
) -> TrialOutcome:
    """
    Оба декодера работают с одним и тем же принятым Y. При decoder=plain шаг SD
    не выполняется и исход с SD совпадает с обычным.
    """
    provider = provider or get_p_provider(config)
    code, X, delivery, crc_spec = deliver_trial(config, N, rng, provider)
    state = ReceptionState.from_delivery(code, delivery, crc_spec)

    syndrome_mismatch = False
    if delivery.Rbar and not delivery.false_accepts:
        E_Rbar = (delivery.Y - X).take_rows(delivery.Rbar)
        if compute_syndrome(code, delivery.Y) != syndrome_from_errors(code, delivery.Rbar, E_Rbar):
            syndrome_mismatch = True
            logger.warning(f"Syndrome from Y differs from the syndrome of the planted errors (N={N}, trial {trial})")

    plain = decode_plain(state)
    with_sd = plain
    if config.decoder == Decoder.WITH_SD:
        with_sd = decode(state, w_max=config.w_max, work_cap=config.work_cap, truth=X, plain=plain)

    outcome = with_sd.outcome
    repair_correct = True
    if outcome is not None and outcome.repaired_indices:
        repair_correct = outcome.false_accepts == 0
    return TrialOutcome(
        trial=trial,
        N=N,
        plain_success=plain.success,
        sd_success=with_sd.success,
        sd_invoked=with_sd.sd_invoked,
        nu=with_sd.nu,
        n_corrupted=len(delivery.Rbar),
        solved_mask=outcome.solved_mask if outcome else 0,
        certified_mask=outcome.certified_mask if outcome else 0,
        cond_met=bool(outcome is not None and with_sd.success and outcome.all_used_certified),
        false_accepts=len(delivery.false_accepts) + (outcome.false_accepts if outcome else 0),
        repair_correct=repair_correct,
        syndrome_mismatch=syndrome_mismatch,
    )


def _run_batch(config: ExperimentConfig, N: int, start: int, stop: int) -> List[TrialOutcome]:
    provider = get_p_provider(config)
    return [run_trial(config, N, trial_rng(config.root_seed, N, t), provider, trial=t) for t in range(start, stop)]


# --- Серии ---

def run_experiment(config: ExperimentConfig, keep_outcomes: bool = False) -> ExperimentResult:
    """
    Все реализации для каждого N; из одних и тех же парных исходов получаются
    кривые обоих декодеров и разложение вклада SD.
    """
    get_p_provider(config)  # каталог проверяется до запуска пула
    batches = [(s, min(s + BATCH_SIZE, config.trials)) for s in range(0, config.trials, BATCH_SIZE)]
    pool = ProcessPoolExecutor(max_workers=config.workers) if config.workers > 1 and len(batches) > 1 else None
    points: Dict[int, PointTally] = {}
    try:
        for N in sorted(config.N_values):
            points[N] = _fold_point(config, N, batches, pool, keep_outcomes)
    finally:
        if pool is not None:
            pool.shutdown()
    return ExperimentResult(config, points)


def _fold_point(config: ExperimentConfig, N: int, batches: List[Tuple[int, int]], pool: Optional[ProcessPoolExecutor], keep_outcomes: bool) -> PointTally:
    tally = PointTally(N, outcomes=[] if keep_outcomes else None)
    if pool is None:
        chunks = (_run_batch(config, N, start, stop) for start, stop in batches)
    else:
        futures = [pool.submit(_run_batch, config, N, start, stop) for start, stop in batches]
        # Свёртка строго по порядку батчей
        chunks = (future.result() for future in futures)
    for chunk in chunks:
        for outcome in chunk:
            tally.add(outcome)
    logger.info(
        f"{config.scheme.value} N={N}: plain {tally.plain_successes}/{tally.trials}, "
        f"with SD {tally.sd_successes}/{tally.trials}"
    )
    if tally.syndrome_mismatches:
        logger.warning(f"{tally.syndrome_mismatches} syndrome mismatches at N={N}")
    return tally


def estimate_curve(config: ExperimentConfig, result: Optional[ExperimentResult] = None) -> List[CurvePoint]:
    result = result or run_experiment(config)
    curve = []
    for N in sorted(result.points):
        tally = result.points[N]
        successes = tally.successes(config.decoder)
        low, high = wilson_interval(successes, tally.trials)
        curve.append(CurvePoint(N=N, successes=successes, trials=tally.trials, ci_low=low, ci_high=high))
    return curve


def decompose_sd_contribution(config: ExperimentConfig, result: Optional[ExperimentResult] = None) -> List[DecompositionPoint]:
    """
    Реализации, где обычный декодер не справился, а с SD получилось: «условие выполнено»,
    если все использованные решения столбцов сертифицированы как единственные.
    """
    if config.decoder != Decoder.WITH_SD:
        raise SimulationError("SD decomposition needs decoder=with_SD")
    result = result or run_experiment(config)
    return [
        DecompositionPoint(
            N=N,
            trials=result.points[N].trials,
            rescued_cond_met=result.points[N].rescued_cond_met,
            rescued_cond_not_met=result.points[N].rescued_cond_not_met,
        )
        for N in sorted(result.points)
    ]


def summarize(results: Sequence[Tuple[ExperimentConfig, ExperimentResult]]) -> List[ReportRow]:
    """Плоские строки отчёта в порядке входа, внутри по возрастанию N."""
    if not results:
        raise SimulationError("Nothing to summarize")
    rows: List[ReportRow] = []
    for config, result in results:
        if not result.points:
            raise SimulationError(f"Experiment {config.scheme.value}/{config.decoder.value} has no N values")
        curve = estimate_curve(config, result)
        decomposition = decompose_sd_contribution(config, result) if config.decoder == Decoder.WITH_SD else None
        fingerprint = config.fingerprint()
        for index, point in enumerate(curve):
            split = decomposition[index] if decomposition else None
            rows.append(ReportRow(
                scheme=config.scheme,
                decoder=config.decoder,
                q=config.q,
                K=config.K,
                N=point.N,
                M=config.channel.M,
                eps=config.channel.epsilons,
                ps=config.channel.symbol_error_prob,
                L=config.channel.L,
                trials=point.trials,
                p_decode=point.p_decode,
                ci_low=point.ci_low,
                ci_high=point.ci_high,
                p_cond_met=split.p_cond_met if split else None,
                p_cond_not_met=split.p_cond_not_met if split else None,
                seed=config.root_seed,
                fingerprint=fingerprint,
            ))
    return rows


def write_csv(rows: Sequence[ReportRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_values())
    logger.info(f"{len(rows)} result rows written to {path}")
    return path


def simulate(run_config: RunConfig, seed: int) -> List[ReportRow]:
    """
    Полный прогон конфигурации: одна серия на схему, строки для каждого запрошенного
    декодера; при packet_dump сохраняет принятые пакеты первой реализации.
    """
    results: List[Tuple[ExperimentConfig, ExperimentResult]] = []
    # одна серия на схему; SD прогоняется, только если его результаты запрошены
    paired = Decoder.WITH_SD if Decoder.WITH_SD in run_config.decoder else Decoder.PLAIN
    for scheme in run_config.scheme:
        base = run_config.experiment(scheme, paired, seed)
        logger.info(f"Simulating {scheme.value}: N={run_config.N}, {run_config.trials} trials, seed {seed}")
        result = run_experiment(base)
        for decoder in run_config.decoder:
            config = run_config.experiment(scheme, decoder, seed)
            results.append((config, ExperimentResult(config, result.points)))

    if run_config.packet_dump is not None:
        first = run_config.experiment(run_config.scheme[0], Decoder.WITH_SD, seed)
        N = min(first.N_values)
        _, _, delivery, crc_spec = deliver_trial(first, N, trial_rng(seed, N, 0), get_p_provider(first))
        write_packet_dump(run_config.packet_dump, delivery.packets, crc_spec)
    return summarize(results)
