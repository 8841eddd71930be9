# sparkppr/models/experiment.py
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from sparkppr.core.config import settings
from sparkppr.models.channel import ChannelParams
from sparkppr.models.common import Decoder, Scheme

logger = logging.getLogger(__name__)


def _split(value: Any) -> List[str]:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value]
    return [str(value)]


def parse_n_range(value: Any) -> List[int]:
    """«12..16» -> [12, 13, 14, 15, 16]; «9,12,29» -> [9, 12, 29]."""
    result: List[int] = []
    for part in _split(value):
        if ".." in part:
            low, high = (int(x) for x in part.split("..", 1))
            if high < low:
                raise ValueError(f"N range {part!r} is empty")
            result.extend(range(low, high + 1))
        else:
            result.append(int(part))
    return result


class ExperimentConfig(BaseModel):
    """Одна серия Монте-Карло: схема, декодер, канал и диапазон N."""
    q: int = Field(2, ge=2)
    K: int = Field(..., ge=1)
    N_values: List[int] = Field(..., min_length=1)
    scheme: Scheme
    decoder: Decoder = Decoder.WITH_SD
    channel: ChannelParams
    trials: int = Field(..., ge=1)
    root_seed: int = Field(..., ge=0)
    catalog_path: Optional[Path] = None
    # None: w_max = N − N_R для каждой реализации
    w_max: Optional[int] = Field(None, ge=0)
    work_cap: int = Field(default_factory=lambda: settings.WORK_CAP, ge=1)
    crc_packed: bool = Field(default_factory=lambda: settings.CRC_PACKED_BITS)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_ranges(self) -> "ExperimentConfig":
        low = [n for n in self.N_values if n <= self.K]
        if low:
            raise ValueError(f"every N must exceed K={self.K}, got {low}")
        if len(set(self.N_values)) != len(self.N_values):
            raise ValueError("N values must be distinct")
        if self.scheme != Scheme.RLC and self.catalog_path is None:
            raise ValueError(f"scheme {self.scheme.value} needs a catalog path")
        if self.crc_packed and self.q != 2:
            raise ValueError("packed-bit CRC serialization is only defined for q=2")
        return self

    def fingerprint(self) -> str:
        """sha256 от всех параметров, влияющих на результат (без числа процессов)."""
        payload = self.model_dump_json(exclude={"workers"})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class RunConfig(BaseModel):
    """
    Плоский файл «ключ = значение» для команды simulate. Списки через запятую,
    N допускает диапазоны вида a..b. Неизвестные ключи отклоняются.
    """
    model_config = ConfigDict(extra="forbid")

    scheme: List[Scheme] = Field(..., min_length=1)
    decoder: List[Decoder] = Field(default_factory=lambda: [Decoder.PLAIN, Decoder.WITH_SD], min_length=1)
    q: int = Field(2, ge=2)
    K: int = Field(8, ge=1)
    N: List[int] = Field(..., min_length=1)
    M: int = Field(..., ge=1)
    eps: List[float] = Field(..., min_length=1)
    ps: float = Field(default_factory=lambda: settings.DEFAULT_SYMBOL_ERROR_PROB, gt=0.0, le=1.0)
    L: int = Field(default_factory=lambda: settings.DEFAULT_PAYLOAD_SYMBOLS, ge=1)
    trials: int = Field(..., ge=1)
    seed: Optional[int] = Field(None, ge=0)
    catalog: Optional[Path] = None
    out: Path = Path("results.csv")
    workers: int = Field(1, ge=1)
    w_max: Optional[int] = Field(None, ge=0)
    work_cap: int = Field(default_factory=lambda: settings.WORK_CAP, ge=1)
    crc_packed: bool = Field(default_factory=lambda: settings.CRC_PACKED_BITS)
    packet_dump: Optional[Path] = None

    @field_validator("scheme", "decoder", "eps", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> List[str]:
        return _split(value)

    @field_validator("N", mode="before")
    @classmethod
    def split_n(cls, value: Any) -> List[int]:
        return parse_n_range(value)

    @field_validator("w_max", "seed", "catalog", "packet_dump", mode="before")
    @classmethod
    def empty_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and not value.strip():
            return None
        return value

    @model_validator(mode="after")
    def broadcast_eps(self) -> "RunConfig":
        # Одно значение eps означает одинаковые каналы для всех M дронов
        if len(self.eps) == 1 and self.M > 1:
            self.eps = self.eps * self.M
        if len(self.eps) != self.M:
            raise ValueError(f"eps lists {len(self.eps)} values for M={self.M} drones")
        if any(s != Scheme.RLC for s in self.scheme) and self.catalog is None:
            raise ValueError("MSLC and OSPRLC schemes need a 'catalog' path")
        return self

    @classmethod
    def from_file(cls, path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """Читает файл через dotenv_values; относительные пути считаются от каталога файла."""
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Run config not found: {path}")
        raw: Dict[str, Any] = {k: v for k, v in dotenv_values(path).items() if v is not None}
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        config = cls.model_validate(raw)
        base = path.resolve().parent
        updates = {}
        for key in ("catalog", "out", "packet_dump"):
            value = getattr(config, key)
            if value is not None and not value.is_absolute():
                updates[key] = base / value
        logger.debug(f"Run config {path} parsed: {len(config.scheme)} schemes, N={config.N}")
        return config.model_copy(update=updates)

    def channel(self) -> ChannelParams:
        return ChannelParams(M=self.M, epsilons=self.eps, symbol_error_prob=self.ps, L=self.L)

    def experiment(self, scheme: Scheme, decoder: Decoder, seed: int) -> ExperimentConfig:
        return ExperimentConfig(
            q=self.q, K=self.K, N_values=self.N, scheme=scheme, decoder=decoder,
            channel=self.channel(), trials=self.trials, root_seed=seed,
            catalog_path=self.catalog if scheme != Scheme.RLC else None,
            w_max=self.w_max, work_cap=self.work_cap, crc_packed=self.crc_packed,
            workers=self.workers,
        )


class CurvePoint(BaseModel):
    N: int
    successes: int = Field(..., ge=0)
    trials: int = Field(..., ge=1)
    ci_low: float
    ci_high: float

    @computed_field(return_type=float)
    @property
    def p_decode(self) -> float:
        return self.successes / self.trials

    @model_validator(mode="after")
    def check_interval(self) -> "CurvePoint":
        if self.successes > self.trials:
            raise ValueError("successes exceed trials")
        p = self.successes / self.trials
        if not self.ci_low <= p <= self.ci_high:
            raise ValueError(f"interval [{self.ci_low}, {self.ci_high}] does not contain {p}")
        return self


class DecompositionPoint(BaseModel):
    """Вклад SD: спасённые реализации, где все решения столбцов сертифицированы, и остальные."""
    N: int
    trials: int = Field(..., ge=1)
    rescued_cond_met: int = Field(..., ge=0)
    rescued_cond_not_met: int = Field(..., ge=0)

    @computed_field(return_type=float)
    @property
    def p_cond_met(self) -> float:
        return self.rescued_cond_met / self.trials

    @computed_field(return_type=float)
    @property
    def p_cond_not_met(self) -> float:
        return self.rescued_cond_not_met / self.trials


# Порядок колонок CSV результатов
REPORT_COLUMNS = (
    "scheme", "decoder", "q", "K", "N", "M", "eps", "ps", "L", "trials",
    "p_decode", "ci_low", "ci_high", "p_cond_met", "p_cond_not_met", "seed",
)


def _sig6(value: float) -> str:
    return f"{value:.6g}"


class ReportRow(BaseModel):
    scheme: Scheme
    decoder: Decoder
    q: int
    K: int
    N: int
    M: int
    eps: List[float]
    ps: float
    L: int
    trials: int
    p_decode: float
    ci_low: float
    ci_high: float
    p_cond_met: Optional[float] = None
    p_cond_not_met: Optional[float] = None
    seed: int
    fingerprint: str

    def csv_values(self) -> List[str]:
        """Значения в порядке REPORT_COLUMNS; eps дронов через ';', пустые поля для plain."""
        return [
            self.scheme.value,
            self.decoder.value,
            str(self.q),
            str(self.K),
            str(self.N),
            str(self.M),
            ";".join(_sig6(e) for e in self.eps),
            _sig6(self.ps),
            str(self.L),
            str(self.trials),
            _sig6(self.p_decode),
            _sig6(self.ci_low),
            _sig6(self.ci_high),
            "" if self.p_cond_met is None else _sig6(self.p_cond_met),
            "" if self.p_cond_not_met is None else _sig6(self.p_cond_not_met),
            str(self.seed),
        ]
