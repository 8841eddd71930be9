# sparkppr/core/config.py
import logging
from typing import Optional

from dotenv import load_dotenv
from pydantic import computed_field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    PROJECT_NAME: str = "sparkppr"
    LOGGING_LEVEL: str = "INFO"

    # --- Воспроизводимость ---
    # Запасной seed для всех команд CLI, если --seed не передан
    SPARKPPR_SEED: Optional[int] = None

    # --- Канал и пакеты ---
    DEFAULT_SYMBOL_ERROR_PROB: float = 0.05
    DEFAULT_PAYLOAD_SYMBOLS: int = 64
    CRC_PACKED_BITS: bool = False

    # --- Поиск кодов ---
    DEFAULT_SEARCH_BUDGET: int = 1_000_000
    RESTART_BUDGET: int = 20_000
    OSPRLC_SET_SIZE: int = 2
    MAX_CODEWORD_ENUMERATION: int = 2 ** 24

    # --- Декодирование ---
    WORK_CAP: int = 10_000_000

    # --- Параллелизм ---
    WORKERS: int = 1

    @computed_field(return_type=int)
    @property
    def EFFECTIVE_WORKERS(self) -> int:
        """Число процессов, которое реально используется (не меньше 1)."""
        return max(1, self.WORKERS)

    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore'
    )


settings = Settings()
# Проверки при старте: только предупреждения, запуск не прерываем
if settings.WORKERS < 1:
    logger.warning(f"WORKERS={settings.WORKERS} is invalid, falling back to a single worker.")
if not 0.0 < settings.DEFAULT_SYMBOL_ERROR_PROB <= 1.0:
    logger.warning(f"DEFAULT_SYMBOL_ERROR_PROB={settings.DEFAULT_SYMBOL_ERROR_PROB} is outside (0, 1].")
if settings.RESTART_BUDGET < 1:
    logger.warning("RESTART_BUDGET must be positive; the search will use one evaluation per restart.")
