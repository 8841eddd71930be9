# run_experiments.py
import logging
import sys
from pathlib import Path

from sparkppr.core.config import settings
from sparkppr.models.common import Scheme
from sparkppr.models.experiment import RunConfig
from sparkppr.services.design import CatalogNotFound, build_catalog, load_catalog, save_catalog
from sparkppr.services.fqlinalg import FieldSpec
from sparkppr.services.sim import simulate, write_csv

# Настраиваем логирование так же, как в main.py
log_level = settings.LOGGING_LEVEL.upper()
logging.basicConfig(
    level=log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
logging.getLogger("numba").setLevel(logging.WARNING)

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parent
CONFIG_DIR = ROOT / "configs"
DEFAULT_SEED = 2024


def ensure_catalog(path: Path, q: int, K: int, max_epsilon: int, seed: int):
    """Каталог строится только если его нет или он не покрывает нужные ε."""
    try:
        catalog = load_catalog(path)
        if all(catalog.max_epsilon(s) >= max_epsilon for s in (Scheme.MSLC, Scheme.OSPRLC)):
            logger.info(f"Catalog {path} is up to date")
            return
        logger.warning(f"Catalog {path} covers fewer than {max_epsilon} redundancy levels, rebuilding...")
    except CatalogNotFound:
        logger.info(f"Catalog {path} not found, building it...")
    path.parent.mkdir(parents=True, exist_ok=True)
    catalog = build_catalog(
        FieldSpec(q), K, range(1, max_epsilon + 1), [Scheme.MSLC, Scheme.OSPRLC],
        settings.DEFAULT_SEARCH_BUDGET, seed, workers=settings.EFFECTIVE_WORKERS,
    )
    save_catalog(catalog, path)


def run_all():
    """
    Прогоняет все конфигурации из configs/: при необходимости строит каталог,
    затем пишет CSV для каждой конфигурации.
    """
    configs = sorted(CONFIG_DIR.glob("*.conf"))
    if not configs:
        logger.error(f"No run configs in {CONFIG_DIR}")
        return 2
    logger.info(f"{settings.PROJECT_NAME}: {len(configs)} run configs in {CONFIG_DIR}")
    for config_path in configs:
        run_config = RunConfig.from_file(config_path)
        seed = run_config.seed if run_config.seed is not None else (settings.SPARKPPR_SEED or DEFAULT_SEED)
        if run_config.catalog is not None:
            ensure_catalog(run_config.catalog, run_config.q, run_config.K, max(run_config.N) - run_config.K, seed)
        logger.info(f"Running {config_path.name} with seed {seed}...")
        rows = simulate(run_config, seed)
        run_config.out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(rows, run_config.out)
    logger.info("All experiments finished.")
    return 0


if __name__ == "__main__":
    try:
        code = run_all()
    except KeyboardInterrupt:
        logger.info("Experiments stopped by user.")
        code = 130
    sys.exit(code)
