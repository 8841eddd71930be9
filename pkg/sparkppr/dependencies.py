# sparkppr/dependencies.py
import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from sparkppr.models.catalog import Catalog
from sparkppr.models.common import Scheme
from sparkppr.models.experiment import ExperimentConfig
from sparkppr.services.design import CatalogError, MissingCatalogEntry, load_catalog, sample_design
from sparkppr.services.fqlinalg import FieldSpec, FqMatrix

# Инициализируем логгер
logger = logging.getLogger(__name__)


class MatrixProvider(Protocol):
    """Выдаёт матрицу P (ε×K) для одной реализации."""
    def __call__(self, epsilon: int, rng: np.random.Generator) -> FqMatrix: ...


class RandomMatrixProvider:
    """RLC: элементы P независимы и равномерны на F_q; каталог не нужен."""

    def __init__(self, field_spec: FieldSpec, K: int):
        self.field = field_spec
        self.K = K

    def __call__(self, epsilon: int, rng: np.random.Generator) -> FqMatrix:
        return FqMatrix.random(self.field, epsilon, self.K, rng)


class CatalogMatrixProvider:
    """MS-LC / OS-PRLC: P берётся из набора Q^(ε) каталога."""

    def __init__(self, catalog: Catalog, scheme: Scheme):
        self.catalog = catalog
        self.scheme = scheme

    def __call__(self, epsilon: int, rng: np.random.Generator) -> FqMatrix:
        return sample_design(self.catalog, self.scheme, epsilon, rng)


@lru_cache(maxsize=8)
def get_catalog(path: Path) -> Catalog:
    """Каталог загружается и проверяется один раз на процесс."""
    return load_catalog(path)


def get_p_provider(config: ExperimentConfig, catalog: Optional[Catalog] = None) -> MatrixProvider:
    """
    Провайдер P для схемы из config. Для каталожных схем заранее проверяет,
    что каталог подходит по (q, K) и покрывает все нужные ε = N − K.
    """
    field_spec = FieldSpec(config.q)
    if config.scheme == Scheme.RLC:
        return RandomMatrixProvider(field_spec, config.K)

    if catalog is None:
        catalog = get_catalog(Path(config.catalog_path))
    if (catalog.q, catalog.K) != (config.q, config.K):
        raise CatalogError(
            f"Catalog is for (q, K) = ({catalog.q}, {catalog.K}), experiment needs ({config.q}, {config.K})"
        )
    needed = max(config.N_values) - config.K
    available = catalog.max_epsilon(config.scheme)
    if available < needed:
        logger.error(f"Catalog covers {config.scheme.value} up to epsilon={available}, experiment needs {needed}")
        raise MissingCatalogEntry(
            f"Catalog has no {config.scheme.value} entry for epsilon={available + 1}",
            entry_id=f"{config.scheme.value}/{available + 1}",
        )
    return CatalogMatrixProvider(catalog, config.scheme)
