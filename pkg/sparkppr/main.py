# sparkppr/main.py
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Callable, List, Optional

import click
from pydantic import ValidationError

from sparkppr.core.config import settings
from sparkppr.models.catalog import Catalog
from sparkppr.models.common import Scheme
from sparkppr.models.experiment import RunConfig, parse_n_range
from sparkppr.services.code import spark_subset_search
from sparkppr.services.design import (
    CatalogError,
    CatalogNotFound,
    DesignError,
    MissingCatalogEntry,
    build_catalog,
    save_catalog,
)
from sparkppr.services.fqlinalg import FieldError, FieldSpec, FqMatrix, MatrixFormatError
from sparkppr.services.sim import SimulationError, simulate, write_csv

# --- Настройка логирования ---
log_level = settings.LOGGING_LEVEL.upper()
logging.basicConfig(
    level=log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
logging.getLogger("numba").setLevel(logging.WARNING)
logging.getLogger("galois").setLevel(logging.WARNING)

logger = logging.getLogger(__name__)

# --- Коды выхода ---
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_DESIGN = 3
EXIT_MISSING_ARTIFACT = 4


def _fail(code: int, message: str):
    click.echo(f"Error: {message}", err=True)
    sys.exit(code)


def _guarded(action: Callable[[], None]):
    """Переводит ошибки сервисов в стабильные коды выхода."""
    try:
        action()
    except (CatalogNotFound, MissingCatalogEntry) as e:
        _fail(EXIT_MISSING_ARTIFACT, e.message)
    except DesignError as e:
        _fail(EXIT_DESIGN, e.message)
    except MatrixFormatError as e:
        _fail(EXIT_USAGE, e.message)
    except ValidationError as e:
        _fail(EXIT_USAGE, f"invalid configuration: {e}")
    except (CatalogError, FieldError, SimulationError, FileNotFoundError, ValueError) as e:
        _fail(EXIT_USAGE, getattr(e, "message", str(e)))
    except click.ClickException:
        raise
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        _fail(EXIT_UNEXPECTED, f"unexpected failure: {e}")


def _resolve_seed(*candidates: Optional[int]) -> int:
    for seed in (*candidates, settings.SPARKPPR_SEED):
        if seed is not None:
            if seed < 0:
                raise click.BadParameter(f"seed must be non-negative, got {seed}", param_hint="--seed")
            return seed
    raise click.UsageError("No seed given: pass --seed, set 'seed' in the config or SPARKPPR_SEED")


def _parse_schemes(value: str) -> List[Scheme]:
    try:
        schemes = [Scheme(part.strip().upper()) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--scheme") from e
    if not schemes or Scheme.RLC in schemes:
        raise click.BadParameter("expected MSLC and/or OSPRLC", param_hint="--scheme")
    return schemes


def format_design_summary(catalog: Catalog) -> List[str]:
    """Сводка каталога по строкам: N, доля единиц (или ненулевого δ), spark / низший-высший."""
    lines = [f"{'scheme':<8}{'N':>4}{'eps':>5}{'poe(1)':>10}{'spark':>8}{'lowest':>8}{'highest':>8}"]
    for entry in sorted(catalog.entries, key=lambda e: (e.scheme.value, e.epsilon)):
        sparks = [r.spark for r in entry.matrices]
        numeric = [s for s in sparks if isinstance(s, int)]
        poe = sum((r.poe_fractions()[1] for r in entry.matrices), Fraction(0)) / len(entry.matrices)
        low = str(min(numeric)) if numeric else "unbounded"
        high = "unbounded" if len(numeric) < len(sparks) else str(max(numeric))
        spark = high if entry.scheme == Scheme.MSLC else "-"
        lines.append(
            f"{entry.scheme.value:<8}{entry.K + entry.epsilon:>4}{entry.epsilon:>5}"
            f"{float(poe):>10.4f}{spark:>8}{low:>8}{high:>8}"
        )
    return lines


@click.group()
def cli():
    """Spark-оптимизированные систематические коды и PPR-декодирование: поиск, spark, симуляция."""


@cli.command("design")
@click.option("--q", "q", type=int, default=2, show_default=True, help="Порядок простого поля.")
@click.option("--k", "K", type=int, default=8, show_default=True, help="Число исходных пакетов K.")
@click.option("--eps", "eps_range", default="1..10", show_default=True, help="Диапазон избыточности, например 1..10.")
@click.option("--scheme", default="MSLC,OSPRLC", show_default=True, help="MSLC, OSPRLC или оба через запятую.")
@click.option("--budget", type=int, default=None, help="Бюджет оценок поиска на каждое ε.")
@click.option("--seed", type=int, default=None, help="Seed поиска (иначе SPARKPPR_SEED).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Файл каталога (JSON).")
@click.option("--workers", type=int, default=None, help="Процессов для перезапусков поиска.")
def cmd_design(q: int, K: int, eps_range: str, scheme: str, budget: Optional[int], seed: Optional[int], out_path: Optional[Path], workers: Optional[int]):
    """Строит и сохраняет каталог матриц P для диапазона ε, печатает сводку."""
    def action():
        try:
            epsilons = parse_n_range(eps_range)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--eps") from e
        if not epsilons or min(epsilons) != 1 or epsilons != list(range(1, max(epsilons) + 1)):
            raise click.BadParameter(f"expected a contiguous range starting at 1, got {eps_range!r}", param_hint="--eps")
        if K < 1:
            raise click.BadParameter("K must be positive", param_hint="--k")
        search_budget = budget if budget is not None else settings.DEFAULT_SEARCH_BUDGET
        if search_budget < 1:
            raise click.BadParameter("budget must be positive", param_hint="--budget")
        run_seed = _resolve_seed(seed)
        schemes = _parse_schemes(scheme)
        field_spec = FieldSpec(q)
        catalog = build_catalog(
            field_spec, K, epsilons, schemes, search_budget, run_seed,
            workers=workers or settings.EFFECTIVE_WORKERS,
        )
        target = out_path or Path(f"catalog_q{q}_K{K}.json")
        save_catalog(catalog, target)
        for line in format_design_summary(catalog):
            click.echo(line)
        click.echo(f"catalog: {target} (seed {run_seed}, budget {search_budget})")

    _guarded(action)


@cli.command("spark")
@click.argument("matrix_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def cmd_spark(matrix_path: Path):
    """Печатает spark матрицы и номера (с 1) столбцов одного зависимого набора."""
    def action():
        matrix = FqMatrix.from_text(matrix_path.read_text(encoding="utf-8"))
        spark = spark_subset_search(matrix)
        click.echo(str(spark))
        if spark.is_exact:
            click.echo("witness: " + " ".join(str(j + 1) for j in spark.witness))

    _guarded(action)


@cli.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Файл «ключ = значение».")
@click.option("--seed", type=int, default=None, help="Корневой seed (иначе seed из файла или SPARKPPR_SEED).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="CSV с результатами.")
@click.option("--workers", type=int, default=None, help="Процессов для реализаций.")
@click.option("--trials", type=int, default=None, help="Переопределяет trials из файла.")
def cmd_simulate(config_path: Path, seed: Optional[int], out_path: Optional[Path], workers: Optional[int], trials: Optional[int]):
    """Считает кривые вероятности декодирования и вклад SD, пишет CSV."""
    def action():
        run_config = RunConfig.from_file(config_path, overrides={"trials": trials, "workers": workers})
        run_seed = _resolve_seed(seed, run_config.seed)
        rows = simulate(run_config, run_seed)
        target = write_csv(rows, out_path or run_config.out)
        for row in rows:
            cond = ""
            if row.p_cond_met is not None:
                cond = f"  cond met {row.p_cond_met:.4f} / not met {row.p_cond_not_met:.4f}"
            click.echo(
                f"{row.scheme.value:<7}{row.decoder.value:<8} N={row.N:<3} p={row.p_decode:.4f} "
                f"[{row.ci_low:.4f}, {row.ci_high:.4f}]{cond}"
            )
        fingerprints = sorted({row.fingerprint[:12] for row in rows})
        click.echo(f"results: {target} (seed {run_seed}, config {', '.join(fingerprints)})")

    _guarded(action)


if __name__ == "__main__":
    cli()
