import gc
import logging
import time
from pathlib import Path
from typing import Optional

from .tasks.compare_registry import (
    _comparer_from_str,
    _config_from_manifest,
)
from .utils.directories import MANIFEST, create_results_dir

__all__ = ["run_experiments", "compare_results", "compare_task"]

logger = logging.getLogger(__name__)

BOLD = "\033[1m"
UNDERLINE = "\033[4m"
RESET = "\033[0m"


def compare_task(
    task_type: str, task_results_dir: str, output_dir: Optional[str] = None
):
    """
    Combine the per-run results files of one task.

    Writes ``combined-<task>-results.csv`` (and the task's plots, if any) to
    `output_dir`, defaulting to `task_results_dir`.
    """
    compare_fn = _comparer_from_str(task_type)
    output_dir = output_dir or task_results_dir
    logger.info("comparing %s results in %s", task_type, task_results_dir)
    compare_fn(results_dir=task_results_dir, output_dir=output_dir, task_str=task_type)


def _task_dirs(output_dir: str) -> list:
    # task directories are the ones holding a manifest
    found = []
    for folder in sorted(Path(output_dir).iterdir()):
        if folder.is_dir() and not folder.name.startswith("."):
            if (folder / MANIFEST).exists():
                found.append(_config_from_manifest(str(folder / MANIFEST)))
    return found


def compare_results(output_dir: Optional[str] = None, configs: Optional[list] = None):
    """
    Compare run results, either for every task directory found under
    `output_dir` (as laid out by `run_experiments`) or for the task
    directories of `configs`. Each task directory is compared once.
    """

    if bool(output_dir) == bool(configs):
        raise ValueError("Provide either `output_dir` or `configs`, but not both.")

    if output_dir:
        targets = [
            (task["task_type"], task["results_dir"], task["output_dir"])
            for task in _task_dirs(output_dir)
        ]
    else:
        targets = [
            (config.config_type, f"{config.output_dir}/results/", config.output_dir)
            for config in configs
        ]

    compared = set()
    for task_type, results_dir, task_output in targets:
        if task_output in compared:
            continue
        compared.add(task_output)
        compare_task(task_type, results_dir, task_output)


def _banner(itr: int, config) -> str:
    run = getattr(config, "resolved_run_name", None) or getattr(config, "run_name", None)
    label = f"{config.name} ({run})" if run else config.name
    return f"\n{UNDERLINE}Running Task #{itr}: {label}{RESET}"


def run_experiments(
    configs: list,
    shared_output_dir: str = "./results",
    generate_comparisons: bool = True,
    ignore_existing_files: bool = False,
) -> list:
    """
    Run task configs in order and return their results.

    Every config gets its task directory under `shared_output_dir`; runs of
    the same task share one directory. With `generate_comparisons`, each
    task's results are combined across runs afterwards.
    """

    # create output dirs
    create_results_dir(shared_output_dir, configs, ignore_existing_files)

    # run
    results = []
    for itr, config in enumerate(configs, 1):
        print(_banner(itr, config))
        start = time.perf_counter()
        results.append(config.runner(config))
        logger.info("%s finished in %.1f s", config.name, time.perf_counter() - start)

        # clean up memory
        gc.collect()

    # plot comparisons
    if generate_comparisons:
        print(f"\n{BOLD}Generating comparisons...{RESET}")
        compare_results(configs=configs)

    return results
