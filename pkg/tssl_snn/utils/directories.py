import pathlib
from typing import Optional

import yaml

from .. import __version__

__all__ = ["create_results_dir", "prepare_task_dir", "record_run", "read_manifest", "find_run_config"]

MANIFEST = "manifest.yaml"


def _check_dir(path: pathlib.Path):
    """
    Raise exception if the given directory or any of its subdirectories contain files.
    """
    if path.exists() and any(p.is_file() for p in path.rglob("*")):
        raise Exception(f"The directory '{path}' exists and is not empty!")


def read_manifest(task_path) -> dict:
    path = pathlib.Path(task_path) / MANIFEST
    if not path.exists():
        return {}
    with open(path) as f:
        return yaml.safe_load(f) or {}


def _write_manifest(task_path: pathlib.Path, manifest: dict):
    with open(task_path / MANIFEST, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=False, default_flow_style=None)


def prepare_task_dir(config, base_dir: str = "./results", ignore_existing: bool = True):
    """
    Create ``<base_dir>/<task_dir>/`` with its ``results/`` subdirectory and
    manifest, unless the config already points at an output directory.
    """
    if config.output_dir is None:
        config.output_dir = str(pathlib.Path(base_dir) / config.task_dir)
    task_path = pathlib.Path(config.output_dir)
    if not ignore_existing:
        _check_dir(task_path)
    task_path.mkdir(parents=True, exist_ok=True)
    (task_path / "results").mkdir(exist_ok=True)

    manifest = read_manifest(task_path)
    manifest.setdefault("task_type", config.config_type)
    manifest["output_dir"] = str(task_path)
    manifest["version"] = __version__
    manifest.setdefault("runs", {})
    _write_manifest(task_path, manifest)
    return task_path


def create_results_dir(output_dir: str, configs: list, ignore_existing: bool):
    """
    Create directory structure for results.
    """
    # base directory
    output_path = pathlib.Path(output_dir)
    output_path.mkdir(exist_ok=True)

    # several runs may share one task directory
    task_paths = {output_path / config.task_dir for config in configs}
    if not ignore_existing:
        for path in task_paths:
            _check_dir(path)

    # task directories
    for config in configs:
        config.output_dir = str(output_path / config.task_dir)
        prepare_task_dir(config, output_dir)


def record_run(task_path, run_name: str, entry: dict):
    """Add or replace one run's entry in the task manifest."""
    task_path = pathlib.Path(task_path)
    manifest = read_manifest(task_path)
    manifest.setdefault("runs", {})[run_name] = entry
    _write_manifest(task_path, manifest)


def find_run_config(checkpoint_path) -> Optional[dict]:
    """
    Resolved config of the training run that wrote `checkpoint_path`.

    Checkpoints live at ``<task_dir>/checkpoints/<run>/epoch-NNN.ckpt``.
    """
    path = pathlib.Path(checkpoint_path).resolve()
    run_name = path.parent.name
    manifest = read_manifest(path.parent.parent.parent)
    run = manifest.get("runs", {}).get(run_name)
    return None if run is None else run.get("config")
