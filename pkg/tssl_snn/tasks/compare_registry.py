from pathlib import Path
from typing import Callable, Dict

import yaml

__all__ = ["register_comparer", "CONFIG_COMPARER_REGISTRY"]

CONFIG_COMPARER_REGISTRY: Dict[str, Callable] = {}


def register_comparer(task_name: str, comparer_func: Callable):
    """
    Registers a comparer function for a specific task.
    """
    CONFIG_COMPARER_REGISTRY[task_name] = comparer_func


def _comparer_from_str(task_str: str):
    """
    Loads the comparer based on task string.
    """
    if task_str not in CONFIG_COMPARER_REGISTRY.keys():
        valid_tasks = ", ".join(CONFIG_COMPARER_REGISTRY.keys())
        raise ValueError(f"The task string must be one of the following: {valid_tasks}")
    return CONFIG_COMPARER_REGISTRY[task_str]


def _config_from_manifest(path: str):
    with open(path, "r") as f:
        manifest = yaml.safe_load(f) or {}

    output_dir = manifest.get("output_dir") or str(Path(path).parent)
    return {
        "task_type": manifest["task_type"],
        "output_dir": output_dir,
        "results_dir": f"{output_dir}/results/",
    }
