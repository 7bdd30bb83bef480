from pathlib import Path

import pandas as pd

from .data import load_reference_data

__all__ = ["table_compare", "run_and_dataset"]


def run_and_dataset(path, task_str: str) -> tuple[str, str]:
    """Split a ``{run}_{dataset}-{task}.csv`` results file name."""
    stem = Path(path).stem.removesuffix(f"-{task_str}")
    run, _, dataset = stem.rpartition("_")
    return (run, dataset) if run else (dataset, "")


def _load(path, task_str):
    df = load_reference_data(str(path))
    run, dataset = run_and_dataset(path, task_str)
    if "run" not in df.columns:
        df.insert(0, "run", run)
    if "dataset" not in df.columns:
        df.insert(1, "dataset", dataset)
    return df


def _combine_stats(paths, task_str):
    # read all results files and combine
    df = pd.concat([_load(path, task_str) for path in paths], ignore_index=True)

    # epochs and timings do not aggregate
    stats = df.drop(columns=[c for c in ("epoch", "wall_ms") if c in df.columns])

    # get means and errors
    means = stats.groupby(["run", "dataset"]).mean(numeric_only=True)
    sems = stats.groupby(["run", "dataset"]).sem(numeric_only=True)

    # exclude sem if it is None
    def format_value(mean, sem):
        if pd.notna(sem):
            return f"{mean:.4f} (± {sem:.4f})"
        return f"{mean:.4f}"

    # combine in a readable table format
    combined = means.copy()
    for col in means.columns:
        combined[col] = means[col].combine(sems[col], format_value)

    return df, combined


def table_compare(
    results_dir, output_dir, task_str, return_raw_data: bool = False, **kwargs
):
    # combine raw results files
    extensions = [f"*{task_str}.csv", f"*{task_str}.parquet"]
    files = sorted(f for ext in extensions for f in Path(results_dir).glob(ext))
    if not files:
        return pd.DataFrame() if return_raw_data else None
    raw_results, combined_df = _combine_stats(files, task_str)

    # save
    combined_df.to_csv(
        f"{output_dir}/combined-{task_str}-results.csv",
        index=True,  # run name & dataset are the indices
    )

    if return_raw_data:
        return raw_results
