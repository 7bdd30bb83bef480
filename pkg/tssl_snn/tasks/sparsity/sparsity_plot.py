from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from ...utils.tables import table_compare

__all__ = ["sparsity_compare"]


def _plot_histogram(df, hue, plot_name, output_dir):

    # plot
    plt.figure(figsize=(6, 4))
    sns.barplot(data=df, x="spikes", y="fraction", hue=hue, saturation=1)

    # labels & ticks
    plt.xlabel("Spikes per neuron")
    plt.ylabel("Fraction of neurons")
    plt.ylim(0, 1)

    # save
    plt.tight_layout()
    plt.savefig(
        f"{output_dir}/{plot_name}-sparsity.png",
        bbox_inches="tight",
        dpi=300,
    )
    plt.close()


def sparsity_compare(results_dir, output_dir, task_str, **kwargs):

    # save combined csv
    table_compare(results_dir, output_dir, task_str)

    # pooled histograms of every run
    files = sorted(Path(output_dir).glob("*-histogram.csv"))
    if not files:
        return
    df = pd.concat([pd.read_csv(f) for f in files], ignore_index=True)
    df = df[df["layer"] == "overall"]

    datasets = df["dataset"].unique()
    if len(datasets) == 1:
        _plot_histogram(df, hue="run", plot_name="compare-runs", output_dir=output_dir)
    else:
        for dataset in datasets:
            dataset_df = df[df["dataset"] == dataset].reset_index(drop=True)
            _plot_histogram(dataset_df, hue="run", plot_name=dataset, output_dir=output_dir)
