import matplotlib.pyplot as plt
import seaborn as sns

from ...utils.tables import table_compare

__all__ = ["training_compare"]


def _plot_curves(df, hue, plot_name, output_dir):

    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    sns.lineplot(data=df, x="epoch", y="train_loss", hue=hue, marker="o", ax=ax_loss)
    sns.lineplot(data=df, x="epoch", y="test_acc", hue=hue, marker="o", ax=ax_acc)

    # labels & ticks
    ax_loss.set_xlabel("Epoch")
    ax_loss.set_ylabel("Train loss")
    ax_loss.set_yscale("log")
    ax_acc.set_xlabel("Epoch")
    ax_acc.set_ylabel("Test accuracy")
    ax_acc.set_ylim(0, 1)

    # save
    fig.tight_layout()
    fig.savefig(
        f"{output_dir}/{plot_name}-training.png",
        bbox_inches="tight",
        dpi=300,
    )
    plt.close(fig)


def training_compare(results_dir, output_dir, task_str, **kwargs):

    # save combined csv
    df = table_compare(results_dir, output_dir, task_str, return_raw_data=True)
    if df.empty:
        return

    df = df.sort_values(["dataset", "run", "epoch"])

    # plot
    datasets = df["dataset"].unique()
    if len(datasets) == 1:
        _plot_curves(df, hue="run", plot_name="compare-runs", output_dir=output_dir)
    else:
        for dataset in datasets:
            dataset_df = df[df["dataset"] == dataset].reset_index(drop=True)
            _plot_curves(dataset_df, hue="run", plot_name=dataset, output_dir=output_dir)
