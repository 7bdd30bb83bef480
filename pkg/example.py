from tssl_snn import (
    EvalConfig,
    GradcheckConfig,
    RunConfig,
    SparsityConfig,
    compare_results,
    compare_task,
    run_experiments,
)


def main():
    shared_output_dir = "./results"

    # train two seeds of the same network
    # please see the config docstrings for more information about the config parameters
    train_configs = [
        RunConfig.from_file("configs/mnist_mlp.toml", seed=0),
        RunConfig.from_file("configs/mnist_mlp.toml", seed=1),
    ]
    runs = run_experiments(
        train_configs,
        shared_output_dir,
        generate_comparisons=True,
        ignore_existing_files=True,
    )

    # inspect the trained checkpoints
    configs = [GradcheckConfig(case="all")]
    for run in runs:
        configs += [
            EvalConfig(checkpoint=run.checkpoint, n_samples=1000),
            SparsityConfig(checkpoint=run.checkpoint, n_samples=100),
        ]
    run_experiments(
        configs,
        shared_output_dir,
        generate_comparisons=True,
        ignore_existing_files=True,
    )

    ## if needed, you can regenerate comparisons as follows:
    # for all tasks
    compare_results(output_dir=shared_output_dir)
    # for a single task
    compare_task(
        task_type="training",
        task_results_dir=f"{shared_output_dir}/training/results/",
        output_dir=f"{shared_output_dir}/training/",
    )


if __name__ == "__main__":
    main()
