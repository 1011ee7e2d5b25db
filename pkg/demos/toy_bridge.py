"""Smallest end-to-end run: one bridge between two 1-d Gaussians.

Trains for a few seconds, then prints the evaluation report and the first
simulated trajectories. A good smoke test that the install works.
"""

import numpy as np

from mmbridge import (
    MarginalDataset,
    ReferenceConfig,
    RunConfig,
    SampleBatch,
    TimeGrid,
    TrainConfig,
    evaluate_model,
    generate,
    seeded_rng,
    train,
)


def main():
    rng = seeded_rng(0)
    marginals = (rng.standard_normal((800, 1)),
                 rng.standard_normal((800, 1)) + 4.0)
    test = (rng.standard_normal((400, 1)),
            rng.standard_normal((400, 1)) + 4.0)
    dataset = MarginalDataset(name="shift4", times=(0.0, 1.0),
                              train=marginals, test=test,
                              shift=np.zeros(1), scale=np.ones(1))

    config = RunConfig(
        grid=TimeGrid((0.0, 1.0), n_total=20),
        ref=ReferenceConfig(sigma=0.5),
        train=TrainConfig(batch_size=128, warmup_steps=800,
                          outer_iterations=2, inner_steps=200,
                          learning_rate=1e-3),
    )
    model = train(dataset, config, rng=seeded_rng(0))

    report = evaluate_model(model, dataset, sampler="sde", rng=seeded_rng(1),
                            max_w2_rows=400)
    print(report.as_text())

    start = SampleBatch(dataset.test[0][:5], grid_index=0)
    paths = generate(model, start, "forward", sampler="sde", rng=seeded_rng(2))
    times = paths.shared_times()
    print("five sample paths (t, x):")
    for k in range(0, len(times), 5):
        row = " ".join(f"{paths.states[r, k, 0]:7.3f}" for r in range(5))
        print(f"  t={times[k]:.2f}  {row}")


if __name__ == "__main__":
    main()
