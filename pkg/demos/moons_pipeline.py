"""Reduced-budget walk through the four-marginal moons sequence.

Runs warmup plus two outer iterations on `moons4` (normal, moons, normal,
moons) with smaller step counts than the acceptance suite, printing the
per-grid-time metrics after each stage. Expect a few minutes on one core.
"""

from mmbridge import (
    ReferenceConfig,
    RunConfig,
    TimeGrid,
    TrainConfig,
    evaluate_model,
    make_dataset,
    mm_imf,
    seeded_rng,
    warmup,
)


def describe(tag, model, dataset):
    report = evaluate_model(model, dataset, sampler="ode", rng=seeded_rng(1))
    swd = " ".join(f"{v:.3f}" for v in report.swd)
    w2 = " ".join(f"{v:.3f}" for v in report.w2)
    print(f"{tag:>8}:  swd per time [{swd}]  w2 per time [{w2}]  "
          f"path energy {report.path_energy:.3f}")


def main():
    dataset = make_dataset("moons4", n_train=2000, n_test=1000, seed=0)
    config = RunConfig(
        grid=TimeGrid((0.0, 1.0, 2.0, 3.0), n_total=120),
        ref=ReferenceConfig(sigma=0.5),
        train=TrainConfig(batch_size=1152, warmup_steps=1200,
                          outer_iterations=2, inner_steps=300),
    )

    rng = seeded_rng(0)
    model = warmup(dataset, config, rng=rng)
    describe("warmup", model, dataset)

    mm_imf(model, dataset, config, rng=rng,
           callback=lambda m, n: describe(f"outer {n}", m, dataset))

    print("\nthe acceptance suite runs the same pipeline with the full "
          "budget (see tests/conftest.py for the schedule)")


if __name__ == "__main__":
    main()
