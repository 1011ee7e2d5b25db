"""Session fixtures for the full-scale acceptance runs.

Each fixture trains one model per test session (the heavy ones take minutes
to tens of minutes) and caches the warmup-only snapshot plus per-outer
evaluation reports so several criteria can share a single run. A terminal
hook prints one pass/fail line per numbered criterion at the end.
"""

import copy
import csv
import dataclasses
import re

import numpy as np
import pytest

from mmbridge import (
    ReferenceConfig,
    RunConfig,
    TimeGrid,
    TrainConfig,
    evaluate_model,
    load_snapshot_table,
    make_dataset,
    mm_imf,
    seeded_rng,
    warmup,
)


def build_config(times, n_total, sigma, batch_size, warmup_steps,
                 outer_iterations, inner_steps, learning_rate=2e-4, seed=0):
    return RunConfig(
        grid=TimeGrid(tuple(float(t) for t in times), n_total),
        ref=ReferenceConfig(sigma=sigma),
        train=TrainConfig(batch_size=batch_size, warmup_steps=warmup_steps,
                          outer_iterations=outer_iterations,
                          inner_steps=inner_steps,
                          learning_rate=learning_rate, seed=seed),
    )


@dataclasses.dataclass
class TrainedRun:
    """One completed training run plus the evaluations the criteria consume."""

    dataset: object
    config: RunConfig
    model: object
    warmup_model: object
    warmup_report: object
    outer_reports: list


def run_pipeline(dataset, config, eval_rows=1000, eval_each_outer=True,
                 sampler="ode", **mm_kwargs) -> TrainedRun:
    """Warmup, snapshot, alternating phase; evaluation after warmup and outers."""
    rng = seeded_rng(config.train.seed)
    model = warmup(dataset, config, rng=rng)
    warmup_model = copy.deepcopy(model)
    warmup_report = evaluate_model(model, dataset, sampler=sampler,
                                   rng=seeded_rng(101), max_w2_rows=eval_rows)
    reports = []

    def on_outer(m, n):
        if eval_each_outer or n == config.train.outer_iterations - 1:
            reports.append(evaluate_model(m, dataset, sampler=sampler,
                                          rng=seeded_rng(202 + n),
                                          max_w2_rows=eval_rows))

    mm_imf(model, dataset, config, rng=rng, callback=on_outer, **mm_kwargs)
    return TrainedRun(dataset=dataset, config=config, model=model,
                      warmup_model=warmup_model, warmup_report=warmup_report,
                      outer_reports=reports)


# ------------------------------------------------------------- schedules
# One entry per acceptance dataset; tuned at desk scale (single core).

# the per-outer endpoint block holds batch_size/num_intervals rows per
# bridge; the wide batches keep that block large enough that its sampling
# noise does not imprint on the refit marginals
MOONS4_CONFIG = build_config((0, 1, 2, 3), n_total=240, sigma=0.5,
                             batch_size=1152, warmup_steps=3000,
                             outer_iterations=2, inner_steps=800)
MOONS2_CONFIG = build_config((0, 1), n_total=40, sigma=0.5,
                             batch_size=384, warmup_steps=2500,
                             outer_iterations=2, inner_steps=600)
G8_MULTI_CONFIG = build_config((0, 1, 2, 3), n_total=120, sigma=1.0,
                               batch_size=1152, warmup_steps=3000,
                               outer_iterations=2, inner_steps=600)
G8_SINGLE_CONFIG = build_config((0, 1), n_total=40, sigma=1.0,
                                batch_size=384, warmup_steps=2500,
                                outer_iterations=2, inner_steps=600)
MIXTURE3_CONFIG = build_config((0, 1, 2), n_total=80, sigma=0.5,
                               batch_size=384, warmup_steps=2500,
                               outer_iterations=5, inner_steps=400)
G50_CONFIG = build_config((0, 1, 2, 3), n_total=120, sigma=0.5,
                          batch_size=1152, warmup_steps=2500,
                          outer_iterations=2, inner_steps=500)
ORACLE5_CONFIG = build_config((0, 1, 2), n_total=60, sigma=0.5,
                              batch_size=384, warmup_steps=1500,
                              outer_iterations=2, inner_steps=400)
SURROGATE_CONFIG = build_config((0, 1, 2, 3, 4), n_total=80, sigma=0.5,
                                batch_size=320, warmup_steps=250,
                                outer_iterations=1, inner_steps=400)


@pytest.fixture(scope="session")
def moons4_run():
    # 2000 test rows halve the sliced-W estimator floor (0.066 -> 0.035 on
    # this geometry), which the per-outer marginal gate needs
    ds = make_dataset("moons4", 2000, 2000, seed=0)
    return run_pipeline(ds, MOONS4_CONFIG, eval_rows=2000)


@pytest.fixture(scope="session")
def moons2_run():
    ds = make_dataset("moons2", 2000, 1000, seed=0)
    return run_pipeline(ds, MOONS2_CONFIG, eval_each_outer=False)


@pytest.fixture(scope="session")
def g8_multi_run():
    ds = make_dataset("8gaussians4", 2000, 2000, seed=0)
    return run_pipeline(ds, G8_MULTI_CONFIG, eval_rows=2000,
                        eval_each_outer=False)


@pytest.fixture(scope="session")
def g8_single_run():
    ds = make_dataset("8gaussians2", 2000, 2000, seed=0)
    return run_pipeline(ds, G8_SINGLE_CONFIG, eval_rows=2000,
                        eval_each_outer=False)


@pytest.fixture(scope="session")
def mixture3_run():
    ds = make_dataset("mixture3", 2000, 1000, seed=0)
    return run_pipeline(ds, MIXTURE3_CONFIG, eval_each_outer=False)


@pytest.fixture(scope="session")
def g50_run():
    ds = make_dataset("gaussians50d", 2000, 1000, seed=0)
    return run_pipeline(ds, G50_CONFIG, eval_each_outer=False)


@pytest.fixture(scope="session")
def oracle5_run():
    from mmbridge import MarginalDataset

    atoms = np.linspace(-2.0, 2.0, 5)[:, None]
    rows = np.repeat(atoms, 200, axis=0)
    marginals = tuple(rows.copy() for _ in range(3))
    ds = MarginalDataset(name="atoms5", times=(0.0, 1.0, 2.0),
                         train=marginals, test=marginals,
                         shift=np.zeros(1), scale=np.ones(1))
    run = run_pipeline(ds, ORACLE5_CONFIG, eval_rows=500,
                       eval_each_outer=False)
    run.atoms = atoms
    return run


def _write_surrogate_csv(path, rng, rows_per_day=1000):
    """Smooth 100-d Gaussian sequence over five days, one csv row per cell."""
    dim = 100
    drift = rng.standard_normal(dim) * 0.25
    wobble = rng.standard_normal(dim) * 0.1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day"] + [f"x_{j + 1}" for j in range(dim)])
        for day in range(5):
            mean = drift * day + wobble * np.sin(0.9 * day)
            block = mean + rng.standard_normal((rows_per_day, dim))
            for row in block:
                writer.writerow([day] + [repr(v) for v in row])


@pytest.fixture(scope="session")
def surrogate_run(tmp_path_factory):
    path = tmp_path_factory.mktemp("surrogate") / "snapshots.csv"
    _write_surrogate_csv(path, seeded_rng(123))
    ds = load_snapshot_table(path, test_rows=300)
    return run_pipeline(ds, SURROGATE_CONFIG, eval_rows=300,
                        eval_each_outer=False)


# ------------------------------------------------- per-criterion summary

CRITERIA = {
    1: "moons chain: average W2 and tripled single-bridge energy",
    2: "8-Gaussians chain: average W2 and tripled single-bridge energy",
    3: "translated mixture: crossing fraction drops below 5%",
    4: "50-d Gaussians: grid means and interior variance curve",
    5: "5-atom chain: empirical coupling matches discrete solver",
    6: "moons chain: per-outer marginal preservation",
    7: "property suite: samplers, metrics, gradients, reproducibility",
    8: "100-d surrogate: alternating phase beats warmup, report layout",
}

_CRITERION_RE = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    tr = terminalreporter
    seen = {}
    for status, flag in (("passed", "PASS"), ("failed", "FAIL"),
                         ("error", "FAIL"), ("skipped", "SKIP")):
        for rep in tr.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            m = _CRITERION_RE.search(nodeid)
            if m is None:
                continue
            if status == "passed" and getattr(rep, "when", "call") != "call":
                continue
            num = int(m.group(1))
            prev = seen.get(num)
            order = {"FAIL": 2, "SKIP": 1, "PASS": 0}
            if prev is None or order[flag] > order[prev]:
                seen[num] = flag
    if not seen:
        return
    tr.write_sep("=", "acceptance criteria")
    for num in sorted(seen):
        label = CRITERIA.get(num, "unnamed criterion")
        tr.write_line(f"criterion {num}: {seen[num]}  ({label})")
