"""End-to-end acceptance runs at desk scale.

Each test pins one published-results criterion: reconstruction fidelity
bands per system size and noise family, the sequential-vs-joint strategy
ordering, the self-check suite, and bit-exact determinism. Completed
experiments are cached per module so criteria can share them; the whole
module runs in a few minutes. The 5-qubit smoke seed is opt-in via
CCMQD_SLOW=1 (roughly five extra minutes).
"""

import json
import os
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import pytest

from ccmqd.channels import NoiseSchedule
from ccmqd.cli import _parse_sweep, resolve_sweep_path
from ccmqd.losses import LossSpec
from ccmqd.training import (
    TrainConfig,
    config_from_dict,
    result_from_dict,
    result_to_dict,
    run_experiment,
)
from ccmqd.verify import run_checks

SEEDS = (101, 102, 103, 104, 105)


def _build(
    n_qubits,
    family="haar_random",
    l_f=10,
    k_f=4,
    l_b=10,
    k_b=10,
    kind="pc",
    lam=0.02,
    max_iters=2000,
):
    return TrainConfig(
        n_qubits=n_qubits,
        schedule=NoiseSchedule(family=family, length=l_f, n_ops=k_f),
        l_b=l_b,
        k_b=k_b,
        loss=LossSpec(kind=kind, lam=lam),
        max_iters=max_iters,
        seeds=SEEDS,
    )


@pytest.fixture(scope="module")
def experiments():
    cache = {}

    def get(**kw):
        key = tuple(sorted(kw.items()))
        if key not in cache:
            cache[key] = run_experiment(_build(**kw))
        return cache[key]

    return get


def test_single_qubit_random_noise_band(experiments):
    res = experiments(n_qubits=1)
    assert res.n_ok == 5
    assert not res.partial
    assert res.mean_fidelity >= 0.999
    # documented budget: five minutes on a laptop-class machine
    assert res.wall_time < 300


def test_two_and_three_qubit_bands(experiments):
    r2 = experiments(n_qubits=2)
    r3 = experiments(n_qubits=3)
    assert r2.n_ok == 5 and r3.n_ok == 5
    assert r2.mean_fidelity >= 0.995
    assert r3.mean_fidelity >= 0.995
    # documented budget: half an hour combined
    assert r2.wall_time + r3.wall_time < 1800


def test_sequential_orders_below_joint(experiments):
    # same seeds means identical targets and forward channels, so the
    # comparison isolates the training strategy
    for n in (2, 3):
        joint = experiments(n_qubits=n)
        seq = experiments(n_qubits=n, kind="sqco_step", lam=0.0)
        assert seq.config.seeds == joint.config.seeds
        assert seq.n_ok == 5
        assert seq.mean_fidelity <= joint.mean_fidelity - 0.05


def test_sequential_composition_below_local_blocks(experiments):
    # every block converges to a decent local inverse, yet the composed
    # chain lands below the worst of them on every seed
    seq = experiments(n_qubits=2, kind="sqco_step", lam=0.0)
    for out in seq.outcomes:
        assert out.error is None
        assert out.local_fidelities is not None
        assert out.final_fidelity < min(out.local_fidelities)


def test_sequential_gap_fixture_matches_shipped_config(experiments):
    with resources.files("ccmqd.fixtures").joinpath(
        "regression_sqco_gap.json"
    ).open() as fh:
        doc = json.load(fh)
    cfg = config_from_dict(doc["config"])
    seq = experiments(n_qubits=2, kind="sqco_step", lam=0.0)
    assert cfg == replace(seq.config, seeds=(int(doc["seed"]),))
    out = next(o for o in seq.outcomes if o.seed == int(doc["seed"]))
    assert out.final_fidelity < min(out.local_fidelities)


def test_depolarizing_and_four_qubit_bands(experiments):
    dep = experiments(n_qubits=1, family="depolarizing")
    assert dep.n_ok == 5
    assert dep.mean_fidelity >= 0.999
    q4 = experiments(n_qubits=4)
    assert q4.n_ok == 5
    assert q4.mean_fidelity >= 0.99
    # documented budget: two hours for the 4-qubit cell
    assert q4.wall_time < 7200


def test_forward_depth_sweep_band(experiments):
    for depth in (2, 3, 4, 5, 6):
        res = experiments(n_qubits=2, l_f=depth)
        assert res.n_ok == 5
        assert res.mean_fidelity >= 0.99, f"depth {depth}"


def test_large_system_sweep_ships_and_smokes(experiments):
    path = resolve_sweep_path("table5")
    assert Path(path).is_file()
    cells = _parse_sweep(json.loads(Path(path).read_text()))
    assert [c.n_qubits for c in cells] == [5, 6, 7]
    for cell in cells:
        assert cell.strategy == "hqto+pc"
        assert cell.max_iters == 20000
        assert cell.seeds == SEEDS
    if not os.environ.get("CCMQD_SLOW"):
        pytest.skip("5-qubit smoke seed disabled; set CCMQD_SLOW=1 (~5 min)")
    res = run_experiment(replace(cells[0], seeds=(101,)))
    assert res.n_ok == 1
    assert res.outcomes[0].final_fidelity >= 0.99
    # documented budget: eight hours for the smoke seed
    assert res.wall_time < 8 * 3600


def test_self_check_suite_full_level():
    t0 = time.perf_counter()
    results = run_checks(full=True)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"failed checks: {failed}"
    assert elapsed < 900


def test_rerun_reproduces_statistics_bitwise(experiments):
    first = experiments(n_qubits=1)
    # replay from the serialized record, exactly as a reader would
    doc = json.loads(json.dumps(result_to_dict(first, include_curves=False)))
    cfg = result_from_dict(doc).config
    again = run_experiment(cfg)
    assert again.mean_fidelity == first.mean_fidelity
    assert again.std_fidelity == first.std_fidelity
    for a, b in zip(again.outcomes, first.outcomes):
        assert a.final_fidelity == b.final_fidelity
        assert a.iters == b.iters
