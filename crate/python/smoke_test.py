"""Smoke test for the sine_py extension module.

Build the module first (see README), then run:

    PYTHONPATH=target/python python3 python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import sine_py


def check_metrics():
    assert sine_py.auc([0.9, 0.1, 0.5], [True, False, False]) == 1.0
    assert sine_py.auc([0.5, 0.5], [True, False]) == 0.5
    assert sine_py.ndcg_at_k([0.2, 0.9, 0.1], [True, False, False], 2) == 1.0 / math.log2(3)
    assert sine_py.gauc([([1.0, 0.0], [True, False]), ([0.0, 1.0, 2.0], [True, False, False])]) == 1.0 / 3.0
    assert abs(sine_py.dcor([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) - 1.0) < 1e-12
    z = [[1.0, 0.0, 2.0, -1.0], [0.5, 1.5, -0.5, 0.0], [2.0, 2.0, 0.0, 1.0]]
    assert 0.0 <= sine_py.distance_correlation(z) <= 1.0
    try:
        sine_py.auc([1.0, 2.0], [True, True])
    except ValueError:
        pass
    else:
        raise AssertionError("AUC without a negative should raise")


def check_pipeline(work: Path):
    cfg = sine_py.Config(
        overrides={
            "synth.n_users": "150",
            "synth.n_items": "200",
            "model.dim": "8",
            "train.max_epochs": "2",
        }
    )
    try:
        cfg.with_overrides({"train.lambda3": "0.5"})
    except ValueError:
        pass
    else:
        raise AssertionError("lambdas that do not sum to one should raise")

    csv = work / "interactions.csv"
    n_events, n_users, n_items = sine_py.synthesize(cfg, str(csv))
    assert n_events > 0 and n_users == 150 and n_items > 0

    ds = sine_py.Dataset.prepare(cfg, str(csv))
    assert ds.n_users > 0 and ds.n_items > 0
    ds.save(str(work / "dataset.tsv"))
    again = sine_py.Dataset.load(str(work / "dataset.tsv"))
    assert again.user_ids() == ds.user_ids()

    model = sine_py.Model.train(ds, cfg)
    log = model.train_log()
    assert len(log) == 2 and all(math.isfinite(e["joint"]) for e in log)
    report = model.evaluate(ds, cfg, "test")
    assert 0.0 <= report["auc"] <= 1.0 and report["users"] == ds.n_users

    model.save(str(work / "checkpoint.json"))
    loaded = sine_py.Model.load(str(work / "checkpoint.json"))
    items, positive = ds.history(0)
    candidates = items[:3]
    assert loaded.score(items, positive, candidates) == model.score(items, positive, candidates)
    assert loaded.evaluate(ds, cfg, "test") == report

    code = sine_py.run(["synth", "--out", str(work / "cli"), "--users", "20"])
    assert code == 0, code
    print(f"sine_py ok: {ds.n_users} users, test auc {report['auc']:.4f}")


if __name__ == "__main__":
    check_metrics()
    with tempfile.TemporaryDirectory() as d:
        check_pipeline(Path(d))
