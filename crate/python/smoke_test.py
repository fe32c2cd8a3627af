"""Smoke test for the pysurrmeta extension.

Build the module first, e.g. `maturin develop -m crates/python/Cargo.toml`, or
`cargo build --release -p surrmeta-python --features extension-module` and put
`target/release/libpysurrmeta.so` on the path as `pysurrmeta.so`.
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import pysurrmeta as sm


def check_primitives():
    adj = sm.bh_adjust([0.01, 0.04, 0.03, 0.2])
    assert all(a >= p for a, p in zip(adj, [0.01, 0.04, 0.03, 0.2]))
    assert abs(adj[0] - 0.04) < 1e-12

    p_lower, p_upper, p_tost = sm.tost_p(0.0, 0.05, math.inf, 0.2)
    assert p_tost == max(p_lower, p_upper) and p_tost < 1e-4

    pooled = sm.pool([0.1, 0.2, 0.15, 0.05], [0.01, 0.02, 0.015, 0.01], meta="fe")
    assert pooled["tau2_hat"] == 0.0 and abs(sum(pooled["weights"]) - 1.0) < 1e-12

    try:
        sm.pool([0.1], [0.01], meta="bayes")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model accepted")


def check_pipeline(workdir: Path):
    studies = sm.synthetic(studies=6, subjects=80, markers=20, planted=1, seed=3)
    train, holdout = zip(*(s.split(0.5, seed=4) for s in studies))
    assert [s.n_subjects for s in train] == [40] * 6

    result = sm.screen(list(train))
    assert "planted01" in result.selected, result.selected
    assert len(result.markers()) == 20
    written = result.write(str(workdir / "screen"), top_k=3)
    assert any(str(p).endswith("signature.json") for p in written)

    ev = sm.evaluate(list(holdout), result.signature_json(), bootstrap=300)
    names = [m[0] for m in ev.metrics()]
    assert "ccc" in names, names
    ev.write(str(workdir / "eval"))

    sm.write_studies(str(workdir / "data.csv"), list(studies))
    again = sm.read_studies(str(workdir / "data.csv"))
    assert [s.study_id for s in again] == [s.study_id for s in studies]

    try:
        sm.screen(list(train)[:1])
    except sm.DataError as e:
        assert "at least 2 studies" in str(e)
    else:
        raise AssertionError("single study accepted")


def check_simulation():
    cfg = {
        "j": 200, "m": 5, "n": 50, "epsilon": 0.1, "alpha": 0.05,
        "u_tau2_max": 0.01, "u_nu_max": 10.0, "mu_regime": "lfc", "seed": 1,
    }
    rows = json.loads(sm.simulate_calibration(json.dumps(cfg)))
    assert [r["alpha"] for r in rows] == [0.01, 0.025, 0.05, 0.1]
    assert all(0.0 <= r["rate"] <= 1.0 for r in rows)
    power = json.loads(sm.simulate_power(json.dumps(dict(cfg, mu_regime="uniform_valid"))))
    assert len(power) == 1 and power[0]["scenario"] == "power"


def main():
    check_primitives()
    with tempfile.TemporaryDirectory() as d:
        check_pipeline(Path(d))
    check_simulation()
    print("pysurrmeta smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
