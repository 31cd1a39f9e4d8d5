"""Smoke test for the Python bindings.

Build and install the extension first, e.g.

    pip install --no-build-isolation -e crates/py

then run `python python/smoke_test.py`.
"""

import tempfile
from pathlib import Path

import milliproxy as mp


def check_config():
    cfg = mp.RunConfig(transport="newreno", d_rs_ms=20)
    assert cfg["d_rs_ms"] == 20.0
    assert cfg["total_bytes"] is None
    cfg["total_bytes"] = 1_000_000
    assert cfg["total_bytes"] == 1_000_000
    cfg["total_bytes"] = None
    assert cfg["total_bytes"] is None
    assert "b_rlc_mb" in mp.RunConfig.keys()
    assert mp.RunConfig.from_toml(cfg.to_toml()) == cfg
    for bad in ({"d_rs_ms": -1.0}, {"no_such_key": 1}, {"policy": "magic"}):
        try:
            c = mp.RunConfig(**bad)
            c.validate()
        except ValueError:
            continue
        raise AssertionError(f"accepted {bad}")


def check_policy_and_channel():
    assert mp.compute_window("bdp", 10_000, 3_200_000_000) == 4_000_000
    assert mp.compute_window("bdp", None, 3_200_000_000) == 400 * mp.MB
    assert mp.compute_window("conservative_bdp", 10_000, 3_200_000_000, rlc_occupancy=5 * mp.MB // 2) == 0
    clear = mp.RunConfig(obstacle_count=0)
    assert mp.channel_state(clear, 1_000_000) == ("LOS", 3_200_000_000)
    assert len(mp.obstacles(mp.RunConfig())) == 3


def check_proxy():
    p = mp.Proxy()
    assert p.flow_window == 400 * mp.MB
    for i in range(14):
        p.intercept(i * 1400, 1400, 100 + i, 50, 100 + i)
    down = p.forward(200)
    assert [s[1] for s in down] == [19600], down
    assert p.next_deadline() == 200 + 200_000
    up, _ = p.ue_ack(19600, 400, down[0][2], 400)
    assert len(up) == 14 and up[-1][0] == 19600
    assert p.relayed_ack == p.ue_acked == 19600


def check_runs():
    base = mp.RunConfig(ue_speed=25.0, drain_s=0.2)
    m1 = mp.run_one(base)
    m2 = mp.run_one(base)
    assert m1 == m2
    assert 0 < m1["goodput_bps"] <= m1["capacity_bps"]
    assert m1["invariant_violations"] == 0

    with tempfile.TemporaryDirectory() as tmp:
        mp.run_one(base, trace_dir=tmp)
        assert (Path(tmp) / "ran_trace.csv").exists()
        out = mp.run_sweep(
            base,
            {"d_rs_ms": [1.0, 20.0], "transport": ["newreno", "milliproxy"]},
            seeds=2,
            out_dir=tmp,
        )
        assert (Path(tmp) / "runs.csv").exists()
    assert len(out["rows"]) == 8
    assert len(out["configs"]) == 4
    assert len(out["gains"]) == 2
    assert not out["failures"]
    for g in out["gains"]:
        print(f"  {g['config_id']}: goodput gain {g['goodput_gain']:.3f}, latency reduction {g['latency_reduction']:.3f}")


if __name__ == "__main__":
    for step in (check_config, check_policy_and_channel, check_proxy, check_runs):
        step()
        print(f"ok {step.__name__}")
    print("smoke test passed")
