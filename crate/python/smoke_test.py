"""Smoke test for the tmsim_py extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import json
import tempfile
from pathlib import Path

import tmsim_py


def main():
    scenario = tmsim_py.Scenario().with_overrides(["horizon=8", "market_mode=centralized"])
    scenario.validate()
    assert scenario.horizon == 8 and scenario.market_mode == "centralized"

    sim = tmsim_py.Simulation(scenario)
    first = sim.step()
    assert first["interval"] == 0
    fork = sim.fork()
    a, b = sim.run(), fork.run()
    assert a.metrics() == b.metrics(), "forks diverged"
    summary = a.summary()
    assert summary["intervals"] == 8
    net = summary["network"]
    assert net["sent"] == net["delivered"] + net["dropped_link"] + net["dropped_attack"]

    with tempfile.TemporaryDirectory() as out:
        files = a.export(out)
        assert any(f.endswith("metrics.csv") for f in files)

    dec = tmsim_py.run(tmsim_py.Scenario(json.dumps({"horizon": 4})))
    assert dec.ledger_jsonl() is not None

    cleared = tmsim_py.clear_double_auction([
        {"owner_id": 1, "side": "buy", "price": 0.20, "quantity": 5.0, "interval": 0, "submit_seq": 0},
        {"owner_id": 2, "side": "sell", "price": 0.10, "quantity": 3.0, "interval": 0, "submit_seq": 1},
    ])
    assert cleared["matched_quantity"] == 3.0, cleared

    params = {
        "t_target": 22.0, "t_min": 20.0, "t_max": 25.0, "sigma_t": 1.0, "rated_power_kw": 4.0,
        "mode": "cooling", "drift_coeff": 0.08, "cooling_per_interval": 1.5,
    }
    prices = [0.125, 0.25, 0.375]  # mean exactly 0.25
    assert tmsim_py.compute_setpoint(params, prices, 0.25) == 22.0
    t = tmsim_py.compute_setpoint(params, prices, 0.3)
    assert abs(tmsim_py.compute_bid_price(params, prices, t) - 0.3) < 1e-9

    try:
        tmsim_py.Scenario('{"prediction_window": 0}').validate()
    except ValueError as e:
        assert "prediction_window" in str(e)
    else:
        raise AssertionError("invalid scenario accepted")

    assert "profit-attack" in tmsim_py.presets()
    with tempfile.TemporaryDirectory() as out:
        runs = tmsim_py.run_preset("profit-attack", out)
        assert set(runs) == {"baseline", "attacked"}
        assert (Path(out) / "attacked" / "demand_curves.csv").is_file()

    print("tmsim_py smoke test passed")


if __name__ == "__main__":
    main()
