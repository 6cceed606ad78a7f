import copy
import json
import math
from pathlib import Path

import numpy as np
import pytest

from tgrbf import cli, harness
from tgrbf import plant as pl

ROOT = Path(__file__).resolve().parents[1]


def _pid_cfg(**kw):
    base = dict(controller="pid", checkpoint=None, duration_s=0.2, seed=0)
    base.update(kw)
    return harness.ScenarioConfig(**base)


# -- config ------------------------------------------------------------------

def test_load_shipped_step_config():
    cfg = harness.load_config(ROOT / "configs" / "step.json")
    assert cfg.controller == "tgrbf_nc"
    assert cfg.reference.kind == "step"
    assert cfg.trigger.delta == pytest.approx(1e-4)
    assert cfg.nc_gains is not None
    assert cfg.nc_gains.eta1 == 0.0
    assert cfg.pid.kp == pytest.approx(264.1023066475561)
    assert cfg.n_steps == 3000


def test_config_rejects_unknown_top_key():
    with pytest.raises(ValueError):
        harness.config_from_dict({"durations": 3.0})


def test_config_rejects_unknown_nested_key():
    with pytest.raises(ValueError):
        harness.config_from_dict({"reference": {"kind": "step", "slope": 1.0}})
    with pytest.raises(ValueError):
        harness.config_from_dict({"network": {"trigger": {"delay": 1}}})


def test_config_rejects_unknown_controller():
    with pytest.raises(ValueError):
        harness.ScenarioConfig(controller="lqr")


def test_config_rejects_fractional_step_count():
    with pytest.raises(ValueError):
        harness.ScenarioConfig(controller="pid", duration_s=0.0015707)


def test_config_hash_stable():
    doc = {"seed": 3, "duration_s": 0.1}
    a = harness.config_from_dict(doc).config_hash()
    b = harness.config_from_dict(copy.deepcopy(doc)).config_hash()
    assert a == b and len(a) == 16


# -- metrics -----------------------------------------------------------------

def _make_trace(t, r, y):
    t, r, y = map(np.asarray, (t, r, y))
    data = np.zeros((t.size, len(harness.TRACE_COLUMNS)))
    data[:, harness.TRACE_COLUMNS.index("t")] = t
    data[:, harness.TRACE_COLUMNS.index("r")] = r
    data[:, harness.TRACE_COLUMNS.index("y")] = y
    data[:, harness.TRACE_COLUMNS.index("e")] = r - y
    return harness.RunTrace(data=data, metadata={})


def test_metrics_zero_error():
    t = np.arange(10) * 0.001
    rep = harness.compute_metrics(_make_trace(t, np.ones(10), np.ones(10)),
                                  pl.ReferenceSpec(kind="step", amplitude=1.0))
    assert rep.iae == rep.ise == rep.itae == 0.0
    assert rep.settled and rep.settling_time_s == 0.0
    assert rep.overshoot_pct == 0.0


def test_metrics_constant_error_closed_forms():
    N, Ts = 50, 0.001
    t = np.arange(N) * Ts
    rep = harness.compute_metrics(_make_trace(t, np.ones(N), np.zeros(N)),
                                  pl.ReferenceSpec(kind="sine"))
    assert rep.iae == pytest.approx(N * Ts)
    assert rep.ise == pytest.approx(N * Ts)
    assert rep.itae == pytest.approx(Ts * float(t.sum()))
    # sine reference: no overshoot / settling fields
    assert math.isnan(rep.overshoot_pct)


def test_metrics_overshoot_and_settling():
    Ts = 0.001
    t = np.arange(100) * Ts
    y = np.ones(100)
    y[:10] = np.linspace(0.0, 1.0, 10)
    y[20] = 1.25
    rep = harness.compute_metrics(_make_trace(t, np.ones(100), y),
                                  pl.ReferenceSpec(kind="step", amplitude=1.0))
    assert rep.overshoot_pct == pytest.approx(25.0)
    assert rep.settled
    # last excursion outside the 2% band is the overshoot spike at index 20
    assert rep.settling_time_s == pytest.approx(t[21])


def test_metrics_zero_final_reference_flagged():
    t = np.arange(10) * 0.001
    rep = harness.compute_metrics(_make_trace(t, np.zeros(10), np.zeros(10)),
                                  pl.ReferenceSpec(kind="step", amplitude=0.0))
    assert math.isnan(rep.overshoot_pct)


def test_metrics_empty_trace():
    rep = harness.compute_metrics(
        harness.RunTrace(data=np.zeros((0, len(harness.TRACE_COLUMNS))),
                         metadata={}),
        pl.ReferenceSpec())
    assert rep.iae == 0.0 and rep.update_count == 0


# -- run engine --------------------------------------------------------------

def test_zero_duration_run():
    trace, rep = harness.run_scenario(_pid_cfg(duration_s=0.0))
    assert trace.data.shape[0] == 0
    assert rep.iae == 0.0


def test_adaptive_controller_requires_checkpoint():
    with pytest.raises(ValueError):
        harness.run_scenario(harness.ScenarioConfig(controller="tgrbf_nc",
                                                    duration_s=0.1))


def test_pid_run_deterministic_and_logged():
    a, _ = harness.run_scenario(_pid_cfg())
    b, _ = harness.run_scenario(_pid_cfg())
    assert np.array_equal(a.data, b.data)
    assert a.metadata["controller"] == "pid"
    assert np.all(np.diff(a.col("t")) > 0)
    assert np.all(np.abs(a.col("u")) <= 10.0 + 1e-12)


def test_nc_fixed_uses_dedicated_gains_when_given():
    import tgrbf.control as ctl
    gains = ctl.GainState(k1=1.0, k2=1.0, eta1=0.0, eta2=0.0)
    nc = ctl.GainState(k1=4.0, k2=1.0, eta1=0.0, eta2=0.0)
    t1, _ = harness.run_scenario(_pid_cfg(controller="nc_fixed", gains=gains,
                                          nc_gains=nc))
    t2, _ = harness.run_scenario(_pid_cfg(controller="nc_fixed", gains=gains))
    assert t1.col("k1")[0] == 4.0
    assert t2.col("k1")[0] == 1.0
    assert not np.array_equal(t1.col("u"), t2.col("u"))


# -- export ------------------------------------------------------------------

def test_trace_csv_round_trip(tmp_path):
    trace, rep = harness.run_scenario(_pid_cfg(duration_s=0.05))
    path = tmp_path / "trace.csv"
    harness.export_trace_csv(trace, path)
    rows = path.read_text().strip().split("\n")
    assert rows[0].split(",") == harness.TRACE_COLUMNS
    back = np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
    assert np.array_equal(back, trace.data)


def test_empty_trace_exports_header_only(tmp_path):
    trace, _ = harness.run_scenario(_pid_cfg(duration_s=0.0))
    path = tmp_path / "trace.csv"
    harness.export_trace_csv(trace, path)
    assert path.read_text().strip() == ",".join(harness.TRACE_COLUMNS)


def test_metrics_csv_schema(tmp_path):
    _, rep = harness.run_scenario(_pid_cfg(duration_s=0.05))
    path = tmp_path / "metrics.csv"
    harness.export_metrics_csv(rep, path)
    rows = [r.split(",") for r in path.read_text().strip().split("\n")]
    assert rows[0] == ["metric", "value"]
    names = [r[0] for r in rows[1:]]
    assert names[:3] == ["iae", "ise", "itae"]


# -- CLI ---------------------------------------------------------------------

def test_cli_missing_config_exit_2():
    assert cli.main(["run", "--config", "no-such-file.json"]) == 2


def test_cli_invalid_json_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", "--config", str(bad)]) == 2


def test_cli_unknown_flag_exit_2():
    assert cli.main(["run", "--config", "x.json", "--frobnicate"]) == 2


def test_cli_unknown_key_in_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"duratoin_s": 1.0}))
    assert cli.main(["run", "--config", str(bad)]) == 2


def test_cli_run_pid_scenario(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "controller": {"type": "pid"},
        "pid": {"kp": 5.0, "ki": 1.0, "kd": 0.1},
        "duration_s": 0.05,
        "seed": 0,
    }))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "trace.csv").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "update_events.csv").exists()


def test_cli_gradcheck_small():
    assert cli.main(["gradcheck", "--pairs", "5", "--seed", "1"]) == 0
