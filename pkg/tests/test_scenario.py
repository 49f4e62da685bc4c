import os

import numpy as np
import pytest
import yaml

from cyclemarket import scenario
from cyclemarket.scenario import ConfigError, DemandFileError, ScenarioError

DEFAULT_SNAPSHOT = {
    "social": 256782.8190588427,
    "pbm": 256824.57240078607,
    "cbm": 256782.8190588427,
    "gcd": 265830.1656197973,
}


def small_config(**over):
    data = {
        "demand": {"values": [10.0, 14.0, 9.0, 13.0]},
        "generators": [{"c": 1.0, "a": 0.0, "g_max": 100.0}],
        "storages": [{"capacity_mwh": 4.0, "capital_cost_per_kwh": 1.0, "rho": 1e-3}],
        "mechanisms": ["social", "pbm", "cbm", "gcd"],
    }
    data.update(over)
    return data


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadDemand:
    def test_bundled_trace(self):
        d = scenario.load_demand(scenario._resolve_demand("builtin:synthetic_24", scenario.Path(".")))
        assert d.shape == (24,)
        assert d.min() == 210.0 and d.max() == 390.0
        assert int(np.argmin(d)) == 4 and int(np.argmax(d)) == 16

    def test_header_only(self, tmp_path):
        with pytest.raises(DemandFileError, match="no demand rows"):
            scenario.load_demand(write_csv(tmp_path / "d.csv", "slot,demand_mw\n"))

    def test_malformed_row_reports_line(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "slot,demand_mw\n1,10\nabc\n")
        with pytest.raises(DemandFileError, match=r"d\.csv:3:"):
            scenario.load_demand(p)

    def test_bad_value_reports_line(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "slot,demand_mw\n1,10\n2,ten\n")
        with pytest.raises(DemandFileError, match=r":3: cannot parse"):
            scenario.load_demand(p)

    def test_wrong_header(self, tmp_path):
        with pytest.raises(DemandFileError, match=":1:"):
            scenario.load_demand(write_csv(tmp_path / "d.csv", "t,mw\n1,10\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DemandFileError):
            scenario.load_demand(tmp_path / "nope.csv")

    def test_nonpositive_warns(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "slot,demand_mw\n1,10\n2,0\n")
        with pytest.warns(UserWarning, match="non-positive"):
            np.testing.assert_array_equal(scenario.load_demand(p), [10.0, 0.0])

    def test_slots_increasing(self, tmp_path):
        with pytest.raises(DemandFileError, match="increasing"):
            scenario.load_demand(write_csv(tmp_path / "d.csv", "slot,demand_mw\n2,1\n1,2\n"))


class TestConfig:
    def test_default_config(self):
        cfg = scenario.load_config(scenario.default_config_path())
        assert cfg.horizon == 24 and cfg.mechanisms == ["social", "pbm", "cbm", "gcd"]
        sp = cfg.storages[0].params()
        assert sp.E == 100.0 and sp.u_max == 25.0 and sp.x0 == 0.5
        assert sp.b == pytest.approx(5.24e-4 * 200.0 * 1000.0 * 100.0)
        assert cfg.sweep.param == "B" and list(cfg.sweep.values()) == [50.0 * k for k in range(1, 9)]

    @pytest.mark.parametrize("mutate,match", [
        (lambda d: d.update(colour="red"), "unknown key"),
        (lambda d: d["generators"][0].update(b=1), r"generators\[0\]: unknown key"),
        (lambda d: d["storages"][0].update(E=1), r"storages\[0\]: unknown key"),
        (lambda d: d["demand"].update(path="x.csv"), "exactly one"),
        (lambda d: d.update(horizon=5), "horizon"),
        (lambda d: d.update(mechanisms=["lmp"]), "unknown mechanism"),
        (lambda d: d.update(sweep={"param": "B", "from": 100.0, "to": 50.0, "steps": 3}), "increasing"),
        (lambda d: d.update(sweep={"param": "E", "from": -1.0, "to": 50.0, "steps": 3}), "positive"),
        (lambda d: d.update(sweep={"param": "rho", "from": 1.0, "to": 2.0, "steps": 3}), "param"),
        (lambda d: d.update(sweep={"param": "B", "from": 1.0, "to": 2.0, "steps": 0}), "steps"),
        (lambda d: d["generators"][0].update(c=0.0), "positive"),
        (lambda d: d.update(generators=[]), "generator"),
        (lambda d: d["storages"][0].update(x0=2.0), "initial SoC"),
    ])
    def test_rejects(self, mutate, match):
        data = small_config()
        mutate(data)
        with pytest.raises(ConfigError, match=match):
            scenario.parse_config(data)

    def test_relative_path_resolves_against_config(self, tmp_path):
        sub = tmp_path / "cfg"
        sub.mkdir()
        write_csv(sub / "d.csv", "slot,demand_mw\n1,5\n2,7\n")
        data = small_config(demand={"path": "d.csv"})
        (sub / "s.yaml").write_text(yaml.safe_dump(data), encoding="utf-8")
        cfg = scenario.load_config(sub / "s.yaml")
        np.testing.assert_array_equal(cfg.demand, [5.0, 7.0])

    def test_unknown_builtin(self):
        with pytest.raises(ConfigError, match="builtin"):
            scenario.parse_config(small_config(demand={"path": "builtin:nyiso"}))

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.yaml").write_text("", encoding="utf-8")
        with pytest.raises(ConfigError, match="empty"):
            scenario.load_config(tmp_path / "e.yaml")

    def test_with_param(self):
        cfg = scenario.parse_config(small_config())
        other = cfg.with_param("E", 9.0)
        assert other.storages[0].capacity_mwh == 9.0 and cfg.storages[0].capacity_mwh == 4.0


class TestRunScenario:
    def test_default_snapshot(self):
        cfg = scenario.load_config(scenario.default_config_path())
        outs = scenario.run_scenario(cfg)
        assert [o.mechanism for o in outs] == list(DEFAULT_SNAPSHOT)
        for o in outs:
            assert o.dispatch.converged
            assert o.social_cost == pytest.approx(DEFAULT_SNAPSHOT[o.mechanism], rel=1e-9)

    def test_single_mechanism(self):
        outs = scenario.run_scenario(scenario.parse_config(small_config(mechanisms=["social"])))
        assert len(outs) == 1 and outs[0].mechanism == "social"

    def test_no_storage_prosumer_is_generator_clearing(self):
        cfg = scenario.parse_config(small_config(storages=[], mechanisms=["pbm", "social"]))
        pbm, social = scenario.run_scenario(cfg)
        np.testing.assert_allclose(pbm.dispatch.g, social.dispatch.g, atol=1e-8)
        np.testing.assert_allclose(pbm.dispatch.g[0], cfg.demand, atol=1e-8)

    def test_errors_carry_mechanism(self):
        data = small_config(generators=[{"c": 1.0, "g_max": 5.0}], mechanisms=["gcd"])
        with pytest.warns(UserWarning):
            cfg = scenario.parse_config(data)
            with pytest.raises(ScenarioError, match="^gcd:") as err:
                scenario.run_scenario(cfg)
        assert err.value.mechanism == "gcd"


class TestSweep:
    def test_single_point(self):
        cfg = scenario.parse_config(small_config(sweep={"param": "B", "from": 1.0, "to": 1.0, "steps": 1}))
        res = scenario.run_sweep(cfg)
        assert res.values == [1.0] and len(res.rows) == 4

    def test_rows_in_sweep_order(self):
        cfg = scenario.parse_config(small_config(sweep={"param": "B", "from": 1.0, "to": 4.0, "steps": 4}))
        res = scenario.run_sweep(cfg)
        assert [r.param_value for r in res.rows] == [v for v in (1.0, 2.0, 3.0, 4.0) for _ in range(4)]
        assert all(r.converged and not r.error for r in res.rows)

    def test_failed_point_is_flagged(self):
        data = small_config(demand={"values": [10.0, 14.0]}, generators=[{"c": 1.0, "g_max": 12.0}],
                            mechanisms=["social", "cbm"],
                            sweep={"param": "E", "from": 2.0, "to": 10.0, "steps": 2})
        with pytest.warns(UserWarning):
            cfg = scenario.parse_config(data)
            res = scenario.run_sweep(cfg)
        bad = [r for r in res.rows if r.param_value == 2.0]
        good = [r for r in res.rows if r.param_value == 10.0]
        assert all(not r.converged and r.error for r in bad)
        assert all(r.converged and not r.error for r in good)
        assert any("not all mechanisms converged" in f for f in res.ordering_failures())

    @pytest.mark.skipif((os.cpu_count() or 1) < 2, reason="needs more than one CPU")
    def test_parallel_matches_serial(self):
        cfg = scenario.parse_config(small_config(sweep={"param": "E", "from": 2.0, "to": 8.0, "steps": 4}))
        a = scenario.run_sweep(cfg, workers=1)
        b = scenario.run_sweep(cfg, workers=2)
        assert a.rows == b.rows

    def test_no_sweep_section(self):
        with pytest.raises(ConfigError):
            scenario.run_sweep(scenario.parse_config(small_config()))


class TestReports:
    def _sweep(self):
        cfg = scenario.parse_config(small_config(sweep={"param": "E", "from": 2.0, "to": 4.0, "steps": 2}))
        return scenario.run_sweep(cfg)

    def test_sweep_files(self, tmp_path):
        paths = scenario.emit_reports(self._sweep(), tmp_path)
        names = [p.name for p in paths]
        assert names == ["sweep.csv", "dispatch_social.csv", "dispatch_pbm.csv", "dispatch_cbm.csv",
                         "theta_storage0.csv", "dispatch_gcd.csv"]
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == ",".join(scenario.SWEEP_COLUMNS) and len(lines) == 9
        assert (tmp_path / "dispatch_cbm.csv").read_text().splitlines()[0] == \
            "slot,demand,gen_total,storage_total,lambda"

    def test_plotdata(self, tmp_path):
        paths = scenario.emit_reports(self._sweep(), tmp_path, fmt="plotdata")
        dat = sorted(p.name for p in paths if p.suffix == ".dat")
        assert dat == ["capacity_cycling_cost.dat", "capacity_social_cost.dat", "capacity_storage_profit.dat"]
        lines = (tmp_path / "capacity_social_cost.dat").read_text().splitlines()
        assert lines[0] == "# E social pbm cbm gcd" and len(lines) == 3
        assert len(lines[1].split()) == 5

    def test_byte_identical(self, tmp_path):
        res = self._sweep()
        a, b = tmp_path / "a", tmp_path / "b"
        scenario.emit_reports(res, a, fmt="plotdata")
        scenario.emit_reports(self._sweep(), b, fmt="plotdata")
        for p in sorted(a.iterdir()):
            assert p.read_bytes() == (b / p.name).read_bytes()

    def test_empty_results_write_headers(self, tmp_path):
        paths = scenario.emit_reports([], tmp_path)
        assert [p.name for p in paths] == ["summary.csv"]
        assert (tmp_path / "summary.csv").read_text() == ",".join(scenario.SUMMARY_COLUMNS) + "\n"
        empty = scenario.SweepResult(param="B", values=[], rows=[], outcomes=[])
        scenario.emit_reports(empty, tmp_path / "s", fmt="plotdata")
        assert (tmp_path / "s" / "sweep.csv").read_text() == ",".join(scenario.SWEEP_COLUMNS) + "\n"

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            scenario.emit_reports([], tmp_path, fmt="xlsx")

    def test_io_error_names_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            scenario.emit_reports([], blocker / "sub")
