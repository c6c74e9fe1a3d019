import json
from dataclasses import asdict, replace

import numpy as np
import pandas as pd
import pytest

import settings
import zoo
from diagnostics import ess
from errors import ConfigError, DatasetSchemaError
from run_experiment import ExperimentReport, RunConfig, main, prepare, resolve_dataset, run, write_outputs
from sampler import NutsConfig

SMALL = NutsConfig(warmup_draws=100, posterior_draws=200, seed=1)
TIMINGS = ("wall_time_s", "transform_time_s", "min_ess_per_s")


def untimed(report):
    out = asdict(report)
    for key in TIMINGS:
        out.pop(key)
    return out


class TestRunConfig:
    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            RunConfig(model="eight_schools", mode="gibbs")

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            RunConfig(model="nope")

    def test_exemptions(self):
        assert RunConfig(model="eight_schools").exemptions == ("mu",)
        assert RunConfig(model="eight_schools", exempt=()).exemptions == ()
        assert RunConfig(model="electric_company", exempt=["a_*"]).exemptions == ("a_*",)


class TestDataset:
    def test_bundled(self, data_dir):
        columns, label = resolve_dataset(zoo.get("eight_schools"))
        assert label == "eight_schools.csv"
        assert len(columns["y"]) == 8

    def test_relative_to_data_dir(self, data_dir, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        _, label = resolve_dataset(zoo.get("repeated_binary_trials"), "baseball1970.csv")
        assert label == "baseball1970.csv"

    def test_synthetic_fallback(self, monkeypatch, tmp_path, capsys):
        monkeypatch.setattr(settings, "DATA_DIR", tmp_path)
        columns, label = resolve_dataset(zoo.get("funnel"))
        assert label == "synthetic:funnel"
        assert len(columns["y"]) == 8
        assert "⚠️" in capsys.readouterr().out

    def test_no_fallback(self, monkeypatch, tmp_path):
        monkeypatch.setattr(settings, "DATA_DIR", tmp_path)
        with pytest.raises(DatasetSchemaError):
            resolve_dataset(zoo.get("eight_schools"))


class TestPrepare:
    def test_modes(self):
        model = zoo.eight_schools([15.0, 10.0], [28.0, 8.0])
        same, stack = prepare(model, "hmc")
        assert same is model and stack is None
        reduced, stack = prepare(model, "hmc-m", ("mu",))
        assert len(reduced.latent_ids()) == 2
        assert sorted(stack.names) == ["x_1", "x_2"]
        noncentred, stack = prepare(model, "hmc-r")
        assert stack is None
        assert set(noncentred.deterministic) == {"x_1", "x_2"}

    def test_hmc_r_needs_hierarchical_normals(self):
        model = zoo.repeated_binary_trials([10.0, 12.0], [3.0, 4.0])
        with pytest.raises(ConfigError):
            prepare(model, "hmc-r")


class TestRun:
    def test_marginalised_eight_schools(self, data_dir):
        report, trace = run(RunConfig(model="eight_schools", mode="hmc-m", nuts=SMALL))
        assert report.original_dim == 10
        assert report.reduced_dim == 2
        assert report.exempt == ["mu"]
        assert len(report.transformation_log) == 8
        assert report.transformation_log[0] == ["x_8", "y_8", "Normal/Normal"]
        assert sorted(report.marginalized) == sorted(f"x_{i}" for i in range(1, 9))
        assert set(report.ess) == {"mu", "tau", *(f"x_{i}" for i in range(1, 9))}
        assert report.min_ess == min(report.ess.values())
        assert report.dataset == "eight_schools.csv"
        assert trace.draws.shape == (1, 200, 10)
        assert np.all(trace.values("tau") > 0.0)
        assert report.sampler["posterior_draws"] == 200

    def test_deterministic_given_seed(self, data_dir):
        config = RunConfig(model="eight_schools", mode="hmc-m", nuts=SMALL)
        first, trace_a = run(config)
        second, trace_b = run(config)
        assert untimed(first) == untimed(second)
        np.testing.assert_array_equal(trace_a.draws, trace_b.draws)

    def test_plain_hmc_has_no_log(self, data_dir):
        report, _ = run(RunConfig(model="eight_schools", mode="hmc", nuts=SMALL))
        assert report.reduced_dim == report.original_dim == 10
        assert report.transformation_log == []
        assert report.marginalized == []

    def test_noncentred_reports_original_names(self, data_dir):
        report, trace = run(RunConfig(model="eight_schools", mode="hmc-r", nuts=SMALL))
        assert report.reduced_dim == 10
        assert {f"x_{i}" for i in range(1, 9)} <= set(report.ess)
        assert "x_1_eps" in trace.names

    def test_report_json(self, data_dir):
        report, _ = run(RunConfig(model="eight_schools", nuts=SMALL))
        payload = json.loads(report.to_json())
        assert payload["schema"] == 1
        assert set(payload) == {f for f in ExperimentReport.__dataclass_fields__}

    def test_report_json_is_strict(self, data_dir):
        report, _ = run(RunConfig(model="eight_schools", nuts=SMALL))
        instant = replace(report, wall_time_s=0.0, min_ess_per_s=float("inf"), ess={"mu": float("nan")})
        text = instant.to_json()
        assert "Infinity" not in text and "NaN" not in text
        payload = json.loads(text)
        assert payload["min_ess_per_s"] is None
        assert payload["ess"] == {"mu": None}
        assert payload["wall_time_s"] == 0.0

    def test_outputs(self, data_dir, tmp_path):
        config = RunConfig(
            model="eight_schools",
            nuts=SMALL,
            out=tmp_path / "report.json",
            draws_csv=tmp_path / "draws" / "eight.csv",
        )
        report, trace = run(config)
        out, summary = write_outputs(config, report, trace)
        assert json.loads(out.read_text())["model"] == "eight_schools"
        table = pd.read_csv(tmp_path / "report_summary.csv", index_col="variable")
        assert list(table.columns) == ["mean", "sd", "q5", "median", "q95", "ess"]
        assert set(table.index) == set(report.ess)
        draws = pd.read_csv(config.draws_csv)
        assert len(draws) == 200
        assert {"chain", "draw", "mu", "tau", "x_1", "diverging"} <= set(draws.columns)

    def test_default_out_path(self, data_dir, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "OUT_DIR", tmp_path / "results")
        config = RunConfig(model="eight_schools", nuts=replace(SMALL, seed=4))
        out, _ = write_outputs(config, *run(config))
        assert out == tmp_path / "results" / "eight_schools_hmc-m_seed4.json"


class TestMain:
    ARGS = ["--warmup", "100", "--samples", "100", "--no-progress"]

    def test_run_writes_report(self, data_dir, tmp_path, capsys):
        out = tmp_path / "r.json"
        main(["run", "--model", "eight_schools", "--explain", "--out", str(out), *self.ARGS])
        text = capsys.readouterr().out
        assert "reverse x_1 -> y_1  (Normal/Normal)" in text
        assert f"✅ Report → {out}" in text
        assert json.loads(out.read_text())["reduced_dim"] == 2

    def test_exempt_flag(self, data_dir, tmp_path):
        out = tmp_path / "r.json"
        main(["run", "--model", "eight_schools", "--exempt", "", "--out", str(out), *self.ARGS])
        report = json.loads(out.read_text())
        assert report["reduced_dim"] == 1
        assert report["exempt"] == []

    def test_missing_dataset(self, data_dir, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["run", "--model", "eight_schools", "--data", str(tmp_path / "nope.csv"), *self.ARGS])
        assert str(info.value.code).startswith("❌")

    def test_short_eight_schools_file(self, data_dir, tmp_path):
        path = tmp_path / "seven.csv"
        pd.DataFrame({"sigma": [15.0] * 7, "y": [1.0] * 7}).to_csv(path, index=False)
        with pytest.raises(SystemExit) as info:
            main(["run", "--model", "eight_schools", "--data", str(path), *self.ARGS])
        assert "exactly 8 rows" in str(info.value.code)

    def test_hmc_r_without_normals(self, data_dir):
        with pytest.raises(SystemExit) as info:
            main(["run", "--model", "repeated_binary_trials", "--mode", "hmc-r", *self.ARGS])
        assert "hmc-r" in str(info.value.code)

    def test_bad_model_is_an_argparse_error(self):
        with pytest.raises(SystemExit) as info:
            main(["run", "--model", "nope"])
        assert info.value.code == 2

    def test_dump(self, data_dir, capsys):
        main(["dump", "--model", "eight_schools", "--mode", "hmc-m"])
        lines = capsys.readouterr().out.splitlines()
        assert "mu ~ Normal(0, 25)  parents: -" in lines
        assert any(line.startswith("marginalised (recovered last to first): x_8") for line in lines)

    def test_dump_noncentred_with_graph(self, data_dir, capsys):
        main(["dump", "--model", "eight_schools", "--mode", "hmc-r", "--graph"])
        text = capsys.readouterr().out
        assert "x_1_eps ~ Normal(0, 1)  parents: -" in text
        assert "x_1 := " in text
        assert "= INPUT mu" in text


def test_conjugacy_free_model_falls_back_to_plain_hmc(data_dir):
    plain, plain_trace = run(RunConfig(model="cauchy_location", mode="hmc", nuts=SMALL))
    marg, marg_trace = run(RunConfig(model="cauchy_location", mode="hmc-m", nuts=SMALL))
    assert marg.transformation_log == []
    assert marg.reduced_dim == plain.reduced_dim == 2
    np.testing.assert_array_equal(marg_trace.draws, plain_trace.draws)


BUDGET = dict(warmup_draws=2000, posterior_draws=10000)
SEEDS = (0, 1, 2)


def median_min_ess(model, mode, score):
    values = []
    for seed in SEEDS:
        _, trace = run(RunConfig(model=model, mode=mode, nuts=NutsConfig(seed=seed, **BUDGET)))
        values.append(score(trace))
    return float(np.median(values))


@pytest.mark.slow
def test_binary_trials_gain_effective_samples(data_dir):
    def score(trace):
        return min(ess(trace.values(name)) for name in trace.names)

    marg = median_min_ess("repeated_binary_trials", "hmc-m", score)
    plain = median_min_ess("repeated_binary_trials", "hmc", score)
    assert marg >= 5.0 * plain


@pytest.mark.slow
def test_eight_schools_explores_the_funnel(data_dir):
    def score(trace):
        return min(ess(trace.values("mu")), ess(np.log(trace.values("tau"))))

    marg = median_min_ess("eight_schools", "hmc-m", score)
    plain = median_min_ess("eight_schools", "hmc", score)
    assert marg >= 10.0 * plain
    _, trace = run(RunConfig(model="eight_schools", mode="hmc-m", nuts=NutsConfig(seed=0, **BUDGET)))
    assert np.mean(np.log(trace.values("tau")) < 0.0) > 0.01


@pytest.mark.slow
def test_marginalising_eight_schools_removes_the_funnel_signature(data_dir):
    def pooled(mode):
        traces = [
            run(RunConfig(model="eight_schools", mode=mode, nuts=NutsConfig(seed=seed, **BUDGET)))[1]
            for seed in SEEDS
        ]
        divergences = sum(t.divergences for t in traces)
        log_tau = np.concatenate([np.log(t.values("tau")).ravel() for t in traces])
        return divergences, float(np.mean(log_tau < 0.0))

    plain_div, plain_low = pooled("hmc")
    marg_div, marg_low = pooled("hmc-m")
    # the centred sampler diverges at the neck and under-visits small tau
    assert plain_div > 0
    assert marg_div < plain_div / 10
    assert marg_low > plain_low
