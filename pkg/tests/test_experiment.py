import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest
import yaml

from vdsa.cli import main
from vdsa.experiment import ExperimentSpec, run_experiment
from vdsa.scenario import ConfigError

SHORT = {"scenario": {"run_duration_s": 6.0}}


def small_spec(**kw):
    data = dict(
        preset="three_platoons_six",
        runs=2,
        master_seed=5,
        overrides=SHORT,
        variants=[
            {"name": "baseline", "variant": "baseline"},
            {"name": "eps_fed", "variant": "eps_greedy_federated", "training_samples_target": 40},
            {"name": "soft_small", "variant": "softmax_ideal", "training_samples_target": 20},
            {"name": "soft_large", "variant": "softmax_ideal", "training_samples_target": 60},
        ],
    )
    data.update(kw)
    return data


def write_spec(tmp_path, data, name="spec.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and "cache" not in p.parts}


def test_spec_parsing_and_validation():
    spec = ExperimentSpec.from_dict(small_spec())
    assert [v.name for v in spec.variants] == ["baseline", "eps_fed", "soft_small", "soft_large"]
    assert spec.variants[1].fusion == "federated" and spec.variants[2].policy == "softmax"
    for bad in (
        small_spec(preset="nowhere"),
        small_spec(runs=0),
        small_spec(colour="red"),
        small_spec(overrides={"scenario": {"num_platoons": -1}}),
        small_spec(overrides={"made_up": 1}),
        small_spec(variants=[{"name": "x", "variant": "dqn"}]),
        small_spec(variants=[{"name": "x", "variant": "softmax_ideal", "epsilon": 0.1}]),
        small_spec(variants=[{"name": "x", "variant": "eps_greedy_ideal", "epsilon": 2.0}]),
        small_spec(variants=[{"name": "x", "variant": "baseline"}, {"name": "x", "variant": "baseline"}]),
    ):
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict(bad)


def test_run_experiment_outputs(tmp_path):
    spec = ExperimentSpec.from_dict(small_spec())
    res = run_experiment(spec, tmp_path / "out")
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_digest"] == spec.simulation_config().digest()
    assert manifest["master_seed"] == 5
    for f in manifest["files"]:
        assert (out / f).exists(), f
    # two learning stages give two distinct result sets
    small, large = res.variants["soft_small"], res.variants["soft_large"]
    # training stops at the end of the run that reaches the target
    per_run = 3 * spec.simulation_config().scenario.epochs
    assert small.training_samples == -(-20 // per_run) * per_run
    assert large.training_samples == -(-60 // per_run) * per_run
    assert small.trained_table != large.trained_table
    assert res.variants["baseline"].trained_table is None
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"baseline", "eps_fed", "soft_small", "soft_large"}
    assert summary["baseline"]["runs"] == 2


def test_plot_tables(tmp_path):
    spec = ExperimentSpec.from_dict(small_spec())
    run_experiment(spec, tmp_path)
    rec = read_csv(tmp_path / "plots" / "reception_vs_position.csv")
    keys = [(r["variant"], r["position"]) for r in rec]
    assert len(keys) == len(set(keys)) == 4 * 5
    cdf = read_csv(tmp_path / "plots" / "dtt_sir_cdf.csv")
    by = defaultdict(list)
    for r in cdf:
        by[(r["variant"], r["dtt_channel"])].append(float(r["fraction"]))
    assert by
    for fr in by.values():
        assert all(b >= a for a, b in zip(fr, fr[1:]))
        assert fr[-1] == 1.0
    # switch averages recomputed from the raw band log
    bands = read_csv(tmp_path / "runs" / "bands.csv")
    seq = defaultdict(list)
    for r in bands:
        seq[(r["variant"], r["run"], r["platoon"])].append(int(r["band"]))
    per_variant = defaultdict(list)
    for (v, _, _), s in seq.items():
        per_variant[v].append(sum(a != b for a, b in zip(s, s[1:])))
    sw = {r["variant"]: float(r["mean_switches"]) for r in read_csv(tmp_path / "plots" / "switches_per_platoon.csv") if r["platoon"] == "all"}
    for v, counts in per_variant.items():
        assert sw[v] == pytest.approx(np.mean(counts), rel=1e-12)


def test_byte_identical_reruns(tmp_path):
    spec = ExperimentSpec.from_dict(small_spec(runs=1))
    run_experiment(spec, tmp_path / "a")
    run_experiment(spec, tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_manifest_reruns_bit_exactly(tmp_path):
    spec = ExperimentSpec.from_dict(small_spec(runs=1))
    run_experiment(spec, tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    again = ExperimentSpec.from_dict(manifest["spec"])
    run_experiment(again, tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_cli_evaluate_and_report(tmp_path, capsys):
    spec = write_spec(tmp_path, small_spec(runs=1))
    out = tmp_path / "out"
    assert main(["evaluate", "--spec", str(spec), "--out", str(out), "--seed", "3"]) == 0
    assert json.loads((out / "manifest.json").read_text())["master_seed"] == 3
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "soft_large" in text and "baseline" in text


def test_cli_train(tmp_path):
    spec = write_spec(tmp_path, small_spec())
    assert main(["train", "--spec", str(spec), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "tables" / "soft_large_trained.qtbl").exists()
    assert not (tmp_path / "t" / "tables" / "baseline_trained.qtbl").exists()


def test_cli_failures_leave_no_output(tmp_path, capsys):
    bad = write_spec(tmp_path, small_spec(runs=0))
    out = tmp_path / "never"
    assert main(["evaluate", "--spec", str(bad), "--out", str(out)]) != 0
    assert not out.exists()
    assert "runs" in capsys.readouterr().err
    assert main(["evaluate", "--spec", str(tmp_path / "missing.yaml"), "--out", str(out)]) != 0
    assert main(["report", "--out", str(out)]) != 0
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--out", str(out)])
    assert exc.value.code != 0


def test_paper_scale_flag(tmp_path, monkeypatch):
    seen = {}

    def fake(spec, out, workers):
        seen["runs"] = spec.runs
        raise ConfigError("stop")

    monkeypatch.setattr("vdsa.cli.run_experiment", fake)
    spec = write_spec(tmp_path, small_spec())
    assert main(["evaluate", "--spec", str(spec), "--out", str(tmp_path / "o"), "--paper-scale"]) != 0
    assert seen["runs"] == 200


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "specs").glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_specs_parse(path):
    spec = ExperimentSpec.load(path)
    assert spec.variants
    spec.simulation_config()
