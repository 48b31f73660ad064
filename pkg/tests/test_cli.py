import json
import pickle
from pathlib import Path

import numpy as np
import pytest

from subdiff import cli, config
from subdiff import experiments as E
from subdiff.errors import ConfigError, NumericalError
from subdiff.estimators import MsdCurve

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_FREE = """
experiment = "free_baseline"
replicas = 100
seed = 3
output_dir = "out"

[model.sampler]
kind = "poisson"
intensity = 1.0
n_particles = 50

[model.potential]
kind = "free"

[integrator]
dt = {dt}
t_end = 10.0

[analysis]
fit_model = "linear"
fit_window = [1.0, 10.0]
paths = "all"
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert cli.main(["validate", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK\n")
    assert "[integrator]" in out or "[analysis]" in out


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_config_round_trip(path):
    cfg = config.load(path)
    again = config.loads(cfg.dumps())
    assert again.to_dict() == cfg.to_dict()
    assert again.dumps() == cfg.dumps()


def test_negative_dt_names_key(tmp_path, capsys):
    p = _write(tmp_path, SMALL_FREE.format(dt=-0.1))
    assert cli.main(["run", str(p), "--output-dir", str(tmp_path / "o")]) == 2
    assert "dt" in capsys.readouterr().err
    assert cli.main(["validate", str(p)]) == 2


def test_unknown_key_rejected(tmp_path, capsys):
    p = _write(tmp_path, SMALL_FREE.format(dt=0.1).replace("t_end = 10.0", "t_end = 10.0\ntend = 3"))
    assert cli.main(["validate", str(p)]) == 2
    assert "tend" in capsys.readouterr().err


def test_missing_experiment(tmp_path, capsys):
    p = _write(tmp_path, SMALL_FREE.format(dt=0.1).replace('experiment = "free_baseline"', ""))
    assert cli.main(["validate", str(p)]) == 2
    assert "experiment" in capsys.readouterr().err


def test_drift_cutoff_violation(tmp_path, capsys):
    text = SMALL_FREE.format(dt=0.1).replace("t_end = 10.0", "t_end = 10.0\ndrift_cutoff = 30.0")
    assert cli.main(["validate", str(_write(tmp_path, text))]) == 2
    assert "drift_cutoff" in capsys.readouterr().err


def test_config_error_carries_key():
    with pytest.raises(ConfigError) as info:
        config.loads(SMALL_FREE.format(dt=-1))
    assert info.value.key.endswith("dt")


def test_missing_file(tmp_path):
    assert cli.main(["validate", str(tmp_path / "nope.toml")]) == 2


def test_free_baseline_run(tmp_path):
    p = _write(tmp_path, SMALL_FREE.format(dt=0.1))
    out = tmp_path / "o"
    assert cli.main(["run", str(p), "--output-dir", str(out)]) == 0
    for name in ("msd.csv", "fit.json", "manifest.json", "msd.svg"):
        assert (out / name).exists()
    curve = MsdCurve.from_csv(out / "msd.csv")
    assert curve.msd[0] == 0
    fit = json.loads((out / "fit.json").read_text())
    slope = fit["fits"][0]["exponent_or_slope"]
    assert 0.9 <= slope <= 1.1
    man = json.loads((out / "manifest.json").read_text())
    assert man["threads"] == 1 and len(man["replica_seeds"]) == 100
    assert man["config"]["experiment"] == "free_baseline"


def test_determinism_across_threads(tmp_path):
    p = _write(tmp_path, SMALL_FREE.format(dt=0.1).replace("replicas = 100", "replicas = 6"))
    assert cli.main(["run", str(p), "--output-dir", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert cli.main(["run", str(p), "--output-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    assert cli.main(["run", str(p), "--output-dir", str(tmp_path / "c"), "--seed", "4"]) == 0
    a, b, c = ((tmp_path / d / "msd.csv").read_bytes() for d in "abc")
    assert a == b
    assert a != c


def test_rerun_from_manifest(tmp_path):
    p = _write(tmp_path, SMALL_FREE.format(dt=0.1).replace("replicas = 100", "replicas = 4"))
    assert cli.main(["run", str(p), "--output-dir", str(tmp_path / "a")]) == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    snap = config.from_dict(man["config"])
    q = tmp_path / "again.toml"
    q.write_text(snap.dumps())
    assert cli.main(["run", str(q), "--output-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "msd.csv").read_bytes() == (tmp_path / "b" / "msd.csv").read_bytes()


def test_bad_threads(tmp_path):
    p = _write(tmp_path, SMALL_FREE.format(dt=0.1))
    assert cli.main(["run", str(p), "--threads", "0"]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(cfg, threads):
        raise NumericalError("collision in drift evaluation (pair 3, 4)", pair=(3, 4))

    monkeypatch.setattr(cli, "run_experiment", boom)
    p = _write(tmp_path, SMALL_FREE.format(dt=0.1))
    assert cli.main(["run", str(p), "--output-dir", str(tmp_path / "o")]) == 3
    assert "collision in drift evaluation (pair 3, 4)" in capsys.readouterr().err


def test_numerical_error_survives_worker_boundary():
    err = pickle.loads(pickle.dumps(NumericalError("collision", pair=(1, 2))))
    assert isinstance(err, NumericalError) and err.pair == (1, 2)


def test_replica_seeds_stable():
    a = E.replica_rng(7, 3).standard_normal(3)
    b = np.random.default_rng(np.random.SeedSequence(7, spawn_key=(3,))).standard_normal(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, E.replica_rng(7, 4).standard_normal(3))


def test_telescoping_run(tmp_path):
    text = (CONFIGS / "telescoping.toml").read_text().replace("n_samples = 10000", "n_samples = 2000")
    out = tmp_path / "t"
    assert cli.main(["run", str(_write(tmp_path, text)), "--output-dir", str(out)]) == 0
    lines = (out / "table.csv").read_text().splitlines()
    assert lines[0] == "N,energy,alpha_bound,n_samples,rejects"
    last = lines[-1].split(",")
    assert last[0] == "64" and float(last[2]) < 0.02
