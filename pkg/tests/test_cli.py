import hashlib

import pytest

from npisup import bench, cli
from npisup.gridsim import Dataset

SMALL_INI = """\
[npisup]
schema = 1

[sim]
L = 4
K = 12
M = 2
K_ext = 8
pilot_symbols = 0, 3
pilot_spacing = 11

[train.refine]
epochs = 2

[train.npi1]
epochs = 2

[train.npi2]
epochs = 2

[train.baseline]
epochs = 2

[train.sinr]
epochs = 2
"""


@pytest.fixture
def small_ini(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL_INI)
    return p


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _gen(ini, out, count=40, seed=3):
    return cli.main(["gen", "--config", str(ini), "--count", str(count), "--seed", str(seed), "--out", str(out)])


def test_gen_is_deterministic(tmp_path, small_ini):
    assert _gen(small_ini, tmp_path / "a") == 0
    assert _gen(small_ini, tmp_path / "b") == 0
    a, b = tmp_path / "a" / cli.DATASET_FILE, tmp_path / "b" / cli.DATASET_FILE
    assert _digest(a) == _digest(b)
    ds = Dataset.load(a)
    assert len(ds) == 40 and ds.config.K == 12


def test_gen_count_zero_is_usage_error(tmp_path, capsys):
    assert cli.main(["gen", "--count", "0", "--out", str(tmp_path / "x")]) == cli.EXIT_USAGE
    assert "count" in capsys.readouterr().err


def test_missing_required_argument():
    assert cli.main(["gen", "--count", "3"]) == cli.EXIT_USAGE


def test_unknown_phase():
    assert cli.main(["train", "bogus", "--data", "d", "--bundle", "b"]) == cli.EXIT_USAGE


def test_missing_data_is_io_error(tmp_path):
    rc = cli.main(["eval", "--data", str(tmp_path / "none"), "--methods", "ls-li", "--out", str(tmp_path / "r.csv")])
    assert rc == cli.EXIT_IO


def test_unknown_method(tmp_path, small_ini):
    _gen(small_ini, tmp_path / "d")
    rc = cli.main(["eval", "--data", str(tmp_path / "d"), "--methods", "oracle", "--out", str(tmp_path / "r.csv")])
    assert rc == cli.EXIT_USAGE


def test_npi2_before_npi1_is_dependency_error(tmp_path, small_ini, capsys):
    _gen(small_ini, tmp_path / "d")
    args = ["--data", str(tmp_path / "d"), "--bundle", str(tmp_path / "b"), "--config", str(small_ini)]
    assert cli.main(["train", "npi2", *args]) == cli.EXIT_USAGE
    assert "npi1" in capsys.readouterr().err


def test_learned_method_without_bundle(tmp_path, small_ini):
    _gen(small_ini, tmp_path / "d")
    rc = cli.main(["eval", "--data", str(tmp_path / "d"), "--methods", "proposed", "--out", str(tmp_path / "r.csv")])
    assert rc == cli.EXIT_USAGE


def test_downstream_np_beyond_extension(tmp_path, small_ini):
    _gen(small_ini, tmp_path / "d")
    rc = cli.main(["downstream", "--data", str(tmp_path / "d"), "--methods", "ls-li", "--np-grid", "9",
                   "--out", str(tmp_path / "r.csv")])
    assert rc == cli.EXIT_USAGE


def test_report_shuffled_fixture_exits_trend(tmp_path):
    rep = bench.EvalReport()
    for s, v in zip(bench.SINR_GRID_DB, (0.1, 0.2, 0.05, 0.04, 0.03)):
        rep.add_samples("ls-li", s, 0, 0.0, bench.METRIC_RECON, [v, v], 0)
    rep.write(tmp_path / "r.csv")
    assert cli.main(["report", str(tmp_path / "r.csv"), "--out", str(tmp_path / "out")]) == cli.EXIT_TREND
    assert (tmp_path / "out" / "sinr.csv").exists()


def test_report_bad_file_is_io_error(tmp_path):
    (tmp_path / "r.csv").write_text("nonsense\n")
    assert cli.main(["report", str(tmp_path / "r.csv"), "--out", str(tmp_path / "o")]) == cli.EXIT_IO


# -- config parsing -------------------------------------------------------------------------------


def test_config_overrides(small_ini):
    rc = cli.load_config(small_ini)
    assert rc.sim.pilot_symbols == (0, 3) and rc.sim.K_ext == 8
    assert rc.train["npi1"].epochs == 2
    assert rc.train["npi2"].learning_rate == cli.npinet.PhaseDefaults().npi2.learning_rate


@pytest.mark.parametrize("text", [
    "[npisup]\nschema = 2\n",
    "[sim]\nbogus = 1\n",
    "[sim]\nL = many\n",
    "[train.nope]\nepochs = 1\n",
    "not an ini",
])
def test_bad_configs(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(cli.ConfigError):
        cli.load_config(p)


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[sim]\nL = many\n")
    assert cli.main(["gen", "--config", str(p), "--count", "2", "--out", str(tmp_path / "d")]) == cli.EXIT_USAGE


# -- full small pipeline -----------------------------------------------------------------------------


def test_small_pipeline_end_to_end(tmp_path, small_ini):
    _gen(small_ini, tmp_path / "d", count=60)
    common = ["--data", str(tmp_path / "d"), "--bundle", str(tmp_path / "b"), "--config", str(small_ini)]
    for phase in ("refine", "npi1", "npi2", "baseline", "sinr"):
        assert cli.main(["train", phase, *common]) == 0, phase
    out = tmp_path / "eval.csv"
    rc = cli.main(["eval", "--data", str(tmp_path / "d"), "--bundle", str(tmp_path / "b"),
                   "--sinr-grid", "0,16", "--out", str(out)])
    assert rc == 0
    rep = bench.EvalReport.read(out)
    assert {r.method for r in rep.rows} == set(bench.METHODS)
    rc = cli.main(["downstream", "--data", str(tmp_path / "d"), "--bundle", str(tmp_path / "b"),
                   "--methods", "ls-li,proposed", "--np-grid", "4", "--rt-grid", "0.5",
                   "--out", str(tmp_path / "ds.csv")])
    assert rc == 0


def test_selftest_and_gradcheck_commands(capsys):
    assert cli.main(["selftest", "--count", "20"]) == 0
    assert cli.main(["gradcheck", "--seeds", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
