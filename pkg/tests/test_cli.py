import csv

import numpy as np
import pytest

from dpiid import cli
from dpiid.model import HyperParams

TINY_Y = [-0.6, -0.4, 0.3, 0.5, 0.7]


@pytest.fixture
def tiny(tmp_path):
    (tmp_path / "tiny.txt").write_text("\n".join(map(str, TINY_Y)) + "\n")
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(f"""# tight tiny model
data = {tmp_path / 'tiny.txt'}
M = 2
N = 3
s = 200
S = 200
nu0 = 0
c = 0.1
a_alpha = 100
b_alpha = 100
keep = 2000
burnin = 5000
thin = 5
scale = 0.3
nmc = 1000
c1 = 0.5
step = 0.05
shells = 60
draws = 4
max_steps = 2000000
seed = 3
""")
    return tmp_path, cfg


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_bound_rows(tmp_path, capsys):
    assert cli.main(["bound", "--M", "30", "--N", "50", "--alpha", "3", "--n", "82", "--n", "245"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["M", "N", "alpha", "exact_bound", "approx_bound", "n", "traditional_bound"]
    assert len(rows) == 3 and rows[1][5] == "82" and rows[2][5] == "245"
    assert float(rows[1][4]) == pytest.approx(9.676e-6, rel=5e-4)
    assert float(rows[1][3]) > float(rows[1][4])
    out = tmp_path / "b.csv"
    assert cli.main(["bound", "--M", "5", "--N", "10", "--alpha", "1", "--out", str(out)]) == 0
    assert read(out)[1][5] == ""


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["bound", "--M", "3"],
                                  ["bound", "--M", "0", "--N", "5", "--alpha", "1"],
                                  ["sample", "--seed", "1"]])
def test_usage_errors_exit_1(argv):
    assert cli.main(argv) == 1


def test_data_errors_exit_2(tmp_path, monkeypatch):
    monkeypatch.delenv("DPIID_DATA_DIR", raising=False)
    assert cli.main(["tmcmc", "--data", "enzyme", "--keep", "10"]) == 2
    assert cli.main(["tmcmc", "--data", str(tmp_path / "nope.txt")]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("1\nx\n")
    assert cli.main(["tmcmc", "--data", str(bad)]) == 2
    assert cli.main(["report", "--samples", str(tmp_path / "missing.csv"), "--M", "2", "--N", "3"]) == 2
    assert cli.main(["tmcmc", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_bad_config_key_exit_1(tiny):
    d, cfg = tiny
    extra = d / "extra.cfg"
    extra.write_text(cfg.read_text() + "bogus = 1\n")
    assert cli.main(["tmcmc", "--config", str(extra)]) == 1


def test_engine_failure_exit_3(tiny):
    d, cfg = tiny
    # a step budget of one residual step cannot be met for any regeneration time above two
    code = cli.main(["sample", "--config", str(cfg), "--max-steps", "1", "--draws", "50",
                     "--out", str(d / "s.csv")])
    assert code == 3


def test_settings_precedence(tiny):
    d, cfg = tiny
    args = cli.build_parser().parse_args(["sample", "--config", str(cfg), "--keep", "77"])
    st = cli.resolve_settings(args)
    assert st["keep"] == 77 and st["burnin"] == 5000 and st["c"] == 0.1
    args = cli.build_parser().parse_args(["sample", "--data", "galaxy", "--c1", "3"])
    st = cli.resolve_settings(args)
    assert st["c1"] == 3.0 and st["M"] == 30 and st["nu0"] == 20.0 and st["b"] == 0.001
    args = cli.build_parser().parse_args(["sample", "--data", "galaxy", "--b", "none"])
    assert cli.resolve_settings(args)["b"] is None


def test_csv_roundtrip_is_exact(tmp_path, rng):
    hp = HyperParams(M=2, N=3, s=4, S=2, nu0=0, c=1, a_alpha=2, b_alpha=4)
    theta = rng.normal(size=(5, hp.dim)) * 10.0 ** rng.integers(-8, 8, size=(5, hp.dim))
    alloc = rng.integers(0, hp.N, size=(5, hp.M))
    p = tmp_path / "r.csv"
    cli.write_csv(p, hp.param_names() + ["c_1", "c_2"], cli._sample_rows(hp, theta, alloc))
    back = cli.read_samples_csv(p, hp)
    np.testing.assert_array_equal(back.theta, theta)
    np.testing.assert_array_equal(back.alloc, alloc)
    assert read(p)[1][hp.dim] in {"1", "2", "3"}


def test_pipeline_and_determinism(tiny):
    d, cfg = tiny
    t = d / "t.csv"
    assert cli.main(["tmcmc", "--config", str(cfg), "--out", str(t)]) == 0
    assert len(read(t)) == 2001 and read(d / "t_acf.csv")[0][0] == "lag"
    e = d / "e.csv"
    assert cli.main(["estimate", "--config", str(cfg), "--warm", str(t), "--shells", "20",
                     "--out", str(e)]) == 0
    rows = read(e)
    assert rows[0] == ["shell", "log_mass", "log_s", "log_S", "p_hat", "n_mc"]
    assert [r[0] for r in rows[1:]] == [str(k) for k in range(1, 21)]

    outs = []
    for w in ("1", "2", "1"):
        s = d / f"s{len(outs)}.csv"
        assert cli.main(["sample", "--config", str(cfg), "--warm", str(t), "--workers", w,
                         "--out", str(s)]) == 0
        outs.append(s.read_text())
    assert outs[0] == outs[1] == outs[2]
    body = read(d / "s0.csv")
    assert body[0][-3:] == ["shell", "T", "rejections"] and len(body) == 5

    p = d / "p.csv"
    assert cli.main(["predict", "--config", str(cfg), "--samples", str(d / "s0.csv"),
                     "--grid-points", "11", "--variance-scale", "4", "--out", str(p)]) == 0
    pr = np.array(read(p)[1:], dtype=float)
    assert pr.shape == (11, 4) and pr[0, 0] < min(TINY_Y) and pr[-1, 0] > max(TINY_Y)
    np.testing.assert_allclose(pr[:, 3], 4 * pr[:, 2])

    r = d / "k.csv"
    assert cli.main(["report", "--config", str(cfg), "--samples", str(t), "--out", str(r)]) == 0
    kr = read(r)
    assert kr[0] == ["K", "count", "probability"]
    assert sum(int(x[1]) for x in kr[1:]) == 2000
    assert sum(float(x[2]) for x in kr[1:]) == pytest.approx(1.0)
    assert cli.main(["report", "--config", str(cfg), "--samples", str(t), "--occupied"]) == 0
