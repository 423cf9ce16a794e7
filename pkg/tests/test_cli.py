import numpy as np
import pytest

from capshare.cli import main, parse_instance, parse_sweep
from capshare.errors import ConfigError
from capshare.experiments import run_method

INSTANCE = """\
[shared]
c_ul = 20e6
c_dl = 20e6
f_a = 3e9
f_c = 2e9
r_ac = 6e6
alpha = 1e-8
beta = 2e-7

[user.0]
d_in = 1.6e8
d_out = 1.6e7
e_l = 58.4
t_l = 63.2
e_t = 22.72
e_r = 2.272
eta_u = 3.5
eta_d = 3.5
c_a = 1.6e8
c_c = 1.6e8
rho = 0.5

[user.1]
d_in = 2.0e8
d_out = 2.0e7
y = 4.75e10
e_l = 73
t_l = 79
e_t = 28.4
e_r = 2.84
eta_u = 3.5
eta_d = 3.5
c_a = 2e8
c_c = 2e8
rho = 0.5
deadline = 90
"""


@pytest.fixture
def cfg(tmp_path):
    def write(text, name="c.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def test_parse_instance_fields():
    inst, digest = parse_instance(INSTANCE.replace("deadline = 90\n", ""))
    assert inst.n == 2 and len(digest) == 16
    assert inst.shared.c_total == 40e6
    assert inst.tasks[0].cycles == 1900 * 1.6e8 / 8
    assert inst.tasks[1].cycles == 4.75e10
    assert not inst.has_deadlines


def test_parse_theta_fills_missing_deadlines():
    inst, _ = parse_instance(INSTANCE.replace("beta = 2e-7", "beta = 2e-7\ntheta = 1.5"))
    assert inst.params[0].deadline == pytest.approx(1.5 * 63.2)
    assert inst.params[1].deadline == 90


@pytest.mark.parametrize("text, line, field", [
    (INSTANCE.replace("f_c = 2e9", "f_c = fast"), 5, "f_c"),
    (INSTANCE.replace("rho = 0.5\n\n[user.1]", "rho = 0.5\nspeed = 1\n\n[user.1]"), 22,
     "speed"),
    (INSTANCE.replace("e_l = 58.4\n", ""), 10, "e_l"),
    (INSTANCE.replace("[user.1]", "[user.3]"), 23, None),
])
def test_parse_errors_carry_line_and_field(text, line, field):
    with pytest.raises(ConfigError) as info:
        parse_instance(text)
    assert info.value.line == line
    assert info.value.field == field


def test_parse_syntax_error_line():
    with pytest.raises(ConfigError) as info:
        parse_instance("[shared]\nc_ul 20e6\n")
    assert info.value.line == 2


def test_invalid_value_is_config_error():
    with pytest.raises(ConfigError):
        parse_instance(INSTANCE.replace("c_ul = 20e6", "c_ul = -1"))


def test_solve_local(cfg, capsys):
    assert main(["solve", cfg(INSTANCE), "--method", "local"]) == 0
    out = capsys.readouterr()
    assert "decision    LL" in out.out
    assert "seed=0" in out.err and "capshare" in out.err


def test_solve_reports_lower_bound_and_slacks(cfg, capsys):
    text = INSTANCE.replace("beta = 2e-7", "beta = 2e-7\ntheta = 1.2")
    assert main(["solve", cfg(text), "--method", "sharecap-d"]) == 0
    out = capsys.readouterr().out
    assert "lower_bound" in out and "slack_s" in out


def test_solve_oracle_too_large(cfg, capsys):
    assert main(["solve", cfg("[generate]\nn = 15\n"), "--method", "oracle"]) == 1
    assert "TooLarge" in capsys.readouterr().err


def test_solve_missing_deadline(cfg, capsys):
    assert main(["solve", cfg(INSTANCE), "--method", "sharecap-d"]) == 1
    assert "MissingDeadline" in capsys.readouterr().err


def test_solve_infeasible_exit(cfg, capsys):
    # user 1's deadline is below its local time: nothing can be repaired
    text = INSTANCE.replace("deadline = 90", "deadline = 10").replace(
        "beta = 2e-7", "beta = 2e-7\ntheta = 1.5")
    assert main(["solve", cfg(text), "--method", "sharecap-d"]) == 2


def test_solve_numerical_failure_exit(cfg, monkeypatch):
    import capshare.cli as cli
    from capshare.errors import NumericalFailure

    def broken(*a, **k):
        raise NumericalFailure("forced")
    monkeypatch.setattr(cli, "run_method", broken)
    assert main(["solve", cfg(INSTANCE)]) == 3


def test_parse_error_exit(cfg, capsys):
    assert main(["solve", cfg(INSTANCE.replace("f_c = 2e9", "f_c = x"))]) == 1
    assert "line 5" in capsys.readouterr().err


def test_missing_config_is_io_error(tmp_path):
    assert main(["solve", str(tmp_path / "absent.cfg")]) == 4


def test_compare_gaps(cfg, capsys):
    assert main(["compare", cfg("[generate]\nn = 4\n"), "--seed", "3"]) == 0
    rows = [ln.split() for ln in capsys.readouterr().out.splitlines()[1:]]
    gaps = {r[0]: float(r[2].rstrip("%")) for r in rows}
    assert gaps["oracle"] == 0.0
    assert all(g >= 0 for g in gaps.values())
    assert "sharecap-d" not in gaps


def test_share_cap_beats_random_mapping_mostly():
    from capshare.cli import _generated, _Source

    wins = 0
    for seed in range(50):
        inst = _generated(_Source("[generate]\nn = 5\n"), seed)
        opt = run_method("oracle", inst, seed).total
        sc = run_method("sharecap", inst, seed).total
        rnd = run_method("random", inst, seed).total
        wins += (sc - opt) <= (rnd - opt)
    assert wins >= 45


def test_sweep_preset_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sweep", "--preset", "fig3", "--realizations", "1", "--seed", "4"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert {ln.split(",")[1] for ln in lines[1:]} == {repr(k * 1e9) for k in range(1, 8)}
    assert not list(tmp_path.glob(".*.tmp"))


def test_sweep_missing_directory(tmp_path):
    out = tmp_path / "missing" / "x.csv"
    assert main(["sweep", "--preset", "fig3", "--realizations", "1", "--out", str(out)]) == 4


def test_sweep_config(cfg, capsys):
    text = ("[sweep]\nparam = n\nvalues = 2, 3\nmethods = local, cloud\nrealizations = 2\n"
            "timing = false\n\n[shared]\nbeta = 1e-7\n")
    spec, _ = parse_sweep(text, seed=2)
    assert spec.grid == (2, 3) and spec.base.beta == 1e-7 and spec.seed == 2
    assert main(["sweep", cfg(text)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("param,value,method") and len(out) == 5


def test_sweep_config_errors():
    with pytest.raises(ConfigError) as info:
        parse_sweep("[sweep]\nparam = beta\nvalues = 1e-7, big\n")
    assert info.value.line == 3 and info.value.field == "values"
    with pytest.raises(ConfigError):
        parse_sweep("[sweep]\nparam = beta\nvalues = 1e-7\nmethods = psychic\n")
    with pytest.raises(ConfigError):
        parse_sweep("[sweep]\nparam = beta\n")


def test_sweep_requires_one_source(cfg):
    assert main(["sweep"]) == 1


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "capshare", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "capshare" in res.stdout
