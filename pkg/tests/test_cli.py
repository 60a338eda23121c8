import csv
import io
import json

import numpy as np
import pytest

from maflow.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED, EXIT_OK, main
from maflow.errors import GridMismatch
from maflow.fieldio import FieldFormatError, config_dict, config_from_dict, read_field, write_field
from maflow.fields import SpaceTimeField
from maflow.grid import DomainSpec, build_grid
from maflow.harness import exact_case


@pytest.fixture
def quad1_config(tmp_path, quad1, quad1_grid):
    path = tmp_path / "quad1.json"
    path.write_text(json.dumps(config_dict(quad1.problem, quad1_grid)))
    return path


def _solve(tmp_path, config, name="phi.bin", *extra):
    out = tmp_path / name
    assert main(["solve", "--config", str(config), "--out", str(out), *extra]) == EXIT_OK
    return out


# -- field files ------------------------------------------------------------


def test_field_round_trip_is_bit_exact(tmp_path, quad1_grid):
    rng = np.random.default_rng(3)
    f = SpaceTimeField(quad1_grid, rng.normal(size=(quad1_grid.n_times, quad1_grid.n_space)))
    path = tmp_path / "f.bin"
    write_field(path, f)
    back = read_field(path)
    assert back.values.tobytes() == f.values.tobytes()
    assert back.grid.h == quad1_grid.h and back.grid.dt == quad1_grid.dt
    assert read_field(path, quad1_grid).values.tobytes() == f.values.tobytes()


def test_read_rejects_other_grid(tmp_path, quad1_exact):
    path = tmp_path / "f.bin"
    write_field(path, quad1_exact)
    other = build_grid(DomainSpec("ball", 1, 1.0), 0.2, 0.005, 0.25)
    with pytest.raises(GridMismatch):
        read_field(path, other)


def test_read_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a field\n")
    with pytest.raises(FieldFormatError):
        read_field(path)


def test_config_round_trip(quad1, quad1_grid):
    cfg = config_from_dict(config_dict(quad1.problem, quad1_grid))
    assert cfg.grid.n_nodes == quad1_grid.n_nodes
    assert cfg.problem.conv.c_n == 4
    assert cfg.params.method == "fixed-point"


# -- solve ------------------------------------------------------------------


def test_solve_writes_field_and_log(tmp_path, quad1_config, quad1_exact):
    out = _solve(tmp_path, quad1_config)
    phi = read_field(out)
    assert np.max(np.abs(phi.values - quad1_exact.values)) < 1e-6
    with open(f"{out}.log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == quad1_exact.grid.n_times - 1
    assert set(rows[0]) == {"step", "iterations", "residual"}


def test_solve_is_deterministic(tmp_path, quad1_config):
    a = _solve(tmp_path, quad1_config, "a.bin")
    b = tmp_path / "b.bin"
    assert main(["--threads", "1", "solve", "--config", str(quad1_config), "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert open(f"{a}.log.csv").read() == open(f"{b}.log.csv").read()


def test_solve_with_newton(tmp_path, quad1_config, quad1_exact):
    out = _solve(tmp_path, quad1_config, "n.bin", "--method", "newton")
    assert np.max(np.abs(read_field(out).values - quad1_exact.values)) < 1e-6


def test_missing_config(tmp_path, capsys):
    code = main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.bin")])
    assert code == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_degenerate_g_refused(tmp_path, capsys):
    case = exact_case("degen-check")
    path = tmp_path / "degen.json"
    path.write_text(json.dumps(config_dict(case.problem, case.grid())))
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "x.bin")]) == EXIT_CONFIG
    assert "DegenerateG" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path):
    # one fixed-point step with dt / h^2 = 25 is far outside the contraction range
    case = exact_case("quartic")
    raw = config_dict(case.problem, case.grid(0.1, 0.25))
    path = tmp_path / "tight.json"
    path.write_text(json.dumps(raw))
    code = main(["solve", "--config", str(path), "--out", str(tmp_path / "x.bin")])
    assert code == EXIT_DIVERGED


# -- check ------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["psub", "psuper", "vsub", "vsuper", "potential"])
def test_checks_pass_on_solution(tmp_path, quad1_config, kind, capsys):
    out = _solve(tmp_path, quad1_config)
    capsys.readouterr()
    code = main(["check", kind, "--field", str(out), "--config", str(quad1_config)])
    rep = json.loads(capsys.readouterr().out)
    assert code == EXIT_OK
    assert rep["verdict"] == "pass"
    assert set(rep) == {"verdict", "worstMargin", "worstNode", "tol"}


def test_check_failure_exit_code(tmp_path, quad1_config, quad1_grid, capsys):
    path = tmp_path / "const.bin"
    write_field(path, SpaceTimeField.constant(quad1_grid, 0.0))
    code = main(["check", "psub", "--field", str(path), "--config", str(quad1_config), "--a-mode", "sampled"])
    assert code == EXIT_FAILED
    rep = json.loads(capsys.readouterr().out)
    assert rep["verdict"] == "fail"
    assert rep["worstMargin"] < -rep["tol"]


def test_check_grid_mismatch(tmp_path, quad1_config):
    path = tmp_path / "other.bin"
    write_field(path, SpaceTimeField.constant(build_grid(DomainSpec("ball", 1, 1.0), 0.2, 0.005, 0.25), 0.0))
    assert main(["check", "psub", "--field", str(path), "--config", str(quad1_config)]) == EXIT_CONFIG


# -- envelope and regularize ------------------------------------------------


def test_envelope_psh_radial(tmp_path):
    case = exact_case("radial-env")
    grid = case.grid()
    src, out = tmp_path / "v.bin", tmp_path / "p.bin"
    write_field(src, case.problem.boundary_field(grid))
    assert main(["envelope", "psh", "--obstacle", str(src), "--out", str(out)]) == EXIT_OK
    p = read_field(out)
    assert np.all(np.abs(p.values[:, grid.interior] + 1.0) <= 2 * grid.h)


def test_envelope_perron(tmp_path, quad1_exact):
    a, b, out = tmp_path / "a.bin", tmp_path / "b.bin", tmp_path / "m.bin"
    write_field(a, quad1_exact - 0.5)
    write_field(b, quad1_exact - quad1_exact.grid.times[:, None])
    assert main(["envelope", "perron", "--inputs", str(a), str(b), "--out", str(out)]) == EXIT_OK
    m = read_field(out).values
    assert np.array_equal(m, np.maximum((quad1_exact - 0.5).values, (quad1_exact - quad1_exact.grid.times[:, None]).values))


def test_envelope_needs_inputs(tmp_path):
    assert main(["envelope", "psh", "--out", str(tmp_path / "x.bin")]) == EXIT_CONFIG


def test_regularize_sup_of_linear_in_t(tmp_path, quad1_grid):
    # sup over t' of t' - (t - t')^2 / 2eps^2 is t + eps^2/2 when the maximizer t' = t + eps^2 is a grid time
    eps = 0.1
    u = SpaceTimeField(quad1_grid, np.repeat(quad1_grid.times[:, None], quad1_grid.n_space, axis=1))
    src, out = tmp_path / "u.bin", tmp_path / "s.bin"
    write_field(src, u)
    assert main(["regularize", "sup", "--eps", str(eps), "--in", str(src), "--out", str(out)]) == EXIT_OK
    s = read_field(out).values
    t = quad1_grid.times
    inside = t + eps**2 <= quad1_grid.T + 1e-12
    assert np.allclose(s[inside], (t[inside] + eps**2 / 2)[:, None], atol=1e-12)
    assert np.all(s >= u.values)


def test_regularize_mollify_runs(tmp_path, quad1_exact):
    src, out = tmp_path / "u.bin", tmp_path / "m.bin"
    write_field(src, quad1_exact)
    with pytest.warns(Warning):
        code = main(["regularize", "mollify", "--eps", "0.1", "--in", str(src), "--out", str(out)])
    assert code == EXIT_OK
    assert read_field(out).values.shape == quad1_exact.values.shape


def test_regularize_bad_eps(tmp_path, quad1_exact):
    src = tmp_path / "u.bin"
    write_field(src, quad1_exact)
    assert main(["regularize", "inf", "--eps", "0", "--in", str(src), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


# -- study ------------------------------------------------------------------


def test_study_csv(capsys):
    assert main(["study", "--case", "quad1", "--levels", "2"]) == EXIT_OK
    text = capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO(text)))
    assert [r["level"] for r in rows] == ["0", "1"]
    assert rows[0]["order"] == "nan"
    assert float(rows[1]["error"]) <= float(rows[1]["budget"])


def test_study_unknown_case(capsys):
    assert main(["study", "--case", "nope"]) == EXIT_CONFIG
