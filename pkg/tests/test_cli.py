import io

import numpy as np
import pandas as pd
import pytest

from roughsew import __version__
from roughsew.cli import main
from roughsew.roughpath import write_path_csv


CONSTANT_COLUMNS = [
    "alpha", "theta_star", "zeta_inv_alpha", "zeta_alpha_theta",
    "C", "C_prime", "C_double_prime", "C_triple_prime",
]


def write_path(path, times, values):
    write_path_csv(path, times, np.asarray(values, dtype=float).reshape(len(times), -1))
    return str(path)


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def report(text):
    return pd.read_csv(io.StringIO(text))


@pytest.fixture
def square_path(tmp_path):
    return write_path(
        tmp_path / "square.csv", [0.0, 0.25, 0.5, 0.75, 1.0], [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]
    )


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_signature_report(capsys, square_path):
    code, out, _ = run(capsys, ["signature", "--path", square_path, "--level", "2"])
    assert code == 0
    frame = report(out)
    assert list(frame.columns[:5]) == ["s", "t", "level", "word", "value"]
    assert list(frame.columns[5:]) == CONSTANT_COLUMNS
    assert len(frame) == 1 + 2 + 4
    level2 = frame[frame.level == 2].set_index("word").value
    # a closed unit square traversed counter-clockwise has Lévy area 1
    assert level2["(1,2)"] - level2["(2,1)"] == pytest.approx(2.0)


def test_integrate1d_tautological(capsys, square_path):
    code, out, _ = run(capsys, ["integrate1d", "--path", square_path, "--p", "2"])
    assert code == 0
    frame = report(out)
    assert len(frame) == 4
    assert np.all(frame.value <= frame.local + frame.bound + 1e-12)
    assert np.all(np.isfinite(frame.zeta_theta))


def test_integrate2d_constant_on_linear_drivers(capsys, tmp_path):
    first = write_path(tmp_path / "a.csv", [0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
    second = write_path(tmp_path / "b.csv", [0.0, 0.5, 1.0], [0.0, -1.0, 3.0])
    argv = ["integrate2d", "--path", first, "--path2", second, "--integrand", "const", "--p", "2"]
    code, out, _ = run(capsys, argv)
    assert code == 0
    row = report(out).iloc[0]
    assert row.joint == pytest.approx(6.0)
    assert row.iterated_12 == pytest.approx(6.0)
    assert row.iterated_21 == pytest.approx(6.0)
    assert {"alpha", "theta_star", "C_double_prime"} <= set(row.index)


def test_maximal_check_is_reproducible(capsys):
    argv = ["maximal-check", "--trials", "100", "--seed", "7"]
    code, first, _ = run(capsys, argv)
    assert code == 0
    _, second, _ = run(capsys, argv)
    assert first == second
    frame = report(first)
    assert len(frame) == 100
    assert frame.seed.tolist() == list(range(7, 107))
    assert frame.ratio.max() <= 1.0


def test_maximal_check_seed_changes_the_partitions(capsys):
    _, first, _ = run(capsys, ["maximal-check", "--trials", "5", "--seed", "1", "--integrand", "product"])
    _, second, _ = run(capsys, ["maximal-check", "--trials", "5", "--seed", "2", "--integrand", "product"])
    assert first != second


def test_report_to_file(capsys, tmp_path, square_path):
    target = tmp_path / "out.csv"
    code, out, _ = run(capsys, ["signature", "--path", square_path, "--level", "1", "--out", str(target)])
    assert code == 0 and out == ""
    assert report(target.read_text()).shape == (3, 5 + len(CONSTANT_COLUMNS))


def test_variation_levels(capsys):
    code, out, _ = run(capsys, ["variation", "--p", "2.5", "--segments", "4"])
    assert code == 0
    frame = report(out)
    assert frame.kind.tolist() == ["level1", "level2"]
    assert frame.p.tolist() == pytest.approx([2.5, 1.25])


def test_mixed_variation(capsys):
    code, out, _ = run(capsys, ["variation", "--p", "2", "--twod", "--segments", "4"])
    assert code == 0
    row = report(out).iloc[0]
    assert row.kind == "mixed" and row["mode"] == "exact" and row.value > 0.0


def test_fubini_sweep(capsys):
    argv = ["fubini-sweep", "--meshes", "2,4,8", "--integrand", "product"]
    code, out, _ = run(capsys, argv)
    assert code == 0
    frame = report(out)
    assert frame.cells.tolist() == [2, 4, 8]
    assert frame.gap.iloc[-1] <= 1e-8 * max(1.0, abs(frame.joint.iloc[-1]))


def test_stability(capsys):
    argv = ["stability", "--integrand", "product", "--eps-sweep", "1e-2,1e-3,1e-4"]
    code, out, _ = run(capsys, argv)
    assert code == 0
    frame = report(out)
    assert frame.slope.iloc[0] >= 0.9


@pytest.mark.parametrize(
    "argv",
    [
        ["signature", "--segments", "3", "--level", "2"],
        ["integrate1d", "--segments", "4", "--p", "2.5"],
        ["integrate2d", "--segments", "4", "--integrand", "product"],
        ["maximal-check", "--segments", "4", "--trials", "2"],
        ["fubini-sweep", "--segments", "4", "--meshes", "2,4", "--integrand", "product"],
        ["variation", "--segments", "4", "--p", "2.5"],
        ["variation", "--segments", "4", "--p", "2", "--twod"],
        ["stability", "--segments", "4", "--integrand", "product", "--eps-sweep", "1e-2,1e-3"],
    ],
)
def test_every_report_row_carries_the_constants(capsys, argv):
    code, out, _ = run(capsys, argv)
    assert code == 0
    frame = report(out)
    assert set(CONSTANT_COLUMNS) <= set(frame.columns)
    assert np.all(np.isfinite(frame[CONSTANT_COLUMNS].to_numpy()))
    assert np.all(frame.alpha * frame.theta_star > 1.0)


def test_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, ["signature", "--path", str(tmp_path / "nope.csv")])
    assert code == 2
    assert "bad input" in err


def test_malformed_file(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x1\n0.0,1.0\n0.5,oops\n")
    code, _, _ = run(capsys, ["signature", "--path", str(bad)])
    assert code == 2


def test_off_grid_time(capsys, square_path):
    code, _, _ = run(capsys, ["signature", "--path", square_path, "--s", "0.1"])
    assert code == 2


def test_kernel_tail_above_tolerance(capsys):
    code, _, err = run(capsys, ["integrate2d", "--kernel-tol", "1e-300"])
    assert code == 3
    assert "no convergence" in err
