import math
import os

import pytest

from bkgtfk.results import (
    MARGINAL_KEYS,
    SURFACE_COLUMNS,
    SurfaceRow,
    atomic_write_text,
    density_grid,
    marginal_views,
    read_surface_csv,
    write_density_csv,
    write_loss_history_csv,
    write_marginal_csv,
    write_surface_csv,
)


def make_row(a=0.1, sigma=0.5, tenor=1.0, mc=0.96, gtfk=0.961, corrected=None, failure="",
             seed=42):
    rel_c = None if corrected is None else (corrected - mc) / mc
    return SurfaceRow(a=a, sigma=sigma, theta=0.04, r0=0.04, tenor=tenor,
                      mc_price=mc, mc_stderr=1e-4, gtfk_price=gtfk,
                      rel_err_gtfk=(gtfk - mc) / mc, seed=seed,
                      corrected_price=corrected, rel_err_corrected=rel_c, failure=failure)


def failed_row(a=0.1, sigma=0.5, tenor=1.0, text="GtfkConvergenceError: boom"):
    nan = math.nan
    return SurfaceRow(a=a, sigma=sigma, theta=0.04, r0=0.04, tenor=tenor,
                      mc_price=nan, mc_stderr=nan, gtfk_price=nan, rel_err_gtfk=nan,
                      seed=7, failure=text)


class TestAtomicWrite:
    def test_writes_and_overwrites(self, tmp_path):
        path = tmp_path / "f.txt"
        atomic_write_text(str(path), "one\n")
        atomic_write_text(str(path), "two\n")
        assert path.read_text() == "two\n"

    def test_leaves_no_temp_files(self, tmp_path):
        atomic_write_text(str(tmp_path / "f.txt"), "x\n")
        assert os.listdir(tmp_path) == ["f.txt"]


class TestSurfaceCsv:
    def test_round_trip_exact(self, tmp_path):
        rows = [
            make_row(a=0.1, tenor=1.0, mc=0.9612345678901234, gtfk=0.9613),
            make_row(a=0.30000000000000004, tenor=5.0, mc=0.81, gtfk=0.8123),
        ]
        path = tmp_path / "results.csv"
        write_surface_csv(str(path), rows, config_echo="x = 1\ny = 2")
        got, echo = read_surface_csv(str(path))
        assert echo == "x = 1\ny = 2"
        assert got == rows

    def test_corrected_columns_gated(self, tmp_path):
        path = tmp_path / "r.csv"
        write_surface_csv(str(path), [make_row()], include_corrected=False)
        header = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")][0]
        assert "corrected" not in header
        write_surface_csv(str(path), [make_row(corrected=0.96)], include_corrected=True)
        header = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")][0]
        assert header == ",".join(SURFACE_COLUMNS)

    def test_corrected_round_trip(self, tmp_path):
        rows = [make_row(corrected=0.9599)]
        path = tmp_path / "r.csv"
        write_surface_csv(str(path), rows, include_corrected=True)
        got, _ = read_surface_csv(str(path))
        assert got == rows

    def test_failure_row_round_trip(self, tmp_path):
        rows = [make_row(), failed_row(text="McOverflowError: path 3 exploded")]
        path = tmp_path / "r.csv"
        write_surface_csv(str(path), rows)
        got, _ = read_surface_csv(str(path))
        assert got[1].failure == "McOverflowError: path 3 exploded"
        assert not got[1].ok
        assert math.isnan(got[1].mc_price) and math.isnan(got[1].rel_err_gtfk)

    def test_failure_text_cannot_break_the_row(self, tmp_path):
        ugly = "ValueError: bad, worse,\nworst"
        path = tmp_path / "r.csv"
        write_surface_csv(str(path), [failed_row(text=ugly)])
        lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
        assert len(lines) == 2  # header + one data row
        got, _ = read_surface_csv(str(path))
        assert got[0].failure == "ValueError: bad; worse; worst"

    def test_rejects_unknown_file(self, tmp_path):
        bad = tmp_path / "junk.csv"
        bad.write_text("# something else\na,b\n1,2\n")
        with pytest.raises(ValueError):
            read_surface_csv(str(bad))


class TestMarginals:
    def test_mean_abs_error_per_cell(self):
        rows = [
            make_row(a=0.1, sigma=0.5, tenor=1.0, mc=1.0, gtfk=1.01),
            make_row(a=0.1, sigma=0.5, tenor=5.0, mc=1.0, gtfk=0.97),
            make_row(a=0.2, sigma=0.5, tenor=1.0, mc=1.0, gtfk=1.001),
        ]
        views = marginal_views(rows)
        assert set(views) == set(MARGINAL_KEYS)
        cell = views[("a", "sigma")][(0.1, 0.5)]
        assert cell["gtfk"] == pytest.approx([0.01, 0.03])
        assert views[("a", "tenor")][(0.2, 1.0)]["gtfk"] == pytest.approx([0.001])

    def test_failures_counted_not_averaged(self):
        rows = [make_row(a=0.1, sigma=0.5), failed_row(a=0.1, sigma=0.5)]
        cell = marginal_views(rows)[("a", "sigma")][(0.1, 0.5)]
        assert len(cell["gtfk"]) == 1
        assert cell["failures"] == 1

    def test_marginal_csv_shape(self, tmp_path):
        rows = [make_row(corrected=0.958), failed_row(a=0.9)]
        views = marginal_views(rows)
        path = tmp_path / "m.csv"
        write_marginal_csv(str(path), ("a", "sigma"), views[("a", "sigma")],
                           include_corrected=True)
        lines = path.read_text().splitlines()
        assert lines[1] == "a,sigma,mean_abs_rel_err_gtfk,mean_abs_rel_err_corrected,n_points,n_failures"
        assert len(lines) == 4  # comment + header + 2 cells
        # all-failure cell carries nan means but keeps its failure count
        nan_cell = lines[3].split(",")
        assert nan_cell[2] == "nan" and nan_cell[-1] == "1"


class TestDensity:
    def test_identical_surfaces_have_zero_density(self):
        rows = [make_row(a=0.1), make_row(a=0.2)]
        density = density_grid(rows, rows)
        assert density == {(0.1, 0.5): 0.0, (0.2, 0.5): 0.0}

    def test_halved_errors_have_unit_density(self):
        pre = [make_row(a=0.1, mc=1.0, gtfk=1.02), make_row(a=0.2, mc=1.0, gtfk=0.98)]
        post = [make_row(a=0.1, mc=1.0, gtfk=1.02, corrected=1.01),
                make_row(a=0.2, mc=1.0, gtfk=0.98, corrected=0.99)]
        density = density_grid(pre, post)
        assert density == {(0.1, 0.5): 1.0, (0.2, 0.5): 1.0}

    def test_mixed_cell_fraction(self):
        pre = [make_row(tenor=1.0, mc=1.0, gtfk=1.02), make_row(tenor=5.0, mc=1.0, gtfk=1.02)]
        post = [make_row(tenor=1.0, mc=1.0, gtfk=1.02, corrected=1.01),
                make_row(tenor=5.0, mc=1.0, gtfk=1.02, corrected=1.03)]
        assert density_grid(pre, post) == {(0.1, 0.5): 0.5}

    def test_failed_points_are_skipped(self):
        pre = [make_row(), failed_row()]
        post = [make_row(corrected=0.9605), failed_row()]
        assert density_grid(pre, post) == {(0.1, 0.5): 1.0}

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            density_grid([make_row(a=0.1)], [make_row(a=0.2)])
        with pytest.raises(ValueError):
            density_grid([make_row()], [make_row(), make_row()])

    def test_density_csv(self, tmp_path):
        path = tmp_path / "d.csv"
        write_density_csv(str(path), {(0.1, 0.5): 0.25, (0.2, 0.5): 1.0})
        lines = path.read_text().splitlines()
        assert lines[1] == "a,sigma,improved_fraction"
        assert lines[2] == "0.1,0.5,0.25"


def test_loss_history_csv(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_history_csv(str(path), [(0, 0.52), (1, 0.4875)])
    lines = path.read_text().splitlines()
    assert lines[1] == "epoch,l1_loss"
    assert lines[2] == "0,0.52"
    assert lines[3] == "1,0.4875"
