"""Error-surface rows, delimited output, marginal views, and improvement density.

Every CSV produced here is written atomically (temp file in the target
directory, then rename) and floats are rendered with ``repr``'s shortest
round-trip decimals, so identical runs produce byte-identical files and every
derived quantity (the relative errors in particular) can be recomputed from
the stored columns to full precision.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SurfaceRow",
    "write_surface_csv",
    "read_surface_csv",
    "marginal_views",
    "write_marginal_csv",
    "density_grid",
    "write_density_csv",
    "write_loss_history_csv",
    "atomic_write_text",
]

SURFACE_COLUMNS = (
    "a", "sigma", "theta", "r0", "tenor",
    "mc_price", "mc_stderr", "gtfk_price", "corrected_price",
    "rel_err_gtfk", "rel_err_corrected", "seed", "failure",
)

#: Marginal views over the error surface: pairs of key columns.
MARGINAL_KEYS = (("a", "sigma"), ("a", "tenor"), ("sigma", "tenor"))


@dataclass(frozen=True)
class SurfaceRow:
    """One grid point of the error surface.

    ``rel_err_gtfk = (gtfk_price - mc_price) / mc_price`` and likewise for the
    corrected column; signed, so systematic over/under-pricing is visible.
    ``corrected_price``/``rel_err_corrected`` are ``None`` before training.
    A non-empty ``failure`` marks a point whose pricing raised; its numeric
    fields are NaN and downstream aggregation skips it.
    """

    a: float
    sigma: float
    theta: float
    r0: float
    tenor: float
    mc_price: float
    mc_stderr: float
    gtfk_price: float
    rel_err_gtfk: float
    seed: int
    corrected_price: float | None = None
    rel_err_corrected: float | None = None
    failure: str = ""

    @property
    def ok(self) -> bool:
        return self.failure == ""


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a same-directory temp file + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_surface_csv(
    path: str,
    rows: Sequence[SurfaceRow],
    config_echo: str = "",
    include_corrected: bool = False,
) -> None:
    """Write the error surface.

    ``config_echo`` (the canonical run configuration) is embedded as
    ``# config:``-prefixed header comments so the file alone suffices to
    reproduce the run.  Corrected columns appear only when
    ``include_corrected`` is set (pre-training surfaces omit them).
    """
    lines = ["# bkgtfk error surface v1"]
    for cfg_line in config_echo.splitlines():
        lines.append(f"# config: {cfg_line}")
    columns = [c for c in SURFACE_COLUMNS
               if include_corrected or c not in ("corrected_price", "rel_err_corrected")]
    lines.append(",".join(columns))
    for row in rows:
        values = {
            "a": _fmt(row.a), "sigma": _fmt(row.sigma), "theta": _fmt(row.theta),
            "r0": _fmt(row.r0), "tenor": _fmt(row.tenor),
            "mc_price": _fmt(row.mc_price), "mc_stderr": _fmt(row.mc_stderr),
            "gtfk_price": _fmt(row.gtfk_price),
            "corrected_price": _fmt(row.corrected_price),
            "rel_err_gtfk": _fmt(row.rel_err_gtfk),
            "rel_err_corrected": _fmt(row.rel_err_corrected),
            "seed": str(row.seed),
            # failure text is free-form exception prose; keep it one CSV field
            "failure": row.failure.replace(",", ";").replace("\n", " "),
        }
        lines.append(",".join(values[c] for c in columns))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_surface_csv(path: str) -> tuple[list[SurfaceRow], str]:
    """Parse a surface CSV back into rows plus the embedded config echo."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    echo_lines = []
    body_start = 0
    for i, ln in enumerate(lines):
        if ln.startswith("# config: "):
            echo_lines.append(ln[len("# config: "):])
        elif ln.startswith("#"):
            pass
        else:
            body_start = i
            break
    header = lines[body_start].split(",")
    known = set(SURFACE_COLUMNS)
    if not set(header) <= known or "a" not in header:
        raise ValueError(f"unrecognized surface CSV header in {path!r}")
    rows = []
    for ln in lines[body_start + 1:]:
        fields = dict(zip(header, ln.split(",")))

        def fnum(key: str) -> float:
            return float(fields[key]) if fields.get(key, "") != "" else math.nan

        def opt(key: str) -> float | None:
            v = fields.get(key, "")
            return float(v) if v != "" else None

        rows.append(SurfaceRow(
            a=fnum("a"), sigma=fnum("sigma"), theta=fnum("theta"), r0=fnum("r0"),
            tenor=fnum("tenor"), mc_price=fnum("mc_price"), mc_stderr=fnum("mc_stderr"),
            gtfk_price=fnum("gtfk_price"), rel_err_gtfk=fnum("rel_err_gtfk"),
            seed=int(fields["seed"]), corrected_price=opt("corrected_price"),
            rel_err_corrected=opt("rel_err_corrected"), failure=fields.get("failure", ""),
        ))
    return rows, "\n".join(echo_lines)


def marginal_views(rows: Sequence[SurfaceRow]) -> dict[tuple[str, str], dict[tuple[float, float], dict]]:
    """Mean absolute relative errors aggregated over the three marginal key
    pairs.  Failed rows are skipped; each cell records how many points it
    aggregates and how many failures it absorbed."""
    views: dict[tuple[str, str], dict[tuple[float, float], dict]] = {}
    for keys in MARGINAL_KEYS:
        cells: dict[tuple[float, float], dict] = {}
        for row in rows:
            cell_key = (getattr(row, keys[0]), getattr(row, keys[1]))
            cell = cells.setdefault(cell_key, {"gtfk": [], "corrected": [], "failures": 0})
            if not row.ok:
                cell["failures"] += 1
                continue
            cell["gtfk"].append(abs(row.rel_err_gtfk))
            if row.rel_err_corrected is not None:
                cell["corrected"].append(abs(row.rel_err_corrected))
        views[keys] = cells
    return views


def write_marginal_csv(path: str, keys: tuple[str, str],
                       cells: dict[tuple[float, float], dict],
                       include_corrected: bool = False) -> None:
    columns = [keys[0], keys[1], "mean_abs_rel_err_gtfk"]
    if include_corrected:
        columns.append("mean_abs_rel_err_corrected")
    columns += ["n_points", "n_failures"]
    lines = ["# bkgtfk marginal surface v1", ",".join(columns)]
    for cell_key in sorted(cells):
        cell = cells[cell_key]
        mean_g = float(np.mean(cell["gtfk"])) if cell["gtfk"] else math.nan
        record = [_fmt(cell_key[0]), _fmt(cell_key[1]), _fmt(mean_g)]
        if include_corrected:
            mean_c = float(np.mean(cell["corrected"])) if cell["corrected"] else math.nan
            record.append(_fmt(mean_c))
        record += [str(len(cell["gtfk"])), str(cell["failures"])]
        lines.append(",".join(record))
    atomic_write_text(path, "\n".join(lines) + "\n")


def density_grid(
    pre_rows: Sequence[SurfaceRow],
    post_rows: Sequence[SurfaceRow],
) -> dict[tuple[float, float], float]:
    """Fraction of points per (a, sigma) cell where the corrected pricer
    strictly improves on the uncorrected one.

    ``pre_rows`` supplies the uncorrected benchmark (``rel_err_gtfk``);
    ``post_rows`` supplies the corrected error, falling back to its own
    ``rel_err_gtfk`` when no corrected column is present (then no point
    improves and the density is zero everywhere).

    Raises
    ------
    ValueError
        If the two surfaces do not cover the same grid points in the same
        order.
    """
    if len(pre_rows) != len(post_rows):
        raise ValueError(
            f"surface size mismatch: {len(pre_rows)} pre rows vs {len(post_rows)} post rows"
        )
    cells: dict[tuple[float, float], list[bool]] = {}
    for pre, post in zip(pre_rows, post_rows):
        pre_key = (pre.a, pre.sigma, pre.theta, pre.r0, pre.tenor)
        post_key = (post.a, post.sigma, post.theta, post.r0, post.tenor)
        if pre_key != post_key:
            raise ValueError(f"grid mismatch between surfaces at point {pre_key} vs {post_key}")
        if not (pre.ok and post.ok):
            continue
        err_pre = abs(pre.rel_err_gtfk)
        err_post = abs(post.rel_err_corrected if post.rel_err_corrected is not None
                       else post.rel_err_gtfk)
        cells.setdefault((pre.a, pre.sigma), []).append(err_post < err_pre)
    return {key: float(np.mean(flags)) for key, flags in sorted(cells.items())}


def write_density_csv(path: str, density: dict[tuple[float, float], float]) -> None:
    lines = ["# bkgtfk improvement density v1", "a,sigma,improved_fraction"]
    for (a, sigma), frac in sorted(density.items()):
        lines.append(f"{_fmt(a)},{_fmt(sigma)},{_fmt(frac)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_loss_history_csv(path: str, history: Iterable[tuple[int, float]]) -> None:
    lines = ["# bkgtfk training loss history v1", "epoch,l1_loss"]
    for epoch, loss in history:
        lines.append(f"{epoch},{_fmt(loss)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
