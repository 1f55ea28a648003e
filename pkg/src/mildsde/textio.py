"""Columnar text formats for paths, trajectories, reports and plot data.

All numbers are printed with 17 significant digits so identical runs produce
byte-identical files; nothing time- or host-dependent is ever written.
Files are written atomically (temp file in the target directory, then
rename), so concurrent writers never interleave bytes.  The exact layouts
are documented in the README with byte-exact examples.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Record",
    "fmt",
    "atomic_write_text",
    "write_wiener_path",
    "write_poisson_path",
    "write_trajectory",
    "write_report",
    "write_plot_data",
    "write_manifest",
    "read_columns",
]


def fmt(value) -> str:
    """Render a number with 17 significant digits (round-trip exact for float64)."""
    return f"{float(value):.17g}"


@dataclass(frozen=True)
class Record:
    """One report row: a named value with parameters, error bar and verdict."""

    label: str
    params: str = "-"
    value: float = 0.0
    stderr: float = 0.0
    verdict: str = "-"


def atomic_write_text(text: str, path) -> Path:
    """Write text to ``path`` via a temp file + rename in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_wiener_path(path_obj, destination) -> Path:
    lines = [
        "# mildsde wiener path v1",
        f"# seed = {path_obj.seed}",
        f"# horizon = {fmt(path_obj.grid.horizon)}",
        f"# steps = {path_obj.grid.steps}",
        "# q = " + " ".join(fmt(v) for v in path_obj.q),
        "# columns: t_left t_right dW...",
    ]
    times = path_obj.grid.times
    for n in range(path_obj.grid.steps):
        row = [fmt(times[n]), fmt(times[n + 1])]
        row.extend(fmt(v) for v in path_obj.increments[n])
        lines.append(" ".join(row))
    return atomic_write_text("\n".join(lines) + "\n", destination)


def write_poisson_path(path_obj, destination) -> Path:
    lines = [
        "# mildsde poisson path v1",
        f"# seed = {path_obj.seed}",
        f"# horizon = {fmt(path_obj.horizon)}",
        f"# atoms = {path_obj.atom_count}",
        "# columns: time mark_index",
    ]
    for t, j in zip(path_obj.times, path_obj.marks):
        lines.append(f"{fmt(t)} {int(j)}")
    return atomic_write_text("\n".join(lines) + "\n", destination)


def write_trajectory(traj, destination) -> Path:
    cfg = traj.scheme
    eps = "-" if cfg.epsilon is None else fmt(cfg.epsilon)
    lines = [
        "# mildsde trajectory v1",
        f"# fingerprint = {traj.spec_fingerprint}",
        f"# scheme = {cfg.scheme}",
        f"# dt = {fmt(cfg.dt)}",
        f"# epsilon = {eps}",
        f"# wiener_seed = {traj.wiener_seed}",
        f"# poisson_seed = {traj.poisson_seed}",
        f"# integrability = {fmt(traj.integrability)}",
        "# columns: t u...",
    ]
    times = traj.grid.times
    for n in range(traj.grid.steps + 1):
        row = [fmt(times[n])]
        row.extend(fmt(v) for v in traj.states[n])
        lines.append(" ".join(row))
    return atomic_write_text("\n".join(lines) + "\n", destination)


def write_report(report, destination) -> Path:
    """Serialize a report: one tab-separated row per record.

    Columns: experiment, record label, parameters, value, standard error,
    verdict.  ``report`` must expose .name, .verdict and .records().
    """
    lines = [
        "# mildsde report v1",
        f"# experiment: {report.name}",
        f"# verdict: {report.verdict}",
        "# columns: experiment\trecord\tparams\tvalue\tstderr\tverdict",
    ]
    for rec in report.records():
        lines.append(
            f"{report.name}\t{rec.label}\t{rec.params}\t{fmt(rec.value)}"
            f"\t{fmt(rec.stderr)}\t{rec.verdict}"
        )
    return atomic_write_text("\n".join(lines) + "\n", destination)


def write_plot_data(report, directory) -> list:
    """Emit one (x, y, err) file per curve of a report; returns written paths.

    ``report.curves()`` maps curve names to (x, y, err) arrays.
    """
    written = []
    for curve, (x, y, err) in report.curves().items():
        lines = [
            "# mildsde plotdata v1",
            f"# experiment: {report.name}",
            f"# curve: {curve}",
            "# columns: x y err",
        ]
        for xi, yi, ei in zip(x, y, err):
            lines.append(f"{fmt(xi)} {fmt(yi)} {fmt(ei)}")
        path = Path(directory) / f"{report.name}.{curve}.dat"
        written.append(atomic_write_text("\n".join(lines) + "\n", path))
    return written


def write_manifest(entries: dict, destination) -> Path:
    """key = value manifest; insertion order preserved, no timestamps."""
    lines = ["# mildsde manifest v1"]
    for key, value in entries.items():
        lines.append(f"{key} = {value}")
    return atomic_write_text("\n".join(lines) + "\n", destination)


def read_columns(path) -> np.ndarray:
    """Parse a whitespace-separated numeric file written by this module."""
    rows = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(tok) for tok in line.split()])
    return np.array(rows)
