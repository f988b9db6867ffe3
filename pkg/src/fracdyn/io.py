"""Plain-text serialization of trajectories and reports.

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly, so a trajectory read back from CSV is bit-identical to
the one that was written.  Trajectory files start with ``#`` metadata lines
(grid and history samples) followed by the mandatory header row.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, TextIO, Union

import numpy as np

from .fraccore import HistoryFunction, UniformGrid
from .solver import Trajectory

PathLike = Union[str, Path]


def fmt(x) -> str:
    """17-significant-digit text form of a float (integers pass through)."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _open_write(target):
    if isinstance(target, (str, Path)):
        return open(target, "w", newline="", encoding="utf-8"), True
    return target, False


def write_rows(target, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV with a header row; numbers go through :func:`fmt`."""
    fh, close = _open_write(target)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    finally:
        if close:
            fh.close()


def trajectory_header(n: int) -> List[str]:
    return ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"d_{i + 1}" for i in range(n)] + ["inner_iters"]


def write_trajectory(traj: Trajectory, target: Union[PathLike, TextIO]) -> None:
    """Trajectory CSV: columns ``t, x_1..x_n, d_1..d_n, inner_iters``."""
    fh, close = _open_write(target)
    try:
        g = traj.grid
        fh.write(f"# h={fmt(g.h)}\n# n_steps={g.n_steps}\n# delay_steps={g.delay_steps}\n# t0={fmt(g.t0)}\n")
        if g.delay_steps > 0:
            for t, row in zip(g.history_times(), traj.history_segment()):
                fh.write("# history," + ",".join(fmt(v) for v in (t, *row)) + "\n")
        else:
            fh.write("# history," + ",".join(fmt(v) for v in (0.0, *traj.history(0.0))) + "\n")
        n = traj.dimension
        rows = (
            [traj.times[k], *traj.states[k], *traj.derivs[k], int(traj.inner_iters[k])]
            for k in range(g.n_steps + 1)
        )
        write_rows(fh, trajectory_header(n), rows)
    finally:
        if close:
            fh.close()


def trajectory_to_text(traj: Trajectory) -> str:
    buf = io.StringIO()
    write_trajectory(traj, buf)
    return buf.getvalue()


def read_trajectory(source: Union[PathLike, TextIO]) -> Trajectory:
    """Parse a file written by :func:`write_trajectory`."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    meta: Dict[str, str] = {}
    hist = []
    body = []
    for line in text.splitlines():
        if line.startswith("# history,"):
            hist.append([float(v) for v in line[len("# history,") :].split(",")])
        elif line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ValueError("trajectory CSV has no header row")
    header, data = rows[0], rows[1:]
    if not header or header[0] != "t" or header[-1] != "inner_iters" or len(header) % 2 != 0:
        raise ValueError(f"unexpected trajectory header {header}")
    n = (len(header) - 2) // 2
    if header != trajectory_header(n):
        raise ValueError(f"unexpected trajectory header {header}")
    arr = np.array([[float(v) for v in r[:-1]] for r in data])
    iters = np.array([int(r[-1]) for r in data], dtype=int)
    try:
        h = float(meta["h"])
        n_steps = int(meta.get("n_steps", len(data) - 1))
        delay_steps = int(meta.get("delay_steps", 0))
        t0 = float(meta.get("t0", 0.0))
    except KeyError as exc:
        raise ValueError(f"trajectory CSV lacks metadata {exc}") from None
    if n_steps != len(data) - 1:
        raise ValueError(f"metadata says {n_steps} steps but the file has {len(data)} rows")
    grid = UniformGrid(h=h, n_steps=n_steps, delay_steps=delay_steps, t0=t0)
    states = arr[:, 1 : 1 + n]
    derivs = arr[:, 1 + n : 1 + 2 * n]
    if delay_steps > 0 and len(hist) == delay_steps + 1:
        history = HistoryFunction.sampled(np.array(hist)[:, 1:], grid.tau)
    elif hist:
        history = HistoryFunction.constant(np.array(hist[-1][1:]))
    else:
        history = HistoryFunction.constant(states[0])
    return Trajectory(grid, states, derivs, history, iters)


def write_report(target: Union[PathLike, TextIO], items: Dict[str, object]) -> None:
    """Flat ``key = value`` text, one entry per line, in insertion order."""
    lines = []
    for k, v in items.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (float, np.floating)) or (isinstance(v, (int, np.integer))):
            v = fmt(v)
        elif v is None:
            v = "none"
        lines.append(f"{k} = {v}")
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, Path)):
        Path(target).write_text(text, encoding="utf-8")
    else:
        target.write(text)
