"""Sample container and the CSV dataset format.

CSV layout: a header ``x_1..x_m,f_1..f_n[,df_1_1..df_n_m][,traj_id]`` where
``df_i_j`` is the partial derivative of output ``i`` w.r.t. input ``j``
(row-major flattening of the Jacobian). Lines starting with ``#`` are
comments. Floats are written with 17 significant digits, which round-trips
IEEE doubles exactly.
"""
import hashlib
import io
import re
from dataclasses import dataclass

import numpy as np

from .exceptions import DataContractError, DimensionError, GradientDataRequired

_FMT = "%.17g"


@dataclass(frozen=True)
class Dataset:
    """``M`` samples ``(x, f(x))`` with optional Jacobians.

    Attributes
    ----------
    inputs : ndarray, shape (M, m)
    outputs : ndarray, shape (M, n)
    jacobians : ndarray, shape (M, n, m), optional
    trajectory_ids : ndarray of int, shape (M,), optional
    """

    inputs: np.ndarray
    outputs: np.ndarray
    jacobians: np.ndarray = None
    trajectory_ids: np.ndarray = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        f = np.asarray(self.outputs, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        if x.shape[0] != f.shape[0]:
            raise DimensionError(
                f"inputs have {x.shape[0]} rows but outputs have {f.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(f))):
            raise DataContractError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", f)
        if self.jacobians is not None:
            j = np.asarray(self.jacobians, dtype=float)
            if j.shape != (x.shape[0], f.shape[1], x.shape[1]):
                raise DimensionError(
                    f"jacobians must have shape {(x.shape[0], f.shape[1], x.shape[1])}, "
                    f"got {j.shape}")
            if not np.all(np.isfinite(j)):
                raise DataContractError("jacobians contain non-finite values")
            object.__setattr__(self, "jacobians", j)
        if self.trajectory_ids is not None:
            t = np.asarray(self.trajectory_ids)
            if t.shape != (x.shape[0],):
                raise DimensionError("trajectory_ids must have one entry per sample")
            object.__setattr__(self, "trajectory_ids", t.astype(np.int64))

    @property
    def n_samples(self):
        return self.inputs.shape[0]

    @property
    def m(self):
        return self.inputs.shape[1]

    @property
    def n(self):
        return self.outputs.shape[1]

    @property
    def has_jacobians(self):
        return self.jacobians is not None

    def __len__(self):
        return self.n_samples

    def subset(self, idx):
        """Rows ``idx`` as a new dataset (Jacobians and ids follow)."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.inputs[idx],
            self.outputs[idx],
            None if self.jacobians is None else self.jacobians[idx],
            None if self.trajectory_ids is None else self.trajectory_ids[idx],
        )

    def require_jacobians(self):
        if self.jacobians is None:
            raise GradientDataRequired(
                "this operation needs Jacobian samples (df_i_j columns)")
        return self.jacobians

    def fingerprint(self):
        """Size, dimensions and a SHA-256 over the raw arrays."""
        h = hashlib.sha256()
        for arr in (self.inputs, self.outputs, self.jacobians, self.trajectory_ids):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return {
            "n_samples": int(self.n_samples),
            "m": int(self.m),
            "n": int(self.n),
            "has_jacobians": self.has_jacobians,
            "n_trajectories": (None if self.trajectory_ids is None
                               else int(np.unique(self.trajectory_ids).size)),
            "sha256": h.hexdigest(),
        }


def _header(m, n, jac, traj):
    cols = [f"x_{j + 1}" for j in range(m)] + [f"f_{i + 1}" for i in range(n)]
    if jac:
        cols += [f"df_{i + 1}_{j + 1}" for i in range(n) for j in range(m)]
    if traj:
        cols.append("traj_id")
    return cols


def write_csv(data, path):
    """Write ``data`` to ``path`` (or a text stream) in the dataset CSV format."""
    m, n, M = data.m, data.n, data.n_samples
    cols = _header(m, n, data.has_jacobians, data.trajectory_ids is not None)
    blocks = [data.inputs, data.outputs]
    if data.has_jacobians:
        blocks.append(data.jacobians.reshape(M, n * m))
    body = np.hstack(blocks)
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    if data.trajectory_ids is None:
        np.savetxt(buf, body, fmt=_FMT, delimiter=",")
    else:
        fmt = [_FMT] * body.shape[1] + ["%d"]
        np.savetxt(buf, np.column_stack([body, data.trajectory_ids]), fmt=fmt,
                   delimiter=",")
    text = buf.getvalue()
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


_XCOL = re.compile(r"x_(\d+)$")
_FCOL = re.compile(r"f_(\d+)$")
_DCOL = re.compile(r"df_(\d+)_(\d+)$")


def read_csv(path):
    """Load a dataset CSV. Column order is taken from the header."""
    if hasattr(path, "read"):
        lines = path.read().splitlines()
    else:
        with open(path) as fh:
            lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataContractError(f"{path}: no header row")
    cols = [c.strip() for c in lines[0].split(",")]
    xs, fs, ds, traj = {}, {}, {}, None
    for pos, name in enumerate(cols):
        if mt := _XCOL.match(name):
            xs[int(mt.group(1))] = pos
        elif mt := _FCOL.match(name):
            fs[int(mt.group(1))] = pos
        elif mt := _DCOL.match(name):
            ds[(int(mt.group(1)), int(mt.group(2)))] = pos
        elif name == "traj_id":
            traj = pos
        else:
            raise DataContractError(f"{path}: unknown column {name!r}")
    m, n = len(xs), len(fs)
    if m == 0 or n == 0:
        raise DataContractError(f"{path}: need at least one x_ and one f_ column")
    if sorted(xs) != list(range(1, m + 1)) or sorted(fs) != list(range(1, n + 1)):
        raise DataContractError(f"{path}: x_/f_ columns must be numbered 1..m / 1..n")
    if ds and len(ds) != n * m:
        raise DataContractError(f"{path}: expected {n * m} df_ columns, found {len(ds)}")

    rows = len(lines) - 1
    if rows == 0:
        raise DataContractError(f"{path}: no data rows")
    try:
        table = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",",
                           dtype=float, ndmin=2)
    except ValueError as exc:
        raise DataContractError(f"{path}: {exc}") from exc
    if table.shape[1] != len(cols):
        raise DataContractError(f"{path}: rows have {table.shape[1]} fields, header {len(cols)}")

    x = table[:, [xs[j] for j in range(1, m + 1)]]
    f = table[:, [fs[i] for i in range(1, n + 1)]]
    jac = None
    if ds:
        order = [ds[(i, j)] for i in range(1, n + 1) for j in range(1, m + 1)]
        jac = table[:, order].reshape(rows, n, m)
    ids = None if traj is None else table[:, traj].astype(np.int64)
    return Dataset(x, f, jac, ids)
