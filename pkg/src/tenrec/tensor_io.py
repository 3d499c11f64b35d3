"""
On-disk formats.

TNSR tensor files (all integers and floats little-endian)::

    offset 0   4 bytes   magic "TNSR"
    offset 4   uint16    version (1)
    offset 6   uint16    order N
    offset 8   N uint64  dims
    8 + 8N     float64   payload, first index fastest

Every file is written to a temporary sibling and renamed over the target, so
readers never see a partial file.
"""
import configparser
import contextlib
import csv
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from dataclasses import field
from typing import Optional

import numpy as np

from tenrec import constants
from tenrec.errors import ArgumentError
from tenrec.errors import TensorFormatError
from tenrec.tensor_core import DenseTensor

_PREAMBLE = struct.Struct("<4sHH")


def _default_file_mode():
    umask = os.umask(0)
    os.umask(umask)
    return 0o666 & ~umask


@contextlib.contextmanager
def atomic_write(path, binary=False):
    """Write through a temporary sibling that replaces `path` on success."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        if binary:
            handle = os.fdopen(fd, "wb")
        else:
            handle = os.fdopen(fd, "w", encoding="utf-8", newline="")
        with handle:
            yield handle
        # mkstemp creates 0600 files; give the result the usual permissions.
        os.chmod(tmp_path, _default_file_mode())
        os.replace(tmp_path, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp_path)
        raise


def encode_tensor(t):
    if not isinstance(t, DenseTensor):
        t = DenseTensor(t)
    header = _PREAMBLE.pack(constants.TNSR_MAGIC, constants.TNSR_VERSION, t.order)
    dims = np.asarray(t.dims, dtype="<u8").tobytes()
    return header + dims + t.flat().astype("<f8").tobytes()


def decode_tensor(data):
    """Parse TNSR bytes; every error names the byte offset it was detected at."""
    if len(data) < _PREAMBLE.size:
        raise TensorFormatError(
            f"Header truncated: expected at least {_PREAMBLE.size} bytes, got {len(data)}",
            offset=len(data),
        )
    magic, version, order = _PREAMBLE.unpack_from(data, 0)
    if magic != constants.TNSR_MAGIC:
        raise TensorFormatError(f"Bad magic {magic!r}, expected {constants.TNSR_MAGIC!r}", offset=0)
    if version != constants.TNSR_VERSION:
        raise TensorFormatError(f"Unsupported version {version}", offset=4)
    if order == 0:
        raise TensorFormatError("Tensor order must be at least 1", offset=6)

    header_size = _PREAMBLE.size + 8 * order
    if len(data) < header_size:
        raise TensorFormatError(
            f"Header truncated: expected {header_size} bytes, got {len(data)}",
            offset=len(data),
        )
    dims = np.frombuffer(data, dtype="<u8", count=order, offset=_PREAMBLE.size)
    for n, d in enumerate(dims):
        if d == 0:
            raise TensorFormatError(
                f"Dimension {n} is zero", offset=_PREAMBLE.size + 8 * n
            )

    count = math.prod(int(d) for d in dims)
    expected = header_size + 8 * count
    if len(data) != expected:
        raise TensorFormatError(
            f"Payload length mismatch: expected {expected} bytes, got {len(data)}",
            offset=header_size,
        )
    values = np.frombuffer(data, dtype="<f8", count=count, offset=header_size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise TensorFormatError(
            f"Non-finite payload value at index {bad[0]}",
            offset=header_size + 8 * int(bad[0]),
        )
    return DenseTensor.from_flat(values.astype(np.float64), tuple(int(d) for d in dims))


def read_tensor(path):
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def write_tensor(t, path):
    payload = encode_tensor(t)
    with atomic_write(path, binary=True) as f:
        f.write(payload)


def format_float(value):
    return format(float(value), ".17g")


def _write_csv(path, header, rows):
    with atomic_write(path) as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def write_metrics_csv(table, path):
    """Benchmark rows as RFC 4180 CSV with 17 significant digits."""
    table = list(table)
    if not table:
        raise ArgumentError("Cannot write an empty metrics table")
    _write_csv(
        path,
        constants.METRICS_CSV_HEADER,
        [
            [
                row.solver,
                format_float(row.rho),
                row.rank,
                row.trials,
                format_float(row.mean_rse),
                format_float(row.mean_time_s),
                format_float(row.converged_frac),
            ]
            for row in table
        ],
    )


def write_timing_csv(rows, path):
    rows = list(rows)
    if not rows:
        raise ArgumentError("Cannot write an empty timing table")
    _write_csv(
        path,
        constants.TIMING_CSV_HEADER,
        [
            [
                row.size,
                row.solver,
                format_float(row.wall_time_s),
                row.iters,
                format_float(row.per_iter_s),
            ]
            for row in rows
        ],
    )


def axes_path(path):
    return os.path.splitext(path)[0] + ".axes.csv"


def phase_pixels(grid):
    """
    Gray levels ``round(255 * successes / trials)`` (halves round up), with
    corruption ascending down the rows and rank ascending across the columns.
    """
    grid.validate()
    rows = np.argsort(grid.corruption_axis, kind="stable")
    cols = np.argsort(grid.rank_axis, kind="stable")
    counts = grid.success_counts[np.ix_(rows, cols)]
    maxval = constants.PGM_MAXVAL
    return ((2 * maxval * counts + grid.trials) // (2 * grid.trials)).astype(np.uint8)


def write_phase_pgm(grid, path):
    """Write the grid as a binary PGM plus a ``.axes.csv`` with the axis values."""
    pixels = phase_pixels(grid)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n{constants.PGM_MAXVAL}\n".encode("ascii")
    with atomic_write(path, binary=True) as f:
        f.write(header + pixels.tobytes())

    companion = axes_path(path)
    _write_csv(
        companion,
        ["axis", "index", "value"],
        [["rank", j, r] for j, r in enumerate(sorted(grid.rank_axis))]
        + [["rho", i, format_float(p)] for i, p in enumerate(sorted(grid.corruption_axis))],
    )
    return companion


_MANIFEST_SECTION = "manifest"


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one ``recover`` run."""

    solver: str
    config: dict
    input_path: str
    input_checksum: str
    x_path: str = ""
    e_path: str = ""
    seed: Optional[int] = None
    iters: int = 0
    converged: bool = False
    final_residual: float = math.nan
    objective: float = math.nan
    wall_time_s: float = 0.0
    certificate: Optional[tuple] = None
    extra: dict = field(default_factory=dict)

    def to_entries(self):
        entries = {
            "solver": self.solver,
            "input_path": self.input_path,
            "input_checksum": self.input_checksum,
            "x_path": self.x_path,
            "e_path": self.e_path,
            "seed": self.seed,
            "iters": self.iters,
            "converged": self.converged,
            "final_residual": float(self.final_residual),
            "objective": float(self.objective),
            "wall_time_s": float(self.wall_time_s),
        }
        for key, value in self.config.items():
            entries[f"config.{key}"] = value
        if self.certificate is not None:
            epsilon_hat, c, bound = self.certificate
            entries["certificate.epsilon_hat"] = float(epsilon_hat)
            entries["certificate.c"] = float(c)
            entries["certificate.bound"] = float(bound)
        entries.update(self.extra)
        return {key: format_value(value) for key, value in entries.items()}

    @classmethod
    def from_entries(cls, entries):
        entries = dict(entries)
        try:
            config = {
                key[len("config."):]: entries.pop(key)
                for key in list(entries)
                if key.startswith("config.")
            }
            certificate = None
            if "certificate.bound" in entries:
                certificate = tuple(
                    float(entries.pop(f"certificate.{name}"))
                    for name in ("epsilon_hat", "c", "bound")
                )
            seed = entries.pop("seed", "")
            return cls(
                solver=entries.pop("solver"),
                config=config,
                input_path=entries.pop("input_path"),
                input_checksum=entries.pop("input_checksum"),
                x_path=entries.pop("x_path", ""),
                e_path=entries.pop("e_path", ""),
                seed=int(seed) if seed else None,
                iters=int(entries.pop("iters", 0)),
                converged=entries.pop("converged", "false") == "true",
                final_residual=float(entries.pop("final_residual", "nan")),
                objective=float(entries.pop("objective", "nan")),
                wall_time_s=float(entries.pop("wall_time_s", 0.0)),
                certificate=certificate,
                extra=entries,
            )
        except (KeyError, ValueError) as e:
            raise TensorFormatError(f"Incomplete or malformed manifest: {e}")


def write_manifest(entries, path):
    """Write a flat ``key=value`` manifest; `entries` is a dict or a ``RunManifest``."""
    if isinstance(entries, RunManifest):
        entries = entries.to_entries()
    lines = []
    for key, value in entries.items():
        value = format_value(value)
        if "\n" in key or "\n" in value or "=" in key:
            raise ArgumentError(f"Manifest entry {key!r} cannot be written on one line")
        lines.append(f"{key}={value}\n")
    with atomic_write(path) as f:
        f.writelines(lines)


def read_manifest_entries(path):
    with open(path, encoding="utf-8") as f:
        text = f.read()
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # Preserve case
    try:
        parser.read_string(f"[{_MANIFEST_SECTION}]\n{text}", source=path)
    except configparser.Error as e:
        raise TensorFormatError(f"Cannot parse manifest {path}: {e}")
    return dict(parser[_MANIFEST_SECTION])


def read_manifest(path):
    return RunManifest.from_entries(read_manifest_entries(path))
