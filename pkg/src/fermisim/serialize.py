"""Binary and CSV persistence.

Binary layout: a 64-byte ASCII header (space-padded) followed by raw
little-endian payload.  Headers hold a magic tag, integer shape data and
repr-formatted floats (shortest exact roundtrip), so reading a file back
reproduces the arrays bit for bit.

    FSIMPSD dim n nv length epsilon      + float64 W values (row-major,
                                           x-major, v-minor)
    FSIMDM  dim n length epsilon N       + complex128 operator matrix
    FSIMVEC m doubled(0|1)               + complex128 state vector

CSV: 17 significant digits, '.' decimal, ',' separator, LF endings.
"""

from __future__ import annotations

import numpy as np

from .grid_ops import Grid, OneBodyOperator, build_grid
from .states import DensityMatrix
from .equilibrium import PhaseSpaceDensity, velocity_spacing


HEADER_BYTES = 64


class SerializeError(ValueError):
    """Malformed binary header or payload."""


def _pack_header(*fields) -> bytes:
    text = " ".join(str(f) for f in fields)
    raw = text.encode("ascii")
    if len(raw) > HEADER_BYTES:
        raise SerializeError(f"header too long ({len(raw)} > {HEADER_BYTES}): {text}")
    return raw.ljust(HEADER_BYTES)


def _read_header(blob: bytes):
    if len(blob) < HEADER_BYTES:
        raise SerializeError("file shorter than the 64-byte header")
    return blob[:HEADER_BYTES].decode("ascii").split(), blob[HEADER_BYTES:]


def write_phase_space(psd: PhaseSpaceDensity, path) -> None:
    g = psd.grid
    header = _pack_header("FSIMPSD", g.dim, g.n, psd.nv, repr(g.length), repr(g.epsilon))
    payload = np.ascontiguousarray(psd.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_phase_space(path) -> PhaseSpaceDensity:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, payload = _read_header(blob)
    if fields[0] != "FSIMPSD":
        raise SerializeError(f"not a phase-space file (magic {fields[0]!r})")
    dim, n, nv = int(fields[1]), int(fields[2]), int(fields[3])
    length, epsilon = float(fields[4]), float(fields[5])
    grid = build_grid(dim, n, length, epsilon)
    shape = (n,) * dim + (nv,) * dim
    values = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return PhaseSpaceDensity(grid=grid, nv=nv, dv=velocity_spacing(grid), values=values)


def phase_space_csv(psd: PhaseSpaceDensity) -> str:
    """Flat CSV export (x..., v..., W) for plotting."""
    g = psd.grid
    lines = [",".join([f"x{i}" for i in range(g.dim)] + [f"v{i}" for i in range(g.dim)] + ["w"])]
    xpts = g.points()
    vax = psd.v_axis
    flat = psd.values.reshape(g.npoints, psd.nv ** g.dim)
    vmesh = np.meshgrid(*([vax] * g.dim), indexing="ij")
    vcols = np.stack([m.ravel() for m in vmesh], axis=-1)
    for i in range(g.npoints):
        for j in range(psd.nv ** g.dim):
            coords = list(xpts[i]) + list(vcols[j]) + [flat[i, j]]
            lines.append(",".join(format_float(c) for c in coords))
    return "\n".join(lines) + "\n"


def write_density(dm: DensityMatrix, path) -> None:
    g = dm.grid
    header = _pack_header(
        "FSIMDM", g.dim, g.n, repr(g.length), repr(g.epsilon), repr(dm.particle_number)
    )
    payload = np.ascontiguousarray(dm.op.mat, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_density(path) -> DensityMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, payload = _read_header(blob)
    if fields[0] != "FSIMDM":
        raise SerializeError(f"not a density file (magic {fields[0]!r})")
    dim, n = int(fields[1]), int(fields[2])
    length, epsilon, n_target = float(fields[3]), float(fields[4]), float(fields[5])
    grid = build_grid(dim, n, length, epsilon)
    m = grid.npoints
    mat = np.frombuffer(payload, dtype="<c16").reshape(m, m).copy()
    lam, vec = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    # keep the stored matrix exactly (bitwise roundtrip); the eigen cache is
    # rebuilt for spectral operations
    return DensityMatrix(
        op=OneBodyOperator(grid, mat),
        particle_number=n_target,
        eigenvalues=np.clip(lam, 0.0, 1.0),
        eigenvectors=vec,
    )


def write_state_vector(psi: np.ndarray, total_modes: int, doubled: bool, path) -> None:
    header = _pack_header("FSIMVEC", total_modes, 1 if doubled else 0)
    payload = np.ascontiguousarray(psi, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_state_vector(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, payload = _read_header(blob)
    if fields[0] != "FSIMVEC":
        raise SerializeError(f"not a state-vector file (magic {fields[0]!r})")
    total_modes, doubled = int(fields[1]), bool(int(fields[2]))
    psi = np.frombuffer(payload, dtype="<c16").copy()
    if psi.size != 1 << total_modes:
        raise SerializeError("state vector length does not match mode count")
    return psi, total_modes, doubled


def format_float(x) -> str:
    """17 significant digits, '.' decimal separator."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def rows_to_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(x) if not isinstance(x, str) else x for x in row))
    return "\n".join(lines) + "\n"
