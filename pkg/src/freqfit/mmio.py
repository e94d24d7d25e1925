"""Matrix Market component files plus a JSON manifest describing a pencil.

Manifest layout (paths are relative to the manifest's directory)::

    {
      "n": 2, "p": 2,
      "K0": null, "M0": "M0.mtx",
      "K": ["K1.mtx", "K2.mtx"],
      "M": [null, null],
      "labels": ["k1", "k2"], "units": ["N/m", "N/m"]
    }

``null`` stands for an all-zero component.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import MatrixFileError, ModelError
from .sparse import SYMMETRY_RTOL, asymmetry


def read_component(path, n: int | None = None) -> sp.csr_matrix:
    """Read one symmetric real coordinate Matrix Market file."""
    path = Path(path)
    try:
        rows, cols, _, fmt, fld, symmetry = scipy.io.mminfo(str(path))
    except (OSError, ValueError) as exc:
        raise MatrixFileError(f"cannot read Matrix Market header ({exc})", path, "unreadable") from None
    if fmt != "coordinate":
        raise MatrixFileError(f"expected coordinate format, found {fmt!r}", path, "format")
    if fld not in ("real", "integer", "double"):
        raise MatrixFileError(f"expected real values, found field {fld!r}", path, "format")
    if rows != cols:
        raise MatrixFileError(f"matrix is {rows}x{cols}, not square", path, "dimension")
    if n is not None and rows != n:
        raise MatrixFileError(f"matrix is {rows}x{cols}, expected {n}x{n}", path, "dimension")
    try:
        A = sp.csr_matrix(scipy.io.mmread(str(path)), dtype=float)
    except (OSError, ValueError) as exc:
        raise MatrixFileError(f"cannot parse matrix ({exc})", path, "unreadable") from None
    if symmetry not in ("symmetric",) and asymmetry(A) > SYMMETRY_RTOL:
        raise MatrixFileError("matrix is not symmetric", path, "asymmetric")
    return A


def write_component(path, A) -> None:
    A = sp.csr_matrix(A, dtype=float)
    A.eliminate_zeros()
    scipy.io.mmwrite(str(path), A, symmetry="symmetric", precision=17)


def load_pencil(manifest, base_dir=None):
    """Build an :class:`~freqfit.model.AffinePencil` from a manifest.

    ``manifest`` is a path to a JSON file or an already parsed mapping; in the
    latter case relative paths resolve against ``base_dir``.
    """
    from .model import AffinePencil

    if isinstance(manifest, (str, Path)):
        mpath = Path(manifest)
        try:
            data = json.loads(mpath.read_text())
        except OSError as exc:
            raise MatrixFileError(f"cannot read manifest ({exc})", mpath, "unreadable") from None
        except json.JSONDecodeError as exc:
            raise MatrixFileError(f"manifest is not valid JSON ({exc})", mpath, "format") from None
        base = mpath.parent if base_dir is None else Path(base_dir)
    else:
        data = dict(manifest)
        base = Path(base_dir) if base_dir is not None else Path(".")

    try:
        n = int(data["n"])
        p = int(data["p"])
        k_files = list(data.get("K", [None] * p))
        m_files = list(data.get("M", [None] * p))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"manifest is missing or has malformed field: {exc}") from None
    if len(k_files) != p or len(m_files) != p:
        raise ModelError(f"manifest lists {len(k_files)} K and {len(m_files)} M components for p={p}")

    def get(entry):
        if entry is None:
            return None
        path = Path(entry)
        if not path.is_absolute():
            path = base / path
        return read_component(path, n)

    K0 = get(data.get("K0"))
    M0 = get(data.get("M0"))
    Kc = [get(e) for e in k_files]
    Mc = [get(e) for e in m_files]
    zero = sp.csr_matrix((n, n))
    return AffinePencil(
        K0 if K0 is not None else zero,
        M0 if M0 is not None else zero,
        Kc,
        Mc,
        labels=data.get("labels", ()),
        units=data.get("units", ()),
    )


def save_pencil(pencil, directory, name: str = "pencil") -> Path:
    """Write every nonzero component plus ``<name>.json``; return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def put(A, stem):
        if A.nnz == 0 or not np.any(A.data):
            return None
        fname = f"{name}_{stem}.mtx"
        write_component(directory / fname, A)
        return fname

    manifest = {
        "n": pencil.n,
        "p": pencil.p,
        "K0": put(pencil.K0, "K0"),
        "M0": put(pencil.M0, "M0"),
        "K": [put(A, f"K{j + 1}") for j, A in enumerate(pencil.K_comps)],
        "M": [put(A, f"M{j + 1}") for j, A in enumerate(pencil.M_comps)],
        "labels": list(pencil.labels),
        "units": list(pencil.units),
    }
    out = directory / f"{name}.json"
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out
