"""Python bindings for the atoms library.

Atom sets are (H, n) arrays with one atom per column; batches of
representations are (H, N) arrays. Dump files hold one vector per row.
"""

import json as _json

from ._atomskit import (  # noqa: F401
    AtomsError,
    SaeModel,
    alignment,
    analytic_sae,
    angle_centroid,
    atom_match,
    avg_l0,
    basis_pursuit,
    coherence,
    forward,
    gen_atoms,
    gen_codes,
    l0_oracle,
    linear_quantile,
    load_model,
    match_atoms,
    max_uniqueness_quantile,
    metric,
    naip_gram,
    normalize_atoms,
    r_squared,
    raw_gram,
    rip_bound,
    save_model,
    threshold_window,
    train,
    uniqueness_certified,
    welch_bound,
)
from ._atomskit import read_dump as _read_dump
from ._atomskit import write_dump as _write_dump


def read_dump(path):
    """Return (vectors, metadata) with vectors shaped (n_vectors, dim)."""
    vectors, meta = _read_dump(str(path))
    return vectors, _json.loads(meta)


def write_dump(path, vectors, metadata=None):
    _write_dump(str(path), vectors, _json.dumps(metadata or {}))
