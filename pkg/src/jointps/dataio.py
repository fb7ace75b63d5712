"""CSV ingestion and export for datasets, draw dumps and summary tables.

Floats are written with 17 significant digits, which round-trips every
double exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .gibbs import ChainConfig, DrawStore
from .model import STRATUM_NAMES, Family, ModelSpec, ObservedDataset, Priors, Restriction, ValidationError

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {"z": "z", "d": "d", "y1": "y1", "y2": "y2"}
MISSING = {"", "na", "nan", "null", "none", "."}


def fmt(x) -> str:
    """Exact text form of a float (or int) for CSV output."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


# ---------------------------------------------------------------------------
# datasets

def ingest_csv(path, columns: Optional[dict] = None, log_y1: bool = False,
               on_missing: str = "drop") -> ObservedDataset:
    """Read a study dataset from a CSV file with a header row.

    Parameters
    ----------
    path : path-like
    columns : dict, optional
        Maps the roles ``z``, ``d``, ``y1``, ``y2`` to header names.  ``y2``
        is optional unless it is mapped to a non-default name.
    log_y1 : bool
        Replace ``y1`` by its natural logarithm (requires ``y1 > 0``).
    on_missing : {"drop", "error"}
        Rows with an empty or NA field in a used column are dropped (and
        their row numbers logged) or rejected.

    Row numbers in messages count data rows from 1, excluding the header.
    """
    cols = dict(DEFAULT_COLUMNS)
    explicit_y2 = bool(columns) and columns.get("y2") not in (None, DEFAULT_COLUMNS["y2"])
    if columns:
        unknown_roles = set(columns) - set(DEFAULT_COLUMNS)
        if unknown_roles:
            raise ValidationError(f"unknown column roles: {sorted(unknown_roles)}")
        cols.update(columns)
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = list(reader)
    roles = ["z", "d", "y1", "y2"]
    if cols["y2"] not in header:
        if explicit_y2:
            raise ValidationError(f"{path}: unknown column {cols['y2']!r} (header: {', '.join(header)})")
        roles = ["z", "d", "y1"]
    for r in roles:
        if cols[r] not in header:
            raise ValidationError(f"{path}: unknown column {cols[r]!r} (header: {', '.join(header)})")
    idx = {r: header.index(cols[r]) for r in roles}

    values = {r: [] for r in roles}
    dropped = []
    for i, row in enumerate(rows, start=1):
        if not row or all(not f.strip() for f in row):
            continue
        fields = {}
        missing = False
        for r in roles:
            j = idx[r]
            raw = row[j].strip() if j < len(row) else ""
            if raw.lower() in MISSING:
                missing = True
                break
            try:
                fields[r] = float(raw)
            except ValueError:
                raise ValidationError(f"row {i}: malformed number {raw!r} in column {cols[r]!r}") from None
            if not math.isfinite(fields[r]):
                raise ValidationError(f"row {i}: non-finite value in column {cols[r]!r}")
        if missing:
            dropped.append(i)
            continue
        for r in ("z", "d"):
            if fields[r] not in (0.0, 1.0):
                raise ValidationError(f"row {i}: {cols[r]} must be 0 or 1, got {row[idx[r]].strip()!r}")
        if fields["z"] == 0 and fields["d"] == 1:
            raise ValidationError(f"row {i}: one-sided noncompliance violated (z=0 with d=1)")
        if log_y1:
            if fields["y1"] <= 0:
                raise ValidationError(f"row {i}: log transform needs y1 > 0, got {fields['y1']}")
            fields["y1"] = math.log(fields["y1"])
        for r in roles:
            values[r].append(fields[r])
    if dropped:
        if on_missing == "error":
            raise ValidationError(f"missing values in rows {_ranges(dropped)}")
        log.warning("dropped %d rows with missing values: %s", len(dropped), _ranges(dropped))
    if not values["z"]:
        raise ValidationError(f"{path}: no complete rows")
    y2 = np.array(values["y2"]) if "y2" in values else None
    return ObservedDataset(
        np.array(values["z"], dtype=np.int8),
        np.array(values["d"], dtype=np.int8),
        np.array(values["y1"]),
        y2,
    )


def _ranges(rows) -> str:
    shown = ", ".join(str(r) for r in rows[:20])
    return shown + (f", ... ({len(rows)} total)" if len(rows) > 20 else "")


def write_dataset_csv(data: ObservedDataset, path) -> None:
    header = ["z", "d", "y1"] + (["y2"] if data.y2 is not None else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [int(data.z[i]), int(data.d[i]), fmt(data.y1[i])]
            if data.y2 is not None:
                row.append(fmt(data.y2[i]))
            w.writerow(row)


def dataset_summary(data: ObservedDataset) -> list:
    """Counts and outcome means by observed ``(z, d)`` group."""
    out = []
    for z, d in ((1, 1), (1, 0), (0, 0)):
        m = (data.z == z) & (data.d == d)
        row = {"z": z, "d": d, "n": int(m.sum()), "y1_mean": float(data.y1[m].mean()) if m.any() else float("nan")}
        if data.y2 is not None:
            row["y2_mean"] = float(data.y2[m].mean()) if m.any() else float("nan")
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# draw dumps

def _draw_columns(p: int) -> list:
    cols = ["chain", "draw", "pi_c"]
    for s in STRATUM_NAMES:
        for z in (0, 1):
            cols += [f"mu_{s}{z}_{k + 1}" for k in range(p)]
    for s in STRATUM_NAMES:
        for z in (0, 1):
            cols += [f"sigma_{s}{z}_{i + 1}{j + 1}" for i in range(p) for j in range(i, p)]
    return cols


def write_draws(store: DrawStore, path, meta: Optional[dict] = None) -> None:
    """Write every kept draw to ``path`` (CSV) and its metadata to ``path.json``."""
    path = Path(path)
    p = store.family.dim
    iu = np.triu_indices(p)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_draw_columns(p))
        for c in range(store.n_chains):
            for t in range(store.n_draws):
                row = [c, t, fmt(store.pi_c[c, t])]
                row += [fmt(v) for v in store.mu[c, t].reshape(-1)]
                for s in range(2):
                    for z in range(2):
                        row += [fmt(v) for v in store.sigma[c, t, s, z][iu]]
                w.writerow(row)
    info = {
        "family": store.spec.family.value,
        "restriction": store.spec.restriction.value,
        "priors": store.spec.priors.to_dict(),
        "chains": store.config.to_dict(),
        "seeds": [int(s) for s in store.seeds],
        "accept_rates": [float(a) for a in np.ravel(store.accept_rates)],
    }
    if meta:
        info.update(meta)
    _meta_path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".json")


def read_draws(path) -> tuple[DrawStore, dict]:
    """Inverse of :func:`write_draws`; returns the store and its metadata."""
    path = Path(path)
    meta_path = _meta_path(path)
    if not path.is_file():
        raise ValidationError(f"draw file not found: {path}")
    if not meta_path.is_file():
        raise ValidationError(f"draw metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    family = Family(meta["family"])
    spec = ModelSpec(family, Restriction(meta["restriction"]), Priors.from_dict(meta["priors"]))
    config = ChainConfig(**meta["chains"])
    p = family.dim
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _draw_columns(p):
            raise ValidationError(f"{path}: unexpected draw columns")
        rows = [r for r in reader if r]
    arr = np.array([[float(v) for v in r] for r in rows])
    chains = arr[:, 0].astype(int)
    C = int(chains.max()) + 1
    T = arr.shape[0] // C
    if C * T != arr.shape[0]:
        raise ValidationError(f"{path}: chains have unequal lengths")
    arr = arr.reshape(C, T, -1)
    pi_c = arr[:, :, 2]
    off = 3
    mu = arr[:, :, off : off + 4 * p].reshape(C, T, 2, 2, p)
    off += 4 * p
    ntri = p * (p + 1) // 2
    tri = arr[:, :, off : off + 4 * ntri].reshape(C, T, 2, 2, ntri)
    sigma = np.empty((C, T, 2, 2, p, p))
    iu = np.triu_indices(p)
    sigma[..., iu[0], iu[1]] = tri
    sigma[..., iu[1], iu[0]] = tri
    store = DrawStore(pi_c, mu, sigma, spec, config, list(meta["seeds"]),
                      np.asarray(meta.get("accept_rates", np.zeros(C)), dtype=float))
    return store, meta


def write_rows_csv(rows: list, path, columns: list) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (fmt(r[c]) if isinstance(r[c], (float, np.floating)) else r[c])
                        for c in columns])
