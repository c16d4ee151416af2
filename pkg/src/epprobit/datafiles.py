"""Dataset/covariate CSV files and the fitted-model container.

Dataset CSV: a header row, then one row per observation with the label
``y`` in {0, 1} first and the ``p`` covariates after it. No intercept
column is added. Covariate CSV: header plus ``p`` covariate columns.

Model container: an uncompressed ``.npz`` archive (``allow_pickle`` off)
holding little-endian float64 arrays plus a JSON header with the format
tag, version, engine and diagnostics.
"""

from __future__ import annotations

import csv
import json
import math
from decimal import Decimal
from pathlib import Path

import numpy as np

from .ep_engine import Dataset, FitDiagnostics, SiteState
from .predictive import DenseCovariance, FactoredCovariance, GaussianPosterior

__all__ = [
    "InputError",
    "format_number",
    "read_dataset_csv",
    "write_dataset_csv",
    "read_covariates_csv",
    "write_covariates_csv",
    "save_model",
    "load_model",
    "model_to_text",
]

MODEL_FORMAT = "epprobit-model"
MODEL_VERSION = 1
_F8 = np.dtype("<f8")


class InputError(ValueError):
    """Malformed or invalid input file; the message names the location."""


def format_number(value: float, digits: int = 12) -> str:
    """Positional decimal text with ``digits`` significant digits."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"cannot format non-finite value {value!r}")
    return format(Decimal(f"{value:.{digits - 1}e}"), "f")


def _parse_float(text, line, col, path):
    try:
        val = float(text)
    except ValueError:
        raise InputError(f"{path}: line {line}, column {col}: not a number: {text!r}") from None
    if not math.isfinite(val):
        raise InputError(f"{path}: line {line}, column {col}: non-finite value {text!r}")
    return val


def _read_rows(path):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file (header row expected)") from None
        except csv.Error as exc:
            raise InputError(f"{path}: line {reader.line_num}: {exc}") from None
        rows = []
        try:
            for row in reader:
                if not row or all(not cell.strip() for cell in row):
                    continue
                rows.append((reader.line_num, row))
        except csv.Error as exc:
            raise InputError(f"{path}: line {reader.line_num}: {exc}") from None
    return header, rows


def _matrix(path, header, rows, width):
    out = np.empty((len(rows), width))
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise InputError(
                f"{path}: line {line}: expected {width} fields, found {len(row)}"
            )
        for c, cell in enumerate(row):
            out[r, c] = _parse_float(cell.strip(), line, c + 1, path)
    return out


def read_dataset_csv(path, prior_variance: float = 25.0) -> Dataset:
    """Parse a dataset CSV (label first). Raises :class:`InputError`."""
    header, rows = _read_rows(path)
    if len(header) < 2:
        raise InputError(f"{path}: line 1: need a label column and at least one covariate")
    if not rows:
        raise InputError(f"{path}: no data rows")
    data = _matrix(path, header, rows, len(header))
    for r, (line, _) in enumerate(rows):
        if data[r, 0] not in (0.0, 1.0):
            raise InputError(
                f"{path}: line {line}, column 1: label must be 0 or 1, got {rows[r][1][0].strip()!r}"
            )
    try:
        return Dataset(data[:, 1:], data[:, 0].astype(np.int8), prior_variance)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_dataset_csv(path, d: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{j + 1}" for j in range(d.p)])
        for yi, xi in zip(d.y, d.X):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])


def read_covariates_csv(path) -> np.ndarray:
    header, rows = _read_rows(path)
    if not header:
        raise InputError(f"{path}: line 1: empty header")
    if not rows:
        raise InputError(f"{path}: no data rows")
    return _matrix(path, header, rows, len(header))


def write_covariates_csv(path, X: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def _diag_dict(diag: FitDiagnostics) -> dict:
    return {
        "engine": diag.engine,
        "sweeps_run": diag.sweeps_run,
        "converged": diag.converged,
        "max_delta_trace": [float(v) for v in diag.max_delta_trace],
        "skipped_updates": diag.skipped_updates,
        "degenerate_sites": diag.degenerate_sites,
        "elapsed_seconds": diag.elapsed_seconds,
    }


def save_model(path, post: GaussianPosterior, diag: FitDiagnostics) -> None:
    """Write the fitted posterior, site parameters and diagnostics."""
    cov = post.covariance
    meta = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "covariance": "factored" if post.is_factored else "dense",
        "prior_variance": post.prior_variance,
        "diagnostics": _diag_dict(diag),
    }
    arrays = {"xi": post.xi}
    if post.sites is not None:
        arrays["k"] = post.sites.k
        arrays["m"] = post.sites.m
    if isinstance(cov, DenseCovariance):
        arrays["sigma"] = cov.sigma
    else:
        arrays["V"] = cov.V
        arrays["X"] = cov.X
        arrays["k"] = cov.k
    arrays = {key: np.ascontiguousarray(val, dtype=_F8) for key, val in arrays.items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path):
    """Read a model container; returns ``(posterior, metadata dict)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {key: z[key] for key in z.files if key != "meta"}
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: not a readable model file ({exc})") from None
    if meta.get("format") != MODEL_FORMAT:
        raise InputError(f"{path}: unknown model format {meta.get('format')!r}")
    if meta.get("version") != MODEL_VERSION:
        raise InputError(f"{path}: unsupported model version {meta.get('version')!r}")
    nu2 = float(meta["prior_variance"])
    if meta["covariance"] == "dense":
        cov = DenseCovariance(arrays["sigma"])
    else:
        cov = FactoredCovariance(nu2, arrays["V"], arrays["k"], arrays["X"])
    sites = SiteState(arrays["k"], arrays["m"]) if "m" in arrays else None
    return GaussianPosterior(arrays["xi"], cov, nu2, sites), meta


def model_to_text(path_in, path_out) -> None:
    """Plain-text (JSON) export of a model container, for debugging."""
    post, meta = load_model(path_in)
    doc = dict(meta)
    doc["xi"] = post.xi.tolist()
    if post.sites is not None:
        doc["k"] = post.sites.k.tolist()
        doc["m"] = post.sites.m.tolist()
    cov = post.covariance
    if isinstance(cov, DenseCovariance):
        doc["sigma"] = cov.sigma.tolist()
    else:
        doc["V"] = cov.V.tolist()
        doc["X"] = cov.X.tolist()
    with open(path_out, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
