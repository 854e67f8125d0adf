"""Functional datasets, CSV/manifest I/O and design-matrix assembly."""
from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import SplineBasis, eval_basis


class DataError(ValueError):
    """Malformed input data; the message names the offending location."""


class CoarseGridWarning(UserWarning):
    """The observation grid is sparse relative to the spline basis."""


@dataclass(frozen=True)
class FunctionalDataset:
    """``n`` samples of a response, scalar covariates and ``m`` curves.

    ``X`` has shape ``(n, m, G)`` on the shared ``grid``; ``Z`` has shape
    ``(n, d)`` with an intercept column first.
    """

    grid: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    names: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.ndim == 2:
            X = X[:, None, :]
        if Z.ndim == 1:
            Z = Z[:, None]
        if X.ndim != 3 or X.shape[2] != grid.size:
            raise DataError(f"X must be (n, m, G) with G={grid.size}, got {X.shape}")
        if not (X.shape[0] == Z.shape[0] == Y.size):
            raise DataError(f"sample counts disagree: X {X.shape[0]}, Z {Z.shape[0]}, Y {Y.size}")
        if grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise DataError("grid must be strictly increasing with at least two points")
        for name, arr in (("grid", grid), ("X", X), ("Z", Z), ("Y", Y)):
            if not np.all(np.isfinite(arr)):
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise DataError(f"non-finite value in {name} at index {tuple(int(i) for i in bad)}")
        if Z.shape[1] < 1 or not np.all(Z[:, 0] == 1.0):
            raise DataError("first column of Z must be the intercept (all ones)")
        for name, arr in (("grid", grid), ("X", X), ("Z", Z), ("Y", Y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    def subset(self, idx) -> "FunctionalDataset":
        idx = np.asarray(idx)
        return FunctionalDataset(self.grid, self.X[idx], self.Z[idx], self.Y[idx], self.names)

    def with_response(self, Y) -> "FunctionalDataset":
        return FunctionalDataset(self.grid, self.X, self.Z, Y, self.names)


@dataclass(frozen=True)
class DesignMatrices:
    """``U`` holds ``int X_il(t) B_k(t) dt`` with columns grouped by covariate.

    ``U_sub``, when present, splits the same integrals by subinterval:
    shape ``(n, m, K, K + p)``. It lets a fit use only the part of each curve
    that lies in a chosen set of subintervals.
    """

    U: np.ndarray
    Z: np.ndarray
    basis: SplineBasis
    quadrature: str = "trapezoid"
    Y: np.ndarray | None = None
    U_sub: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    @property
    def m(self) -> int:
        return self.U.shape[1] // self.basis.n_basis

    @property
    def full(self) -> np.ndarray:
        return np.hstack([self.Z, self.U])

    def subset(self, idx) -> "DesignMatrices":
        Y = None if self.Y is None else self.Y[idx]
        U_sub = None if self.U_sub is None else self.U_sub[idx]
        return DesignMatrices(self.U[idx], self.Z[idx], self.basis, self.quadrature, Y, U_sub)

    def with_response(self, Y) -> "DesignMatrices":
        return DesignMatrices(self.U, self.Z, self.basis, self.quadrature,
                              np.asarray(Y, float), self.U_sub)

    def restricted_U(self, keep) -> np.ndarray:
        """``int_S X_il B_k`` where ``S`` is the union of subintervals with
        ``keep[l, j]`` true; same layout as ``U``."""
        if self.U_sub is None:
            raise ValueError("design was assembled without per-subinterval integrals")
        keep = np.asarray(keep, dtype=float)
        n = self.n
        return np.einsum("nmjk,mj->nmk", self.U_sub, keep).reshape(n, -1)


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    dx = np.diff(grid)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def project_curves(X, grid, basis: SplineBasis) -> np.ndarray:
    """Integrate curves ``X`` (``(n, m, G)``) against every basis function.

    Returns the ``(n, m * (K + p))`` block ``U``.
    """
    X = np.asarray(X, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if X.ndim == 2:
        X = X[:, None, :]
    tol = 1e-9 * max(1.0, basis.length)
    if abs(grid[0] - basis.domain_start) > tol or abs(grid[-1] - basis.domain_end) > tol:
        raise DataError(
            f"grid spans [{grid[0]}, {grid[-1]}] but the basis domain is "
            f"[{basis.domain_start}, {basis.domain_end}]"
        )
    if np.any(np.isnan(X)):
        raise DataError("NaN in functional covariates")
    if grid.size < 2 * basis.n_basis:
        warnings.warn(f"grid has {grid.size} points for {basis.n_basis} basis functions; "
                      "quadrature may be coarse", CoarseGridWarning, stacklevel=2)
    B = eval_basis(basis, np.clip(grid, basis.domain_start, basis.domain_end))
    WB = trapezoid_weights(grid)[:, None] * B
    n, m, _ = X.shape
    return np.einsum("nmg,gk->nmk", X, WB).reshape(n, m * basis.n_basis)


def project_curves_by_subinterval(X, grid, basis: SplineBasis) -> np.ndarray:
    """Integrals of ``X B_k`` over each subinterval, shape ``(n, m, K, K + p)``.

    Curves are linearly interpolated onto the observation grid merged with
    the breakpoints, so every piece is a composite trapezoid rule.
    """
    X = np.asarray(X, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if X.ndim == 2:
        X = X[:, None, :]
    n, m, _ = X.shape
    bp = basis.breakpoints
    K, nb = basis.num_subintervals, basis.n_basis
    out = np.zeros((n, m, K, nb))
    for j in range(K):
        inner = grid[(grid > bp[j]) & (grid < bp[j + 1])]
        t = np.concatenate([[bp[j]], inner, [bp[j + 1]]])
        Xt = _interp_rows(X, grid, t)
        B = eval_basis(basis, np.clip(t, basis.domain_start, basis.domain_end))
        WB = trapezoid_weights(t)[:, None] * B
        out[:, :, j, :] = np.einsum("nmg,gk->nmk", Xt, WB)
    return out


def _interp_rows(X, grid, t) -> np.ndarray:
    """Linear interpolation of every curve in ``X`` (``(n, m, G)``) at ``t``."""
    idx = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, grid.size - 2)
    w = (t - grid[idx]) / (grid[idx + 1] - grid[idx])
    return X[..., idx] * (1.0 - w) + X[..., idx + 1] * w


def assemble_design(data: FunctionalDataset, basis: SplineBasis,
                    by_subinterval: bool = True) -> DesignMatrices:
    U_sub = project_curves_by_subinterval(data.X, data.grid, basis) if by_subinterval else None
    return DesignMatrices(project_curves(data.X, data.grid, basis), np.array(data.Z), basis,
                          Y=np.array(data.Y), U_sub=U_sub)


# --------------------------------------------------------------------- I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def _suffix_value(col: str, prefix: str) -> float:
    tail = col[len(prefix):]
    match = re.search(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$", tail)
    if not match:
        raise DataError(f"cannot read a grid value from column {col!r}")
    return float(match.group(0))


def read_manifest(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    for key in ("response", "functional"):
        if key not in manifest:
            raise DataError(f"manifest {path} lacks {key!r}")
    if isinstance(manifest.get("grid"), str):
        side = Path(manifest["grid"])
        if not side.is_absolute():
            side = path.parent / side
        manifest["grid"] = np.loadtxt(side, dtype=float, ndmin=1).tolist()
    return manifest


def load_csv(path, schema) -> FunctionalDataset:
    """Read a wide CSV (one row per sample) described by ``schema``.

    ``schema`` is a manifest dict or a path to its JSON file::

        {"response": "y", "scalars": ["z1"],
         "functional": [{"name": "X1", "prefix": "X1_"}],
         "grid": [0.0, 0.25, ...]}

    Without ``grid``, numeric column-name suffixes after each prefix are
    used. An intercept column is prepended to the scalars.
    """
    if not isinstance(schema, dict):
        schema = read_manifest(schema)
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    col = {name: i for i, name in enumerate(header)}

    def need(name):
        if name not in col:
            raise DataError(f"{path}: missing column {name!r}")
        return col[name]

    y_idx = need(schema["response"])
    z_idx = [need(s) for s in schema.get("scalars", [])]
    f_idx, grids = [], []
    for spec in schema["functional"]:
        prefix = spec.get("prefix", spec["name"] + "_")
        cols = [h for h in header if h.startswith(prefix)]
        if not cols:
            raise DataError(f"{path}: no columns with prefix {prefix!r}")
        f_idx.append([col[c] for c in cols])
        grids.append((prefix, cols))
    if schema.get("grid") is not None:
        grid = np.asarray(schema["grid"], dtype=float)
        for spec, idx in zip(schema["functional"], f_idx):
            if len(idx) != grid.size:
                raise DataError(f"{path}: covariate {spec['name']!r} has {len(idx)} columns, grid has {grid.size}")
    else:
        parsed = [[_suffix_value(c, prefix) for c in cols] for prefix, cols in grids]
        grid = np.asarray(parsed[0], dtype=float)
        for spec, g in zip(schema["functional"], parsed):
            if not np.array_equal(g, grid):
                raise DataError(f"covariate {spec['name']!r} uses a different grid")

    n = len(rows)
    X = np.empty((n, len(f_idx), grid.size))
    Z = np.ones((n, 1 + len(z_idx)))
    Y = np.empty(n)

    def cell(r, row, c):
        try:
            v = float(row[c])
        except (ValueError, IndexError):
            raise DataError(f"{path}: row {r + 2}, column {header[c]!r}: "
                            f"non-numeric or missing value {row[c] if c < len(row) else ''!r}") from None
        if not np.isfinite(v):
            raise DataError(f"{path}: row {r + 2}, column {header[c]!r}: non-finite value {row[c]!r}")
        return v

    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} fields, header has {len(header)}")
        Y[r] = cell(r, row, y_idx)
        for a, c in enumerate(z_idx):
            Z[r, a + 1] = cell(r, row, c)
        for l, idx in enumerate(f_idx):
            X[r, l] = [cell(r, row, c) for c in idx]
    names = {
        "response": schema["response"],
        "scalars": list(schema.get("scalars", [])),
        "functional": [s["name"] for s in schema["functional"]],
    }
    return FunctionalDataset(grid, X, Z, Y, names)


def save_csv(data: FunctionalDataset, path, manifest_path=None) -> dict:
    """Write ``data`` as a wide CSV plus JSON manifest; returns the manifest."""
    path = Path(path)
    manifest_path = Path(manifest_path) if manifest_path else path.with_suffix(".json")
    names = data.names or {}
    response = names.get("response", "y")
    scalars = names.get("scalars") or [f"z{a}" for a in range(1, data.d)]
    functional = names.get("functional") or [f"X{l + 1}" for l in range(data.m)]
    G = data.grid.size
    width = max(3, len(str(G)))
    fcols = [[f"{f}_t{g + 1:0{width}d}" for g in range(G)] for f in functional]
    header = [response, *scalars, *[c for cols in fcols for c in cols]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [_fmt(data.Y[i]), *(_fmt(v) for v in data.Z[i, 1:])]
            row += [_fmt(v) for v in data.X[i].ravel()]
            w.writerow(row)
    manifest = {
        "response": response,
        "scalars": list(scalars),
        "functional": [{"name": f, "prefix": f + "_"} for f in functional],
        "grid": [float(g) for g in data.grid],
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
