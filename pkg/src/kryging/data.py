"""Dataset container, CSV ingestion, and the fit artifact format.

Input CSV schema: header ``lon,lat,y[,name1,name2,...]`` with one
observation per row; extra columns are covariates and an intercept is
prepended unless disabled. Prediction output schema: header
``lon,lat,y_hat,se,ci_lo,ci_hi`` (the uncertainty columns are omitted
when no bootstrap was run).

The fit artifact is a compressed numpy archive with a format version
field; all arrays needed to predict and bootstrap from the fit are
stored, so the artifact is self-contained. Keys are documented in
:func:`save_fit_artifact`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .estimation import FitResult
from .grid import GridSpec, ThetaParams

__all__ = [
    "Dataset",
    "InputError",
    "read_dataset",
    "write_dataset",
    "read_locations",
    "write_predictions",
    "save_fit_artifact",
    "load_fit_artifact",
]

ARTIFACT_VERSION = 1


class InputError(ValueError):
    """Malformed user input (CSV, config, or flag values)."""


@dataclass
class Dataset:
    """Point-referenced observations: coordinates, responses, covariates,
    and an optional boolean holdout mask marking evaluation rows."""

    locations: np.ndarray
    y: np.ndarray
    X: np.ndarray
    covariate_names: tuple = ()
    holdout: np.ndarray | None = None

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        p = self.y.size
        if self.locations.shape != (p, 2):
            raise InputError(f"locations must be ({p}, 2)")
        if self.X.shape[0] != p:
            raise InputError("X row count differs from y")
        if p < self.X.shape[1]:
            raise InputError("fewer observations than mean coefficients")
        for name, arr in (("locations", self.locations), ("y", self.y), ("X", self.X)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"non-finite values in {name}")
        if self.holdout is not None:
            self.holdout = np.asarray(self.holdout, dtype=bool)
            if self.holdout.shape != (p,):
                raise InputError(f"holdout mask must have length {p}")

    @property
    def p(self) -> int:
        return self.y.size

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.locations[idx], self.y[idx], self.X[idx], self.covariate_names
        )

    def with_holdout(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.locations, self.y, self.X, self.covariate_names, mask)

    def train_test(self) -> tuple:
        """Split into (train, test) by the holdout mask."""
        if self.holdout is None:
            raise InputError("dataset has no holdout mask")
        return self.subset(~self.holdout), self.subset(self.holdout)


def _parse_float(token: str, line_no: int, col: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise InputError(f"line {line_no}: cannot parse {col}={token!r} as a number")
    if not np.isfinite(v):
        raise InputError(f"line {line_no}: non-finite {col}={token!r}")
    return v


def read_dataset(
    path, covariates: list | None = None, add_intercept: bool = True
) -> Dataset:
    """Read observations from CSV.

    Parameters
    ----------
    path : str or Path
        CSV file whose header starts with lon,lat,y.
    covariates : list of str, optional
        Names of covariate columns to use. Defaults to every column after
        y. A named column missing from the header is an error.
    add_intercept : bool
        Prepend a constant-1 column to the covariate matrix.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:3] != ["lon", "lat", "y"]:
            raise InputError(
                f"{path}: header must start with lon,lat,y (got {','.join(header[:3])})"
            )
        extra = header[3:]
        if covariates is None:
            use = list(extra)
        else:
            missing = [c for c in covariates if c not in extra]
            if missing:
                raise InputError(
                    f"{path}: covariate column(s) not found: {', '.join(missing)}"
                )
            use = list(covariates)
        cols = [extra.index(c) + 3 for c in use]

        locs, ys, covs = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3 + len(extra):
                raise InputError(
                    f"line {line_no}: expected {3 + len(extra)} fields, got {len(row)}"
                )
            locs.append(
                (
                    _parse_float(row[0], line_no, "lon"),
                    _parse_float(row[1], line_no, "lat"),
                )
            )
            ys.append(_parse_float(row[2], line_no, "y"))
            covs.append([_parse_float(row[c], line_no, header[c]) for c in cols])

    if not ys:
        raise InputError(f"{path}: no observations")
    p = len(ys)
    X = np.asarray(covs, dtype=float).reshape(p, len(cols))
    if add_intercept:
        X = np.column_stack([np.ones(p), X]) if cols else np.ones((p, 1))
    elif not cols:
        raise InputError(f"{path}: no covariates and intercept disabled")
    names = tuple((["intercept"] if add_intercept else []) + use)
    return Dataset(np.asarray(locs), np.asarray(ys), X, names)


def read_locations(path) -> np.ndarray:
    """Read lon,lat rows from a CSV with at least those two columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file")
        if header[:2] != ["lon", "lat"]:
            raise InputError(f"{path}: header must start with lon,lat")
        locs = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            locs.append(
                (
                    _parse_float(row[0], line_no, "lon"),
                    _parse_float(row[1], line_no, "lat"),
                )
            )
    return np.asarray(locs, dtype=float).reshape(len(locs), 2)


def write_dataset(path, dataset: Dataset, covariate_names: list | None = None):
    """Write a dataset in the input CSV schema (intercept column not
    written)."""
    names = covariate_names
    if names is None:
        names = [n for n in dataset.covariate_names if n != "intercept"]
    skip_first = dataset.covariate_names[:1] == ("intercept",)
    Xout = dataset.X[:, 1:] if skip_first else dataset.X
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lon", "lat", "y"] + list(names))
        for i in range(dataset.p):
            writer.writerow(
                [repr(float(dataset.locations[i, 0])), repr(float(dataset.locations[i, 1])),
                 repr(float(dataset.y[i]))] + [repr(float(v)) for v in Xout[i]]
            )


def write_predictions(path, locations, y_hat, se=None, ci_lo=None, ci_hi=None):
    """Write predictions CSV; uncertainty columns included when given."""
    locations = np.atleast_2d(locations)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if se is not None:
            writer.writerow(["lon", "lat", "y_hat", "se", "ci_lo", "ci_hi"])
            for i in range(locations.shape[0]):
                writer.writerow(
                    [repr(float(locations[i, 0])), repr(float(locations[i, 1])),
                     repr(float(y_hat[i])), repr(float(se[i])),
                     repr(float(ci_lo[i])), repr(float(ci_hi[i]))]
                )
        else:
            writer.writerow(["lon", "lat", "y_hat"])
            for i in range(locations.shape[0]):
                writer.writerow(
                    [repr(float(locations[i, 0])), repr(float(locations[i, 1])),
                     repr(float(y_hat[i]))]
                )


def save_fit_artifact(path, fitres: FitResult, dataset: Dataset):
    """Persist a fit and its training data as a versioned .npz archive.

    Keys: format_version, grid (n1, n2, x_min, x_max, y_min, y_max), nu,
    k, beta, sigma2, tau2, rho, x_hat, converged, iterations,
    objective_trace, locations, y, X, covariate_names, plus scalar
    diagnostics (clamp_count, wall_time).
    """
    g = fitres.grid
    th = fitres.theta_hat
    np.savez_compressed(
        path,
        format_version=ARTIFACT_VERSION,
        grid=np.array([g.n1, g.n2, g.x_min, g.x_max, g.y_min, g.y_max]),
        nu=fitres.nu,
        k=fitres.k,
        beta=th.beta,
        sigma2=th.sigma2,
        tau2=th.tau2,
        rho=th.rho,
        x_hat=fitres.x_hat,
        converged=fitres.converged,
        iterations=fitres.iterations,
        objective_trace=np.asarray(fitres.objective_trace),
        locations=dataset.locations,
        y=dataset.y,
        X=dataset.X,
        covariate_names=np.asarray(dataset.covariate_names, dtype=object),
        clamp_count=fitres.diagnostics.get("clamp_count", 0),
        wall_time=fitres.diagnostics.get("wall_time", float("nan")),
    )


def load_fit_artifact(path):
    """Load a fit artifact; returns (FitResult, Dataset)."""
    with np.load(path, allow_pickle=True) as z:
        version = int(z["format_version"])
        if version != ARTIFACT_VERSION:
            raise InputError(
                f"{path}: artifact format version {version} not supported "
                f"(expected {ARTIFACT_VERSION})"
            )
        n1, n2, x0, x1, y0, y1 = z["grid"]
        grid = GridSpec(int(n1), int(n2), float(x0), float(x1), float(y0), float(y1))
        nu = float(z["nu"])
        theta = ThetaParams(
            beta=z["beta"],
            sigma2=float(z["sigma2"]),
            tau2=float(z["tau2"]),
            rho=float(z["rho"]),
            nu=nu,
        )
        fitres = FitResult(
            theta_hat=theta,
            x_hat=z["x_hat"],
            objective_trace=list(z["objective_trace"]),
            converged=bool(z["converged"]),
            iterations=int(z["iterations"]),
            grid=grid,
            k=int(z["k"]),
            nu=nu,
            diagnostics={
                "clamp_count": int(z["clamp_count"]),
                "wall_time": float(z["wall_time"]),
            },
        )
        dataset = Dataset(
            locations=z["locations"],
            y=z["y"],
            X=z["X"],
            covariate_names=tuple(z["covariate_names"]),
        )
    return fitres, dataset
