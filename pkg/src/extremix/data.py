"""CSV ingestion: site, observation, covariate, and GCM tables.

Schemas are fixed-column CSVs. Covariates are min-max standardized to [0,1]
inside the loader and the constants are kept with the fit so projection
inputs go through the identical transform.
"""

import numpy as np
import pandas as pd

SITES_COLUMNS = ["site_id", "lon", "lat", "region"]
OBS_COLUMNS = ["site_id", "year", "value"]
COV_VALUES = ["x_annual", "x_jfm", "x_amj", "x_jas", "x_ond"]
COVS_COLUMNS = ["site_id", "year"] + COV_VALUES
GCM_COLUMNS = ["model", "scenario"] + COVS_COLUMNS


class DataError(ValueError):
    pass


def _read_table(path, columns, numeric, label):
    try:
        df = pd.read_csv(path, dtype=str)
    except Exception as exc:
        raise DataError(f"{label}: cannot read {path}: {exc}") from None
    if list(df.columns) != columns:
        raise DataError(f"{label}: expected columns {columns}, "
                        f"found {list(df.columns)}")
    for col in numeric:
        converted = pd.to_numeric(df[col], errors="coerce")
        bad = df.index[converted.isna() & df[col].notna()]
        if len(bad):
            row = int(bad[0]) + 2  # header is line 1
            raise DataError(f"{label}: non-numeric {col!r} at line {row}: "
                            f"{df[col].iloc[bad[0]]!r}")
        if converted.isna().any():
            row = int(df.index[converted.isna()][0]) + 2
            raise DataError(f"{label}: missing {col!r} at line {row}")
        df[col] = converted
    return df


def _check_unique(df, keys, label):
    dup = df.duplicated(subset=keys)
    if dup.any():
        row = int(df.index[dup][0]) + 2
        raise DataError(f"{label}: duplicate {tuple(keys)} at line {row}")


def load_sites(path):
    df = _read_table(path, SITES_COLUMNS, ["lon", "lat", "region"], "sites")
    _check_unique(df, ["site_id"], "sites")
    if not df["region"].isin([1, 2]).all():
        bad = df.index[~df["region"].isin([1, 2])][0]
        raise DataError(f"sites: region must be 1 or 2 at line {bad + 2}")
    df["region"] = df["region"].astype(int)
    return df.reset_index(drop=True)


def load_obs(path):
    df = _read_table(path, OBS_COLUMNS, ["year", "value"], "obs")
    _check_unique(df, ["site_id", "year"], "obs")
    df["year"] = df["year"].astype(int)
    return df.reset_index(drop=True)


def load_covs(path):
    df = _read_table(path, COVS_COLUMNS, ["year"] + COV_VALUES, "covs")
    _check_unique(df, ["site_id", "year"], "covs")
    df["year"] = df["year"].astype(int)
    return df.reset_index(drop=True)


def load_gcm(path):
    df = _read_table(path, GCM_COLUMNS, ["year"] + COV_VALUES, "gcm")
    _check_unique(df, ["model", "scenario", "site_id", "year"], "gcm")
    df["year"] = df["year"].astype(int)
    return df.reset_index(drop=True)


class Standardizer:
    """Column-wise min-max map to [0,1]; constants persist with the fit."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        if np.any(self.hi <= self.lo):
            raise DataError("degenerate covariate column (zero range)")

    @classmethod
    def fit(cls, values):
        values = np.asarray(values, float)
        flat = values.reshape(-1, values.shape[-1])
        return cls(flat.min(axis=0), flat.max(axis=0))

    def transform(self, values):
        return (np.asarray(values, float) - self.lo) / (self.hi - self.lo)

    def inverse(self, values):
        return np.asarray(values, float) * (self.hi - self.lo) + self.lo

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lo"], d["hi"])


def _pivot(df, sites, years, value_cols, label):
    """(T, n, k) array in site-table order; errors name missing pairs."""
    idx = df.set_index(["site_id", "year"])
    out = np.empty((years.size, len(sites), len(value_cols)))
    for j, sid in enumerate(sites):
        for i, yr in enumerate(years):
            try:
                row = idx.loc[(sid, yr)]
            except KeyError:
                raise DataError(
                    f"{label}: missing (site {sid}, year {yr})") from None
            out[i, j] = [row[c] for c in value_cols]
    return out


def assemble(sites_df, obs_df, covs_df, standardize=True):
    """Aligned arrays for fitting.

    Returns a dict with y (T, n), x (T, n, 5) standardized, years, site ids,
    coords, regions, and the fitted Standardizer (None when standardize is
    off).
    """
    site_ids = sites_df["site_id"].tolist()
    years = np.array(sorted(obs_df["year"].unique()))
    if not np.all(np.diff(years) == 1):
        gap = years[np.argmax(np.diff(years) != 1)] + 1
        raise DataError(f"obs: fit window has a year gap at {gap}")
    y = _pivot(obs_df, site_ids, years, ["value"], "obs")[:, :, 0]
    x = _pivot(covs_df, site_ids, years, COV_VALUES, "covs")
    scaler = None
    if standardize:
        scaler = Standardizer.fit(x)
        x = scaler.transform(x)
    return {
        "y": y,
        "x": x,
        "years": years,
        "site_ids": site_ids,
        "coords": sites_df[["lon", "lat"]].to_numpy(float),
        "regions": sites_df["region"].to_numpy(int),
        "scaler": scaler,
    }


def cov_window(covs_df, sites):
    """(years, (T, n, 5)) raw covariate block in site-table order."""
    years = np.array(sorted(covs_df["year"].unique()))
    return years, _pivot(covs_df, sites, years, COV_VALUES, "covs")


def gcm_windows(gcm_df, model, sites, value_cols=None):
    """Per-scenario (T, n, k) covariate arrays for one GCM model."""
    value_cols = value_cols or COV_VALUES
    sub = gcm_df[gcm_df["model"] == model]
    if sub.empty:
        raise DataError(f"gcm: no rows for model {model!r}")
    out = {}
    for scen, block in sub.groupby("scenario"):
        years = np.array(sorted(block["year"].unique()))
        out[scen] = (years, _pivot(block, sites, years, value_cols,
                                   f"gcm[{model}/{scen}]"))
    return out
