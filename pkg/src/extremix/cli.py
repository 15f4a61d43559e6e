"""Command-line workflow: simulate, train, fit, project, diagnose.

Every subcommand resolves its settings through the config module, seeds all
randomness from --seed via named child streams, and writes its outputs plus a
manifest.json under the --out run directory. Manifests carry the resolved
config and its hash so a run can be reproduced from its artifacts alone; no
timestamps or other machine state enter any output file.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_io
from .config import ConfigError, load_config
from .data import DataError, Standardizer
from .mcmc import (FitData, InitializationError, PosteriorStore, run_chain,
                   split_rhat)
from .pipeline import (START_YEAR, BiasCorrection, make_synthetic,
                       project_quantiles, simulate_joint_exceedance)
from .processes import delta_link
from .rng import child_seq, make_rng
from .surrogate import SurrogateModel, generate_training, train_surrogate
from .tail import chi_surface, default_h, surface_to_csv
from .vecchia import VecchiaStructure

# child-stream namespaces (first spawn-key component) per subcommand
_NS_SIMULATE = 9101
_NS_TRAINDATA = 7001  # shared with train_surrogate's per-site streams
_NS_JOINT = 9301
_NS_CHI = 9401


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(f"not JSON-serializable: {type(v)}")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=_jsonable)
        fh.write("\n")


def _start(args, command):
    """Shared preamble: resolve config, create the run directory."""
    cfg = load_config(args.config, args.scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": int(args.seed),
        "scale": args.scale,
        "config": cfg.as_flat_dict(),
        "config_hash": cfg.config_hash(),
        "inputs": {},
        "outputs": [],
    }
    return cfg, out, manifest


def _load_structure(sites_path, m):
    sites_df = data_io.load_sites(sites_path)
    coords = sites_df[["lon", "lat"]].to_numpy(float)
    regions = sites_df["region"].to_numpy(int)
    return sites_df, VecchiaStructure(coords, regions, m=m)


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args):
    cfg, out, manifest = _start(args, "simulate")
    rng = make_rng(child_seq(args.seed, (_NS_SIMULATE,)))
    fit, truth = make_synthetic(args.scenario, args.n_sites, args.years, rng,
                                r=cfg.model["r_synthetic"])
    n, T = fit.n_sites, fit.n_years
    site_ids = [f"s{j:03d}" for j in range(n)]
    years = START_YEAR + np.arange(T)

    _write_csv(out / "sites.csv", data_io.SITES_COLUMNS,
               [(site_ids[j], fit.coords[j, 0], fit.coords[j, 1],
                 fit.regions[j]) for j in range(n)])
    _write_csv(out / "obs.csv", data_io.OBS_COLUMNS,
               [(site_ids[j], years[t], fit.y[t, j])
                for j in range(n) for t in range(T)])
    # x_annual carries the site's own region series; the seasonal columns are
    # independent noise so a fit on x_annual alone sees the generating model.
    # A constant shift keeps every covariate positive (loggable downstream)
    # and washes out in the min-max standardization.
    offset = float(np.ceil(np.abs(fit.z).max()) + 1.0)
    noise = rng.uniform(size=(T, n, 4)) + 0.1
    _write_csv(out / "covs.csv", data_io.COVS_COLUMNS,
               [(site_ids[j], years[t],
                 fit.z[fit.regions[j] - 1, t] + offset,
                 *noise[t, j]) for j in range(n) for t in range(T)])

    payload = {"scenario": int(args.scenario), "r": truth["r"],
               "cov_offset": offset,
               "delta_bar": truth["delta_bar"], "deltas": truth["deltas"]}
    for k in ("mu0", "mu1", "sigma", "xi", "rho"):
        payload[k] = truth[k]
    payload["beta"] = [list(b) for b in truth["beta"]]
    _write_json(out / "truth.json", payload)

    manifest["outputs"] = ["sites.csv", "obs.csv", "covs.csv", "truth.json"]
    manifest["n_sites"] = n
    manifest["years"] = [int(years[0]), int(years[-1])]
    _write_json(out / "manifest.json", manifest)
    print(f"simulate: wrote {n} sites x {T} years under {out}")
    return 0


# -- make-training ------------------------------------------------------------

def cmd_make_training(args):
    cfg, out, manifest = _start(args, "make-training")
    _, structure = _load_structure(args.sites, cfg.surrogate["m"])
    i = args.site_index
    if not 1 <= i < structure.n:
        raise ConfigError(f"--site-index must lie in 1..{structure.n - 1}")
    n_rows = args.rows if args.rows else cfg.surrogate["n_rows"]
    rng = make_rng(child_seq(args.seed, (_NS_TRAINDATA, i)))
    X, u = generate_training(structure, i, cfg.design(), n_rows, rng,
                             alpha=cfg.model["alpha"],
                             rho_ratio=cfg.model["rho_ratio"])
    m = structure.m
    header = ([f"nb{k + 1}" for k in range(m)]
              + ["rho", "r", "delta_y", "delta_gap", "u"])
    _write_csv(out / "training.csv", header, np.column_stack([X, u]))

    manifest["inputs"]["sites"] = args.sites
    manifest["outputs"] = ["training.csv"]
    manifest["site_index"] = int(i)
    manifest["n_rows"] = int(n_rows)
    manifest["neighbors"] = [int(j) for j in structure.neighbors[i]]
    manifest["structure_hash"] = structure.structure_hash()
    _write_json(out / "manifest.json", manifest)
    print(f"make-training: wrote {n_rows} rows for ordered site {i}")
    return 0


# -- train --------------------------------------------------------------------

def cmd_train(args):
    cfg, out, manifest = _start(args, "train")
    _, structure = _load_structure(args.sites, cfg.surrogate["m"])
    model = train_surrogate(structure, args.seed, cfg.surrogate["n_rows"],
                            design=cfg.design(), basis=cfg.basis(),
                            netspec=cfg.netspec(),
                            optimizer=cfg.surrogate["optimizer"],
                            alpha=cfg.model["alpha"],
                            rho_ratio=cfg.model["rho_ratio"],
                            verbose=args.progress)
    model.save(out / "surrogate.bin")
    _write_csv(out / "losses.csv", ("ordered_site", "final_loss"),
               [(i, model.training_traces[i][-1])
                for i in sorted(model.training_traces)])

    manifest["inputs"]["sites"] = args.sites
    manifest["outputs"] = ["surrogate.bin", "losses.csv"]
    manifest["structure_hash"] = structure.structure_hash()
    manifest["n_rows"] = int(cfg.surrogate["n_rows"])
    _write_json(out / "manifest.json", manifest)
    print(f"train: wrote surrogate for {structure.n} sites under {out}")
    return 0


# -- fit ----------------------------------------------------------------------

def _parse_x_cols(raw):
    cols = [c.strip() for c in raw.split(",") if c.strip()]
    bad = [c for c in cols if c not in data_io.COV_VALUES]
    if bad:
        raise ConfigError(f"unknown covariate columns {bad}; choose from "
                          f"{list(data_io.COV_VALUES)}")
    if not cols:
        raise ConfigError("--x-cols must name at least one column")
    return cols


def _region_series(x_std, regions, col_idx):
    """(2, T) region-mean series of one standardized covariate column."""
    rows = []
    for label in (1, 2):
        sel = regions == label
        if not np.any(sel):
            raise DataError(f"no sites labeled region {label}")
        rows.append(x_std[:, sel, col_idx].mean(axis=1))
    return np.vstack(rows)


def cmd_fit(args):
    cfg, out, manifest = _start(args, "fit")
    sites_df = data_io.load_sites(args.sites)
    obs_df = data_io.load_obs(args.obs)
    covs_df = data_io.load_covs(args.covs)
    asm = data_io.assemble(sites_df, obs_df, covs_df)

    x_cols = _parse_x_cols(args.x_cols)
    if args.z_col not in data_io.COV_VALUES:
        raise ConfigError(f"unknown --z-col {args.z_col!r}")
    x_idx = [data_io.COV_VALUES.index(c) for c in x_cols]
    z_idx = data_io.COV_VALUES.index(args.z_col)
    z = _region_series(asm["x"], asm["regions"], z_idx)
    fit_data = FitData(y=asm["y"], x=asm["x"][:, :, x_idx], z=z,
                       coords=asm["coords"], regions=asm["regions"])

    model = SurrogateModel.load(args.surrogate)
    st = model.structure
    if (st.n != fit_data.n_sites
            or not np.allclose(st.coords, fit_data.coords)
            or not np.array_equal(st.regions, fit_data.regions)):
        raise DataError("surrogate was trained on a different site set")

    store = run_chain(cfg.chain_config(), fit_data, model, args.seed,
                      priors=cfg.prior_spec(), progress=args.progress)
    store.save(out / "posterior")

    manifest["inputs"] = {"sites": args.sites, "obs": args.obs,
                          "covs": args.covs, "surrogate": args.surrogate}
    manifest["outputs"] = ["posterior/draws.csv", "posterior/manifest.json"]
    manifest["x_cols"] = x_cols
    manifest["z_col"] = args.z_col
    manifest["scaler"] = asm["scaler"].to_dict()
    manifest["site_ids"] = asm["site_ids"]
    manifest["coords"] = asm["coords"]
    manifest["regions"] = asm["regions"]
    manifest["years"] = [int(asm["years"][0]), int(asm["years"][-1])]
    manifest["structure_hash"] = st.structure_hash()
    manifest["acceptance"] = store.manifest["acceptance"]
    _write_json(out / "manifest.json", manifest)
    print(f"fit: kept {len(store)} draws under {out}")
    return 0


# -- project ------------------------------------------------------------------

def _load_fit(fit_dir):
    fit_dir = Path(fit_dir)
    with open(fit_dir / "manifest.json") as fh:
        man = json.load(fh)
    if man.get("command") != "fit":
        raise DataError(f"{fit_dir} does not hold a fit run")
    store = PosteriorStore.load(fit_dir / "posterior")
    return man, store


def _corrected(obs_log, gcm_hist_log, target_log):
    """Station-level moment matching applied cell-wise on the log scale."""
    out = np.empty_like(target_log)
    T, n, k = target_log.shape
    for j in range(n):
        for c in range(k):
            bc = BiasCorrection.fit(obs_log[:, j, c], gcm_hist_log[:, j, c])
            out[:, j, c] = bc.apply(target_log[:, j, c])
    return out


def _log_block(arr, label):
    if np.any(arr <= 0.0):
        raise DataError(f"{label}: covariates must be positive before "
                        "log-scale calibration")
    return np.log(arr)


def _window_delta_pair(store, z_window):
    """Window-average mixing weights at the posterior-mean coefficients."""
    pair = []
    for reg in (1, 2):
        b0 = float(store.column(f"beta{reg}0").mean())
        b1 = float(store.column(f"beta{reg}1").mean())
        pair.append(float(np.mean(delta_link(b0, b1, z_window[reg - 1]))))
    return pair


def cmd_project(args):
    cfg, out, manifest = _start(args, "project")
    man, store = _load_fit(args.fit_dir)
    scaler = Standardizer.from_dict(man["scaler"])
    site_ids = man["site_ids"]
    coords = np.asarray(man["coords"], float)
    regions = np.asarray(man["regions"], int)
    x_idx = [data_io.COV_VALUES.index(c) for c in man["x_cols"]]
    z_idx = data_io.COV_VALUES.index(man["z_col"])
    levels = cfg.projection["levels"]
    n_draws = cfg.projection["n_draws"]

    covs_df = data_io.load_covs(args.covs)
    gcm_df = data_io.load_gcm(args.gcm)
    obs_years, obs_raw = data_io.cov_window(covs_df, site_ids)
    H = min(cfg.projection["hist_years"], obs_years.size)
    hist_raw = obs_raw[-H:]
    hist_log = _log_block(hist_raw, "covs")
    hist_std = scaler.transform(hist_raw)
    hist_x = hist_std[:, :, x_idx]
    z_hist = _region_series(hist_std, regions, z_idx)

    if args.models:
        models = [m.strip() for m in args.models.split(",") if m.strip()]
    else:
        models = sorted(gcm_df["model"].unique())

    summary_rows, draw_rows, joint_rows = [], [], []
    rho_m = float(store.column("rho").mean())
    r_m = float(store.column("r").mean())
    joint_u = cfg.projection["joint_u"]
    joint_reps = cfg.projection["joint_replicates"]

    def joint_block(model_name, scen_name, z_window, stream):
        dpair = _window_delta_pair(store, z_window)
        sim = simulate_joint_exceedance(
            joint_u, joint_reps, make_rng(child_seq(args.seed,
                                                    (_NS_JOINT, stream))),
            coords=coords, regions=regions, rho=rho_m, r=r_m,
            delta_pair=dpair)
        for u in joint_u:
            row = sim[u]
            joint_rows.append((model_name, scen_name, u, row["mean"],
                               row["var"], row["se"], row["analytic"]))

    joint_block("observed", "historical", z_hist, 0)
    stream = 1
    for model in models:
        windows = data_io.gcm_windows(gcm_df, model, site_ids)
        if "historical" not in windows:
            raise DataError(f"gcm: model {model!r} has no historical window")
        gh_log = _log_block(windows["historical"][1], f"gcm[{model}]")
        scen_x, scen_z = {}, {}
        for scen in sorted(k for k in windows if k != "historical"):
            yrs, arr = windows[scen]
            F = min(cfg.projection["future_years"], yrs.size)
            fut_raw = arr[-F:]
            fut_log = _log_block(fut_raw, f"gcm[{model}/{scen}]")
            fut_std = scaler.transform(
                np.exp(_corrected(hist_log, gh_log, fut_log)))
            scen_x[scen] = fut_std[:, :, x_idx]
            # the region series is calibrated afresh at the region level
            # rather than averaging station-corrected values
            zr = []
            for label in (1, 2):
                sel = regions == label
                bc = BiasCorrection.fit(
                    np.log(hist_raw[:, sel, z_idx].mean(axis=1)),
                    np.log(windows["historical"][1][:, sel, z_idx]
                           .mean(axis=1)))
                reg = np.exp(bc.apply(np.log(fut_raw[:, sel, z_idx]
                                             .mean(axis=1))))
                zr.append((reg - scaler.lo[z_idx])
                          / (scaler.hi[z_idx] - scaler.lo[z_idx]))
            scen_z[scen] = np.vstack(zr)

        res = project_quantiles(store, hist_x, scen_x, levels=levels,
                                n_draws=n_draws)
        for scen in sorted(res):
            block = res[scen]
            hist_q = block["hist_quantiles"]   # (draws, levels, sites)
            fut_q = block["quantiles"]
            pct = block["pct_change"]
            mean_pct = block["mean_pct_change"]
            for li, level in enumerate(levels):
                for s, sid in enumerate(site_ids):
                    summary_rows.append(
                        (model, scen, level, sid,
                         hist_q[:, li, s].mean(), fut_q[:, li, s].mean(),
                         mean_pct[li, s]))
                    for d in range(n_draws):
                        draw_rows.append((model, scen, level, sid, d,
                                          fut_q[d, li, s], pct[d, li, s]))
            joint_block(model, scen, scen_z[scen], stream)
            stream += 1

    _write_csv(out / "projection_summary.csv",
               ("model", "scenario", "level", "site_id", "hist_quantile",
                "future_quantile", "pct_change"), summary_rows)
    _write_csv(out / "projection_draws.csv",
               ("model", "scenario", "level", "site_id", "draw",
                "future_quantile", "pct_change"), draw_rows)
    _write_csv(out / "joint.csv",
               ("model", "scenario", "u", "mean_count", "var_count", "se",
                "independence_mean"), joint_rows)

    manifest["inputs"] = {"fit": args.fit_dir, "covs": args.covs,
                          "gcm": args.gcm}
    manifest["outputs"] = ["projection_summary.csv", "projection_draws.csv",
                           "joint.csv"]
    manifest["models"] = models
    manifest["hist_window"] = [int(obs_years[-H]), int(obs_years[-1])]
    _write_json(out / "manifest.json", manifest)
    print(f"project: {len(models)} model(s), {len(summary_rows)} "
          f"summary rows under {out}")
    return 0


# -- diagnose -----------------------------------------------------------------

def cmd_diagnose(args):
    cfg, out, manifest = _start(args, "diagnose")
    man, store = _load_fit(args.fit_dir)

    rows = []
    for name in store.names:
        col = store.column(name)
        rows.append((name, col.mean(), col.std(ddof=1),
                     np.quantile(col, 0.05), np.quantile(col, 0.5),
                     np.quantile(col, 0.95), split_rhat(col[None, :])))
    _write_csv(out / "summary.csv",
               ("param", "mean", "sd", "q05", "median", "q95", "rhat"),
               rows)
    acc = store.manifest["acceptance"]
    _write_csv(out / "acceptance.csv", ("block", "rate"),
               [(k, acc[k]) for k in sorted(acc)])

    coords = np.asarray(man["coords"], float)
    grid = np.round(np.linspace(0.1, 0.9, 9), 1)
    surf = chi_surface(grid, grid, float(store.column("rho").mean()),
                       float(store.column("r").mean()),
                       u=cfg.projection["chi_u"], h=default_h(coords),
                       replicates=cfg.projection["chi_replicates"],
                       rng=make_rng(child_seq(args.seed, (_NS_CHI,))))
    surface_to_csv(grid, grid, surf, out / "chi_grid.csv")

    manifest["inputs"]["fit"] = args.fit_dir
    manifest["outputs"] = ["summary.csv", "acceptance.csv", "chi_grid.csv"]
    _write_json(out / "manifest.json", manifest)
    print(f"diagnose: wrote summaries for {len(store.names)} parameters "
          f"under {out}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="extremix",
        description="Spatial extreme-value mixture modeling workflow.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="INI config file; defaults apply when omitted")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="run output directory")
        p.add_argument("--scale", choices=("desk", "paper"), default="desk")

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    common(p)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--n-sites", type=int, default=20)
    p.add_argument("--years", type=int, default=50)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-training",
                       help="emit one site's surrogate training table")
    common(p)
    p.add_argument("--sites", required=True)
    p.add_argument("--site-index", type=int, default=1,
                   help="ordered site position (1..n-1)")
    p.add_argument("--rows", type=int, default=0,
                   help="override the configured row count")
    p.set_defaults(func=cmd_make_training)

    p = sub.add_parser("train", help="train the surrogate for a site set")
    common(p)
    p.add_argument("--sites", required=True)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="run the posterior sampler")
    common(p)
    p.add_argument("--sites", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--covs", required=True)
    p.add_argument("--surrogate", required=True,
                   help="surrogate checkpoint from `train`")
    p.add_argument("--x-cols", default="x_annual",
                   help="comma list of marginal covariate columns")
    p.add_argument("--z-col", default="x_annual",
                   help="column whose region means drive the mixing weights")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("project", help="climate-scenario quantile changes")
    common(p)
    p.add_argument("--fit-dir", required=True,
                   help="output directory of a `fit` run")
    p.add_argument("--covs", required=True)
    p.add_argument("--gcm", required=True)
    p.add_argument("--models", default="",
                   help="comma list of GCM models (default: all in the file)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("diagnose", help="posterior and tail summaries")
    common(p)
    p.add_argument("--fit-dir", required=True,
                   help="output directory of a `fit` run")
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, InitializationError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
