"""Command-line drivers: ``nngp-chol <subcommand> [options]``.

Every run writes its outputs under ``--out-dir`` together with a
``<subcommand>_manifest.json`` holding the resolved arguments, seed,
package version, kernel backend and wall time.
"""
import argparse
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _backend
from . import experiments as ex
from .covariance import FAMILIES, CovarianceSpec
from .errors import NNGPError
from .factor import build_factor, simulate
from .geometry import build_neighbor_graph, order_locations
from .inference import RegressionData, default_init, fit_mle, predict
from .io import (
    read_data_csv,
    read_edge_list,
    read_table,
    write_csv,
    write_json,
    write_matrix,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


# -- argument types -----------------------------------------------------------

def _number(kind, low=None, strict=True):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}") from None
        if kind is float and not math.isfinite(v):
            raise argparse.ArgumentTypeError(f"must be finite, got {text}")
        if low is not None and (v <= low if strict else v < low):
            op = ">" if strict else ">="
            raise argparse.ArgumentTypeError(f"must be {op} {low}, got {text}")
        return v
    parse.__name__ = kind.__name__
    return parse


pos_int = _number(int, 0)
pos_float = _number(float, 0.0)
nonneg_float = _number(float, 0.0, strict=False)


def int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("need at least one positive integer")
    return vals


def float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("need at least one value")
    return vals


def unit_interval(text):
    v = _number(float)(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


# -- parser -------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--config", type=Path, default=None,
                   help="TOML file of option defaults (command-line flags win)")
    p.add_argument("--threads", type=pos_int, default=1,
                   help="worker processes for replicate loops")


def _kernel(p, phi=3.0):
    p.add_argument("--kernel", choices=FAMILIES, default="exponential")
    p.add_argument("--sigma2", type=pos_float, default=1.0)
    p.add_argument("--phi", type=pos_float, default=phi)
    p.add_argument("--tau2", type=nonneg_float, default=0.0)


def _ordering(p):
    p.add_argument("--ordering", choices=("coordinate", "random"), default="coordinate")


def _data(p):
    p.add_argument("--data", type=Path, required=True,
                   help="CSV with columns sx, sy, y, x1..xp")
    p.add_argument("--y-column", default="y")
    p.add_argument("--m", type=pos_int, default=10, help="number of neighbors")
    p.add_argument("--kernel", choices=FAMILIES, default="exponential")
    p.add_argument("--sigma2", type=pos_float, default=None, help="starting sigma2")
    p.add_argument("--phi", type=pos_float, default=None, help="starting phi")
    p.add_argument("--tau2", type=nonneg_float, default=None, help="starting tau2")
    p.add_argument("--no-nugget", action="store_true", help="fix tau2 instead of estimating it")
    _ordering(p)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nngp-chol",
        description="Nearest-neighbor Gaussian process tools built on sparse Cholesky factors.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("simulate", help="draw NNGP realizations at random locations")
    _common(p)
    p.add_argument("--n", type=pos_int, default=1000)
    p.add_argument("--draws", type=pos_int, default=1)
    p.add_argument("--m", type=pos_int, default=10)
    _kernel(p)
    _ordering(p)

    p = sub.add_parser("decorrelate-exp", help="decorrelate dense-GP replicates with NNGP")
    _common(p)
    p.add_argument("--n", type=pos_int, default=200)
    p.add_argument("--m", type=pos_int, default=10)
    p.add_argument("--replicates", type=pos_int, default=2000)
    p.add_argument("--dense-max-n", type=pos_int, default=2500)
    p.add_argument("--bins", type=pos_int, default=60)
    _kernel(p)
    _ordering(p)

    p = sub.add_parser("sim-compare", help="sample covariances of dense and NNGP draws")
    _common(p)
    p.add_argument("--n", type=pos_int, default=100)
    p.add_argument("--m", type=pos_int, default=5)
    p.add_argument("--replicates", type=pos_int, default=10000)
    p.add_argument("--dense-max-n", type=pos_int, default=2500)
    p.add_argument("--bins", type=pos_int, default=60)
    _kernel(p)
    _ordering(p)

    p = sub.add_parser("bench", help="time NNGP and dense simulation")
    _common(p)
    p.add_argument("--n-grid", type=int_list, default=[1000, 2500, 5000])
    p.add_argument("--draws", type=pos_int, default=100)
    p.add_argument("--reps", type=pos_int, default=3)
    p.add_argument("--m", type=pos_int, default=10)
    p.add_argument("--dense-max-n", type=pos_int, default=ex.DENSE_MAX_N)
    p.add_argument("--no-dense", action="store_true")
    _kernel(p)

    p = sub.add_parser("homoskedasticity", help="NNGP variances against order index")
    _common(p)
    p.add_argument("--n", type=pos_int, default=200)
    p.add_argument("--m", type=pos_int, default=5)
    p.add_argument("--kernel", choices=FAMILIES, default="exponential")
    p.add_argument("--sigma2", type=pos_float, default=1.0)
    p.add_argument("--phi", type=pos_float, default=1.0)

    p = sub.add_parser("fit", help="maximum likelihood fit and optional kriging")
    _common(p)
    _data(p)
    p.add_argument("--predict", type=Path, default=None,
                   help="CSV with columns sx, sy[, x1..xp] of prediction locations")
    p.add_argument("--maxiter", type=pos_int, default=500)

    p = sub.add_parser("bootstrap", help="spatial bootstrap intervals for the fit")
    _common(p)
    _data(p)
    p.add_argument("--B", type=pos_int, default=250, help="bootstrap replicates")
    p.add_argument("--level", type=unit_interval, default=0.95)

    p = sub.add_parser("rfgls", help="random forest with GLS splits")
    _common(p)
    _data(p)
    p.add_argument("--n-trees", type=pos_int, default=100)
    p.add_argument("--min-node-size", type=pos_int, default=5)
    p.add_argument("--mtry", type=pos_int, default=None)
    p.add_argument("--max-leaves", type=pos_int, default=None)
    p.add_argument("--no-resample", action="store_true")
    p.add_argument("--predict", type=Path, default=None,
                   help="CSV with columns sx, sy, x1..xp of prediction points")
    p.add_argument("--mode", choices=("mean", "kriging"), default="mean")

    p = sub.add_parser("dagar", help="CAR and DAGAR variance/correlation diagnostics")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--edges", type=Path, help="edge list, one 0-indexed 'i j' pair per line")
    src.add_argument("--grid", type=pos_int, nargs=2, metavar=("ROWS", "COLS"))
    p.add_argument("--rho-grid", type=float_list,
                   default=[round(0.1 * k, 1) for k in range(11)])
    p.add_argument("--sigma2", type=pos_float, default=1.0)
    p.add_argument("--order", choices=("input", "degree", "random"), default="input",
                   help="region ordering for DAGAR")
    return parser


def _apply_config(parser, argv):
    """Reparse ``argv`` with defaults taken from the ``--config`` TOML file.

    Top-level keys apply to every subcommand; a table named after the
    subcommand overrides them.  Keys use option names (``n-grid`` or
    ``n_grid``).
    """
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        with open(args.config, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        parser.error(f"cannot read config {args.config}: {exc.strerror}")
    except tomllib.TOMLDecodeError as exc:
        parser.error(f"invalid TOML in {args.config}: {exc}")
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    flat.update(cfg.get(args.command, {}))
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    tokens = []
    for key, value in flat.items():
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None or dest in ("config", "help"):
            parser.error(f"unknown option {key!r} in {args.config}")
        opt = act.option_strings[-1]
        if act.nargs == 0:
            if value:
                tokens.append(opt)
            continue
        vals = value if isinstance(value, list) else [value]
        if act.nargs is None and isinstance(value, list):
            vals = [",".join(str(v) for v in value)]
        tokens += [opt] + [str(v) for v in vals]
    # config first so explicit flags later on the command line win
    cmd_at = argv.index(args.command)
    return parser.parse_args(argv[: cmd_at + 1] + tokens + argv[cmd_at + 1:])


# -- helpers ------------------------------------------------------------------

def _density(values, bins):
    dens, edges = np.histogram(values, bins=bins, density=True)
    return [(float(a), float(b), float(d)) for a, b, d in zip(edges[:-1], edges[1:], dens)]


def _upper_entries(*mats):
    iu = np.triu_indices(mats[0].shape[0])
    return iu, [m[iu] for m in mats]


def _load_regression(args):
    coords, y, X = read_data_csv(args.data, args.y_column)
    locs = order_locations(coords, args.ordering, seed=args.seed)
    X1 = np.column_stack([np.ones(len(y)), X])
    return RegressionData(y, X1, locs), X


def _init_spec(args, data):
    base = default_init(data, args.kernel)
    tau2 = base.tau2 if args.tau2 is None else args.tau2
    if args.no_nugget and args.tau2 is None:
        tau2 = 0.0
    return CovarianceSpec(
        args.kernel,
        base.sigma2 if args.sigma2 is None else args.sigma2,
        base.phi if args.phi is None else args.phi,
        tau2,
    )


def _fit_payload(fit):
    return {
        "beta": fit.beta,
        "kernel": fit.spec.family,
        "sigma2": fit.spec.sigma2,
        "phi": fit.spec.phi,
        "tau2": fit.spec.tau2,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
    }


def _read_prediction_points(path, p):
    header, values = read_table(path)
    col = {h: j for j, h in enumerate(header)}
    missing = [c for c in ["sx", "sy"] + [f"x{j + 1}" for j in range(p)] if c not in col]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    coords = values[:, [col["sx"], col["sy"]]]
    X = values[:, [col[f"x{j + 1}"] for j in range(p)]] if p else np.empty((len(values), 0))
    return coords, X


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args):
    pts = ex.random_locations(args.n, np.random.SeedSequence(args.seed).spawn(1)[0])
    locs = order_locations(pts, args.ordering, seed=args.seed)
    spec = CovarianceSpec(args.kernel, args.sigma2, args.phi, args.tau2)
    graph = build_neighbor_graph(locs, min(args.m, max(args.n - 1, 1)))
    chol = build_factor(locs, graph, spec, "response")
    draws = locs.from_ordered(simulate(chol, args.seed, args.draws).T)
    header = ["sx", "sy"] + [f"draw_{k + 1}" for k in range(args.draws)]
    path = write_csv(args.out_dir / "simulate.csv", header, np.column_stack([pts, draws]).tolist())
    return [path], {}


def cmd_decorrelate(args):
    res = ex.decorrelation_experiment(
        n=args.n, m=args.m, replicates=args.replicates, family=args.kernel,
        sigma2=args.sigma2, phi=args.phi, tau2=args.tau2, ordering=args.ordering,
        seed=args.seed, dense_max_n=args.dense_max_n,
    )
    out = args.out_dir
    paths = [write_matrix(out / "decorrelated_cov.csv", res["sample_cov"])]
    rows = [("diagonal",) + r for r in _density(res["diag"], args.bins)]
    rows += [("offdiagonal",) + r for r in _density(res["offdiag"], args.bins)]
    paths.append(write_csv(out / "decorrelated_density.csv",
                           ["entry", "bin_lo", "bin_hi", "density"], rows))
    summary = {"mean_diag": res["mean_diag"], "mean_abs_offdiag": res["mean_abs_offdiag"],
               "phi_used": res["spec"].phi}
    paths.append(write_json(out / "decorrelate_summary.json", summary))
    return paths, summary


def cmd_sim_compare(args):
    res = ex.sim_compare(
        n=args.n, m=args.m, replicates=args.replicates, family=args.kernel,
        sigma2=args.sigma2, phi=args.phi, tau2=args.tau2, ordering=args.ordering,
        seed=args.seed, dense_max_n=args.dense_max_n,
    )
    out = args.out_dir
    (ii, jj), (dense, nngp, exact, tilde, z) = _upper_entries(
        res["cov_dense"], res["cov_nngp"], res["cov_exact"], res["cov_tilde"], res["z_scores"])
    rows = zip(ii, jj, dense, nngp, nngp - dense, exact, tilde, z)
    paths = [
        write_csv(out / "sim_compare_entries.csv",
                  ["i", "j", "cov_dense", "cov_nngp", "difference", "cov_exact",
                   "cov_tilde", "z_vs_tilde"], rows),
        write_csv(out / "sim_compare_density.csv", ["bin_lo", "bin_hi", "density"],
                  _density(res["difference"].ravel(), args.bins)),
    ]
    summary = {
        "mean_difference": res["mean_difference"],
        "mean_difference_vs_exact": res["mean_difference_vs_exact"],
        "max_abs_z_vs_tilde": float(np.max(np.abs(res["z_scores"]))),
        "phi_used": res["spec"].phi,
    }
    paths.append(write_json(out / "sim_compare_summary.json", summary))
    return paths, summary


def cmd_bench(args):
    rows = ex.bench(
        n_grid=args.n_grid, draws=args.draws, reps=args.reps, m=args.m,
        family=args.kernel, sigma2=args.sigma2, phi=args.phi, tau2=args.tau2,
        seed=args.seed, dense=not args.no_dense, dense_max_n=args.dense_max_n,
    )
    table = [(r["method"], r["n"], "NA" if r["mean"] is None else r["mean"],
              "NA" if r["sd"] is None else r["sd"], r["reps"]) for r in rows]
    path = write_csv(args.out_dir / "bench.csv", ["method", "n", "mean_s", "sd_s", "reps"], table)
    return [path], {"rows": rows}


def cmd_homoskedasticity(args):
    res = ex.homoskedasticity(n=args.n, m=args.m, family=args.kernel, sigma2=args.sigma2,
                              phi=args.phi, seed=args.seed)
    rows = [(name, i, v) for name, var in res.items() for i, v in enumerate(var)]
    path = write_csv(args.out_dir / "homoskedasticity.csv", ["ordering", "index", "variance"], rows)
    summary = {name: {"min": float(v.min()), "argmin": int(v.argmin()), "mean": float(v.mean())}
               for name, v in res.items()}
    return [path], summary


def cmd_fit(args):
    data, X = _load_regression(args)
    graph = build_neighbor_graph(data.locs, min(args.m, data.n - 1))
    init = _init_spec(args, data)
    fit = fit_mle(data, graph, init, estimate_nugget=not args.no_nugget, maxiter=args.maxiter)
    payload = {"fit": _fit_payload(fit), "init": init.as_dict(), "n": data.n}
    paths = [write_json(args.out_dir / "fit.json", payload)]
    if args.predict is not None:
        coords, Xn = _read_prediction_points(args.predict, X.shape[1])
        X_new = np.column_stack([np.ones(len(coords)), Xn])
        mean, var = predict(data, fit, coords, args.m, X_new)
        paths.append(write_csv(args.out_dir / "predictions.csv", ["sx", "sy", "mean", "variance"],
                               np.column_stack([coords, mean, var]).tolist()))
    return paths, payload["fit"]


def cmd_bootstrap(args):
    from .bootstrap import run_bootstrap

    data, _ = _load_regression(args)
    graph = build_neighbor_graph(data.locs, min(args.m, data.n - 1))
    fit = fit_mle(data, graph, _init_spec(args, data), estimate_nugget=not args.no_nugget)
    res = run_bootstrap(data, graph, fit, B=args.B, level=args.level, seed=args.seed,
                        n_jobs=args.threads, estimate_nugget=not args.no_nugget)
    payload = {
        "fit": _fit_payload(fit),
        "level": res.level,
        "B": res.B,
        "failures": res.failures,
        "intervals": {name: res.intervals[j] for j, name in enumerate(res.names)},
    }
    paths = [
        write_json(args.out_dir / "bootstrap.json", payload),
        write_csv(args.out_dir / "bootstrap_estimates.csv", list(res.names), res.estimates.tolist()),
    ]
    return paths, {"failures": res.failures}


def cmd_rfgls(args):
    from .rfgls import ForestHyper, fit_rfgls, predict_forest

    coords, y, X = read_data_csv(args.data, args.y_column)
    if X.shape[1] == 0:
        raise ValueError(f"{args.data}: RF-GLS needs at least one feature column x1..xp")
    locs = order_locations(coords, args.ordering, seed=args.seed)
    data = RegressionData(y, X, locs)
    graph = build_neighbor_graph(locs, min(args.m, data.n - 1))
    hyper = ForestHyper(args.n_trees, args.min_node_size, args.max_leaves, args.mtry)
    init = None
    if any(v is not None for v in (args.sigma2, args.phi, args.tau2)):
        init = _init_spec(args, RegressionData(y, np.column_stack([np.ones(len(y)), X]), locs))
    model = fit_rfgls(data, graph, hyper, seed=args.seed, family=args.kernel, init=init,
                      resample=not args.no_resample, n_jobs=args.threads)
    payload = {"working_fit": _fit_payload(model.fit), "n_trees": hyper.n_trees,
               "leaves": [t.n_leaves() for t in model.trees]}
    paths = [write_json(args.out_dir / "rfgls.json", payload)]
    if args.predict is not None:
        pc, Xn = _read_prediction_points(args.predict, X.shape[1])
        pred = predict_forest(model, Xn, args.mode, data=data, coords_new=pc, m=args.m)
        paths.append(write_csv(args.out_dir / "rfgls_predictions.csv", ["sx", "sy", "prediction"],
                               np.column_stack([pc, pred]).tolist()))
    return paths, {"mean_leaves": float(np.mean(payload["leaves"]))}


def degree_groups(graph):
    """Vertex classes by degree and edge classes by the endpoint degree pair."""
    deg = graph.degrees().astype(int)
    vgroups = {v: f"deg{deg[v]}" for v in range(graph.n_regions)}
    egroups = {}
    for i, j in graph.edges:
        a, b = sorted((deg[i], deg[j]))
        egroups[(int(i), int(j))] = f"deg{a}-deg{b}"
    return vgroups, egroups


def cmd_dagar(args):
    from .dagar import ArealGraph, car_diagnostics, grid_graph, grid_groups, region_order

    if args.grid is not None:
        graph = grid_graph(*args.grid)
        vgroups, egroups = grid_groups(*args.grid)
    else:
        edges = read_edge_list(args.edges)
        graph = ArealGraph.from_edges(int(edges.max()) + 1, edges)
        vgroups, egroups = degree_groups(graph)
    graph = graph.with_order(region_order(graph, args.order, args.seed))
    rows = []
    for model in ("car", "dagar"):
        for r in car_diagnostics(graph, args.rho_grid, vgroups, egroups, args.sigma2, model):
            rows.append((model, r["rho"], r["kind"], r["group"], r["mean"], r["min"], r["max"],
                         int(r["singular"])))
    path = write_csv(args.out_dir / "dagar_diagnostics.csv",
                     ["model", "rho", "kind", "group", "mean", "min", "max", "singular"], rows)
    return [path], {"regions": graph.n_regions, "edges": len(graph.edges)}


COMMANDS = {
    "simulate": cmd_simulate,
    "decorrelate-exp": cmd_decorrelate,
    "sim-compare": cmd_sim_compare,
    "bench": cmd_bench,
    "homoskedasticity": cmd_homoskedasticity,
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "rfgls": cmd_rfgls,
    "dagar": cmd_dagar,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _apply_config(parser, argv)
    t0 = time.perf_counter()
    try:
        paths, summary = COMMANDS[args.command](args)
    except (NNGPError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"nngp-chol {args.command}: error: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    manifest = {
        "command": args.command,
        "argv": argv,
        "args": {k: v for k, v in vars(args).items() if k != "command"},
        "seed": args.seed,
        "version": __version__,
        "backend": _backend.name(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": wall,
        "outputs": [str(p) for p in paths],
        "summary": summary,
    }
    mpath = write_json(args.out_dir / f"{args.command}_manifest.json", manifest)
    print(f"wrote {len(paths)} file(s) and {mpath} in {wall:.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
