"""Command line runner: ``torcover run`` and ``torcover suite``.

Exit codes: 0 on success, 1 on errors, 2 when an experiment raises an
acceptance flag (a vacancy row outside its band, a sandwich violation,
a failing criterion).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from . import config as cfgmod
from .errors import ConfigInvalid, PreconditionError, TorcoverError

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2


# ---------------------------------------------------------------------------
# value helpers


def _mode(cfg):
    from .walk import load_mode_file, named_mode

    spec = cfg["mode"]
    if os.path.exists(spec):
        return load_mode_file(spec)[0]
    return named_mode(spec)


def _points(text, d):
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        p = tuple(int(c) for c in chunk.split(","))
        if len(p) != d:
            raise ConfigInvalid(f"point {chunk!r} does not have {d} coordinates")
        pts.append(p)
    if not pts:
        raise ConfigInvalid("empty point list")
    return pts


def _set(text, d):
    """``point``, ``ball:r`` or an explicit point list."""
    from .potential import box_points

    if text == "point":
        return [(0,) * d]
    if text.startswith("ball:"):
        return [tuple(int(c) for c in p) for p in box_points(d, int(text[5:]))]
    return _points(text, d)


def _centers(text, geom):
    """Explicit centres, or ``grid:n``: n centres spaced evenly on the diagonal."""
    if text.startswith("grid:"):
        n = int(text[5:])
        if n < 1:
            raise ConfigInvalid("grid:n needs n >= 1")
        return [tuple([(i * geom.N) // n] * geom.d) for i in range(n)]
    return _points(text, geom.d)


def _target(text, geom):
    """``all`` (None), ``grid:s`` (points with coordinates divisible by s) or points."""
    if text == "all":
        return None
    if text.startswith("grid:"):
        s = int(text[5:])
        axis = np.arange(0, geom.N, s)
        mesh = np.stack(np.meshgrid(*([axis] * geom.d), indexing="ij"), axis=-1).reshape(-1, geom.d)
        return geom.indices(mesh)
    return geom.indices(np.asarray(_points(text, geom.d)))


def _tag(cfg):
    return f"{cfg.hash[:12]}-s{cfg['seed']}"


def _csv(path, header, rows):
    # minimal quoting: only free text containing a comma is ever quoted
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return str(x)


def _dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


class Run:
    """Output directory bookkeeping for one experiment."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.dir = cfg["out"]
        os.makedirs(self.dir, exist_ok=True)
        self.files = []
        self.flags = []

    def path(self, stem, ext):
        name = f"{stem}-{_tag(self.cfg)}.{ext}"
        self.files.append(name)
        return os.path.join(self.dir, name)

    def json(self, stem, obj):
        obj = dict(obj, config_hash=self.cfg.hash, seed=self.cfg["seed"], kind=self.cfg.kind)
        _dump(obj, self.path(stem, "json"))
        return obj

    def csv(self, stem, header, rows):
        _csv(self.path(stem, "csv"), header, rows)

    def flag(self, text):
        self.flags.append(text)


# ---------------------------------------------------------------------------
# experiment kinds


def run_green(cfg, run):
    from .potential import green

    mode = _mode(cfg)
    x = cfg["point"]
    if len(x) != mode.d:
        raise ConfigInvalid(f"key 'point' needs {mode.d} coordinates")
    g, err = green(mode, x, cfg["tol"])
    return run.json("green", {"point": list(x), "g": g, "error": err, "tol": cfg["tol"], "mode": mode.fingerprint})


def run_capacity(cfg, run):
    from .potential import capacity_extrapolated, equilibrium, equilibrium_infinite

    mode = _mode(cfg)
    K = np.asarray(_set(cfg["K"], mode.d))
    method = cfg.get("method", "green")
    if method == "green":
        res = equilibrium_infinite(mode, K, tol=min(cfg["tol"], 1e-6))
        cap, err, measure, pts = res.capacity, res.error, res.measure, res.K
    elif method == "box":
        if cfg.get("box_radius") is None:
            raise ConfigInvalid("missing required key 'box_radius' for method 'box'")
        res = equilibrium(mode, K, cfg["box_radius"])
        cap, err, measure, pts = res.capacity, res.error, res.measure, res.K
    elif method == "ladder":
        cap, err, ladder = capacity_extrapolated(mode, K, tol=cfg["tol"])
        measure, pts = None, None
    else:
        raise ConfigInvalid(f"key 'method': unknown capacity method {method!r}")
    if measure is not None:
        run.csv("equilibrium", ["site", "e_K"], ([" ".join(str(int(c)) for c in p), m] for p, m in zip(pts, measure)))
    out = {"K": cfg["K"], "method": method, "capacity": cap, "error": err, "mode": mode.fingerprint}
    if method == "ladder":
        out["ladder"] = ladder
    return run.json("capacity", out)


def run_interlace(cfg, run):
    from .interlacements import prepare_window, sample_window, vacancy_batch, write_window_csv
    from .potential import equilibrium_infinite
    from .rng import stream

    mode = _mode(cfg)
    K = _set(cfg["K"], mode.d)
    window = prepare_window(mode, K, cfg.get("method", "resample"))
    levels = sorted(cfg["u"], reverse=True)
    probes = [[p] for p in K] + ([K] if len(K) > 1 else [])
    vb = vacancy_batch(window, probes, levels, cfg["samples"], cfg["seed"], "cli/interlace")
    sample = sample_window(mode, None, levels[0], stream(cfg["seed"], 0, "cli/interlace/dump"), window=window)
    write_window_csv(sample, run.path("window", "csv"))
    caps = [equilibrium_infinite(mode, np.asarray(p)).capacity for p in probes]
    rows = []
    for a, p in enumerate(probes):
        for j, u in enumerate(levels):
            pred = math.exp(-u * caps[a])
            v, se = float(vb["vacancy"][a, j]), float(vb["se"][a, j])
            bad = abs(v - pred) > 3 * se + 1e-3 + window.bias
            rows.append({"probe": [list(q) for q in p], "u": u, "vacancy": v, "se": se, "prediction": pred, "flag": bad})
            if bad:
                run.flag(f"interlace vacancy of {p} at u={u}: {v:.5f} vs {pred:.5f}")
    return run.json("interlace", {"cap": window.capacity, "method": window.method, "bias": window.bias,
                                  "samples": cfg["samples"], "count_mean": vb["count_mean"],
                                  "count_var": vb["count_var"], "rows": rows})


def _obstacles(cfg, geom):
    from .quasistationary import ObstacleGeometry

    centers = _centers(cfg["centers"], geom)
    if cfg.get("rA") is not None or cfg.get("rC") is not None:
        if cfg.get("rA") is None or cfg.get("rC") is None:
            raise ConfigInvalid("explicit radii need both 'rA' and 'rC'")
        return ObstacleGeometry.explicit(geom, centers, A=cfg["rA"], C=cfg["rC"])
    return ObstacleGeometry.from_epsilon(geom, centers, cfg.get("eps0", 0.1))


def run_qsd(cfg, run):
    from .quasistationary import (
        capacity_duality, conditional_convergence, hitting_from_sigma, perron_pair, restricted_matrix,
        write_spectral_csv,
    )
    from .walk import TorusGeometry

    mode = _mode(cfg)
    rows, details = [], []
    for N in cfg["N"]:
        geom = TorusGeometry(mode.d, N)
        obs = _obstacles(cfg, geom)
        P, kept = restricted_matrix(mode, geom, obs)
        s = perron_pair(P, kept=kept)
        rows.append({"N": N, "n": obs.n, "lambda1": s.lambda1, "lambda2": s.lambda2, "gap": s.gap,
                     "min_sigma": float(s.sigma.min())})
        d = {"N": N, "radii": obs.radii, "separation": obs.separation, "iterations": s.iterations,
             "residual": s.residual}
        if kept.size <= 4000:
            cc = conditional_convergence(mode, geom, obs, time=cfg["time"])
            d["convergence"] = {k: cc[k] for k in ("t", "tv", "rate", "predicted", "ratio")}
            if abs(cc["rate"] / cc["predicted"] - 1) > 0.1:
                run.flag(f"qsd N={N}: TV decay rate {cc['rate']:.5f} vs {cc['predicted']:.5f}")
        hs = hitting_from_sigma(mode, geom, obs, walks=cfg["walks"], seed=cfg["seed"])
        d["entry"] = {"max_deviation": hs["max_deviation"], "total": hs["total"], "sites": hs["sites"].size}
        if hs["sites"].size and hs["max_deviation"] > 0.2:
            run.flag(f"qsd N={N}: entry law deviates from e-bar by {hs['max_deviation']:.3f}")
        du = capacity_duality(mode, geom, obs, walks=cfg["walks"], seed=cfg["seed"], exact=cfg["exact"])
        d["duality"] = du
        for key in ("ratio", "sup_inf_ratio"):
            if key in du and abs(du[key] - 1) > 0.15:
                run.flag(f"qsd N={N}: duality {key} {du[key]:.4f} outside 1 +- 0.15")
        details.append(d)
    write_spectral_csv(rows, run.path("spectral", "csv"))
    return run.json("qsd", {"rows": rows, "details": details, "mode": mode.fingerprint})


def run_cover(cfg, run):
    from . import cover as cv
    from .walk import TorusGeometry

    mode = _mode(cfg)
    test = cfg["test"]
    reps = cfg.get("replicates", 2000 if test in ("gumbel", "separated") else 1000)
    threads = cfg.threads
    seed = cfg["seed"]
    out = {"test": test, "mode": mode.fingerprint, "replicates": reps, "per_N": []}
    if test == "gumbel":
        g0, g0_err = cv.green_zero(mode)
        ks = []
        for N in cfg["N"]:
            geom = TorusGeometry(mode.d, N)
            s = cv.cover_samples(mode, geom, _target(cfg["F"], geom), reps, seed, _start(cfg), threads,
                                 tag=f"gumbel/{N}")
            reports = {n: cv.gumbel_report(s, mode, geom, n, g0, g0_err, 1e-4, seed, cfg["start"])
                       for n in ("green", "mean_hit")}
            for r in reports.values():
                r.config_hash = cfg.hash
            cv.write_cover_csv(reports[cfg["normalization"]], run.path(f"cover-N{N}", "csv"))
            out["per_N"].append({n: r.summary() for n, r in reports.items()})
            ks.append(reports[cfg["normalization"]].ks)
        bar = 2 * math.sqrt(2) * cv.ks_se(reps)
        for (a, b), (na, nb) in zip(zip(ks, ks[1:]), zip(cfg["N"], cfg["N"][1:])):
            if b > a + bar:
                run.flag(f"KS rises from {a:.4f} at N={na} to {b:.4f} at N={nb}")
    elif test == "meanhit":
        for N in cfg["N"]:
            out["per_N"].append(cv.mean_hitting_ratio(mode, N, reps, seed, threads))
    elif test == "vacancy":
        for N in cfg["N"]:
            res = cv.vacancy_check(mode, N, cfg["u"], reps, seed, threads, slack=cfg["slack"])
            run.csv(f"vacancy-N{N}", ["u", "walk", "se", "interlacement", "flag"],
                    ([r["u"], r["walk"], r["se"], r["interlacement"], r["flag"]] for r in res["rows"]))
            for r in res["rows"]:
                if r["flag"]:
                    run.flag(f"vacancy N={N} u={r['u']}: walk {r['walk']:.5f} +- {r['se']:.5f}, "
                             f"interlacement {r['interlacement']:.5f}")
            out["per_N"].append({k: v for k, v in res.items() if k != "fractions"})
    elif test == "separated":
        if cfg["F"] == "all":
            raise ConfigInvalid("key 'F' must name a separated set for test 'separated'")
        for N in cfg["N"]:
            geom = TorusGeometry(mode.d, N)
            start = None if cfg["start"] == "uniform" else _start(cfg)
            r = cv.separated_subset_gumbel(mode, N, _target(cfg["F"], geom), reps, seed, start, threads)
            r.config_hash = cfg.hash
            cv.write_cover_csv(r, run.path(f"separated-N{N}", "csv"))
            out["per_N"].append(r.summary())
    return run.json("cover", out)


def _start(cfg):
    s = cfg["start"]
    return s if s == "uniform" else tuple(int(c) for c in s.split(","))


def run_uncovered(cfg, run):
    from . import cover as cv
    from .walk import TorusGeometry

    mode = _mode(cfg)
    reps = cfg.get("replicates", 500)
    out = {"mode": mode.fingerprint, "reports": []}
    for N in cfg["N"]:
        geom = TorusGeometry(mode.d, N)
        reports = cv.uncovered_pipeline(mode, N, _target(cfg["F"], geom), list(cfg["rho"]), reps, cfg["seed"],
                                        cfg.threads)
        for r in reports:
            run.csv(f"uncovered-N{N}-rho{r.rho:g}", ["replicate", "size", "minDistance", "sizeOk", "spreadOk", "good", "shift"],
                    ([i, r.sizes[i], r.min_distance[i], r.size_ok[i], r.spread_ok[i], r.good[i], r.shift[i]]
                     for i in range(r.sizes.size)))
            out["reports"].append(r.summary())
            if not r.subset_ok:
                run.flag(f"uncovered N={N} rho={r.rho}: F_rho escaped F")
            if r.good_frequency < cfg["good_bar"]:
                run.flag(f"uncovered N={N} rho={r.rho}: good frequency {r.good_frequency:.3f} < {cfg['good_bar']}")
    return run.json("uncovered", out)


def run_couple(cfg, run):
    from .coupling import audit, cross_box_independence, write_sandwich_csv
    from .walk import TorusGeometry

    mode = _mode(cfg)
    if len(cfg["N"]) != 1 or len(cfg["u"]) != 1:
        raise ConfigInvalid("kind 'couple' takes a single N and a single u")
    N, u = cfg["N"][0], cfg["u"][0]
    centers = _centers(cfg["centers"], TorusGeometry(mode.d, N))
    rep = audit(mode, N, centers, epsilon0=cfg.get("eps0", 0.3), u=u, delta=cfg["delta"],
                replicates=cfg.get("replicates", 5000), interlace_samples=cfg["samples"], seed=cfg["seed"],
                threads=cfg.threads, slack=cfg["slack"], radius=cfg.get("rA"))
    write_sandwich_csv(rep, run.path("sandwich", "csv"))
    out = rep.summary()
    if len(centers) > 1:
        out["independence"] = cross_box_independence(mode, N, centers, u, cfg.get("replicates", 5000),
                                                     cfg["seed"] + 1, cfg.threads)
    for i in np.flatnonzero(rep.flags):
        p = rep.probes[i]
        run.flag(f"probe {i} (box {p.box}, {p.kind} {p.offsets}): walk {rep.walk[i]:.4f} outside "
                 f"[{rep.lower[i]:.4f}, {rep.upper[i]:.4f}]")
    return run.json("couple", out)


def run_hitscale(cfg, run):
    from .potential import hit_probability_scaling

    mode = _mode(cfg)
    rep = hit_probability_scaling(mode, cfg["r1"], cfg["r2"], trials=cfg["trials"], seed=cfg["seed"])
    return run.json("hitscale", rep)


RUNNERS = {
    "green": run_green, "capacity": run_capacity, "interlace": run_interlace, "qsd": run_qsd,
    "cover": run_cover, "uncovered": run_uncovered, "couple": run_couple, "hitscale": run_hitscale,
}


def versions():
    import numba
    import scipy

    return {"torcover": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def execute(cfg, echo=print):
    """Run one validated config; returns ``(exit code, result, run)``."""
    t0 = time.perf_counter()
    run = Run(cfg)
    result = RUNNERS[cfg.kind](cfg, run)
    wall = time.perf_counter() - t0
    code = EXIT_FLAGGED if run.flags else EXIT_OK
    _dump({"config_hash": cfg.hash, "seed": cfg["seed"], "kind": cfg.kind, "config": cfg.canonical(),
           "versions": versions(), "wall_time": wall, "threads": cfg.threads, "files": run.files,
           "flags": run.flags, "exit_code": code}, os.path.join(run.dir, "manifest.json"))
    for f in run.flags:
        echo(f"FLAG {f}")
    return code, result, run


# ---------------------------------------------------------------------------
# suite


def read_manifest(path):
    """Entries of a suite manifest: config paths or ``acceptance:<k|all>``."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("acceptance:"):
                what = line.split(":", 1)[1]
                nums = list(range(1, 10)) if what == "all" else [int(k) for k in what.split(",")]
                entries += [("acceptance", k) for k in nums]
            else:
                entries.append(("config", line if os.path.isabs(line) else os.path.join(base, line)))
    return entries


def suite(entries, out, threads=None, echo=print):
    """Run manifest entries and write an aggregated pass/fail report."""
    from .acceptance import CRITERIA, run_criterion

    configs = []
    for kind, item in entries:
        if kind == "config":
            configs.append((item, cfgmod.resolve(cfgmod.load(item))))
        elif item not in CRITERIA:
            raise ConfigInvalid(f"no acceptance criterion {item}")
    os.makedirs(out, exist_ok=True)
    rows = []
    t0 = time.perf_counter()
    cfg_iter = iter(configs)
    for i, (kind, item) in enumerate(entries):
        if kind == "acceptance":
            res = run_criterion(item, threads)
            echo(res.line())
            for c in res.checks:
                echo(c.line())
            rows.append({"entry": f"criterion {item}", "status": "pass" if res.passed else "fail",
                         "detail": "; ".join(c.label for c in res.failing), "result": res.to_dict()})
        else:
            path, cfg = next(cfg_iter)
            sub = dict(cfg.values, out=os.path.join(out, f"{i:02d}-{cfg.kind}"))
            if threads is not None:
                sub["threads"] = threads
            code, _, run = execute(cfgmod.ExperimentConfig(sub), echo)
            status = "pass" if code == EXIT_OK else "fail"
            echo(f"{os.path.basename(path)} {status.upper()}")
            rows.append({"entry": path, "status": status, "detail": "; ".join(run.flags)})
    _dump({"rows": rows, "wall_time": time.perf_counter() - t0, "versions": versions()},
          os.path.join(out, "suite.json"))
    _csv(os.path.join(out, "suite.csv"), ["entry", "status", "detail"],
         ([r["entry"], r["status"], r["detail"]] for r in rows))
    return EXIT_FLAGGED if any(r["status"] == "fail" for r in rows) else EXIT_OK, rows


# ---------------------------------------------------------------------------
# argument parsing


def _parser():
    p = argparse.ArgumentParser(prog="torcover", description="Cover times, interlacements and obstacles on the torus.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", help="flat key = value config file; flags override its keys")
    for key, spec in cfgmod.SCHEMA.items():
        r.add_argument(f"--{key}", dest=f"key_{key}", metavar="VALUE", help=spec.help)
    s = sub.add_parser("suite", help="run a manifest of configs and acceptance criteria")
    s.add_argument("manifest", nargs="?", help="manifest file (default: the full acceptance battery)")
    s.add_argument("--out", default="suite-out")
    s.add_argument("--threads", type=int)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            raw = cfgmod.load(args.config) if args.config else {}
            flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}
            cfg = cfgmod.resolve(raw, flags)
            code, result, _ = execute(cfg)
            if cfg.kind == "green":
                print(json.dumps(result, sort_keys=True, default=_jsonable))
            return code
        entries = read_manifest(args.manifest) if args.manifest else [("acceptance", k) for k in range(1, 10)]
        code, _ = suite(entries, args.out, args.threads)
        return code
    except ConfigInvalid as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (TorcoverError, PreconditionError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
