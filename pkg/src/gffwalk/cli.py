"""Command-line driver: ``gffwalk <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime or schema error,
3 at least one acceptance verdict failed.
"""
import argparse
import hashlib
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERDICT = 0, 1, 2, 3
OUTPUT_ENV = "GFFWALK_OUTPUT_DIR"
# keys that never change results and so stay out of the config hash
UNHASHED = ("out", "workers", "config")

COMMON = {"d": 3, "h": 0.0, "mode": "plus", "seed": 0, "workers": 1}
DEFAULTS = {
    "spectral": {"grid": 400, "trunc": 10.0, "tol": 1e-10},
    "hstar": {"grid": 400, "trunc": 10.0, "tol": 1e-10},
    "qh": {"grid": 400, "trunc": 10.0, "tol": 1e-8, "max_iter": 10_000},
    "eta": {"grid": 400, "trunc": 10.0, "tol": 1e-8, "max_iter": 10_000, "mode": "full"},
    "simulate": {"steps": 100_000, "replicas": 100, "G": 30, "W": 500, "k_max": 0,
                 "max_rejections": 10_000},
    "renewal-stats": {"input": None},
    "speed": {"input": None},
    "clt": {"input": None, "s_hat": None, "s_hat_input": None, "meta": 50},
    "delta-exits": {"G": 30, "k": 12, "delta": 0.2, "trials": 50, "horizon": 300,
                    "replicas": 20},
    "skeleton": {"G": 30, "D": 20, "explored_depth": 24, "replicas": 20},
    "drift": {"input": None},
    "obstruction": {"z_max": 10.0, "z_step": 1.0},
    "report": {"input": None, "oracles": True},
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p, keys):
    if "d" in keys:
        p.add_argument("--d", type=int)
    if "h" in keys:
        p.add_argument("--h", type=float)
    if "m" in keys:
        p.add_argument("--mode", choices=("plus", "full"))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./gffwalk-out)")
    p.add_argument("--config", help="JSON file with options; explicit flags win")


def build_parser():
    p = Parser(prog="gffwalk", description="GFF level-set percolation on regular trees")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    s = sub.add_parser("spectral", help="dominant eigenpair of L_h")
    _add_common(s, "dh")
    s.add_argument("--grid", type=int)
    s.add_argument("--trunc", type=float)
    s.add_argument("--tol", type=float)

    s = sub.add_parser("hstar", help="percolation threshold h_star(d)")
    _add_common(s, "d")
    s.add_argument("--grid", type=int)
    s.add_argument("--trunc", type=float)
    s.add_argument("--tol", type=float)

    for name in ("qh", "eta"):
        s = sub.add_parser(name, help="extinction function q_h" if name == "qh"
                           else "survival probability eta(h)")
        _add_common(s, "dhm" if name == "eta" else "dh")
        s.add_argument("--grid", type=int)
        s.add_argument("--trunc", type=float)
        s.add_argument("--tol", type=float)
        s.add_argument("--max-iter", dest="max_iter", type=int)

    s = sub.add_parser("simulate", help="clusters, walks and renewals per replica")
    _add_common(s, "dhm")
    s.add_argument("--steps", type=int)
    s.add_argument("--replicas", type=int)
    s.add_argument("--G", type=int, help="survival horizon")
    s.add_argument("--W", type=int, help="renewal confirmation margin")
    s.add_argument("--k-max", dest="k_max", type=int, help="generation table depth (0: none)")
    s.add_argument("--max-rejections", dest="max_rejections", type=int)

    for name, hlp in (("renewal-stats", "renewal-ratio speed, tails and drift"),
                      ("speed", "direct and renewal-ratio speed"),
                      ("clt", "CLT diagnostics")):
        s = sub.add_parser(name, help=hlp)
        _add_common(s, "")
        s.add_argument("--input", help="simulate output directory")
        if name == "clt":
            s.add_argument("--s-hat", dest="s_hat", type=float)
            s.add_argument("--s-hat-input", dest="s_hat_input",
                           help="independent simulate directory to estimate s from")
            s.add_argument("--meta", type=int, help="number of meta-replicas for KS")

    s = sub.add_parser("diagnostics", help="delta-exits, skeleton, drift, obstruction")
    dsub = s.add_subparsers(dest="diagnostic", parser_class=Parser)
    x = dsub.add_parser("delta-exits")
    _add_common(x, "dh")
    for k, t in (("G", int), ("k", int), ("delta", float), ("trials", int), ("horizon", int),
                 ("replicas", int)):
        x.add_argument(f"--{k}", type=t)
    x = dsub.add_parser("skeleton")
    _add_common(x, "dhm")
    for k, t in (("G", int), ("D", int), ("replicas", int)):
        x.add_argument(f"--{k}", type=t)
    x.add_argument("--explored-depth", dest="explored_depth", type=int)
    x = dsub.add_parser("drift")
    _add_common(x, "")
    x.add_argument("--input")
    x = dsub.add_parser("obstruction")
    _add_common(x, "dh")
    x.add_argument("--z-max", dest="z_max", type=float)
    x.add_argument("--z-step", dest="z_step", type=float)

    s = sub.add_parser("report", help="estimates, cross-checks and acceptance verdicts")
    _add_common(s, "")
    s.add_argument("--input", help="simulate output directory")
    s.add_argument("--no-oracles", dest="oracles", action="store_false", default=None,
                   help="skip the self-contained spectral/cluster checks")
    return p


# -- config and provenance ---------------------------------------------------

def resolve_config(command, args):
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "diagnostic", "config"):
            cfg[k] = v
    cfg["command"] = command
    if cfg.get("out") is None:
        cfg["out"] = os.environ.get(OUTPUT_ENV, "gffwalk-out")
    validate(cfg)
    return cfg


def validate(cfg):
    d = cfg.get("d")
    if not isinstance(d, int) or isinstance(d, bool) or d < 3:
        raise UsageError(f"d must be an integer >= 3 (got {d!r})")
    if cfg.get("mode") not in ("plus", "full"):
        raise UsageError("mode must be 'plus' or 'full'")
    if not math.isfinite(float(cfg.get("h", 0.0))):
        raise UsageError("h must be finite")
    for k in ("steps", "replicas", "G", "W", "k_max", "grid", "trials", "horizon", "D",
              "max_iter", "meta", "explored_depth", "k"):
        if k in cfg and cfg[k] is not None and (not isinstance(cfg[k], int) or cfg[k] < 0):
            raise UsageError(f"{k} must be a non-negative integer")
    for k in ("tol", "trunc"):
        if k in cfg and cfg[k] is not None and not cfg[k] > 0:
            raise UsageError(f"{k} must be > 0")
    if cfg.get("workers", 1) < 1:
        raise UsageError("workers must be >= 1")


def config_hash(cfg):
    body = {k: v for k, v in cfg.items() if k not in UNHASHED}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def provenance(cfg):
    return {"config_hash": config_hash(cfg), "seed": cfg.get("seed"), "version": __version__,
            "command": cfg["command"]}


def header_lines(cfg):
    p = provenance(cfg)
    return [f"gffwalk {p['version']} {p['command']}", f"config_hash={p['config_hash']}",
            f"seed={p['seed']}"]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_json(cfg, name, payload):
    os.makedirs(cfg["out"], exist_ok=True)
    body = {"provenance": provenance(cfg),
            "config": {k: v for k, v in cfg.items() if k not in UNHASHED}}
    body.update(payload)
    path = os.path.join(cfg["out"], name)
    with open(path, "w") as fh:
        json.dump(_jsonable(body), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def write_table(cfg, name, columns, rows):
    import csv
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], name)
    with open(path, "w", newline="") as fh:
        for line in header_lines(cfg):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def _say(msg):
    print(msg)


# -- commands ----------------------------------------------------------------

def cmd_spectral(cfg):
    from . import spectral
    grid = spectral.make_grid(cfg["d"], cfg["h"], cfg["grid"], cfg["trunc"])
    res = spectral.top_eigen(cfg["h"], grid, tol=cfg["tol"])
    write_json(cfg, "spectral.json", {"h": res.h, "lambda": res.lambda_h, "residual": res.residual,
                                      "iterations": res.iterations, "grid": res.meta()})
    write_table(cfg, "spectral_chi.csv", ("a", "weight", "chi"),
                zip(grid.nodes, grid.weights, res.chi_h))
    _say(f"lambda_h = {res.lambda_h:.10f} (residual {res.residual:.2e})")


def cmd_hstar(cfg):
    from . import spectral
    hs = spectral.solve_hstar(cfg["d"], cfg["tol"], cfg["grid"], cfg["trunc"])
    lam = spectral.lambda_h(cfg["d"], hs, cfg["grid"], cfg["trunc"])
    write_json(cfg, "hstar.json", {"hstar": hs, "lambda_at_hstar": lam})
    _say(f"h_star({cfg['d']}) = {hs:.10f}")


def _qh(cfg):
    from . import spectral
    grid = spectral.make_grid(cfg["d"], cfg["h"], cfg["grid"], cfg["trunc"])
    return spectral.iterate_Rh(cfg["d"], cfg["h"], cfg["tol"], cfg["max_iter"], grid)


def cmd_qh(cfg):
    q = _qh(cfg)
    write_json(cfg, "qh.json", {"iterations": q.iterations, "residual": q.residual,
                                "converged": q.converged,
                                "q_at": {str(o): float(q.at(cfg["h"] + o)[0]) for o in (0, 1, 2)}})
    write_table(cfg, "qh.csv", ("a", "q"), zip(q.nodes, q.values))
    _say(f"q_h converged in {q.iterations} iterations; q_h(h) = {float(q.at(cfg['h'])[0]):.6f}")


def cmd_eta(cfg):
    from . import spectral
    q = _qh(cfg)
    e = spectral.eta(cfg["d"], cfg["h"], q, cfg["mode"])
    write_json(cfg, "eta.json", {"eta": e, "mode": cfg["mode"], "iterations": q.iterations})
    _say(f"eta = {e:.8f} ({cfg['mode']} mode)")


def cmd_simulate(cfg):
    from .cluster import GENERATION_COLUMNS, GenerationRecord, write_generations_csv
    from .experiments import simulate, write_summaries_csv
    from .walk import write_renewals_csv
    if cfg["replicas"] == 0:
        warnings.warn("0 replicas requested: writing empty outputs", RuntimeWarning)
    res = simulate(cfg["d"], cfg["h"], cfg["mode"], cfg["steps"], cfg["replicas"], cfg["seed"],
                   cfg["G"], cfg["W"], cfg["k_max"], cfg["workers"], cfg["max_rejections"],
                   keep_chain=False)
    os.makedirs(cfg["out"], exist_ok=True)
    hl = header_lines(cfg)
    out = cfg["out"]
    write_summaries_csv(os.path.join(out, "summaries.csv"), res, hl)
    write_renewals_csv(os.path.join(out, "renewals.csv"),
                       [(r.replica, r.renewals) for r in res if r.ok], hl)
    if cfg["k_max"] > 0:
        def recs(g):
            z = np.flatnonzero(g == 0)
            ext = int(z[0]) if z.size else None
            return [GenerationRecord(k, int(s), ext) for k, s in enumerate(g)]
        write_generations_csv(os.path.join(out, "generations.csv"),
                              [(r.replica, recs(r.generations)) for r in res if r.ok], hl)
    failures = [{"replica": r.replica, "error": r.error} for r in res if not r.ok]
    write_json(cfg, "simulate.json", {"replicas_ok": sum(r.ok for r in res), "failures": failures,
                                      "mode": cfg["mode"], "stuck": sum(r.stuck for r in res)})
    _say(f"{sum(r.ok for r in res)}/{cfg['replicas']} replicas written to {out}")


def _input_dir(cfg):
    if not cfg.get("input"):
        raise UsageError("--input is required")
    return cfg["input"]


def _load(cfg):
    from .records_io import load_simulation
    return load_simulation(_input_dir(cfg))


def _input_meta(directory):
    path = os.path.join(directory, "simulate.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing input file: {path}")
    with open(path) as fh:
        return json.load(fh)["config"]


def cmd_renewal_stats(cfg):
    from . import estimators as est
    sims = _load(cfg)
    payload = {"speed_renewal": est.speed_renewal(sims.renewals).to_dict()}
    dur = sims.durations()
    payload["tail"] = est.tail_fit(dur).to_dict() if len(dur) >= 1000 else None
    try:
        payload["drift"] = est.drift_check(sims.chains).to_dict()
    except est.InsufficientData as exc:
        payload["drift"] = {"error": str(exc)}
    write_json(cfg, "renewal_stats.json", payload)
    _say(f"renewal-ratio speed {payload['speed_renewal']['s_hat']:.5f}")


def cmd_speed(cfg):
    from . import estimators as est
    sims = _load(cfg)
    a = est.speed_from_endpoints(sims.final_heights, sims.n_steps)
    b = est.speed_renewal(sims.renewals)
    write_json(cfg, "speed.json", {"direct": a.to_dict(), "renewal_ratio": b.to_dict(),
                                   "agree": est.speeds_agree(a, b)})
    _say(f"direct {a.s_hat:.5f} +- {a.half_width:.5f}; renewal {b.s_hat:.5f} +- {b.half_width:.5f}")


def cmd_clt(cfg):
    from . import estimators as est
    from .checks import clt_sanity
    from .records_io import load_simulation
    sims = _load(cfg)
    if cfg.get("s_hat") is not None:
        s_hat = float(cfg["s_hat"])
    elif cfg.get("s_hat_input"):
        ind = load_simulation(cfg["s_hat_input"])
        s_hat = est.speed_from_endpoints(ind.final_heights, ind.n_steps, min_replicas=2,
                                         min_steps=1).s_hat
    else:
        raise UsageError("give --s-hat or --s-hat-input (an independent batch)")
    v = clt_sanity(sims, s_hat, meta=min(cfg["meta"], max(1, len(sims.replicas) // 3)))
    write_json(cfg, "clt.json", v.detail)
    _say(f"sigma_hat {v.detail['sigma_hat']:.4f}; variance ratio {v.detail['variance_ratio']:.3f}")


def cmd_delta_exits(cfg):
    from . import rng
    from .cluster import min_delta_exits, survival_sample
    rows = []
    for r in range(cfg["replicas"]):
        smp = survival_sample(cfg["d"], cfg["h"], "plus", cfg["G"], rng.replica_seed(cfg["seed"], r),
                              check_threshold=False)
        for k in range(1, cfg["k"] + 1):
            e = min_delta_exits(smp.cluster, k, cfg["delta"], cfg["trials"], cfg["horizon"],
                                seed=cfg["seed"])
            rows.append((r, k, "" if e is None else e))
    write_table(cfg, "delta_exits.csv", ("replica", "k", "min_exits"), rows)
    by_k = {}
    for r, k, e in rows:
        if e != "":
            by_k.setdefault(k, []).append(e)
    write_json(cfg, "delta_exits.json",
               {"mean_min_exits": {str(k): float(np.mean(v)) for k, v in by_k.items()}})
    _say(f"delta-exit curve over k=1..{cfg['k']} for {cfg['replicas']} clusters")


def cmd_skeleton(cfg):
    from . import rng
    from .cluster import skeleton_label, survival_sample
    counts, sizes = [], []
    for r in range(cfg["replicas"]):
        smp = survival_sample(cfg["d"], cfg["h"], cfg["mode"], cfg["G"],
                              rng.replica_seed(cfg["seed"], r), check_threshold=False)
        lab = skeleton_label(smp.cluster, cfg["D"], max(cfg["D"], cfg["explored_depth"]))
        counts.append(lab.counts())
        sizes.extend(lab.bush_sizes().tolist())
    hist = np.bincount(np.asarray(sizes, dtype=np.int64)) if sizes else np.zeros(1, dtype=np.int64)
    write_table(cfg, "bush_sizes.csv", ("size", "count"),
                [(s, int(c)) for s, c in enumerate(hist) if c])
    tot = {k: int(sum(c[k] for c in counts)) for k in ("skeleton", "bush", "unknown")}
    write_json(cfg, "skeleton.json", {"tag_counts": tot, "n_bushes": len(sizes)})
    _say(f"tags {tot}; {len(sizes)} bushes")


def cmd_drift(cfg):
    from . import estimators as est
    sims = _load(cfg)
    rep = est.drift_check(sims.chains)
    write_json(cfg, "drift.json", rep.to_dict())
    _say(f"phi increment (top decile) {rep.phi_increment:.4f}; V contraction "
         f"{'pass' if rep.contraction_pass else 'fail'}")


def cmd_obstruction(cfg):
    from . import spectral
    zs = np.arange(cfg["h"], cfg["h"] + cfg["z_max"] + 1e-9, cfg["z_step"])
    I = [spectral.obstruction_integral(cfg["d"], cfg["h"], float(z)) for z in zs]
    write_table(cfg, "obstruction.csv", ("z", "I_z"), zip(zs, I))
    write_json(cfg, "obstruction.json", {"z": zs, "I_z": I})
    _say(f"I_h = {I[0]:.6g}, I_(h+{cfg['z_max']:g}) = {I[-1]:.6g}")


def cmd_report(cfg):
    from . import checks
    from . import estimators as est
    verdicts = {i: checks.Verdict(i, None, {"reason": "needs a dedicated run"})
                for i in checks.CRITERIA}
    estimates = {}
    if cfg.get("input"):
        meta = _input_meta(cfg["input"])
        sims = _load(cfg)
        d, h, mode = meta["d"], meta["h"], meta["mode"]
        estimates.update({"d": d, "h": h, "mode": mode, "replicas": len(sims.replicas)})
        a = est.speed_from_endpoints(sims.final_heights, sims.n_steps, min_replicas=2, min_steps=1)
        estimates["speed_direct"] = a.to_dict()
        try:
            b = est.speed_renewal(sims.renewals)
            estimates["speed_renewal"] = b.to_dict()
            verdicts[7] = checks.estimator_agreement({(d, h): sims})
            verdicts[7].detail["note"] = "single (d, h) configuration from the input"
        except est.InsufficientData as exc:
            estimates["speed_renewal"] = {"error": str(exc)}
        if d == 3 and h <= -10 and mode == "plus":
            verdicts[1] = checks.free_speed(sims)
        dur = sims.durations()
        if len(dur) >= 1000:
            verdicts[9] = checks.tail_stability(dur)
        try:
            verdicts[10] = checks.drift(sims.chains)
        except est.InsufficientData as exc:
            verdicts[10].detail = {"reason": str(exc)}
        if len(sims.replicas) >= 40:
            half = len(sims.replicas) // 2
            # s from the first half, fluctuations from the second
            s_hat = float(np.mean(sims.final_heights[:half] / sims.n_steps[:half]))
            second = type(sims)(sims.replicas[half:], sims.n_steps[half:],
                                sims.checkpoint_heights[half:], sims.renewals[half:],
                                sims.chains[half:], [])
            verdicts[8] = checks.clt_sanity(second, s_hat, meta=max(1, (len(sims.replicas) - half) // 20))
    if cfg.get("oracles", True):
        verdicts[2] = checks.spectral_range()
        verdicts[6] = checks.renewal_correctness(n_traj=200)
        verdicts[11] = checks.monotone_coupling()
        verdicts[12] = checks.appendix()
        verdicts[13] = reproducibility_check()
    rows = [verdicts[i].to_dict() for i in sorted(verdicts)]
    write_json(cfg, "report.json", {"estimates": estimates, "verdicts": rows})
    lines = [f"gffwalk {__version__} report  config_hash={config_hash(cfg)}"]
    if estimates:
        lines.append(f"input: d={estimates['d']} h={estimates['h']} mode={estimates['mode']} "
                     f"replicas={estimates['replicas']}")
        lines.append(f"direct speed: {estimates['speed_direct']['s_hat']:.5f}")
    lines += [verdicts[i].line() for i in sorted(verdicts)]
    text = "\n".join(lines) + "\n"
    with open(os.path.join(cfg["out"], "report.txt"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    if any(v.passed is False for v in verdicts.values()):
        return EXIT_VERDICT
    return EXIT_OK


def reproducibility_check(tmp=None):
    """Run a small simulate twice serially and once on two workers; compare bytes."""
    import filecmp
    import tempfile
    from .checks import Verdict
    with tempfile.TemporaryDirectory() as root:
        dirs = []
        for j, workers in enumerate((1, 1, 2)):
            out = os.path.join(root, f"run{j}")
            main(["simulate", "--d", "3", "--h", "0", "--steps", "2000", "--replicas", "6",
                  "--seed", "13", "--W", "50", "--k-max", "6", "--workers", str(workers),
                  "--out", out], quiet=True)
            dirs.append(out)
        names = sorted(os.listdir(dirs[0]))
        same = all(filecmp.cmp(os.path.join(dirs[0], n), os.path.join(o, n), shallow=False)
                   for o in dirs[1:] for n in names)
    return Verdict(13, same, {"files": names, "runs": 3})


COMMANDS = {"spectral": cmd_spectral, "hstar": cmd_hstar, "qh": cmd_qh, "eta": cmd_eta,
            "simulate": cmd_simulate, "renewal-stats": cmd_renewal_stats, "speed": cmd_speed,
            "clt": cmd_clt, "delta-exits": cmd_delta_exits, "skeleton": cmd_skeleton,
            "drift": cmd_drift, "obstruction": cmd_obstruction, "report": cmd_report}


def main(argv=None, quiet=False):
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    if command == "diagnostics":
        command = args.diagnostic
    if command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    global _say
    say = _say
    if quiet:
        _say = lambda msg: None
    try:
        cfg = resolve_config(command, args)
        status = COMMANDS[command](cfg)
        return EXIT_OK if status is None else status
    except UsageError as exc:
        print(f"gffwalk: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"gffwalk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        _say = say


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
