"""``percqip`` command line.

Commands read one INI-style run configuration (sections ``process``,
``radii``, ``field``, ``geometry``, ``corrector``, ``diffusion``, ``qip``,
``output``) and write artifacts atomically into ``[output] dir``.  Every JSON
artifact carries a ``meta`` block with the tool version, the resolved
configuration, seeds and the content hash of the input file.

Exit codes: 0 success, 2 configuration or validation error, 3 runtime
failure, 4 failed ``--check``.
"""
from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidParameterError, ParseError, PercqipError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4


def _floats(s):
    return [float(v) for v in str(s).replace(",", " ").split()]


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none", "auto") else float(s)


# (parser, default) per key; the defaults are the library defaults
SCHEMA = {
    "process": {
        "kind": (str, "poisson"), "benchmark": (str, "poisson"), "intensity": (float, 1.0),
        "p": (float, 0.5), "dim": (int, 2), "side": (float, 30.0), "lower": (float, 0.0),
        "periodic": (_bool, True), "seed": (int, 0), "stream": (int, 0), "points_file": (str, ""),
        "threads": (int, 0),
    },
    "radii": {"rho": (float, 1.0), "rho_prime": (float, 1.25)},
    "field": {
        "kind": (str, "constant_half_identity"), "lam": (_opt_float, None), "Lam": (_opt_float, None),
        "alpha1": (float, 0.5), "alpha2": (float, 1.0), "radius": (float, 1.0),
        "beta": (float, 0.5), "h": (float, 0.5), "scalar": (float, 0.5),
    },
    "geometry": {
        "delta": (float, 0.3125), "R_ladder": (_floats, [2.0, 4.0, 8.0]), "n_centers": (int, 8),
        "theta": (float, 0.9), "iso_R": (_opt_float, None), "method": (str, "normal_weighted"),
    },
    "corrector": {
        "boundary": (str, "periodic"), "R": (_opt_float, None), "tol": (float, 1e-8),
        "max_iter": (int, 0), "preconditioner": (str, "jacobi"),
        "normalization": (str, "per_cluster_volume"), "sublinearity_R": (_floats, []),
    },
    "diffusion": {
        "scheme": (str, "reflected_euler"), "dt": (float, 0.01), "T": (float, 10.0),
        "n_paths": (int, 1), "record_stride": (int, 1), "max_level": (int, 10),
    },
    "qip": {
        "epsilon_ladder": (_floats, [0.25, 0.125]), "T": (float, 1.0), "n_paths": (int, 200),
        "deltas": (_floats, [0.05, 0.1, 0.2]), "dt": (float, 0.01), "record_dt": (float, 0.25),
    },
    "output": {"dir": (str, "percqip_out"), "name": (str, "run"), "binary": (_bool, False)},
}


class ConfigError(Exception):
    pass


def load_run_config(path):
    """Parse and validate a run configuration; returns (resolved dict, raw bytes)."""
    raw = Path(path).read_bytes()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(raw.decode("utf-8"), source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
    out = {}
    for sec, keys in SCHEMA.items():
        out[sec] = {}
        for key, (conv, default) in keys.items():
            if cp.has_option(sec, key):
                try:
                    out[sec][key] = conv(cp[sec][key])
                except ValueError as exc:
                    raise ConfigError(f"{sec}.{key}: {exc}") from None
            else:
                out[sec][key] = default
    return out, raw


def content_hash(raw):
    """Git blob hash of the input file contents."""
    return hashlib.sha1(b"blob %d\0" % len(raw) + raw).hexdigest()


# --------------------------------------------------------------------------
# builders


def _validated(section, key, fn, *args):
    try:
        return fn(*args)
    except InvalidParameterError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def build_configuration(cfg):
    from . import config as C

    pr = cfg["process"]
    kind = pr["kind"]
    box = _validated("process", "side", C.Box.cube, pr["dim"], pr["side"], pr["lower"], pr["periodic"])
    rng = C.RngStream(pr["seed"], pr["stream"])
    if kind == "poisson":
        return _validated("process", "intensity", C.sample_poisson, pr["intensity"], box, rng)
    if kind == "perturbed_lattice":
        return _validated("process", "p", C.sample_perturbed_lattice, pr["p"], box, rng)
    if kind == "explicit":
        if not pr["points_file"]:
            raise ConfigError("process.points_file: required for kind = explicit")
        return C.load_config(pr["points_file"])
    raise ConfigError(f"process.kind: unknown kind {kind!r}")


def build_field(cfg):
    from . import field as F

    f = cfg["field"]
    kind = f["kind"]
    params = {}
    if kind == "two_phase_by_coverage":
        params = dict(alpha1=f["alpha1"], alpha2=f["alpha2"], radius=f["radius"])
    elif kind == "smooth_bump":
        params = dict(beta=f["beta"], h=f["h"])
    elif kind == "constant":
        params = dict(scalar=f["scalar"])
    elif kind not in F.KINDS:
        raise ConfigError(f"field.kind: unknown kind {kind!r}")
    # spectrum of the requested field, used when lam / Lam are left on auto
    lo, hi = _validated("field", "kind", lambda: F.FieldSpec(kind, 1e-300, 1e300, params).spectrum_bounds())
    lam = lo if f["lam"] is None else f["lam"]
    Lam = hi if f["Lam"] is None else f["Lam"]
    return _validated("field", "lam", F.FieldSpec, kind, lam, Lam, params)


def build_environment(cfg):
    """(decomposition, benchmark name or None)."""
    from . import benchmarks as B
    from .cluster import RadiusPair, build_clusters

    pr = cfg["process"]
    if pr["kind"] == "benchmark":
        name = pr["benchmark"]
        makers = {
            "poisson": lambda: B.poisson(L=pr["side"], intensity=pr["intensity"], rho=cfg["radii"]["rho"],
                                         rho_prime=cfg["radii"]["rho_prime"], delta=cfg["geometry"]["delta"],
                                         seed=pr["seed"], periodic=pr["periodic"], d=pr["dim"]).decomp,
            "one_hole": lambda: B.one_hole().decomp,
            "free_space": lambda: B.free_space(d=pr["dim"]).decomp,
            "disconnected": lambda: B.disconnected().decomp,
            "single_ball": lambda: B.single_ball(cfg["radii"]["rho_prime"], pr["side"], pr["dim"]),
        }
        if name not in makers:
            raise ConfigError(f"process.benchmark: unknown benchmark {name!r}")
        return makers[name](), name
    config = build_configuration(cfg)
    r = cfg["radii"]
    radii = _validated("radii", "rho_prime", RadiusPair, r["rho"], r["rho_prime"])
    return build_clusters(config, radii), None


# --------------------------------------------------------------------------
# artifacts


class Run:
    def __init__(self, cfg, raw, seed_override, check):
        self.cfg = cfg
        self.raw = raw
        self.check = check
        self.seed_override = seed_override
        self.outdir = Path(cfg["output"]["dir"])
        self.name = cfg["output"]["name"]
        self.written = []

    def meta(self, command):
        return dict(tool="percqip", version=__version__, command=command, config=self.cfg,
                    seed=self.cfg["process"]["seed"], stream=self.cfg["process"]["stream"],
                    seed_override=self.seed_override, input_hash=content_hash(self.raw),
                    created=_dt.datetime.now(_dt.timezone.utc).isoformat())

    def path(self, suffix):
        return self.outdir / f"{self.name}_{suffix}"

    def write(self, suffix, text):
        from .config import _atomic_write

        p = self.path(suffix)
        _atomic_write(p, text)
        self.written.append(str(p))
        return p

    def write_json(self, suffix, payload, command):
        payload = dict(payload, meta=self.meta(command))
        return self.write(suffix, json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


# --------------------------------------------------------------------------
# commands


def cmd_generate(run):
    from .config import save_config

    if run.cfg["process"]["kind"] == "benchmark":
        config = build_environment(run.cfg)[0].config
    else:
        config = build_configuration(run.cfg)
    binary = run.cfg["output"]["binary"]
    p = run.path("config.pcfgb" if binary else "config.pcfg")
    save_config(config, p, binary=binary)
    run.written.append(str(p))
    run.write_json("generate.json", dict(n_points=len(config), file=p.name), "generate")
    return True


def _centers(decomp, n):
    pts = decomp.cluster_points
    c = decomp.box.center
    order = np.argsort(np.linalg.norm(pts - c, axis=1), kind="stable")
    return pts[order[:max(1, n)]]


def cmd_geometry(run):
    from . import lattice as la

    cfg = run.cfg
    g = cfg["geometry"]
    decomp, _ = build_environment(cfg)
    graph = la.build_delta_graph(decomp, g["delta"])
    centers = _centers(decomp, g["n_centers"])
    vscan = la.volume_regularity_scan(decomp, graph, centers, g["R_ladder"])
    iso_R = g["iso_R"] or max(g["R_ladder"])
    from .config import RngStream

    iso = la.isoperimetric_scan(decomp, graph, iso_R, theta=g["theta"], center=centers[0],
                                rng=RngStream(cfg["process"]["seed"], 7).generator(), n_centers=1,
                                method=g["method"])
    rep = la.geometry_report(vscan, iso, g["theta"], decomp.dim)
    run.write_json("geometry.json", rep.to_dict(), "geometry")
    run.write("volume_scan.csv", la.scan_table_csv(vscan.R, vscan.min_ratio, vscan.witness))
    run.write("isoperimetric_scan.csv", la.scan_table_csv(
        np.full(len(iso.witnesses), iso_R), [w["ratio"] for w in iso.witnesses], np.arange(len(iso.witnesses))))
    return bool(rep.c_v_hat > 0 and all(s["ratio"] >= 0 for s in rep.samples))


def _solve(run, decomp):
    from . import corrector as cor
    from . import lattice as la

    cfg = run.cfg
    c = cfg["corrector"]
    field_spec = build_field(cfg)
    graph = la.build_delta_graph(decomp, cfg["geometry"]["delta"])
    if c["boundary"] == "periodic":
        form = cor.assemble(decomp, graph, field_spec, boundary="periodic")
    else:
        R = c["R"] or 0.45 * float(np.min(decomp.box.lengths))
        form = cor.assemble(decomp, graph, field_spec, R=R, center=_centers(decomp, 1)[0], boundary=c["boundary"])
    sols = cor.solve_all(form, tol=c["tol"], max_iter=c["max_iter"] or None, preconditioner=c["preconditioner"])
    return field_spec, graph, form, sols


def cmd_corrector(run):
    from . import corrector as cor
    from .qip import positive_definiteness_audit

    decomp, _ = build_environment(run.cfg)
    field_spec, graph, form, sols = _solve(run, decomp)
    em = cor.effective_matrix(sols, normalization=run.cfg["corrector"]["normalization"])
    audit = positive_definiteness_audit(em.D)
    payload = dict(effective_matrix=em.to_dict(), audit=audit.to_dict(),
                   solver=[dict(k=s.k, iterations=s.iterations, residual_norm=s.residual_norm) for s in sols])
    for s in sols:
        run.write(f"corrector_k{s.k + 1}.csv", s.to_csv())
    run.write("eigenvalues.csv", "index,eigenvalue\n" + "".join(
        f"{i},{float(v)!r}\n" for i, v in enumerate(em.eigenvalues)))
    lad = run.cfg["corrector"]["sublinearity_R"]
    if lad:
        prof = cor.sublinearity_profile(decomp, graph, field_spec, lad, center=_centers(decomp, 1)[0],
                                        tol=run.cfg["corrector"]["tol"])
        payload["sublinearity"] = dict(R=prof.R, sup_chi=prof.sup_chi, exponent=prof.exponent,
                                       exponent_upper95=prof.exponent_upper95)
        run.write("sublinearity.csv", "R,sup_chi\n" + "".join(f"{r!r},{v!r}\n" for r, v in prof.rows()))
    run.write_json("corrector.json", payload, "corrector")
    return audit.passed and all(s.residual_norm <= run.cfg["corrector"]["tol"] for s in sols)


def cmd_simulate(run):
    from . import diffusion as dif
    from .cluster import contains
    from .config import RngStream

    cfg = run.cfg
    d = cfg["diffusion"]
    decomp, _ = build_environment(cfg)
    field_spec = build_field(cfg)
    start = _centers(decomp, 1)[0]
    rng = RngStream(cfg["process"]["seed"], cfg["process"]["stream"] + 1)
    params = dif.SimParams(d["dt"], d["T"], d["scheme"], rng, start, d["record_stride"], d["max_level"])
    ok = True
    summary = []
    if d["scheme"] == "reflected_euler":
        for i in range(d["n_paths"]):
            params.rng = rng.child(rng.stream_id + 1000 * (i + 1))
            path = dif.simulate_reflected_euler(decomp, params, field_spec)
            run.write(f"path_{i}.csv", path.to_csv())
            run.write(f"reflections_{i}.csv", path.reflections_csv())
            ok &= bool(np.all(contains(decomp, path.positions)))
            summary.append(dict(path=i, **path.diagnostics, n_reflections=len(path.reflection_log)))
    else:
        _, graph, form, sols = _solve_neumann(run, decomp, field_spec)
        for i in range(d["n_paths"]):
            params.rng = rng.child(rng.stream_id + 1000 * (i + 1))
            path = dif.simulate_lattice_walk(form, params)
            run.write(f"path_{i}.csv", path.to_csv())
            rep = dif.qv_check(path, sols)
            ok &= rep.martingale_ok
            summary.append(dict(path=i, **path.diagnostics, qv_discrepancy=rep.discrepancy,
                                martingale_z=rep.z_scores))
    run.write_json("simulate.json", dict(paths=summary), "simulate")
    return ok


def _solve_neumann(run, decomp, field_spec):
    from . import corrector as cor
    from . import lattice as la

    graph = la.build_delta_graph(decomp, run.cfg["geometry"]["delta"])
    if graph.periodic:
        form = cor.assemble(decomp, graph, field_spec, boundary="periodic")
    else:
        R = run.cfg["corrector"]["R"] or 0.45 * float(np.min(decomp.box.lengths))
        form = cor.assemble(decomp, graph, field_spec, R=R, center=_centers(decomp, 1)[0], boundary="neumann")
    sols = cor.solve_all(form, tol=run.cfg["corrector"]["tol"], preconditioner=run.cfg["corrector"]["preconditioner"])
    return field_spec, graph, form, sols


def cmd_qip(run):
    from . import corrector as cor
    from .config import RngStream
    from .qip import ScalingExperiment, positive_definiteness_audit

    cfg = run.cfg
    q = cfg["qip"]
    decomp, _ = build_environment(cfg)
    field_spec, graph, form, sols = _solve_neumann(run, decomp, field_spec=build_field(cfg))
    em = cor.effective_matrix(sols)
    cf = cor.CorrectorField(sols)
    exp = ScalingExperiment(q["epsilon_ladder"], q["T"], q["n_paths"], (decomp, field_spec),
                            _centers(decomp, 1)[0], dt=q["dt"], record_dt=q["record_dt"],
                            rng=RngStream(cfg["process"]["seed"], cfg["process"]["stream"] + 2),
                            form=None if field_spec.scalar_constant is not None else form,
                            D_ref=em.D, chi_field=cf.chi, deltas=tuple(q["deltas"]))
    results = exp.run()
    audit = positive_definiteness_audit(em.D)
    run.write_json("qip.json", dict(results=results, D=em.D, audit=audit.to_dict(),
                                    protocol="quenched"), "qip")
    van = exp.vanishing
    run.write("exceedance.csv", "epsilon,delta,prob,ci_lo,ci_hi\n" + "".join(
        ",".join(repr(float(v)) for v in row) + "\n" for row in van.rows()))
    run.write("eigenvalues.csv", "index,eigenvalue\n" + "".join(
        f"{i},{float(v)!r}\n" for i, v in enumerate(em.eigenvalues)))
    smallest = results[-1]
    return audit.passed and smallest["gaussian_pass"]


def cmd_report(run):
    rows = []
    for p in sorted(run.outdir.glob(f"{run.name}_*.json")):
        if p.name.endswith("_report.json"):
            continue
        data = json.loads(p.read_text())
        rows.append(dict(file=p.name, command=data.get("meta", {}).get("command"),
                         input_hash=data.get("meta", {}).get("input_hash")))
    run.write_json("report.json", dict(artifacts=rows), "report")
    for r in rows:
        print(f"{r['file']}\t{r['command']}\t{r['input_hash']}")
    return True


COMMANDS = {"generate": cmd_generate, "geometry": cmd_geometry, "corrector": cmd_corrector,
            "simulate": cmd_simulate, "qip": cmd_qip, "report": cmd_report}


def build_parser():
    ap = argparse.ArgumentParser(prog="percqip", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="run configuration (INI)")
    ap.add_argument("--seed", type=int, default=None, help="override [process] seed (unsigned 64-bit)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    ap.add_argument("--check", action="store_true", help="exit with code 4 when built-in checks fail")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg, raw = load_run_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["process"]["seed"] = args.seed
        threads = args.threads if args.threads is not None else cfg["process"]["threads"]
        if threads:
            import numba

            numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
        build_field(cfg)  # reject a bad [field] section whatever the command
        run = Run(cfg, raw, args.seed, args.check)
        ok = COMMANDS[args.command](run)
    except (ConfigError, ParseError, InvalidParameterError, FileNotFoundError) as exc:
        print(f"percqip: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PercqipError, ArithmeticError, MemoryError, OSError) as exc:
        print(f"percqip: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in run.written:
        print(p)
    if args.check and not ok:
        print("percqip: check failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
