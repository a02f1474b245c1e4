"""Command-line entry point: configs in, machine-readable CSV reports out.

Subcommands: solve-elliptic, evolve, verify-reflection,
verify-counterexample, check-contraction, probe-kernel, exponents.
Problem configs are flat key-value text with section headers (one
assignment per line); reports are CSV with a leading comment line
carrying the config hash and seed, so identical config + seed yields a
byte-identical report body.  Exit codes: 0 success, 1 usage or config
error, 2 a verified property failed.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import math
import sys
from fractions import Fraction

import numpy as np

from . import assembly as asm
from . import coeff as cf
from . import elliptic as ell
from . import parabolic as par
from . import reflect as rf
from .mesh import Mesh, abs_chart, build_interval_mesh, build_polygon_mesh, flat_chart, slope_chart

TOOL_VERSION = "robinlab 0.1.0"


class ConfigError(Exception):
    """Malformed or contradictory problem configuration."""


class VerificationFailure(Exception):
    """A checked property of the solved problem failed."""


# -- problem configuration ------------------------------------------------------

_SCHEMA = {
    "domain": ["kind", "a", "b", "n_cells", "vertices", "target_h"],
    "coefficients": [
        "family",
        "a",
        "a_matrix",
        "b",
        "c",
        "d",
        "beta",
        "b_lipschitz",
        "contrast",
        "tiles",
        "table",
    ],
    "problem": ["boundary_model", "omega_policy", "omega", "eta"],
    "rhs": ["f0", "fj", "g"],
    "evolution": ["scheme", "dt", "t_end", "lumped", "u0"],
}


class ProblemConfig:
    """Flat sectioned key-value configuration with a canonical serialization."""

    def __init__(self, raw):
        for section, keys in raw.items():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key in keys:
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
        self.raw = raw

    @classmethod
    def from_text(cls, text):
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        raw = {s: dict(parser.items(s)) for s in parser.sections()}
        return cls(raw)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_text(self):
        out = []
        for section in _SCHEMA:
            if section not in self.raw:
                continue
            out.append(f"[{section}]")
            for key in _SCHEMA[section]:
                if key in self.raw[section]:
                    out.append(f"{key} = {self.raw[section][key]}")
            out.append("")
        return "\n".join(out)

    def hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    # typed access -------------------------------------------------------

    def get(self, section, key, default=None):
        return self.raw.get(section, {}).get(key, default)

    def require(self, section, key):
        val = self.get(section, key)
        if val is None:
            raise ConfigError(f"missing required key {key!r} in section [{section}]")
        return val

    def get_float(self, section, key, default=None):
        val = self.get(section, key)
        if val is None:
            return default
        try:
            return float(val)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {val!r} is not a number") from exc

    def get_int(self, section, key, default=None):
        val = self.get(section, key)
        if val is None:
            return default
        try:
            return int(val)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {val!r} is not an integer") from exc

    def get_bool(self, section, key, default=False):
        val = self.get(section, key)
        if val is None:
            return default
        if val.lower() in ("true", "yes", "1"):
            return True
        if val.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"[{section}] {key} = {val!r} is not a boolean")

    def validate_basic(self):
        """Light validation used by --dry-run: touch the load-bearing keys."""
        kind = self.require("domain", "kind")
        if kind == "interval":
            a, b = self.get_float("domain", "a"), self.get_float("domain", "b")
            if a is None or b is None or not a < b:
                raise ConfigError("interval domain needs a < b")
            if self.get_int("domain", "n_cells", 16) < 1:
                raise ConfigError("n_cells must be >= 1")
        elif kind == "polygon":
            _parse_vertices(self.require("domain", "vertices"))
            if self.get_float("domain", "target_h", 0.25) <= 0:
                raise ConfigError("target_h must be positive")
        else:
            raise ConfigError(f"unknown domain kind {kind!r}")
        family = self.get("coefficients", "family", "constant")
        if family not in cf.FAMILY_NAMES:
            raise ConfigError(f"unknown coefficient family {family!r}")
        model = self.get("problem", "boundary_model", "robin")
        if model not in ("robin", "wentzell"):
            raise ConfigError(f"unknown boundary model {model!r}")
        policy = self.get("problem", "omega_policy", "fixed")
        if policy not in ("fixed", "auto"):
            raise ConfigError(f"unknown omega policy {policy!r}")


def _parse_vertices(text):
    pts = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigError(f"bad polygon vertex {chunk!r}")
        pts.append((float(parts[0]), float(parts[1])))
    if len(pts) < 3:
        raise ConfigError("polygon needs at least 3 vertices")
    return pts


def _parse_floats(text):
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def build_mesh(cfg, level=0):
    kind = cfg.require("domain", "kind")
    if kind == "interval":
        a = cfg.get_float("domain", "a", 0.0)
        b = cfg.get_float("domain", "b", 1.0)
        n = cfg.get_int("domain", "n_cells", 16) * 2**level
        return build_interval_mesh(a, b, n)
    verts = _parse_vertices(cfg.require("domain", "vertices"))
    h = cfg.get_float("domain", "target_h", 0.25) / 2**level
    return build_polygon_mesh(verts, h)


def build_field(cfg, mesh):
    family = cfg.get("coefficients", "family", "constant")
    beta = cfg.get_float("coefficients", "beta", 0.0)
    if family == "constant":
        a_matrix = cfg.get("coefficients", "a_matrix")
        if a_matrix is not None:
            a = np.array(_parse_floats(a_matrix)).reshape(mesh.dim, mesh.dim)
        else:
            a = cfg.get_float("coefficients", "a", 1.0)
        b = cfg.get("coefficients", "b")
        c = cfg.get("coefficients", "c")
        bvec = np.array(_parse_floats(b)) if b else 0.0
        cvec = np.array(_parse_floats(c)) if c else 0.0
        return cf.constant_field(
            mesh.dim,
            a=a,
            b=bvec,
            c=cvec,
            d=cfg.get_float("coefficients", "d", 0.0),
            beta=beta,
            b_lipschitz=cfg.get_float("coefficients", "b_lipschitz"),
        )
    if family == "checkerboard":
        return cf.checkerboard_coefficients(
            cfg.get_float("coefficients", "contrast", 100.0),
            cfg.get_int("coefficients", "tiles", 4),
            dim=mesh.dim,
        )
    if family == "sgn_drift":
        if mesh.dim != 1:
            raise ConfigError("sgn_drift is a 1D coefficient family")
        return cf.sgn_drift_field(beta=beta)
    if family == "custom_table":
        path = cfg.require("coefficients", "table")
        try:
            values = np.loadtxt(path, ndmin=1)
        except OSError as exc:
            raise ConfigError(f"cannot read coefficient table {path}: {exc}") from exc
        return cf.table_field(mesh, values, beta=beta)
    raise ConfigError(f"unknown coefficient family {family!r}")


def _scalar_family(spec, dim):
    """Named scalar data families for f0, g, and initial states."""
    if spec is None or spec == "zero":
        return None
    if spec == "one":
        return lambda x: 1.0
    if spec.startswith("constant:"):
        v = float(spec.split(":", 1)[1])
        return lambda x: v
    if spec == "cos":
        if dim == 1:
            return lambda x: math.cos(math.pi * x[0])
        return lambda x: math.cos(math.pi * x[0]) * math.cos(math.pi * x[1])
    if spec == "bump" or spec.startswith("bump:"):
        if spec == "bump":
            center = np.full(dim, 0.4)
            width = 0.05
        else:
            vals = _parse_floats(spec.split(":", 1)[1])
            center, width = np.array(vals[:dim]), vals[dim]
        return lambda x: math.exp(-float(np.sum((np.asarray(x) - center) ** 2)) / width)
    if spec.startswith("linear:"):
        vals = _parse_floats(spec.split(":", 1)[1])
        coef = np.array(vals[:dim])
        off = vals[dim] if len(vals) > dim else 0.0
        return lambda x: float(coef @ np.asarray(x)[:dim]) + off
    raise ConfigError(f"unknown scalar data family {spec!r}")


def _vector_family(spec, dim):
    if spec is None or spec == "zero":
        return None
    if spec.startswith("constant:"):
        vals = np.array(_parse_floats(spec.split(":", 1)[1]))
        if vals.size != dim:
            raise ConfigError(f"fj family needs {dim} components")
        return lambda x: vals
    raise ConfigError(f"unknown vector data family {spec!r}")


def resolve_omega(cfg, form):
    policy = cfg.get("problem", "omega_policy", "fixed")
    if policy == "fixed":
        return cfg.get_float("problem", "omega", 0.0)
    eta = cfg.get_float("problem", "eta", 0.1)
    return asm.find_coercivity_shift(form, eta)


# -- reports -----------------------------------------------------------------------


def _fmt_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class Report:
    """CSV report: comment line with config hash and seed, header, rows."""

    def __init__(self, command, config_hash, seed, columns):
        self.command = command
        self.config_hash = config_hash
        self.seed = seed
        self.columns = list(columns)
        self.rows = []

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError("row width does not match the report columns")
        self.rows.append(tuple(values))

    def to_text(self):
        buf = io.StringIO()
        buf.write(f"# config={self.config_hash} seed={self.seed} tool={TOOL_VERSION}\n")
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt_cell(v) for v in row) + "\n")
        return buf.getvalue()

    def emit(self, path, quiet):
        text = self.to_text()
        if path:
            with open(path, "w") as fh:
                fh.write(text)
        if not quiet and not path:
            sys.stdout.write(text)


def _args_hash(args, keys):
    blob = " ".join(f"{k}={getattr(args, k, None)}" for k in sorted(keys))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# -- subcommands --------------------------------------------------------------------


def _load_config(args):
    if getattr(args, "problem", None) is None:
        raise ConfigError("this subcommand requires --problem <config>")
    cfg = ProblemConfig.from_file(args.problem)
    cfg.validate_basic()
    return cfg


def cmd_solve_elliptic(args):
    cfg = _load_config(args)
    if args.dry_run:
        return 0
    refinements = args.refinements
    manufactured = cfg.get("rhs", "f0") == "manufactured_cos"
    if args.mesh is not None and refinements != 1:
        raise ConfigError("--mesh provides a single mesh; use --refinements 1")

    problem = None
    if manufactured:
        if cfg.get("coefficients", "family", "constant") != "constant":
            raise ConfigError("manufactured_cos requires the constant coefficient family")
        dim = 1 if cfg.require("domain", "kind") == "interval" else 2
        problem = ell.cosine_problem(dim, omega=cfg.get_float("problem", "omega", 1.0))

    rows = []
    solutions = []
    prev_err = None
    mesh = None
    form = None
    for level in range(refinements):
        mesh = Mesh.load(args.mesh) if args.mesh else build_mesh(cfg, level)
        field = build_field(cfg, mesh)
        form = asm.assemble_robin_form(mesh, field)
        omega = resolve_omega(cfg, form)
        if manufactured:
            rhs = asm.assemble_rhs(mesh, f0=problem.f0)
            u = ell.solve_robin(form, rhs, omega=problem.omega)
            e2, e1 = ell.l2_h1_errors(mesh, u.values, problem.exact, problem.grad_exact)
        else:
            rhs = asm.assemble_rhs(
                mesh,
                f0=_scalar_family(cfg.get("rhs", "f0"), mesh.dim),
                fj=_vector_family(cfg.get("rhs", "fj"), mesh.dim),
                g=_scalar_family(cfg.get("rhs", "g"), mesh.dim),
            )
            u = ell.solve_robin(form, rhs, omega=omega)
            e2 = e1 = float("nan")
        solutions.append(u)
        if prev_err is None or not manufactured:
            r2 = r1 = float("nan")
        else:
            r2 = math.log2(prev_err[0] / e2) if e2 > 0 else float("nan")
            r1 = math.log2(prev_err[1] / e1) if e1 > 0 else float("nan")
        prev_err = (e2, e1)
        rows.append([mesh.h_max(), e2, e1, r2, r1])

    if len(solutions) >= 3:
        est = ell.estimate_holder_exponent(solutions)
        gamma_hat = est.gamma_hat
        semis = est.seminorms[gamma_hat]
    else:
        gamma_hat = float("nan")
        semis = [ell.holder_seminorm(u, 0.5) for u in solutions]

    if args.save_mesh and mesh is not None:
        mesh.save(args.save_mesh)
    if args.dump_matrix and form is not None:
        asm.dump_matrix(form.A, args.dump_matrix)
    report = Report("solve-elliptic", cfg.hash(), args.seed,
                    ["h", "L2_err", "H1_err", "rate_L2", "rate_H1",
                     "holder_gamma", "holder_seminorm"])
    for row, s in zip(rows, semis):
        report.add(row[0], row[1], row[2], row[3], row[4], gamma_hat, s)
    report.emit(args.report, args.quiet)
    return 0


def cmd_evolve(args):
    cfg = _load_config(args)
    if args.dry_run:
        return 0
    mesh = Mesh.load(args.mesh) if args.mesh else build_mesh(cfg, 0)
    field = build_field(cfg, mesh)
    form = asm.assemble_robin_form(mesh, field)
    model = cfg.get("problem", "boundary_model", "robin")
    evo = par.EvolutionConfig(
        scheme=args.scheme or cfg.get("evolution", "scheme", "euler"),
        dt=args.dt if args.dt is not None else cfg.get_float("evolution", "dt", 0.01),
        t_end=args.t_end if args.t_end is not None else cfg.get_float("evolution", "t_end", 0.1),
        boundary_model=model,
    )
    u0_spec = cfg.get("evolution", "u0", "bump")
    u0_fn = _scalar_family(u0_spec, mesh.dim)
    u0 = (
        np.ones(mesh.n_vertices)
        if u0_fn is None
        else np.array([u0_fn(x) for x in mesh.vertices])
    )
    lumped = cfg.get_bool("evolution", "lumped", False)
    traj = par.evolve(form, evo, u0, lumped=lumped)
    if args.dump_matrix:
        asm.dump_matrix(form.A, args.dump_matrix)
    if args.save_mesh:
        mesh.save(args.save_mesh)
    w = par.lp_weights(form, model)
    report = Report("evolve", cfg.hash(), args.seed, ["t", "l2", "linf", "min", "mass"])
    l2 = traj.l2_norms()
    for k, t in enumerate(traj.times):
        state = traj.states[k]
        report.add(t, l2[k], float(np.abs(state).max()), float(state.min()),
                   float(w @ state))
    report.emit(args.report, args.quiet)
    return 0


def _parse_chart(spec):
    if spec == "flat":
        return flat_chart(1.0)
    if spec.startswith("slope:"):
        return slope_chart(float(spec.split(":", 1)[1]), 1.0)
    if spec.startswith("abs:"):
        return abs_chart(float(spec.split(":", 1)[1]), 1.0)
    raise ConfigError(f"unknown chart spec {spec!r} (flat | slope:<g> | abs:<g>)")


def _parse_coeff_name(name, seed):
    if name == "constant":
        return cf.constant_field(2)
    if name.startswith("checkerboard"):
        if ":" in name:
            contrast, tiles = _parse_floats(name.split(":", 1)[1])
        else:
            contrast, tiles = 100.0, 4
        return cf.checkerboard_coefficients(contrast, int(tiles), dim=2)
    if name == "spd_random":
        rng = np.random.default_rng(seed)
        while True:
            m = rng.uniform(-3.0, 3.0, size=(2, 2))
            lam = np.linalg.eigvalsh(0.5 * (m + m.T))
            if lam[0] >= 0.1 and np.linalg.norm(m, 2) <= 10.0:
                break
        return cf.constant_field(2, a=m)
    raise ConfigError(f"unknown coefficient name {name!r}")


def cmd_verify_reflection(args):
    if args.dry_run:
        _parse_chart(args.chart)
        _parse_coeff_name(args.coeff, args.seed)
        return 0
    chart = _parse_chart(args.chart)
    field = _parse_coeff_name(args.coeff, args.seed)
    ext = rf.build_extended_problem(chart, field, n_y=8, n_s=4)
    cert_before = cf.certify_ellipticity(field, ext.mesh_U)
    cert_after = rf.certify_extended_ellipticity(ext)

    rng = np.random.default_rng(args.seed)
    report = Report("verify-reflection", _args_hash(args, ["chart", "coeff", "samples"]),
                    args.seed, ["y", "s", "lambda_before", "lambda_after"])
    for _ in range(args.samples):
        y = rng.uniform(-chart.radius, chart.radius) * 0.95
        s = -abs(rng.uniform(1e-3, chart.radius * 0.95))
        x_v = chart.to_domain(np.array([y, chart.psi(y) + s]))
        x_u = ext.operator.reflect(x_v, check=False)
        lb = float(np.linalg.eigvalsh(0.5 * (field.a_at(x_u[None])[0] + field.a_at(x_u[None])[0].T))[0])
        ah = ext.field_hat.a_at(x_v[None])[0]
        la = float(np.linalg.eigvalsh(0.5 * (ah + ah.T))[0])
        report.add(y, s, lb, la)
    report.emit(args.report, args.quiet)
    if not args.quiet:
        print(f"alpha={cert_before.alpha:.12g} alpha_hat={cert_after.alpha:.12g}")
    if cert_after.alpha <= 0.0:
        raise VerificationFailure("extended coefficients lost strict ellipticity")
    return 0


def cmd_verify_counterexample(args):
    if args.dry_run:
        _parse_floats(args.omega)
        return 0
    omegas = _parse_floats(args.omega)
    reports = par.verify_counterexample(omegas, quadrature_n=args.quadrature_n)
    report = Report("verify-counterexample", _args_hash(args, ["omega", "quadrature_n"]),
                    args.seed, ["omega", "n", "alpha_n", "form_value", "bound", "verdict"])
    for r in reports:
        report.add(r.omega, r.n, r.alpha_n, r.form_value, r.bound, r.verdict)
    report.emit(args.report, args.quiet)
    if any(r.verdict != "violated" for r in reports):
        raise VerificationFailure("invariance criterion was not falsified at some omega")
    return 0


def cmd_check_contraction(args):
    cfg = _load_config(args)
    if args.dry_run:
        return 0
    mesh = build_mesh(cfg, 0)
    field = build_field(cfg, mesh)
    form = asm.assemble_robin_form(mesh, field)
    model = cfg.get("problem", "boundary_model", "robin")
    evo = par.EvolutionConfig(
        scheme=cfg.get("evolution", "scheme", "euler"),
        dt=cfg.get_float("evolution", "dt", 0.01),
        t_end=cfg.get_float("evolution", "t_end", 0.5),
        boundary_model=model,
    )
    rng = np.random.default_rng(args.seed)
    if args.norm == "linf":
        omega = args.omega_shift
        if omega is None:
            if field.b_lipschitz is None:
                raise ConfigError(
                    "field lacks b_lipschitz; pass --omega-shift to test a fixed shift"
                )
            omega = par._submarkovian_shift(field)
        growth = par.check_linfty_contraction(
            form, evo, omega=omega, trials=args.trials, rng=rng
        )
        bound = 1.0 + 10.0 * evo.dt
        report = Report("check-contraction", cfg.hash(), args.seed,
                        ["norm", "omega", "dt", "growth", "bound", "ok"])
        report.add("linf", omega, evo.dt, growth, bound, growth <= bound)
        report.emit(args.report, args.quiet)
        if field.b_lipschitz is not None and growth > bound:
            raise VerificationFailure(
                f"quasi-submarkovian growth {growth:.6g} exceeded {bound:.6g}"
            )
        return 0
    ps = _parse_floats(args.p)
    rows, omega2 = par.check_lp_contraction(form, evo, ps, trials=args.trials, rng=rng)
    report = Report("check-contraction", cfg.hash(), args.seed,
                    ["norm", "p", "omega_fitted", "envelope_bound", "within_envelope"])
    for r in rows:
        report.add("lp", r.p, r.omega_fitted, r.envelope_bound, r.within_envelope)
    report.emit(args.report, args.quiet)
    return 0


def cmd_probe_kernel(args):
    cfg = _load_config(args)
    if args.dry_run:
        return 0
    mesh = build_mesh(cfg, 0)
    field = build_field(cfg, mesh)
    form = asm.assemble_robin_form(mesh, field)
    model = cfg.get("problem", "boundary_model", "robin")
    evo = par.EvolutionConfig(
        scheme=cfg.get("evolution", "scheme", "euler"),
        dt=cfg.get_float("evolution", "dt", 0.005),
        t_end=cfg.get_float("evolution", "t_end", 1.0),
        boundary_model=model,
    )
    if args.source is not None:
        src = args.source
        if not 0 <= src < mesh.n_vertices:
            raise ConfigError(f"source vertex {src} out of range")
    else:
        center = mesh.vertices.mean(axis=0)
        src = int(np.argmin(np.linalg.norm(mesh.vertices - center, axis=1)))
    times = _parse_floats(args.times)
    probe = par.probe_kernel(form, evo, src, times, args.gamma)
    report = Report("probe-kernel", cfg.hash(), args.seed,
                    ["t", "holder_modulus", "mass_integral", "min_value"])
    for t, modulus, mass, col in zip(
        probe.times, probe.holder_modulus, probe.mass_integrals, probe.columns
    ):
        report.add(t, modulus, mass, float(col.values.min()))
    report.emit(args.report, args.quiet)
    if not probe.modulus_bounded:
        raise VerificationFailure("kernel Hoelder modulus not bounded across the times")
    return 0


def cmd_exponents(args):
    if args.dry_run:
        return 0
    q = Fraction(args.q) if "/" in args.q else Fraction(str(float(args.q)))
    chain = ell.exponent_bootstrap(args.N, q)
    if not args.quiet:
        print(", ".join(str(c) for c in chain.chain))
    report = Report("exponents", _args_hash(args, ["N", "q", "p"]), args.seed,
                    ["index", "q_n", "theta", "r_p", "s_p", "t_p"])
    if args.p is not None:
        theta, r, s, t = ell.interpolation_exponents(args.N, q, args.p)
        extras = [float(theta), r, s, t]
    else:
        extras = [float(chain.theta), float("nan"), float("nan"), float("nan")]
    for k, qn in enumerate(chain.chain):
        report.add(k, str(qn), *extras)
    report.emit(args.report, args.quiet)
    return 0


# -- argument parsing -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(p, problem=True):
    if problem:
        p.add_argument("--problem", help="problem config file")
    p.add_argument("--seed", type=int, default=42, help="RNG seed recorded in reports")
    p.add_argument("--report", help="CSV report path (default: stdout)")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--dry-run", action="store_true", help="validate config, compute nothing")


def build_parser():
    parser = _Parser(prog="robinlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-elliptic", help="solve the shifted Robin problem over refinements")
    _add_common(p)
    p.add_argument("--refinements", type=int, default=1)
    p.add_argument("--mesh", help="read mesh from file instead of the domain spec")
    p.add_argument("--save-mesh", help="write the finest mesh (bit-exact text format)")
    p.add_argument("--dump-matrix", help="write the stiffness in coordinate text format")
    p.set_defaults(fn=cmd_solve_elliptic)

    p = sub.add_parser("evolve", help="march the Robin or Wentzell evolution")
    _add_common(p)
    p.add_argument("--scheme", choices=["euler", "cn"])
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--mesh")
    p.add_argument("--save-mesh")
    p.add_argument("--dump-matrix")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("verify-reflection", help="sample ellipticity across the reflection")
    _add_common(p, problem=False)
    p.add_argument("--chart", required=True, help="flat | slope:<g> | abs:<g>")
    p.add_argument("--coeff", required=True, help="constant | checkerboard[:c,t] | spd_random")
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(fn=cmd_verify_reflection)

    p = sub.add_parser("verify-counterexample", help="falsify quasi-contractivity shifts")
    _add_common(p, problem=False)
    p.add_argument("--omega", required=True, help="comma-separated shifts")
    p.add_argument("--quadrature-n", type=int, default=64)
    p.set_defaults(fn=cmd_verify_counterexample)

    p = sub.add_parser("check-contraction", help="measure shifted trajectory growth")
    _add_common(p)
    p.add_argument("--norm", choices=["linf", "lp"], default="linf")
    p.add_argument("--p", default="2", help="comma-separated exponents for --norm lp")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--omega-shift", type=float, help="override the submarkovian shift")
    p.set_defaults(fn=cmd_check_contraction)

    p = sub.add_parser("probe-kernel", help="evolve a discrete delta and track its moduli")
    _add_common(p)
    p.add_argument("--source", type=int, help="source vertex (default: domain center)")
    p.add_argument("--times", default="0.05,0.1,0.2")
    p.add_argument("--gamma", type=float, default=0.5)
    p.set_defaults(fn=cmd_probe_kernel)

    p = sub.add_parser("exponents", help="bootstrap chain and interpolation exponents")
    _add_common(p, problem=False)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--q", required=True, help="target exponent (fraction like 3/2 or decimal)")
    p.add_argument("--p", type=float, help="interpolation exponent > N")
    p.set_defaults(fn=cmd_exponents)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except VerificationFailure as exc:
        sys.stderr.write(f"verification failure: {exc}\n")
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
