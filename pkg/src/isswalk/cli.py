"""Experiment driver CLI.

Subcommands: simulate, gait-fit, fixed-point, eigen, iss-sweep, pd-bench,
lyap-check, plot.  Every run writes its artifacts plus a manifest.json with
sha256 content hashes; outputs are byte-deterministic for a fixed config and
seed.  Exit codes: 0 = success/PASS, 1 = usage or config error, 2 = analysis
FAIL.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import analysis, config as cfgmod
from .control import FBLinController, PDController
from .disturbance import DisturbanceSpec, d_norm_max
from .dynamics import State, bias_vector, mass_matrix
from .errors import ConfigError, IsswalkError
from .gait import GaitArtifact, GaitStructure, build_hybrid_system, gait_fit
from .hybrid import DS, SS, ExecutionTrace, execute
from .integrate import integrate_domain
from .svgplot import Figure, plot_csv
from .walker import make_pinned_chain, make_walker

_BUILTIN_GAIT = os.path.join(os.path.dirname(__file__), "data",
                             "gait_default.json")
_BUILTIN_SEED = os.path.join(os.path.dirname(__file__), "data",
                             "gait_seed.json")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


class Workspace:
    """Output directory with a manifest of every produced file."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files: list[dict] = []

    def write(self, name: str, content: str) -> str:
        path = os.path.join(self.out_dir, name)
        data = content.encode()
        with open(path, "wb") as f:
            f.write(data)
        self.files.append({
            "name": name,
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
        })
        return path

    def finish(self):
        manifest = json.dumps(
            {"files": sorted(self.files, key=lambda r: r["name"])},
            sort_keys=True, indent=1,
        ) + "\n"
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as f:
            f.write(manifest)


def _load_artifact(cfg) -> GaitArtifact:
    ref = cfg["gait"]["artifact"]
    path = _BUILTIN_GAIT if ref == "builtin" else ref
    if not os.path.exists(path):
        raise ConfigError(f"gait artifact not found: {path}")
    return GaitArtifact.load(path)


def _controller(cfg):
    c = cfg["controller"]
    if c["kind"] == "fblin":
        return FBLinController(c["eps"], torque_limit=c["torque_limit"])
    return PDController(c["kp"], c["kd"], torque_limit=c["torque_limit"])


def _controller_factory(cfg):
    return lambda: _controller(cfg)


def _hybrid(cfg, artifact):
    model = cfgmod.model_from_config(cfg)
    return build_hybrid_system(artifact, model=model,
                               mode=cfg["controller"]["mode"])


def _disturbance(cfg) -> DisturbanceSpec | None:
    d = cfg["disturbance"]
    if (d["continuous"] == "none" and d["impact_kick"] == 0
            and d["clock_scale"] == 1.0 and d["clock_offset"] == 0.0):
        return None
    return DisturbanceSpec(
        continuous=d["continuous"], magnitude=d["magnitude"],
        hold_dt=d["hold_dt"], freq=d["freq"], phase_lag=d["phase_lag"],
        impact_kick=d["impact_kick"], clock_scale=d["clock_scale"],
        clock_offset=d["clock_offset"], mass_scale=d["mass_scale"],
        seed=d["seed"], m=4,
    )


# -- subcommands -----------------------------------------------------------------


def cmd_simulate(cfg, ws: Workspace) -> int:
    art = _load_artifact(cfg)
    hs = _hybrid(cfg, art)
    ctrl = _controller(cfg)
    dist = _disturbance(cfg)
    n = hs.model.n
    x0 = State(art.x_ds_entry[:n], art.x_ds_entry[n:])
    tr = execute(hs, x0, ctrl, cfg["run"]["steps"], domain0=DS,
                 disturbance=dist, nominal_eps=art.structure.eps,
                 sample_dt=cfg["run"]["sample_dt"])
    ws.write("trace.csv", tr.to_csv())
    lines = [
        f"steps_completed: {len([e for e in tr.events if e['kind'] == 'touchdown'])}",
        f"samples: {len(tr.t)}",
        f"d_norm_max: {_fmt(d_norm_max(tr, dist))}",
        f"flags: {';'.join(tr.flags) if tr.flags else '-'}",
    ]
    for e in tr.events:
        lines.append(
            f"event: t={_fmt(e['t'])} {e['from']}->{e['to']} "
            f"impulse={','.join(_fmt(v) for v in e['impulse'])}"
        )
    ws.write("summary.txt", "\n".join(lines) + "\n")
    bad = any(f in tr.flags for f in ("NoImpact", "IntegrationBlowup"))
    return 2 if (bad and cfg["run"]["steps"] > 0) else 0


def cmd_gait_fit(cfg, ws: Workspace) -> int:
    with open(_BUILTIN_SEED) as f:
        seed = json.load(f)
    model = cfgmod.model_from_config(cfg)
    st = GaitStructure(**{
        k: tuple(v) if isinstance(v, list) else v
        for k, v in seed["structure"].items()
    })
    art = gait_fit(
        model, np.array(seed["entry_params"]), np.array(seed["alpha_ds"]),
        np.array(seed["alpha_ss"]), structure=st,
    )
    path = os.path.join(ws.out_dir, "gait.json")
    art.save(path)
    with open(path) as f:
        data = f.read()
    ws.files.append({"name": "gait.json",
                     "sha256": hashlib.sha256(data.encode()).hexdigest(),
                     "bytes": len(data)})
    ws.write("summary.txt", "\n".join([
        f"invariance_residual: {_fmt(art.invariance_residual)}",
        f"fixed_point_residual: {_fmt(art.fixed_point_residual)}",
        f"T_ds: {_fmt(art.T_ds)}",
        f"T_ss: {_fmt(art.T_ss)}",
    ]) + "\n")
    ok = art.invariance_residual <= 1e-6 and art.fixed_point_residual <= 1e-8
    return 0 if ok else 2


def cmd_fixed_point(cfg, ws: Workspace) -> int:
    art = _load_artifact(cfg)
    hs = _hybrid(cfg, art)
    ctrl = _controller(cfg)
    n = hs.model.n
    x_init = State(art.x_star_guard[:n], art.x_star_guard[n:])
    x_star, res, flags = analysis.find_fixed_point(hs, ctrl, x_init)
    ws.write("fixed_point.csv", "schema_version,idx,value\n" + "".join(
        f"1,{i},{_fmt(v)}\n" for i, v in enumerate(x_star.x)))
    ws.write("summary.txt",
             f"residual: {_fmt(res)}\nflags: {';'.join(flags) or '-'}\n")
    return 0 if res <= 1e-8 else 2


def cmd_eigen(cfg, ws: Workspace) -> int:
    art = _load_artifact(cfg)
    hs = _hybrid(cfg, art)
    ctrl = _controller(cfg)
    n = hs.model.n
    x_star = State(art.x_star_guard[:n], art.x_star_guard[n:])
    J, rho, _ = analysis.linearized_poincare(hs, ctrl, x_star)
    ev = np.linalg.eigvals(J)
    order = np.argsort(-np.abs(ev))
    ws.write("eigenvalues.csv", "schema_version,re,im,abs\n" + "".join(
        f"1,{_fmt(ev[i].real)},{_fmt(ev[i].imag)},{_fmt(abs(ev[i]))}\n"
        for i in order))
    ws.write("summary.txt", f"spectral_radius: {_fmt(rho)}\n")
    return 0 if rho < 1.0 else 2


def cmd_iss_sweep(cfg, ws: Workspace) -> int:
    art = _load_artifact(cfg)
    hs = _hybrid(cfg, art)
    n = hs.model.n
    x_star = State(art.x_star_guard[:n], art.x_star_guard[n:])
    rep = analysis.estimate_iss_gain(
        hs, None, x_star, cfg["run"]["magnitudes"],
        n_steps=cfg["run"]["steps"], n_seeds=cfg["run"]["seeds"],
        spectral_radius=art.spectral_radius,
        controller_factory=_controller_factory(cfg),
    )
    gain_csv = "schema_version,delta,mean,ci_lo,ci_hi,n\n" + "".join(
        f"1,{_fmt(g['delta'])},{_fmt(g['mean'])},{_fmt(g['ci_lo'])},"
        f"{_fmt(g['ci_hi'])},{len(g['bounds'])}\n" for g in rep.gain_curve)
    ws.write("gain_curve.csv", gain_csv)
    decay_csv = "schema_version,run,step,error\n" + "".join(
        f"1,{k},{i + 1},{_fmt(r)}\n"
        for k, curve in enumerate(rep.decay_curves)
        for i, r in enumerate(curve))
    ws.write("decay.csv", decay_csv)
    ws.write("report.json", json.dumps({
        "N_p": rep.N_p, "xi_p": rep.xi_p, "r_squared": rep.r_squared,
        "spectral_radius": rep.spectral_radius, "verdict": rep.verdict,
        "notes": rep.notes,
    }, sort_keys=True, indent=1) + "\n")
    ws.write("gain_curve.svg", plot_csv(gain_csv, "gain_curve"))
    fig = Figure("step index i", "log10 |P^i - x*|", "zero-disturbance decay")
    for curve in rep.decay_curves:
        fig.line(range(1, len(curve) + 1),
                 [np.log10(max(v, 1e-300)) for v in curve])
    ws.write("decay.svg", fig.render())
    return 0 if rep.verdict == "PASS" else 2


def cmd_pd_bench(cfg, ws: Workspace) -> int:
    model = make_pinned_chain()
    kp, kd = cfg["controller"]["kp"], cfg["controller"]["kd"]
    eps = cfg["controller"]["eps"]
    q_d = np.zeros(model.n)
    rng = np.random.default_rng(cfg["disturbance"]["seed"])
    q0 = rng.uniform(-0.3, 0.3, model.n)

    def u_pd(st: State):
        return -kp * (st.q - q_d) - kd * st.qdot

    def rhs(t, xv):
        st = State(xv[:model.n], xv[model.n:])
        D = mass_matrix(model, st.q)
        H = bias_vector(model, st.q, st.qdot)
        acc = np.linalg.solve(D, u_pd(st) - H)
        return np.concatenate([st.qdot, acc])

    res = integrate_domain(rhs, np.concatenate([q0, np.zeros(model.n)]),
                           0.0, 5.0, None, rtol=1e-8, atol=1e-10,
                           sample_dt=0.005)
    rows = ["schema_version,t," + ",".join(
        [f"q{i}" for i in range(model.n)] + [f"d{i}" for i in range(model.n)])]
    d_max, err_end = 0.0, 0.0
    for t, xv in zip(res.sample_t, res.sample_x):
        st = State(xv[:model.n], xv[model.n:])
        D = mass_matrix(model, st.q)
        H = bias_vector(model, st.q, st.qdot)
        u_io = D @ (-2 * eps * st.qdot - eps**2 * (st.q - q_d)) + H
        d = u_pd(st) - u_io
        d_max = max(d_max, float(np.max(np.abs(d))))
        rows.append("1," + ",".join(
            [_fmt(t)] + [_fmt(v) for v in st.q] + [_fmt(v) for v in d]))
    err_end = float(np.max(np.abs(res.sample_x[-1][:model.n] - q_d)))
    ws.write("pd_bench.csv", "\n".join(rows) + "\n")
    ws.write("summary.txt", "\n".join([
        f"final_error_rad: {_fmt(err_end)}",
        f"d_max: {_fmt(d_max)}",
        f"pass: {err_end < 0.01}",
    ]) + "\n")
    return 0 if err_end < 0.01 else 2


def cmd_lyap_check(cfg, ws: Workspace) -> int:
    art = _load_artifact(cfg)
    hs = _hybrid(cfg, art)
    ctrl = _controller(cfg)
    dist = _disturbance(cfg)
    n = hs.model.n
    x0 = State(art.x_ds_entry[:n], art.x_ds_entry[n:])
    tr = execute(hs, x0, ctrl, max(cfg["run"]["steps"], 1), domain0=DS,
                 disturbance=dist, nominal_eps=art.structure.eps,
                 sample_dt=min(cfg["run"]["sample_dt"], 1e-3))
    eps = cfg["controller"]["eps"]
    g1, g2 = cfg["run"]["gamma1"], cfg["run"]["gamma2"]
    reports, ok = {}, True
    for dom in (DS, SS):
        spec = hs.specs[dom]
        B2 = analysis.probe_b2_norm(hs.model, spec, tr, dom)
        rep = analysis.iss_lyapunov_check(tr, spec, eps, g1, g2, B2)
        reports[dom] = rep
        ok = ok and rep["pass"]
    ws.write("lyap_check.json", json.dumps(reports, sort_keys=True,
                                           indent=1, default=float) + "\n")
    ws.write("summary.txt", "\n".join(
        f"{dom}: pass={reports[dom]['pass']} "
        f"checked={reports[dom]['n_checked']} "
        f"violations={reports[dom]['n_violations']} "
        f"ball={_fmt(reports[dom]['ball_radius'])}"
        for dom in (DS, SS)) + "\n")
    return 0 if ok else 2


def cmd_plot(args, ws: Workspace) -> int:
    with open(args.csv) as f:
        text = f.read()
    svg = plot_csv(text, args.kind)
    ws.write(os.path.basename(args.csv).rsplit(".", 1)[0]
             + f"_{args.kind}.svg", svg)
    return 0


# -- entry point -----------------------------------------------------------------


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="isswalk",
        description="Hybrid walking simulation and empirical ISS "
                    "certification experiments.",
    )
    ap.add_argument("--config", default=None, help="YAML config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                    help="override a config key via dotted path")
    ap.add_argument("--out", default=None, help="output directory")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("simulate", "gait-fit", "fixed-point", "eigen", "iss-sweep",
                 "pd-bench", "lyap-check"):
        sub.add_parser(name)
    pp = sub.add_parser("plot")
    pp.add_argument("csv")
    pp.add_argument("--kind", required=True,
                    choices=["trace", "gain_curve", "phase_portrait",
                             "histogram"])
    args = ap.parse_args(argv)

    try:
        cfg = cfgmod.load_config(args.config, args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or cfgmod.default_out_dir(cfg)
    ws = Workspace(out_dir)
    handlers = {
        "simulate": lambda: cmd_simulate(cfg, ws),
        "gait-fit": lambda: cmd_gait_fit(cfg, ws),
        "fixed-point": lambda: cmd_fixed_point(cfg, ws),
        "eigen": lambda: cmd_eigen(cfg, ws),
        "iss-sweep": lambda: cmd_iss_sweep(cfg, ws),
        "pd-bench": lambda: cmd_pd_bench(cfg, ws),
        "lyap-check": lambda: cmd_lyap_check(cfg, ws),
        "plot": lambda: cmd_plot(args, ws),
    }
    try:
        code = handlers[args.cmd]()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except IsswalkError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        ws.finish()
        return 2
    ws.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
