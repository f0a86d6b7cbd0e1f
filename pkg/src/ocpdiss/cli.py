"""Command-line experiment runner.

Every stage reads its inputs from the output directory and writes its
artifacts there, so ``run`` is the stages executed in order and each
subcommand can be rerun on its own.

Exit codes: 0 all enabled checks pass, 1 solver failure, failed check or
missing artifact, 2 configuration error.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import click
import numpy as np

from .config import ConfigError, ExperimentConfig, dump_plain, load_config
from .dissipativity import (NoCertificate, SdpOptions, StorageCertificate, check_certificate,
                            dissipation_residual, supply_rate, synthesize_certificate)
from .ocp import (SteadyStateError, SteadyStatePair, OcpSpec, available_storage, optimal_steady_state,
                  solve_ocp)
from .sim import ControlSignal, Trajectory, integrate
from .turnpike import ThetaQuery, nu_envelope, theta_measure

log = logging.getLogger("ocpdiss")

STEADY = "steady_state.json"
RUNS = "ocp_runs.json"
TURNPIKE = "turnpike_report.json"
ENVELOPE = "turnpike_envelope.csv"
CERT = "certificate.json"
CERT_CHECK = "certificate_check.json"
STORAGE = "storage_estimates.json"
REPORT = "report.json"


class StageFailure(RuntimeError):
    """A solver or check failed; artifacts written so far are kept."""


class MissingArtifacts(RuntimeError):
    def __init__(self, missing: list[str]):
        super().__init__("missing artifacts: " + ", ".join(missing))
        self.missing = missing


def ocp_csv(i: int) -> str:
    return f"ocp_{i}.csv"


def residual_csv(i: int) -> str:
    return f"residuals_{i}.csv"


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(dump_plain(obj), indent=2, sort_keys=True) + "\n")


def read_json(path: Path):
    return json.loads(path.read_text())


def require(out: Path, names: list[str]) -> None:
    missing = [n for n in names if not (out / n).exists()]
    if missing:
        raise MissingArtifacts(missing)


def _map(fn: Callable, items: list, jobs: int) -> list:
    """Ordered map, threaded when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _checks(out: Path) -> dict:
    """Per-stage check outcomes recorded in artifacts."""
    res = {}
    if (out / STEADY).exists():
        res["steady_state"] = bool(read_json(out / STEADY)["checks"]["ok"])
    if (out / RUNS).exists():
        res["ocp"] = bool(read_json(out / RUNS)["checks"]["ok"])
    if (out / TURNPIKE).exists():
        res["turnpike"] = bool(read_json(out / TURNPIKE)["checks"]["ok"])
    if (out / CERT_CHECK).exists():
        d = read_json(out / CERT_CHECK)
        res["certificate"] = bool(d["checks"]["certificate_ok"])
        res["dissipation_residuals"] = bool(d["checks"]["residuals_ok"])
    if (out / STORAGE).exists():
        res["available_storage"] = bool(read_json(out / STORAGE)["checks"]["ok"])
    return res


# ---------------------------------------------------------------------------
# stages


def stage_simulate(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1) -> list[str]:
    """Open-loop simulation from every configured ``x0`` under a constant input."""
    sys = cfg.system()
    s = cfg.simulate
    u = sys.input_center if s["u"] is None else np.asarray(s["u"], float)
    T = float(s["T"])
    names = []
    for i, x0 in enumerate(cfg.x0_list()):
        traj = integrate(sys, x0, ControlSignal.constant(T, u), float(s["step"]))
        name = f"sim_{i}.csv"
        traj.write_csv(out / name)
        names.append(name)
    return names


def stage_steady_state(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1) -> SteadyStatePair:
    tol = float(cfg.solver["steady_state_tol"])
    try:
        ss = optimal_steady_state(cfg.system(), cfg.cost(), cfg.solver["multistart_k"], seed=seed,
                                  opts=cfg.nlp_options(), tol=tol, jobs=jobs)
    except SteadyStateError as exc:
        raise StageFailure(f"steady state: {exc}") from None
    d = ss.to_dict()
    d["checks"] = {"residual_tol": tol, "ok": bool(ss.dynamics_residual <= tol)}
    write_json(out / STEADY, d)
    log.info("steady state x=%s u=%s F=%.6g", ss.x_bar, ss.u_bar, ss.cost_value)
    return ss


def _load_steady(out: Path) -> SteadyStatePair:
    require(out, [STEADY])
    return SteadyStatePair.from_dict(read_json(out / STEADY))


def stage_solve_ocp(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1) -> list[dict]:
    ss = _load_steady(out)
    o = cfg.ocp
    opts = cfg.nlp_options()

    def run(item):
        i, x0, T = item
        spec = OcpSpec(cfg.system(), cfg.cost(), x0, T, cfg.intervals(T), o["objective_mode"],
                       step=float(o["step"]))
        sol = solve_ocp(spec, u_guess=ss.u_bar, opts=opts, constraint_tol=float(o["constraint_tol"]))
        sol.trajectory.write_csv(out / ocp_csv(i))
        return {"index": i, "x0": x0, "T": T, "N": spec.N, "file": ocp_csv(i), "J_T": sol.J_T,
                "status": sol.status, "kkt_residual": sol.nlp.kkt_residual,
                "shooting_defect": sol.shooting_defect, "node_deviation": sol.node_deviation,
                "admissible": sol.admissible, "n_violations": len(sol.violations)}

    runs = _map(run, cfg.runs(), jobs)
    ok = all(r["status"] == "converged" and r["admissible"] and r["shooting_defect"] <= float(o["defect_tol"])
             for r in runs)
    write_json(out / RUNS, {"runs": runs, "objective_mode": o["objective_mode"],
                            "input_class": "piecewise constant on a uniform grid",
                            "checks": {"defect_tol": o["defect_tol"], "ok": ok}})
    for r in runs:
        log.info("ocp %d T=%g J_T=%.6g %s", r["index"], r["T"], r["J_T"], r["status"])
    if not all(r["status"] == "converged" for r in runs):
        raise StageFailure("OCP solver did not converge on every run")
    return runs


def _load_runs(out: Path) -> list[tuple[dict, Trajectory]]:
    require(out, [RUNS])
    runs = read_json(out / RUNS)["runs"]
    require(out, [r["file"] for r in runs])
    return [(r, Trajectory.read_csv(out / r["file"])) for r in runs]


def _turnpike_scale(cfg: ExperimentConfig, kind: str):
    if not cfg.turnpike["scaled"]:
        return None
    sys = cfg.system()
    if kind == "x":
        return sys.state_halfwidth
    return np.concatenate([sys.state_halfwidth, sys.input_halfwidth])


def stage_turnpike(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1):
    ss = _load_steady(out)
    loaded = _load_runs(out)
    tp = cfg.turnpike
    kind = tp["kind"]
    ref = ss.x_bar if kind == "x" else ss.z_bar
    sweep = [(traj, r["T"], r["x0"]) for r, traj in loaded]
    eps = [float(e) for e in tp["epsilons"]]
    rep = nu_envelope(sweep, ref, kind, eps, _turnpike_scale(cfg, kind), float(tp["delta0"]))
    d = rep.to_dict()
    # variation of the measure across horizons, per initial state, at the check radius
    e_chk = float(tp["check_epsilon"])
    variation = {}
    for r, traj in loaded:
        m = theta_measure(traj, ThetaQuery(kind, ref, e_chk, _turnpike_scale(cfg, kind)))
        variation.setdefault(json.dumps(r["x0"]), []).append(m)
    rel = {}
    for key, ms in variation.items():
        ms = np.asarray(ms)
        mean = float(ms.mean())
        rel[key] = 0.0 if ms.max() - ms.min() == 0 else float((ms.max() - ms.min()) / max(mean, 1e-300))
    ok = all(v < float(tp["max_variation"]) for v in rel.values())
    d["checks"] = {"epsilon": e_chk, "relative_variation": rel, "max_variation": tp["max_variation"], "ok": ok}
    write_json(out / TURNPIKE, d)
    (out / ENVELOPE).write_text(rep.envelope_csv())
    return rep


def _sdp_opts(cfg: ExperimentConfig) -> SdpOptions:
    return SdpOptions(psd_cap=int(cfg.dissipativity["psd_cap"]))


def stage_certify(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1) -> StorageCertificate:
    ss = _load_steady(out)
    d = cfg.dissipativity
    try:
        cert, _ = synthesize_certificate(cfg.polynomial_system(), cfg.cost(), ss, int(d["storage_degree"]),
                                         d["multiplier_degree"], d["alpha_on"], d["mode"], d["method"],
                                         _sdp_opts(cfg), float(d["bisection_tol"]), bool(d["reduce_degree"]))
    except NoCertificate as exc:
        raise StageFailure(f"certificate synthesis: {exc}") from None
    cert.write_json(out / CERT)
    log.info("certificate degree %d alpha_bar %.6g", cert.degree, cert.alpha_bar)
    return cert


def stage_check_cert(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1,
                     cert_path: Path | None = None) -> dict:
    """Pointwise certificate check on the synthesis model and residuals along stored OCP runs."""
    ss = _load_steady(out)
    path = cert_path or out / CERT
    if not path.exists():
        raise MissingArtifacts([str(path.name)])
    try:
        cert = StorageCertificate.read_json(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise StageFailure(f"unreadable certificate: {exc}") from None
    d = cfg.dissipativity
    w = supply_rate(cfg.cost(), ss)
    psys = cfg.polynomial_system()
    if cert.n_x != psys.n_x:
        raise StageFailure(f"certificate has {cert.n_x} states, model has {psys.n_x}")
    chk = check_certificate(cert, psys, w, int(d["check_grid"]), int(d["check_random"]), seed,
                            float(d["check_tol"]))
    alpha_ok = cert.alpha_bar >= float(d["min_alpha"])
    residuals = []
    if (out / RUNS).exists():
        for r, traj in _load_runs(out):
            trace = dissipation_residual(traj, cert, w)
            name = residual_csv(r["index"])
            (out / name).write_text(trace.to_csv())
            residuals.append({"index": r["index"], "file": name, "max_delta": trace.max_delta,
                              "argmax_time": trace.argmax_time})
    res_tol = float(d["residual_tol"])
    res_ok = all(r["max_delta"] <= res_tol for r in residuals)
    report = {"check": chk.to_dict(), "alpha_bar": cert.alpha_bar, "degree": cert.degree,
              "residuals": residuals,
              "checks": {"min_alpha": d["min_alpha"], "alpha_ok": alpha_ok, "certificate_ok": chk.ok and alpha_ok,
                         "residual_tol": res_tol, "residuals_ok": res_ok}}
    write_json(out / CERT_CHECK, report)
    for v in chk.violations:
        log.warning("dissipation inequality violated at x=%s u=%s residual=%.3g", v["x"], v["u"], v["residual"])
    return report


def stage_storage(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1) -> list[dict]:
    s = cfg.storage
    ss = _load_steady(out)
    strict = None
    bound = None
    if (out / CERT).exists():
        cert = StorageCertificate.read_json(out / CERT)
        bound = cert
        if s["strict"]:
            strict = cert.alpha
    grid = [float(t) for t in s["T_grid"]]

    def run(x0):
        est = available_storage(cfg.system(), cfg.cost(), ss, np.asarray(x0, float), grid, strictness=strict,
                                mode=s["mode"], control_dt=float(s["control_interval"]),
                                max_intervals=int(s["max_intervals"]), step=float(s["step"]),
                                opts=cfg.nlp_options())
        d = est.to_dict()
        if bound is not None:
            d["storage_at_x0"] = float(bound.S(np.asarray(x0, float)[None])[0])
        return d

    ests = _map(run, [list(map(float, x)) for x in s["x0"]], jobs)
    ok = all(e["verdict"] != "diverging" and min(e["running_sup"]) >= 0 for e in ests)
    if bound is not None:
        ok = ok and all(e["running_sup"][-1] <= e["storage_at_x0"] + 1e-3 for e in ests)
    write_json(out / STORAGE, {"estimates": ests, "checks": {"ok": ok}})
    return ests


def stage_report(cfg: ExperimentConfig, out: Path, seed: int = 0, jobs: int = 1) -> dict:
    """Aggregate existing artifacts; nothing is recomputed."""
    needed = [STEADY, RUNS, TURNPIKE, ENVELOPE]
    if cfg.dissipativity["enabled"]:
        needed += [CERT, CERT_CHECK]
    if cfg.storage is not None:
        needed.append(STORAGE)
    require(out, needed)
    runs = read_json(out / RUNS)["runs"]
    require(out, [r["file"] for r in runs])
    if cfg.dissipativity["enabled"]:
        require(out, [r["file"] for r in read_json(out / CERT_CHECK)["residuals"]])
    checks = _checks(out)
    ss = read_json(out / STEADY)
    summary = {
        "model": cfg.model["label"],
        "seed": seed,
        "steady_state": {"x_bar": ss["x_bar"], "u_bar": ss["u_bar"], "cost": ss["cost_value"]},
        "ocp": [{k: r[k] for k in ("index", "x0", "T", "J_T", "status")} for r in runs],
        "checks": checks,
        "all_passed": all(checks.values()),
    }
    tp = read_json(out / TURNPIKE)
    summary["turnpike"] = {"epsilons": tp["epsilons"], "nu_envelope": tp["nu_envelope"],
                           "turnpike_consistent": tp["turnpike_consistent"]}
    if cfg.dissipativity["enabled"]:
        cc = read_json(out / CERT_CHECK)
        summary["certificate"] = {"degree": cc["degree"], "alpha_bar": cc["alpha_bar"],
                                  "max_delta": max((r["max_delta"] for r in cc["residuals"]), default=None)}
    write_json(out / REPORT, summary)
    return summary


def pipeline_stages(cfg: ExperimentConfig) -> list[tuple[str, Callable]]:
    stages = [("steady-state", stage_steady_state), ("solve-ocp", stage_solve_ocp), ("turnpike", stage_turnpike)]
    if cfg.dissipativity["enabled"]:
        stages += [("certify", stage_certify), ("check-cert", stage_check_cert)]
    if cfg.storage is not None:
        stages.append(("storage", stage_storage))
    stages.append(("report", stage_report))
    return stages


def run_pipeline(config_path, out=None, seed: int = 0, jobs: int = 1) -> int:
    """Run every enabled stage; returns the process exit code."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    out_dir = Path(out or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, fn in pipeline_stages(cfg):
        log.info("stage %s", name)
        try:
            fn(cfg, out_dir, seed=seed, jobs=jobs)
        except (StageFailure, MissingArtifacts) as exc:
            log.error("%s: %s", name, exc)
            return 1
    return 0 if read_json(out_dir / REPORT)["all_passed"] else 1


# ---------------------------------------------------------------------------
# click wiring


def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
                     envvar="OCPDISS_CONFIG", show_envvar=True, help="Experiment YAML."),
        click.option("--out", "out", type=click.Path(file_okay=False), default=None, envvar="OCPDISS_OUT",
                     show_envvar=True, help="Output directory (default: the config's output)."),
        click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=0, envvar="OCPDISS_SEED",
                     show_envvar=True, help="Seed for multistart and random checks."),
        click.option("--jobs", type=click.IntRange(1), default=1, envvar="OCPDISS_JOBS", show_envvar=True,
                     help="Worker threads within a stage."),
        click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
                     default="WARNING", envvar="OCPDISS_LOG_LEVEL", show_envvar=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _setup(config_path, out, log_level):
    logging.basicConfig(level=getattr(logging, log_level.upper()), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        raise SystemExit(2)
    out_dir = Path(out or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def _run_stage(fn, config_path, out, seed, jobs, log_level, **kw) -> None:
    cfg, out_dir = _setup(config_path, out, log_level)
    try:
        fn(cfg, out_dir, seed=seed % 2 ** 32, jobs=jobs, **kw)
    except MissingArtifacts as exc:
        click.echo(str(exc), err=True)
        raise SystemExit(1)
    except StageFailure as exc:
        click.echo(f"failed: {exc}", err=True)
        raise SystemExit(1)


@click.group(context_settings={"auto_envvar_prefix": "OCPDISS", "help_option_names": ["-h", "--help"]})
@click.version_option(package_name="artifact")
def main():
    """Turnpike and dissipativity analysis of optimal control problems."""


@main.command()
@_common
def simulate(config_path, out, seed, jobs, log_level):
    """Integrate from each x0 under a constant input."""
    _run_stage(stage_simulate, config_path, out, seed, jobs, log_level)


@main.command("steady-state")
@_common
def steady_state(config_path, out, seed, jobs, log_level):
    """Compute the optimal steady state."""
    _run_stage(stage_steady_state, config_path, out, seed, jobs, log_level)


@main.command("solve-ocp")
@_common
def solve_ocp_cmd(config_path, out, seed, jobs, log_level):
    """Solve the OCP sweep over (x0, T)."""
    _run_stage(stage_solve_ocp, config_path, out, seed, jobs, log_level)


@main.command()
@_common
def turnpike(config_path, out, seed, jobs, log_level):
    """Turnpike measures and envelopes from stored OCP runs."""
    _run_stage(stage_turnpike, config_path, out, seed, jobs, log_level)


@main.command()
@_common
def certify(config_path, out, seed, jobs, log_level):
    """Synthesize a polynomial storage certificate."""
    _run_stage(stage_certify, config_path, out, seed, jobs, log_level)


@main.command("check-cert")
@_common
@click.option("--cert", "cert_path", type=click.Path(dir_okay=False), default=None,
              help="Certificate JSON (default: certificate.json in the output directory).")
def check_cert(config_path, out, seed, jobs, log_level, cert_path):
    """Check a certificate pointwise and along stored OCP runs."""
    cfg, out_dir = _setup(config_path, out, log_level)
    try:
        rep = stage_check_cert(cfg, out_dir, seed=seed % 2 ** 32, jobs=jobs,
                               cert_path=Path(cert_path) if cert_path else None)
    except (MissingArtifacts, StageFailure) as exc:
        click.echo(str(exc), err=True)
        raise SystemExit(1)
    chk = rep["check"]
    if not rep["checks"]["certificate_ok"] or not rep["checks"]["residuals_ok"]:
        click.echo(f"certificate check failed: {chk['n_violations']} violations, "
                   f"min residual {chk['min_residual']:.6g}, alpha_bar {rep['alpha_bar']:.6g}", err=True)
        for v in chk["violations"]:
            click.echo(f"  x={v['x']} u={v['u']} residual={v['residual']:.6g}", err=True)
        for r in rep["residuals"]:
            if r["max_delta"] > rep["checks"]["residual_tol"]:
                click.echo(f"  run {r['index']}: max residual {r['max_delta']:.6g} at t={r['argmax_time']:.6g}",
                           err=True)
        raise SystemExit(1)


@main.command()
@_common
def storage(config_path, out, seed, jobs, log_level):
    """Available-storage estimates (needs a storage block)."""
    cfg, out_dir = _setup(config_path, out, log_level)
    if cfg.storage is None:
        click.echo("config has no storage block", err=True)
        raise SystemExit(2)
    _run_stage(stage_storage, config_path, out, seed, jobs, log_level)


@main.command()
@_common
def report(config_path, out, seed, jobs, log_level):
    """Aggregate existing artifacts into report.json."""
    cfg, out_dir = _setup(config_path, out, log_level)
    try:
        summary = stage_report(cfg, out_dir, seed=seed % 2 ** 32)
    except MissingArtifacts as exc:
        click.echo(str(exc), err=True)
        raise SystemExit(1)
    for k, v in summary["checks"].items():
        click.echo(f"{k}: {'pass' if v else 'FAIL'}")
    raise SystemExit(0 if summary["all_passed"] else 1)


@main.command("run")
@_common
def run_cmd(config_path, out, seed, jobs, log_level):
    """Full pipeline: every enabled stage, then the report."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format="%(levelname)s %(name)s: %(message)s")
    raise SystemExit(run_pipeline(config_path, out, seed % 2 ** 32, jobs))


if __name__ == "__main__":
    main()
