"""Command-line front end.

Exit codes: 0 on success, 1 when a computation (or writing its output)
fails, 2 for usage and configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .annulus import classify
from .config import ConfigError, RunConfig, metadata, metadata_lines
from .model import DegenerateParameters, audit_assumptions, derived, equilibria, extinction_check
from .planar import CycleNotFound, NonConvergence, PlanarSystem, find_limit_cycle, lienard_audit
from .poincare import (
    EscapedAnnulus,
    InvalidSection,
    ModelMapParams,
    NoReturn,
    SectionConfig,
    attractor_sample,
    bifurcation_sweep,
    count_clusters,
    detect_period,
    model_map_orbit,
    model_map_sweep,
    read_sweep_csv,
    write_sweep_csv,
)

log = logging.getLogger("poincare_annulus")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ComputationError(RuntimeError):
    pass


class Writer:
    """Single funnel for every file a command emits."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.written: list[Path] = []
        self.meta = metadata(cfg)
        self.header = metadata_lines(cfg)

    def prepare(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        probe = self.dir / ".write-probe"
        probe.write_text("")
        probe.unlink()

    def wants(self, fmt: str) -> bool:
        return fmt in self.cfg.formats

    def json(self, name: str, payload: dict) -> None:
        if not self.wants("json"):
            return
        path = self.dir / name
        path.write_text(json.dumps({"metadata": self.meta, **payload}, indent=2, default=_jsonable) + "\n")
        self.written.append(path)

    def csv(self, name: str, columns, rows) -> None:
        if not self.wants("csv"):
            return
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")
        self.written.append(path)

    def svg(self, name: str, draw) -> None:
        if not self.wants("svg"):
            return
        path = self.dir / name
        draw(path, json.dumps(self.meta, sort_keys=True))
        self.written.append(path)


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# commands


def cmd_audit(cfg: RunConfig, w: Writer) -> dict:
    p = cfg.parameters()
    report = audit_assumptions(p)
    try:
        d = derived(p)
    except DegenerateParameters as exc:
        raise ComputationError(str(exc)) from exc
    out = {
        "audit": report.to_dict(),
        "derived": {"kappa": d.kappa, "tau": d.tau, "kappa0": d.kappa0, "gamma_ratio": d.gamma_ratio},
        "equilibria": [e.to_dict() for e in equilibria(p)],
        "extinction": extinction_check(p),
    }
    w.json("audit.json", out)
    return {"tau": d.tau, "kappa": d.kappa, "all_passed": report.all_passed}


def cmd_planar(cfg: RunConfig, w: Writer) -> dict:
    from .plotting import plot_cycle

    p = cfg.parameters()
    summary = {}
    for i in (1, 2):
        sys_ = PlanarSystem.comparison(p, i)
        entry = {"equilibrium": [float(v) for v in sys_.equilibrium], "stability": sys_.stability,
                 "lienard": lienard_audit(sys_).passed}
        try:
            cyc = find_limit_cycle(sys_, "stable", rtol=cfg.rtol, atol=cfg.atol)
        except (CycleNotFound, NonConvergence) as exc:
            # a cycle hugging the axes can be beyond double precision; report it per system
            entry["cycle"] = None
            entry["detail"] = f"{type(exc).__name__}: {exc}"
        else:
            entry["cycle"] = cyc.summary()
            w.csv(f"cycle{i}.csv", ["t", "m", "s"], zip(cyc.t, cyc.polyline[:, 0], cyc.polyline[:, 1]))
            w.svg(f"cycle{i}.svg", lambda path, desc, c=cyc: plot_cycle(c, p, path, desc))
        summary[f"comparison{i}"] = entry
    w.json("planar.json", summary)
    return {k: (v["cycle"] or {}).get("period") for k, v in summary.items()}


def cmd_annulus(cfg: RunConfig, w: Writer) -> dict:
    from .plotting import plot_annulus

    p = cfg.parameters()
    try:
        c = classify(p)
    except DegenerateParameters as exc:
        raise ComputationError(str(exc)) from exc
    g = c.geometry
    if g is not None:
        w.csv("outer_boundary.csv", ["m", "s"], g.outer)
        if g.inner is not None:
            w.csv("inner_boundary.csv", ["m", "s"], g.inner)
        marks = {"O1": g.segment.o1, "O2": g.segment.o2, "L1": g.L1, "L2": g.L2, "saddle": g.saddle}
        if g.M is not None:
            marks["M"] = g.M
        w.csv("markers.csv", ["name", "m", "s"], ((k, float(a), float(b)) for k, (a, b) in marks.items()))
    payload = c.to_dict()
    if c.correct:
        payload["section"] = {"epsilon": cfg.epsilon, "intervals": g.section_intervals(cfg.epsilon)}
    w.json("classification.json", payload)
    w.svg("annulus.svg", lambda path, desc: plot_annulus(c, path, desc))
    return {"verdict": c.verdict}


def _section(cfg: RunConfig, p):
    c = classify(p)
    if not c.correct:
        raise ComputationError(f"annulus not correctly defined: {c.evidence.get('detail', c.evidence)}")
    base = SectionConfig(epsilon=cfg.epsilon, rectangle=cfg.rectangle, rtol=cfg.rtol)
    try:
        return base.validated(c.geometry, p)
    except InvalidSection as exc:
        raise ComputationError(str(exc)) from exc


def cmd_poincare(cfg: RunConfig, w: Writer) -> dict:
    p = cfg.parameters()
    sec = _section(cfg, p)
    lo, hi = sec.m_range
    rng = np.random.default_rng(cfg.seed)
    start = (lo + (hi - lo) * rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95))
    try:
        s = attractor_sample(p, sec, cfg.burn_in, cfg.samples, start=start)
    except (NoReturn, EscapedAnnulus) as exc:
        raise ComputationError(str(exc)) from exc
    w.csv("section_hits.csv", ["m", "xi"], s)
    out = {"section": sec.to_dict(), "start": list(start), "n": len(s),
           "clusters": count_clusters(s[:, 1]), "period": detect_period(s[:, 1])}
    w.json("poincare.json", out)
    return {"clusters": out["clusters"], "period": out["period"]}


def cmd_sweep(cfg: RunConfig, w: Writer) -> dict:
    from .plotting import plot_sweep

    csv_path = w.dir / "sweep.csv"
    done = read_sweep_csv(csv_path) if cfg.resume and csv_path.exists() else {}
    sec = SectionConfig(epsilon=cfg.epsilon, rectangle=cfg.rectangle, rtol=cfg.rtol)
    recs = bifurcation_sweep(
        cfg.parameters(), (cfg.nu_min, cfg.nu_max), cfg.steps, sec, burn_in=cfg.burn_in, n=cfg.samples,
        jobs=cfg.jobs, done=done,
        progress=lambda r: log.info("nu=%.4f %s clusters=%d", r.nu, r.verdict, r.clusters),
    )
    if w.wants("csv"):
        write_sweep_csv(recs, csv_path, w.header)
        w.written.append(csv_path)
    w.svg("sweep.svg", lambda path, desc: plot_sweep(recs, path, desc))
    rows = [{"nu": r.nu, "verdict": r.verdict, "clusters": r.clusters, "period": r.period, "error": r.error}
            for r in recs]
    w.json("sweep.json", {"records": rows, "reused": len(done)})
    return {"records": len(recs), "reused": len(done)}


def cmd_model_map(cfg: RunConfig, w: Writer) -> dict:
    from .plotting import plot_model_map

    c = cfg.model_map
    if cfg.beta_min is not None and cfg.beta_max is not None:
        mp = ModelMapParams(float(c.get("beta", cfg.beta_min)), float(c["u"]), float(c["k1"]), float(c["k2"]))
        betas = np.linspace(cfg.beta_min, cfg.beta_max, cfg.steps)
        res = model_map_sweep(mp, betas, burn_in=cfg.burn_in, n=cfg.samples)
        w.csv("model_map.csv", ["beta", "v", "period"],
              ((b, v, per if per is not None else "") for b, orbit, per in res for v in orbit))
        w.svg("model_map.svg", lambda path, desc: plot_model_map(res, path, desc))
        periods = sorted({per for _, _, per in res if per is not None})
        w.json("model_map.json", {"betas": betas, "periods": [per for _, _, per in res]})
        return {"periods_found": periods}
    mp = ModelMapParams(float(c["beta"]), float(c["u"]), float(c["k1"]), float(c["k2"]))
    try:
        orbit = model_map_orbit(mp, 0.0, cfg.burn_in, cfg.samples)
    except (ZeroDivisionError, OverflowError) as exc:
        raise ComputationError(str(exc)) from exc
    w.csv("model_map.csv", ["v"], ((v,) for v in orbit))
    per = detect_period(orbit)
    w.json("model_map.json", {"orbit": orbit, "period": per})
    return {"period": per}


COMMAND_FUNCS = {
    "audit": cmd_audit,
    "planar": cmd_planar,
    "annulus": cmd_annulus,
    "poincare": cmd_poincare,
    "sweep": cmd_sweep,
    "model-map": cmd_model_map,
}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poincare-annulus",
                                 description="Predator-prey chemostat: planar cycles, Poincare annulus, sweeps.")
    ap.add_argument("command", choices=list(COMMAND_FUNCS))
    ap.add_argument("--config", help="JSON run configuration; flags override it")
    ap.add_argument("--out", help="output directory (default: out)")
    ap.add_argument("--jobs", type=int, help="worker processes for the sweep")
    ap.add_argument("--tol-rel", type=float, dest="rtol")
    ap.add_argument("--tol-abs", type=float, dest="atol")
    ap.add_argument("--epsilon", type=float, help="section level s = epsilon")
    ap.add_argument("--rectangle", choices=["inner", "outer"])
    ap.add_argument("--nu-min", type=float)
    ap.add_argument("--nu-max", type=float)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--burn-in", type=int)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--resume", action="store_true", default=None, help="reuse records from an existing sweep.csv")
    ap.add_argument("--format", action="append", dest="formats", choices=["csv", "svg", "json"])
    for k in ("a1", "a2", "lambda1", "lambda2"):
        ap.add_argument(f"--{k}", type=float)
    for k in ("beta", "u", "k1", "k2"):
        ap.add_argument(f"--{k}", type=float, help="model-map constant (no default)")
    ap.add_argument("--beta-min", type=float)
    ap.add_argument("--beta-max", type=float)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    scalar = ("out", "jobs", "rtol", "atol", "epsilon", "rectangle", "nu_min", "nu_max", "steps", "burn_in",
              "samples", "seed", "resume", "formats", "beta_min", "beta_max")
    over = {k: getattr(ns, k) for k in scalar if getattr(ns, k) is not None}
    if ns.config:
        try:
            d = json.loads(Path(ns.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    else:
        d = {}
    d["command"] = ns.command
    # a config without a params block means the base set; a partial block is an error
    params = dict(d["params"]) if "params" in d else RunConfig("audit").params
    params.update({k: getattr(ns, k) for k in ("a1", "a2", "lambda1", "lambda2") if getattr(ns, k) is not None})
    d["params"] = params
    mm = dict(d.get("model_map", {}))
    mm.update({k: getattr(ns, k) for k in ("beta", "u", "k1", "k2") if getattr(ns, k) is not None})
    d["model_map"] = mm
    d.update(over)
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(ns)
        cfg.parameters()
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    w = Writer(cfg)
    try:
        w.prepare()
    except OSError as exc:
        print(f"cannot write to {cfg.out}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    try:
        result = COMMAND_FUNCS[cfg.command](cfg, w)
    except (ComputationError, DegenerateParameters) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps({"command": cfg.command, "result": result, "files": [str(p) for p in w.written]},
                     default=_jsonable))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
