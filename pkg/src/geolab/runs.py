"""Experiment drivers behind the command line: find, iterate, minimax and bangert.

Each driver takes a validated :class:`~geolab.config.RunConfig` and returns a
plain report dictionary plus flat tables; writing files is left to the CLI.
"""

from __future__ import annotations

import logging
from fractions import Fraction

import numpy as np

from .errors import ConfigError, GeolabError
from .families import build_family
from .flows import FlowConfig, descend, newton_critical, refine_critical, shell_diagnostics
from .homotopy import MinimaxConfig, bangert_decay, minimax
from .loopspace import BrokenLoop, TimeGrid, energy_Fq, random_loop
from .manifold import RoundSphere, make_isometry, make_model
from .morse import dichotomy_scan
from .records import dedup_records

log = logging.getLogger(__name__)

CONSTANT_ENERGY = 1e-10


def build_model(cfg):
    m = cfg.section("manifold")
    kind = m["model"]
    spec = {"model": kind}
    if kind == "sphere":
        spec["radius"] = m["radius"]
    elif kind == "torus":
        spec["basis"] = None if m["basis"] is None else np.asarray(m["basis"], float)
    elif kind == "ellipsoid":
        spec["axes"] = m["axes"]
    else:
        spec["radius"] = m["radius"]
        if m["length"] is not None:
            spec["length"] = m["length"]
    model = make_model(spec)
    i = cfg.section("isometry")
    ispec = {k: v for k, v in i.items() if v is not None}
    try:
        iso = make_isometry(model, ispec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"isometry: {exc}") from exc
    return model, iso


def build_grid(cfg, model):
    g = cfg.section("grid")
    b = cfg.section("")["energy_bound"]
    if g["k"] == "auto":
        if b is None:
            raise ConfigError("'grid.k = \"auto\"' needs 'energy_bound'")
        return TimeGrid.auto(g["q"], g["q_prime"], model.injrad, b)
    return TimeGrid.uniform(g["k"], g["q"], g["q_prime"])


def check_spacing(cfg, grid, model, energies):
    """Validate the step bound against the energy bound (default: 4x the largest initial energy)."""
    b = cfg.section("")["energy_bound"]
    if b is None:
        b = 4.0 * max(max(energies), 1e-12)
    ok = grid.satisfies_spacing(model.injrad, b)
    if not ok:
        msg = (f"grid step {float(np.max(grid.steps)):.4g} exceeds the bound "
               f"{grid.spacing_bound(model.injrad, b):.4g} for energy bound {b:.4g}")
        if cfg.section("grid")["spacing"] == "strict":
            raise ConfigError(msg + " (set grid.spacing = \"warn\" to proceed)")
        log.warning(msg)
    return {"energy_bound": b, "spacing_ok": bool(ok)}


def flow_config(cfg):
    f = cfg.section("flow")
    return FlowConfig(step_rule=f["step_rule"], step=f["step"], armijo=f["armijo"], grad_tol=f["grad_tol"],
                      max_iters=f["max_iters"], finite_diff_h=f["finite_diff_h"])


def _parse_rational(value):
    try:
        return Fraction(str(value))
    except ValueError as exc:
        raise ConfigError(f"'iterate.p' is not a rational number: {value!r}") from exc


def _equator_start(model, grid, rng, iso, closure, turns, amplitude):
    """Equatorial loop turning ``turns`` times with a random phase and smooth angular wiggle."""
    t = grid.taus[:-1] / grid.q
    ang = rng.uniform(0, 2 * np.pi) + 2 * np.pi * turns * t
    for j in range(1, 4):
        a, b = rng.normal(size=2) * amplitude / j
        ang += a * np.sin(2 * np.pi * j * t) + b * (np.cos(2 * np.pi * j * t) - 1.0)
    nodes = model.radius * np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=1)
    return BrokenLoop(model, grid, nodes, iso, closure).project_constraint()


def _starts(cfg, model, iso, grid, rng):
    f = cfg.section("find")
    closure = cfg.section("grid")["closure"]
    loops = []
    equator = f["start_plane"] == "equator"
    for _ in range(f["starts"]):
        if equator and isinstance(model, RoundSphere) and f["winding"]:
            loops.append(_equator_start(model, grid, rng, iso, closure, int(f["winding"][0]), f["amplitude"]))
            continue
        loop = random_loop(model, grid, rng, iso, closure, f["winding"], f["amplitude"])
        if equator:
            nodes = np.array(loop.nodes)
            nodes[:, -1] = 0.0
            loop = loop.with_nodes(model.reduce(nodes)).project_constraint()
        loops.append(loop)
    return loops


def find_records(cfg):
    """Multistart search; returns the deduplicated classes and the run statistics."""
    model, iso = build_model(cfg)
    grid = build_grid(cfg, model)
    rng = np.random.default_rng(cfg.seed)
    starts = _starts(cfg, model, iso, grid, rng)
    spacing = check_spacing(cfg, grid, model, [energy_Fq(l) for l in starts])
    flow = flow_config(cfg)
    search = cfg.section("find")["search"]
    records, failures, constants, flags = [], 0, 0, []
    for i, loop in enumerate(starts):
        try:
            if search == "critical":
                loop, _ = newton_critical(loop, flow.grad_tol)
            else:
                loop, stats = descend(loop, flow)
                if stats.flag:
                    flags.append(stats.flag)
            if energy_Fq(loop) < CONSTANT_ENERGY:
                constants += 1
                continue
            rec = refine_critical(loop, flow)
            rec.loop.check_segments()
        except GeolabError as exc:
            log.info("start %d failed: %s", i, exc)
            failures += 1
            flags.append(exc.code)
            continue
        if rec.energy < CONSTANT_ENERGY:
            constants += 1
            continue
        records.append(rec)
    classes = dedup_records(records, cfg.section("find")["dedup_tol"])
    stats = {"starts": len(starts), "converged": len(records), "constant": constants,
             "failed": failures, **spacing, "flags": sorted(set(flags))}
    return classes, stats, records


def cmd_find(cfg):
    classes, stats, records = find_records(cfg)
    rows = []
    shell = cfg.section("shell")
    for cid, (rec, count) in enumerate(classes):
        row = {"class": cid, "energy": rec.energy, "index": rec.index, "nullity": rec.nullity,
               "grad_norm": rec.grad_norm, "basins": count, "speed_defect": rec.speed_defect}
        if shell["rho1"] is not None and shell["rho2"] is not None:
            diag = shell_diagnostics(rec, shell["rho1"], shell["rho2"], shell["n_samples"], rng=cfg.seed)
            row.update(mu=diag.mu, epsilon=diag.epsilon)
        rows.append(row)
    report = {"command": "find", "stats": stats, "classes": rows,
              "records": [rec.to_dict() for rec, _ in classes]}
    return report, {"records": rows}


def cmd_iterate(cfg):
    classes, stats, _ = find_records(cfg)
    it = cfg.section("iterate")
    p = _parse_rational(it["p"])
    q = Fraction(str(cfg.section("grid")["q"]))
    rows, scans = [], []
    for cid, (rec, _) in enumerate(classes):
        scan = dichotomy_scan(rec, p, q, it["m_max"], threshold=it["threshold"])
        for row in scan.to_rows():
            rows.append({"class": cid, "energy": rec.energy, **row})
        scans.append({"class": cid, "energy": rec.energy, "m_values": scan.m_values,
                      "indices": scan.indices, "nullities": scan.nullities, "verdict": scan.verdict})
    report = {"command": "iterate", "stats": stats, "scans": scans}
    return report, {"scan": rows}


def _family(cfg, model, iso, grid):
    f = dict(cfg.section("family"))
    kind = f["kind"]
    keep = {"translates": ("winding", "samples", "amplitude"), "sweep": ("samples",),
            "point_circle": ("samples", "radius", "base")}[kind]
    spec = {"kind": kind, **{k: f[k] for k in keep if f[k] is not None}}
    try:
        return build_family(model, grid, iso, spec)
    except ValueError as exc:
        raise ConfigError(f"family: {exc}") from exc


def cmd_minimax(cfg):
    model, iso = build_model(cfg)
    grid = build_grid(cfg, model)
    fam = _family(cfg, model, iso, grid)
    spacing = check_spacing(cfg, grid, model, fam.energies())
    mm = cfg.section("minimax")
    mcfg = MinimaxConfig(rounds=mm["rounds"], window=mm["window"], stable_tol=mm["stable_tol"],
                         critical_tol=mm["critical_tol"], max_samples=mm["max_samples"])
    res = minimax(fam, mcfg, flow_config(cfg))
    rec = res.record
    report = {"command": "minimax", "c": res.c, "converged": res.converged, "flag": res.flag,
              "rounds": len(res.trace), "samples": len(res.family), **spacing,
              "record": None if rec is None else rec.to_dict()}
    trace = [{"round": i, "max_energy": e} for i, e in enumerate(res.trace)]
    return report, {"trace": trace}


def cmd_bangert(cfg):
    model, iso = build_model(cfg)
    grid = build_grid(cfg, model)
    if not iso.is_identity:
        raise ConfigError("bangert needs the identity isometry")
    fam = _family(cfg, model, iso, grid)
    spacing = check_spacing(cfg, grid, model, fam.energies())
    b = cfg.section("bangert")
    s_values = np.linspace(0.0, 1.0, max(2, b["s_samples"]))
    decay = bangert_decay(fam, tuple(int(m) for m in b["m_values"]), s_values)
    report = {"command": "bangert", **spacing, "exponent": decay["exponent"], "C": decay["C"],
              "C_fit": decay["C_fit"], "rows": decay["rows"]}
    return report, {"decay": decay["rows"]}


COMMANDS = {"find": cmd_find, "iterate": cmd_iterate, "minimax": cmd_minimax, "bangert": cmd_bangert}
