"""Configuration-driven command line front end.

One JSON config document drives measure construction, potential evaluation,
the fixed-point solver, embedding-constant tables, the intrinsic potential,
and the criteria/inequality verifiers.  Every artifact embeds the params, the
config hash, and the library version; identical (config, seed) runs produce
byte-identical artifacts at any thread count (work is split over fixed blocks
merged in index order, never racing reductions).

Exit codes: 0 success, 2 validation error, 3 numeric failure (non-finite or
divergent), 4 verdict Fails under --assert, 64 unknown command.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .criteria import (bmo_criteria, bmo_wolff_criterion,
                       capacity_ball_criterion, lr_existence,
                       lr_local_existence, make_probe_grid,
                       verify_enhanced_wolff, verify_wolff_inequality)
from .dyadic import dyadic_cover
from .errors import (Divergent, IncompleteTable, NonIntegrableKernel,
                     ValidationError)
from .kappa import (ball_grid, build_kappa_table, intrinsic_potential,
                    load_kappa_table, log_radius_grid, save_kappa_table,
                    sup_functional)
from .measure import (Ball, Empty, FromFile, GridMeasure, GridSpec, Params,
                      RadialPower, RandomCells, UniformBall,
                      build_grid_measure, save_measure)
from .potentials import QuadratureSpec, wolff_field, riesz, finiteness_test
from .solver import solve_minimal, verify_two_sided

COMMANDS = ("gen", "potential", "solve", "kappa", "intrinsic", "criteria",
            "verify", "bench")

USAGE = f"""usage: wolffkit <command> --config <path> [--out DIR] [--threads K] [--seed N] [--assert]
commands: {', '.join(COMMANDS)}
Environment overrides: WOLFFKIT_OUT, WOLFFKIT_THREADS, WOLFFKIT_SEED, WOLFFKIT_ASSERT.
"""


def _as_float(v):
    # config floats may be JSON numbers or decimal strings
    if isinstance(v, str):
        return float(v)
    if isinstance(v, (int, float)):
        return float(v)
    raise ValidationError(f"expected a number, got {v!r}")


@dataclass
class RunConfig:
    raw: dict
    params: Params
    r: float | None
    measure_spec: object
    grid: GridSpec | None
    subsamples: int
    probes_per_side: int
    probe_box: list
    radii_per_decade: int
    radii_max_factor: float
    dyadic_window: tuple
    solver_tol: float
    solver_max_iters: int
    quad_samples: int
    seed: int
    output_dir: str
    kappa_table_csv: str | None

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def load_config(path: str, seed_override=None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc

    try:
        pr = raw["params"]
        params = Params(int(pr["n"]), _as_float(pr["alpha"]),
                        _as_float(pr["p"]), _as_float(pr["q"]))
        r = _as_float(pr["r"]) if "r" in pr else None
    except KeyError as exc:
        raise ValidationError(f"config params missing key {exc}") from exc

    g = raw.get("grid", {})
    dim = params.n
    box = g.get("box") or [[-1.0, 1.0]] * dim
    box = [(_as_float(lo), _as_float(hi)) for lo, hi in box]
    grid = GridSpec(int(g.get("cells_per_side", 8)), tuple(box))
    subsamples = int(g.get("subsamples", 1))

    mspec_raw = raw.get("measure", {"kind": "empty"})
    kind = mspec_raw.get("kind", "empty")
    if kind == "empty":
        mspec = Empty(dim)
    elif kind == "uniform-ball":
        mspec = UniformBall(tuple(_as_float(v) for v in mspec_raw.get("center", [0.0] * dim)),
                            _as_float(mspec_raw.get("radius", 1.0)),
                            _as_float(mspec_raw.get("mass", 1.0)))
    elif kind == "radial-power":
        mspec = RadialPower(_as_float(mspec_raw.get("exponent", 1.0)),
                            _as_float(mspec_raw.get("r_inner", 0.1)),
                            _as_float(mspec_raw.get("r_outer", 1.0)),
                            _as_float(mspec_raw.get("mass", 1.0)),
                            tuple(_as_float(v) for v in mspec_raw["center"])
                            if "center" in mspec_raw else None)
    elif kind == "random-cells":
        mspec = RandomCells(int(mspec_raw.get("seed", 0)), tuple(box),
                            _as_float(mspec_raw.get("fill", 0.25)),
                            _as_float(mspec_raw["mass"]) if "mass" in mspec_raw else None)
    elif kind == "from-file":
        mspec = FromFile(mspec_raw["path"])
    else:
        raise ValidationError(f"unknown measure kind {kind!r}")

    pb = raw.get("probes", {})
    probes_per_side = int(pb.get("per_side", 3))
    probe_box = [( _as_float(lo), _as_float(hi)) for lo, hi in pb.get("box", box)]

    rd = raw.get("radii", {})
    dz = raw.get("dyadic", {})
    sv = raw.get("solver", {})
    qd = raw.get("quadrature", {})

    seed = int(raw.get("seed", 0))
    if seed_override is not None:
        seed = int(seed_override)

    return RunConfig(
        raw=raw, params=params, r=r, measure_spec=mspec, grid=grid,
        subsamples=subsamples, probes_per_side=probes_per_side,
        probe_box=probe_box,
        radii_per_decade=int(rd.get("per_decade", 8)),
        radii_max_factor=_as_float(rd.get("max_factor", 4.0)),
        dyadic_window=(int(dz.get("j_min", 0)), int(dz.get("j_max", 2))),
        solver_tol=_as_float(sv.get("tol", 1e-8)),
        solver_max_iters=int(sv.get("max_iters", 500)),
        quad_samples=int(qd.get("samples", 4096)),
        seed=seed,
        output_dir=raw.get("output_dir", "."),
        kappa_table_csv=raw.get("kappa_table_csv"),
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _meta_lines(cfg: RunConfig) -> list:
    p = cfg.params
    return [
        f"# wolffkit {__version__}",
        f"# config_hash {cfg.config_hash}",
        f"# params n={p.n} alpha={p.alpha!r} p={p.p!r} q={p.q!r} seed={cfg.seed}",
    ]


def _write_csv(path: Path, meta: list, header: list, rows) -> None:
    lines = list(meta) + [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    return str(o)


def _write_json(path: Path, payload: dict) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return repr(v)
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v
    path.write_text(json.dumps(clean(payload), sort_keys=True, indent=1,
                               default=_json_default) + "\n", encoding="utf-8")


def _build_measure(cfg: RunConfig) -> GridMeasure:
    return build_grid_measure(cfg.measure_spec, cfg.grid, cfg.subsamples)


def _probe_points(cfg: RunConfig):
    return make_probe_grid(cfg.probe_box, cfg.probes_per_side)


def _ball_regions(cfg: RunConfig, m: GridMeasure):
    pts, _ = _probe_points(cfg)
    if m.is_empty():
        return [], pts, np.array([])
    r_lo = m.side
    r_hi = cfg.radii_max_factor * 2.0 * max(m.support_radius(), m.side)
    radii = log_radius_grid(r_lo, r_hi, cfg.radii_per_decade)
    return ball_grid(pts, radii), pts, radii


def _ball_table(cfg: RunConfig, m: GridMeasure, threads: int):
    if cfg.kappa_table_csv:
        return load_kappa_table(cfg.kappa_table_csv, cfg.params)
    regions, _, _ = _ball_regions(cfg, m)
    return build_kappa_table(m, cfg.params, regions, tol=cfg.solver_tol,
                             threads=threads)


def _cube_table(cfg: RunConfig, m: GridMeasure, threads: int):
    if cfg.kappa_table_csv:
        return load_kappa_table(cfg.kappa_table_csv, cfg.params)
    j_min, j_max = cfg.dyadic_window
    cubes = dyadic_cover(m, j_min, j_max)
    return build_kappa_table(m, cfg.params, cubes, tol=cfg.solver_tol,
                             threads=threads)


# -- command implementations -------------------------------------------------


def cmd_gen(cfg: RunConfig, out: Path, threads: int) -> tuple[int, dict]:
    m = _build_measure(cfg)
    path = out / f"gen-{cfg.config_hash}.csv"
    save_measure(m, path)
    return 0, {"cells": m.num_cells, "total_mass": m.total_mass(),
               "artifact": str(path)}


def cmd_potential(cfg: RunConfig, out: Path, threads: int) -> tuple[int, dict]:
    m = _build_measure(cfg)
    pts, _ = _probe_points(cfg)
    fin = finiteness_test(m, cfg.params)
    if fin.verdict != "Finite":
        return 3, {"error": "radial potential diverges (alpha*p >= n, sigma != 0)"}
    fld = wolff_field(m, cfg.params, pts, threads=threads)
    path = out / f"potential-{cfg.config_hash}.csv"
    header = [f"x{i+1}" for i in range(m.dim)] + ["value"]
    rows = [list(pt) + [v] for pt, v in zip(fld.points, fld.values)]
    _write_csv(path, _meta_lines(cfg), header, rows)
    return 0, {"points": len(rows), "artifact": str(path)}


def cmd_solve(cfg: RunConfig, out: Path, threads: int) -> tuple[int, dict]:
    m = _build_measure(cfg)
    rep = solve_minimal(m, cfg.params, tol=cfg.solver_tol,
                        max_iters=cfg.solver_max_iters, threads=threads)
    path = out / f"solve-{cfg.config_hash}.csv"
    meta = _meta_lines(cfg) + [
        f"# iterations {rep.iterations}",
        f"# residual {rep.residual!r}",
        f"# status {rep.status}",
    ]
    header = [f"x{i+1}" for i in range(m.dim)] + ["u"]
    rows = [list(pt) + [v] for pt, v in zip(rep.u.points, rep.u.values)]
    _write_csv(path, meta, header, rows)
    code = 0 if rep.status in ("Converged", "TrivialOnly") else 3
    return code, {"status": rep.status, "iterations": rep.iterations,
                  "residual": rep.residual, "artifact": str(path)}


def cmd_kappa(cfg: RunConfig, out: Path, threads: int) -> tuple[int, dict]:
    m = _build_measure(cfg)
    kt = _ball_table(cfg, m, threads)
    path = out / f"kappa-{cfg.config_hash}.csv"
    save_kappa_table(kt, path)
    return 0, {"regions": len(kt.entries), "global_kappa": kt.global_kappa,
               "artifact": str(path)}


def cmd_intrinsic(cfg: RunConfig, out: Path, threads: int) -> tuple[int, dict]:
    m = _build_measure(cfg)
    kt = _ball_table(cfg, m, threads)
    pts, _ = _probe_points(cfg)
    rows = []
    for x in pts:
        rows.append(list(x) + [intrinsic_potential(kt, cfg.params, x),
                               sup_functional(kt, cfg.params, x)])
    path = out / f"intrinsic-{cfg.config_hash}.csv"
    header = [f"x{i+1}" for i in range(m.dim)] + ["intrinsic", "sup"]
    _write_csv(path, _meta_lines(cfg), header, rows)
    return 0, {"points": len(rows), "artifact": str(path)}


def cmd_criteria(cfg: RunConfig, out: Path, threads: int) -> tuple[int, dict]:
    m = _build_measure(cfg)
    kt = _ball_table(cfg, m, threads)
    pts, vol = _probe_points(cfg)
    reports = {}
    if cfg.r is not None:
        rep = lr_existence(m, cfg.params, cfg.r, kt, probes=pts, probe_volume=vol)
        reports["lr_existence"] = {"verdict": rep.verdict, "constants": rep.constants,
                                   "witnesses": rep.witnesses}
    regions, _, _ = _ball_regions(cfg, m)
    sample = regions[: min(len(regions), 256)]
    bmo = bmo_criteria(m, cfg.params, kt, sample)
    reports["bmo"] = {"verdict": bmo.verdict, "constants": bmo.constants}
    if cfg.params.p < cfg.params.n:
        cap = capacity_ball_criterion(m, cfg.params, sample, "cap-p")
        reports["capacity"] = {"verdict": cap.verdict, "constants": cap.constants}
    payload = {"name": "criteria", "config_hash": cfg.config_hash,
               "version": __version__, "reports": reports}
    path = out / f"criteria-{cfg.config_hash}.json"
    _write_json(path, payload)
    return 0, {"artifact": str(path)}


def cmd_verify(cfg: RunConfig, out: Path, threads: int,
               target: str, assert_mode: bool) -> tuple[int, dict]:
    m = _build_measure(cfg)
    verdict = "Holds"
    constants: dict = {}
    if target == "enhanced-wolff":
        kt = _cube_table(cfg, m, threads)
        if cfg.r is None:
            raise ValidationError("enhanced-wolff verification needs params.r")
        rep = verify_enhanced_wolff(m, cfg.params, cfg.r, kt)
        constants = rep.constants
        verdict = "Holds" if rep.constants["direction_holds"] else "Fails"
    elif target == "wolff-inequality":
        rep = verify_wolff_inequality(m, cfg.params,
                                      QuadratureSpec(cfg.quad_samples, cfg.seed))
        constants = rep.constants
        verdict = "Holds" if rep.constants.get("fubini_within_3se", True) else "Fails"
    elif target == "two-sided":
        kt = _ball_table(cfg, m, threads)
        srep = solve_minimal(m, cfg.params, tol=cfg.solver_tol,
                             max_iters=cfg.solver_max_iters, threads=threads)
        if srep.status == "TrivialOnly":
            constants = {"status": srep.status}
        else:
            pts, _ = _probe_points(cfg)
            rep = verify_two_sided(srep, m, cfg.params, kt, probes=pts)
            constants = {"min_ratio": rep.min_ratio, "max_ratio": rep.max_ratio,
                         "spread": rep.spread}
            verdict = "Holds" if math.isfinite(rep.spread) else "Fails"
    elif target == "sup-bound":
        kt = _ball_table(cfg, m, threads)
        pts, _ = _probe_points(cfg)
        bound = 2.0 ** cfg.params.gamma / math.log(2.0)
        worst = 0.0
        for x in pts:
            k = intrinsic_potential(kt, cfg.params, x)
            s = sup_functional(kt, cfg.params, x)
            if k > 0:
                worst = max(worst, s / k)
            elif s > 0:
                worst = math.inf
        constants = {"max_sup_over_integral": worst, "bound": bound}
        verdict = "Holds" if worst <= bound * (1 + 1e-12) else "Fails"
    else:
        raise ValidationError(f"unknown verify target {target!r}")

    payload = {"name": f"verify-{target}", "verdict": verdict,
               "constants": constants, "config_hash": cfg.config_hash,
               "version": __version__}
    path = out / f"verify-{target}-{cfg.config_hash}.json"
    _write_json(path, payload)
    code = 4 if (assert_mode and verdict == "Fails") else 0
    return code, {"verdict": verdict, "artifact": str(path)}


def cmd_bench(cfg: RunConfig, out: Path, threads: int) -> tuple[int, dict]:
    m = _build_measure(cfg)
    pts, _ = _probe_points(cfg)
    t0 = time.perf_counter()
    fld = wolff_field(m, cfg.params, pts, threads=threads)
    t1 = time.perf_counter()
    rep = solve_minimal(m, cfg.params, tol=cfg.solver_tol,
                        max_iters=cfg.solver_max_iters, threads=threads)
    t2 = time.perf_counter()
    # artifact holds only deterministic content; timings go to stdout
    digest = hashlib.sha256(np.ascontiguousarray(fld.values).tobytes()).hexdigest()[:16]
    payload = {"name": "bench", "cells": m.num_cells, "atoms": m.num_atoms,
               "probe_points": int(pts.shape[0]),
               "solver_iterations": rep.iterations, "solver_status": rep.status,
               "field_checksum": digest, "config_hash": cfg.config_hash,
               "version": __version__}
    path = out / f"bench-{cfg.config_hash}.json"
    _write_json(path, payload)
    print(f"bench: field {t1 - t0:.3f}s solve {t2 - t1:.3f}s "
          f"({rep.iterations} iterations)")
    return 0, {"artifact": str(path)}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0 if argv else 64
    command = argv[0]
    if command not in COMMANDS:
        print(USAGE)
        return 64

    parser = argparse.ArgumentParser(prog=f"wolffkit {command}", add_help=True)
    parser.add_argument("target", nargs="?", default=None,
                        help="verify target: enhanced-wolff | wolff-inequality | two-sided | sup-bound")
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--assert", dest="assert_mode", action="store_true")
    try:
        args = parser.parse_args(argv[1:])
    except SystemExit:
        return 2

    env = os.environ
    out_dir = args.out or env.get("WOLFFKIT_OUT") or None
    threads = args.threads if args.threads is not None else int(env.get("WOLFFKIT_THREADS", "1"))
    seed = args.seed if args.seed is not None else (
        int(env["WOLFFKIT_SEED"]) if "WOLFFKIT_SEED" in env else None)
    assert_mode = args.assert_mode or env.get("WOLFFKIT_ASSERT") == "1"

    try:
        cfg = load_config(args.config, seed_override=seed)
        out = Path(out_dir or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if command == "gen":
            code, info = cmd_gen(cfg, out, threads)
        elif command == "potential":
            code, info = cmd_potential(cfg, out, threads)
        elif command == "solve":
            code, info = cmd_solve(cfg, out, threads)
        elif command == "kappa":
            code, info = cmd_kappa(cfg, out, threads)
        elif command == "intrinsic":
            code, info = cmd_intrinsic(cfg, out, threads)
        elif command == "criteria":
            code, info = cmd_criteria(cfg, out, threads)
        elif command == "verify":
            target = args.target or "wolff-inequality"
            code, info = cmd_verify(cfg, out, threads, target, assert_mode)
        elif command == "bench":
            code, info = cmd_bench(cfg, out, threads)
        else:  # pragma: no cover
            print(USAGE)
            return 64
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (NonIntegrableKernel, Divergent, IncompleteTable) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3

    print(json.dumps(info, sort_keys=True, default=_json_default))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
