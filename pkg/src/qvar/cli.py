"""Command-line experiment runner.

Every subcommand reads one JSON config, validates it against a schema
(unknown keys are rejected), runs one experiment and writes a canonical JSON
document ``{"schema_version": 1, "command": ..., "seed": ..., "result": ...}``.

Exit codes: 0 success, 2 config or schema error (nothing is written), 3
non-finite numerical result.  Verdicts such as "violation" are data.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from ._io import NonFiniteError, canonical_dumps
from ._validation import DomainError, InvalidInputError
from .convexity_lab import (
    QCConfig,
    lsc_margin,
    necessity_experiment,
    polyconvexity_certificate,
    quasiconvexity_test,
    rank_one_min,
    semiellipticity_test,
    verify_certificate,
)
from .currents import (
    DifferentialForm,
    null_lagrangian_gap,
    null_lagrangian_gap_boundary,
    pair_boundary,
    pair_graph,
    exterior_derivative,
    random_form,
    trace_mismatch,
)
from .equiint import (
    BitingScheduleError,
    SampledFunctionSeq,
    biting_truncations,
    dlvp_check,
    inverse_schedule,
    read_sequence_csv,
    spike_sequence,
    sqrt_schedule,
)
from .integrands import QuadraticIntegrand, energy, integrand_from_json
from .minors import PolyaffineFn, tau
from .qfield import AffineQMap, QSheetField, blowup_residual
from .qspace import QPoint, metric_g, optimal_matching
from .synthetic import (
    equal_trace_pair,
    perturb_interior,
    quadratic_qmap,
    random_affine_map,
    random_field,
    random_quadratic_qmap,
)

SCHEMA_VERSION = 1

# ---------------------------------------------------------------------------
# schemas

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": _NUM}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}
_OBJ = {"type": "object"}


def _strict(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_COMMON = {
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "out": {"type": "string"},
}
_DIMS = {"m": _POS_INT, "n": _POS_INT, "Q": _POS_INT}

_G = _strict({
    "type": {"enum": ["power", "frobenius_power", "minor_quadratic"]},
    "p": _NUM, "c": _NUM, "weights": _VEC, "value_weight": _NUM,
}, ["type"])

_INTEGRAND = {"oneOf": [
    _strict({"kind": {"const": "dirichlet"}}, ["kind"]),
    _strict({"kind": {"const": "constant"}, "value": _NUM}, ["kind"]),
    _strict({"kind": {"const": "quadratic"}, "matrix": _MAT}, ["kind", "matrix"]),
    _strict({"kind": {"enum": ["family_a", "family_b", "family_c"]}, "g": _G}, ["kind", "g"]),
]}

_AFFINE = _strict({
    "groups": {"type": "array", "minItems": 1, "items": _strict({"q": _POS_INT, "a": _VEC, "L": _MAT}, ["q", "a", "L"])},
    "origin": _VEC,
}, ["groups"])

_OPTIMIZER = _strict({
    "cells_per_side": {"type": "integer", "minimum": 2},
    "restarts": _POS_INT,
    "max_iters": {"type": "integer", "minimum": 0},
    "tol": {"type": "number", "minimum": 0},
    "laminate_seeds": {"type": "boolean"},
    "rematch_every": _POS_INT,
    "stop_on_violation": {"type": "boolean"},
    "perturbation": _NUM,
    "laminate_amplitude": _NUM,
    "fd_step": {"type": "number", "exclusiveMinimum": 0},
    "gtol": {"type": "number", "minimum": 0},
})

_RANDOM_FIELD = _strict({"cells_per_side": _POS_INT, "kind": {"enum": ["rough", "branched"]}}, ["cells_per_side"])
_SOURCE = {"oneOf": [
    _strict({"csv": {"type": "string"}, "cell_volume": {"type": "number", "exclusiveMinimum": 0}}, ["csv"]),
    _strict({"spike": _strict({"ks": {"type": "array", "items": _POS_INT, "minItems": 1}, "cells": _POS_INT}, ["ks"])},
            ["spike"]),
]}

SCHEMAS = {
    "metric": _strict({**_COMMON, "T1": _MAT, "T2": _MAT}, ["T1", "T2"]),
    "energy": _strict({**_COMMON, **_DIMS, "integrand": _INTEGRAND, "field": _OBJ, "affine": _AFFINE,
                       "cells_per_side": _POS_INT, "order": _POS_INT}, ["m", "n", "Q", "integrand"]),
    "qc-test": _strict({**_COMMON, **_DIMS, "integrand": _INTEGRAND, "affine": _AFFINE, "optimizer": _OPTIMIZER,
                        "verify": {"type": "boolean"}, "include_certificate": {"type": "boolean"}},
                       ["m", "n", "Q"]),
    "semielliptic": _strict({**_COMMON, **_DIMS, "matrix": _MAT,
                             "optimizer": _strict({"cells_per_side": {"type": "integer", "minimum": 2},
                                                   "tol": {"type": "number", "minimum": 0}})},
                            ["m", "n", "matrix"]),
    "rank-one": _strict({**_COMMON, "m": _POS_INT, "n": _POS_INT, "matrix": _MAT, "n_starts": _POS_INT,
                         "max_iter": _POS_INT}, ["m", "n", "matrix"]),
    "polyconvex-cert": _strict({**_COMMON, "m": _POS_INT, "n": _POS_INT, "matrix": _MAT, "n_starts": _POS_INT,
                                "max_iter": _POS_INT, "tol": {"type": "number", "minimum": 0}},
                               ["m", "n", "matrix"]),
    "stokes": _strict({**_COMMON, **_DIMS, "field": _OBJ, "random_field": _RANDOM_FIELD, "form": _OBJ,
                       "random_form": _strict({"D": {"type": "integer", "minimum": 0}, "n_terms": _POS_INT})},
                      ["m", "n", "Q"]),
    "null-lagrangian": _strict({**_COMMON, **_DIMS, "polyaffine": _strict({"c0": _NUM, "zeta": _VEC}, ["zeta"]),
                                "w1": _OBJ, "w2": _OBJ, "cells_per_side": _POS_INT}, ["m", "n", "Q"]),
    "fold": _strict({**_COMMON, **_DIMS, "integrand": _INTEGRAND, "affine": _AFFINE,
                     "competitors": {"type": "array", "items": _OBJ}, "cells_per_side": _POS_INT,
                     "amplitude": _NUM, "ks": {"type": "array", "items": _POS_INT, "minItems": 1},
                     "r": {"type": "number", "exclusiveMinimum": 0}, "p": {"type": "number", "minimum": 1}},
                    ["m", "n", "Q"]),
    "lsc": _strict({**_COMMON, **_DIMS, "integrand": _INTEGRAND, "affine": _AFFINE,
                    "competitors": {"type": "array", "items": _OBJ}, "cells_per_side": _POS_INT,
                    "amplitude": _NUM}, ["m", "n", "Q"]),
    "blowup": _strict({**_COMMON, **_DIMS, "sheets": {"type": "array", "items": _strict(
        {"c": _VEC, "L": _MAT, "H": {"type": "array"}}, ["c", "L"])}, "x0": _VEC,
        "js": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "p": {"type": "number", "minimum": 1}, "subdivisions": _POS_INT, "csv_out": {"type": "string"}},
        ["m", "n", "Q"]),
    "biting": _strict({**_COMMON, "source": _SOURCE,
                       "schedule": _strict({"kind": {"enum": ["sqrt", "inverse"]},
                                            "C": {"type": "number", "exclusiveMinimum": 0}}, ["kind"]),
                       "t0": {"type": "number", "exclusiveMinimum": 0}, "max_levels": _POS_INT,
                       "csv_out": {"type": "string"}}, ["source"]),
    "dlvp": _strict({**_COMMON, "source": _SOURCE,
                     "phi": _strict({"kind": {"enum": ["power", "tlogt"]}, "exponent": {"type": "number",
                                                                                       "exclusiveMinimum": 1}},
                                    ["kind"]),
                     "cap": {"type": "number", "exclusiveMinimum": 0}}, ["source", "phi"]),
}


class ConfigError(Exception):
    """Config unreadable, schema-invalid or semantically inconsistent."""


# ---------------------------------------------------------------------------
# helpers


def _affine(cfg: dict, seed: int) -> AffineQMap:
    if "affine" in cfg:
        u = AffineQMap.from_json(cfg["affine"])
        if (u.m, u.n, u.Q) != (cfg["m"], cfg["n"], cfg["Q"]):
            raise InvalidInputError("affine map dimensions disagree with m, n, Q")
        return u
    return random_affine_map(cfg["m"], cfg["n"], cfg["Q"], seed)


def _integrand(cfg: dict):
    return integrand_from_json(cfg.get("integrand", {"kind": "dirichlet"}), cfg["m"], cfg["n"], cfg["Q"])


def _field(doc: dict, cfg: dict) -> QSheetField:
    u = QSheetField.from_json(doc)
    if (u.m, u.n, u.Q) != (cfg["m"], cfg["n"], cfg["Q"]):
        raise InvalidInputError("field dimensions disagree with m, n, Q")
    return u


def _competitors(cfg: dict, u: AffineQMap, seed: int) -> list:
    if "competitors" in cfg:
        w = [QSheetField.from_json(d) for d in cfg["competitors"]]
        if len(w) != u.J:
            raise InvalidInputError("one competitor per group of the affine map required")
        return w
    N = cfg.get("cells_per_side", 8)
    amp = cfg.get("amplitude", 0.1)
    return [perturb_interior(u.group_field(j, N), [seed, j], amp) for j in range(u.J)]


def _source(cfg: dict) -> SampledFunctionSeq:
    src = cfg["source"]
    if "csv" in src:
        return read_sequence_csv(src["csv"], src.get("cell_volume"))
    return spike_sequence(src["spike"]["ks"], src["spike"].get("cells", 1024))


def _write_csv(path: str, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format(v, ".17g") if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands; each returns (result dict, summary line, csv writers)


def cmd_metric(cfg, seed):
    T1, T2 = QPoint(cfg["T1"]), QPoint(cfg["T2"])
    g = metric_g(T1, T2)
    return {"g": g, "matching": optimal_matching(T1, T2).tolist()}, f"G = {g:.12g}", []


def cmd_energy(cfg, seed):
    f = _integrand(cfg)
    if "field" in cfg:
        u = _field(cfg["field"], cfg)
    elif "affine" in cfg:
        u = _affine(cfg, seed).to_field(cfg.get("cells_per_side", 4))
    else:
        raise InvalidInputError("energy needs a 'field' or an 'affine' map")
    e = energy(f, u, cfg.get("order", 4))
    return {"energy": e, "cells": u.n_cells}, f"energy = {e:.12g}", []


def cmd_qc_test(cfg, seed):
    f = _integrand(cfg)
    u = _affine(cfg, seed)
    qc = QCConfig.from_json({**cfg.get("optimizer", {}), "seed": seed})
    verdict = quasiconvexity_test(f, u, qc)
    res = verdict.to_json(include_certificate=cfg.get("include_certificate", True))
    res["affine"] = u.to_json()
    res["optimizer"] = qc.to_json()
    if cfg.get("verify", True) and verdict.certificate is not None:
        res["verification"] = verify_certificate(f, u, verdict)
    return res, f"status = {verdict.status}, margin = {verdict.margin:.6g}", []


def cmd_semielliptic(cfg, seed):
    A = QuadraticIntegrand(cfg["matrix"], cfg["m"], cfg["n"])
    opt = cfg.get("optimizer", {})
    qc = QCConfig(cells_per_side=opt.get("cells_per_side", 8), tol=opt.get("tol", 1e-9), seed=seed)
    verdict = semiellipticity_test(A, cfg.get("Q", 1), qc)
    res = verdict.to_json(include_certificate=False)
    return res, f"status = {verdict.status}, margin = {verdict.margin:.6g}", []


def cmd_rank_one(cfg, seed):
    A = QuadraticIntegrand(cfg["matrix"], cfg["m"], cfg["n"])
    r = rank_one_min(A, cfg.get("n_starts", 24), seed, cfg.get("max_iter", 500))
    return {"value": r.value, "a": r.a, "b": r.b}, f"rank-one minimum = {r.value:.12g}", []


def cmd_polyconvex_cert(cfg, seed):
    A = QuadraticIntegrand(cfg["matrix"], cfg["m"], cfg["n"])
    kw = {k: cfg[k] for k in ("n_starts", "max_iter", "tol") if k in cfg}
    cert = polyconvexity_certificate(A, seed=seed, **kw)
    res = cert.to_json()
    res["inconclusive_for_quasiconvexity"] = min(cfg["m"], cfg["n"]) >= 3 and not cert.feasible
    return res, f"feasible = {cert.feasible}, min eigenvalue = {cert.min_eigenvalue:.6g}", []


def cmd_stokes(cfg, seed):
    m, n, Q = cfg["m"], cfg["n"], cfg["Q"]
    if "field" in cfg:
        u = _field(cfg["field"], cfg)
    else:
        rf = cfg.get("random_field", {"cells_per_side": 4})
        u = random_field(m, n, Q, rf["cells_per_side"], [seed, 0], rf.get("kind", "rough"))
    if "form" in cfg:
        omega = DifferentialForm.from_json(cfg["form"], m, n)
    else:
        rf = cfg.get("random_form", {})
        omega = random_form(m - 1, m, n, rf.get("D", 3), [seed, 1], rf.get("n_terms"))
    graph = pair_graph(u, exterior_derivative(omega))
    boundary = pair_boundary(u, omega)
    res = {"graph_pairing": graph, "boundary_pairing": boundary, "residual": graph - boundary,
           "form": omega.to_json()}
    return res, f"stokes residual = {graph - boundary:.3e}", []


def cmd_null_lagrangian(cfg, seed):
    m, n, Q = cfg["m"], cfg["n"], cfg["Q"]
    if "polyaffine" in cfg:
        P = PolyaffineFn(cfg["polyaffine"].get("c0", 0.0), cfg["polyaffine"]["zeta"], m, n)
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
        P = PolyaffineFn(rng.standard_normal(), rng.standard_normal(tau(m, n)), m, n)
    if "w1" in cfg or "w2" in cfg:
        if not ("w1" in cfg and "w2" in cfg):
            raise InvalidInputError("give both w1 and w2 or neither")
        w1, w2 = _field(cfg["w1"], cfg), _field(cfg["w2"], cfg)
    else:
        w1, w2 = equal_trace_pair(m, n, Q, cfg.get("cells_per_side", 4), seed)
    gap = null_lagrangian_gap(P, w1, w2)
    res = {"gap": gap, "gap_boundary_route": null_lagrangian_gap_boundary(P, w1, w2),
           "trace_mismatch": trace_mismatch(w1, w2), "polyaffine": P.to_json()}
    return res, f"null-Lagrangian gap = {gap:.3e}", []


def cmd_fold(cfg, seed):
    f, u = _integrand(cfg), _affine(cfg, seed)
    w = _competitors(cfg, u, seed)
    res = necessity_experiment(f, u, w, cfg.get("ks", [1, 2, 4, 8]), cfg.get("r", 1.0), cfg.get("p", 2.0))
    res["affine"] = u.to_json()
    return res, (f"max relative deviation = {res['max_relative_deviation']:.3e}, "
                 f"semicontinuity failure = {res['semicontinuity_failure']}"), []


def cmd_lsc(cfg, seed):
    f, u = _integrand(cfg), _affine(cfg, seed)
    w = _competitors(cfg, u, seed)
    margin = lsc_margin(f, u, w)
    return {"margin": margin, "beats_affine": margin < 0, "affine": u.to_json()}, f"lsc margin = {margin:.6g}", []


def cmd_blowup(cfg, seed):
    m, n, Q = cfg["m"], cfg["n"], cfg["Q"]
    if "sheets" in cfg:
        sh = cfg["sheets"]
        if len(sh) != Q:
            raise InvalidInputError("one sheet per Q required")
        H = [s.get("H", np.zeros((n, m, m)).tolist()) for s in sh]
        try:
            f = quadratic_qmap([s["c"] for s in sh], [s["L"] for s in sh], np.asarray(H, dtype=float))
        except ValueError as exc:
            raise InvalidInputError(f"inconsistent sheet shapes: {exc}") from exc
        if (f.m, f.n) != (m, n):
            raise InvalidInputError("sheet shapes disagree with m, n")
    else:
        f = random_quadratic_qmap(m, n, Q, seed)
    x0 = np.asarray(cfg.get("x0", np.zeros(m)), dtype=float)
    if x0.shape != (m,):
        raise InvalidInputError("x0 must have length m")
    T = f.first_order(x0)
    js = cfg.get("js", [1, 2, 3, 4, 5, 6])
    p = cfg.get("p", 2.0)
    rhos = [2.0 ** (-j) for j in js]
    vals = [blowup_residual(f, x0, T, r, p, cfg.get("subdivisions", 4)) for r in rhos]
    mono = all(b < a for a, b in zip(vals, vals[1:]))
    res = {"js": js, "rhos": rhos, "residuals": vals, "monotone": mono, "first_order": T.to_json()}
    writers = []
    if "csv_out" in cfg:
        writers.append((cfg["csv_out"], ["j", "rho", "residual"], list(zip(js, rhos, vals))))
    return res, f"blow-up residual at rho={rhos[-1]:.3g}: {vals[-1]:.3e}, monotone = {mono}", writers


def cmd_biting(cfg, seed):
    seq = _source(cfg)
    sch = cfg.get("schedule")
    C = float(seq.l1_norms().max()) or 1.0
    schedule = None
    if sch is not None:
        C = sch.get("C", C)
        schedule = sqrt_schedule(C) if sch["kind"] == "sqrt" else inverse_schedule(C)
    try:
        r = biting_truncations(seq, schedule, cfg.get("t0"), cfg.get("max_levels", 64))
    except BitingScheduleError as exc:
        res = {"status": "unattainable", "message": str(exc), "diagnostics": exc.diagnostics}
        return res, "biting schedule unattainable", []
    ks = [int(k) for k in r.labels]
    res = {"status": "ok", "positions": r.positions, "ks": ks, "levels": r.levels, "tail_mass": r.tail_mass,
           "rate_ratio": [t * np.sqrt(k) for t, k in zip(r.tail_mass, ks)], "schedule_C": C}
    writers = []
    if "csv_out" in cfg:
        writers.append((cfg["csv_out"], ["j", "k", "level", "tail_mass"],
                        [(j, k, float(t), float(mass)) for j, (k, t, mass) in enumerate(zip(ks, r.levels, r.tail_mass))]))
    return res, f"selected {len(ks)} truncations, last tail mass = {r.tail_mass[-1]:.3e}", writers


def cmd_dlvp(cfg, seed):
    seq = _source(cfg)
    phi_cfg = cfg["phi"]
    if phi_cfg["kind"] == "power":
        e = phi_cfg.get("exponent", 2.0)
        phi = lambda t: t**e  # noqa: E731
    else:
        phi = lambda t: t * np.log1p(t)  # noqa: E731
    rep = dlvp_check(seq, phi, cfg.get("cap", 1e3))
    return {"ok": rep.ok, "sup": rep.sup, "values": rep.values, "cap": rep.cap}, f"dlvp ok = {rep.ok}, sup = {rep.sup:.6g}", []


COMMANDS = {
    "metric": cmd_metric,
    "energy": cmd_energy,
    "qc-test": cmd_qc_test,
    "semielliptic": cmd_semielliptic,
    "rank-one": cmd_rank_one,
    "polyconvex-cert": cmd_polyconvex_cert,
    "stokes": cmd_stokes,
    "null-lagrangian": cmd_null_lagrangian,
    "fold": cmd_fold,
    "lsc": cmd_lsc,
    "blowup": cmd_blowup,
    "biting": cmd_biting,
    "dlvp": cmd_dlvp,
}


# ---------------------------------------------------------------------------
# entry points


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qvar", description="Q-valued variational calculus experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", help="result path (overrides the config's 'out'; default stdout)")
    ap.add_argument("--seed", type=int, help="overrides the config's 'seed'")
    ap.add_argument("--threads", type=int, help="BLAS thread cap (default: $QVAR_THREADS)")
    return ap


def load_config(command: str, path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"schema error at {list(exc.absolute_path)}: {exc.message}") from exc
    return cfg


def execute(command: str, cfg: dict, seed: int) -> tuple[dict, str, list]:
    """Run one subcommand on a validated config; returns (document, summary, csv writers)."""
    result, summary, writers = COMMANDS[command](cfg, seed)
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "seed": seed, "result": result}
    return doc, summary, writers


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    threads = args.threads if args.threads is not None else os.environ.get("QVAR_THREADS")
    try:
        cfg = load_config(args.command, args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        threads = int(threads) if threads not in (None, "") else None
        if threads is not None and threads < 1:
            raise ConfigError("threads must be positive")
    except (ConfigError, ValueError) as exc:
        print(f"qvar: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.get("out")
    try:
        with threadpool_limits(limits=threads):
            with np.errstate(all="ignore"):
                doc, summary, writers = execute(args.command, cfg, seed)
        text = canonical_dumps(doc)
    except NonFiniteError as exc:
        print(f"qvar: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (InvalidInputError, DomainError, KeyError, TypeError) as exc:
        print(f"qvar: invalid config: {exc}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"qvar: numerical failure: {exc}", file=sys.stderr)
        return 3
    if out:
        Path(out).write_text(text)
        print(summary)
    else:
        sys.stdout.write(text)
        print(summary, file=sys.stderr)
    for path, header, rows in writers:
        _write_csv(path, header, rows)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
