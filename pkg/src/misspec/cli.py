"""Command-line entry point: ``misspec <command> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 1 runtime failure (including a failed certificate),
2 configuration error, 3 infeasible construction.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .bvm import run_bvm
from .experiments import (
    DEFAULT_SCHEDULES,
    ExperimentConfig,
    gen_linreg_misspec,
    gen_logistic_mix,
    run_experiment,
    two_point_demo,
)
from .families import GlmFamily
from .learners import (
    LabeledDataset,
    MixturePredictor,
    SolverConfig,
    adversarial_labels,
    aha_fit,
    fit_mle,
    risk_estimate,
    theta_grid,
    vovk_online_run,
)
from .losses import (
    HELLINGER_PROOF_ETA,
    DomainError,
    ScoringRule,
    check_exp_concavity,
    mixability_constant,
)
from .minimax import (
    ConstructionError,
    Radii,
    build_hard_instance,
    certificate_to_dict,
    closed_form_bound,
    instance_from_dict,
    instance_to_dict,
    linearity_constant,
    linearity_lower_bound,
    loss_from_dict,
    perturb_instance,
    q_worst,
    verify_instance,
)

log = logging.getLogger("misspec")

ARTIFACT_VERSION = f"misspec-{__version__}"


class ConfigError(ValueError):
    pass


# -- config schemas --------------------------------------------------------------

_LABEL_SET = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["binary", "integers", "interval"]},
        "low": {"type": "number"},
        "high": {"type": "number"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}
_LOSS = {
    "type": "object",
    "properties": {
        "family": {"enum": ["logistic", "geometric", "poisson", "gaussian"]},
        "rule": {"enum": [r.value for r in ScoringRule]},
        "label_set": _LABEL_SET,
    },
    "required": ["family"],
    "additionalProperties": False,
}
_RADII = {
    "type": "object",
    "properties": {
        "R": {"type": "number", "exclusiveMinimum": 0},
        "B": {"type": "number", "exclusiveMinimum": 0},
        "gamma": {"type": "number", "minimum": 0, "maximum": 1},
        "n": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}
_POS_INT = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0}
_SOLVER = {
    "type": "object",
    "properties": {"tol": {"type": "number", "exclusiveMinimum": 0}, "max_iter": _POS_INT},
    "additionalProperties": False,
}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": {"seed": _SEED, **props}, "additionalProperties": False}


SCHEMAS = {
    "bound": _obj({
        "loss": _LOSS,
        "radii": _RADII,
        "grids": {"type": "object", "properties": {
            "t_delta": {"type": "integer", "minimum": 3},
            "delta_sup": {"type": "integer", "minimum": 3},
            "alpha": {"type": "integer", "minimum": 3},
        }, "additionalProperties": False},
        "q_table_points": {"type": "integer", "minimum": 1},
    }),
    "construct": _obj({
        "loss": _LOSS,
        "radii": _RADII,
        "t": {"type": "number"},
        "y": {"type": "number"},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.6},
        "gamma": {"type": "number", "minimum": 0, "maximum": 1},
        "d": {"type": "integer", "minimum": 2},
        "grid_resolution": {"type": "integer", "minimum": 3},
    }),
    "regret": _obj({
        "family": {"enum": ["logistic"]},
        "rule": {"enum": [r.value for r in ScoringRule]},
        "d": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 0},
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "grid_size": _POS_INT,
        "R": {"type": "number", "exclusiveMinimum": 0},
        "B": {"type": "number", "exclusiveMinimum": 0},
        "sequences": _POS_INT,
    }),
    "aha": _obj({
        "task": {"enum": ["linreg_misspec", "logistic_mix"]},
        "d": _POS_INT,
        "tau": {"type": "number", "minimum": 0},
        "n": {"type": "integer", "minimum": 3},
        "K": _POS_INT,
        "B": {"type": "number", "minimum": 0},
        "test_size": _POS_INT,
        "solver": _SOLVER,
    }),
    "experiment": _obj({
        "task": {"enum": ["linreg_misspec", "logistic_mix"]},
        "d": _POS_INT,
        "tau": {"type": "number", "minimum": 0},
        "n_grid": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1},
        "K": _POS_INT,
        "schedules": {"type": "array", "minItems": 1, "items": {
            "type": "array", "minItems": 2, "maxItems": 2,
            "prefixItems": [{"enum": ["const", "log_n", "sqrt_n", "linear_n"]},
                            {"type": "number", "exclusiveMinimum": 0}]}},
        "test_size": _POS_INT,
        "replications": _POS_INT,
        "solver": _SOLVER,
    }),
    "bvm": _obj({
        "seeds": _POS_INT,
        "n_list": {"type": "array", "items": _POS_INT, "minItems": 1},
        "B": {"type": "number", "exclusiveMinimum": 0},
        "grid_size": {"type": "integer", "minimum": 2},
        "theta_star": {"type": "number"},
        "x_query": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
    }),
    "demo": _obj({
        "n_list": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
    }),
    "mixability": _obj({
        "k_list": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "grid_resolution": {"type": "integer", "minimum": 3},
    }),
}
SCHEMAS["verify"] = _obj({**SCHEMAS["construct"]["properties"], "instance": {"type": "string"}})

DEFAULTS = {
    "bound": {"loss": {"family": "gaussian"}, "radii": {"R": 1.0, "B": 1.0, "gamma": 0.25, "n": 100},
              "grids": {"t_delta": 201, "delta_sup": 101, "alpha": 2001}, "q_table_points": 5},
    "construct": {"loss": {"family": "gaussian"}, "radii": {"R": 1.0, "B": 1.0, "gamma": 1.0, "n": 100},
                  "t": 0.3, "y": -1.0, "epsilon": 0.5, "gamma": 1.0, "d": 2, "grid_resolution": 200},
    "regret": {"family": "logistic", "rule": "log", "d": 2, "n": 500, "eta": 1.0, "grid_size": 512,
               "R": 1.0, "B": 1.0, "sequences": 10},
    "aha": {"task": "linreg_misspec", "d": 10, "tau": 5.0, "n": 1000, "K": 20, "B": 1.0, "test_size": 5000},
    "experiment": {"task": "linreg_misspec", "d": 10, "tau": 0.0, "n_grid": [50, 100, 200, 500, 1000],
                   "K": 20, "schedules": [list(s) for s in DEFAULT_SCHEDULES], "test_size": 5000,
                   "replications": 20},
    "bvm": {"seeds": 20, "n_list": [200, 2000, 20000], "B": 3.0, "grid_size": 4001, "theta_star": 1.0,
            "x_query": [-1.0, 0.5, 2.0]},
    "demo": {"n_list": [10, 100, 1000]},
    "mixability": {"k_list": [2, 3, 4], "grid_resolution": 21},
}
DEFAULTS["verify"] = DEFAULTS["construct"]


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def load_config(command: str, path: str | None, seed: int | None) -> dict:
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(raw, SCHEMAS[command])
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {err.message}") from err
    cfg = _merge(DEFAULTS[command], raw)
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    return cfg


def config_hash(command: str, cfg: dict) -> str:
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- artifact writing ------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Artifacts:
    """Collects output files in memory and writes them all at the end."""

    def __init__(self, out_dir: Path, meta: dict):
        self.out_dir = out_dir
        self.meta = meta
        self.files: dict[str, str] = {}

    def json(self, name: str, payload: dict):
        doc = _jsonable({**payload, "meta": self.meta})
        self.files[name] = json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"

    def csv(self, name: str, header: list, rows):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(list(header) + ["meta_seed", "config_hash", "artifact_version"])
        tail = [self.meta["seed"], self.meta["config_hash"], self.meta["artifact_version"]]
        for row in rows:
            writer.writerow([_fmt(v) for v in row] + tail)
        self.files[name] = buf.getvalue()

    def commit(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            tmp = self.out_dir / f".{name}.tmp"
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, self.out_dir / name)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


OUTPUTS = {
    "bound": ["bound.json"],
    "construct": ["instance.json", "certificate.json"],
    "verify": ["certificate.json"],
    "regret": ["regret.csv", "regret.json"],
    "aha": ["aha.json"],
    "experiment": ["experiment.csv", "experiment.json"],
    "bvm": ["bvm.csv", "bvm.json"],
    "demo": ["demo.csv", "demo.json"],
    "mixability": ["mixability.csv", "mixability.json"],
}


# -- commands --------------------------------------------------------------------

def _radii(cfg) -> Radii:
    r = cfg["radii"]
    return Radii(float(r.get("R", 1.0)), float(r.get("B", 1.0)), float(r.get("gamma", 1.0)), int(r.get("n", 100)))


def _loss(cfg):
    spec = dict(cfg["loss"])
    ls = spec.get("label_set")
    if ls is not None:
        spec["label_set"] = {"kind": ls["kind"], "low": ls.get("low", -1.0 if ls["kind"] != "integers" else 0.0),
                             "high": ls.get("high", 1.0)}
    return loss_from_dict(spec)


def cmd_bound(cfg, art: Artifacts, threads: int) -> int:
    loss, radii = _loss(cfg), _radii(cfg)
    grids = cfg["grids"]
    lc = linearity_constant(loss, radii, grids["t_delta"], grids["delta_sup"], grids["alpha"])
    table = []
    ys = loss.label_set.candidates(11)
    for t in np.linspace(-radii.t_max, radii.t_max, cfg["q_table_points"]):
        for y in ys:
            qw = q_worst(loss, float(t), float(y), grids["alpha"])
            table.append({"t": float(t), "y": float(y), "q": qw.q, "alpha": qw.alpha, "y0": qw.y0})
    try:
        closed = {"value": closed_form_bound(loss.family, radii, loss.label_set.diameter), "error": None}
    except DomainError as err:
        closed = {"value": None, "error": str(err)}
    art.json("bound.json", {
        "loss": cfg["loss"], "radii": cfg["radii"], "q_worst_table": table,
        "lambda": lc.lam, "argmax": {"t": lc.t, "delta": lc.delta, "y": lc.y, "q": lc.q},
        "linearity_lower_bound": linearity_lower_bound(lc.lam, radii.n), "closed_form_bound": closed,
    })
    log.info("lambda=%.6g bound=%.6g", lc.lam, linearity_lower_bound(lc.lam, radii.n))
    return 0


def _build(cfg):
    inst = build_hard_instance(_loss(cfg), _radii(cfg), float(cfg["t"]), float(cfg["y"]),
                               float(cfg["epsilon"]), int(cfg["d"]))
    return perturb_instance(inst, float(cfg["gamma"]))


def _certify(inst, cfg, art) -> int:
    cert = verify_instance(inst, grid_resolution=int(cfg["grid_resolution"]))
    art.json("certificate.json", {"certificate": certificate_to_dict(cert),
                                  "status": "pass" if cert.passed else "fail"})
    for msg in cert.failures:
        log.error("certificate: %s", msg)
    return 0 if cert.passed else 1


def cmd_construct(cfg, art: Artifacts, threads: int) -> int:
    inst = _build(cfg)
    art.json("instance.json", {"instance": instance_to_dict(inst)})
    return _certify(inst, cfg, art)


def cmd_verify(cfg, art: Artifacts, threads: int) -> int:
    if "instance" in cfg:
        try:
            with open(cfg["instance"], encoding="utf-8") as fh:
                inst = instance_from_dict(json.load(fh)["instance"])
        except (OSError, KeyError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot load instance: {err}") from err
    else:
        inst = _build(cfg)
    return _certify(inst, cfg, art)


def cmd_regret(cfg, art: Artifacts, threads: int) -> int:
    family = GlmFamily(cfg["family"], cfg["d"])
    grid = theta_grid(cfg["d"], cfg["B"], cfg["grid_size"], seed=cfg["seed"])
    rows = []
    for s in range(cfg["sequences"]):
        rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(s,)))
        X = rng.standard_normal((cfg["n"], cfg["d"]))
        X *= cfg["R"] / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-300)
        y = adversarial_labels(family, cfg["rule"], cfg["eta"], X, grid)
        rep = vovk_online_run(family, cfg["rule"], cfg["eta"], LabeledDataset(X, y), grid, cfg["R"], cfg["B"])
        rows.append([s, cfg["n"], rep.cumulative_loss, rep.best_comparator_loss, rep.regret, rep.regret_bound])
    header = ["sequence", "n", "cumulative_loss", "best_comparator_loss", "regret", "regret_bound"]
    art.csv("regret.csv", header, rows)
    art.json("regret.json", {"max_regret": max(r[4] for r in rows), "regret_bound": rows[0][5],
                             "all_within_bound": all(r[4] <= r[5] for r in rows)})
    return 0


def _task_data(task, n, d, tau, rng, problem):
    if task == "linreg_misspec":
        data, theta = gen_linreg_misspec(n, d, tau, rng, theta_star=problem)
        return data, theta
    data, prob, _ = gen_logistic_mix(n, d, tau, rng, problem=problem)
    return data, prob


def cmd_aha(cfg, art: Artifacts, threads: int) -> int:
    seed = cfg["seed"]
    task = cfg["task"]
    family = ExperimentConfig(task=task, d=cfg["d"], tau=cfg["tau"]).family
    solver = SolverConfig(**cfg.get("solver", {}))
    train, problem = _task_data(task, cfg["n"], cfg["d"], cfg["tau"],
                                np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,))), None)
    test, _ = _task_data(task, cfg["test_size"], cfg["d"], cfg["tau"],
                         np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,))), problem)
    mix = aha_fit(family, "log", train, cfg["B"], cfg["K"],
                  np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,))), solver, threads)
    mle = MixturePredictor.point(fit_mle(family, family.loss(), train, cfg["B"], solver))
    art.json("aha.json", {"mixture": mix.to_dict(), "risk_aha": risk_estimate(mix, family, "log", test),
                          "risk_mle": risk_estimate(mle, family, "log", test), "mle": mle.thetas[0]})
    return 0


def cmd_experiment(cfg, art: Artifacts, threads: int) -> int:
    ecfg = ExperimentConfig(task=cfg["task"], d=cfg["d"], tau=cfg["tau"], n_grid=tuple(cfg["n_grid"]),
                            K=cfg["K"], schedules=tuple(tuple(s) for s in cfg["schedules"]),
                            test_size=cfg["test_size"], replications=cfg["replications"], seed=cfg["seed"],
                            threads=threads, solver=SolverConfig(**cfg.get("solver", {})))
    curve = run_experiment(ecfg)
    header = ["task", "tau", "n", "schedule_form", "schedule_c", "estimator", "replication", "risk"]
    recs = sorted(curve.records, key=lambda r: (r.replication, r.n, ecfg.schedules.index((r.schedule_form, r.schedule_c)),
                                                r.estimator))
    art.csv("experiment.csv", header, [[getattr(r, h) for h in header] for r in recs])

    def row_doc(r):
        return {"n": r.n, "estimator": r.estimator, "schedule": list(r.schedule), "mean_risk": r.mean_risk,
                "std_err": r.std_err, "count": r.count}

    art.json("experiment.json", {"rows": [row_doc(r) for r in curve.rows],
                                 "best_schedule": [row_doc(r) for r in curve.best], "errors": curve.errors})
    for err in curve.errors:
        log.error("cell failed: %s", err)
    return 1 if curve.errors else 0


def cmd_bvm(cfg, art: Artifacts, threads: int) -> int:
    seeds = [cfg["seed"] + s for s in range(cfg["seeds"])]
    rows = run_bvm(seeds, cfg["n_list"], theta_star=(cfg["theta_star"],), B=cfg["B"],
                   grid_size=cfg["grid_size"], x_query=tuple(cfg["x_query"]))
    header = ["seed", "n", "tv_param", "tv_predictive_x1", "tv_predictive_x2", "tv_predictive_x3"]
    art.csv("bvm.csv", header, [[r.seed, r.n, r.tv_param, *r.tv_predictive] for r in rows])
    medians = []
    for n in cfg["n_list"]:
        sel = [r for r in rows if r.n == n]
        medians.append({"n": n, "tv_param": float(np.median([r.tv_param for r in sel])),
                        "tv_predictive": [float(np.median([r.tv_predictive[i] for r in sel])) for i in range(3)]})
    art.json("bvm.json", {"medians": medians})
    return 0


def cmd_demo(cfg, art: Artifacts, threads: int) -> int:
    rows = two_point_demo(cfg["n_list"])
    art.csv("demo.csv", ["n", "risk_best_theta", "risk_mixture"],
            [[r.n, r.risk_best_theta, r.risk_mixture] for r in rows])
    art.json("demo.json", {"rows": [r.__dict__ for r in rows]})
    return 0


def cmd_mixability(cfg, art: Artifacts, threads: int) -> int:
    checks = [(rule, mixability_constant(rule)) for rule in ScoringRule]
    checks += [(ScoringRule.HELLINGER, HELLINGER_PROOF_ETA), (ScoringRule.LOG, 2.0)]
    rows = []
    for rule, eta in checks:
        for k in cfg["k_list"]:
            res = check_exp_concavity(rule, eta, k, cfg["grid_resolution"])
            rows.append([rule.value, eta, k, res.holds])
    art.csv("mixability.csv", ["rule", "eta", "k", "holds"], rows)
    art.json("mixability.json", {"table": {r.value: mixability_constant(r) for r in ScoringRule},
                                 "hellinger_proof_eta": HELLINGER_PROOF_ETA,
                                 "checks": [dict(zip(["rule", "eta", "k", "holds"], r)) for r in rows]})
    return 0


COMMANDS = {
    "bound": cmd_bound,
    "construct": cmd_construct,
    "verify": cmd_verify,
    "regret": cmd_regret,
    "aha": cmd_aha,
    "experiment": cmd_experiment,
    "bvm": cmd_bvm,
    "demo": cmd_demo,
    "mixability": cmd_mixability,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults used when omitted)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    out_dir = Path(args.out)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg = load_config(args.command, args.config, args.seed)
        existing = [n for n in OUTPUTS[args.command] if (out_dir / n).exists()]
        if existing and not args.force:
            raise ConfigError(f"outputs exist in {out_dir}: {', '.join(existing)} (use --force)")
        meta = {"seed": cfg["seed"], "config_hash": config_hash(args.command, cfg),
                "artifact_version": ARTIFACT_VERSION}
        art = Artifacts(out_dir, meta)
        log.info("running %s", args.command)
        code = COMMANDS[args.command](cfg, art, args.threads)
    except ConfigError as err:
        log.error("%s", err)
        return 2
    except ConstructionError as err:
        log.error("construction infeasible: %s", err)
        return 3
    except DomainError as err:
        log.error("config error: %s", err)
        return 2
    except Exception as err:  # noqa: BLE001
        log.exception("runtime failure: %s", err)
        return 1
    art.commit()
    log.info("wrote %s", ", ".join(sorted(art.files)))
    return code


if __name__ == "__main__":
    sys.exit(main())
