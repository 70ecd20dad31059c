"""
Command-line front end.

Usage::

    iastab <experiment> --config cfg.json [--seed N] [--out DIR]
                        [--set key=value ...] [--format csv|json]

Experiments: rates, region, fractions, membership, select, simulate, sweep.
Each run writes one result file plus ``manifest.json`` into ``--out``.

Exit status: 0 success, 2 invalid configuration or input, 3 numerical
failure, 4 enumeration guard exceeded.
"""

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import (ConfigError, GuardError, InfeasibleArrivalError,
                     NumericFailureError, SearchBoundError)
from .rate_model import RateMode, SystemConfig, svd_rate, symmetric_rate
from .region_geometry import (Region, beta_p, bits_fraction,
                              gap_fraction_perfect, membership,
                              pairs_fraction, region_vertices,
                              select_technique)
from .sim import (ArrivalKind, ArrivalSpec, PolicySpec, RngStream,
                  ServiceModel, arrival_sweep, run_queue_sim, sweep_csv)

EXPERIMENTS = ("rates", "region", "fractions", "membership", "select",
               "simulate", "sweep")
EXIT_SCHEMA = 2
EXIT_NUMERIC = 3
EXIT_GUARD = 4

_num = {"type": "number"}
_int = {"type": "integer"}
_mode_schema = {"enum": ["imperfect", "perfect"]}
_vec = {"type": "array", "items": {"type": "number", "minimum": 0}}

SYSTEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_pairs", "n_tx", "n_rx", "streams", "power", "noise_var",
                 "probe_cost", "bits", "threshold", "stream_rate"],
    "properties": {
        "n_pairs": _int, "n_tx": _int, "n_rx": _int, "streams": _int,
        "power": _num, "noise_var": _num, "probe_cost": _num, "bits": _int,
        "threshold": _num, "stream_rate": _num,
        "path_loss": {"type": "array",
                      "items": {"type": "array", "items": _num}},
        "cross_loss": _num, "direct_loss": _num,
    },
}

PARAM_SCHEMAS = {
    "rates": {"properties": {}},
    "region": {"properties": {"region": {"enum": [r.value for r in Region]},
                              "mode": _mode_schema}},
    "fractions": {
        "required": ["kind"],
        "properties": {"kind": {"enum": ["bits", "pairs", "beta_p", "gap"]},
                       "grid": {"type": "array", "items": _int}}},
    "membership": {
        "required": ["arrivals"],
        "properties": {"arrivals": _vec, "tol": _num, "mode": _mode_schema,
                       "region": {"enum": [r.value for r in Region]}}},
    "select": {"required": ["arrivals"],
               "properties": {"arrivals": _vec, "mode": _mode_schema}},
    "simulate": {
        "required": ["arrival_mean", "horizon"],
        "properties": {"policy": {"enum": [
            "maxweight", "maxweight_symmetric", "approx", "svd", "switching"]},
            "mode": _mode_schema, "arrival_mean": _num, "horizon": _int,
            "distribution": {"enum": ["poisson", "deterministic"]},
            "service_model": {"enum": ["analytic_bernoulli",
                                       "distributional"]}}},
    "sweep": {
        "required": ["grid", "horizon"],
        "properties": {"policy": {"enum": [
            "maxweight", "maxweight_symmetric", "approx", "svd", "switching"]},
            "mode": _mode_schema, "grid": {"type": "array", "items": _num,
                                    "minItems": 1},
            "horizon": _int, "replicas": _int, "workers": _int,
            "service_model": {"enum": ["analytic_bernoulli",
                                       "distributional"]}}},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "system": SYSTEM_SCHEMA,
        "experiment": {"enum": list(EXPERIMENTS)},
        "params": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "format": {"enum": ["csv", "json"]},
    },
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when
    possible and kept as strings otherwise."""
    out = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set expects key=value, got %r" % item)
        key, _, raw = item.partition("=")
        path = key.strip().split(".")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError("--set path %r crosses a non-object" % key)
        node[path[-1]] = _parse_value(raw)
    return out


def validate_config(config, experiment):
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
        params = config.get("params", {})
        schema = dict(PARAM_SCHEMAS[experiment])
        schema.update({"type": "object", "additionalProperties": False})
        jsonschema.validate(params, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError("config schema violation at %s: %s"
                          % (where, exc.message)) from None
    if config.get("experiment", experiment) != experiment:
        raise ConfigError("config names experiment %r but %r was requested"
                          % (config["experiment"], experiment))
    return build_system(config["system"])


def build_system(spec):
    spec = dict(spec)
    path_loss = spec.pop("path_loss", None)
    cross = spec.pop("cross_loss", None)
    direct = spec.pop("direct_loss", None)
    if path_loss is not None:
        if cross is not None or direct is not None:
            raise ConfigError("give either path_loss or cross/direct_loss")
        return SystemConfig(path_loss=path_loss, **spec)
    return SystemConfig.homogeneous(
        cross=1.0 if cross is None else cross,
        direct=1.0 if direct is None else direct, **spec)


def _check_finite(rows):
    for row in rows:
        for v in row.values():
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericFailureError("non-finite value in output")


def _table_text(rows, fmt):
    _check_finite(rows)
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]),
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v
                         for k, v in row.items()})
    return buf.getvalue()


def _mode(params):
    return RateMode(params.get("mode", "imperfect"))


def _run_rates(cfg, params, seed, fmt):
    r_svd = svd_rate(cfg)
    rows = []
    for size in range(1, cfg.n_pairs + 1):
        r = symmetric_rate(cfg, size, RateMode.IMPERFECT)
        mu = symmetric_rate(cfg, size, RateMode.PERFECT)
        rows.append({"L": size, "r": r, "mu": mu, "r_total": size * r,
                     "mu_total": size * mu, "r_svd": r_svd})
    return _table_text(rows, fmt)


def _run_region(cfg, params, seed, fmt):
    verts = region_vertices(cfg, Region(params.get("region", "ia_imperfect")),
                            _mode(params))
    if not np.isfinite(verts.points).all():
        raise NumericFailureError("non-finite vertex coordinate")
    return verts.to_json() + "\n" if fmt == "json" else verts.to_csv()


def _run_fractions(cfg, params, seed, fmt):
    kind = params["kind"]
    grid = params.get("grid")
    if kind == "gap":
        rows = [{"gap_fraction": gap_fraction_perfect(cfg)}]
    elif kind == "bits":
        grid = range(cfg.bits + 1) if grid is None else grid
        rows = [{"b_prime": b, "fraction": bits_fraction(cfg, b)}
                for b in grid]
    elif kind == "pairs":
        grid = range(1, cfg.n_pairs + 1) if grid is None else grid
        rows = [{"n_prime": n, "fraction": pairs_fraction(cfg, n)}
                for n in grid]
    else:
        grid = [cfg.bits] if grid is None else grid
        rows = [{"bits": b, "beta_p": beta_p(cfg.replace(bits=b)).value}
                for b in grid]
    if not rows:
        raise ConfigError("fraction grid is empty")
    return _table_text(rows, fmt)


def _run_membership(cfg, params, seed, fmt):
    region = Region(params.get("region", "ia_imperfect"))
    member = membership(cfg, params["arrivals"], region,
                        tol=params.get("tol", 1e-7), mode=_mode(params))
    return _table_text([{"region": region.value, "member": member}], fmt)


def _run_select(cfg, params, seed, fmt):
    tech, why = select_technique(cfg, params["arrivals"], _mode(params))
    return _table_text([{"technique": tech.value, "rationale": why.value}],
                       fmt)


def _policy(params):
    return PolicySpec(params.get("policy", "maxweight_symmetric"),
                      params.get("mode", "imperfect"))


def _run_simulate(cfg, params, seed, fmt):
    arrivals = ArrivalSpec.uniform(
        cfg.n_pairs, params["arrival_mean"],
        ArrivalKind(params.get("distribution", "poisson")))
    traj = run_queue_sim(
        cfg, _policy(params), arrivals, params["horizon"],
        ServiceModel(params.get("service_model", "analytic_bernoulli")),
        RngStream(seed, (EXPERIMENTS.index("simulate"),)))
    rows = [{"slot": t, "total_queue": float(v)}
            for t, v in enumerate(traj.total_queue)]
    if fmt == "json":
        summary = {"total_avg_queue": traj.total_avg_queue,
                   "avg_queue": [float(v) for v in traj.avg_queue],
                   "slope": traj.slope, "divergent": traj.divergent,
                   "technique_share_ia": traj.ia_share,
                   "total_queue": [r["total_queue"] for r in rows]}
        _check_finite([{"x": v} for v in summary["total_queue"]])
        return json.dumps(summary, indent=2, sort_keys=True) + "\n"
    return _table_text(rows, fmt)


def _run_sweep(cfg, params, seed, fmt):
    points = arrival_sweep(
        cfg, _policy(params), params["grid"], params["horizon"],
        params.get("replicas", 1), seed,
        ServiceModel(params.get("service_model", "analytic_bernoulli")),
        workers=params.get("workers", 1),
        stream_prefix=(EXPERIMENTS.index("sweep"),))
    if fmt == "csv":
        _check_finite([{"a": p.a, "q": p.total_avg_queue, "s": p.stderr,
                        "i": p.technique_share_ia} for p in points])
        return sweep_csv(points)
    rows = [{"a": p.a, "total_avg_queue": p.total_avg_queue,
             "stderr": p.stderr, "policy": p.policy,
             "technique_share_ia": p.technique_share_ia,
             "divergent": p.divergent, "slope": p.slope} for p in points]
    return _table_text(rows, fmt)


_RUNNERS = {
    "rates": _run_rates, "region": _run_region, "fractions": _run_fractions,
    "membership": _run_membership, "select": _run_select,
    "simulate": _run_simulate, "sweep": _run_sweep,
}


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def run_experiment(config, experiment, out_dir, seed=None, fmt=None):
    """Validate ``config``, run ``experiment`` and write its outputs.

    Returns the path of the result file.
    """
    started = time.perf_counter()
    cfg = validate_config(config, experiment)
    seed = config.get("seed", 0) if seed is None else seed
    fmt = fmt or config.get("format", "csv")
    text = _RUNNERS[experiment](cfg, config.get("params", {}), seed, fmt)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = out / ("%s.%s" % (experiment, fmt))
    result.write_text(text)
    manifest = {
        "experiment": experiment,
        "config": config,
        "config_sha256": config_hash(config),
        "seed": seed,
        "format": fmt,
        "outputs": [result.name],
        "versions": {"iastab": __version__, "numpy": np.__version__,
                     "jsonschema": metadata.version("jsonschema"),
                     "python": platform.python_version()},
        "wall_clock_s": time.perf_counter() - started,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def _parser():
    p = argparse.ArgumentParser(
        prog="iastab",
        description="Rates, stability regions and queue simulations for "
                    "interference alignment with quantized channel state.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, default=None,
                   help="root seed (overrides the config)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("cannot read config: %s" % exc) from None
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        config = apply_overrides(config, args.overrides)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        path = run_experiment(config, args.experiment, args.out, args.seed,
                              args.format)
    except (ConfigError, InfeasibleArrivalError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_SCHEMA
    except (NumericFailureError, SearchBoundError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except GuardError as exc:
        print("guard exceeded: %s" % exc, file=sys.stderr)
        return EXIT_GUARD
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
