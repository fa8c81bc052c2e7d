"""Experiment runner: ``highway-ips run <config>`` and ``highway-ips validate <config>``.

Configs are flat ``key = value`` text with dotted sections::

    scenario = density-sweep
    channel.r = 25
    traffic.lambda = 0.025, 0.04, 0.05
    traffic.v = 30

List-valued keys take comma-separated values; traffic scenarios sweep the
Cartesian product of ``channel.r``, ``traffic.lambda`` and ``traffic.v``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Callable

from .analytics import (DEFAULT_BRIDGE_HORIZON, ProtocolConfig, TrafficConfig, analytic_ips)
from .channel import ChannelConfig, RangeModel, analytic_outage, mc_outage
from .numerics import DomainError, NumericError, RngStream
from .simulator import SimConfig, measure_ips

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SCENARIOS = ("gain-curve", "density-sweep", "speed-sweep", "gain-ratio", "channel-mc", "single-point")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# schema


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(s: str) -> list:
        items = [p.strip() for p in s.split(",") if p.strip()]
        if not items:
            raise ValueError("empty list")
        return [conv(p) for p in items]
    return parse


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("none", "off") else float(s)


def _positive(x) -> bool:
    return all(v > 0 for v in (x if isinstance(x, list) else [x]))


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] = lambda x: True
    rule: str = ""


SCHEMA: dict[str, Key] = {
    "scenario": Key(str, None, lambda s: s in SCENARIOS, "one of " + ", ".join(SCENARIOS)),
    "seed": Key(int, 0, lambda n: n >= 0, ">= 0"),
    "replicates": Key(int, 200, lambda n: n >= 1, ">= 1"),
    "jobs": Key(int, 0, lambda n: n >= 0, ">= 0 (0 means CPU count)"),
    "output_dir": Key(str, "results"),
    "channel.K": Key(float, 10.0, _positive, "> 0"),
    "channel.delta": Key(float, 2.0, lambda d: 2 <= d <= 4, "in [2, 4]"),
    "channel.P_t": Key(float, 1.0, _positive, "> 0"),
    "channel.P_min": Key(float, 1e-3, _positive, "> 0"),
    "channel.P_out": Key(float, 0.01, lambda p: 0 < p < 1, "in (0, 1)"),
    "channel.N_0": Key(float, 1e-13, _positive, "> 0"),
    "channel.r": Key(_list(float), [25.0], _positive, "> 0 (single-vehicle range, m)"),
    "channel.gain_cap": Key(int, 4096, lambda n: n >= 2, ">= 2"),
    "traffic.lambda": Key(_list(float), [0.05], _positive, "> 0 (vehicles/m)"),
    "traffic.v": Key(_list(float), [30.0], _positive, "> 0 (m/s)"),
    "protocol.tau": Key(float, 0.01, _positive, "> 0 (s)"),
    "analytics.horizon": Key(_opt_float, DEFAULT_BRIDGE_HORIZON,
                             lambda h: h is None or h >= 0, ">= 0 or none"),
    "sim.enabled": Key(_bool, True),
    "sim.road_length": Key(float, 50_000.0, _positive, "> 0 (m)"),
    "sim.warmup_margin": Key(float, 1_000.0, lambda m: m >= 0, ">= 0 (m)"),
    "sim.mode": Key(str, "deterministic", lambda m: m in ("deterministic", "channel"),
                    "deterministic or channel"),
    "sim.time_cap": Key(_opt_float, None, lambda t: t is None or t > 0, "> 0 or none"),
    "sim.extent_bridging": Key(_bool, True),
    "sim.singleton_tx_law": Key(_bool, True),
    "gain.n_receivers": Key(_list(int), [2**i for i in range(11)], _positive, ">= 1"),
    "mc.samples": Key(int, 10**4, lambda n: n >= 10**4, ">= 10000"),
    "mc.n_receivers": Key(_list(int), [1, 2, 4, 8, 16, 32], _positive, ">= 1"),
    "mc.n_tx": Key(_list(int), [1, 2], lambda xs: all(x in (1, 2) for x in xs), "1 or 2"),
}
REQUIRED = ("scenario",)
# keys that change where or how fast a run happens, never what it computes
PLACEMENT = ("jobs", "output_dir")


def _edit1(a: str, b: str) -> bool:
    """True when ``a`` and ``b`` differ by one insertion, deletion, substitution or adjacent swap."""
    if a == b or abs(len(a) - len(b)) > 1:
        return False
    if len(a) == len(b):
        diff = [i for i in range(len(a)) if a[i] != b[i]]
        if len(diff) == 1:
            return True
        return (len(diff) == 2 and diff[1] == diff[0] + 1
                and a[diff[0]] == b[diff[1]] and a[diff[1]] == b[diff[0]])
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    i = 0
    while i < len(short) and short[i] == long_[i]:
        i += 1
    return short[i:] == long_[i + 1:]


def suggest(key: str) -> str | None:
    for k in SCHEMA:
        if _edit1(key, k):
            return k
    # typo confined to the last segment, e.g. traffic.lamda
    head, _, tail = key.rpartition(".")
    for k in SCHEMA:
        kh, _, kt = k.rpartition(".")
        if head in ("", kh) and _edit1(tail, kt):
            return k
    return None


def read_pairs(path: str | os.PathLike) -> list[tuple[int, str, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    pairs = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value', got {raw.strip()!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        pairs.append((no, k, v))
    return pairs


def check_config(pairs) -> tuple[dict, list[str]]:
    """Resolve values against the schema. Returns the config and the problems found."""
    problems = []
    cfg = {k: entry.default for k, entry in SCHEMA.items()}
    seen = set()
    for no, k, v in pairs:
        if k not in SCHEMA:
            hint = suggest(k)
            problems.append(f"line {no}: unknown key {k!r}" + (f" (did you mean {hint!r}?)" if hint else ""))
            continue
        if k in seen:
            problems.append(f"line {no}: duplicate key {k!r}")
        seen.add(k)
        entry = SCHEMA[k]
        try:
            val = entry.parse(v)
        except ValueError as exc:
            problems.append(f"line {no}: {k}: {exc}")
            continue
        if not entry.check(val):
            problems.append(f"line {no}: {k} = {v} out of range, must be {entry.rule}")
            continue
        cfg[k] = val
    for k in REQUIRED:
        if k not in seen:
            problems.append(f"missing required key {k!r}")
    return cfg, problems


def format_config(cfg: dict, skip=()) -> str:
    def fmt(v):
        if isinstance(v, list):
            return ", ".join(fmt(x) for x in v)
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v) if isinstance(v, float) else str(v)
    return "".join(f"{k} = {fmt(cfg[k])}\n" for k in SCHEMA if k not in skip)


# ---------------------------------------------------------------------------
# scenarios


def _channel(cfg: dict) -> ChannelConfig:
    return ChannelConfig(K=cfg["channel.K"], delta=cfg["channel.delta"], P_t=cfg["channel.P_t"],
                         P_min=cfg["channel.P_min"], P_out_target=cfg["channel.P_out"],
                         N_0=cfg["channel.N_0"])


def _num(x) -> str:
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return str(x)


@dataclass
class PointResult:
    row: dict
    error: str | None = None
    warnings: list = field(default_factory=list)


def _sim_columns(prefix: str, cfg: dict, model: RangeModel, lam: float, v: float) -> tuple[dict, str | None]:
    cols = {f"sim_vp_{prefix}": math.nan, f"sim_se_{prefix}": math.nan,
            f"sim_censoring_{prefix}": math.nan}
    if not cfg["sim.enabled"]:
        return cols, None
    road = max(cfg["sim.road_length"], math.ceil(1000.0 / lam))
    sc = SimConfig(model, lam, lam, v, tau=cfg["protocol.tau"], road_length=road,
                   warmup_margin=cfg["sim.warmup_margin"], mode=cfg["sim.mode"], seed=cfg["seed"],
                   time_cap=cfg["sim.time_cap"], extent_bridging=cfg["sim.extent_bridging"],
                   singleton_tx_law=cfg["sim.singleton_tx_law"])
    try:
        est = measure_ips(sc, cfg["replicates"])
    except NumericError as exc:
        cols[f"sim_censoring_{prefix}"] = 1.0
        return cols, f"{prefix} lambda={lam} v={v}: {exc}"
    cols.update({f"sim_vp_{prefix}": est.mean, f"sim_se_{prefix}": est.std_error,
                 f"sim_censoring_{prefix}": est.censoring_rate})
    return cols, None


def _traffic_point(args) -> PointResult:
    cfg, r, lam, v, tag = args
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = RangeModel.for_range(r, _channel(cfg), cfg["channel.gain_cap"])
        nc = model.non_cooperative()
        traffic, proto = TrafficConfig(lam, v), ProtocolConfig(cfg["protocol.tau"])
        a = analytic_ips(model, traffic, proto, horizon=cfg["analytics.horizon"])
        b = analytic_ips(nc, traffic, proto, horizon=cfg["analytics.horizon"])
        row = {"config_hash": tag, "r": r, "lambda": lam, "v": v,
               "analytic_vp_coop": a.v_p, "analytic_vp_noncoop": b.v_p,
               "e_d": a.e_d, "e_tw": a.e_tw, "e_tt": a.e_tt, "p_b": a.p_b, "e_ge": a.e_ge,
               "regime_coop": a.regime.value, "regime_noncoop": b.regime.value}
        errs = []
        for prefix, m in (("coop", model), ("noncoop", nc)):
            cols, err = _sim_columns(prefix, cfg, m, lam, v)
            row.update(cols)
            if err:
                errs.append(err)
        row["analytic_ratio"] = a.v_p / b.v_p if b.v_p > 0 else math.nan
        row["sim_ratio"] = (row["sim_vp_coop"] / row["sim_vp_noncoop"]
                            if row["sim_vp_noncoop"] > 0 else math.nan)
    notes = sorted({str(w.message) for w in caught})
    return PointResult(row, "; ".join(errs) or None, notes)


def _gain_point(args) -> PointResult:
    cfg, n, tag = args
    model = RangeModel.for_range(cfg["channel.r"][0], _channel(cfg), max(n, 2))
    p, se = mc_outage(model.config, 2, n, model.r * float(model.F(n)), RngStream(cfg["seed"], n), cfg["mc.samples"])
    return PointResult({"config_hash": tag, "n_receivers": n, "gain": float(model.F(n)),
                        "single_tx_gain": float(model.single_tx_table[n]),
                        "mimo_range": model.r * float(model.F(n)),
                        "mc_outage_at_R": p, "mc_se": se})


def _mc_point(args) -> PointResult:
    cfg, n_tx, n, tag = args
    model = RangeModel.for_range(cfg["channel.r"][0], _channel(cfg), max(n, 2))
    g = model.single_tx_table if n_tx == 1 else model.gain_table
    d = model.r * float(g[n])
    p, se = mc_outage(model.config, n_tx, n, d, RngStream(cfg["seed"], 1000 * n_tx + n), cfg["mc.samples"])
    return PointResult({"config_hash": tag, "n_tx": n_tx, "n_receivers": n, "distance": d,
                        "analytic_outage": analytic_outage(model.config, d, n, n_tx),
                        "mc_outage": p, "mc_se": se})


def _points(cfg: dict, config_text: str):
    def tag(*parts):
        h = hashlib.sha256((config_text + repr(parts)).encode()).hexdigest()
        return h[:16]
    sc = cfg["scenario"]
    if sc == "gain-curve":
        return _gain_point, [(cfg, n, tag(n)) for n in cfg["gain.n_receivers"]]
    if sc == "channel-mc":
        return _mc_point, [(cfg, t, n, tag(t, n)) for t in cfg["mc.n_tx"] for n in cfg["mc.n_receivers"]]
    grid = list(product(cfg["channel.r"], cfg["traffic.lambda"], cfg["traffic.v"]))
    if sc == "single-point":
        grid = grid[:1]
    return _traffic_point, [(cfg, r, lam, v, tag(r, lam, v)) for r, lam, v in grid]


def _write_csv(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _num(v) for k, v in row.items()})
    path.write_text(buf.getvalue(), encoding="utf-8")


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return _num(x)
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_safe(v) for v in x]
    return x


def run(config_path: str, seed: int | None = None, replicates: int | None = None,
        jobs: int | None = None, output: str | None = None, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    try:
        pairs = read_pairs(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    cfg, problems = check_config(pairs)
    for key, val in (("seed", seed), ("replicates", replicates), ("jobs", jobs), ("output_dir", output)):
        if val is not None:
            if not SCHEMA[key].check(val):
                problems.append(f"--{key.replace('_dir', '')} {val} out of range, must be {SCHEMA[key].rule}")
            cfg[key] = val
    if problems:
        for p in problems:
            print(f"error: {p}", file=err)
        return EXIT_CONFIG
    text = format_config(cfg)
    try:
        _channel(cfg)
        worker, points = _points(cfg, format_config(cfg, PLACEMENT))
    except DomainError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG

    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "resolved_config.txt").write_text(text, encoding="utf-8")
    t0 = time.perf_counter()
    n_jobs = cfg["jobs"] or os.cpu_count() or 1
    results: list[PointResult] = []
    fatal = None
    try:
        if n_jobs == 1 or len(points) == 1:
            for p in points:
                results.append(worker(p))
        else:
            with ProcessPoolExecutor(max_workers=min(n_jobs, len(points))) as pool:
                # map keeps grid order whatever the completion order
                results.extend(pool.map(worker, points))
    except (NumericError, DomainError, ArithmeticError) as exc:
        fatal = f"{type(exc).__name__}: {exc}"
    rows = [res.row for res in results]
    errors = [res.error for res in results if res.error]
    if fatal:
        errors.append(fatal)
    partial = bool(errors)
    _write_csv(outdir / f"{cfg['scenario']}.csv", rows)
    summary = {"scenario": cfg["scenario"], "seed": cfg["seed"], "points": len(points),
               "completed": len(rows), "partial": partial, "errors": errors,
               "warnings": sorted({w for res in results for w in res.warnings}),
               "config": {k: cfg[k] for k in SCHEMA if k not in PLACEMENT}, "rows": rows}
    (outdir / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2) + "\n", encoding="utf-8")
    print(f"{cfg['scenario']}: {len(rows)}/{len(points)} points in "
          f"{time.perf_counter() - t0:.1f} s -> {outdir}", file=err)
    for e in errors:
        print(f"error: {e}", file=err)
    return EXIT_NUMERIC if partial else EXIT_OK


def validate(config_path: str, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    try:
        pairs = read_pairs(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    _, problems = check_config(pairs)
    if problems:
        for p in problems:
            print(p, file=out)
        return EXIT_CONFIG
    print("ok", file=out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="highway-ips", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--replicates", type=int)
    p_run.add_argument("--jobs", type=int)
    p_run.add_argument("--output")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    a = ap.parse_args(argv)
    if a.command == "validate":
        return validate(a.config)
    return run(a.config, a.seed, a.replicates, a.jobs, a.output)


if __name__ == "__main__":
    sys.exit(main())
