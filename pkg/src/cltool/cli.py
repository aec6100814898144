"""Experiment runner: JSON configs in, reproducible CSV/JSON artifacts out.

Usage:  cltool <experiment> --config cfg.json [--out DIR] [--threads N]
        cltool validate --config cfg.json
        cltool plotdata --curves a.csv [b.csv ...] [--out DIR] [--script]
        cltool version

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 internal numeric failure.

Every artifact embeds the tool version and a hash of the resolved config in
a header line, and all randomness flows from the config's top-level seed via
a documented (seed, trial-index) derivation, so identical configs produce
byte-identical outputs regardless of worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, codec, de_bec, de_bms
from .channel import ChannelModel, from_entropy
from .de_bec import Coupling, EnsembleSpec
from .degree import DegreeDistribution, check_universality

EXPERIMENTS = (
    "ebp",
    "maxwell",
    "threshold",
    "sweep",
    "codec-mc",
    "floor",
    "design-rate",
    "universality",
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


# -- config parsing -----------------------------------------------------------


def _require(cfg: dict, key: str, typ=None):
    if key not in cfg:
        raise ConfigError(f"missing required key {key!r}")
    v = cfg[key]
    if typ is not None and not isinstance(v, typ):
        raise ConfigError(f"key {key!r} has type {type(v).__name__}")
    return v


def _check_keys(cfg: dict, allowed, where: str):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _parse_dist(block) -> DegreeDistribution:
    if not isinstance(block, list) or not block:
        raise ConfigError("ensemble.dist must be a non-empty array")
    pairs = []
    for rec in block:
        if not isinstance(rec, dict):
            raise ConfigError("ensemble.dist entries must be objects")
        _check_keys(rec, {"degree", "prob"}, "ensemble.dist entry")
        pairs.append((_require(rec, "degree", int), _require(rec, "prob", (int, float))))
    return DegreeDistribution.from_pairs(pairs)


def _parse_ensemble(block: dict) -> EnsembleSpec:
    _check_keys(block, {"dist", "l_avg", "rate", "L", "w"}, "ensemble")
    dist = _parse_dist(_require(block, "dist"))
    L = int(block.get("L", 0))
    w = int(block.get("w", 0))
    if ("l_avg" in block) == ("rate" in block):
        raise ConfigError("ensemble needs exactly one of l_avg or rate")
    if "rate" in block:
        return EnsembleSpec.from_rate(dist, float(block["rate"]), L=L, w=w)
    l_avg = float(block["l_avg"])
    coupling = Coupling(L, w) if L or w else None
    return EnsembleSpec(dist, l_avg, dist.avg_degree / l_avg, coupling)


def _parse_channel(block: dict) -> ChannelModel:
    _check_keys(block, {"family", "param", "entropy"}, "channel")
    family = _require(block, "family", str)
    if ("param" in block) == ("entropy" in block):
        raise ConfigError("channel needs exactly one of param or entropy")
    if "param" in block:
        return ChannelModel(family, float(block["param"]))
    return from_entropy(family, float(block["entropy"]))


_NUMERIC_DEFAULTS = {
    "tol": 1e-10,
    "max_iter": 50_000,
    "n_points": 2000,
    "tol_eps": 1e-4,
    "tol_entropy": 5e-3,
    "n_bins": 2048,
    "l_max": 30.0,
    "eps_grid": None,
    "entropy_grid": None,
    "direction": "down",
    "bracket": None,
    "L_list": None,
}


def _parse_numerics(block: dict) -> dict:
    _check_keys(block, _NUMERIC_DEFAULTS, "numerics")
    out = dict(_NUMERIC_DEFAULTS)
    out.update(block)
    return out


_TOP_KEYS = {
    "experiment",
    "ensemble",
    "channel",
    "numerics",
    "seed",
    "trials",
    "batch",
    "limit",
    "m_per_position",
    "eps",
    "simulate",
    "output",
}


def resolve_config(cfg: dict) -> dict:
    """Validate, fill defaults, and return the resolved config echo."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, _TOP_KEYS, "config")
    experiment = _require(cfg, "experiment", str)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    resolved = {
        "experiment": experiment,
        "ensemble": _require(cfg, "ensemble", dict),
        "channel": cfg.get("channel"),
        "numerics": _parse_numerics(cfg.get("numerics", {})),
        "seed": int(cfg.get("seed", 0)),
        "trials": int(cfg.get("trials", 0)),
        "batch": int(cfg.get("batch", 100)),
        "limit": int(cfg.get("limit", 0)),
        "m_per_position": int(cfg.get("m_per_position", 1000)),
        "eps": cfg.get("eps"),
        "simulate": bool(cfg.get("simulate", False)),
    }
    # construction errors (bad dist, bad channel) surface here
    _parse_ensemble(resolved["ensemble"])
    if resolved["channel"] is not None:
        _parse_channel(resolved["channel"])
    return resolved


def config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# -- output helpers -----------------------------------------------------------


def _header(tag: str) -> str:
    return f"# cltool {__version__} config={tag}\n"


def _write_csv(path: Path, tag: str, columns, rows):
    with open(path, "w") as fp:
        fp.write(_header(tag))
        fp.write(",".join(columns) + "\n")
        for row in rows:
            fp.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_json(path: Path, tag: str, payload: dict):
    data = {"_meta": {"tool": f"cltool {__version__}", "config": tag}}
    data.update(payload)
    with open(path, "w") as fp:
        json.dump(data, fp, indent=2, sort_keys=True, default=_json_default)
        fp.write("\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v)}")


# -- experiment runners --------------------------------------------------------


def _run_universality(resolved, outdir, tag, threads):
    dist = _parse_dist(resolved["ensemble"]["dist"])
    rep = check_universality(dist)
    return {
        "r1_ok": rep.r1_ok,
        "r2_ok": rep.r2_ok,
        "r2_value": rep.r2_value,
        "r2_bound": rep.r2_bound,
        "avg_degree": rep.avg_degree,
    }


def _run_design_rate(resolved, outdir, tag, threads):
    spec = _parse_ensemble(resolved["ensemble"])
    rep = analysis.design_rate(spec)
    summary = rep.as_dict()
    L_list = resolved["numerics"]["L_list"]
    if L_list:
        fit = analysis.rate_loss_scaling(spec.dist, spec.m_over_n, spec.w, L_list)
        summary["scaling_constant"] = fit.constant
        summary["scaling_max_rel_residual"] = fit.max_rel_residual
        summary["scaling_degenerate"] = fit.degenerate
    return summary


def _run_ebp(resolved, outdir, tag, threads):
    spec = _parse_ensemble(resolved["ensemble"])
    curve = de_bec.ebp_curve_uncoupled(spec, resolved["numerics"]["n_points"])
    _write_csv(outdir / "ebp.csv", tag, ("x", "h", "g"), zip(curve.x, curve.h, curve.g))
    return {"points": len(curve), "signed_area": curve.area()}


def _run_maxwell(resolved, outdir, tag, threads):
    spec = _parse_ensemble(resolved["ensemble"])
    num = resolved["numerics"]
    curve = de_bec.ebp_curve_uncoupled(spec, max(num["n_points"], 2000))
    mx = de_bec.maxwell_construction(curve, spec.m_over_n)
    bp = de_bec.bp_threshold(spec, num["tol_eps"], num["tol"], num["max_iter"])
    _write_csv(outdir / "ebp.csv", tag, ("x", "h", "g"), zip(curve.x, curve.h, curve.g))
    _write_csv(
        outdir / "maxwell.csv",
        tag,
        ("x", "h", "g"),
        zip(mx.curve.x, mx.curve.h, mx.curve.g),
    )
    return {
        "area_threshold": mx.area_threshold,
        "bp_threshold": bp,
        "maxwell_area": mx.curve.area(),
        "status": mx.status,
        "gap_to_capacity": analysis.gap_to_capacity(mx.area_threshold, spec.m_over_n),
    }


def _run_threshold(resolved, outdir, tag, threads):
    spec = _parse_ensemble(resolved["ensemble"])
    ch_block = resolved["channel"]
    if ch_block is None:
        raise ConfigError("threshold experiment needs a channel block")
    family = ch_block["family"]
    num = resolved["numerics"]
    if family == "BEC":
        th = de_bec.bp_threshold(spec, num["tol_eps"], num["tol"], num["max_iter"])
        entropy = th
    else:
        grid = de_bms.Grid(num["n_bins"], num["l_max"])
        th = de_bms.bp_threshold(
            spec,
            family,
            tol_entropy=num["tol_entropy"],
            tol=max(num["tol"], 1e-9),
            max_iter=min(num["max_iter"], de_bms.DEFAULT_MAX_ITER),
            grid=grid,
        )
        entropy = th
    summary = {"family": family, "bp_threshold": th}
    if entropy is not None:
        summary["gap_to_capacity"] = analysis.gap_to_capacity(entropy, spec.m_over_n)
    else:
        summary["note"] = "no BP threshold above floor resolution"
    return summary


def _run_sweep(resolved, outdir, tag, threads):
    spec = _parse_ensemble(resolved["ensemble"])
    ch_block = resolved["channel"]
    num = resolved["numerics"]
    family = ch_block["family"] if ch_block else "BEC"
    direction = num["direction"]
    if family == "BEC":
        grid_vals = num["eps_grid"] or list(np.linspace(0.3, 0.6, 31))
        points = de_bec.ebp_sweep(
            spec,
            grid_vals,
            direction,
            tol=max(num["tol"], de_bec.SWEEP_TOL),
            max_iter=min(num["max_iter"], de_bec.SWEEP_MAX_ITER),
        )
        rows = [(p.eps, p.avg_gexit, p.converged) for p in points]
    else:
        grid_vals = num["entropy_grid"] or list(np.linspace(0.3, 0.6, 16))
        grid = de_bms.Grid(num["n_bins"], num["l_max"])
        points = de_bms.exit_proxy_curve(
            spec,
            family,
            grid_vals,
            direction=direction,
            tol=max(num["tol"], 1e-9),
            max_iter=min(num["max_iter"], de_bms.DEFAULT_MAX_ITER),
            grid=grid,
        )
        rows = [(p.entropy, p.proxy_gexit, p.converged) for p in points]
    _write_csv(outdir / "sweep.csv", tag, ("eps", "avg_gexit", "converged"), rows)
    return {"family": family, "direction": direction, "points": len(rows)}


def _mc_trial(args):
    """One codec Monte-Carlo trial; module-level for process pools."""
    (seed, trial, ensemble_block, channel_block, m_per_pos, batch, limit) = args
    spec = _parse_ensemble(ensemble_block)
    channel = _parse_channel(channel_block)
    stream = codec.StreamSpec(seed=seed, m_per_position=m_per_pos, spec=spec)
    rng = np.random.default_rng([seed, trial])
    info_bits = rng.integers(0, 2, stream.total_bits).astype(np.int8)
    res = codec.rateless_session(
        stream, channel, info_bits, batch=batch, limit=limit, rng=rng,
        true_bits=info_bits,
    )
    return (trial, res.status, res.symbols_used, res.realized_rate)


def _run_codec_mc(resolved, outdir, tag, threads):
    if resolved["channel"] is None:
        raise ConfigError("codec-mc experiment needs a channel block")
    trials = resolved["trials"]
    stream_args = []
    limit = resolved["limit"]
    if limit <= 0:
        spec = _parse_ensemble(resolved["ensemble"])
        limit = 20 * resolved["m_per_position"] * spec.L
    for t in range(trials):
        stream_args.append(
            (
                resolved["seed"] + t,
                t,
                resolved["ensemble"],
                resolved["channel"],
                resolved["m_per_position"],
                resolved["batch"],
                limit,
            )
        )
    if threads > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_mc_trial, stream_args))
    else:
        rows = [_mc_trial(a) for a in stream_args]
    rows.sort(key=lambda r: r[0])  # merge in trial order for determinism
    _write_csv(
        outdir / "results.csv",
        tag,
        ("trial", "status", "symbols_used", "realized_rate"),
        rows,
    )
    done = [r for r in rows if r[1] == "decoded"]
    summary = {"trials": trials, "decoded": len(done)}
    if done:
        used = sorted(r[2] for r in done)
        summary["median_symbols_used"] = used[len(used) // 2]
        summary["mean_realized_rate"] = float(np.mean([r[3] for r in done]))
    return summary


def _run_floor(resolved, outdir, tag, threads):
    spec = _parse_ensemble(resolved["ensemble"])
    eps = resolved["eps"]
    eps_list = eps if isinstance(eps, list) else [eps if eps is not None else 0.35]
    reports = []
    for e in eps_list:
        bound = analysis.error_floor_bound(spec.pois, spec.dist, float(e))
        sim = None
        if resolved["simulate"]:
            sim = _simulate_floor(resolved, spec, float(e))
        reports.append(analysis.FloorReport(float(e), bound, sim).as_dict())
    _write_csv(
        outdir / "floor.csv",
        tag,
        ("eps", "bound", "simulated_ber"),
        [(r["eps"], r["bound"], r["simulated_ber"] if r["simulated_ber"] is not None else "") for r in reports],
    )
    return {"reports": reports}


def _simulate_floor(resolved, spec, eps: float) -> float:
    stream = codec.StreamSpec(
        seed=resolved["seed"], m_per_position=resolved["m_per_position"], spec=spec
    )
    rng = np.random.default_rng([resolved["seed"], 0])
    n_symbols = int(round(stream.total_bits / spec.m_over_n))
    channel = ChannelModel("BEC", eps)
    state = codec.PeelState(stream)
    # all-zero codeword (sound by linearity)
    for index in range(n_symbols):
        rec = codec.derive_symbol(stream, index)
        state.add_symbol(rec, channel.transmit(0, rng))
    state.run()
    return 0.5 * state.n_unknown / stream.total_bits


_RUNNERS = {
    "universality": _run_universality,
    "design-rate": _run_design_rate,
    "ebp": _run_ebp,
    "maxwell": _run_maxwell,
    "threshold": _run_threshold,
    "sweep": _run_sweep,
    "codec-mc": _run_codec_mc,
    "floor": _run_floor,
}


def run_experiment(cfg: dict, outdir: Path, threads: int = 1) -> dict:
    """Resolve the config, run the experiment, write artifacts, return summary."""
    resolved = resolve_config(cfg)
    tag = config_hash(resolved)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "resolved_config.json", tag, {"resolved": resolved})
    summary = _RUNNERS[resolved["experiment"]](resolved, outdir, tag, threads)
    _write_json(outdir / "summary.json", tag, {"summary": summary})
    return summary


# -- plot data -----------------------------------------------------------------


def emit_plotdata(curve_files, outdir: Path, script: bool = False):
    """Rewrite curve CSVs as column-aligned gnuplot data plus a script stub.

    Output is byte-stable for identical inputs: headers carry the source
    file's content hash, never a timestamp.
    """
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in curve_files:
        path = Path(path)
        raw = path.read_bytes()
        tag = hashlib.sha256(raw).hexdigest()[:16]
        lines = raw.decode().splitlines()
        body = [ln for ln in lines if ln and not ln.startswith("#")]
        out = outdir / (path.stem + ".dat")
        with open(out, "w") as fp:
            fp.write(f"# cltool {__version__} source={path.name} sha={tag}\n")
            if body:
                fp.write("# " + "  ".join(body[0].split(",")) + "\n")
                for ln in body[1:]:
                    fp.write("  ".join(f"{f:>18s}" for f in ln.split(",")) + "\n")
        written.append(out)
    if script:
        gp = outdir / "plot.gp"
        with open(gp, "w") as fp:
            fp.write(f"# cltool {__version__} plot stub\n")
            fp.write("set xlabel 'h'\nset ylabel 'GEXIT'\nset key left top\n")
            fp.write("plot \\\n")
            for i, out in enumerate(written):
                style = "dashed" if "ebp" in out.stem else "solid"
                sep = ", \\\n" if i + 1 < len(written) else "\n"
                fp.write(
                    f"  '{out.name}' using 2:3 with lines dt {2 if style == 'dashed' else 1}"
                    f" title '{out.stem}'{sep}"
                )
        written.append(gp)
    return written


# -- entry point ----------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cltool", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("validate",):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--threads", type=int, default=1)
    pd = sub.add_parser("plotdata")
    pd.add_argument("--curves", nargs="+", required=True)
    pd.add_argument("--out", default="out")
    pd.add_argument("--script", action="store_true")
    sub.add_parser("version")

    args = parser.parse_args(argv)
    if args.command == "version":
        print(f"cltool {__version__}")
        return EXIT_OK

    if args.command == "plotdata":
        try:
            written = emit_plotdata(args.curves, Path(args.out), args.script)
        except OSError as exc:
            print(json.dumps({"error": "io", "detail": str(exc)}))
            return EXIT_IO
        for w in written:
            print(w)
        return EXIT_OK

    try:
        with open(args.config) as fp:
            cfg = json.load(fp)
    except OSError as exc:
        print(json.dumps({"error": "io", "detail": str(exc)}))
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(json.dumps({"error": "config", "detail": f"bad JSON: {exc}"}))
        return EXIT_CONFIG

    if args.command == "validate":
        try:
            resolved = resolve_config(cfg)
        except (ConfigError, ValueError) as exc:
            print(json.dumps({"error": "config", "detail": str(exc)}))
            return EXIT_CONFIG
        print(json.dumps({"ok": True, "config": config_hash(resolved)}))
        return EXIT_OK

    if cfg.get("experiment") != args.command and "experiment" in cfg:
        print(
            json.dumps(
                {
                    "error": "config",
                    "detail": f"config experiment {cfg.get('experiment')!r} does not "
                    f"match subcommand {args.command!r}",
                }
            )
        )
        return EXIT_CONFIG
    cfg.setdefault("experiment", args.command)

    try:
        summary = run_experiment(cfg, Path(args.out), args.threads)
    except (ConfigError, ValueError) as exc:
        print(json.dumps({"error": "config", "detail": str(exc)}))
        return EXIT_CONFIG
    except OSError as exc:
        print(json.dumps({"error": "io", "detail": str(exc)}))
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": "numeric", "detail": str(exc)}))
        return EXIT_NUMERIC
    print(json.dumps({"ok": True, "summary": summary}, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
