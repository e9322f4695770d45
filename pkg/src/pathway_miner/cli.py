"""``pathway-miner`` command line interface.

Subcommands run the pipeline stage by stage, each reading the artifacts of the
previous stage from the output directory::

    gen -> stability -> cluster -> detect -> mine -> assert -> report

Exit codes: 0 success, 2 config/parse error, 3 data error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, clustering, detection, grid_io, partitioning, pipeline, rules, sequences, svg
from .config import ConfigError, RunConfig, load_config
from .detection import write_csv

logger = logging.getLogger("pathway_miner")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


class InvariantError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# shared helpers


def _dump_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
    return path


def load_pair(cfg: RunConfig) -> grid_io.EnsemblePair:
    if cfg.scenario is not None:
        pair = grid_io.generate_scenario(cfg.scenario_config())
    else:
        pair = grid_io.load_ensemble(
            [cfg.resolve(p) for p in cfg.datasets["forced"]],
            [cfg.resolve(p) for p in cfg.datasets["baseline"]],
        )
    if cfg.trim_rows:
        pair = grid_io.EnsemblePair(
            forced=[grid_io.trim_poles(d, cfg.trim_rows) for d in pair.forced],
            baseline=[grid_io.trim_poles(d, cfg.trim_rows) for d in pair.baseline],
        )
    missing = [v for v in cfg.variables if v not in pair.forced[0].names]
    if missing:
        raise DataError(f"variables {missing} not present in the datasets ({pair.forced[0].names})")
    return pair


def _grid_meta(pair, grid) -> dict:
    ds = pair.forced[0]
    return {
        "p": grid.p,
        "nlat_bands": grid.nlat_bands,
        "nlon_bands": grid.nlon_bands,
        "npart": grid.npart,
        "times": list(ds.times),
        "lats": ds.lats.tolist(),
        "lons": ds.lons.tolist(),
        "members": pipeline.member_names(pair),
        "ensemble_size": pair.size,
    }


def _grid_from_meta(meta) -> partitioning.PartitionGrid:
    return partitioning.PartitionGrid(
        p=meta["p"],
        nlat_bands=meta["nlat_bands"],
        nlon_bands=meta["nlon_bands"],
        lats=np.asarray(meta["lats"]),
        lons=np.asarray(meta["lons"]),
    )


def _load_clusters(cfg: RunConfig):
    cdir = cfg.out_dir / "clusters"
    meta_path = cdir / "grid.json"
    if not meta_path.is_file():
        raise DataError(f"no clustering artifacts in {cdir}; run `pathway-miner cluster` with this config first")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    fitted = []
    for v in cfg.variables:
        path = cdir / f"{v}.json"
        if not path.is_file():
            raise DataError(f"missing clustering for {v!r} ({path}); rerun `pathway-miner cluster`")
        fitted.append(clustering.read_fitted(path))
    return meta, fitted


def _load_index(cfg: RunConfig) -> sequences.PatternIndex:
    path = cfg.out_dir / "mine" / "index.jsonl"
    if not path.is_file():
        raise DataError(f"no pattern index at {path}; run `pathway-miner mine` first")
    return sequences.read_index_jsonl(path)


def _ruleset(cfg: RunConfig) -> rules.RuleSet:
    if cfg.rules is not None:
        path = cfg.resolve(cfg.rules)
        if not path.is_file():
            raise ConfigError(f"rules file not found: {path}")
        return rules.load_rules(path)
    if cfg.rules_text is not None:
        return rules.parse_rules(cfg.rules_text, source="<config rules_text>")
    return rules.RuleSet()


def _member_tag(name: str) -> str:
    arm, i = pipeline.split_member(name)
    return f"{arm}_{i:02d}"


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(cfg: RunConfig, threads: int = 1) -> dict:
    if cfg.scenario is None:
        raise ConfigError("gen needs a 'scenario' section in the config")
    pair = grid_io.generate_scenario(cfg.scenario_config())
    paths = grid_io.write_ensemble(pair, cfg.out_dir / "data")
    logger.info("wrote %d datasets under %s", len(paths), cfg.out_dir / "data")
    return {"datasets": [str(p) for p in paths]}


def _sample(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    if n <= 0 or points.shape[0] <= n:
        return points
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(points.shape[0], size=n, replace=False))
    return points[idx]


def cmd_stability(cfg: RunConfig, threads: int = 1) -> dict:
    pair = load_pair(cfg)
    sw = cfg.sweep
    rows, recommended = [], {}
    for v in cfg.variables:
        cache = {}

        def points_for(p, sig, v=v):
            grid = partitioning.make_partitions(pair.forced[0], p)
            spec = partitioning.SignatureSpec.from_dict(sig)
            sigs = pipeline.ensemble_signatures(pair, grid, spec, v, cfg.missing_policy, threads)
            pts = _sample(partitioning.stack_points(sigs), sw.sample, cfg.seed)
            cache[(p, sig)] = pts.shape[0]
            return pts

        res = clustering.stability_sweep(
            points_for,
            sw.k_range,
            sw.partition_sizes,
            sw.signatures,
            seed=cfg.seed,
            threads=threads,
            k_min_exclusive=sw.k_min_exclusive,
            max_iter=cfg.max_iter,
            tol=cfg.tol,
        )
        for est in res.rows:
            p, sig = est.params["p"], est.params["signature"]
            rows.append(
                [v, p, sig, est.k, cache[(p, sig)], est.averaged_ari, *est.aris, est.inertia]
            )
        recommended[v] = [
            {"p": p, "signature": sig, "k": k, "peaks": peaks, "note": note}
            for (p, sig), (k, peaks, note) in res.recommended.items()
        ]
    header = ["variable", "p", "signature", "k", "n_points", "averaged_ari"]
    header += [f"ari_{i}" for i in range(1, clustering.N_RANDOM_RUNS + 1)] + ["near_optimal_inertia"]
    write_csv(cfg.out_dir / "stability" / "stability.csv", header, rows)
    _dump_json(cfg.out_dir / "stability" / "recommended.json", recommended)
    return {"recommended": recommended}


def cmd_cluster(cfg: RunConfig, threads: int = 1) -> dict:
    pair = load_pair(cfg)
    grid = partitioning.make_partitions(pair.forced[0], cfg.partition_size)
    names = pipeline.member_names(pair)
    cdir = cfg.out_dir / "clusters"
    out = {}
    for v in cfg.variables:
        sigs = pipeline.ensemble_signatures(pair, grid, cfg.signature_for(v), v, cfg.missing_policy, threads)
        try:
            fv = pipeline.fit_variable(
                sigs, names, int(cfg.k[v]), cfg.seed, cfg.n_init, cfg.max_iter, cfg.tol, threads
            )
        except ValueError as exc:
            raise DataError(f"clustering {v}: {exc}") from None
        means = fv.centroids.mean(axis=1)
        if np.any(np.diff(means) < 0):
            raise InvariantError(f"{v}: relabeled centroids are not ordered")
        clustering.write_fitted(fv, cdir)
        out[v] = {"k": fv.k, "inertia": fv.inertia, "centroid_means": means.tolist()}
        logger.info("clustered %s: k=%d inertia=%.6g", v, fv.k, fv.inertia)
    _dump_json(cdir / "grid.json", _grid_meta(pair, grid))
    return out


def cmd_detect(cfg: RunConfig, threads: int = 1) -> dict:
    meta, fitted = _load_clusters(cfg)
    grid = _grid_from_meta(meta)
    times = meta["times"]
    ddir = cfg.out_dir / "detect"
    summary = {}
    for fv in fitted:
        det = pipeline.detect_variable(fv, grid, cfg.alpha)
        for name, ms in det.membership.items():
            detection.write_membership_csv(ddir / "membership" / f"{fv.variable}_{_member_tag(name)}.csv", times, ms)
            detection.write_latitude_mode_csv(
                ddir / "latitude_mode" / f"{fv.variable}_{_member_tag(name)}.csv",
                times,
                det.lat_mode[name],
                grid.band_lats,
            )
        detection.write_significance_csv(ddir / f"significance_{fv.variable}.csv", times, det.per_cluster)
        forced = [n for n in fv.members if n.startswith("forced/")]
        baseline = [n for n in fv.members if n.startswith("baseline/")]
        panels = [
            {
                "forced": [100 * det.membership[n].fraction[c] for n in forced],
                "baseline": [100 * det.membership[n].fraction[c] for n in baseline],
                "flags": det.per_cluster[c].flag,
                "title": f"{fv.variable} cluster {c}: % of partitions",
            }
            for c in range(fv.k)
        ]
        svg.timeline_chart(panels).save(ddir / f"timeline_{fv.variable}.svg")
        for c, s in enumerate(det.per_cluster):
            crit = _t_critical_lines(s)
            svg.timeline_chart(
                [{"forced": [s.t_stat], "baseline": [], "flags": s.flag, "hlines": crit, "title": f"{fv.variable} cluster {c}: t statistic"}]
            ).save(ddir / "tstat" / f"{fv.variable}_c{c}.svg")
        for name in (forced[0], baseline[0]):
            svg.heatmap(
                det.lat_mode[name], title=f"{fv.variable} most common cluster per latitude ({name})", row_labels=grid.band_lats
            ).save(ddir / f"latitude_mode_{fv.variable}_{_member_tag(name)}.svg")
        summary[fv.variable] = {
            f"cluster_{c}": {
                "increase": int((s.flag > 0).sum()),
                "decrease": int((s.flag < 0).sum()),
            }
            for c, s in enumerate(det.per_cluster)
        }
    _dump_json(ddir / "summary.json", summary)
    return summary


def _t_critical_lines(s: detection.SignificanceSeries):
    """Approximate +-t thresholds: the smallest |t| that was flagged, if any."""
    flagged = np.abs(s.t_stat[(s.flag != 0) & np.isfinite(s.t_stat)])
    if flagged.size == 0:
        return []
    t = float(flagged.min())
    return [-t, t]


def cmd_mine(cfg: RunConfig, threads: int = 1) -> dict:
    meta, fitted = _load_clusters(cfg)
    index = pipeline.mine_ensemble(fitted, cfg.n_min, cfg.n_max, cfg.acyclic, threads)
    for p in index.patterns():
        if cfg.acyclic and len(set(p)) != len(p):
            raise InvariantError(f"cyclic pattern emitted: {sequences.format_pattern(p)}")
    mdir = cfg.out_dir / "mine"
    mdir.mkdir(parents=True, exist_ok=True)
    sequences.write_index_jsonl(index, mdir / "index.jsonl")
    sequences.write_occurrence_log(index, mdir / "occurrences.bin")
    rows = pipeline.mining_summary(index, meta["ensemble_size"])
    table = [[r.member, r.unique_evolutions, r.baseline_pts, r.forced_pts] for r in rows]
    write_csv(
        mdir / "summary.csv",
        ["member", "unique_evolutions", "baseline_partition_timesteps", "forced_partition_timesteps"],
        table,
    )
    return {"patterns": len(index), "summary": table}


def cmd_assert(cfg: RunConfig, threads: int = 1) -> dict:
    ruleset = _ruleset(cfg)
    meta, fitted = _load_clusters(cfg)
    index = _load_index(cfg)
    schema = [fv.variable for fv in fitted]
    try:
        ruleset.bind(schema)
    except rules.RuleBindError as exc:
        raise ConfigError(str(exc)) from None
    grid = _grid_from_meta(meta)
    T, npart, E = len(meta["times"]), meta["npart"], meta["ensemble_size"]
    res = pipeline.run_assertions(
        index, ruleset, schema, T, npart, E, cfg.alpha, cfg.top_n, cfg.top_length
    )
    adir = cfg.out_dir / "assert"
    adir.mkdir(parents=True, exist_ok=True)
    sequences.write_index_jsonl(res.filtered, adir / "filtered.jsonl")
    (adir / "rules.txt").write_text(ruleset.render() + "\n", encoding="utf-8")

    times = meta["times"]
    sig = res.significance
    header = ["time"] + [f"forced_{m}" for m in range(E)] + [f"baseline_{m}" for m in range(E)]
    header += [f"forced_{m}_instances" for m in range(E)] + [f"baseline_{m}_instances" for m in range(E)]
    header += ["t_stat", "p_value", "flag"]
    rows = []
    for t in range(T):
        rows.append(
            [times[t]]
            + [int(s.counts[t]) for s in res.forced]
            + [int(s.counts[t]) for s in res.baseline]
            + [int(s.instances[t]) for s in res.forced]
            + [int(s.instances[t]) for s in res.baseline]
            + [float(sig.t_stat[t]), float(sig.p_value[t]), detection.FLAG_NAMES[int(sig.flag[t])]]
        )
    write_csv(adir / "prevalence.csv", header, rows)
    for s in res.forced + res.baseline:
        rules.write_bitmap(s, adir / "bitmaps" / f"{s.arm}_{s.member:02d}.bin")

    mean_forced = np.mean([s.counts for s in res.forced], axis=0)
    t_peak = int(np.argmax(mean_forced))
    svg.timeline_chart(
        [
            {
                "forced": [s.counts for s in res.forced],
                "baseline": [s.counts for s in res.baseline],
                "flags": sig.flag,
                "vline": t_peak,
                "title": "partitions with an active matching pattern",
            }
        ]
    ).save(adir / "prevalence.svg")
    for s in (res.forced[0], res.baseline[0]):
        svg.partition_map(
            s.active[t_peak], grid.nlat_bands, grid.nlon_bands, title=f"{s.arm} member {s.member}, t={times[t_peak]}"
        ).save(adir / f"map_{s.arm}_{s.member:02d}.svg")

    top_rows = [[sequences.format_pattern(p), b, f] for p, b, f in res.top]
    write_csv(adir / "top_pathways.csv", ["pattern", "baseline_partition_timesteps", "forced_partition_timesteps"], top_rows)
    dur_rows = []
    for rank, (p, _, _) in enumerate(res.top, start=1):
        hist = sequences.duration_stats(res.filtered, p)
        for arm, counter in hist.items():
            dur_rows.extend([rank, sequences.format_pattern(p), arm, d, n] for d, n in sorted(counter.items()))
        if rank == 1:
            svg.histogram(hist, title=f"durations of {sequences.format_pattern(p)}").save(adir / "durations_top1.svg")
    write_csv(adir / "durations.csv", ["rank", "pattern", "arm", "duration", "count"], dur_rows)

    f_pts = res.filtered.total_partition_timesteps(arm="forced")
    b_pts = res.filtered.total_partition_timesteps(arm="baseline")
    longest = pipeline.longest_flagged_run(sig.flag, 1)
    summary = {
        "rules": ruleset.render(),
        "matching_patterns": len(res.filtered),
        "forced_partition_timesteps": f_pts,
        "baseline_partition_timesteps": b_pts,
        "forced_to_baseline_ratio": (f_pts / b_pts) if b_pts else None,
        "peak_time_index": t_peak,
        "flagged_increase": int((sig.flag > 0).sum()),
        "flagged_decrease": int((sig.flag < 0).sum()),
        "longest_increase_run": {"length": longest[0], "start": longest[1], "end": longest[2]},
    }
    _dump_json(adir / "summary.json", summary)
    return summary


def cmd_report(cfg: RunConfig, threads: int = 1) -> dict:
    meta, fitted = _load_clusters(cfg)
    pair = load_pair(cfg)
    grid = _grid_from_meta(meta)
    rdir = cfg.out_dir / "report"
    stat_rows = []
    datasets = [ds for _, _, ds in pair.members()]
    for fv in fitted:
        stats = detection.cluster_stats(datasets, list(fv.labels), grid, fv.variable, fv.k)
        stat_rows.extend([fv.variable, s.cluster, s.count, s.mean, s.std] for s in stats)
    write_csv(rdir / "cluster_stats.csv", ["variable", "cluster", "cells", "mean", "std"], stat_rows)

    config = cfg.to_dict()
    config.pop("out")  # keep the report independent of where it was written
    report = {"version": __version__, "config": config, "grid": {k: meta[k] for k in ("p", "nlat_bands", "nlon_bands", "npart", "ensemble_size")}}
    report["dropped_edge"] = {
        "rows": len(meta["lats"]) - grid.nlat_bands * grid.p,
        "cols": len(meta["lons"]) - grid.nlon_bands * grid.p,
    }
    for name, rel in (
        ("stability", "stability/recommended.json"),
        ("detection", "detect/summary.json"),
        ("assertions", "assert/summary.json"),
    ):
        path = cfg.out_dir / rel
        if path.is_file():
            report[name] = json.loads(path.read_text(encoding="utf-8"))
    summary_csv = cfg.out_dir / "mine" / "summary.csv"
    if summary_csv.is_file():
        report["mining_summary_csv"] = summary_csv.read_text(encoding="utf-8").splitlines()
    _dump_json(rdir / "report.json", report)

    lines = ["# pathway-miner report", "", "## Cluster statistics", "", "| variable | cluster | cells | mean | std |", "|---|---|---|---|---|"]
    lines += [f"| {v} | {c} | {n} | {m:.4g} | {s:.3g} |" for v, c, n, m, s in stat_rows]
    if "assertions" in report:
        a = report["assertions"]
        lines += [
            "",
            "## Assertions",
            "",
            f"rules: `{a['rules']}`",
            "",
            f"- matching patterns: {a['matching_patterns']}",
            f"- partition-timesteps forced / baseline: {a['forced_partition_timesteps']} / {a['baseline_partition_timesteps']}",
            f"- longest significant increase: {a['longest_increase_run']['length']} steps",
        ]
    (rdir / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


COMMANDS = {
    "gen": cmd_gen,
    "stability": cmd_stability,
    "cluster": cmd_cluster,
    "detect": cmd_detect,
    "mine": cmd_mine,
    "assert": cmd_assert,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathway-miner", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=list(COMMANDS))
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (dotted keys reach nested sections); repeatable")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (output does not depend on it)")
    ap.add_argument("--out", help="output directory (overrides config 'out')")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _run_log(out_dir: Path, command: str, status: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with open(out_dir / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {command} {status}\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    cfg = None
    try:
        cfg = load_config(args.config, args.overrides, args.out)
        result = COMMANDS[args.command](cfg, threads=args.threads)
    except (ConfigError, rules.RuleSyntaxError, rules.RuleBindError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (DataError, grid_io.DatasetError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except InvariantError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        code = EXIT_INTERNAL
    else:
        if args.verbose:
            print(json.dumps(result, indent=1, default=str))
        code = EXIT_OK
    if cfg is not None:
        _run_log(cfg.out_dir, args.command, f"exit={code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
