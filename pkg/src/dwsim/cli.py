"""Experiment runner: config parsing, deterministic seeding, dispatch,
CSV/JSON emission.

Configs are JSON documents (see README for the schema); flags override
seed/workers/output. Every run writes a manifest echoing the full config
so a result can be reproduced exactly: single-worker reruns are
byte-identical, and worker count only changes float merge order within
reported standard errors (chunk merges are applied in fixed order, so in
practice multi-worker runs reproduce too).

Exit codes: 0 ok, 2 validation error, 3 Monte Carlo budget error,
4 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import BudgetError, ValidationError
from .kernels import DiscreteMeasure, measure_from_config
from .streams import stream

KINDS = (
    "tree-sample",
    "moment-density",
    "simulate",
    "hitting",
    "palm",
    "decouple",
    "multiplicity",
)

FLOAT_FMT = "%.17g"


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    seed: int = 0
    workers: int = 1
    output: str = "out"

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text())
        return cls(
            kind=doc["kind"],
            params=doc.get("params", {}),
            seed=int(doc.get("seed", 0)),
            workers=int(doc.get("workers", 1)),
            output=doc.get("output", "out"),
        )

    def validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


def _fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _run_tree_sample(cfg: ExperimentConfig):
    from .trees import sample_brownian_tree

    p = cfg.params
    n = int(p["n"])
    t = float(p.get("t", 1.0))
    d = int(p.get("d", 2))
    reps = int(p["reps"])
    root = p.get("root", [0.0] * d)
    header = (
        ["rep", "topology_id"]
        + [f"tau_{k}" for k in range(1, n)]
        + [f"leaf_{i}_{ax}" for i in range(1, n + 1) for ax in range(1, d + 1)]
    )
    rows = []
    for rep in range(reps):
        rng = stream(cfg.seed, rep)
        tree = sample_brownian_tree(n, t, d, root, rng)
        top_id = tree.topology.key if tree.topology is not None else "leaf"
        rows.append(
            [rep, top_id]
            + [float(v) for v in tree.split_times]
            + [float(v) for v in tree.leaf_positions.ravel()]
        )
    _write_csv(Path(cfg.output + ".csv"), header, rows)
    return {"rows": reps}, []


def _run_moment_density(cfg: ExperimentConfig):
    from .moments import MomentDensityRequest, process_moment_density

    p = cfg.params
    mu = measure_from_config(p["mu"])
    req = MomentDensityRequest(
        n=int(p["n"]), t=float(p["t"]), d=mu.d, xs=np.asarray(p["xs"], dtype=float), mu=mu
    )
    est = process_moment_density(req, rng=stream(cfg.seed, 0), reps=int(p.get("reps", 200_000)))
    record = {
        "request": {"n": req.n, "t": req.t, "d": req.d, "xs": req.xs.tolist()},
        "value": est.value,
        "stderr": est.stderr,
        "tolerance": est.tolerance,
        "method": est.method,
    }
    return record, []


def _run_simulate(cfg: ExperimentConfig):
    from .particles import count_surviving_ancestors, simulate_field
    from .streams import RunningMoments

    p = cfg.params
    mu = measure_from_config(p["mu"])
    t = float(p["t"])
    N = int(p["N"])
    reps = int(p["reps"])
    emit = p.get("emit", "summary")
    checkpoints = tuple(float(s) for s in p.get("checkpoints", ()))
    mass_acc = RunningMoments()
    anc_acc = RunningMoments()
    particle_rows = []
    warnings: list[str] = []
    for rep in range(reps):
        rng = stream(cfg.seed, rep)
        fld = simulate_field(mu, t, N, rng, checkpoints=checkpoints)
        mass_acc.update([fld.total_mass])
        anc_acc.update([count_surviving_ancestors(fld)])
        if emit == "particles":
            for idx in range(fld.count):
                particle_rows.append(
                    [rep, idx, int(fld.ancestor_ids[idx])]
                    + [float(v) for v in fld.positions[idx]]
                    + [1.0 / N]
                )
    if emit == "particles":
        d = mu.d
        header = ["rep", "particle_idx", "ancestor_id"] + [f"x_{k}" for k in range(1, d + 1)] + ["mass"]
        _write_csv(Path(cfg.output + ".csv"), header, particle_rows)
    record = {
        "total_mass": {
            "mean": mass_acc.mean,
            "variance": mass_acc.variance,
            "stderr": mass_acc.stderr,
            "reps": reps,
        },
        "surviving_ancestors": {"mean": anc_acc.mean, "variance": anc_acc.variance},
    }
    return record, warnings


def _run_hitting(cfg: ExperimentConfig):
    from .palm import HittingRequest, hitting_profile

    p = cfg.params
    mu = measure_from_config(p["mu"])
    eps_list = tuple(float(e) for e in p.get("eps", [0.2, 0.1, 0.05]))
    req = HittingRequest(
        mu=mu,
        t=float(p["t"]),
        centers=np.asarray(p["centers"], dtype=float),
        eps=eps_list[0],
        reps=int(p["reps"]),
        resolution=int(p.get("N", 10_000)),
    )
    joint, singles, eps_out = hitting_profile(
        req, seed=cfg.seed, eps_list=eps_list, boost=bool(p.get("boost", False)),
        workers=cfg.workers,
    )
    rows = []
    warnings = []
    for k, e in enumerate(eps_out):
        hits = int(joint[k])
        p_hat = hits / req.reps
        se = float(np.sqrt(max(p_hat * (1 - p_hat), 1e-300) / req.reps))
        rows.append([e, p_hat, se, req.reps, hits])
        if hits < 10:
            warnings.append(f"eps={e}: only {hits} hits (budget)")
    _write_csv(Path(cfg.output + ".csv"), ["eps", "estimate", "stderr", "reps", "hits"], rows)
    record = {"rows": rows, "singles": singles.tolist()}
    return record, warnings


def _run_palm(cfg: ExperimentConfig):
    from .palm import campbell_palm_estimate

    p = cfg.params
    mu = measure_from_config(p["mu"])
    functional = p.get("functional", "total_mass")
    if isinstance(functional, list):
        functional = tuple(functional)
    sample = campbell_palm_estimate(
        functional,
        mu,
        float(p["t"]),
        np.asarray(p["centers"], dtype=float),
        float(p["eps"]),
        int(p["reps"]),
        resolution=int(p.get("N", 10_000)),
        seed=cfg.seed,
        workers=cfg.workers,
    )
    rows = [
        [float(p["eps"]), sample.mean, sample.mean_stderr(), int(p["reps"]), sample.values.size]
    ]
    _write_csv(Path(cfg.output + ".csv"), ["eps", "estimate", "stderr", "reps", "hits"], rows)
    return {"weighted_mean": sample.mean, "ess": sample.ess, "support": sample.values.size}, []


def _run_decouple(cfg: ExperimentConfig):
    from .palm import decoupling_experiment

    p = cfg.params
    mu = measure_from_config(p["mu"])
    probe = p.get("probe", "total_mass")
    if isinstance(probe, list):
        probe = tuple(probe)
    report = decoupling_experiment(
        mu,
        float(p["t"]),
        np.asarray(p["centers"], dtype=float),
        probe,
        int(p["reps"]),
        resolution=int(p.get("N", 4_000)),
        eps_ladder=tuple(float(e) for e in p.get("eps", [0.2, 0.1, 0.05])),
        seed=cfg.seed,
        workers=cfg.workers,
        comparator_reps=int(p.get("comparator_reps", 400)),
    )
    rows = [
        [r.eps, r.dependence, r.dependence_err, report.reps, r.hits] for r in report.rungs
    ]
    _write_csv(Path(cfg.output + ".csv"), ["eps", "estimate", "stderr", "reps", "hits"], rows)
    return _jsonable(report), []


def _run_multiplicity(cfg: ExperimentConfig):
    from .palm import multiplicity_diagnostics

    p = cfg.params
    mu = measure_from_config(p["mu"])
    report = multiplicity_diagnostics(
        mu,
        float(p["t"]),
        np.asarray(p["centers"], dtype=float),
        float(p["eps"]),
        float(p["h"]),
        int(p["reps"]),
        resolution=int(p.get("N", 4_000)),
        seed=cfg.seed,
        workers=cfg.workers,
    )
    rows = [
        [report.eps, report.one_cluster_two_balls.value, report.one_cluster_two_balls.stderr,
         int(p["reps"]), report.one_cluster_two_balls.details.get("hits", 0)],
        [report.eps, report.one_ball_two_clusters.value, report.one_ball_two_clusters.stderr,
         int(p["reps"]), report.one_ball_two_clusters.details.get("hits", 0)],
        [report.eps, report.joint_hit.value, report.joint_hit.stderr,
         int(p["reps"]), report.joint_hit.details.get("hits", 0)],
    ]
    _write_csv(Path(cfg.output + ".csv"), ["eps", "estimate", "stderr", "reps", "hits"], rows)
    return _jsonable(report), []


_RUNNERS = {
    "tree-sample": _run_tree_sample,
    "moment-density": _run_moment_density,
    "simulate": _run_simulate,
    "hitting": _run_hitting,
    "palm": _run_palm,
    "decouple": _run_decouple,
    "multiplicity": _run_multiplicity,
}


def run(cfg: ExperimentConfig) -> dict:
    """Dispatch a validated config and write its result manifest."""
    cfg.validate()
    start = time.time()
    record, warnings = _RUNNERS[cfg.kind](cfg)
    manifest = {
        "config": {
            "kind": cfg.kind,
            "params": _jsonable(cfg.params),
            "seed": cfg.seed,
            "workers": cfg.workers,
            "output": cfg.output,
        },
        "version": __version__,
        "wall_time_s": round(time.time() - start, 3),
        "records": _jsonable(record),
        "warnings": warnings,
    }
    Path(cfg.output + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dwsim", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--output", default=None)
    args = parser.parse_args(argv)
    try:
        cfg = ExperimentConfig.from_json(args.config)
        if cfg.kind != args.kind:
            raise ValidationError(
                f"config kind {cfg.kind!r} does not match subcommand {args.kind!r}"
            )
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.output is not None:
            cfg.output = args.output
        manifest = run(cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except BudgetError as exc:
        msg = f"budget error: {exc}"
        if exc.suggested_reps:
            msg += f" (suggested reps: {exc.suggested_reps})"
        print(msg, file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    print(f"ok: wall {manifest['wall_time_s']}s, wrote {cfg.output}.manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
