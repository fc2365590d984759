"""``uncgrasp`` command line.

Every config key is also a flag (``--W-u 0.1``, ``--k-generate 20``);
precedence is flag > ``--config`` file > built-in default. Module errors are
printed to stderr as one JSON object and the exit status is 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__, _accel
from .completion import FileBackend, MirrorCompleter, complete_ensemble, dump_ensemble, load_ensemble_dir
from .config import HELP, PipelineConfig, load_config, save_config
from .errors import ConfigError, UncGraspError
from .evaluation import STAGE_COMPLETE, STAGE_DOWNSAMPLE, STAGE_LATTICE, STAGE_SAMPLE, STAGE_SEGMENT
from .evaluation import downsample, run_experiment, stage_seed, write_outputs
from .gripper import export_grasps, read_grasps, sample_grasps
from .plyio import load_cloud, save_cloud
from .rescore import W_U_UNIT, RescoreConfig, rescore, write_report
from .scene import (
    adversarial_scenes,
    capture_view,
    read_fixture_set,
    read_scene,
    segment_plane,
    standard_scenes,
    trivial_scene,
    write_fixture_set,
)
from .uncertainty import aggregate, load_uncertain_cloud, save_uncertain_cloud, std_summary

GLOBAL_KEYS = ("seed", "threads")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON config file")
    g.add_argument("--output", type=Path, default=argparse.SUPPRESS, help="output directory (default: out)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=HELP["seed"])
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=HELP["threads"])
    c = p.add_argument_group("config keys")
    for f in fields(PipelineConfig):
        if f.name in GLOBAL_KEYS:
            continue
        names = [_flag(f.name)]
        if "_" in f.name:
            names.append("--" + f.name)
        kind = type(f.default)
        c.add_argument(*names, dest=f"cfg_{f.name}", type=kind, default=argparse.SUPPRESS,
                       help=HELP.get(f.name, f.name.replace("_", " ")))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_config_flags(common)
    parser = argparse.ArgumentParser(prog="uncgrasp", parents=[common],
                                     description="Uncertainty-aware grasp re-ranking toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", parents=[common],
                       help="complete a partial cloud T times and aggregate mean + std")
    p.add_argument("partial", type=Path, help="partial object PLY/XYZ, or a scene fixture directory")
    p.add_argument("--view-origin", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="camera position (sets the symmetry plane normal)")
    p.add_argument("--up", type=float, nargs=3, metavar=("X", "Y", "Z"), help="table normal")
    p.add_argument("--ensemble-dir", type=Path,
                   help="with --backend files: directory of pass_*.ply + manifest.json")

    p = sub.add_parser("sample", parents=[common], help="sample antipodal grasps on a cloud")
    p.add_argument("cloud", type=Path, help="uncertain or plain cloud PLY")
    p.add_argument("--up", type=float, nargs=3, metavar=("X", "Y", "Z"), help="table normal")

    p = sub.add_parser("rescore", parents=[common], help="rerank grasps by uncertainty")
    p.add_argument("uncertain", type=Path, help="PLY with a std vertex property")
    p.add_argument("grasps", type=Path, help="grasp-list JSON")

    p = sub.add_parser("eval", parents=[common], help="run the Precision@k experiment")
    p.add_argument("fixtures", type=Path, help="fixture set (or single scene) directory")

    p = sub.add_parser("viz", parents=[common], help="color a cloud by its std (blue low, red high)")
    p.add_argument("uncertain", type=Path)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")

    p = sub.add_parser("fixtures", parents=[common], help="write the synthetic fixture sets")
    p.add_argument("which", choices=["standard", "adversarial", "trivial", "all"])
    p.add_argument("--count", type=int, default=20, help="adversarial scene count")
    return parser


def resolve_config(ns) -> tuple[PipelineConfig, set]:
    """Defaults, then the config file, then flags. Also returns the keys the
    user set explicitly."""
    d, explicit = {}, set()
    if getattr(ns, "config", None) is not None:
        d = load_config(ns.config).to_dict()
        explicit = set(json.loads(Path(ns.config).read_text()))
    for key, value in vars(ns).items():
        if key.startswith("cfg_"):
            key = key[4:]
        elif key not in GLOBAL_KEYS:
            continue
        d[key] = value
        explicit.add(key)
    return PipelineConfig.from_dict(d), explicit


def _out(ns) -> Path:
    out = getattr(ns, "output", None) or Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(doc):
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------ commands


def cmd_complete(ns, cfg: PipelineConfig, explicit) -> dict:
    out = _out(ns)
    view, up = ns.view_origin, ns.up
    completion = {}
    if ns.partial.is_dir():
        scene = read_scene(ns.partial)
        plane, partial = segment_plane(capture_view(scene), cfg.plane_distance_tol,
                                       cfg.plane_min_inliers,
                                       stage_seed(cfg.seed, scene.seed, STAGE_SEGMENT),
                                       cfg.ransac_iterations)
        partial = downsample(partial, cfg.partial_max_points,
                             stage_seed(cfg.seed, scene.seed, STAGE_DOWNSAMPLE))
        view = view if view is not None else scene.camera.origin
        up = up if up is not None else plane.n
        completion = scene.completion
        key = scene.seed
    else:
        partial, _ = load_cloud(ns.partial)
        partial = downsample(partial, cfg.partial_max_points, stage_seed(cfg.seed, 0, STAGE_DOWNSAMPLE))
        key = 0
    if cfg.backend == "files":
        if ns.ensemble_dir is None:
            raise ConfigError("backend 'files' needs --ensemble-dir")
        stack = load_ensemble_dir(ns.ensemble_dir)
        backend_id = FileBackend.backend_id
    else:
        backend = MirrorCompleter(cfg.completer(stage_seed(cfg.seed, key, STAGE_LATTICE), completion),
                                  view_origin=view, up=up)
        stack = complete_ensemble(backend, partial, cfg.T, stage_seed(cfg.seed, key, STAGE_COMPLETE),
                                  workers=cfg.threads or None)
        backend_id = backend.backend_id
        dump_ensemble(stack, out / "ensemble", cfg.seed, backend_id)
    uc = aggregate(stack)
    path = save_uncertain_cloud(uc, out / "uncertain.ply")
    summary = std_summary(uc)
    (out / "std_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"uncertain": str(path), "T": stack.T, "N": stack.N, "P": stack.partial_count,
            "backend": backend_id, "std_summary": summary}


def cmd_sample(ns, cfg: PipelineConfig, explicit) -> dict:
    out = _out(ns)
    cloud, _ = load_cloud(ns.cloud)
    cands = sample_grasps(cloud, cfg.gripper(), cfg.k_generate,
                          stage_seed(cfg.seed, 0, STAGE_SAMPLE), up=ns.up, config=cfg.sampler())
    path = export_grasps(cands, out / "grasps.json", cfg.gripper(), cfg.score_mode)
    return {"grasps": str(path), "count": len(cands)}


def cmd_rescore(ns, cfg: PipelineConfig, explicit) -> dict:
    out = _out(ns)
    uc = load_uncertain_cloud(ns.uncertain)
    cands, header = read_grasps(ns.grasps)
    W_u = cfg.W_u
    if header["score_scale"] == "unit" and "W_u" not in explicit:
        W_u = W_U_UNIT
    rc = RescoreConfig(W_u=W_u, penalty_mode=cfg.penalty_mode)
    ranked = rescore(cands, uc, cfg.gripper(), rc, workers=cfg.threads or None)
    report = write_report(ranked, out / "rescore_report.json", rc)
    ranked_path = export_grasps([e.candidate for e in ranked.entries], out / "ranked_grasps.json",
                                cfg.gripper(), header["score_scale"])
    return {"report": str(report), "ranked_grasps": str(ranked_path), "W_u": W_u,
            "permutation": ranked.permutation}


def cmd_eval(ns, cfg: PipelineConfig, explicit) -> dict:
    out = _out(ns)
    scenes = read_fixture_set(ns.fixtures)
    report, trials = run_experiment(scenes, cfg, workers=cfg.threads or None)
    paths = write_outputs(report, trials, cfg, out)
    return {"aggregate": report.aggregate, "trials": report.trials,
            **{k: str(v) for k, v in paths.items()}}


def cmd_viz(ns, cfg: PipelineConfig, explicit) -> dict:
    out = _out(ns)
    uc = load_uncertain_cloud(ns.uncertain)
    path = out / f"{ns.uncertain.stem}_viz.ply"
    save_cloud(uc.mean, path, "ply-ascii" if ns.ascii else "ply-binary-le",
               channels={"std": uc.std}, color_by="std")
    return {"colored": str(path), "std_min_mm": float(uc.std.min() * 1e3),
            "std_max_mm": float(uc.std.max() * 1e3)}


def cmd_fixtures(ns, cfg: PipelineConfig, explicit) -> dict:
    out = _out(ns)
    written = {}
    if ns.which in ("standard", "all"):
        written["standard"] = str(write_fixture_set(standard_scenes(cfg.seed), out / "standard"))
    if ns.which in ("adversarial", "all"):
        written["adversarial"] = str(write_fixture_set(adversarial_scenes(cfg.seed, ns.count),
                                                       out / "adversarial"))
    if ns.which in ("trivial", "all"):
        written["trivial"] = str(write_fixture_set([trivial_scene(cfg.seed)], out / "trivial"))
    return written


COMMANDS = {
    "complete": cmd_complete,
    "sample": cmd_sample,
    "rescore": cmd_rescore,
    "eval": cmd_eval,
    "viz": cmd_viz,
    "fixtures": cmd_fixtures,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg, explicit = resolve_config(ns)
        _accel.set_threads(cfg.threads or None)
        result = COMMANDS[ns.command](ns, cfg, explicit)
        save_config(cfg, _out(ns) / "config.json")
    except UncGraspError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return 2
    _emit(result)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
