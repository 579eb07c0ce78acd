"""Command-line entry point.

Settings resolve as built-in defaults < JSON config file < flags, and every
command that writes outputs also writes the resolved settings to
``config.json`` next to them. All randomness derives from ``--seed`` through
named sub-seeds.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as mio
from . import synth
from .pipeline import PipelineConfig, SELECTOR_NAMES
from .synth import NoiseConfig

log = logging.getLogger("masktrack")

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


def sub_seed(seed: int, name: str) -> int:
    """Independent 63-bit seed for a named consumer of randomness."""
    ss = np.random.SeedSequence([int(seed) % 2**64, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# -- settings -------------------------------------------------------------------------

def _train_defaults() -> dict:
    from .msn.train import TrainConfig

    d = TrainConfig().to_json()
    d["seed"] = None  # None: derive from the global seed
    return d


def _defaults() -> dict:
    pipe = PipelineConfig().to_json()
    pipe["selector"] = "segmentation"
    return {
        "seed": 0,
        "jobs": 1,
        "synth": {"preset": "bench", "n_videos": 8, "n_frames": None, "size": 64, "scenes": None},
        "noise": {"preset": "none", **_noise_json(NoiseConfig())},
        "pipeline": pipe,
        "propagation": {"kind": "oracle", "noise": "jitter", "level": 0.0, "radius": 16, "min_corr": 0.5},
        "train": _train_defaults(),
        "msn": {"input_size": 32, "width": 16, "margin": 0.02, "min_area": 16, "model": None},
        "merge": {"merge_iou": 0.5, "selector": "none", "link_riders": False},
    }


def _noise_json(n: NoiseConfig) -> dict:
    d = asdict(n)
    d["miss_frames"] = list(d["miss_frames"])
    d["spurious_score"] = list(d["spurious_score"])
    return d


NOISE_PRESETS = {"none": NoiseConfig, "late10": synth.late10_noise, "bench": synth.bench_noise}
SYNTH_PRESETS = ("late10", "bench")
PROPAGATORS = ("oracle", "shift")
PROP_NOISE = ("jitter", "erode", "dilate")
MERGE_SELECTORS = ("none",) + SELECTOR_NAMES


@dataclass
class RunConfig:
    seed: int
    jobs: int
    out: str | None
    sections: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.sections[key]

    def to_json(self) -> dict:
        return {"seed": self.seed, "jobs": self.jobs, "out": self.out, **self.sections}

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(**self.sections["pipeline"])

    def noise(self) -> NoiseConfig:
        d = dict(self.sections["noise"])
        d.pop("preset")
        return NoiseConfig(**d)

    def train(self):
        from .msn.train import TrainConfig

        d = dict(self.sections["train"])
        if d["seed"] is None:
            d["seed"] = sub_seed(self.seed, "train")
        return TrainConfig(**d)


def _merge_section(base: dict, override: dict, where: str) -> None:
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown setting {where}.{k}")
        base[k] = v


def load_config_file(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return obj


def resolve(args: argparse.Namespace) -> RunConfig:
    """Apply defaults, then the config file, then explicit flags."""
    cfg = _defaults()
    explicit: dict = {}
    if getattr(args, "config", None):
        for key, val in load_config_file(args.config).items():
            if key in ("seed", "jobs", "out"):
                explicit[key] = val
            elif key in cfg and isinstance(cfg[key], dict):
                if not isinstance(val, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                explicit.setdefault(key, {}).update(val)
            else:
                raise ConfigError(f"unknown config section {key!r}")
    for dest, val in vars(args).items():
        if val is None or "." not in dest:
            continue
        sec, key = dest.split(".", 1)
        explicit.setdefault(sec, {})[key] = val
    for key in ("seed", "jobs", "out"):
        if getattr(args, key, None) is not None:
            explicit[key] = getattr(args, key)

    # a noise preset replaces the noise defaults before explicit values apply
    preset = explicit.get("noise", {}).get("preset", cfg["noise"]["preset"])
    if preset not in NOISE_PRESETS:
        raise ConfigError(f"unknown noise preset {preset!r}; choose from {sorted(NOISE_PRESETS)}")
    cfg["noise"] = {"preset": preset, **_noise_json(NOISE_PRESETS[preset]())}

    for key, val in explicit.items():
        if key in ("seed", "jobs", "out"):
            cfg[key] = val
        else:
            _merge_section(cfg[key], val, key)
    seed, jobs, out = cfg.pop("seed"), cfg.pop("jobs"), cfg.pop("out", None)
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError("jobs must be a positive integer")
    run = RunConfig(seed, jobs, out, cfg)
    try:  # construct once so invalid values fail before any work starts
        run.pipeline()
        run.noise()
        run.train()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    _check_choices(run)
    return run


def _check_choices(run: RunConfig) -> None:
    checks = [
        ("synth.preset", run["synth"]["preset"], SYNTH_PRESETS),
        ("propagation.kind", run["propagation"]["kind"], PROPAGATORS),
        ("propagation.noise", run["propagation"]["noise"], PROP_NOISE),
        ("merge.selector", run["merge"]["selector"], MERGE_SELECTORS),
    ]
    for name, val, allowed in checks:
        if val not in allowed:
            raise ConfigError(f"{name} must be one of {list(allowed)}, got {val!r}")
    if not 0.0 <= run["merge"]["merge_iou"] < 1.0:
        raise ConfigError("merge.merge_iou must lie in [0, 1)")
    if not 0.0 <= run["propagation"]["level"] <= 1.0:
        raise ConfigError("propagation.level must lie in [0, 1]")
    for key in ("n_videos", "n_frames", "size"):
        if run["synth"][key] is not None and run["synth"][key] < 1:
            raise ConfigError(f"synth.{key} must be >= 1")


def _snapshot(run: RunConfig, out: Path, command: str) -> None:
    mio.write_json(out / "config.json", {"command": command, **run.to_json()}, indent=2)


# -- argument parsing ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _opt(p, flag, dest, default, help, **kw):
    """Flag whose value lands in the resolved settings at ``dest``."""
    shown = "none" if default is None else default
    p.add_argument(flag, dest=dest, default=None, help=f"{help} (default: {shown})", **kw)


def _common(p) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON settings file (default: none)")
    p.add_argument("--seed", type=int, metavar="U64", help="global seed (default: 0)")
    p.add_argument("--jobs", type=int, metavar="N", help="parallel worker processes, across videos (default: 1)")
    p.add_argument("--out", metavar="DIR", help="output directory (default: none)")


def _pipeline_flags(p, d) -> None:
    pd = d["pipeline"]
    _opt(p, "--score-threshold", "pipeline.score_threshold", pd["score_threshold"],
         "minimum proposal score", type=float)
    _opt(p, "--iou-floor", "pipeline.iou_floor", pd["iou_floor"],
         "matches need IoU strictly above this", type=float)
    _opt(p, "--max-objects", "pipeline.max_objects", pd["max_objects"], "track cap per video", type=int)
    _opt(p, "--overlap-tolerance", "pipeline.overlap_tolerance", pd["overlap_tolerance"],
         "allowed same-class overlap for new tracks, fraction of area", type=float)
    _opt(p, "--patience", "pipeline.patience", pd["patience"],
         "retire a track after this many empty frames", type=int)
    _opt(p, "--selector", "pipeline.selector", pd["selector"], "mask selector", choices=SELECTOR_NAMES)
    _opt(p, "--model", "msn.model", None, "trained selector model file")


def build_parser() -> argparse.ArgumentParser:
    d = _defaults()
    fmt = argparse.RawDescriptionHelpFormatter
    top = _Parser(prog="masktrack", description=__doc__, formatter_class=fmt)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    # synth
    s = sub.add_parser("synth", help="synthetic videos and proposal streams")
    ss = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = ss.add_parser("gen", help="render a synthetic dataset")
    _common(g)
    _opt(g, "--preset", "synth.preset", d["synth"]["preset"], "scene preset", choices=SYNTH_PRESETS)
    _opt(g, "--n-videos", "synth.n_videos", d["synth"]["n_videos"], "videos (bench preset)", type=int)
    _opt(g, "--frames", "synth.n_frames", "30 for late10, 12 for bench", "frames per video", type=int)
    _opt(g, "--size", "synth.size", d["synth"]["size"], "frame height and width (bench preset)", type=int)
    g = ss.add_parser("degrade", help="turn ground truth into noisy proposals")
    _common(g)
    g.add_argument("--data", required=True, metavar="DIR", help="dataset directory (required)")
    nd = d["noise"]
    _opt(g, "--preset", "noise.preset", nd["preset"], "noise preset", choices=sorted(NOISE_PRESETS))
    _opt(g, "--p-miss", "noise.p_miss", nd["p_miss"], "per-object miss probability", type=float)
    _opt(g, "--p-spurious", "noise.p_spurious", nd["p_spurious"], "mean spurious proposals per frame",
         type=float)
    _opt(g, "--p-classflip", "noise.p_classflip", nd["p_classflip"], "class flip probability", type=float)
    _opt(g, "--boundary", "noise.boundary", nd["boundary"], "boundary perturbation level", type=float)
    _opt(g, "--score-sigma", "noise.score_sigma", nd["score_sigma"], "score noise", type=float)
    _opt(g, "--miss-frames", "noise.miss_frames", "[]", "frames with every detection dropped, e.g. 0-9,12",
         type=_frame_list)

    # msn
    m = sub.add_parser("msn", help="mask selection network")
    ms = m.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = ms.add_parser("prepare-data", help="build labelled mask pairs from a dataset")
    _common(g)
    g.add_argument("--data", required=True, metavar="DIR", help="dataset directory (required)")
    _opt(g, "--input-size", "msn.input_size", d["msn"]["input_size"], "crop side in pixels", type=int)
    _opt(g, "--margin", "msn.margin", d["msn"]["margin"], "minimum IoU gap for a kept pair", type=float)
    g = ms.add_parser("train", help="train the selector")
    _common(g)
    g.add_argument("--pairs", required=True, metavar="FILE", help="pair file from prepare-data (required)")
    td = d["train"]
    _opt(g, "--epochs", "train.epochs", td["epochs"], "training epochs", type=int)
    _opt(g, "--batch-size", "train.batch_size", td["batch_size"], "pairs per update", type=int)
    _opt(g, "--lr", "train.lr", td["lr"], "initial learning rate", type=float)
    _opt(g, "--decay-every", "train.decay_every", td["decay_every"], "epochs between lr decays", type=int)
    _opt(g, "--val-fraction", "train.val_fraction", td["val_fraction"], "held-out fraction", type=float)
    _opt(g, "--width", "msn.width", d["msn"]["width"], "channels of the first layer", type=int)
    g = ms.add_parser("eval", help="accuracy of a trained selector on a pair file")
    _common(g)
    g.add_argument("--pairs", required=True, metavar="FILE", help="pair file (required)")
    g.add_argument("--model", dest="msn.model", required=True, metavar="FILE", help="model file (required)")
    g.add_argument("--split", choices=("val", "all"), default="val",
                   help="evaluate the held-out split or every pair (default: val)")

    # track
    t = sub.add_parser("track", help="online tracking")
    ts = t.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = ts.add_parser("run", help="track every video of a dataset")
    _common(g)
    g.add_argument("--data", required=True, metavar="DIR", help="dataset directory (required)")
    g.add_argument("--proposals", required=True, metavar="FILE", help="proposal file (required)")
    g.add_argument("--direction", choices=("fwd", "bwd", "both"), default="fwd",
                   help="temporal direction (default: fwd)")
    _pipeline_flags(g, d)
    pr = d["propagation"]
    _opt(g, "--propagator", "propagation.kind", pr["kind"], "mask propagator", choices=PROPAGATORS)
    _opt(g, "--prop-noise", "propagation.noise", pr["noise"], "oracle propagation degradation",
         choices=PROP_NOISE)
    _opt(g, "--prop-level", "propagation.level", pr["level"], "oracle propagation degradation level",
         type=float)

    # merge
    g = sub.add_parser("merge", help="merge forward and backward tracks")
    _common(g)
    g.add_argument("--data", required=True, metavar="DIR", help="dataset directory (required)")
    g.add_argument("--tracks", required=True, metavar="DIR", help="output directory of `track run --direction both` (required)")
    _opt(g, "--merge-iou", "merge.merge_iou", d["merge"]["merge_iou"], "per-frame IoU needed for a vote",
         type=float)
    _opt(g, "--selector", "merge.selector", d["merge"]["selector"],
         "selector for frames both tracks cover; none keeps the forward mask", choices=MERGE_SELECTORS)
    _opt(g, "--model", "msn.model", None, "trained selector model file")
    g.add_argument("--link-riders", dest="merge.link_riders", action="store_const", const=True, default=None,
                   help="link rider-class tracks to persons (default: off)")

    # eval
    g = sub.add_parser("eval", help="score predictions against ground truth")
    _common(g)
    g.add_argument("--pred", required=True, metavar="FILE", help="result file (required)")
    g.add_argument("--gt", required=True, metavar="FILE", help="ground-truth annotation file (required)")

    # render
    g = sub.add_parser("render", help="draw tracks over video frames")
    _common(g)
    g.add_argument("--data", required=True, metavar="DIR", help="dataset directory (required)")
    g.add_argument("--pred", required=True, metavar="FILE", help="result file (required)")
    g.add_argument("--video", type=int, help="render only this video id (default: all)")
    g.add_argument("--scale", type=int, default=4, help="integer upscaling factor (default: 4)")

    # bench
    b = sub.add_parser("bench", help="timing benchmarks")
    bs = b.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = bs.add_parser("hungarian", help="time one random square assignment")
    _common(g)
    g.add_argument("--n", type=int, default=200, help="matrix side (default: 200)")
    g.add_argument("--budget", type=float, default=1.0, help="seconds allowed (default: 1.0)")
    g = bs.add_parser("rle", help="time RLE encode/decode/IoU")
    _common(g)
    g.add_argument("--n", type=int, default=1000, help="masks (default: 1000)")
    g.add_argument("--size", type=int, default=256, help="mask side (default: 256)")
    g = bs.add_parser("msn", help="time selector inference and report its budget")
    _common(g)
    g.add_argument("--arch", choices=("default", "desk"), default="default",
                   help="architecture (default: default)")
    g.add_argument("--batch", type=int, default=2, help="pairs per forward pass (default: 2)")
    return top


def _frame_list(text: str) -> list[int]:
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return sorted(set(out))


# -- commands ------------------------------------------------------------------------

def _need_out(run: RunConfig) -> Path:
    if not run.out:
        raise UsageError("--out is required for this command")
    return mio.ensure_dir(run.out)


def cmd_synth_gen(run: RunConfig, args) -> int:
    out = _need_out(run)
    sc = run["synth"]
    if sc["scenes"]:
        scenes = [synth.SceneConfig.from_json(s) for s in sc["scenes"]]
    elif sc["preset"] == "late10":
        scenes = [synth.late10_scene(seed=run.seed % 2**31, n_frames=sc["n_frames"] or 30)]
    else:
        scenes = synth.benchmark_scenes(sub_seed(run.seed, "synth"), sc["n_videos"], sc["n_frames"] or 12,
                                        sc["size"])
    videos = [synth.generate(s) for s in scenes]
    mio.save_dataset(videos, out)
    _snapshot(run, out, "synth gen")
    log.info("wrote %d videos to %s", len(videos), out)
    return 0


def cmd_synth_degrade(run: RunConfig, args) -> int:
    out = _need_out(run)
    videos = mio.load_dataset(args.data)
    noise = run.noise()
    seed = sub_seed(run.seed, "degrade")
    streams = {v.video_id: synth.degrade(v, noise, seed) for v in videos}
    mio.write_proposals(out / "proposals.json", streams)
    _snapshot(run, out, "synth degrade")
    return 0


def _load_model(run: RunConfig, required: bool):
    path = run["msn"]["model"]
    if path is None:
        if required:
            raise UsageError("--model is required with selector msn")
        return None
    from .msn.net import load_model

    return load_model(path)


def cmd_msn_prepare(run: RunConfig, args) -> int:
    from .msn.data import PairStats, PerturbConfig, generate_pairs, gt_from_videos, to_tensors

    out = _need_out(run)
    mc = run["msn"]
    videos = mio.load_dataset(args.data)
    stats = PairStats()
    cfg = PerturbConfig(margin=mc["margin"], min_area=mc["min_area"])
    pairs = generate_pairs(gt_from_videos(videos, mc["min_area"]), cfg, sub_seed(run.seed, "pairs"), stats)
    to_tensors(pairs, mc["input_size"]).save(out / "pairs.npz")
    mio.write_json(out / "pairs_stats.json", {"kept": stats.kept, "discarded": stats.discarded,
                                              "reasons": stats.reasons}, indent=2)
    _snapshot(run, out, "msn prepare-data")
    print(json.dumps({"kept": stats.kept, "discarded": stats.discarded}))
    return 0


def cmd_msn_train(run: RunConfig, args) -> int:
    from .msn.data import PairTensors
    from .msn.net import desk_arch, save_model
    from .msn.train import train

    out = _need_out(run)
    data = PairTensors.load(args.pairs)
    result = train(data, run.train(), desk_arch(data.size, run["msn"]["width"]))
    save_model(result.model, out / "model.msn")
    mio.write_json(out / "history.json", result.history, indent=2)
    _snapshot(run, out, "msn train")
    if result.history:
        print(json.dumps(result.history[-1], sort_keys=True))
    return 0


def cmd_msn_eval(run: RunConfig, args) -> int:
    from .msn.data import PairTensors
    from .msn.select import heuristic_select
    from .msn.train import accuracy, predict, split_indices

    data = PairTensors.load(args.pairs)
    model = _load_model(run, True)
    if args.split == "val":
        _, idx = split_indices(len(data), run.train().val_fraction, run.train().seed)
    else:
        idx = np.arange(len(data))
    raw, sym = predict(model, data, idx)
    y = data.labels[idx]
    heur = [heuristic_select(data.rgb[i].transpose(1, 2, 0) / 255.0, data.masks[i, 0], data.masks[i, 1]) == "A"
            for i in idx]
    report = {
        "n": int(len(idx)),
        "accuracy": accuracy(sym, y),
        "accuracy_single_order": accuracy(raw, y),
        "heuristic_accuracy": float(np.mean(np.asarray(heur, float) == y)) if len(idx) else float("nan"),
    }
    print(json.dumps(report, sort_keys=True))
    if run.out:
        out = mio.ensure_dir(run.out)
        mio.write_json(out / "msn_eval.json", report, indent=2)
        _snapshot(run, out, "msn eval")
    return 0


def _propagator(run: RunConfig, video):
    from .pipeline import PropagationNoise, ShiftPropagator, oracle_propagate

    pc = run["propagation"]
    if pc["kind"] == "shift":
        return ShiftPropagator(pc["radius"], pc["min_corr"])
    noise = PropagationNoise(pc["noise"], pc["level"])
    return oracle_propagate(video, noise, sub_seed(run.seed, f"propagate/{video.video_id}"))


def _selector(name: str, model, video):
    from .pipeline import make_selector

    gt = None
    if name == "oracle":
        gt = {t: list(video.gt_masks_at(t).values()) for t in range(video.n_frames)}
    return make_selector(name, model=model, gt_masks=gt)


def _track_video(job):
    run, video, proposals, directions = job
    from .pipeline import run as run_tracker

    model = _load_model(run, run["pipeline"]["selector"] == "msn")
    cfg = run.pipeline()
    out = {}
    for d in directions:
        sel = _selector(cfg.selector, model, video)
        out[d] = run_tracker(video.images, proposals, d, cfg, _propagator(run, video), sel)
    return video.video_id, out


def cmd_track_run(run: RunConfig, args) -> int:
    out = _need_out(run)
    videos = mio.load_dataset(args.data)
    streams = mio.read_proposals(args.proposals)
    unknown = sorted(set(streams) - {v.video_id for v in videos})
    if unknown:
        raise ValueError(f"proposals reference unknown videos: {unknown[:5]}")
    directions = {"fwd": ["forward"], "bwd": ["backward"], "both": ["forward", "backward"]}[args.direction]
    _load_model(run, run["pipeline"]["selector"] == "msn")  # fail early
    jobs = [(run, v, streams.get(v.video_id, {}), directions) for v in videos]
    if run.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=run.jobs) as ex:
            results = list(ex.map(_track_video, jobs))
    else:
        results = [_track_video(j) for j in jobs]
    lengths = {v.video_id: v.n_frames for v in videos}
    for d in directions:
        per_video = {vid: res[d] for vid, res in results}
        name = "tracks_fwd.json" if d == "forward" else "tracks_bwd.json"
        mio.write_json(out / name, mio.tracks_to_results(per_video, lengths))
    _snapshot(run, out, f"track run --direction {args.direction}")
    return 0


def cmd_merge(run: RunConfig, args) -> int:
    from .postproc import associate_passes, human_object_link, merge_report, merge_tracks

    out = _need_out(run)
    videos = {v.video_id: v for v in mio.load_dataset(args.data)}
    tdir = Path(args.tracks)
    fwd = mio.results_to_tracks(mio.read_json(tdir / "tracks_fwd.json"))
    bwd = mio.results_to_tracks(mio.read_json(tdir / "tracks_bwd.json"))
    mc = run["merge"]
    model = _load_model(run, mc["selector"] == "msn")
    cats = mio.categories_of(mio.read_json(Path(args.data) / "gt.json"))
    merged, reports, links = {}, {}, {}
    for vid in sorted(videos):
        f, b = fwd.get(vid, []), bwd.get(vid, [])
        graph = associate_passes(f, b, mc["merge_iou"])
        sel = None if mc["selector"] == "none" else _selector(mc["selector"], model, videos[vid])
        tracks = merge_tracks(graph, f, b, sel, videos[vid].images)
        if mc["link_riders"]:
            tracks, vlinks = human_object_link(tracks, cats)
            links[str(vid)] = [asdict(l) for l in vlinks]
        merged[vid] = tracks
        reports[str(vid)] = merge_report(graph, f, b)
    lengths = {vid: v.n_frames for vid, v in videos.items()}
    mio.write_json(out / "merged.json", mio.tracks_to_results(merged, lengths))
    mio.write_json(out / "merge_report.json", {"videos": reports, "rider_links": links}, indent=2)
    _snapshot(run, out, "merge")
    return 0


def cmd_eval(run: RunConfig, args) -> int:
    from .evaluation import evaluate

    gt = mio.read_json(args.gt)
    report = evaluate(mio.read_json(args.pred), gt)
    print(f"mAP {report.mAP}")
    print(report.table(mio.categories_of(gt)))
    if run.out:
        out = mio.ensure_dir(run.out)
        mio.write_json(out / "report.json", report.to_json(), indent=2)
        (out / "report.txt").write_text(report.table(mio.categories_of(gt)) + "\n")
        _snapshot(run, out, "eval")
    return 0


def track_color(track_id: int) -> tuple[int, int, int]:
    """Stable, fairly saturated color per track id."""
    rng = np.random.default_rng([int(track_id), 0xC0105])
    hue = rng.random()
    import colorsys

    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 1.0)
    return int(r * 255), int(g * 255), int(b * 255)


def render_frames(video, results, categories=None, scale: int = 4, alpha: float = 0.5):
    """Per-frame RGB uint8 overlays of ``results`` (result records of one video)."""
    from PIL import Image, ImageDraw

    from .maskcore import DimensionError, rle_decode
    from .pipeline import Track

    tracks = []
    for r in results:
        if len(r["segmentations"]) != video.n_frames:
            raise DimensionError(f"result track {r.get('id')} has {len(r['segmentations'])} frames, "
                                 f"video has {video.n_frames}")
        tr = Track.from_result(r)
        for m in tr.masks.values():
            if m.shape != video.shape:
                raise DimensionError(f"mask canvas {m.shape} does not match frame {video.shape}")
        tracks.append(tr)
    names = categories or {}
    frames = []
    for t, img in enumerate(video.images):
        base = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
        canvas = base.astype(np.float64)
        labels = []
        for tr in tracks:
            m = tr.masks.get(t)
            if m is None or m.area == 0:
                continue
            dense = rle_decode(m)
            col = np.array(track_color(tr.track_id), dtype=np.float64)
            canvas[dense] = (1 - alpha) * canvas[dense] + alpha * col
            ys, xs = np.nonzero(dense)
            labels.append((int(xs.min()), int(ys.min()), tr))
        arr = np.clip(np.round(canvas), 0, 255).astype(np.uint8)
        im = Image.fromarray(arr).resize((arr.shape[1] * scale, arr.shape[0] * scale), Image.NEAREST)
        draw = ImageDraw.Draw(im)
        for x, y, tr in labels:
            text = f"{names.get(tr.category, tr.category)} {tr.score:.2f}"
            draw.text((x * scale + 1, y * scale + 1), text, fill=track_color(tr.track_id))
        if not tracks:
            draw.rectangle((0, 0, im.width - 1, 11), fill=(0, 0, 0))
            draw.text((2, 0), "0 tracks", fill=(255, 255, 255))
        frames.append(np.asarray(im))
    return frames


def cmd_render(run: RunConfig, args) -> int:
    from PIL import Image

    out = _need_out(run)
    videos = {v.video_id: v for v in mio.load_dataset(args.data)}
    results = mio.read_json(args.pred)
    cats = mio.categories_of(mio.read_json(Path(args.data) / "gt.json"))
    ids = [args.video] if args.video is not None else sorted(videos)
    for vid in ids:
        if vid not in videos:
            raise ValueError(f"unknown video id {vid}")
        recs = [r for r in results if r["video_id"] == vid]
        frames = render_frames(videos[vid], recs, cats, args.scale)
        vdir = mio.ensure_dir(out / str(vid))
        for t, f in enumerate(frames):
            Image.fromarray(f).save(vdir / f"{t:04d}.png", format="PNG")
    _snapshot(run, out, "render")
    return 0


def cmd_bench(run: RunConfig, args) -> int:
    rng = np.random.default_rng(sub_seed(run.seed, "bench"))
    if args.action == "hungarian":
        from .assign import hungarian

        cost = rng.random((args.n, args.n))
        t0 = time.perf_counter()
        res = hungarian(cost)
        dt = time.perf_counter() - t0
        report = {"bench": "hungarian", "n": args.n, "seconds": dt, "budget": args.budget,
                  "within_budget": dt < args.budget, "total": res.total}
    elif args.action == "rle":
        from .maskcore import mask_iou, rle_decode, rle_encode

        masks = [_random_mask(rng, args.size) for _ in range(args.n)]
        t0 = time.perf_counter()
        rles = [rle_encode(m) for m in masks]
        t1 = time.perf_counter()
        for r in rles:
            rle_decode(r)
        t2 = time.perf_counter()
        for a, b in zip(rles, rles[1:]):
            mask_iou(a, b)
        t3 = time.perf_counter()
        report = {"bench": "rle", "n": args.n, "size": args.size, "encode_s": t1 - t0, "decode_s": t2 - t1,
                  "iou_s": t3 - t2}
    else:
        from .msn.net import count_params_flops, default_arch, desk_arch, forward, init_model

        arch = default_arch() if args.arch == "default" else desk_arch(run["msn"]["input_size"], run["msn"]["width"])
        model = init_model(arch, seed=0)
        x = rng.random((args.batch, arch.in_channels, arch.input_size, arch.input_size)).astype(np.float32)
        t0 = time.perf_counter()
        forward(model, x)
        dt = time.perf_counter() - t0
        budget = count_params_flops(arch)
        report = {"bench": "msn", "arch": args.arch, "batch": args.batch, "seconds": dt,
                  "params": budget["params"], "macs": budget["flops"]}
    print(json.dumps(report, sort_keys=True))
    if run.out:
        out = mio.ensure_dir(run.out)
        mio.write_json(out / f"bench_{args.action}.json", report, indent=2)
    return 0


def _random_mask(rng, size):
    from scipy import ndimage

    field_ = ndimage.gaussian_filter(rng.random((size, size)), 4)
    return field_ > np.median(field_)


COMMANDS = {
    ("synth", "gen"): cmd_synth_gen,
    ("synth", "degrade"): cmd_synth_degrade,
    ("msn", "prepare-data"): cmd_msn_prepare,
    ("msn", "train"): cmd_msn_train,
    ("msn", "eval"): cmd_msn_eval,
    ("track", "run"): cmd_track_run,
    ("merge", None): cmd_merge,
    ("eval", None): cmd_eval,
    ("render", None): cmd_render,
    ("bench", "hungarian"): cmd_bench,
    ("bench", "rle"): cmd_bench,
    ("bench", "msn"): cmd_bench,
}


def _setup_logging(out: str | None) -> None:
    level_name = os.environ.get("MASKTRACK_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    root = logging.getLogger("masktrack")
    root.setLevel(min(level, logging.INFO) if out else level)
    root.handlers.clear()
    h = logging.StreamHandler(sys.stderr)
    h.setLevel(level)
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(h)
    if out:
        fh = logging.FileHandler(Path(out) / "run.log")
        fh.setLevel(min(level, logging.INFO))
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        run = resolve(args)
    except ConfigError as e:
        _emit_error("config", str(e))
        return EXIT_CONFIG
    if run.out:
        mio.ensure_dir(run.out)
    _setup_logging(run.out)
    fn = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        return fn(run, args)
    except UsageError as e:
        _emit_error("usage", str(e))
        return EXIT_USAGE
    except Exception as e:  # reported, not swallowed: nonzero exit with the cause
        log.debug("failure", exc_info=True)
        _emit_error(type(e).__name__, str(e))
        return EXIT_FAILURE
    finally:
        for h in list(logging.getLogger("masktrack").handlers):
            h.close()
            logging.getLogger("masktrack").removeHandler(h)


if __name__ == "__main__":
    sys.exit(main())
