"""Desk-scale scenarios shared by the acceptance suite and its helpers."""
from __future__ import annotations

import numpy as np

from masktrack import synth
from masktrack.evaluation import evaluate, gt_annotation
from masktrack.msn.data import PairStats, generate_pairs, gt_from_videos, to_tensors
from masktrack.msn.net import desk_arch
from masktrack.msn.select import heuristic_select
from masktrack.msn.train import TrainConfig, accuracy, predict, train
from masktrack.pipeline import (
    InstanceProposal,
    PipelineConfig,
    PropagationNoise,
    make_selector,
    oracle_propagate,
)
from masktrack.pipeline import run as run_tracker
from masktrack.postproc import associate_passes, merge_tracks

MSN_SIZE = 32
MSN_WIDTH = 16
MSN_VIDEOS = 1100
MSN_FRAMES = 6
MSN_SEED = 2024


def msn_dataset(seed: int = MSN_SEED, n_videos: int = MSN_VIDEOS):
    scenes = synth.benchmark_scenes(seed, n_videos=n_videos, n_frames=MSN_FRAMES)
    videos = [synth.generate(s) for s in scenes]
    stats = PairStats()
    pairs = generate_pairs(gt_from_videos(videos), seed=seed, stats=stats)
    return pairs, to_tensors(pairs, MSN_SIZE), stats


def train_msn(data, epochs: int = 40, seed: int = MSN_SEED):
    """Training recipe: batch 512, lr 0.01, x0.1 every 10 epochs, order shuffling."""
    cfg = TrainConfig(epochs=epochs, seed=seed)
    return train(data, cfg, desk_arch(MSN_SIZE, MSN_WIDTH))


def msn_val_accuracy(model, data, val_idx) -> float:
    _, sym = predict(model, data, val_idx)
    return accuracy(sym, data.labels[val_idx])


def heuristic_val_accuracy(pairs, val_idx) -> float:
    hits = [(heuristic_select(pairs[i].image, pairs[i].mask_a, pairs[i].mask_b) == "A") == bool(pairs[i].label)
            for i in val_idx]
    return float(np.mean(hits))


# -- noisy tracking benchmark ----------------------------------------------------------

BENCH_SEED = 7
BENCH_VIDEOS = 8
BENCH_FRAMES = 12
PROP_NOISE = PropagationNoise("jitter", 0.1)


def bench_videos(seed: int = BENCH_SEED, n_videos: int = BENCH_VIDEOS, n_frames: int = BENCH_FRAMES):
    return [synth.generate(s) for s in synth.benchmark_scenes(seed, n_videos, n_frames)]


def proposals_of(video, noise, seed):
    stream = synth.degrade(video, noise, seed)
    return {t: [InstanceProposal.from_json(p) for p in ps] for t, ps in stream.items()}


def track_video(video, proposals, direction, selector_name, model=None, seed=0, prop_noise=PROP_NOISE):
    gt = {t: list(video.gt_masks_at(t).values()) for t in range(video.config.n_frames)}
    cfg = PipelineConfig(selector=selector_name)
    sel = make_selector(selector_name, model=model, gt_masks=gt)
    prop = oracle_propagate(video, prop_noise, seed=seed + video.config.video_id)
    return run_tracker(video.images, proposals, direction, cfg, prop, sel)


def benchmark_map(videos, selector_name, model=None, merged=False, noise=None, seed=0, prop_noise=PROP_NOISE):
    noise = noise or synth.bench_noise()
    results = []
    for v in videos:
        props = proposals_of(v, noise, seed)
        fwd = track_video(v, props, "forward", selector_name, model, seed, prop_noise)
        tracks = fwd
        if merged:
            bwd = track_video(v, props, "backward", selector_name, model, seed, prop_noise)
            tracks = merge_tracks(associate_passes(fwd, bwd), fwd, bwd)
        results += [tr.to_result(v.config.video_id, v.config.n_frames) for tr in tracks]
    return evaluate(results, gt_annotation(videos, synth.CATEGORIES))
