import numpy as np

from masktrack.maskcore import rle_encode
from masktrack.pipeline import Track
from masktrack.postproc import (
    RIDER_CLASSES,
    MergeGraph,
    associate_passes,
    human_object_link,
    merge_tracks,
)

H = W = 32


def box(y0, y1, x0, x1):
    m = np.zeros((H, W), bool)
    m[y0:y1, x0:x1] = True
    return rle_encode(m)


def track(tid, frames, mask_at, cat=1, score=0.9):
    masks = {t: mask_at(t) for t in frames}
    return Track(tid, cat, score, min(frames), masks, {t: "detected" for t in frames})


def moving(t):
    return box(4, 12, t % 20, t % 20 + 8)


def test_identical_sets_pair_with_twins():
    fwd = [track(1, range(10), moving), track(2, range(10), lambda t: box(20, 28, 20, 28), cat=2)]
    bwd = [track(1, range(10), moving), track(2, range(10), lambda t: box(20, 28, 20, 28), cat=2)]
    g = associate_passes(fwd, bwd)
    assert g.votes == {(0, 0): 10, (1, 1): 10}
    merged = merge_tracks(g, fwd, bwd)
    assert len(merged) == 2
    for m, f in zip(merged, fwd):
        assert m.masks == f.masks and m.category == f.category


def test_disjoint_in_time_no_edge():
    fwd = [track(1, range(5), moving)]
    bwd = [track(1, range(5, 10), moving)]
    assert associate_passes(fwd, bwd).votes == {}
    assert len(merge_tracks(associate_passes(fwd, bwd), fwd, bwd)) == 2


def test_late_detection_scenario():
    T = 30
    fwd = [track(1, range(10, T), moving)]
    bwd = [track(1, range(T), moving)]
    g = associate_passes(fwd, bwd)
    assert g.votes == {(0, 0): T - 10}
    merged = merge_tracks(g, fwd, bwd)
    assert len(merged) == 1 and merged[0].frames == list(range(T))
    assert merged[0].birth == 0


def test_empty_backward_passes_forward():
    fwd = [track(1, range(5), moving), track(2, range(3), lambda t: box(20, 25, 20, 25))]
    merged = merge_tracks(associate_passes(fwd, []), fwd, [])
    assert [m.masks for m in merged] == [f.masks for f in fwd]


def test_conflict_resolution_by_votes():
    fwd = [track(1, range(11), moving)]
    b1 = track(1, range(8), moving)
    b2 = track(2, range(8, 11), moving)
    g = associate_passes(fwd, [b1, b2])
    assert g.votes == {(0, 0): 8, (0, 1): 3}
    merged = merge_tracks(g, fwd, [b1, b2])
    assert len(merged) == 2
    assert merged[0].frames == list(range(11))
    assert merged[1].masks == b2.masks


def test_tie_prefers_earlier_birth():
    fwd = [track(1, range(4, 8), moving)]
    b_late = track(1, range(6, 8), moving)
    b_early = track(2, range(6), moving)
    g = MergeGraph({(0, 0): 2, (0, 1): 2})
    merged = merge_tracks(g, fwd, [b_late, b_early])
    assert merged[0].birth == 0 and merged[0].frames == list(range(8))


def test_merge_category_score_and_selector():
    fwd = [track(1, range(5), moving, cat=1, score=0.6)]
    bwd = [track(1, range(5), moving, cat=2, score=0.8)]
    images = [np.zeros((H, W, 3))] * 5
    merged = merge_tracks(associate_passes(fwd, bwd), fwd, bwd, selector=lambda *a: False, images=images)
    assert merged[0].category == 2 and merged[0].score == 0.8
    assert set(merged[0].sources.values()) == {"backward"}


def test_idempotent_and_count_bound():
    fwd = [track(1, range(10, 20), moving), track(2, range(3), lambda t: box(20, 25, 20, 25))]
    bwd = [track(1, range(20), moving), track(2, range(5, 9), lambda t: box(0, 3, 28, 31))]
    once = merge_tracks(associate_passes(fwd, bwd), fwd, bwd)
    assert len(once) <= len(fwd) + len(bwd)
    twice = merge_tracks(associate_passes(once, []), once, [])
    assert [t.masks for t in twice] == [t.masks for t in once]
    # every input frame-mask lands in at most one output track
    for t in range(20):
        owners = [k for k, tr in enumerate(once) if t in tr.masks and tr.masks[t].area]
        assert len(owners) <= 2


CATS = {1: "person", 8: "surfboard", 2: "car"}


def test_rider_class_list():
    assert set(RIDER_CLASSES) == {"boat", "motorbike", "skateboard", "snowboard", "surfboard", "tennis racket"}


def test_no_person_unchanged():
    tracks = [track(1, range(5), moving, cat=8)]
    out, links = human_object_link(tracks, CATS)
    assert links == [] and [t.masks for t in out] == [t.masks for t in tracks]


def test_surfboard_fragments_merge():
    person = track(1, range(31), lambda t: box(2, 20, 4, 16), cat=1)
    s1 = track(2, range(10), lambda t: box(16, 22, 2, 18), cat=8, score=0.8)
    s2 = track(3, range(15, 31), lambda t: box(16, 22, 2, 18), cat=8, score=0.6)
    car = track(4, range(31), lambda t: box(26, 30, 20, 30), cat=2)
    out, links = human_object_link([person, s1, s2, car], CATS)
    assert {(l.rider_id, l.person_id) for l in links} == {(2, 1), (3, 1)}
    boards = [t for t in out if t.category == 8]
    assert len(boards) == 1 and len(out) == 3
    b = boards[0]
    assert b.frames == list(range(31))
    assert all(b.masks[t].area == 0 for t in range(10, 15))
    assert b.score == (0.8 * 1 + 0.6 * 1) / 2
