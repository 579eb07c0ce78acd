import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from masktrack.maskcore import (
    BBox,
    DimensionError,
    EmptyMaskError,
    MaskError,
    RleMask,
    area,
    contour,
    crop_resize,
    dilate,
    erode,
    erode_to_fraction,
    intersection_area,
    intersects,
    mask_iou,
    resize_bilinear,
    resize_nearest,
    rle_decode,
    rle_encode,
    tight_bbox,
    translate,
    union_bbox,
    validate_rle,
)


def dense_iou(a, b):
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return 0.0 if union == 0 else inter / union


masks = st.tuples(st.integers(1, 24), st.integers(1, 24)).flatmap(
    lambda hw: arrays(np.bool_, hw))
mask_pairs = st.tuples(st.integers(1, 24), st.integers(1, 24)).flatmap(
    lambda hw: st.tuples(arrays(np.bool_, hw), arrays(np.bool_, hw)))


class TestCodec:
    def test_examples(self):
        assert rle_encode(np.zeros((3, 3), bool)).counts == (9,)
        one = np.zeros((2, 2), bool)
        one[0, 0] = True
        assert rle_encode(one).counts == (0, 1, 3)
        assert rle_encode(np.ones((2, 2), bool)).counts == (0, 4)
        assert not rle_decode(RleMask(3, 3, (9,))).any()
        assert rle_decode(RleMask(2, 2, (0, 4))).all()
        np.testing.assert_array_equal(rle_decode(RleMask(2, 2, (0, 1, 3))), one)

    def test_column_major(self):
        m = np.zeros((2, 3), bool)
        m[1, 0] = True  # second pixel of the first column
        assert rle_encode(m).counts == (1, 1, 4)

    @given(masks)
    def test_round_trip(self, m):
        r = rle_encode(m)
        validate_rle(r)
        assert sum(r.counts) == m.size
        np.testing.assert_array_equal(rle_decode(r), m)

    @pytest.mark.parametrize("counts", [(8,), (0, 0, 9), (3, -1, 7), (4, 0, 0, 5)])
    def test_malformed(self, counts):
        with pytest.raises(MaskError):
            rle_decode(RleMask(3, 3, counts))

    def test_json(self):
        r = rle_encode(np.eye(3, dtype=bool))
        assert r.to_json() == {"size": [3, 3], "counts": [0, 1, 3, 1, 3, 1]}
        assert RleMask.from_json(r.to_json()) == r
        with pytest.raises(MaskError):
            RleMask.from_json({"size": [3, 3], "counts": "abc"})


class TestGeometry:
    def test_iou_examples(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[0:2, 0:2] = True
        b[1:3, 1:3] = True
        assert mask_iou(a, b) == pytest.approx(1 / 7, abs=1e-12)
        assert mask_iou(a, a) == 1.0
        c = np.zeros((4, 4), bool)
        c[3, 3] = True
        assert mask_iou(a, c) == 0.0
        z = np.zeros((4, 4), bool)
        assert mask_iou(z, z) == 0.0

    def test_canvas_mismatch(self):
        with pytest.raises(DimensionError):
            mask_iou(np.zeros((2, 2), bool), np.zeros((2, 3), bool))

    @given(mask_pairs)
    def test_rle_iou_equals_dense(self, ab):
        a, b = ab
        ra, rb = rle_encode(a), rle_encode(b)
        assert intersection_area(ra, rb) == np.logical_and(a, b).sum()
        assert mask_iou(ra, rb) == dense_iou(a, b)
        assert mask_iou(ra, b) == dense_iou(a, b)

    @given(mask_pairs)
    def test_iou_properties(self, ab):
        a, b = ab
        v = mask_iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == mask_iou(b, a)
        if a.any():
            assert mask_iou(a, a) == 1.0
        inter = intersection_area(a, b)
        union = np.logical_or(a, b).sum()
        assert inter + union == area(a) + area(b)
        assert intersects(a, b) == (inter > 0)

    def test_area_and_bbox(self):
        assert area(np.ones((2, 2), bool)) == 4
        m = np.zeros((4, 4), bool)
        m[1, 2] = True
        assert tight_bbox(m) == BBox(2, 1, 3, 2)
        assert intersects(m, m)
        with pytest.raises(EmptyMaskError):
            tight_bbox(np.zeros((4, 4), bool))

    @given(masks)
    def test_bbox_is_minimal(self, m):
        if not m.any():
            return
        b = tight_bbox(m)
        assert m[b.y0:b.y1, b.x0:b.x1].sum() == m.sum()
        assert m[b.y0].any() and m[b.y1 - 1].any() and m[:, b.x0].any() and m[:, b.x1 - 1].any()

    def test_union_bbox_expand_clips(self):
        a = np.zeros((10, 10), bool)
        a[0:2, 0:2] = True
        b = np.zeros((10, 10), bool)
        b[5:7, 5:7] = True
        assert union_bbox([a, b]) == BBox(0, 0, 7, 7)
        e = union_bbox([a, b], expand=0.5)
        assert e.x0 == 0 and e.y0 == 0 and e.x1 <= 10 and e.y1 <= 10 and e.x1 > 7


class TestResample:
    def test_nearest_example(self):
        m = np.array([[1, 0], [0, 0]], bool)
        out = resize_nearest(m, 4, 4)
        expected = np.zeros((4, 4), bool)
        expected[:2, :2] = True
        np.testing.assert_array_equal(out, expected)

    @given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 40), st.integers(1, 40))
    def test_constant_masks_stay_constant(self, h, w, oh, ow):
        assert resize_nearest(np.ones((h, w), bool), oh, ow).all()
        img = np.full((h, w, 3), 0.25)
        np.testing.assert_allclose(resize_bilinear(img, oh, ow), 0.25)

    def test_crop_resize_identity(self):
        rng = np.random.default_rng(0)
        img = rng.random((6, 6, 3))
        m1 = rng.random((6, 6)) > 0.5
        m2 = rng.random((6, 6)) > 0.5
        x = crop_resize(img, m1, m2, BBox(0, 0, 6, 6), 6)
        assert x.shape == (8, 6, 6)
        np.testing.assert_allclose(x[0:3], img.transpose(2, 0, 1))
        np.testing.assert_allclose(x[4:7], img.transpose(2, 0, 1))
        np.testing.assert_array_equal(x[3], m1)
        np.testing.assert_array_equal(x[7], m2)

    def test_crop_resize_binary_masks(self):
        rng = np.random.default_rng(1)
        img = rng.random((20, 30, 3))
        m = rng.random((20, 30)) > 0.5
        x = crop_resize(img, m, np.ones_like(m), BBox(3, 2, 17, 19), 13)
        assert set(np.unique(x[3])) <= {0.0, 1.0}
        assert (x[7] == 1).all()

    def test_crop_resize_degenerate(self):
        m = np.ones((5, 5), bool)
        with pytest.raises(MaskError):
            crop_resize(np.zeros((5, 5, 3)), m, m, BBox(2, 2, 2, 4), 8)


class TestMorphology:
    def test_erode_dilate_nesting(self):
        m = np.zeros((12, 12), bool)
        m[3:9, 2:10] = True
        assert (erode(m) <= m).all() and (m <= dilate(m)).all()
        assert erode(m).sum() == 4 * 6

    def test_erode_to_fraction(self):
        m = np.zeros((20, 20), bool)
        m[2:18, 2:18] = True
        e = erode_to_fraction(m, 0.5)
        assert (e <= m).all()
        assert 0.3 * m.sum() <= e.sum() <= 0.7 * m.sum()

    def test_translate_clips(self):
        m = np.zeros((4, 4), bool)
        m[0, 0] = m[3, 3] = True
        t = translate(m, 1, 1)
        assert t[1, 1] and t.sum() == 1

    def test_contour_of_square(self):
        m = np.zeros((6, 6), bool)
        m[1:5, 1:5] = True
        c = contour(m)
        assert c.sum() == 12 and (c <= m).all()
