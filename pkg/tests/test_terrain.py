import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legplan.terrain import (
    CURVATURE_PARAMS,
    HEIGHT_DEV_PARAMS,
    SLOPE_PARAMS,
    CostmapConfig,
    DegenerateNeighborhoodError,
    FeatureParams,
    GridSpec,
    HeightMap,
    OutOfBoundsError,
    TerrainError,
    UnknownCellError,
    build_costmap,
    curvature_cost,
    estimate_surface,
    export_costmap_csv,
    feature_cost,
    height_at,
    load_heightmap,
    neighborhood,
    quantize,
    save_heightmap,
    update_costmap,
)


def brute_force_surface(points):
    """Independent PCA: explicit covariance sums and a generic eigen-solver."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    mean = [sum(p[k] for p in pts) / n for k in range(3)]
    cov = np.zeros((3, 3))
    for p in pts:
        d = np.array([p[k] - mean[k] for k in range(3)])
        cov += np.outer(d, d)
    cov /= n
    vals, vecs = np.linalg.eig(cov)
    vals, vecs = vals.real, vecs.real
    order = np.argsort(vals)
    normal = vecs[:, order[0]]
    normal = normal / np.linalg.norm(normal)
    if normal[2] < 0:
        normal = -normal
    return normal, max(vals[order[0]], 0.0) / vals.sum()


class TestFeatureCost:
    def test_height_dev_anchors(self):
        assert feature_cost(0.005, HEIGHT_DEV_PARAMS) == 0.0
        assert feature_cost(0.06, HEIGHT_DEV_PARAMS) == 1.0

    def test_slope_anchors(self):
        assert feature_cost(math.pi / 180, SLOPE_PARAMS) == 0.0
        assert feature_cost(70 * math.pi / 180, SLOPE_PARAMS) == 1.0
        assert feature_cost(1.5, SLOPE_PARAMS) == 1.0

    @pytest.mark.parametrize("p", [HEIGHT_DEV_PARAMS, SLOPE_PARAMS])
    def test_midpoint_is_log_two(self, p):
        mid = 0.5 * (p.f_flat + p.f_max)
        assert abs(feature_cost(mid, p) - math.log(2)) <= 1e-12

    @given(st.floats(0, 0.1), st.floats(0, 0.1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert feature_cost(lo, HEIGHT_DEV_PARAMS) <= feature_cost(hi, HEIGHT_DEV_PARAMS)

    def test_rejects_bad_params(self):
        with pytest.raises(TerrainError):
            FeatureParams(0.1, 0.05)


class TestCurvatureCost:
    def test_mild_band_is_free(self):
        assert curvature_cost(7.5, CURVATURE_PARAMS) == 0.0

    def test_cracks_and_sharp_peaks_are_max(self):
        assert curvature_cost(-6.0, CURVATURE_PARAMS) == 1.0
        assert curvature_cost(-10.0, CURVATURE_PARAMS) == 1.0
        assert curvature_cost(9.0, CURVATURE_PARAMS) == 1.0

    def test_log_segment(self):
        c = 0.0
        expected = 1.0 - math.log((c + 6.0) / 15.0)
        assert curvature_cost(c, CURVATURE_PARAMS) == pytest.approx(expected, abs=1e-15)


class TestSurface:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pts = rng.normal(size=(12, 3)) * [0.05, 0.05, 0.01]
            est = estimate_surface(pts)
            n, sig = brute_force_surface(pts)
            ang = math.acos(min(1.0, abs(float(est.normal @ n))))
            assert ang <= 1e-7
            assert abs(est.curvature - sig) <= 1e-9

    def test_coplanar_has_zero_curvature(self):
        xy = np.random.default_rng(0).uniform(-1, 1, size=(10, 2))
        pts = np.column_stack([xy, 0.3 * xy[:, 0] - 0.2 * xy[:, 1] + 1.0])
        est = estimate_surface(pts)
        assert est.curvature <= 1e-12
        n = np.array([-0.3, 0.2, 1.0]) / math.sqrt(1.13)
        assert abs(float(est.normal @ n)) == pytest.approx(1.0, abs=1e-12)

    def test_normal_points_up(self):
        pts = [(0, 0, 0), (1, 0, 0.1), (0, 1, -0.1), (1, 1, 0)]
        assert estimate_surface(pts).normal[2] > 0

    def test_degenerate(self):
        with pytest.raises(DegenerateNeighborhoodError):
            estimate_surface([(0, 0, 0), (1, 1, 1), (2, 2, 2)])
        with pytest.raises(DegenerateNeighborhoodError):
            estimate_surface([(0, 0, 0), (1, 0, 0)])


def small_map(heights, res=0.02):
    h = np.asarray(heights, dtype=float)
    return HeightMap(GridSpec((0.0, 0.0), res, h.shape), h)


class TestHeightMap:
    def test_quantize(self):
        assert quantize(np.array([0.014, 0.016]), 0.01).tolist() == pytest.approx([0.01, 0.02])

    def test_lookup_and_errors(self):
        hm = small_map([[0.0, 0.1], [np.nan, 0.2]])
        assert height_at(hm, (0.01, 0.03)) == pytest.approx(0.1)
        with pytest.raises(UnknownCellError):
            height_at(hm, (0.03, 0.01))
        with pytest.raises(OutOfBoundsError):
            height_at(hm, (1.0, 1.0))

    def test_neighborhood_window(self):
        hm = HeightMap.flat(GridSpec((0, 0), 0.02, (10, 10)))
        assert len(neighborhood(hm, (5, 5), 0.06)) == 9
        assert len(neighborhood(hm, (0, 0), 0.06)) == 4

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        h = rng.uniform(-0.3, 0.3, size=(7, 5))
        h[2, 3] = np.nan
        hm = small_map(h)
        save_heightmap(hm, tmp_path / "m.txt")
        back = load_heightmap(tmp_path / "m.txt")
        assert back.spec == hm.spec
        np.testing.assert_array_equal(back.heights, hm.heights)

    def test_truncated_file(self, tmp_path):
        (tmp_path / "bad.txt").write_text("3 3 0.02 0.01 0 0\n0 0 0\n")
        with pytest.raises(TerrainError):
            load_heightmap(tmp_path / "bad.txt")


class TestCostmap:
    def test_flat_is_free(self):
        cm = build_costmap(HeightMap.flat(GridSpec((0, 0), 0.02, (20, 20))))
        inner = cm.total[3:-3, 3:-3]
        assert np.all(inner == 0.0)

    def test_step_edge_is_expensive(self):
        h = np.zeros((30, 20))
        h[15:] = 0.2
        cm = build_costmap(small_map(h))
        assert cm.layers["height_dev_cost"][15, 10] == 1.0
        assert cm.layers["slope_cost"][15, 10] == 1.0
        assert cm.total[15, 10] == pytest.approx(2 / 3)
        assert cm.total[5, 10] == 0.0
        assert cm.total[25, 10] == 0.0

    def test_total_in_unit_interval(self):
        rng = np.random.default_rng(5)
        cm = build_costmap(small_map(rng.uniform(0, 0.1, size=(15, 15))))
        assert np.all((cm.total >= 0) & (cm.total <= 1))

    def test_unknown_cells_cost_one(self):
        h = np.zeros((10, 10))
        h[4, 4] = np.nan
        cm = build_costmap(small_map(h))
        assert cm.total[4, 4] == 1.0

    def test_banned_rectangle(self):
        cm = build_costmap(HeightMap.flat(GridSpec((0, 0), 0.02, (20, 20))), banned=[(0.1, 0.1, 0.2, 0.2)])
        assert cm.cost_at((0.15, 0.15)) == 1.0
        assert cm.cost_at((0.3, 0.3)) == 0.0
        assert cm.cost_at((-1, -1)) == 1.0

    def test_weights_normalised(self):
        h = np.zeros((30, 20))
        h[15:] = 0.2
        hm = small_map(h)
        only_height = build_costmap(hm, (1, 0, 0))
        assert np.allclose(only_height.total, np.clip(only_height.layers["height_dev_cost"], 0, 1))

    def test_rejects_bad_weights(self):
        with pytest.raises(TerrainError):
            build_costmap(HeightMap.flat(GridSpec((0, 0), 0.02, (5, 5))), (0, 0, 0))

    def test_aoi_subgrid(self):
        hm = HeightMap.flat(GridSpec((0, 0), 0.02, (20, 20)))
        cm = build_costmap(hm, aoi=(0.1, 0.1, 0.2, 0.3))
        assert cm.spec.dims == (5, 10)
        assert cm.spec.origin == pytest.approx((0.1, 0.1))

    def test_layers_match_single_cell_pca(self):
        rng = np.random.default_rng(9)
        hm = small_map(rng.uniform(0, 0.05, size=(12, 12)))
        cm = build_costmap(hm)
        cfg = CostmapConfig()
        for cell in [(5, 5), (3, 8), (8, 2)]:
            est = estimate_surface(neighborhood(hm, cell, cfg.slope_window))
            assert cm.layers["slope"][cell] == pytest.approx(math.acos(est.normal[2]), abs=1e-9)
            pts = neighborhood(hm, cell, cfg.height_window)
            assert cm.layers["height_dev"][cell] == pytest.approx(np.std(pts[:, 2]), abs=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 14), st.integers(0, 14), st.floats(-0.2, 0.2))
    def test_incremental_update_matches_rebuild(self, i, j, dz):
        rng = np.random.default_rng(2)
        h = rng.uniform(0, 0.04, size=(15, 15))
        hm = small_map(h)
        cm = build_costmap(hm)
        h2 = hm.heights.copy()
        h2[i, j] += dz
        hm2 = small_map(h2)
        upd = update_costmap(cm, hm2, [(i, j)])
        full = build_costmap(hm2)
        np.testing.assert_allclose(upd.total, full.total, atol=1e-12)

    def test_csv_export(self, tmp_path):
        cm = build_costmap(HeightMap.flat(GridSpec((0, 0), 0.02, (4, 3))))
        export_costmap_csv(cm, tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "x,y,height_dev,slope,curvature,total"
        assert len(lines) == 13
