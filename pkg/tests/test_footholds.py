import math

import numpy as np
import pytest

from legplan.body_planner import BodyPath, BodyState, Lattice, default_primitives
from legplan.footholds import (
    FootholdError,
    FootstepCostWeights,
    export_footholds_csv,
    footstep_cost,
    footstep_terms,
    nominal_stance,
    plan_foothold_sequence,
    select_foothold,
    support_partners,
)
from legplan.geometry import inradius
from legplan.terrain import GridSpec, HeightMap, build_costmap, height_at

LAT = Lattice()
FWD = default_primitives()[0]


def bumpy_heightmap(rng, spec):
    xs, ys = spec.centers()
    z = np.zeros(spec.dims)
    for _ in range(6):
        cx, cy = rng.uniform(-0.5, 1.0), rng.uniform(-0.5, 0.5)
        a, s = rng.uniform(-0.08, 0.08), rng.uniform(0.03, 0.15)
        z += a * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * s * s))
    # a few sharp steps so the costmap has high-cost cells
    z += 0.1 * (xs > rng.uniform(0.3, 0.6))
    return HeightMap(spec, z)


def brute_force_select(prim, leg, state, cm, hm, stance, weights):
    """Exhaustive scan of every map cell, independent of the region indexing."""
    x, y, th = LAT.pose(state)
    c, s = math.cos(th), math.sin(th)
    x0, x1, y0, y1 = prim.regions[leg]
    centre = (x + c * 0.5 * (x0 + x1) - s * 0.5 * (y0 + y1), y + s * 0.5 * (x0 + x1) + c * 0.5 * (y0 + y1))
    best = None
    for i in range(cm.spec.nx):
        for j in range(cm.spec.ny):
            px, py = cm.spec.cell_center(i, j)
            bx = c * (px - x) + s * (py - y)
            by = -s * (px - x) + c * (py - y)
            if not (x0 - 1e-9 <= bx <= x1 + 1e-9 and y0 - 1e-9 <= by <= y1 + 1e-9):
                continue
            cost = footstep_cost((i, j), leg, stance, cm, hm, weights, th)
            if not math.isfinite(cost):
                continue
            key = (cost, math.hypot(px - centre[0], py - centre[1]), i, j)
            if best is None or key < best:
                best = key
    i, j = best[2], best[3]
    xy = cm.spec.cell_center(i, j)
    return (xy[0], xy[1], height_at(hm, xy))


class TestTerms:
    def spec(self):
        # cell (0, 0) is centred on the origin
        return GridSpec((-0.01, -0.01), 0.02, (60, 60))

    @pytest.mark.parametrize("scale,expected", [(0.15, 6.25), (0.05, 1 / 0.06)])
    def test_inradius_term(self, scale, expected):
        hm = HeightMap.flat(self.spec())
        cm = build_costmap(hm)
        a, b = support_partners("LF")
        # a 3-4-5 triangle scaled to the wanted in-radius
        stance = {a: (4 * scale, 0.0, 0.0), b: (0.0, 3 * scale, 0.0), "LF": (0, 0, 0), "RH": (1, 1, 0)}
        assert inradius((0, 0), stance[a][:2], stance[b][:2]) == pytest.approx(scale)
        t = footstep_terms((0, 0), "LF", stance, cm, hm)
        assert t.support == pytest.approx(expected, rel=1e-12)

    def test_terrain_difference_is_weight(self):
        hm = HeightMap.flat(self.spec())
        cm = build_costmap(hm)
        cm.total[3, 3] = 1.0
        stance = nominal_stance(BodyState(10, 10, 0), hm, LAT)
        w = FootstepCostWeights(terrain=2.5)
        d = footstep_cost((3, 3), "LF", stance, cm, hm, w) - footstep_cost((3, 4), "LF", stance, cm, hm, w)
        # only the terrain term and the in-radius differ between the two cells
        ti = footstep_terms((3, 3), "LF", stance, cm, hm, w)
        tj = footstep_terms((3, 4), "LF", stance, cm, hm, w)
        assert d == pytest.approx(2.5 + w.support * (ti.support - tj.support), abs=1e-12)

    def test_terms_non_negative(self):
        rng = np.random.default_rng(0)
        spec = GridSpec((-1, -1), 0.02, (100, 100))
        hm = bumpy_heightmap(rng, spec)
        cm = build_costmap(hm)
        stance = nominal_stance(BodyState(0, 0, 0), hm, LAT)
        for cell in [(50, 50), (70, 60), (80, 20)]:
            t = footstep_terms(cell, "LF", stance, cm, hm)
            assert min(t.terrain, t.support, t.collision, t.orientation) >= 0

    def test_off_map(self):
        hm = HeightMap.flat(self.spec())
        cm = build_costmap(hm)
        stance = nominal_stance(BodyState(0, 0, 0), hm, LAT)
        assert footstep_terms((-1, 0), "LF", stance, cm, hm) is None
        assert footstep_cost((0, 999), "LF", stance, cm, hm) == math.inf

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            FootstepCostWeights(terrain=-1)
        with pytest.raises(ValueError):
            FootstepCostWeights(eps_r=0)


class TestSelect:
    @pytest.mark.parametrize("seed", range(30))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        spec = GridSpec((-1, -1), 0.02, (110, 100))
        hm = bumpy_heightmap(rng, spec)
        cm = build_costmap(hm)
        state = BodyState(int(rng.integers(0, 6)), int(rng.integers(-2, 3)), int(rng.choice([0, 1, 15])))
        stance = nominal_stance(state, hm, LAT)
        leg = ["LF", "RF", "LH", "RH"][seed % 4]
        w = FootstepCostWeights()
        assert select_foothold(FWD, leg, state, cm, hm, stance, w, LAT) == brute_force_select(
            FWD, leg, state, cm, hm, stance, w)

    def test_flat_tie_break_picks_centre(self):
        hm = HeightMap.flat(GridSpec((-1, -1), 0.02, (100, 100)))
        cm = build_costmap(hm)
        state = BodyState(0, 0, 0)
        w = FootstepCostWeights(support=0.0)
        x, y, _ = select_foothold(FWD, "LF", state, cm, hm, nominal_stance(state, hm, LAT), w, LAT)
        rect = FWD.regions["LF"]
        assert abs(x - 0.5 * (rect[0] + rect[1])) <= 0.01 + 1e-12
        assert abs(y - 0.5 * (rect[2] + rect[3])) <= 0.01 + 1e-12

    def test_support_term_prefers_wide_triangle(self):
        hm = HeightMap.flat(GridSpec((-1, -1), 0.02, (100, 100)))
        cm = build_costmap(hm)
        state = BodyState(0, 0, 0)
        stance = nominal_stance(state, hm, LAT)
        pos = select_foothold(FWD, "LF", state, cm, hm, stance, FootstepCostWeights(), LAT)
        a, b = support_partners("LF")
        r_sel = inradius(pos[:2], stance[a][:2], stance[b][:2])
        r_mid = inradius((0.425, 0.25), stance[a][:2], stance[b][:2])
        assert r_sel >= r_mid

    def test_half_gap_region(self):
        spec = GridSpec((-1, -1), 0.02, (100, 100))
        xs, _ = spec.centers()
        z = np.where(xs > 0.43, -0.3, 0.0)
        hm = HeightMap(spec, z)
        cm = build_costmap(hm)
        state = BodyState(0, 0, 0)
        stance = nominal_stance(state, hm, LAT)
        pos = select_foothold(FWD, "LF", state, cm, hm, stance, FootstepCostWeights(), LAT)
        assert pos[2] == 0.0 and pos[0] < 0.43
        assert pos == brute_force_select(FWD, "LF", state, cm, hm, stance, FootstepCostWeights())

    def test_region_off_map(self):
        hm = HeightMap.flat(GridSpec((-1, -1), 0.02, (50, 50)))
        cm = build_costmap(hm)
        with pytest.raises(FootholdError):
            select_foothold(FWD, "LF", BodyState(40, 0, 0), cm, hm, nominal_stance(BodyState(0, 0, 0), hm, LAT))


class TestSequence:
    def test_straight_flat_path(self, tmp_path):
        hm = HeightMap.flat(GridSpec((-1, -1), 0.02, (150, 100)))
        cm = build_costmap(hm)
        states = [BodyState(2 * k, 0, 0) for k in range(5)]
        plan = plan_foothold_sequence(BodyPath(states, [FWD] * 4, 0.0, 1.0), cm, hm)
        assert [s.leg for s in plan.steps] == ["LF", "RH", "RF", "LH"]
        for s in plan.steps:
            assert s.position[0] > plan.initial_stance[s.leg][0]
        export_footholds_csv(plan, tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "step,leg,x,y,z,action" and len(lines) == 5

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        spec = GridSpec((-1, -1), 0.02, (150, 100))
        hm = bumpy_heightmap(rng, spec)
        cm = build_costmap(hm)
        states = [BodyState(2 * k, 0, 0) for k in range(5)]
        path = BodyPath(states, [FWD] * 4, 0.0, 1.0)
        a = plan_foothold_sequence(path, cm, hm)
        b = plan_foothold_sequence(path, cm, hm)
        assert a.steps == b.steps

    def test_empty_path(self):
        hm = HeightMap.flat(GridSpec((-1, -1), 0.02, (100, 100)))
        plan = plan_foothold_sequence(BodyPath([BodyState(0, 0, 0)], [], 0.0, 1.0), build_costmap(hm), hm)
        assert len(plan) == 0
        assert set(plan.initial_stance) == {"LF", "RF", "LH", "RH"}

    def test_stepping_stones_avoid_costly_cells(self):
        from legplan import bench

        sc = bench.get_scenario("stepping_stones")
        hm = sc.heightmap()
        cm = sc.costmap(hm)
        # a straight walk across the whole field of stones
        states = [BodyState(2 * k, 0, 0) for k in range(17)]
        path = BodyPath(states, [FWD] * 16, 0.0, 1.0)
        plan = plan_foothold_sequence(path, cm, hm)
        assert len(plan) > 0
        assert max(cm.cost_at(s.position[:2]) for s in plan.steps) <= 0.8

