import numpy as np
import pytest

from vomap.geometry import GridSpec, Link, ObstacleMap, hard_los
from vomap.propagation import PathLossParams, RadioMapModel
from vomap.relay import (RelayError, RelayQuery, double_los, exhaustive_search, place_relay,
                         serpentine, worse_attenuation)
from vomap.scene import SceneConfig, random_block_scene

P = PathLossParams(30.0, 22.0)
G32 = GridSpec(32, 32, 10.0)


def wall_scene():
    H = np.zeros(G32.shape)
    H[4:28, 15:17] = 40.0
    return ObstacleMap(G32, H)


class TestDoubleLos:
    def test_empty_map(self, rng):
        H = ObstacleMap.flat(G32)
        q = RelayQuery([50, 50, 1.5], [250, 200, 1.5])
        for p in rng.random((20, 3)) * [320, 320, 100] + [0, 0, 1]:
            assert double_los(p, q, H)

    def test_wall_blocks_one_user(self):
        H = wall_scene()
        q = RelayQuery([100, 60, 1.5], [100, 260, 1.5])
        p = np.array([100.0, 100.0, 20.0])
        assert hard_los(Link(p, q.p1), H)
        assert not hard_los(Link(p, q.p2), H)
        assert not double_los(p, q, H)

    def test_composition(self, rng):
        H = random_block_scene(G32, SceneConfig(density=0.3), 2)
        for _ in range(50):
            a, b = rng.random((2, 2)) * 320
            q = RelayQuery([*a, 1.5], [*b, 1.5])
            p = np.array([*(rng.random(2) * 320), 5 + rng.random() * 100])
            assert double_los(p, q, H) == (hard_los(Link(p, q.p1), H) and hard_los(Link(p, q.p2), H))

    def test_vertical_monotonicity(self, rng):
        for seed in range(5):
            H = random_block_scene(G32, SceneConfig(density=0.3), seed)
            for _ in range(30):
                a, b = rng.random((2, 2)) * 320
                q = RelayQuery([*a, 1.5], [*b, 1.5])
                p = np.array([*(rng.random(2) * 320), 5 + rng.random() * 80])
                if double_los(p, q, H):
                    for dz in (0.5, 5.0, 40.0):
                        assert double_los(p + [0, 0, dz], q, H)


class TestPlaceRelay:
    def test_empty_map_goes_to_floor(self):
        model = RadioMapModel(ObstacleMap.flat(G32), P)
        q = RelayQuery([60, 80, 1.5], [240, 200, 1.5], z_min=12.0, z_max=150.0)
        r = place_relay(q, model)
        np.testing.assert_allclose(r.position, [150, 140, 12.0], atol=1e-9)
        assert r.double_los
        assert r.search_distance == pytest.approx(138.0)

    def test_empty_map_matches_exhaustive(self):
        model = RadioMapModel(ObstacleMap.flat(G32), P)
        q = RelayQuery([55, 155, 1.5], [255, 155, 1.5], z_min=10.0, z_max=150.0)
        ex = exhaustive_search(q, model, "3D")
        r = place_relay(q, model)
        assert ex.position[2] == 10.0
        assert abs(ex.position[0] - 155) <= 5.0
        assert r.min_gain <= ex.min_gain + 1e-9

    def test_clears_wall_shadow(self):
        model = RadioMapModel(wall_scene(), P)
        q = RelayQuery([100, 60, 1.5], [100, 260, 1.5])
        r = place_relay(q, model)
        assert r.double_los and double_los(r.position, q, model.H)
        assert r.position[2] > 10.0
        assert r.min_gain == worse_attenuation(r.position, q, model)

    def test_blocked_start_falls_back_to_circle(self):
        H = np.zeros(G32.shape)
        H[14:18, 14:18] = 200.0
        model = RadioMapModel(ObstacleMap(G32, H), P)
        q = RelayQuery([60, 160, 1.5], [260, 160, 1.5], z_max=150.0)
        assert not double_los([160, 160, 150], q, model.H)
        r = place_relay(q, model)
        assert double_los(r.position, q, model.H)

    def test_no_feasible_point(self):
        H = np.zeros(G32.shape)
        H[10:22, :] = 300.0
        model = RadioMapModel(ObstacleMap(G32, H), P)
        q = RelayQuery([160, 40, 1.5], [160, 280, 1.5])
        with pytest.raises(RelayError):
            place_relay(q, model)
        with pytest.raises(RelayError):
            exhaustive_search(q, model, "3D")

    def test_deterministic(self):
        model = RadioMapModel(wall_scene(), P)
        q = RelayQuery([100, 60, 1.5], [100, 260, 1.5])
        a, b = place_relay(q, model), place_relay(q, model)
        np.testing.assert_array_equal(a.position, b.position)
        assert (a.min_gain, a.search_distance, a.evaluated) == (b.min_gain, b.search_distance, b.evaluated)

    def test_result_always_double_los(self, rng):
        for seed in range(4):
            model = RadioMapModel(random_block_scene(G32, SceneConfig(density=0.3), seed), P)
            for _ in range(5):
                a, b = rng.random((2, 2)) * 320
                q = RelayQuery([*a, 1.5], [*b, 1.5])
                try:
                    r = place_relay(q, model)
                except RelayError:
                    continue
                assert double_los(r.position, q, model.H)
                assert q.z_min <= r.position[2] <= q.z_max
                assert r.search_distance >= 0


class TestExhaustive:
    def test_3d_never_worse_than_2d(self, rng):
        for seed in range(3):
            model = RadioMapModel(random_block_scene(G32, SceneConfig(density=0.3), seed), P)
            a, b = rng.random((2, 2)) * 320
            q = RelayQuery([*a, 1.5], [*b, 1.5], fixed_altitude=50.0)
            try:
                r2 = exhaustive_search(q, model, "2D")
            except RelayError:
                continue
            r3 = exhaustive_search(q, model, "3D")
            assert r3.min_gain <= r2.min_gain
            assert r2.position[2] == 50.0

    def test_serpentine_path(self):
        pts = serpentine(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        assert len(pts) == 12
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        np.testing.assert_array_equal(steps, 1.0)

    def test_search_distance_is_lattice_path(self):
        model = RadioMapModel(ObstacleMap.flat(GridSpec(4, 4, 10.0)), P)
        q = RelayQuery([5, 5, 1.5], [35, 35, 1.5], z_min=10, z_max=30, step_v=10)
        r = exhaustive_search(q, model, "3D")
        # 4x4 lattice per layer, three layers, unit moves of 10 m
        assert r.search_distance == pytest.approx(47 * 10.0)
        assert r.evaluated == 48

    def test_bad_mode(self):
        model = RadioMapModel(ObstacleMap.flat(G32), P)
        with pytest.raises(RelayError):
            exhaustive_search(RelayQuery([5, 5, 1], [50, 50, 1]), model, "4D")


class TestQuery:
    def test_validation(self):
        with pytest.raises(RelayError):
            RelayQuery([5, 5, 1], [5, 5, 2])
        with pytest.raises(RelayError):
            RelayQuery([5, 5, 1], [50, 5, 1], z_min=20, z_max=10)
        with pytest.raises(RelayError):
            RelayQuery([5, 5, 1], [50, 5, 1], step_v=0.0)
        with pytest.raises(RelayError):
            RelayQuery([5, 5, 1], [50, 5, 1], angle_step_deg=0.0)

    def test_channel_gain_sign(self):
        model = RadioMapModel(ObstacleMap.flat(G32), P)
        r = place_relay(RelayQuery([60, 80, 1.5], [240, 200, 1.5]), model)
        assert r.channel_gain_db == -r.min_gain < 0
