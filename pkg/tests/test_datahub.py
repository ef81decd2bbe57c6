import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtformer import datahub as dh
from vtformer.datahub import DatasetConfig, SceneWindow, TrackPoint


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# -- loading ----------------------------------------------------------------

def test_ngsim_feet_are_converted_to_meters(tmp_path):
    f = _write(tmp_path / "ng.csv", "Vehicle_ID,Frame_ID,Local_X,Local_Y\n7,2,10,100\n7,1,0,50\n")
    points, unit = dh.load_tracks(f, "ngsim")
    assert unit == "meters"
    assert points == [TrackPoint(7, 1, 0.0, 50 * 0.3048), TrackPoint(7, 2, 10 * 0.3048, 100 * 0.3048)]


def test_chd_stays_in_pixels(tmp_path):
    f = _write(tmp_path / "chd.csv", "track_id,frame,center_x,center_y\n1,0,12.5,3\n")
    points, unit = dh.load_tracks(f, "chd")
    assert unit == "pixels" and points[0].x == 12.5


def test_custom_column_mapping(tmp_path):
    f = _write(tmp_path / "c.csv", "id,t,px,py\n3,4,1.0,2.0\n")
    points, _ = dh.load_tracks(f, "chd", {"vehicle_id": "id", "frame": "t", "x": "px", "y": "py"})
    assert points == [TrackPoint(3, 4, 1.0, 2.0)]


def test_malformed_row_reports_line_number(tmp_path):
    f = _write(tmp_path / "bad.csv", "Vehicle_ID,Frame_ID,Local_X,Local_Y\n1,1,0,0\n1,2,abc,0\n")
    with pytest.raises(dh.ParseError, match=":3:"):
        dh.load_tracks(f, "ngsim")


def test_duplicate_vehicle_frame_is_rejected(tmp_path):
    f = _write(tmp_path / "dup.csv", "Vehicle_ID,Frame_ID,Local_X,Local_Y\n1,1,0,0\n1,1,2,0\n")
    with pytest.raises(dh.ParseError, match="duplicate"):
        dh.load_tracks(f, "ngsim")


def test_missing_columns_and_unknown_units(tmp_path):
    f = _write(tmp_path / "m.csv", "Vehicle_ID,Frame_ID,Local_X\n1,1,0\n")
    with pytest.raises(dh.ParseError, match="missing columns"):
        dh.load_tracks(f, "ngsim")
    g = _write(tmp_path / "u.csv", "scene_id,vehicle_id,frame,x,y,unit\n0,1,0,0,0,furlongs\n")
    with pytest.raises(dh.FormatError, match="furlongs"):
        dh.load_tracks(g, "canonical")
    with pytest.raises(dh.FormatError):
        dh.load_tracks(g, "parquet")
    with pytest.raises(dh.DataError):
        dh.load_tracks(tmp_path / "absent.csv", "canonical")


def test_canonical_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    pts = sorted(TrackPoint(v, f, float(rng.normal()) * 1e3, float(rng.normal()), "2")
                 for v in range(3) for f in range(4))
    dh.write_canonical(tmp_path / "c.csv", pts, "pixels")
    back, unit = dh.load_tracks(tmp_path / "c.csv", "canonical")
    assert unit == "pixels" and back == pts


# -- configuration ------------------------------------------------------------

def test_dataset_config_validation():
    assert DatasetConfig().stride == 25
    assert DatasetConfig(native_rate_hz=10, target_rate_hz=5).downsample_stride == 2
    with pytest.raises(dh.ConfigError):
        DatasetConfig(native_rate_hz=10, target_rate_hz=3)
    with pytest.raises(dh.ConfigError):
        DatasetConfig(split_fraction=1.0)
    with pytest.raises(dh.ConfigError):
        DatasetConfig(source_format="xml")
    assert DatasetConfig(T_OH=10).is_canonical and not DatasetConfig(T_OH=7).is_canonical


# -- down-sampling and windowing ------------------------------------------------

def test_downsample_keeps_every_second_frame():
    pts = [TrackPoint(1, f, float(f), 0.0) for f in range(3, 10)]
    out = dh.downsample(pts, 10, 5)
    assert [(p.frame, p.x) for p in out] == [(0, 3.0), (1, 5.0), (2, 7.0), (3, 9.0)]
    with pytest.raises(dh.ConfigError):
        dh.downsample(pts, 10, 4)


def test_downsample_keeps_vehicles_time_aligned():
    pts = [TrackPoint(1, f, float(f), 0.0) for f in range(0, 8)] + [TrackPoint(2, f, float(f), 1.0) for f in range(3, 8)]
    out = dh.downsample(pts, 10, 5)
    frames = {(p.vehicle_id, p.frame): p.x for p in out}
    # same renumbered frame means the same native frame for both vehicles
    for (vid, frame), x in frames.items():
        if (3 - vid, frame) in frames:
            assert frames[(3 - vid, frame)] == x


def test_window_scenes_requires_full_presence():
    cfg = DatasetConfig(T_OH=2, T_PH=1, stride=1)
    pts = [TrackPoint(1, f, float(f), 0.0) for f in range(4)] + [TrackPoint(2, f, 10.0 + f, 1.0) for f in range(1, 4)]
    wins = dh.window_scenes(pts, cfg)
    assert [(w.t0, w.vehicle_ids) for w in wins] == [(0, [1]), (1, [1, 2])]
    np.testing.assert_array_equal(wins[1].observed[1], [[11.0, 1.0], [12.0, 1.0]])
    np.testing.assert_array_equal(wins[1].future[0], [[3.0, 0.0]])
    assert wins[1].scene_id == "0:1"


def test_window_count_matches_stride_formula():
    cfg = DatasetConfig(T_OH=3, T_PH=2, stride=2)
    pts = [TrackPoint(1, f, float(f), 0.0) for f in range(20)]
    span = cfg.T_OH + cfg.T_PH
    assert len(dh.window_scenes(pts, cfg)) == (20 - span) // cfg.stride + 1


def test_scene_window_validation():
    with pytest.raises(dh.DataError):
        SceneWindow("s", 0, "meters", 5, [], np.zeros((0, 2, 2)), np.zeros((0, 1, 2)))
    with pytest.raises(dh.DataError):
        SceneWindow("s", 0, "meters", 5, [1], np.zeros((1, 2, 3)), np.zeros((1, 1, 2)))
    with pytest.raises(dh.FormatError):
        SceneWindow("s", 0, "inches", 5, [1], np.zeros((1, 2, 2)), np.zeros((1, 1, 2)))


@pytest.mark.parametrize("n,fraction,expected", [(10, 0.8, 8), (7, 0.8, 6), (3, 0.5, 2), (5, 0.2, 1)])
def test_split_sizes_use_ceiling(n, fraction, expected):
    wins = dh.generate_synthetic("constant_velocity", n, 1, T_OH=2, T_PH=1)
    train, held = dh.split(wins, fraction, seed=4)
    assert len(train) == expected == math.ceil(fraction * n - 1e-9)
    assert {w.scene_id for w in train}.isdisjoint(w.scene_id for w in held)
    assert len(train) + len(held) == n
    again, _ = dh.split(wins, fraction, seed=4)
    assert [w.scene_id for w in again] == [w.scene_id for w in train]


# -- synthetic scenes ---------------------------------------------------------

def test_constant_velocity_matches_closed_form():
    pos, meta = dh.simulate_scenes("constant_velocity", 2, 3, rate_hz=5, seed=1, n_steps=10)
    t = np.arange(10) / 5
    for s in range(2):
        for k in range(3):
            m = meta[s][k]
            expected = np.stack([m["x0"][0] + m["v"][0] * t, m["x0"][1] + m["v"][1] * t], axis=1)
            np.testing.assert_allclose(pos[s, k], expected, rtol=1e-15)
            assert m["x0"][1] == pytest.approx(dh.LANE_WIDTH * k)


def test_constant_acceleration_second_difference():
    pos, meta = dh.simulate_scenes("constant_acceleration", 1, 2, rate_hz=10, seed=2, n_steps=12)
    dt = 0.1
    for k in range(2):
        acc = np.diff(pos[0, k, :, 0], 2) / dt ** 2
        np.testing.assert_allclose(acc, meta[0][k]["a"][0], atol=1e-9)


def test_lane_change_ends_one_lane_over():
    pos, meta = dh.simulate_scenes("lane_change", 3, 1, rate_hz=5, seed=3, n_steps=200)
    for s in range(3):
        assert abs(pos[s, 0, -1, 1] - pos[s, 0, 0, 1] - meta[s][0]["offset"]) < 1e-3


def test_curve_keeps_constant_speed():
    pos, meta = dh.simulate_scenes("curve", 1, 1, rate_hz=50, seed=0, n_steps=50)
    speed = np.linalg.norm(np.diff(pos[0, 0], axis=0), axis=1) * 50
    np.testing.assert_allclose(speed, meta[0][0]["speed"], rtol=1e-4)


def test_car_following_gaps_stay_positive():
    pos, _ = dh.simulate_scenes("car_following", 4, 4, seed=5)
    gaps = pos[:, :-1, :, 0] - pos[:, 1:, :, 0]
    assert np.all(gaps > 0)


def test_simulation_is_seeded_and_noise_is_applied():
    a, _ = dh.simulate_scenes("constant_velocity", 2, 2, seed=9)
    b, _ = dh.simulate_scenes("constant_velocity", 2, 2, seed=9)
    c, _ = dh.simulate_scenes("constant_velocity", 2, 2, seed=9, noise_std=0.1)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(dh.ConfigError):
        dh.simulate_scenes("teleport", 1, 1)


def test_generate_synthetic_window_shapes():
    wins = dh.generate_synthetic("curve", 3, 2, T_OH=15, T_PH=25)
    assert len(wins) == 3
    assert wins[0].observed.shape == (2, 15, 2) and wins[0].future.shape == (2, 25, 2)
    assert wins[0].unit == "meters"


# -- files ----------------------------------------------------------------------

def test_write_synthetic_and_window_back(tmp_path):
    side = dh.write_synthetic(tmp_path / "s.csv", "constant_velocity", 4, 2, seed=1, n_steps=40)
    assert json.loads((tmp_path / "s.json").read_text())["n_scenes"] == 4 == side["n_scenes"]
    wins, unit = dh.prepare_windows(tmp_path / "s.csv", DatasetConfig())
    direct = dh.generate_synthetic("constant_velocity", 4, 2, seed=1)
    assert unit == "meters" and len(wins) == 4
    for w, d in zip(wins, direct):
        np.testing.assert_array_equal(w.observed, d.observed)
        np.testing.assert_array_equal(w.future, d.future)


def test_prepared_directory_round_trip(tmp_path):
    dh.write_synthetic(tmp_path / "s.csv", "lane_change", 6, 2, seed=2)
    cfg = DatasetConfig(T_OH=10, stride=5)
    points, unit = dh.load_tracks(tmp_path / "s.csv")
    wins = dh.window_scenes(points, cfg, unit)
    train, held = dh.split(wins, 0.8, 0)
    manifest = dh.write_prepared(tmp_path / "prep", points, unit, wins, train, held, cfg, source="s.csv")
    assert manifest["downsample_stride"] == 1 and manifest["window_stride"] == 5
    m2, train2, held2 = dh.load_prepared(tmp_path / "prep")
    assert m2 == manifest
    assert [w.scene_id for w in train2] == [w.scene_id for w in train]
    for a, b in zip(held, held2):
        np.testing.assert_array_equal(a.future, b.future)
    with pytest.raises(dh.DataError):
        dh.load_prepared(tmp_path)


# -- properties -------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 4), T_OH=st.integers(1, 6), T_PH=st.integers(1, 6))
def test_windows_survive_flatten_and_rewindow(seed, n, T_OH, T_PH):
    wins = dh.generate_synthetic("constant_acceleration", 3, n, seed=seed, T_OH=T_OH, T_PH=T_PH)
    cfg = DatasetConfig(T_OH=T_OH, T_PH=T_PH)
    again = dh.window_scenes(dh.windows_to_tracks(wins), cfg)
    assert len(again) == len(wins)
    for a, b in zip(wins, again):
        assert a.vehicle_ids == b.vehicle_ids
        np.testing.assert_array_equal(a.observed, b.observed)
        np.testing.assert_array_equal(a.future, b.future)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), factor=st.sampled_from([1, 2, 5]))
def test_downsample_commutes_with_windowing_on_dense_tracks(seed, factor):
    """Down-sampling a dense track equals simulating directly at the lower rate."""
    dense, _ = dh.simulate_scenes("constant_velocity", 1, 2, rate_hz=10 * factor, seed=seed, n_steps=20 * factor)
    pts = [TrackPoint(k, f, float(dense[0, k, f, 0]), float(dense[0, k, f, 1]))
           for k in range(2) for f in range(20 * factor)]
    low = dh.downsample(pts, 10 * factor, 10)
    arr = np.array([[p.x, p.y] for p in low]).reshape(2, 20, 2)
    np.testing.assert_allclose(arr, dense[0, :, ::factor], rtol=0, atol=0)
