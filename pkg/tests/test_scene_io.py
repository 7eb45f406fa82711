import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lidar_shadows.geometry import OrientedBox3
from lidar_shadows.scene_io import (
    Calibration,
    LabeledObject,
    MalformedInputError,
    PointCloud,
    Scene,
    format_labels,
    load_scene,
    parse_calib,
    parse_labels,
    parse_velodyne,
    write_kitti_scene,
)

IDENTITY_CALIB = (
    "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    "R0_rect: 1 0 0 0 1 0 0 0 1\n"
    "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    "Tr_imu_to_velo: 1 0 0 0 0 1 0 0 0 0 1 0\n"
)


def label_line(cls="Car", h=1.5, w=1.6, l=3.9, x=0.0, y=1.65, z=10.0, ry=0.0):
    return f"{cls} 0.00 0 0.00 0 0 0 0 {h} {w} {l} {x} {y} {z} {ry}"


def random_calib(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    r0, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    tr = np.column_stack([q, rng.normal(size=3)])
    return Calibration(tr, r0)


def inverse_oracle(calib, p_cam):
    """Independent camera -> velodyne mapping through 4x4 homogeneous inverses."""
    T = np.eye(4)
    T[:3, :] = calib.velo_to_cam
    R = np.eye(4)
    R[:3, :3] = calib.rect
    ph = np.append(p_cam, 1.0)
    return (np.linalg.inv(T) @ np.linalg.inv(R) @ ph)[:3]


# --- velodyne -------------------------------------------------------------


def test_velodyne_single_record():
    cloud = parse_velodyne(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    assert len(cloud) == 1
    np.testing.assert_array_equal(cloud.xyz, [[1.0, 2.0, 3.0]])
    assert cloud.intensity[0] == pytest.approx(0.5)


def test_velodyne_empty_and_bad_length():
    assert len(parse_velodyne(b"")) == 0
    with pytest.raises(MalformedInputError):
        parse_velodyne(b"\0" * 17)


def test_velodyne_rejects_non_finite(caplog):
    data = struct.pack("<8f", 1, 2, 3, 0, float("nan"), 0, 0, 0)
    cloud = parse_velodyne(data)
    assert len(cloud) == 1 and cloud.rejected == 1
    assert "rejected 1" in caplog.text


@given(hnp.arrays(np.float32, st.tuples(st.integers(0, 50), st.just(4)),
                  elements=st.floats(-100, 100, width=32)))
def test_velodyne_round_trip_bit_identical(arr):
    cloud = PointCloud(arr)
    again = parse_velodyne(cloud.to_bytes())
    assert again.to_bytes() == cloud.to_bytes()


# --- calibration ----------------------------------------------------------


def test_calib_identity_and_extra_keys():
    calib = parse_calib(IDENTITY_CALIB)
    np.testing.assert_array_equal(calib.rect, np.eye(3))
    p = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(calib.cam_to_velo(p), p)


def test_calib_arity_and_missing_key():
    with pytest.raises(MalformedInputError, match="R0_rect"):
        parse_calib("R0_rect: 1 0 0 0 1 0 0 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(MalformedInputError, match="Tr_velo_to_cam"):
        parse_calib("R0_rect: 1 0 0 0 1 0 0 0 1\n")


def test_calib_not_orthonormal():
    with pytest.raises(MalformedInputError):
        parse_calib("R0_rect: 2 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n")


def test_calib_text_round_trip(rng):
    calib = random_calib(rng)
    again = parse_calib(calib.to_text())
    np.testing.assert_allclose(again.velo_to_cam, calib.velo_to_cam, atol=1e-12)
    np.testing.assert_allclose(again.rect, calib.rect, atol=1e-12)


# --- labels ---------------------------------------------------------------


def test_label_location_matches_inverse_oracle():
    calib = Calibration.standard()
    (obj,) = parse_labels(label_line(h=1.5, x=0.0, y=1.65, z=10.0), calib)
    bottom = inverse_oracle(calib, np.array([0.0, 1.65, 10.0]))
    expected = bottom + [0, 0, 0.75]
    np.testing.assert_allclose(obj.box.center, expected, atol=1e-12)
    np.testing.assert_allclose(obj.box.center, (10.0, 0.0, -0.9), atol=1e-12)


def test_label_location_random_calib(rng):
    for _ in range(20):
        calib = random_calib(rng)
        p = rng.normal(size=3) * 10
        got = calib.cam_to_velo(p)[0]
        np.testing.assert_allclose(got, inverse_oracle(calib, p), atol=1e-9)


def test_label_yaw_heading():
    calib = Calibration.standard()
    # rotation_y = -pi/2 faces the camera +z axis, i.e. sensor +x: yaw 0.
    (obj,) = parse_labels(label_line(ry=-math.pi / 2), calib)
    assert obj.box.yaw == pytest.approx(0.0, abs=1e-12)
    (obj,) = parse_labels(label_line(ry=0.0), calib)
    assert obj.box.yaw == pytest.approx(-math.pi / 2)


def camera_corners(h, w, l, x, y, z, ry):
    """KITTI devkit construction of the 8 corners in the camera frame."""
    xc = np.array([l, l, -l, -l, l, l, -l, -l]) / 2
    yc = np.array([0, 0, 0, 0, -h, -h, -h, -h])
    zc = np.array([w, -w, -w, w, w, -w, -w, w]) / 2
    c, s = math.cos(ry), math.sin(ry)
    rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return (rot @ np.vstack([xc, yc, zc])).T + [x, y, z]


def test_label_corners_match_devkit_construction(rng):
    for _ in range(25):
        calib = random_calib(rng)
        # Keep camera-down aligned with sensor -z so the h/2 lift is exact.
        calib = Calibration(np.column_stack([Calibration.standard().velo_to_cam[:, :3],
                                             rng.normal(size=3)]), np.eye(3))
        h, w, l = rng.uniform(0.5, 4, size=3)
        x, y, z = rng.uniform(-10, 10, size=3)
        ry = rng.uniform(-math.pi, math.pi)
        (obj,) = parse_labels(label_line(h=h, w=w, l=l, x=x, y=y, z=z, ry=ry), calib)
        expect = np.array([inverse_oracle(calib, c) for c in camera_corners(h, w, l, x, y, z, ry)])
        got = obj.box.corners()
        # same point set: every devkit corner has a partner within 1e-6
        d = np.linalg.norm(expect[:, None, :] - got[None, :, :], axis=2)
        assert d.min(axis=1).max() < 1e-6


def test_label_isometry_random_calibration(rng):
    for _ in range(25):
        calib = random_calib(rng)
        h, w, l = rng.uniform(0.5, 4, size=3)
        corners_cam = camera_corners(h, w, l, *rng.uniform(-10, 10, size=3), rng.uniform(-3, 3))
        corners_velo = calib.cam_to_velo(corners_cam)
        dc = np.linalg.norm(corners_cam[:, None] - corners_cam[None], axis=2)
        dv = np.linalg.norm(corners_velo[:, None] - corners_velo[None], axis=2)
        np.testing.assert_allclose(dv, dc, atol=1e-6)


def test_labels_dontcare_empty_and_order():
    calib = Calibration.standard()
    text = "\n".join([label_line("Pedestrian"), "DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10",
                      label_line("Car", z=20.0)])
    objs = parse_labels(text, calib)
    assert [o.class_name for o in objs] == ["Pedestrian", "Car"]
    assert [o.id for o in objs] == [0, 1]
    assert parse_labels("", calib) == []


def test_labels_malformed_names_line():
    text = label_line() + "\nCar 0 0 0 1 2 3\n"
    with pytest.raises(MalformedInputError, match="line 2"):
        parse_labels(text, Calibration.standard())
    with pytest.raises(MalformedInputError, match="line 1"):
        parse_labels(label_line(h="abc"), Calibration.standard())


def test_labels_class_filter():
    text = label_line("Car") + "\n" + label_line("Tram")
    objs = parse_labels(text, Calibration.standard(), classes={"Tram"})
    assert [o.class_name for o in objs] == ["Tram"] and objs[0].id == 0


def test_format_labels_round_trip(rng):
    calib = Calibration.standard()
    objs = [LabeledObject(i, "Car", OrientedBox3((rng.uniform(5, 30), rng.uniform(-5, 5), -1.0),
                                                 (4.0, 1.8, 1.5), rng.uniform(-3, 3))) for i in range(5)]
    again = parse_labels(format_labels(objs, calib), calib)
    for a, b in zip(objs, again):
        np.testing.assert_allclose(a.box.center, b.box.center, atol=1e-5)
        assert math.isclose(math.cos(a.box.yaw - b.box.yaw), 1.0, abs_tol=1e-9)


# --- scenes ---------------------------------------------------------------


def test_load_scene_and_unlabeled(tmp_path):
    scene = Scene(PointCloud.from_xyz(np.array([[1.0, 2.0, 3.0]])),
                  parse_labels(label_line(), Calibration.standard()), "000007", Calibration.standard())
    cloud, label, calib = write_kitti_scene(tmp_path, scene)
    loaded = load_scene(cloud, label, calib)
    assert loaded.scene_id == "000007" and len(loaded.labels) == 1
    np.testing.assert_allclose(loaded.labels[0].box.center, scene.labels[0].box.center, atol=1e-5)
    label.unlink()
    with pytest.raises(FileNotFoundError):
        load_scene(cloud, label, calib)
    assert load_scene(cloud, label, calib, allow_unlabeled=True).labels == []


def test_load_scene_corrupt_cloud(tmp_path):
    scene = Scene(PointCloud.from_xyz(np.zeros((2, 3))), [], "000001", Calibration.standard())
    cloud, label, calib = write_kitti_scene(tmp_path, scene)
    cloud.write_bytes(cloud.read_bytes()[:-3])
    with pytest.raises(MalformedInputError):
        load_scene(cloud, label, calib)
    with pytest.raises(FileNotFoundError):
        load_scene(tmp_path / "missing.bin", label, calib)


def test_scene_rejects_duplicate_ids():
    box = OrientedBox3((10, 0, 0), (1, 1, 1))
    with pytest.raises(ValueError):
        Scene(PointCloud.from_xyz(np.zeros((0, 3))), [LabeledObject(0, "Car", box), LabeledObject(0, "Car", box)])
