import dataclasses

import numpy as np
import pytest

from occtrack.geometry import random_pose
from occtrack.seqio import (FileSequence, SequenceFormatError, SimulatedSequence, read_manifest, read_pose_csv,
                            write_pose_csv, write_sequence)
from occtrack.simulator.scene import load_bundled


@pytest.fixture(scope="module")
def short_scene():
    sc = load_bundled("sphere")
    return dataclasses.replace(sc, frames=10)


@pytest.fixture(scope="module")
def seq_dir(tmp_path_factory, short_scene):
    d = tmp_path_factory.mktemp("seq")
    write_sequence(short_scene, d)
    return d


def test_directory_contents(seq_dir):
    names = {p.name for p in seq_dir.iterdir()}
    assert sum(n.startswith("depth_") for n in names) == 10
    assert sum(n.startswith("mask_") for n in names) == 10
    for f in ("tracks.csv", "gt_poses.csv", "manifest.txt", "model_obj0.obj"):
        assert f in names
    cam, frames, ids, extra = read_manifest(seq_dir)
    assert frames == 10 and ids == [0] and cam.width == 160


def test_rerun_is_byte_identical(seq_dir, short_scene, tmp_path):
    write_sequence(short_scene, tmp_path)
    for p in sorted(seq_dir.iterdir()):
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_gt_poses_round_trip(seq_dir, short_scene):
    back = read_pose_csv(seq_dir / "gt_poses.csv")[0]
    obj = short_scene.objects[0]
    for t in range(10):
        assert np.array_equal(back[t].matrix, short_scene.gt_pose(obj, t).matrix)


def test_pose_csv_exact(tmp_path, rng):
    rows = [(t, 2, random_pose(rng)) for t in range(5)]
    write_pose_csv(tmp_path / "p.csv", rows)
    back = read_pose_csv(tmp_path / "p.csv")
    for t, _, P in rows:
        assert np.array_equal(back[2][t].matrix, P.matrix)


def test_file_source_matches_simulation(seq_dir, short_scene):
    fs = FileSequence(seq_dir)
    ss = SimulatedSequence(short_scene)
    for t in (0, 5, 9):
        a, b = fs.frame(t), ss.frame(t)
        assert np.array_equal(a.masks[0], b.masks[0])
        assert np.abs(a.depth - b.depth).max() < 1e-6
    ca = fs.frame(0).candidates[0]
    cb = ss.frame(0).candidates[0]
    assert [c.track_id for c in ca] == [c.track_id for c in cb]
    tids = [c.track_id for c in ca[:5]]
    ss.activate(tids)
    ra, rb = fs.records(4, tids), ss.records(4, tids)
    assert ra.keys() == rb.keys()
    for k in ra:
        assert ra[k].visible == rb[k].visible
        assert abs(ra[k].u - rb[k].u) < 1e-5


def test_truncated_depth_names_frame(seq_dir, tmp_path):
    import shutil

    d = tmp_path / "broken"
    shutil.copytree(seq_dir, d)
    p = d / "depth_000003.bin"
    p.write_bytes(p.read_bytes()[:100])
    fs = FileSequence(d)
    fs.frame(2)
    with pytest.raises(SequenceFormatError, match="frame 3"):
        fs.frame(3)


def test_missing_manifest(tmp_path):
    with pytest.raises(SequenceFormatError, match="manifest"):
        FileSequence(tmp_path)


def test_bad_tracks_header(seq_dir, tmp_path):
    import shutil

    d = tmp_path / "bad"
    shutil.copytree(seq_dir, d)
    (d / "tracks.csv").write_text("a,b\n")
    with pytest.raises(SequenceFormatError, match="header"):
        FileSequence(d)
