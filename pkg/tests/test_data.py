import numpy as np
import pytest

from promptgar.data import (
    CLASSES,
    HEADER,
    AnnotationError,
    ClipRecord,
    DegradationError,
    DegradationSpec,
    Instance,
    SyntheticTaskSpec,
    degrade,
    degrade_clip,
    frame_indices,
    generate_clip,
    generate_dataset,
    load_annotations,
    random_bijection,
    save_annotations,
)
from promptgar.data.io import load_dataset, save_dataset
from promptgar.data.oracles import LinearProbe, NearestCentroid, raster_features, trajectory_features
from promptgar.data.synthetic import TRANS_L

SPEC = SyntheticTaskSpec()


def random_record(rng, cid):
    t = int(rng.integers(1, 6))
    instances = []
    for tid in rng.choice(50, size=int(rng.integers(0, 5)), replace=False):
        boxes, skels = [], []
        for _ in range(t):
            if rng.random() < 0.2:
                boxes.append(None)
            else:
                x0, x1 = np.sort(rng.random(2))
                y0, y1 = np.sort(rng.random(2))
                boxes.append([float(x0), float(y0), float(x1), float(y1)])
            if rng.random() < 0.2:
                skels.append(None)
            else:
                skels.append([[float(rng.random()), float(rng.random()), int(rng.integers(0, 2))] for _ in range(17)])
        instances.append(Instance(int(tid), boxes, skels))
    times = sorted(float(v) for v in rng.random(t))
    return ClipRecord(f"r{cid}", t, 32, 32, int(rng.integers(0, 8)), times, instances)


# ---- synthetic task -----------------------------------------------------------

def test_same_seed_is_bitwise_identical():
    c1, r1 = generate_clip(SPEC, 17)
    c2, r2 = generate_clip(SPEC, 17)
    assert np.array_equal(c1.frames, c2.frames)
    assert r1 == r2


def test_spec_ranges_respected():
    _, recs = generate_dataset(SPEC, range(40))
    assert all(3 <= r.n_instances <= 12 and 4 <= r.T <= 16 for r in recs)
    assert {r.label for r in recs} <= set(range(8))
    assert len(CLASSES) == 8


def test_translate_left_mean_x_decreases():
    seen = 0
    for seed in range(200):
        _, rec = generate_clip(SPEC, seed)
        if rec.label != TRANS_L:
            continue
        seen += 1
        xs = [np.mean([(i.boxes[k][0] + i.boxes[k][2]) / 2 for i in rec.instances]) for k in range(rec.T)]
        assert all(b < a for a, b in zip(xs, xs[1:])), rec.clip_id
    assert seen > 5


def test_same_scene_at_any_frame_count():
    _, a = generate_clip(SPEC, 5, n_frames=4)
    _, b = generate_clip(SPEC, 5, n_frames=16)
    assert a.label == b.label and a.T == 4 and b.T == 16
    assert [i.track_id for i in a.instances] == [i.track_id for i in b.instances]


def test_trajectory_oracle_above_95_percent():
    _, fit = generate_dataset(SPEC, range(500))
    _, held = generate_dataset(SPEC, range(10_000, 10_500))
    X = np.array([trajectory_features(r) for r in fit])
    clf = NearestCentroid().fit(X, np.array([r.label for r in fit]), 8)
    pred = clf.predict(np.array([trajectory_features(r) for r in held]))
    acc = (pred == np.array([r.label for r in held])).mean()
    assert acc > 0.95, acc


def test_rgb_probe_above_80_percent():
    clips, recs = generate_dataset(SPEC, range(500))
    hclips, hrecs = generate_dataset(SPEC, range(10_000, 10_500))
    probe = LinearProbe().fit(np.array([raster_features(c.frames) for c in clips]), np.array([r.label for r in recs]), 8)
    pred = probe.predict(np.array([raster_features(c.frames) for c in hclips]))
    acc = (pred == np.array([r.label for r in hrecs])).mean()
    assert acc > 0.80, acc


# ---- annotation files ------------------------------------------------------------

def test_round_trip_100_random_files(tmp_path):
    rng = np.random.default_rng(0)
    for f in range(100):
        recs = [random_record(rng, f * 10 + i) for i in range(int(rng.integers(1, 4)))]
        path = tmp_path / f"a{f}.pgar"
        save_annotations(recs, path)
        loaded = load_annotations(path)
        assert loaded == recs
        path2 = tmp_path / f"b{f}.pgar"
        save_annotations(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()


def test_header_and_empty_instances(tmp_path):
    rec = ClipRecord("empty", 2, 32, 32, 1, [0.25, 0.75], [])
    path = tmp_path / "e.pgar"
    save_annotations([rec], path)
    assert path.read_text().splitlines()[0] == HEADER
    (back,) = load_annotations(path)
    assert back.n_instances == 0


def test_malformed_record_names_clip(tmp_path):
    path = tmp_path / "bad.pgar"
    path.write_text(HEADER + '\n{"clip_id": "clip-xyz", "T": 2}\n')
    with pytest.raises(AnnotationError, match="clip-xyz"):
        load_annotations(path)


def test_unparseable_line_has_line_number(tmp_path):
    path = tmp_path / "bad.pgar"
    path.write_text(HEADER + "\nnot json\n")
    with pytest.raises(AnnotationError, match=":2:"):
        load_annotations(path)


def test_out_of_range_coordinate(tmp_path):
    rec = random_record(np.random.default_rng(3), 0)
    while not rec.instances or rec.instances[0].boxes[0] is None:
        rec = random_record(np.random.default_rng(int(np.random.default_rng().integers(1e6))), 0)
    rec.instances[0].boxes[0] = [0.1, 0.1, 1.5, 0.2]
    with pytest.raises(AnnotationError, match="outside"):
        save_annotations([rec], tmp_path / "x.pgar")


def test_label_checked_against_class_count(tmp_path):
    rec = ClipRecord("c", 1, 32, 32, 9, [0.5], [])
    save_annotations([rec], tmp_path / "x.pgar")
    with pytest.raises(AnnotationError, match="label"):
        load_annotations(tmp_path / "x.pgar", n_classes=8)


def test_dataset_directory_round_trip(tmp_path):
    clips, recs = generate_dataset(SPEC, range(3))
    save_dataset(tmp_path / "ds", clips, recs, SPEC)
    c2, r2 = load_dataset(tmp_path / "ds")
    assert r2 == recs
    for a, b in zip(clips, c2):
        assert np.array_equal(a.frames, b.frames) and np.array_equal(a.times, b.times)


# ---- degradation ---------------------------------------------------------------------

@pytest.fixture
def rec12():
    spec = SyntheticTaskSpec(min_instances=12, max_instances=12)
    return generate_clip(spec, 4, n_frames=8)[1]


def test_identity_spec_is_noop(rec12):
    out = degrade(rec12, DegradationSpec(), seed=5)
    assert out == rec12 and out is not rec12


def test_shuffle_is_a_permutation(rec12):
    out = degrade(rec12, DegradationSpec(shuffle_actor_order=3))
    ids = [i.track_id for i in rec12.instances]
    new = [i.track_id for i in out.instances]
    assert sorted(new) == sorted(ids) and new != ids
    by_id = {i.track_id: i for i in rec12.instances}
    assert all(i == by_id[i.track_id] for i in out.instances)


def test_keep_three_of_twelve(rec12):
    a = degrade(rec12, DegradationSpec(keep_instances=3), seed=1)
    b = degrade(rec12, DegradationSpec(keep_instances=3), seed=1)
    c = degrade(rec12, DegradationSpec(keep_instances=3), seed=2)
    assert a.n_instances == 3 and a == b
    assert {i.track_id for i in a.instances} <= {i.track_id for i in rec12.instances}
    assert a != c


def test_keep_fraction(rec12):
    assert degrade(rec12, DegradationSpec(keep_instances=0.25)).n_instances == 3


def test_keep_too_many_is_an_error(rec12):
    with pytest.raises(DegradationError):
        degrade(rec12, DegradationSpec(keep_instances=13))


def test_spec_invariants():
    with pytest.raises(DegradationError):
        DegradationSpec(frame_stride=2, frame_count=4)
    with pytest.raises(DegradationError):
        DegradationSpec(keep_instances=0)
    DegradationSpec(keep_instances=0, drop_boxes=True, drop_keypoints=True)


def test_prompt_family_drops(rec12):
    out = degrade(rec12, DegradationSpec(drop_boxes=True))
    assert all(b is None for i in out.instances for b in i.boxes)
    assert all(s is not None for i in out.instances for s in i.skeletons)
    out = degrade(rec12, DegradationSpec(drop_keypoints=True))
    assert all(s is None for i in out.instances for s in i.skeletons)


def test_frame_subsampling(rec12):
    assert frame_indices(16, DegradationSpec(frame_count=4)).tolist() == [0, 5, 10, 15]
    assert frame_indices(16, DegradationSpec(frame_stride=2)).tolist() == list(range(0, 16, 2))
    out = degrade(rec12, DegradationSpec(frame_stride=2))
    assert out.T == 4 and out.times == rec12.times[::2]
    assert all(len(i.boxes) == 4 for i in out.instances)
    with pytest.raises(DegradationError):
        frame_indices(4, DegradationSpec(frame_count=5))


def test_frame_subsampling_matches_raster():
    clip, rec = generate_clip(SPEC, 8, n_frames=8)
    spec = DegradationSpec(frame_count=4)
    c2, r2 = degrade_clip(clip, spec), degrade(rec, spec)
    assert np.array_equal(c2.times, r2.times)


def test_relabel(rec12):
    ids = [i.track_id for i in rec12.instances]
    mapping = random_bijection(ids, seed=0)
    out = degrade(rec12, DegradationSpec(relabel_ids=mapping))
    assert [i.track_id for i in out.instances] == [dict(mapping)[t] for t in ids]
    with pytest.raises(DegradationError):
        degrade(rec12, DegradationSpec(relabel_ids=((ids[0], ids[1]),)))


def test_id_switch_zero_preserves_ids(rec12):
    out = degrade(rec12, DegradationSpec(id_switch_rate=0.0, shuffle_actor_order=None, keep_instances=12))
    assert [i.track_id for i in out.instances] == [i.track_id for i in rec12.instances]


def test_id_switch_swaps_tails(rec12):
    out = degrade(rec12, DegradationSpec(id_switch_rate=1.0), seed=0)
    assert [i.track_id for i in out.instances] == [i.track_id for i in rec12.instances]
    assert out != rec12
    all_boxes = sorted(map(tuple, (b for i in rec12.instances for b in i.boxes)))
    assert sorted(map(tuple, (b for i in out.instances for b in i.boxes))) == all_boxes


def test_order_delete_before_shuffle(rec12):
    """Deletion draws indices from the original order, then the survivors are shuffled."""
    both = degrade(rec12, DegradationSpec(keep_instances=5, shuffle_actor_order=9), seed=3)
    deleted = degrade(rec12, DegradationSpec(keep_instances=5), seed=3)
    shuffled = degrade(deleted, DegradationSpec(shuffle_actor_order=9), seed=3)
    assert both == shuffled


def test_order_subsample_before_id_switch(rec12):
    both = degrade(rec12, DegradationSpec(frame_stride=2, id_switch_rate=0.5), seed=4)
    sub = degrade(rec12, DegradationSpec(frame_stride=2), seed=4)
    assert both == degrade(sub, DegradationSpec(id_switch_rate=0.5), seed=4)


def test_degrade_commutes_with_save_load(rec12, tmp_path):
    spec = DegradationSpec(keep_instances=6, drop_boxes=True, shuffle_actor_order=1)
    save_annotations([rec12], tmp_path / "a.pgar")
    (loaded,) = load_annotations(tmp_path / "a.pgar")
    out = degrade(rec12, spec, seed=2)
    save_annotations([out], tmp_path / "b.pgar")
    assert load_annotations(tmp_path / "b.pgar") == [degrade(loaded, spec, seed=2)]
