import json
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsk.data import (
    ACTIVITY_CLASSES,
    BadMagicError,
    ContinuousAnnotation,
    DatasetError,
    FeatureSequence,
    InvalidHeaderError,
    MalformedAnnotationError,
    PitchFieldError,
    SegmentedAnnotation,
    SyntheticSpec,
    TruncatedFileError,
    UnknownClassError,
    UnsupportedVersionError,
    class_motifs,
    decode_features,
    duration_oracle,
    encode_features,
    generate_synthetic_continuous,
    generate_synthetic_pitch_type,
    generate_synthetic_segmented,
    generate_synthetic_speed,
    load_dataset,
    mix_seed,
    parse_continuous_annotations,
    parse_segmented_annotations,
    preset_spec,
    read_features,
    serialize_continuous_annotations,
    serialize_segmented_annotations,
    speed_duration,
    splitmix64,
    synthesize,
    synthetic_continuous_video,
    synthetic_segmented_clip,
    write_dataset,
    write_features,
)
from tsk.evaluation import clip_map, speed_error

# -- feature files ---------------------------------------------------------------------


def test_feature_roundtrip(tmp_path):
    seq = FeatureSequence(np.random.default_rng(0).normal(size=(5, 3)), fps=8.0, source="c1")
    write_features(tmp_path / "c1.tskf", seq)
    back = read_features(tmp_path / "c1.tskf")
    np.testing.assert_array_equal(back.values, seq.values.astype(np.float32))
    assert (back.T, back.D, back.fps, back.source) == (5, 3, 8.0, "c1")


def test_feature_layout_is_bit_exact():
    buf = encode_features(FeatureSequence(np.array([[1.0, -2.0]]), fps=60.0))
    assert buf == b"TSKF" + struct.pack("<IIIf", 1, 1, 2, 60.0) + struct.pack("<2f", 1.0, -2.0)


@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.5, 120), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_feature_roundtrip_is_f32_exact(T, D, fps, seed):
    seq = FeatureSequence(np.random.default_rng(seed).normal(size=(T, D)) * 100, fps=fps)
    back = decode_features(encode_features(seq))
    np.testing.assert_array_equal(back.values, seq.values.astype(np.float32))
    assert back.fps == np.float32(fps)
    assert encode_features(back) == encode_features(seq)


def test_feature_errors():
    good = encode_features(FeatureSequence(np.ones((2, 2))))
    with pytest.raises(TruncatedFileError):
        decode_features(good[:10])
    with pytest.raises(TruncatedFileError):
        decode_features(good[:-1])
    with pytest.raises(BadMagicError):
        decode_features(b"XXXX" + good[4:])
    with pytest.raises(UnsupportedVersionError):
        decode_features(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(InvalidHeaderError):
        decode_features(b"TSKF" + struct.pack("<IIIf", 1, 0, 2, 8.0))
    with pytest.raises(InvalidHeaderError):
        FeatureSequence(np.array([[np.nan]]))


# -- annotations -----------------------------------------------------------------------


def test_parse_multi_label_record():
    (rec,) = parse_segmented_annotations('[{"id": "c1", "labels": ["swing", "hit"]}]')
    z = rec.multi_hot()
    assert z.sum() == 2 and z[ACTIVITY_CLASSES.index("swing")] == 1 and z[ACTIVITY_CLASSES.index("hit")] == 1


def test_parse_pitch_record():
    (rec,) = parse_segmented_annotations('[{"id": "c3", "labels": ["ball"], "pitch_type": "fastball", "pitch_speed": 95.0}]')
    assert rec == SegmentedAnnotation("c3", ("ball",), "fastball", 95.0)


def test_parse_normalizes_spelling():
    (rec,) = parse_segmented_annotations('[{"id": "c", "labels": ["In Play", "hit-by-pitch"], "pitch_type": "Knuckle-Curve"}]')
    assert rec.labels == ("in_play", "hit_by_pitch") and rec.pitch_type == "knuckle_curve"


@pytest.mark.parametrize(
    "text,error",
    [
        ('[{"id":"c2","labels":["no_activity"],"pitch_speed":90}]', PitchFieldError),
        ('[{"id":"c2","labels":[],"pitch_type":"sinker"}]', PitchFieldError),
        ('[{"id":"c","labels":["dunk"]}]', UnknownClassError),
        ('[{"id":"c","labels":["ball"],"pitch_type":"eephus"}]', UnknownClassError),
        ('[{"id":"c","labels":["ball"],"pitch_speed":-3}]', MalformedAnnotationError),
        ('[{"id":"c","labels":["ball","ball"]}]', MalformedAnnotationError),
        ('[{"id":"c","labels":["ball","no_activity"]}]', MalformedAnnotationError),
        ('[{"id":"c","labels":"ball"}]', MalformedAnnotationError),
        ('[{"id":"c","labels":[],"extra":1}]', MalformedAnnotationError),
        ('{"id":"c"}', MalformedAnnotationError),
        ("[{", MalformedAnnotationError),
    ],
)
def test_parse_rejects(text, error):
    with pytest.raises(error):
        parse_segmented_annotations(text)


def test_no_activity_roundtrip():
    (rec,) = parse_segmented_annotations('[{"id":"n","labels":["no_activity"]}]')
    assert rec.labels == () and rec.multi_hot().sum() == 0
    assert json.loads(serialize_segmented_annotations([rec])) == [{"id": "n", "labels": ["no_activity"]}]


@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
@settings(max_examples=30, deadline=None)
def test_segmented_parse_serialize_identity(seed, n):
    spec = SyntheticSpec(seed=seed, C=8, T_range=(8, 8), motif_length=(1, 2), D=4)
    _, anns = generate_synthetic_pitch_type(SyntheticSpec(seed=seed, D=4, T_range=(8, 8), motif_length=(1, 2)), n)
    anns += generate_synthetic_segmented(spec, n)[1]
    assert parse_segmented_annotations(serialize_segmented_annotations(anns)) == anns


def test_continuous_annotations():
    ann = ContinuousAnnotation("v", 6, [("ball", 1, 2), ("swing", 2, 4)])
    z = ann.label_matrix()
    assert z.shape == (6, 8) and z[:, 0].tolist() == [0, 1, 1, 0, 0, 0] and z[:, 2].tolist() == [0, 0, 1, 1, 1, 0]
    assert parse_continuous_annotations(serialize_continuous_annotations([ann])) == [ann]
    with pytest.raises(MalformedAnnotationError):
        ContinuousAnnotation("v", 4, [("ball", 2, 4)])
    with pytest.raises(MalformedAnnotationError):
        ContinuousAnnotation("v", 4, [("ball", 3, 2)])
    with pytest.raises(UnknownClassError):
        parse_continuous_annotations('[{"id":"v","num_frames":3,"intervals":[{"label":"dunk","start":0,"end":1}]}]')
    with pytest.raises(MalformedAnnotationError):
        parse_continuous_annotations('[{"id":"v","intervals":[]}]')


# -- seeding and generators ----------------------------------------------------------------


def test_mix_seed_is_stable_and_order_sensitive():
    assert mix_seed(1, 2) == mix_seed(1, 2)
    assert mix_seed(1, 2) != mix_seed(2, 1)
    assert mix_seed(0, 0) != mix_seed(0, 1)


def test_splitmix64_reference_stream():
    # published outputs of the splitmix64 generator seeded with 1234567
    gamma, state = 0x9E3779B97F4A7C15, 1234567
    expected = [6457827717110365317, 3203168211198807973, 9817491932198370423]
    assert [splitmix64((state + k * gamma) % 2**64) for k in range(3)] == expected


def test_segmented_generator_is_deterministic():
    spec = SyntheticSpec(seed=3)
    (a, la), (b, lb) = generate_synthetic_segmented(spec, 20), generate_synthetic_segmented(spec, 20)
    assert la == lb
    assert all(encode_features(x) == encode_features(y) for x, y in zip(a, b))
    assert not np.array_equal(a[0].values, generate_synthetic_segmented(SyntheticSpec(seed=4), 1)[0][0].values)


def test_generators_are_pure_functions_of_index():
    spec = SyntheticSpec(seed=1)
    seqs, _ = generate_synthetic_segmented(spec, 10)
    with ThreadPoolExecutor(4) as pool:
        clips = list(pool.map(lambda i: synthetic_segmented_clip(spec, i)[0], reversed(range(10))))
    for i, v in enumerate(reversed(clips)):
        assert np.array_equal(v, seqs[i].values)
    cspec = SyntheticSpec(seed=1, T_range=(100, 120))
    vids, _ = generate_synthetic_continuous(cspec, 3, events=4)
    assert np.array_equal(synthetic_continuous_video(cspec, 2, 4)[0], vids[2].values)


def test_noiseless_interval_mean_oracle_is_perfect():
    spec = SyntheticSpec(seed=2, noise=0.0, decoy_prob=0.0)
    dirs, _ = class_motifs(spec)
    seqs, anns = generate_synthetic_segmented(spec, 200)
    scores = np.array([(s.values @ dirs.T).mean(axis=0) for s in seqs])
    labels = np.array([a.multi_hot(spec.class_names) for a in anns])
    assert clip_map(scores, labels) == 1.0


def test_label_marginals_match_label_prob():
    spec = SyntheticSpec(seed=11, label_prob=0.3)
    _, anns = generate_synthetic_segmented(spec, 1000)
    freq = np.mean([a.multi_hot(spec.class_names) for a in anns], axis=0)
    # pooled over classes the relative error bound is ~5 sigma; per class it is 10 points
    assert abs(freq.mean() - 0.3) <= 0.1 * 0.3
    assert np.all(np.abs(freq - 0.3) <= 0.1), freq


def test_motif_directions():
    spec = SyntheticSpec(seed=0, support=2)
    dirs, pos = class_motifs(spec)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert np.all(dirs >= 0) and np.all((dirs > 0).sum(axis=1) == 2)
    assert np.all((dirs > 0).sum(axis=0) <= 1)
    assert np.all((pos > 0.1) & (pos < 0.9))


def test_decoys_are_mirrored_and_unlabelled():
    spec = SyntheticSpec(seed=5, noise=0.0, decoy_prob=1.0, jitter=0.0, T_range=(60, 60), label_prob=0.0)
    dirs, pos = class_motifs(spec)
    v, present = synthetic_segmented_clip(spec, 0)
    assert present == []
    for c in range(spec.C):
        frames = np.flatnonzero(v @ dirs[c] > 1.0)
        assert abs(frames.mean() / 60 - (1 - pos[c])) < 0.05


def test_pitch_type_generator_is_single_label():
    seqs, anns = generate_synthetic_pitch_type(SyntheticSpec(seed=0), 30)
    assert all(a.labels == ("ball",) and a.pitch_type is not None for a in anns)
    assert len({a.pitch_type for a in anns}) > 1


def test_continuous_labels_match_planted_intervals():
    spec = SyntheticSpec(seed=4, noise=0.0, T_range=(120, 160), motif_length=(4, 10))
    dirs, _ = class_motifs(spec)
    seqs, anns = generate_synthetic_continuous(spec, 20, events=7)
    for seq, ann in zip(seqs, anns):
        assert len(ann.intervals) == 7
        z = ann.label_matrix(spec.class_names)
        np.testing.assert_array_equal(seq.values @ dirs.T > 1e-9, z > 0)
        ends = sorted((s, e) for _, s, e in ann.intervals)
        assert all(e1 < s2 for (_, e1), (s2, _) in zip(ends, ends[1:]))


def test_continuous_zero_events_and_capacity():
    spec = SyntheticSpec(seed=0, T_range=(30, 30), motif_length=(4, 8))
    seqs, anns = generate_synthetic_continuous(spec, 2, events=0)
    assert anns[0].intervals == [] and anns[0].label_matrix(spec.class_names).sum() == 0
    with pytest.raises(ValueError, match="do not fit"):
        generate_synthetic_continuous(spec, 1, events=5)


def test_event_count_mean_over_many_videos():
    spec = preset_spec("detection", 0)
    counts = [len(synthetic_continuous_video(spec, i, 7)[1]) for i in range(500)]
    assert np.mean(counts) == 7


def test_speed_duration():
    assert speed_duration(80, fps=60, K=10) == 8
    assert speed_duration(100) < speed_duration(70)
    durations = [speed_duration(m) for m in (70, 85, 100)]
    assert durations == sorted(durations, reverse=True)


def test_speed_oracle_on_noiseless_clips():
    spec = preset_spec("speed", 0)
    seqs, anns = generate_synthetic_speed(spec, 200)
    assert all(70 <= a.pitch_speed <= 100 and a.labels == ("ball",) for a in anns)
    preds = [duration_oracle(s.values, spec) for s in seqs]
    assert speed_error(preds, [a.pitch_speed for a in anns])["mae"] < 2


def test_invalid_generator_settings():
    with pytest.raises(ValueError):
        SyntheticSpec(T_range=(10, 5))
    with pytest.raises(ValueError):
        SyntheticSpec(T_range=(5, 10), motif_length=(2, 6))
    with pytest.raises(ValueError):
        SyntheticSpec(label_prob=1.5)


# -- datasets on disk ----------------------------------------------------------------------


@pytest.mark.parametrize("task", ["multilabel", "detection", "speed", "pitch_type"])
def test_dataset_roundtrip(tmp_path, task):
    spec = preset_spec(task, 1)
    seqs, anns, classes = synthesize(task, spec, 10)
    write_dataset(tmp_path, task, seqs, anns, classes)
    train, test = load_dataset(tmp_path, "train"), load_dataset(tmp_path / "manifest.json", "test")
    assert (len(train), len(test), train.task) == (7, 3, task)
    assert len(load_dataset(tmp_path)) == 10
    np.testing.assert_array_equal(test[0].features, seqs[7].values.astype(np.float32))


def test_dataset_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing.json")
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    seqs, anns, classes = synthesize("multilabel", SyntheticSpec(), 3)
    write_dataset(tmp_path, "multilabel", seqs, anns, classes)
    (tmp_path / "features" / f"{anns[1].id}.tskf").unlink()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
