import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from templatenet.edf import (
    ANNOTATION_LABEL,
    DatasetManifest,
    EdfHeader,
    EdfSignalHeader,
    ManifestEntry,
    dump_hypnogram,
    load_hypnogram,
    load_manifest_epochs,
    parse_stage,
    read_edf,
    read_manifest,
    single_channel_header,
    subject_split,
    write_edf,
    write_manifest,
)
from templatenet.errors import InconsistentLengths, Malformed, TooFewSubjects, UnknownToken
from templatenet.signal import SleepStage


def test_digital_zero_maps_near_zero():
    sh = EdfSignalHeader("EEG", 1)
    expected = (0 + 32768) * 500 / 65535 - 250
    assert sh.to_physical(np.array([0]))[0] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.00381, abs=1e-5)


def test_identity_map_when_ranges_match():
    sh = EdfSignalHeader("x", 4, phys_min=-32768, phys_max=32767)
    d = np.array([-32768, -1, 0, 32767])
    np.testing.assert_array_equal(sh.to_physical(d), d)


def test_empty_signal_set_is_header_only():
    data = write_edf(EdfHeader(0, 1.0, []), [])
    assert len(data) == 256
    header, signals = read_edf(data)
    assert header.n_signals == 0 and signals == []


def test_layout_size():
    h = EdfHeader(2, 1.0, [EdfSignalHeader("a", 3)])
    data = write_edf(h, [np.zeros(6)])
    assert len(data) == 256 * 2 + 2 * 3 * 2
    assert data[184:192] == b"512     "


def test_interleaving_and_digital_roundtrip(rng):
    h = EdfHeader(3, 2.0, [EdfSignalHeader("a", 4), EdfSignalHeader("b", 2, phys_min=-1, phys_max=1)])
    sig = [rng.integers(-32768, 32768, size=12), rng.integers(-32768, 32768, size=6)]
    data = write_edf(h, sig, digital=True)
    # second record of signal a starts after record 1 (4 + 2 samples)
    first = np.frombuffer(data[768 : 768 + 12], dtype="<i2")
    np.testing.assert_array_equal(first, np.concatenate([sig[0][:4], sig[1][:2]]))
    back_h, back = read_edf(data, digital=True)
    for a, b in zip(sig, back):
        np.testing.assert_array_equal(a, b)
    assert back_h.signals[1].label == "b"
    assert back_h.record_duration_s == 2.0


@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=40), st.integers(1, 5))
def test_roundtrip_property(values, spr):
    n_rec = math.ceil(len(values) / spr)
    values = (values * spr * n_rec)[: spr * n_rec]
    h = EdfHeader(n_rec, 1.0, [EdfSignalHeader("x", spr)])
    _, out = read_edf(write_edf(h, [np.array(values)], digital=True), digital=True)
    np.testing.assert_array_equal(out[0], values)


def test_physical_roundtrip_within_quantisation(rng):
    h = single_channel_header("EEG", 2, 100.0, record_s=1.0)
    x = rng.uniform(-200, 200, size=200)
    _, out = read_edf(write_edf(h, [x]))
    assert np.max(np.abs(out[0] - x)) <= h.signals[0].gain


def test_inconsistent_lengths():
    with pytest.raises(InconsistentLengths):
        write_edf(EdfHeader(2, 1.0, [EdfSignalHeader("a", 3)]), [np.zeros(5)])


def test_malformed_inputs():
    with pytest.raises(Malformed):
        read_edf(b"0" * 100)
    good = bytearray(write_edf(EdfHeader(1, 1.0, [EdfSignalHeader("a", 2)]), [np.zeros(2)]))
    good[236:244] = b"abc     "
    with pytest.raises(Malformed):
        read_edf(bytes(good))
    truncated = write_edf(EdfHeader(2, 1.0, [EdfSignalHeader("a", 2)]), [np.zeros(4)])[:-2]
    with pytest.raises(Malformed):
        read_edf(truncated)


def test_annotation_channel_skipped_with_warning():
    h = EdfHeader(1, 1.0, [EdfSignalHeader("EEG", 2), EdfSignalHeader(ANNOTATION_LABEL, 2)])
    data = write_edf(h, [np.zeros(2), np.zeros(2)], digital=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, signals = read_edf(data)
    assert signals[1] is None and signals[0] is not None
    assert caught


@pytest.mark.parametrize(
    "token, stage",
    [("S4", SleepStage.N3), ("S3", SleepStage.N3), ("N4", SleepStage.N3), ("REM", SleepStage.REM),
     ("S1", SleepStage.N1), ("S2", SleepStage.N2), ("W", SleepStage.W), ("MOVEMENT", None), ("UNKNOWN", None)],
)
def test_hypnogram_tokens(token, stage):
    assert parse_stage(token) == stage


def test_hypnogram_roundtrip_and_errors():
    labels = [SleepStage.W, None, SleepStage.N3]
    assert load_hypnogram(dump_hypnogram(labels)) == labels
    with pytest.raises(UnknownToken):
        load_hypnogram("W\nS9\n")


def _manifest(n):
    return DatasetManifest(tuple(ManifestEntry(f"s{i:03d}", "a.edf", "a.txt", "EEG") for i in range(n)))


@pytest.mark.parametrize("n, sizes", [(10, (8, 1, 1)), (100, (80, 10, 10)), (3, (1, 1, 1)), (15, (11, 2, 2))])
def test_split_sizes(n, sizes):
    parts = subject_split(_manifest(n), seed=0)
    assert tuple(len(p.subjects) for p in parts) == sizes


@given(st.integers(3, 60), st.integers(0, 10**6))
def test_split_partitions(n, seed):
    parts = subject_split(_manifest(n), seed)
    sets = [set(p.subjects) for p in parts]
    assert set.union(*sets) == set(_manifest(n).subjects)
    assert sum(len(s) for s in sets) == n
    again = subject_split(_manifest(n), seed)
    assert [p.subjects for p in again] == [p.subjects for p in parts]


def test_split_needs_three_subjects():
    with pytest.raises(TooFewSubjects):
        subject_split(_manifest(2), 0)


def test_manifest_roundtrip_and_loading(tmp_path, rng):
    x = rng.normal(size=2 * 3000 * 2)  # two epochs at 200 Hz
    h = single_channel_header("Fpz-Cz", 2, 200.0)
    (tmp_path / "s1.edf").write_bytes(write_edf(h, [x]))
    (tmp_path / "s1.txt").write_text("W\nMOVEMENT\n")
    m = DatasetManifest((ManifestEntry("s1", "s1.edf", "s1.txt", "Fpz-Cz"),))
    write_manifest(m, tmp_path / "manifest.csv")
    assert read_manifest(tmp_path / "manifest.csv") == m
    es = load_manifest_epochs(m, tmp_path)
    assert es.values.shape == (1, 3000)
    assert es.labels.tolist() == [0]


def test_manifest_header_checked(tmp_path):
    (tmp_path / "m.csv").write_text("subject,path\nx,y\n")
    with pytest.raises(Malformed):
        read_manifest(tmp_path / "m.csv")
