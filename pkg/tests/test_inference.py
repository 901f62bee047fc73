import pytest
from hypothesis import assume, given, strategies as st

from sensormux.inference import (
    AmbiguousBands,
    BandSet,
    EmptyWindow,
    PeriodEstimate,
    TransitionDetector,
    classify_band,
    detect_transition,
    infer_period,
)

POCO_AC = BandSet.from_mapping({"FASTEST": 2484, "GAME": 19830, "UI": 66670, "carrier": 198600})


def stamps(*runs, t0=0):
    """Timestamps for consecutive runs of (period, count)."""
    out, t = [t0], t0
    for period, n in runs:
        for _ in range(n):
            t += period
            out.append(t)
    return out


@pytest.mark.parametrize("gaps, expected", [
    ([10000, 10010, 9990], 10000),
    ([10000, 20000, 10000], 10000),
    ([25000], 25000),
])
def test_infer_period_examples(gaps, expected):
    est = infer_period(gaps)
    assert est.period_us == expected and est.window_size == len(gaps)


def test_infer_period_empty():
    with pytest.raises(EmptyWindow):
        infer_period([])


def test_classify_examples():
    assert classify_band(PeriodEstimate(19830, 3), POCO_AC) == "GAME"
    assert classify_band(198600, POCO_AC) == "carrier"
    assert classify_band(13000, POCO_AC) is None


def test_overlapping_bands_rejected():
    with pytest.raises(AmbiguousBands):
        BandSet.from_mapping({"a": 25000, "b": 24000})
    with pytest.raises(AmbiguousBands):
        BandSet((("a", 1000), ("a", 5000)))


def test_noiseless_switch_reports_first_gap_of_run():
    bands = BandSet.from_mapping({"slow": 25000, "fast": 20000})
    ts = stamps((25000, 5), (20000, 4))
    [ev] = detect_transition(ts, bands, confirm=2, stable="slow")
    assert ev.label == "fast"
    assert ev.at == 125000 + 20000
    assert ev.confirmed_at == 125000 + 40000


def test_single_outlier_ignored():
    bands = BandSet.from_mapping({"slow": 25000, "fast": 20000})
    ts = stamps((25000, 5), (20000, 1), (25000, 5))
    assert detect_transition(ts, bands, confirm=2, stable="slow") == []


def test_stream_ending_mid_confirmation():
    bands = BandSet.from_mapping({"slow": 25000, "fast": 20000})
    ts = stamps((25000, 5), (20000, 1))
    assert detect_transition(ts, bands, confirm=2, stable="slow") == []


def test_out_of_band_gaps_do_not_reset_count():
    det = TransitionDetector(POCO_AC, confirm=2, stable="carrier")
    assert det.feed(19830, 1) is None
    assert det.feed(40000, 2) is None
    ev = det.feed(19830, 3)
    assert ev.label == "GAME" and ev.at == 1


def test_confirm_must_be_positive():
    with pytest.raises(ValueError):
        TransitionDetector(POCO_AC, confirm=0)


@given(st.lists(st.integers(1000, 100000), min_size=3, max_size=15), st.data())
def test_median_robust_to_minority_corruption(clean, data):
    n_bad = data.draw(st.integers(0, (len(clean) - 1) // 2))
    idx = data.draw(st.lists(st.sampled_from(range(len(clean))), min_size=n_bad, max_size=n_bad, unique=True))
    factor = data.draw(st.floats(1.01, 50))
    dirty = [round(g * factor) if i in idx else g for i, g in enumerate(clean)]
    # a window of clean gaps of the same size, for the reference median
    est = infer_period(dirty).period_us
    assert min(clean) <= est <= max(clean)


@given(st.floats(100, 2e6))
def test_classification_sound(x):
    label = POCO_AC.classify(x)
    if label is not None:
        c = POCO_AC.center(label)
        assert abs(x - c) <= 0.1 * c


def test_centers_classify_to_themselves():
    for label, c in POCO_AC.bands:
        assert POCO_AC.classify(c) == label


@given(st.lists(st.sampled_from([2484, 19830, 66670, 198600, 13000, 40000]), max_size=60))
def test_no_repeated_transition_labels(gaps):
    t, ts = 0, [0]
    for g in gaps:
        t += g
        ts.append(t)
    evs = detect_transition(ts, POCO_AC, confirm=2)
    assert all(a.label != b.label for a, b in zip(evs, evs[1:]))
