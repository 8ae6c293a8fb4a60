import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chirp_reference, correlate_rows
from sardet.errors import FormatError, ParameterError, StateError
from sardet.sarsim import (AffineOffset, ChirpParams, ComplexImage, Domain, Label, LabeledCrop,
                           SceneSpec, TargetClass, TargetSpec, decode_crop, encode_crop,
                           energy_centroid, format_scene_config, generate_chirp,
                           half_chirp_shift, iw_offset_correct, parse_scene_config,
                           range_compress, read_dataset, simulate_raw, slc_labels, tile,
                           tile_origins, write_dataset)
from sardet.sarsim.tiling import evaluate_offset


def one_target(r=100, a=50, amp=1.0, L=64, h=128, w=256, extent=1, cls=TargetClass.SHIP):
    chirp = ChirpParams.from_samples(L)
    scene = SceneSpec(h, w, [TargetSpec(r, a, amp, cls)], azimuth_extent=extent)
    return simulate_raw(scene, chirp), chirp


# ---------------------------------------------------------------- chirp

def test_chirp_single_sample():
    c = generate_chirp(ChirpParams(1000.0, 0.0, 0.001))
    assert c.shape == (1,) and abs(abs(c[0]) - 1) < 1e-12


def test_chirp_length_and_unit_magnitude():
    p = ChirpParams(1000.0, 1000.0 / 0.064 * 0.8, 0.064)
    c = generate_chirp(p)
    assert c.shape == (64,)
    np.testing.assert_allclose(np.abs(c), 1.0, atol=1e-12)


def test_chirp_matches_reference_formula():
    p = ChirpParams.from_samples(37, sample_rate=2.0e6, bandwidth_fraction=0.6)
    np.testing.assert_allclose(generate_chirp(p),
                               chirp_reference(37, 2.0e6, p.chirp_rate), atol=1e-12)


def test_autocorrelation_peak_is_length():
    c = generate_chirp(ChirpParams.from_samples(64))
    # direct correlation, no FFT
    lags = [abs(sum(c[n + k] * np.conj(c[n]) for n in range(64 - k))) for k in range(64)]
    assert int(np.argmax(lags)) == 0
    assert abs(lags[0] - 64) < 1e-9


@pytest.mark.parametrize("kw", [dict(sample_rate=0, chirp_rate=1, duration=1),
                                dict(sample_rate=10, chirp_rate=1, duration=0),
                                dict(sample_rate=10, chirp_rate=1, duration=0.01),
                                dict(sample_rate=10, chirp_rate=100, duration=1)])
def test_chirp_invalid(kw):
    with pytest.raises(ParameterError):
        ChirpParams(**kw)


# ---------------------------------------------------------------- simulation

def test_empty_noiseless_scene_is_zero():
    img, labels = simulate_raw(SceneSpec(64, 96), ChirpParams.from_samples(16))
    assert labels == [] and not np.any(img.data)


def test_single_target_occupies_chirp_bins():
    (img, labels), chirp = one_target()
    rows = np.nonzero(np.any(img.data != 0, axis=1))[0]
    assert list(rows) == [50]
    cols = np.nonzero(img.data[50] != 0)[0]
    assert cols.min() == 100 and cols.max() == 163
    assert labels[0].x == 100 and labels[0].y == 50


def test_single_target_energy():
    (img, _), _ = one_target()
    assert abs(img.energy() - 64.0) < 1e-4


def test_azimuth_taper_and_clipping_flag():
    (img, labels), _ = one_target(r=10, a=2, extent=7)
    assert labels[0].truncated  # rows -1 and 0... would leave the scene
    (img, labels), _ = one_target(r=10, a=60, extent=7)
    assert not labels[0].truncated
    prof = np.abs(img.data[:, 10])
    assert int(np.argmax(prof)) == 60
    np.testing.assert_allclose(prof[57:64], prof[57:64][::-1], atol=1e-6)


def test_echo_truncated_at_range_edge_flagged():
    (img, labels), _ = one_target(r=230, w=256)
    assert labels[0].truncated
    assert np.count_nonzero(img.data[50]) == 26


def test_windmill_signature():
    (img, labels), _ = one_target(r=100, a=60, extent=3, cls=TargetClass.WINDMILL)
    # three echoes 4 bins apart over twice the azimuth extent
    assert np.count_nonzero(np.any(img.data != 0, axis=1)) == 6  # triang(6) has no zero taps
    rc = range_compress(img, ChirpParams.from_samples(64))
    peaks = np.abs(rc.data[60])
    top = sorted(np.argsort(peaks)[-3:])
    assert top == [96, 100, 104]
    assert labels[0].cls == int(TargetClass.WINDMILL)


def test_simulation_deterministic():
    scene = SceneSpec(64, 128, [TargetSpec(20, 30, 1.5)], 0.3, 0.2, 5, rng_seed=7)
    chirp = ChirpParams.from_samples(32)
    a, _ = simulate_raw(scene, chirp)
    b, _ = simulate_raw(scene, chirp)
    assert a.data.tobytes() == b.data.tobytes()


def test_noise_power():
    img, _ = simulate_raw(SceneSpec(256, 256, noise_sigma=0.5, rng_seed=1),
                          ChirpParams.from_samples(16))
    assert abs(np.mean(np.abs(img.data) ** 2) - 0.25) < 0.01


def test_labels_sorted_by_amplitude():
    targets = [TargetSpec(10, 10, 0.5), TargetSpec(50, 20, 2.0), TargetSpec(90, 30, 1.0)]
    _, labels = simulate_raw(SceneSpec(64, 256, targets), ChirpParams.from_samples(16))
    assert [lab.amplitude for lab in labels] == [2.0, 1.0, 0.5]


def test_target_outside_scene_rejected():
    with pytest.raises(ParameterError):
        simulate_raw(SceneSpec(32, 32, [TargetSpec(40, 1)]), ChirpParams.from_samples(8))


# ---------------------------------------------------------------- range compression

def test_range_compress_peak_position_and_gain():
    (img, labels), chirp = one_target()
    rc = range_compress(img, chirp)
    mag = np.abs(rc.data[50])
    assert int(np.argmax(mag)) == labels[0].x == 100
    assert abs(mag[100] - 64) < 1e-3
    ref = correlate_rows(img.data, generate_chirp(chirp))
    err = np.abs(rc.data - ref).max() / np.abs(ref).max()
    assert err < 1e-4


def test_range_compress_zero_and_linearity():
    chirp = ChirpParams.from_samples(32)
    z = range_compress(ComplexImage(np.zeros((8, 64)), Domain.RAW), chirp)
    assert not np.any(z.data)
    a, _ = simulate_raw(SceneSpec(16, 128, [TargetSpec(10, 3, 1.0)]), chirp)
    b, _ = simulate_raw(SceneSpec(16, 128, [TargetSpec(70, 9, 0.7)]), chirp)
    s = ComplexImage(a.data + b.data, Domain.RAW)
    lhs = range_compress(s, chirp).data
    rhs = range_compress(a, chirp).data + range_compress(b, chirp).data
    assert np.abs(lhs - rhs).max() / np.abs(rhs).max() < 1e-5


def test_domain_state_errors():
    (img, _), chirp = one_target()
    rc = range_compress(img, chirp)
    with pytest.raises(StateError):
        range_compress(rc, chirp)
    with pytest.raises(StateError):
        half_chirp_shift(rc, chirp)


@settings(max_examples=20, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 90), L=st.integers(1, 40), seed=st.integers(0, 99))
def test_fft_equals_time_domain(h, w, L, seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    chirp = ChirpParams.from_samples(L)
    out = range_compress(ComplexImage(data, Domain.RAW), chirp).data
    ref = correlate_rows(data.astype(np.complex64), generate_chirp(chirp))
    assert np.abs(out - ref).max() <= 1e-4 * max(np.abs(ref).max(), 1e-30)


# ---------------------------------------------------------------- half-chirp shift

def test_shift_identity_for_unit_chirp():
    (img, _), _ = one_target(L=64)
    c1 = ChirpParams.from_samples(1)
    out = half_chirp_shift(img, c1)
    assert out.domain is Domain.RAW_SHIFTED
    np.testing.assert_array_equal(out.data, img.data)


def test_shift_moves_energy_onto_label():
    (img, labels), chirp = one_target()
    out = half_chirp_shift(img, chirp)
    cols = np.nonzero(out.data[50])[0]
    assert cols.min() == 68 and cols.max() == 131
    centroid = energy_centroid(np.abs(out.data[50]) ** 2)
    assert abs(centroid - 99.5) < 1e-4
    assert abs(centroid - labels[0].x) <= 1


def test_shift_drops_only_leading_columns():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((5, 40)) + 1j * rng.standard_normal((5, 40))
    img = ComplexImage(data, Domain.RAW)
    out = half_chirp_shift(img, ChirpParams.from_samples(9))
    lead = np.sum(np.abs(img.data[:, :4]) ** 2)
    assert abs(out.energy() - (img.energy() - lead)) < 1e-3
    assert not np.any(out.data[:, 36:])


def test_shift_too_wide():
    img = ComplexImage(np.zeros((2, 8)), Domain.RAW)
    with pytest.raises(ParameterError):
        half_chirp_shift(img, ChirpParams.from_samples(16))


# ---------------------------------------------------------------- tiling

def test_tile_counts():
    img = ComplexImage(np.zeros((256, 256)), Domain.RAW_SHIFTED)
    assert len(tile(img, [], 128, 128)) == 4
    assert len(tile(img, [], 128, 64)) == 9


def test_tile_label_assignment():
    img = ComplexImage(np.zeros((256, 256)), Domain.RAW_SHIFTED)
    crops = tile(img, [Label(130.0, 10.0)], 128, 128)
    hits = [(c.origin, c.labels) for c in crops if c.labels]
    assert len(hits) == 1
    origin, labs = hits[0]
    assert origin == (0, 128) and labs[0].x == 2.0 and labs[0].y == 10.0


def test_tile_overlapping_membership_brute_force():
    img = ComplexImage(np.zeros((256, 256)), Domain.RAW_SHIFTED)
    lab = Label(100.0, 100.0)
    crops = tile(img, [lab], 128, 64)
    brute = {(r, c) for r in range(0, 129, 64) for c in range(0, 129, 64)
             if r <= lab.y < r + 128 and c <= lab.x < c + 128}
    assert {c.origin for c in crops if c.labels} == brute
    for c in crops:
        for lb in c.labels:
            assert (lb.x + c.origin[1], lb.y + c.origin[0]) == (100.0, 100.0)


def test_tile_errors():
    with pytest.raises(ParameterError):
        tile_origins(100, 100, 128, 128)
    with pytest.raises(ParameterError):
        tile_origins(256, 256, 128, 0)
    with pytest.raises(ParameterError):
        tile_origins(256, 256, 100, 50)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 4), extra=st.integers(0, 31), crop_k=st.integers(1, 2))
def test_tiling_completeness(k, extra, crop_k):
    crop = 32 * crop_k
    size = crop * k + extra
    cover = np.zeros((size, size), dtype=int)
    for r, c in tile_origins(size, size, crop, crop):
        cover[r:r + crop, c:c + crop] += 1
    interior = cover[:crop * k, :crop * k]
    assert np.all(interior == 1)


# ---------------------------------------------------------------- IW offset

def test_offset_zero_map_is_identity():
    labs = [Label(10.0, 20.0), Label(60.0, 5.0)]
    out, dropped = iw_offset_correct(labs, (0, 0), AffineOffset(), 64)
    assert out == labs and dropped == 0


def test_offset_constant():
    off = AffineOffset(row0=3, col0=-5)
    out, dropped = iw_offset_correct([Label(10.0, 10.0)], (0, 0), off, 64)
    assert (out[0].x, out[0].y) == (5.0, 13.0) and dropped == 0


def test_offset_drops_labels_leaving_crop():
    off = AffineOffset(row0=0, col0=-5)
    out, dropped = iw_offset_correct([Label(3.0, 10.0), Label(30.0, 10.0)], (0, 0), off, 64)
    assert dropped == 1 and out[0].x == 25.0


def test_offset_array_and_callable_agree():
    off = AffineOffset(2.0, -3.0, (0.01, 0.002), (-0.004, 0.006))
    arr = off.as_array(200, 300)
    for r, c in [(0, 0), (100, 7), (199, 299), (57, 150)]:
        assert evaluate_offset(off, r, c) == evaluate_offset(arr, r, c)


def test_offset_crop_constant_matches_per_label_oracle():
    # varies from crop to crop but is constant inside each 64-px crop
    off = AffineOffset(4.0, -2.0, (0.0, 0.0), (0.0, 0.0))
    piecewise = np.zeros((512, 512, 2), dtype=int)
    for r0 in range(0, 512, 64):
        for c0 in range(0, 512, 64):
            piecewise[r0:r0 + 64, c0:c0 + 64] = (r0 // 64 - 3, (c0 // 64) % 3 - 1)
    piecewise += np.array(off(0, 0))
    rng = np.random.default_rng(5)
    feats = [Label(float(x), float(y)) for x, y in rng.integers(8, 504, size=(200, 2))]
    slc = slc_labels(feats, piecewise)
    for r0 in range(0, 512, 64):
        for c0 in range(0, 512, 64):
            local = [lab.moved(-c0, -r0) for lab in slc
                     if c0 <= lab.x < c0 + 64 and r0 <= lab.y < r0 + 64]
            got, _ = iw_offset_correct(local, (r0, c0), piecewise, 64)
            # per-label exact correction: each label uses the offset at its own pixel
            exact = []
            for lab in local:
                g = lab.moved(c0, r0)
                dr, dc = piecewise[int(g.y), int(g.x)]
                m = g.moved(dc, dr).moved(-c0, -r0)
                if 0 <= m.x < 64 and 0 <= m.y < 64:
                    exact.append(m)
            assert [(lb.x, lb.y) for lb in got] == [(lb.x, lb.y) for lb in exact]


# ---------------------------------------------------------------- dataset format

def _crop(seed=0, n_labels=2, domain=Domain.RAW_SHIFTED, origin=(32, 64), scene=3):
    rng = np.random.default_rng(seed)
    data = (rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))).astype(np.complex64)
    labs = [Label(float(rng.uniform(0, 32)), float(rng.uniform(0, 32)), int(rng.integers(2)))
            for _ in range(n_labels)]
    return LabeledCrop(ComplexImage(data, domain), labs, origin, scene, 2)


def test_crop_round_trip_bit_exact():
    c = _crop()
    buf = encode_crop(c)
    back = decode_crop(buf)
    assert back.image.data.tobytes() == c.image.data.tobytes()
    assert [(lb.x, lb.y, lb.cls) for lb in back.labels] == \
        [(np.float32(lb.x), np.float32(lb.y), lb.cls) for lb in c.labels]
    assert encode_crop(back) == buf


def test_dataset_round_trip(tmp_path):
    crops = [_crop(i, origin=(0, 32 * i)) for i in range(3)]
    write_dataset(crops, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds")
    assert [encode_crop(b) for b in back] == [encode_crop(c) for c in crops]
    assert [b.origin for b in back] == [c.origin for c in crops]
    assert all(b.scene_id == 3 for b in back)


def test_empty_dataset_dir(tmp_path):
    assert read_dataset(tmp_path) == []


def test_missing_dataset_dir(tmp_path):
    with pytest.raises(FormatError):
        read_dataset(tmp_path / "nope")


def test_corrupted_magic_names_file(tmp_path):
    write_dataset([_crop()], tmp_path)
    f = next(tmp_path.glob("*.sarc"))
    raw = bytearray(f.read_bytes())
    raw[0:4] = b"XXXX"
    f.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        read_dataset(tmp_path)
    assert f.name in str(exc.value) and exc.value.offset == 0


@pytest.mark.parametrize("cut,offset", [(10, 10), (30, 30), (100, 100)])
def test_truncation_offsets(cut, offset):
    buf = encode_crop(_crop())
    with pytest.raises(FormatError) as exc:
        decode_crop(buf[:cut])
    assert exc.value.offset == offset


def test_bad_version_and_trailing_bytes():
    buf = bytearray(encode_crop(_crop()))
    buf[4] = 9
    with pytest.raises(FormatError) as exc:
        decode_crop(bytes(buf))
    assert exc.value.offset == 4
    good = encode_crop(_crop())
    with pytest.raises(FormatError) as exc:
        decode_crop(good + b"\0")
    assert exc.value.offset == len(good)


# ---------------------------------------------------------------- scene config

def test_scene_config_round_trip():
    text = ("# demo\nheight = 64\nwidth = 128\nchirp_samples = 32\nnoise_sigma = 0.1\n"
            "clutter_sigma = 0.0\nazimuth_extent = 3\nseed = 4\n"
            "targets = 10,20,1.5,ship;40,30,0.5,windmill\n")
    scene, chirp = parse_scene_config(text)
    assert chirp.length_samples == 32 and len(scene.targets) == 2
    assert scene.targets[1].cls is TargetClass.WINDMILL
    again, _ = parse_scene_config(format_scene_config(scene, chirp))
    assert again == scene


def test_scene_config_errors():
    with pytest.raises(ParameterError):
        parse_scene_config("height = 10\n")
    with pytest.raises(ParameterError):
        parse_scene_config("height = 10\nwidth = 10\nchirp_samples = 4\ncolour = red\n")
