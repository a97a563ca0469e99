import numpy as np
import pytest

from contrafp.audio import AudioBuffer, synth_track
from contrafp.errors import FormatError, InputError
from contrafp.fingerprint import (
    HOP_SAMPLES,
    SubFingerprint,
    extract,
    load_fingerprint,
    save_fingerprint,
    segment,
)
from contrafp.nn import Encoder


def silence(seconds, rate=16000):
    return AudioBuffer(np.zeros(int(seconds * rate), np.float32), rate)


class TestSegment:
    def test_ten_second_offsets(self):
        snippets = segment(silence(10.0))
        offsets = [off for off, _ in snippets]
        assert offsets == [0.0, 2.125, 4.25, 6.375]
        for _, snip in snippets:
            assert len(snip) == 40000

    def test_exact_snippet_gives_one(self):
        snippets = segment(silence(2.5))
        assert len(snippets) == 1
        assert snippets[0][0] == 0.0

    def test_three_minutes_gives_84(self):
        assert len(segment(silence(180.0))) == 84

    def test_stride_is_85_percent(self):
        assert HOP_SAMPLES == 34000
        snippets = segment(silence(12.0))
        starts = [int(round(off * 16000)) for off, _ in snippets]
        assert all(b - a == 34000 for a, b in zip(starts, starts[1:]))

    def test_too_short_rejected(self):
        with pytest.raises(InputError):
            segment(silence(2.4))

    def test_wrong_rate_rejected(self):
        with pytest.raises(InputError):
            segment(AudioBuffer(np.zeros(50000, np.float32), 22050))


class TestSubFingerprint:
    def test_serializes_to_1024_bytes(self):
        vec = np.zeros(256, np.float32)
        vec[0] = 1.0
        assert len(SubFingerprint(vec, 0.0).to_bytes()) == 1024

    def test_requires_256_floats(self):
        with pytest.raises(InputError):
            SubFingerprint(np.zeros(128, np.float32), 0.0)


@pytest.fixture(scope="module")
def track():
    return synth_track("tone-mixture", seed=5, duration_s=10.0)


class TestExtract:
    def test_count_and_offsets(self, track, small_encoder, small_params):
        fp = extract(track, small_encoder, small_params, track_ref="t5")
        assert fp.track_ref == "t5"
        assert len(fp.subs) == 4
        assert [s.offset_s for s in fp.subs] == [0.0, 2.125, 4.25, 6.375]

    def test_unit_norms(self, track, small_encoder, small_params):
        fp = extract(track, small_encoder, small_params)
        norms = np.linalg.norm(fp.matrix().astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_deterministic(self, track, small_encoder, small_params):
        a = extract(track, small_encoder, small_params).matrix()
        b = extract(track, small_encoder, small_params).matrix()
        np.testing.assert_array_equal(a, b)

    def test_chunking_matches_single_batch(self, small_encoder, small_params):
        """27 segments span two internal chunks with a padded tail; each
        sub must equal its individually computed embedding."""
        track = synth_track("chirp", seed=9, duration_s=58.0)
        fp = extract(track, small_encoder, small_params)
        assert len(fp.subs) == 27
        from contrafp.features import mel_spectrogram
        snippets = segment(track)
        for i in (0, 15, 16, 26):
            mel = mel_spectrogram(snippets[i][1])
            single = small_encoder.forward(
                small_params, mel.values[np.newaxis, np.newaxis])
            np.testing.assert_allclose(fp.subs[i].vector, single[0],
                                       rtol=1e-5, atol=1e-6)

    def test_resamples_non_16k_input(self, small_encoder, small_params):
        rng = np.random.default_rng(3)
        a = AudioBuffer(rng.uniform(-0.5, 0.5, 80000).astype(np.float32), 8000)
        fp = extract(a, small_encoder, small_params)
        assert len(fp.subs) == 4  # 10 s after resampling to 16 kHz


class TestFingerprintIo:
    def test_round_trip_bit_exact(self, tmp_path, small_encoder, small_params):
        track = synth_track("filtered-noise", seed=2, duration_s=10.0)
        fp = extract(track, small_encoder, small_params, track_ref="noise-2")
        path = tmp_path / "t.cfpf"
        save_fingerprint(path, fp)
        back = load_fingerprint(path)
        assert back.track_ref == "noise-2"
        assert [s.offset_s for s in back.subs] == [s.offset_s for s in fp.subs]
        np.testing.assert_array_equal(back.matrix(), fp.matrix())

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.cfpf").write_bytes(b"WRNG" + bytes(64))
        with pytest.raises(FormatError):
            load_fingerprint(tmp_path / "x.cfpf")

    def test_truncated(self, tmp_path, small_encoder, small_params):
        track = synth_track("tone-mixture", seed=1, duration_s=5.0)
        fp = extract(track, small_encoder, small_params)
        path = tmp_path / "t.cfpf"
        save_fingerprint(path, fp)
        data = path.read_bytes()
        (tmp_path / "cut.cfpf").write_bytes(data[:-100])
        with pytest.raises(FormatError, match="truncated"):
            load_fingerprint(tmp_path / "cut.cfpf")

    def test_trailing_bytes(self, tmp_path, small_encoder, small_params):
        track = synth_track("tone-mixture", seed=1, duration_s=5.0)
        fp = extract(track, small_encoder, small_params)
        path = tmp_path / "t.cfpf"
        save_fingerprint(path, fp)
        (tmp_path / "fat.cfpf").write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            load_fingerprint(tmp_path / "fat.cfpf")
