import struct

import numpy as np
import pytest

from contrafp.audio import (
    AudioBuffer,
    TARGET_RATE,
    load_wav,
    resample,
    save_wav,
    synth_corpus,
    synth_track,
    to_mono_16k,
)
from contrafp.errors import FormatError, InputError, UnsupportedFormatError

from conftest import make_tone


def write_wav_raw(path, fmt_tag, channels, rate, bits, payload, extra_fmt=b""):
    """Hand-assembled RIFF container for exercising the parser."""
    fmt_body = struct.pack("<HHIIHH", fmt_tag, channels, rate,
                           rate * channels * bits // 8, channels * bits // 8, bits) + extra_fmt
    chunks = b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
    if len(fmt_body) % 2:
        chunks += b"\x00"
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    data = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
    path.write_bytes(data)


class TestAudioBuffer:
    def test_rejects_2d(self):
        with pytest.raises(InputError):
            AudioBuffer(np.zeros((2, 100), np.float32), 16000)

    def test_rejects_nonfinite(self):
        x = np.zeros(10, np.float32)
        x[3] = np.nan
        with pytest.raises(InputError):
            AudioBuffer(x, 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(InputError):
            AudioBuffer(np.zeros(10, np.float32), 0)

    def test_duration(self):
        a = AudioBuffer(np.zeros(8000, np.float32), 16000)
        assert a.duration == 0.5
        assert len(a) == 8000


class TestWavIo:
    def test_round_trip_16bit(self, tmp_path):
        rng = np.random.default_rng(0)
        a = AudioBuffer(rng.uniform(-1, 1, 4000).astype(np.float32), 22050)
        save_wav(tmp_path / "x.wav", a)
        b = load_wav(tmp_path / "x.wav")
        assert b.sample_rate == 22050
        # writer scales by 32767, reader by 1/32768: half an LSB plus the
        # scale mismatch, about 4.6e-5 worst case
        np.testing.assert_allclose(b.samples, a.samples, atol=5e-5)

    def test_stereo_mixdown(self, tmp_path):
        left = np.full(100, 16384, "<i2")
        right = np.full(100, 16384, "<i2")
        payload = np.stack([left, right], axis=1).tobytes()
        write_wav_raw(tmp_path / "s.wav", 1, 2, 44100, 16, payload)
        a = load_wav(tmp_path / "s.wav")
        assert a.sample_rate == 44100
        np.testing.assert_allclose(a.samples, 0.5, atol=1e-4)

    def test_16bit_silence_length(self, tmp_path):
        write_wav_raw(tmp_path / "z.wav", 1, 1, 44100, 16, bytes(44100 * 2))
        a = load_wav(tmp_path / "z.wav")
        assert len(a) == 44100
        assert np.all(a.samples == 0.0)

    def test_8bit_midpoint_is_zero(self, tmp_path):
        write_wav_raw(tmp_path / "m.wav", 1, 1, 8000, 8, bytes([128] * 50))
        a = load_wav(tmp_path / "m.wav")
        np.testing.assert_array_equal(a.samples, np.zeros(50, np.float32))

    def test_24bit_ramp_round_trip(self, tmp_path):
        values = np.linspace(-(1 << 23), (1 << 23) - 1, 997).astype(np.int64)
        raw = bytearray()
        for v in values:
            raw += struct.pack("<i", int(v))[:3]
        write_wav_raw(tmp_path / "r.wav", 1, 1, 16000, 24, bytes(raw))
        a = load_wav(tmp_path / "r.wav")
        np.testing.assert_allclose(a.samples, values / float(1 << 23), atol=2.0 ** -23)

    def test_float32_exact(self, tmp_path):
        x = np.array([0.25, -0.5, 1.0, -1.0, 0.0], dtype="<f4")
        write_wav_raw(tmp_path / "f.wav", 3, 1, 16000, 32, x.tobytes())
        a = load_wav(tmp_path / "f.wav")
        np.testing.assert_array_equal(a.samples, x)

    def test_extensible_header(self, tmp_path):
        # WAVE_FORMAT_EXTENSIBLE wrapping plain PCM 16-bit
        extra = struct.pack("<H", 22) + struct.pack("<HI", 16, 0x3) + struct.pack("<H", 1) + bytes(14)
        payload = np.full(10, 8192, "<i2").tobytes()
        write_wav_raw(tmp_path / "e.wav", 0xFFFE, 1, 16000, 16, payload, extra_fmt=extra)
        a = load_wav(tmp_path / "e.wav")
        np.testing.assert_allclose(a.samples, 8192 / 32768.0, atol=1e-7)

    def test_odd_chunk_padding(self, tmp_path):
        # a 3-byte junk chunk before fmt must be skipped via its pad byte
        fmt_body = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
        payload = np.full(4, 100, "<i2").tobytes()
        chunks = b"junk" + struct.pack("<I", 3) + b"abc\x00"
        chunks += b"fmt " + struct.pack("<I", 16) + fmt_body
        chunks += b"data" + struct.pack("<I", len(payload)) + payload
        (tmp_path / "p.wav").write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)
        a = load_wav(tmp_path / "p.wav")
        assert len(a) == 4

    def test_not_riff(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"OggS" + bytes(100))
        with pytest.raises(FormatError):
            load_wav(tmp_path / "x.wav")

    def test_riff_not_wave(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"RIFF" + struct.pack("<I", 4) + b"AVI ")
        with pytest.raises(FormatError):
            load_wav(tmp_path / "x.wav")

    def test_missing_data_chunk(self, tmp_path):
        fmt_body = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
        chunks = b"fmt " + struct.pack("<I", 16) + fmt_body
        (tmp_path / "x.wav").write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)
        with pytest.raises(FormatError, match="no data chunk"):
            load_wav(tmp_path / "x.wav")

    def test_missing_fmt_chunk(self, tmp_path):
        chunks = b"data" + struct.pack("<I", 4) + bytes(4)
        (tmp_path / "x.wav").write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)
        with pytest.raises(FormatError, match="no fmt chunk"):
            load_wav(tmp_path / "x.wav")

    def test_unsupported_encoding(self, tmp_path):
        write_wav_raw(tmp_path / "x.wav", 1, 1, 16000, 32, bytes(8))  # 32-bit int PCM
        with pytest.raises(UnsupportedFormatError):
            load_wav(tmp_path / "x.wav")

    def test_unsupported_channels(self, tmp_path):
        write_wav_raw(tmp_path / "x.wav", 1, 3, 16000, 16, bytes(12))
        with pytest.raises(UnsupportedFormatError):
            load_wav(tmp_path / "x.wav")

    def test_truncated_payload(self, tmp_path):
        fmt_body = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
        chunks = b"fmt " + struct.pack("<I", 16) + fmt_body
        chunks += b"data" + struct.pack("<I", 1000) + bytes(10)  # declares more than present
        (tmp_path / "x.wav").write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)
        with pytest.raises(FormatError, match="truncated"):
            load_wav(tmp_path / "x.wav")


class TestResample:
    def test_identity_rate_returns_copy(self):
        x = np.arange(100, dtype=np.float32)
        y = resample(x, 16000, 16000)
        np.testing.assert_array_equal(x, y)
        y[0] = -1.0
        assert x[0] == 0.0

    @pytest.mark.parametrize("rate_out", [8000, 11025, 22050, 44100, 48000])
    def test_length_law(self, rate_out):
        x = np.zeros(16000, np.float32)
        assert len(resample(x, 16000, rate_out)) == round(16000 * rate_out / 16000)

    def test_empty_input(self):
        assert len(resample(np.zeros(0, np.float32), 16000, 8000)) == 0

    def test_rejects_bad_rates(self):
        with pytest.raises(InputError):
            resample(np.zeros(10, np.float32), 0, 8000)

    def test_dc_unity_gain(self):
        x = np.full(4000, 0.37, np.float32)
        for rate_out in (8000, 22050):
            y = resample(x, 16000, rate_out)
            core = y[100:-100]
            np.testing.assert_allclose(core, 0.37, atol=1e-4)

    @pytest.mark.parametrize("freq,rate_out", [
        (997.0, 22050), (997.0, 8000), (440.0, 48000), (3000.0, 8000),
    ])
    def test_sine_rms_error_below_1pct(self, freq, rate_out):
        """A passband tone must come through with < 1% RMS error."""
        rate_in = 16000
        n = 16000
        t_in = np.arange(n) / rate_in
        x = np.sin(2 * np.pi * freq * t_in).astype(np.float32)
        y = resample(x, rate_in, rate_out)
        t_out = np.arange(len(y)) / rate_out
        ideal = np.sin(2 * np.pi * freq * t_out)
        # ignore the kernel-length transient at both ends
        guard = 200
        err = y[guard:-guard] - ideal[guard:-guard]
        rel = np.sqrt(np.mean(err ** 2) / np.mean(ideal[guard:-guard] ** 2))
        assert rel < 0.01

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(8000).astype(np.float32) * 0.3
        y = resample(resample(x, 16000, 22050), 22050, 16000)
        assert len(y) == len(x)
        guard = 100
        err = y[guard:-guard] - x[guard:-guard]
        # wideband noise loses energy near Nyquist to the anti-alias rolloff
        assert np.sqrt(np.mean(err ** 2)) < 0.12 * np.sqrt(np.mean(x ** 2))

    def test_round_trip_bandlimited(self):
        a = make_tone(1000.0, 1.0)
        y = resample(resample(a.samples, 16000, 22050), 22050, 16000)
        guard = 200
        err = y[guard:-guard] - a.samples[guard:-guard]
        assert np.sqrt(np.mean(err ** 2)) < 0.01 * np.sqrt(np.mean(a.samples ** 2))


class TestToMono16k:
    def test_16k_passthrough_is_same_object(self):
        a = make_tone(440.0, 0.5)
        assert to_mono_16k(a) is a

    def test_idempotent(self):
        a = make_tone(440.0, 0.5, rate=48000)
        once = to_mono_16k(a)
        twice = to_mono_16k(once)
        assert once is twice

    def test_48k_sine_lands_on_440(self):
        a = to_mono_16k(make_tone(440.0, 1.0, rate=48000))
        assert a.sample_rate == TARGET_RATE
        assert len(a) == 16000
        spectrum = np.abs(np.fft.rfft(a.samples))
        peak_hz = np.argmax(spectrum) * TARGET_RATE / len(a)
        assert abs(peak_hz - 440.0) <= TARGET_RATE / len(a)

    def test_length_ratio(self):
        a = AudioBuffer(np.zeros(64000, np.float32), 32000)
        assert len(to_mono_16k(a)) == 32000


class TestSynth:
    def test_deterministic(self):
        a = synth_track("tone-mixture", 7, 10.0)
        b = synth_track("tone-mixture", 7, 10.0)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_length_and_rate(self):
        a = synth_track("chirp", 1, 10.0)
        assert a.sample_rate == TARGET_RATE
        assert len(a) == 160000

    def test_peak_normalized(self):
        for kind in ("tone-mixture", "chirp", "filtered-noise"):
            a = synth_track(kind, 5, 2.0)
            assert abs(np.max(np.abs(a.samples)) - 0.5) < 1e-3

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            synth_track("square-wave", 0, 1.0)

    def test_nonpositive_duration(self):
        with pytest.raises(InputError):
            synth_track("chirp", 0, 0.0)

    def test_corpus_size_guard(self):
        with pytest.raises(InputError):
            synth_corpus(0, 1.0, 0)

    def test_corpus_pairwise_correlation_below_half(self):
        """Tracks from distinct seeds must not look like shifted copies.

        Normalized cross-correlation peak < 0.5 for every pair, checked
        exhaustively over a 50-track corpus via FFT cross-correlation.
        """
        tracks = synth_corpus(50, 2.5, seed=0)
        n = len(tracks[0])
        nfft = 1 << int(np.ceil(np.log2(2 * n)))
        specs = np.fft.rfft(np.stack([t.samples for t in tracks]), n=nfft, axis=1)
        norms = np.array([np.linalg.norm(t.samples.astype(np.float64)) for t in tracks])
        worst = 0.0
        for i in range(len(tracks)):
            for j in range(i + 1, len(tracks)):
                xcorr = np.fft.irfft(specs[i] * np.conj(specs[j]), n=nfft)
                peak = np.max(np.abs(xcorr)) / (norms[i] * norms[j])
                worst = max(worst, peak)
        assert worst < 0.5
