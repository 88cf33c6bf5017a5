"""Tests for the Nyquist PAM4 and partial-response PAM4 chains."""
import numpy as np
import pytest

from imddsim.link import EmlCurve
from imddsim.pam import (
    LevelAdjustment,
    PamMapping,
    PamRxConfig,
    PamTxConfig,
    level_adjustment_for_eml,
    pam4_demap,
    pam4_map,
    pam_receive,
    pam_transmit,
    pr_encode,
    seven_level_decision,
    adjusted_symbol_values,
)
from imddsim.link import apply_channel
from imddsim.sigproc import (
    SampleBuffer,
    average_psd,
    debruijn_sequence,
    raised_cosine_shape,
)


@pytest.fixture(scope="module")
def payload():
    return debruijn_sequence(4, 8)


@pytest.fixture(scope="module")
def payload_bits(payload):
    return pam4_demap(payload.indices)


class TestMapping:
    def test_canonical_gray_map(self):
        seq = pam4_map([0, 0, 0, 1, 1, 1, 1, 0])
        np.testing.assert_array_equal(seq.levels, [-3, -1, 1, 3])

    def test_empty_bits(self):
        assert len(pam4_map([])) == 0

    def test_round_trip_on_debruijn(self, payload, payload_bits):
        seq = pam4_map(payload_bits)
        assert np.array_equal(seq.indices, payload.indices)
        assert np.array_equal(pam4_demap(seq.indices), payload_bits)

    def test_odd_bit_count_rejected(self):
        with pytest.raises(ValueError):
            pam4_map([0, 1, 0])

    def test_non_gray_mapping_rejected(self):
        with pytest.raises(ValueError):
            PamMapping(bit_pairs=((0, 0), (1, 1), (0, 1), (1, 0)))


class TestPartialResponse:
    def test_constant_input(self):
        seq = pam4_map([1, 1] * 6)  # constant +1
        out = pr_encode(seq)
        assert out.levels[0] == -2.0  # first sample adds the (-3) initial state
        np.testing.assert_array_equal(out.levels[1:], 2.0)

    def test_alternating_extremes(self):
        indices = np.tile([0, 3], 8)
        seq = pam4_map(pam4_demap(indices))
        out = pr_encode(seq)
        np.testing.assert_array_equal(out.levels[:4], [-6, 0, 0, 0])

    def test_matches_delay_and_add_sum(self):
        rng = np.random.default_rng(0)
        indices = rng.integers(0, 4, 10_000)
        seq = pam4_map(pam4_demap(indices))
        out = pr_encode(seq)
        lv = seq.levels
        expected = lv + np.concatenate(([-3.0], lv[:-1]))
        np.testing.assert_array_equal(out.levels, expected)

    def test_seven_level_alphabet(self, payload):
        out = pr_encode(payload)
        assert out.alphabet.size == 7
        np.testing.assert_array_equal(out.alphabet, np.arange(-6.0, 7.0, 2.0))
        assert np.unique(out.indices).size == 7

    def test_dc_linearity(self, payload):
        # exact up to the two block-edge terms of the delay-and-add sum
        out = pr_encode(payload)
        edge_bound = 12.0 / len(payload)
        assert np.mean(out.levels) == pytest.approx(2.0 * np.mean(payload.levels), abs=edge_bound)

    def test_rejects_non_pam4_alphabet(self, payload):
        with pytest.raises(ValueError):
            pr_encode(pr_encode(payload))

    def test_spectrum_concentrates_at_low_frequencies(self, payload):
        symbol_rate = 56e9
        shaped_plain = raised_cosine_shape(SampleBuffer(payload.levels, symbol_rate), 0.1, 3, 2)
        shaped_pr = raised_cosine_shape(
            SampleBuffer(pr_encode(payload).levels, symbol_rate), 0.1, 3, 2
        )
        def low_fraction(sig):
            freqs, psd = average_psd(sig, nfft=4096)
            low = freqs <= symbol_rate / 4
            return np.sum(psd[low]) / np.sum(psd)
        assert low_fraction(shaped_pr) > low_fraction(shaped_plain)


class TestSevenLevelDecision:
    ALPH = np.arange(-6.0, 7.0, 2.0)

    def test_nearest(self):
        assert seven_level_decision(0.1, self.ALPH) == 3

    def test_midpoint_breaks_low(self):
        assert seven_level_decision(1.0, self.ALPH) == 3  # level 0.0, not 2.0

    def test_matches_argmin_scan(self):
        rng = np.random.default_rng(2)
        for sample in rng.uniform(-8, 8, 10_000):
            got = seven_level_decision(sample, self.ALPH)
            dists = np.abs(self.ALPH - sample)
            assert dists[got] == dists.min()


class TestLevelAdjustment:
    def test_identity_is_nominal_alphabet(self):
        np.testing.assert_array_equal(LevelAdjustment.identity(4).alphabet, [-3, -1, 1, 3])
        assert LevelAdjustment.identity(7).alphabet.size == 7

    @pytest.mark.parametrize("n_levels", [4, 7])
    def test_equidistant_optical_levels(self, n_levels):
        curve = EmlCurve()
        bias, swing = -1.25, 1.0
        adjust = level_adjustment_for_eml(curve, bias, swing, n_levels)
        drive = adjust.alphabet / np.max(np.abs(adjust.alphabet))
        powers = curve.power_mw(bias + swing * drive)
        gaps = np.diff(powers)
        assert np.max(gaps) / np.min(gaps) - 1.0 < 0.01

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError):
            LevelAdjustment((0.0, -1.0, 1.0, 2.0))


class TestTransmit:
    def test_rates_and_length(self, payload_bits):
        wave = pam_transmit(payload_bits, PamTxConfig())
        assert wave.sample_rate == pytest.approx(84e9)
        assert len(wave) == 65536 * 3 // 2

    def test_pr_has_seven_adjusted_levels_before_shaping(self, payload_bits):
        curve = EmlCurve()
        adjust = level_adjustment_for_eml(curve, -1.25, 1.0, 7)
        cfg = PamTxConfig(partial_response=True, level_adjust=adjust)
        seq = adjusted_symbol_values(payload_bits, cfg)
        assert np.unique(seq.levels).size == 7

    def test_occupied_band_within_31ghz(self, payload_bits):
        wave = pam_transmit(payload_bits, PamTxConfig(clipping_ratio_db=None))
        spec = np.abs(np.fft.rfft(wave.samples))
        freqs = np.fft.rfftfreq(len(wave), 1 / wave.sample_rate)
        edge = freqs[spec > spec.max() * 1e-2][-1]  # -20 dB amplitude-ish edge
        assert edge <= 31e9

    def test_preemphasis_raises_papr(self, payload_bits):
        from imddsim.evaluate import _trained_preemphasis

        def papr_db(wave):
            return 20 * np.log10(np.max(np.abs(wave.samples)) / wave.rms)

        plain = pam_transmit(payload_bits, PamTxConfig(clipping_ratio_db=None))
        taps = _trained_preemphasis(11, 84e9, "nyquist")
        boosted = pam_transmit(
            payload_bits, PamTxConfig(clipping_ratio_db=None, pre_emphasis_taps=taps)
        )
        assert papr_db(boosted) > papr_db(plain)

    def test_level_adjust_size_mismatch_rejected(self, payload_bits):
        cfg = PamTxConfig(partial_response=True, level_adjust=LevelAdjustment.identity(4))
        with pytest.raises(ValueError):
            pam_transmit(payload_bits, cfg)


class TestReceive:
    def test_nyquist_loopback_single_tap(self, payload, payload_bits):
        wave = pam_transmit(payload_bits, PamTxConfig())
        rx_bits = pam_receive(wave, PamRxConfig(n_ffe_taps=1), payload)
        assert np.array_equal(rx_bits, payload_bits)

    def test_pr_loopback_mlse_memory_one(self, payload, payload_bits):
        wave = pam_transmit(payload_bits, PamTxConfig(partial_response=True))
        rx_cfg = PamRxConfig(partial_response=True, mlse_memory=1, n_ffe_taps=21)
        rx_bits = pam_receive(wave, rx_cfg, payload)
        assert np.array_equal(rx_bits, payload_bits)

    def test_awgn_ber_matches_analytic_pam4(self, payload, payload_bits):
        # closed-form gray PAM4 over AWGN: BER = (3/8) erfc(sqrt(SNR/10))
        import math
        from imddsim.link import ChannelModel, NoiseSpec
        from imddsim.sigproc import resample

        snr_db = 16.2
        cfg = PamTxConfig()
        wave = pam_transmit(payload_bits, cfg)
        # symbol-instant gain of the clean waveform
        at_syms = resample(wave, 2, 1).samples[::3]
        g = float(at_syms @ payload.levels / (payload.levels @ payload.levels))
        es = np.mean(payload.levels**2)
        sigma = g * math.sqrt(es * 10 ** (-snr_db / 10.0))
        chan = ChannelModel(name="awgn", noise=NoiseSpec(sigma=sigma), seed=77)
        errors = 0
        total = 0
        for block in range(8):  # > 1e6 bits
            rx = apply_channel(wave, chan, seed=1000 + block)
            rx_bits = pam_receive(rx, PamRxConfig(n_ffe_taps=1), payload)
            errors += int(np.sum(rx_bits != payload_bits))
            total += payload_bits.size
        ber = errors / total
        analytic = 3 / 8 * math.erfc(math.sqrt(10 ** (snr_db / 10.0) / 10.0))
        assert ber == pytest.approx(analytic, rel=0.15)

    def test_pr_initial_state_matches_trellis(self):
        # the first encoded sample adds s(-1) = lowest level; the trellis
        # started from the matching state decodes it without penalty
        from imddsim.adaptive import MlseConfig, mlse_detect

        seq = pam4_map([0, 1] * 10)  # starts with level -1
        pr = pr_encode(seq)
        assert pr.levels[0] == -4.0  # -1 + (-3)
        detected = mlse_detect(pr.levels, MlseConfig.partial_response(seq.alphabet))
        assert np.array_equal(detected.indices, seq.indices)

    def test_pr_without_mlse_rejected(self):
        with pytest.raises(ValueError):
            PamRxConfig(partial_response=True, mlse_memory=None)
