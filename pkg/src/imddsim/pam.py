"""Nyquist PAM4 and partial-response PAM4 transmit/receive chains.

Gray mapping, delay-and-add partial-response encoding, modulator level
adjustment, and the full DAC-rate transmit and symbol-rate receive paths.
The adaptive blocks (FFE, MLSE, clock recovery) live in
:mod:`imddsim.adaptive`.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import adaptive, sigproc
from .adaptive import MlseConfig
from .link import EmlCurve
from .sigproc import SampleBuffer, SymbolSequence


class PayloadSyncError(RuntimeError):
    """Receiver could not align the equalized stream to the known payload."""


# ---------------------------------------------------------------------------
# mapping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PamMapping:
    """Bit-pair to PAM4 level table with the gray property."""

    bit_pairs: tuple[tuple[int, int], ...] = ((0, 0), (0, 1), (1, 1), (1, 0))
    levels: tuple[float, ...] = (-3.0, -1.0, 1.0, 3.0)

    def __post_init__(self):
        if len(self.bit_pairs) != 4 or len(self.levels) != 4:
            raise ValueError("PAM4 mapping needs exactly four entries")
        if any(b2 <= b1 for b1, b2 in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")
        for a, b in zip(self.bit_pairs, self.bit_pairs[1:]):
            if (a[0] != b[0]) + (a[1] != b[1]) != 1:
                raise ValueError("adjacent levels must differ in exactly one bit")

    @property
    def alphabet(self) -> np.ndarray:
        return np.asarray(self.levels)


GRAY_PAM4 = PamMapping()

PR_LEVELS = (-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0)


def pam4_map(bits, mapping: PamMapping = GRAY_PAM4) -> SymbolSequence:
    """Encode 2 bits per symbol; inverse of :func:`pam4_demap`."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % 2:
        raise ValueError("bit count must be even")
    pair_to_index = {pair: i for i, pair in enumerate(mapping.bit_pairs)}
    lut = np.empty(4, dtype=np.int64)
    for pair, i in pair_to_index.items():
        lut[pair[0] * 2 + pair[1]] = i
    pairs = bits.reshape(-1, 2) if bits.size else np.empty((0, 2), dtype=np.int64)
    indices = lut[pairs[:, 0] * 2 + pairs[:, 1]]
    return SymbolSequence(indices, mapping.alphabet)


def pam4_demap(indices, mapping: PamMapping = GRAY_PAM4) -> np.ndarray:
    """Symbol indices back to the bit stream."""
    indices = np.asarray(indices, dtype=np.int64)
    table = np.asarray(mapping.bit_pairs, dtype=np.int64)
    return table[indices].reshape(-1)


def pr_encode(symbols: SymbolSequence) -> SymbolSequence:
    """Delay-and-add partial-response encoding: out[k] = in[k] + in[k-1].

    The four input levels become seven output levels; the virtual symbol
    before the block start is the lowest level (the MLSE trellis starts
    from the matching state).  No pre-coder, per the MLSE-based receiver.
    """
    if symbols.alphabet.size != 4:
        raise ValueError("partial-response encoding expects a PAM4 input alphabet")
    lv = symbols.levels
    prev = np.concatenate(([symbols.alphabet[0]], lv[:-1]))
    summed = lv + prev
    step = symbols.alphabet[1] - symbols.alphabet[0]
    lo = 2 * symbols.alphabet[0]
    out_alphabet = lo + step * np.arange(7)
    indices = np.rint((summed - lo) / step).astype(np.int64)
    return SymbolSequence(indices, out_alphabet)


def seven_level_decision(sample: float, alphabet) -> int:
    """Index of the nearest level; exact midpoints resolve toward the
    lower index."""
    alphabet = np.asarray(alphabet, dtype=np.float64)
    return int(np.argmin(np.abs(alphabet - sample)))


# ---------------------------------------------------------------------------
# level adjustment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelAdjustment:
    """Adjusted symbol levels that pre-compensate the modulator curve.

    Values live on the nominal alphabet's scale; identity equals the
    equidistant alphabet itself.
    """

    target_levels: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.target_levels, self.target_levels[1:])):
            raise ValueError("adjusted levels must be monotone increasing")

    @classmethod
    def identity(cls, n_levels: int) -> "LevelAdjustment":
        return cls(tuple(2.0 * np.arange(n_levels) - (n_levels - 1)))

    @property
    def alphabet(self) -> np.ndarray:
        return np.asarray(self.target_levels)


def level_adjustment_for_eml(
    curve: EmlCurve, bias: float, swing: float, n_levels: int
) -> LevelAdjustment:
    """Derive adjusted drive levels giving equally spaced optical powers.

    Inverts the EML transfer curve at the operating point: a full-swing
    drive of the top/bottom adjusted level lands on equally spaced power
    levels after the modulator.
    """
    nominal = 2.0 * np.arange(n_levels) - (n_levels - 1)
    span = nominal[-1]
    p_lo = float(curve.power_mw(bias - swing))
    p_hi = float(curve.power_mw(bias + swing))
    targets = np.linspace(p_lo, p_hi, n_levels)
    volts = curve.drive_for_power(targets)
    levels = (volts - bias) / swing * span
    return LevelAdjustment(tuple(levels))


# ---------------------------------------------------------------------------
# transmit chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PamTxConfig:
    """Transmit chain settings; symbol_rate * oversample is the DAC rate."""

    symbol_rate: float = 56e9
    beta: float = 0.1
    oversample: Fraction = Fraction(3, 2)
    partial_response: bool = False
    level_adjust: LevelAdjustment | None = None
    pre_emphasis_taps: tuple[float, ...] | None = None
    clipping_ratio_db: float | None = 15.0
    dac_bits: int = 8
    mapping: PamMapping = GRAY_PAM4

    def __post_init__(self):
        if isinstance(self.oversample, float):
            object.__setattr__(self, "oversample", Fraction(self.oversample).limit_denominator(64))
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")

    @property
    def dac_rate(self) -> float:
        return float(self.symbol_rate * self.oversample)

    @property
    def n_levels(self) -> int:
        return 7 if self.partial_response else 4


def adjusted_symbol_values(bits, cfg: PamTxConfig) -> SymbolSequence:
    """Map (and PR-encode) the payload, then apply the level adjustment.

    These are the symbol values entering the pulse shaper.
    """
    seq = pam4_map(bits, cfg.mapping)
    if cfg.partial_response:
        seq = pr_encode(seq)
    if cfg.level_adjust is not None:
        adjust = cfg.level_adjust.alphabet
        if adjust.size != seq.alphabet.size:
            raise ValueError(
                f"level adjustment has {adjust.size} levels, chain needs {seq.alphabet.size}"
            )
        return SymbolSequence(seq.indices, adjust)
    return seq


def pam_transmit(bits, cfg: PamTxConfig) -> SampleBuffer:
    """Full transmit chain to the DAC output waveform.

    map -> optional delay-and-add -> level adjustment -> pulse shaping at
    twice the target oversampling -> take every second sample -> optional
    pre-emphasis FIR -> clip -> quantize to the DAC resolution.  The
    returned waveform runs at the DAC rate (84 GS/s for the 112 Gb/s
    configuration) and includes the quantization error.
    """
    seq = adjusted_symbol_values(bits, cfg)
    symbols = SampleBuffer(seq.levels, cfg.symbol_rate)
    double_os = 2 * cfg.oversample
    if double_os.denominator != 1:
        raise ValueError("oversample must be a multiple of 1/2")
    shaped = sigproc.raised_cosine_shape(symbols, cfg.beta, int(double_os))
    wave = SampleBuffer(shaped.samples[::2], shaped.sample_rate / 2)
    if cfg.pre_emphasis_taps is not None:
        wave = apply_fir_zero_phase(wave, np.asarray(cfg.pre_emphasis_taps))
    if cfg.clipping_ratio_db is not None:
        wave = sigproc.clip(wave, cfg.clipping_ratio_db)
    full_scale = float(np.max(np.abs(wave.samples)))
    codes = sigproc.quantize(wave, cfg.dac_bits, full_scale)
    return sigproc.dequantize(codes, cfg.dac_bits, full_scale)


def apply_fir_zero_phase(signal: SampleBuffer, taps: np.ndarray) -> SampleBuffer:
    """Apply center-referenced FIR taps cyclically with zero group delay."""
    n = len(signal)
    kernel = np.zeros(n)
    center = taps.size // 2
    for i, t in enumerate(taps):
        kernel[(i - center) % n] += t
    spec = np.fft.rfft(signal.samples) * np.fft.rfft(kernel)
    return SampleBuffer(np.fft.irfft(spec, n), signal.sample_rate)


# ---------------------------------------------------------------------------
# receive chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PamRxConfig:
    """Receive chain settings.

    `mlse_memory` None selects the hard decision; partial-response
    reception requires an MLSE (memory >= 1).
    """

    symbol_rate: float = 56e9
    n_ffe_taps: int = 41
    mu_train: float = 1e-3
    mu_dd: float = 1e-4
    train_fraction: float = 0.1
    mlse_memory: int | None = None
    partial_response: bool = False
    mapping: PamMapping = GRAY_PAM4

    def __post_init__(self):
        if self.partial_response and self.mlse_memory is None:
            raise ValueError("partial-response reception needs an MLSE (memory >= 1)")


def _alignment_lag(stream: np.ndarray, reference: np.ndarray) -> int:
    """Cyclic lag maximizing correlation; raises on a weak peak."""
    a = stream - np.mean(stream)
    b = reference - np.mean(reference)
    corr = np.fft.irfft(np.fft.rfft(a) * np.conj(np.fft.rfft(b)), a.size)
    lag = int(np.argmax(corr))
    peak = corr[lag] / (np.linalg.norm(a) * np.linalg.norm(b))
    if peak < 0.25:
        raise PayloadSyncError(f"payload correlation peak {peak:.2f} below threshold")
    return lag


def pam_receive(signal: SampleBuffer, cfg: PamRxConfig, payload: SymbolSequence) -> np.ndarray:
    """Full receive chain back to bits.

    resample to 2 samples/symbol -> Gardner phase correction -> decimate to
    the symbol rate -> align to the known payload -> LMS FFE (data-aided
    then decision-directed) -> hard decision or MLSE -> demap.

    `payload` is the transmitted PAM4 sequence (before any partial-response
    encoding).  Equalizer divergence and alignment failures raise rather
    than returning garbage bits.
    """
    two_sps = _to_two_sps(signal, cfg.symbol_rate)
    polarity = -1 if cfg.partial_response else 1
    phase = adaptive.gardner_recover(two_sps, polarity=polarity)
    corrected = sigproc.fractional_delay(two_sps, phase.offset_ui * 2.0)
    at_symbols = corrected.samples[0::2]

    reference = payload
    if cfg.partial_response:
        reference = pr_encode(payload)
    lag = _alignment_lag(at_symbols, reference.levels)
    at_symbols = np.roll(at_symbols, -lag)

    eq = adaptive.lms_equalize(
        at_symbols,
        reference,
        cfg.n_ffe_taps,
        cfg.mu_train,
        cfg.mu_dd,
        cfg.train_fraction,
    )

    if cfg.partial_response:
        trellis = MlseConfig.partial_response(cfg.mapping.alphabet, cfg.mlse_memory)
        indices = adaptive.mlse_detect(eq.output, trellis).indices
    elif cfg.mlse_memory is not None:
        h = _fit_residual_channel(eq.output, payload.levels, cfg.mlse_memory)
        trellis = MlseConfig.for_fir_channel(
            h, cfg.mapping.alphabet, cfg.mlse_memory, start_symbol=None
        )
        indices = adaptive.mlse_detect(eq.output, trellis).indices
    else:
        alphabet = cfg.mapping.alphabet
        mids = (alphabet[1:] + alphabet[:-1]) / 2.0
        indices = np.searchsorted(mids, eq.output)
    return pam4_demap(indices, cfg.mapping)


def _to_two_sps(signal: SampleBuffer, symbol_rate: float) -> SampleBuffer:
    target = 2.0 * symbol_rate
    ratio = Fraction(int(round(target)), int(round(signal.sample_rate)))
    return sigproc.resample(signal, ratio.numerator, ratio.denominator)


def _fit_residual_channel(equalized: np.ndarray, true_levels: np.ndarray, memory: int) -> np.ndarray:
    """Least-squares post-FFE response of length memory+1 (for the
    FFE+MLSE combination, which replaces the hard decision)."""
    n = equalized.size
    cols = [np.roll(true_levels, k) for k in range(memory + 1)]
    design = np.stack(cols, axis=1)
    h, *_ = np.linalg.lstsq(design, equalized, rcond=None)
    # keep the main tap dominant and normalized orientation
    return h
