"""OFDM baseband simulator: frame generation, hardware impairments, channel.

Signal model
------------
A frame is ``n_symbols_per_frame`` OFDM symbols. Each symbol maps
``n_subcarriers`` 4-QAM points through an inverse DFT and prepends the last
``cp_len`` time samples as a cyclic prefix:

    x[n] = sqrt(N) * IDFT(X)[n]          (unit average power for 4-QAM)
    symbol = [x[N-cp:], x]

Transmitter hardware is modelled by two impairments applied to the clean
frame: a quadrature skew that rotates the Q axis toward I by ``skew_deg``

    I' = I
    Q' = I*sin(theta) + Q*cos(theta)

followed by an oscillator offset that rotates sample n by
``cfo_per_sample * n`` radians. The channel convolves with a Rayleigh tap
vector (i.i.d. complex Gaussian, uniform phases, unit mean total power) and
adds white Gaussian noise scaled to the configured SNR against the faded
signal power.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputShapeError, ValidationError

BITS_PER_QAM4_SYMBOL = 2


@dataclass(frozen=True)
class OfdmConfig:
    """Shape of one OFDM frame."""

    n_subcarriers: int = 256
    cp_len: int = 64
    sample_rate_hz: float = 5_000_000.0
    modulation: str = "qam4"
    n_symbols_per_frame: int = 8

    def __post_init__(self) -> None:
        n = self.n_subcarriers
        if n < 2 or (n & (n - 1)) != 0:
            raise ValidationError(f"n_subcarriers must be a power of two, got {n}")
        if not 0 < self.cp_len < n:
            raise ValidationError(f"cp_len must be in (0, {n}), got {self.cp_len}")
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample_rate_hz must be positive")
        if self.modulation != "qam4":
            raise ValidationError(f"unsupported modulation {self.modulation!r}")
        if self.n_symbols_per_frame < 1:
            raise ValidationError("n_symbols_per_frame must be >= 1")

    @property
    def symbol_len(self) -> int:
        return self.n_subcarriers + self.cp_len

    @property
    def frame_len(self) -> int:
        return self.n_symbols_per_frame * self.symbol_len

    @property
    def bits_per_frame(self) -> int:
        return self.n_symbols_per_frame * self.n_subcarriers * BITS_PER_QAM4_SYMBOL


@dataclass(frozen=True)
class DeviceImpairment:
    """Per-device hardware fingerprint ground truth.

    ``cfo_per_sample`` is the oscillator offset expressed as the phase
    increment per sample in radians; ``skew_deg`` is the quadrature skew
    angle in degrees.
    """

    device_id: str
    cfo_per_sample: float
    skew_deg: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cfo_per_sample) and math.isfinite(self.skew_deg)):
            raise ValidationError("impairment values must be finite")
        if abs(self.cfo_per_sample) >= math.pi:
            raise ValidationError("|cfo_per_sample| must be < pi rad/sample")
        if abs(self.skew_deg) >= 45.0:
            raise ValidationError("|skew_deg| must be < 45 degrees")


@dataclass(frozen=True)
class ChannelConfig:
    """Multipath Rayleigh channel with AWGN. ``snr_db=inf`` disables noise."""

    n_paths: int = 10
    snr_db: float = 5.0

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValidationError("n_paths must be >= 1")


@dataclass(frozen=True)
class IqFrame:
    """A sequence of complex baseband samples shaped by ``config``."""

    samples: np.ndarray
    config: OfdmConfig

    def __post_init__(self) -> None:
        samples = np.ascontiguousarray(self.samples, dtype=np.complex128)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size != self.config.frame_len:
            raise InputShapeError(
                f"frame must hold {self.config.frame_len} samples, got {samples.shape}"
            )
        if not np.all(np.isfinite(samples.view(np.float64))):
            raise ValidationError("frame contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size


def qam4_map(bits: np.ndarray) -> np.ndarray:
    """Map a flat bit array to Gray-coded 4-QAM points of unit energy."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % BITS_PER_QAM4_SYMBOL:
        raise InputShapeError("bit count must be even for 4-QAM")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ValidationError("bits must be 0/1")
    pairs = bits.reshape(-1, 2)
    # Gray mapping: each bit independently selects the sign of one rail.
    return ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) / math.sqrt(2.0)


def qam4_demap(symbols: np.ndarray) -> np.ndarray:
    """Nearest-point demapping, inverse of :func:`qam4_map`."""
    symbols = np.asarray(symbols)
    bits = np.empty((symbols.size, 2), dtype=np.int64)
    bits[:, 0] = symbols.real < 0
    bits[:, 1] = symbols.imag < 0
    return bits.reshape(-1)


def modulate_symbols(freq_symbols: np.ndarray, config: OfdmConfig) -> IqFrame:
    """Build a time-domain frame from per-symbol frequency-domain rows.

    ``freq_symbols`` has shape (n_symbols_per_frame, n_subcarriers); each row
    is inverse-transformed (scaled by sqrt(N) so unit-modulus spectra give
    unit-power time signals) and gets its cyclic prefix prepended.
    """
    freq_symbols = np.asarray(freq_symbols, dtype=np.complex128)
    expected = (config.n_symbols_per_frame, config.n_subcarriers)
    if freq_symbols.shape != expected:
        raise InputShapeError(f"expected spectrum shape {expected}, got {freq_symbols.shape}")
    body = np.fft.ifft(freq_symbols, axis=1) * math.sqrt(config.n_subcarriers)
    with_cp = np.concatenate([body[:, -config.cp_len:], body], axis=1)
    return IqFrame(with_cp.reshape(-1), config)


def random_frame_bits(config: OfdmConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=config.bits_per_frame, dtype=np.int64)


def generate_frame(
    bits: np.ndarray | None,
    config: OfdmConfig,
    rng: np.random.Generator | None = None,
) -> IqFrame:
    """Modulate ``bits`` (drawn from ``rng`` when omitted) into one frame."""
    if bits is None:
        if rng is None:
            raise ValidationError("either bits or rng must be provided")
        bits = random_frame_bits(config, rng)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size != config.bits_per_frame:
        raise InputShapeError(
            f"expected {config.bits_per_frame} bits, got {bits.size}"
        )
    points = qam4_map(bits).reshape(config.n_symbols_per_frame, config.n_subcarriers)
    return modulate_symbols(points, config)


def apply_impairments(frame: IqFrame, imp: DeviceImpairment) -> IqFrame:
    """Impose a device's quadrature skew, then its oscillator rotation."""
    x = frame.samples
    theta = math.radians(imp.skew_deg)
    if theta != 0.0:
        i, q = x.real, x.imag
        x = i + 1j * (i * math.sin(theta) + q * math.cos(theta))
    if imp.cfo_per_sample != 0.0:
        n = np.arange(x.size)
        x = x * np.exp(1j * imp.cfo_per_sample * n)
    return IqFrame(x, frame.config)


def draw_taps(ch: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Rayleigh tap vector at delays 0..n_paths-1, unit mean total power."""
    scale = math.sqrt(1.0 / (2.0 * ch.n_paths))
    return scale * (rng.standard_normal(ch.n_paths) + 1j * rng.standard_normal(ch.n_paths))


def apply_multipath(frame: IqFrame, taps: np.ndarray) -> IqFrame:
    taps = np.asarray(taps, dtype=np.complex128)
    y = np.convolve(frame.samples, taps)[: len(frame)]
    return IqFrame(y, frame.config)


def apply_awgn(frame: IqFrame, snr_db: float, rng: np.random.Generator) -> IqFrame:
    """Add complex white Gaussian noise at ``snr_db`` below the frame power."""
    if math.isinf(snr_db):
        return frame
    power = float(np.mean(np.abs(frame.samples) ** 2))
    noise_var = power / (10.0 ** (snr_db / 10.0))
    scale = math.sqrt(noise_var / 2.0)
    n = len(frame)
    noise = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return IqFrame(frame.samples + noise, frame.config)


def apply_channel(frame: IqFrame, ch: ChannelConfig, rng: np.random.Generator) -> IqFrame:
    """Multipath convolution followed by AWGN; rng order is taps, then noise."""
    faded = apply_multipath(frame, draw_taps(ch, rng))
    return apply_awgn(faded, ch.snr_db, rng)


def demodulate(frame: IqFrame, config: OfdmConfig) -> np.ndarray:
    """Recover bits: per symbol drop the CP, forward DFT, nearest-point demap."""
    if len(frame) != config.frame_len:
        raise InputShapeError(
            f"frame length {len(frame)} does not match config ({config.frame_len})"
        )
    symbols = frame.samples.reshape(config.n_symbols_per_frame, config.symbol_len)
    body = symbols[:, config.cp_len:]
    spectrum = np.fft.fft(body, axis=1) / math.sqrt(config.n_subcarriers)
    return qam4_demap(spectrum.reshape(-1))


def frame_to_csv(frame: IqFrame, path: str) -> None:
    """Debug dump with columns n,i,q."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,i,q\n")
        for n, sample in enumerate(frame.samples):
            fh.write(f"{n},{float(sample.real)!r},{float(sample.imag)!r}\n")


def load_sim_config(path: str) -> tuple[OfdmConfig, ChannelConfig]:
    """Read the JSON simulation config holding both frame and channel keys."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    ofdm_keys = {"n_subcarriers", "cp_len", "sample_rate_hz", "n_symbols_per_frame"}
    chan_keys = {"n_paths", "snr_db"}
    unknown = set(raw) - ofdm_keys - chan_keys
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    ofdm = OfdmConfig(**{k: raw[k] for k in ofdm_keys if k in raw})
    chan = ChannelConfig(**{k: raw[k] for k in chan_keys if k in raw})
    return ofdm, chan
