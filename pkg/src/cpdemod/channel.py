"""Simulated baseband channel: phase fading, transmitter I/Q imbalance, AWGN.

A frame is one coherence block.  The channel state (carrier phase, amplitude
imbalance, phase skew) is drawn once per frame and applied to every symbol in
it; the receiver sees pilots and payload symbols distorted by the same state.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

#: Upper bound of the relative I/Q gain mismatch.
AMP_IMB_MAX = 0.15
#: Upper bound of the I/Q phase skew, radians.
PHASE_IMB_MAX = 0.15 * math.pi / 180.0
#: Shape parameters of the Beta law the imbalance magnitudes are scaled from.
_BETA_A, _BETA_B = 5.0, 2.0


@dataclass(frozen=True)
class Constellation:
    """Ordered symbol alphabet; label ``i`` transmits ``points[i]``."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.complex128)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("constellation needs at least two points")
        if len(set(pts.tolist())) != pts.size:
            raise ValueError("constellation points must be distinct")
        energy = float(np.mean(np.abs(pts) ** 2))
        if abs(energy - 1.0) > 1e-9:
            raise ValueError(f"average symbol energy must be 1, got {energy!r}")

    def __len__(self) -> int:
        return int(self.points.size)


def make_qpsk() -> Constellation:
    """Unit-energy QPSK with Gray-coded labels.

    Label order walks the quadrants so that neighbouring labels differ in one
    bit: 0 -> (+,+), 1 -> (-,+), 2 -> (-,-), 3 -> (+,-).
    """
    s = 1.0 / math.sqrt(2.0)
    return Constellation(np.array([s + s * 1j, -s + s * 1j, -s - s * 1j, s - s * 1j]))


@dataclass(frozen=True)
class ChannelParams:
    """Per-frame channel state, shared by every symbol of the frame."""

    phase: float      # carrier phase offset, radians in [0, 2*pi)
    amp_imb: float    # relative I/Q gain mismatch, in [0, AMP_IMB_MAX]
    phase_imb: float  # I/Q phase skew, radians in [0, PHASE_IMB_MAX]

    def __post_init__(self) -> None:
        if not 0.0 <= self.phase < 2.0 * math.pi:
            raise ValueError(f"phase must be in [0, 2*pi), got {self.phase!r}")
        if not 0.0 <= self.amp_imb <= AMP_IMB_MAX:
            raise ValueError(f"amp_imb must be in [0, {AMP_IMB_MAX}], got {self.amp_imb!r}")
        if not 0.0 <= self.phase_imb <= PHASE_IMB_MAX:
            raise ValueError(
                f"phase_imb must be in [0, {PHASE_IMB_MAX}], got {self.phase_imb!r}"
            )


def sample_channel_params(rng: np.random.Generator) -> ChannelParams:
    """Draw one independent channel state.

    The phase is uniform over the circle; both imbalance magnitudes are their
    upper bound times a Beta(5, 2) variate (mean 5/7, so typical hardware sits
    near, but below, the worst case).  Draw order is fixed: phase, amplitude
    imbalance, phase skew.
    """
    phase = rng.uniform(0.0, 2.0 * math.pi)
    amp_imb = AMP_IMB_MAX * rng.beta(_BETA_A, _BETA_B)
    phase_imb = PHASE_IMB_MAX * rng.beta(_BETA_A, _BETA_B)
    return ChannelParams(phase, amp_imb, phase_imb)


def apply_iq_imbalance(y: complex, amp_imb: float, phase_imb: float) -> complex:
    """Distort a symbol by transmitter-side I/Q imbalance.

    The I and Q rails are mixed by a symmetric skew matrix and then scaled by
    mismatched gains::

        [i']   [1+amp_imb      0     ] [ cos d   -sin d] [i]
        [q'] = [    0      1-amp_imb ] [-sin d    cos d] [q]

    with ``d = phase_imb``.  Note the skew matrix is symmetric (both
    off-diagonal entries are ``-sin d``), so it is not a rotation.
    """
    c, s = math.cos(phase_imb), math.sin(phase_imb)
    yi, yq = y.real, y.imag
    return complex(
        (1.0 + amp_imb) * (c * yi - s * yq),
        (1.0 - amp_imb) * (-s * yi + c * yq),
    )


def transmit(
    y_label: int,
    constellation: Constellation,
    params: ChannelParams,
    snr_linear: float,
    rng: np.random.Generator,
) -> complex:
    """Send one symbol through the channel and return the received sample.

    The constellation point is I/Q-distorted, rotated by the frame's carrier
    phase, and hit by circular complex Gaussian noise of total power
    ``1 / snr_linear`` (variance ``1 / (2 * snr_linear)`` per component).
    ``snr_linear=inf`` yields a noiseless channel.
    """
    if not snr_linear > 0.0:
        raise ValueError(f"snr_linear must be positive, got {snr_linear!r}")
    distorted = apply_iq_imbalance(
        complex(constellation.points[y_label]), params.amp_imb, params.phase_imb
    )
    clean = cmath.exp(1j * params.phase) * distorted
    scale = math.sqrt(1.0 / (2.0 * snr_linear))
    noise = rng.standard_normal(2)
    return complex(clean.real + scale * noise[0], clean.imag + scale * noise[1])


@dataclass(frozen=True)
class Frame:
    """Pilot and payload samples received under one channel realization."""

    params: ChannelParams
    pilot_x: np.ndarray  # complex128, shape (n_pilots,)
    pilot_y: np.ndarray  # integer labels, shape (n_pilots,)
    test_x: np.ndarray   # complex128, shape (n_test,)
    test_y: np.ndarray   # integer labels, shape (n_test,)

    def __post_init__(self) -> None:
        if len(self.pilot_x) != len(self.pilot_y) or len(self.test_x) != len(self.test_y):
            raise ValueError("sample and label arrays must have matching lengths")

    @property
    def n_pilots(self) -> int:
        return int(len(self.pilot_y))

    @property
    def n_test(self) -> int:
        return int(len(self.test_y))


def generate_frame(
    n_pilots: int,
    n_test: int,
    snr_linear: float,
    constellation: Constellation,
    rng: np.random.Generator,
) -> Frame:
    """Simulate one frame: draw a channel state, then transmit random labels.

    Labels are i.i.d. uniform over the alphabet for pilots and payload alike.
    All symbols share the single per-frame channel state.
    """
    if n_pilots < 1 or n_test < 1:
        raise ValueError("n_pilots and n_test must both be at least 1")
    params = sample_channel_params(rng)
    labels = rng.integers(0, len(constellation), size=n_pilots + n_test)
    xs = np.array(
        [transmit(int(lab), constellation, params, snr_linear, rng) for lab in labels]
    )
    return Frame(
        params,
        xs[:n_pilots],
        labels[:n_pilots].astype(np.int64),
        xs[n_pilots:],
        labels[n_pilots:].astype(np.int64),
    )
