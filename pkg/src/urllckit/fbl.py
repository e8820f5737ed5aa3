"""Finite-blocklength link layer.

Shannon capacity, the normal approximation of the achievable rate, channel
dispersion, and the decoding error probability of transmitting a fixed-size
packet in one block. All rates are bits/s, durations seconds, and SNR /
probabilities linear (never dB) inside this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .numerics import q_func_inv

__all__ = [
    "LinkConfig",
    "shannon_rate",
    "channel_dispersion",
    "na_rate",
    "decoding_error",
    "decoding_error_for_blocklength",
]

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class LinkConfig:
    """Physical-layer parameters of one link transmission.

    ``blocklength_symbols`` is always the product of transmission duration
    and bandwidth (L_B = D_t * W); it is derived at construction and cannot
    be set independently.
    """

    bandwidth_hz: float
    snr_linear: float
    frame_duration_s: float
    payload_bits: float
    blocklength_symbols: float = field(init=False)

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.snr_linear <= 0:
            raise ValueError("snr_linear must be positive")
        if self.frame_duration_s <= 0:
            raise ValueError("frame_duration_s must be positive")
        if self.payload_bits < 0:
            raise ValueError("payload_bits must be nonnegative")
        object.__setattr__(
            self, "blocklength_symbols", self.frame_duration_s * self.bandwidth_hz
        )


def shannon_rate(link: LinkConfig) -> float:
    """Shannon capacity W*log2(1 + snr) in bits/s."""
    return link.bandwidth_hz * math.log2(1.0 + link.snr_linear)


def channel_dispersion(snr_linear: float) -> float:
    """Channel dispersion V = 1 - (1 + snr)^-2, in [0, 1)."""
    if snr_linear < 0:
        raise ValueError("snr_linear must be nonnegative")
    # -expm1 keeps precision for tiny snr where 1 - (1+snr)^-2 cancels.
    return -math.expm1(-2.0 * math.log1p(snr_linear))


def na_rate(link: LinkConfig, eps_c: float) -> float:
    """Normal-approximation achievable rate in bits/s.

    (W/ln2) * [ln(1+snr) - sqrt(V/L_B) * Qinv(eps_c)]. May be negative for
    very short blocks; the raw value is returned so optimizers can detect
    infeasibility, callers clamp at zero where a physical rate is needed.
    """
    if not 0.0 < eps_c < 1.0:
        raise ValueError(f"eps_c must be in (0, 1), got {eps_c}")
    v = channel_dispersion(link.snr_linear)
    penalty = math.sqrt(v / link.blocklength_symbols) * q_func_inv(eps_c)
    return (link.bandwidth_hz / _LN2) * (math.log1p(link.snr_linear) - penalty)


def decoding_error_for_blocklength(
    blocklength_symbols,
    snr_linear,
    payload_bits,
    use_unit_dispersion: bool = False,
):
    """Decoding error probability for ``payload_bits`` in one block.

    Q( sqrt(L_B/V) * [ln(1+snr) - b*ln2/L_B] ). With ``use_unit_dispersion``
    the dispersion is replaced by V = 1 (the approximation the power-
    minimization case study builds its constraint on); the default is the
    exact AWGN dispersion. Accepts scalars or numpy arrays.
    """
    lb = np.asarray(blocklength_symbols, dtype=float)
    snr = np.asarray(snr_linear, dtype=float)
    if use_unit_dispersion:
        v = np.asarray(1.0)
    else:
        v = -np.expm1(-2.0 * np.log1p(snr))
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.sqrt(lb / v) * (np.log1p(snr) - payload_bits * _LN2 / lb)
    # snr = 0 makes V = 0; the limit is certain loss for b > 0, Q(0) for b = 0.
    if not use_unit_dispersion:
        zero_snr = np.broadcast_to(snr == 0.0, arg.shape)
        if np.any(zero_snr):
            arg = np.where(zero_snr, -np.inf if payload_bits > 0 else 0.0, arg)
    out = 0.5 * erfc(arg / math.sqrt(2.0))
    if out.ndim == 0:
        return float(out)
    return out


def decoding_error(link: LinkConfig, use_unit_dispersion: bool = False) -> float:
    """Decoding error probability of sending the link's payload in one frame."""
    return float(
        decoding_error_for_blocklength(
            link.blocklength_symbols,
            link.snr_linear,
            link.payload_bits,
            use_unit_dispersion=use_unit_dispersion,
        )
    )
