"""Physical-layer parameters and their conversion to integer slot durations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class PhyParams:
    """Frame sizes and rates; defaults are the standard simulation setup."""

    mac_header_bytes: int = 28
    phy_header_bytes: int = 24
    ack_bytes: int = 38
    payload_bytes: int = 1000
    slot_us: float = 20.0
    sifs_us: float = 10.0
    preamble_rate_bps: float = 1e6
    data_rate_bps: float = 10e6
    rts_bytes: int = 20
    cts_bytes: int = 14

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        if self.ack_bytes < self.phy_header_bytes:
            raise ValueError("ack_bytes includes the PHY header and cannot be smaller than it")

    @property
    def payload_slots_exact(self) -> float:
        """Payload airtime in (fractional) slots; the throughput normaliser."""
        return self.payload_bytes * 8 / self.data_rate_bps * 1e6 / self.slot_us

    def preamble_us(self) -> float:
        return self.phy_header_bytes * 8 / self.preamble_rate_bps * 1e6

    def data_us(self, nbytes: float) -> float:
        return nbytes * 8 / self.data_rate_bps * 1e6


@dataclass(frozen=True)
class MacTiming:
    """Protocol durations in whole slots.

    ``tau_F`` is a full-duplex exchange, ``tau_H`` a half-duplex data exchange
    answered with a busy tone, ``tau_V`` the vulnerable (header) period and
    ``tau_A`` the busy-tone-plus-ACK tail heard by a node hidden from the sender.
    ``rts``/``cts`` only matter for the half-duplex RTS/CTS baseline.
    """

    H: int
    L_p: int
    SIFS: int
    ACK: int
    sigma: int = 1
    rts: int = 1
    cts: int = 1
    payload_slots: float | None = None

    def __post_init__(self):
        for name in ("H", "L_p", "SIFS", "ACK", "sigma", "rts", "cts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least one slot")
        if self.tau_A >= self.tau_H:
            raise ValueError("tau_A must be shorter than tau_H")

    @property
    def tau_H(self) -> int:
        return self.H + self.L_p + self.SIFS + self.ACK

    @property
    def tau_F(self) -> int:
        return 2 * self.H + self.L_p + self.SIFS + self.ACK

    @property
    def tau_V(self) -> int:
        return self.H

    @property
    def tau_A(self) -> int:
        return self.tau_H - self.tau_V

    @property
    def payload(self) -> float:
        """Payload airtime used to normalise throughput (defaults to ``L_p``)."""
        return float(self.L_p) if self.payload_slots is None else self.payload_slots

    # RTS/CTS exchange, used by the half-duplex baseline
    @property
    def tau_hd(self) -> int:
        """Full RTS-CTS-DATA-ACK exchange."""
        return self.rts + self.SIFS + self.cts + self.SIFS + self.H + self.L_p + self.SIFS + self.ACK

    @property
    def tau_hd_hidden(self) -> int:
        """Part of an RTS/CTS exchange heard by a node hidden from the sender (CTS to ACK)."""
        return self.tau_hd - self.rts - self.SIFS

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(tau_F=self.tau_F, tau_H=self.tau_H, tau_V=self.tau_V, tau_A=self.tau_A,
                 tau_hd=self.tau_hd)
        return d


def _slots(us: float, slot_us: float, rounding: str) -> int:
    x = us / slot_us
    if rounding == "ceil":
        # guard against 800.0000001 style float noise
        n = math.ceil(x - 1e-9)
    elif rounding == "round":
        n = int(math.floor(x + 0.5))
    elif rounding == "floor":
        n = math.floor(x + 1e-9)
    else:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    return max(int(n), 1)


def derive_timing(phy: PhyParams | None = None, rounding: str = "ceil") -> MacTiming:
    """Quantise the frame airtimes of ``phy`` into slots.

    The PHY preamble/header always goes out at the preamble rate, the rest of
    each frame at the data rate. ``ack_bytes`` counts the PHY header.
    """
    phy = phy or PhyParams()
    s = phy.slot_us
    pre = phy.preamble_us()
    H = _slots(pre + phy.data_us(phy.mac_header_bytes), s, rounding)
    L_p = _slots(phy.data_us(phy.payload_bytes), s, rounding)
    ACK = _slots(pre + phy.data_us(phy.ack_bytes - phy.phy_header_bytes), s, rounding)
    SIFS = _slots(phy.sifs_us, s, rounding)
    rts = _slots(pre + phy.data_us(phy.rts_bytes), s, rounding)
    cts = _slots(pre + phy.data_us(phy.cts_bytes), s, rounding)
    return MacTiming(H=H, L_p=L_p, SIFS=SIFS, ACK=ACK, sigma=1, rts=rts, cts=cts,
                     payload_slots=phy.payload_slots_exact)
