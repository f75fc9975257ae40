"""Synaptic operation tallies and the energy model built on them."""

from __future__ import annotations

from dataclasses import asdict, dataclass

# 45 nm process figures common in the SNN literature (picojoules per op).
E_AC_PJ = 0.9
E_MAC_PJ = 4.6


@dataclass
class OpCounter:
    """Running tally of accumulates, multiply-accumulates and threshold comparisons.

    Counts only grow. Operations take an optional counter and add to it; callers
    merge per-call counters with ``+`` or :meth:`merge`.
    """

    ac: int = 0
    mac: int = 0
    cmp: int = 0

    def add(self, ac: int = 0, mac: int = 0, cmp: int = 0) -> None:
        if ac < 0 or mac < 0 or cmp < 0:
            raise ValueError("operation counts cannot decrease")
        self.ac += int(ac)
        self.mac += int(mac)
        self.cmp += int(cmp)

    def merge(self, other: "OpCounter") -> "OpCounter":
        self.add(other.ac, other.mac, other.cmp)
        return self

    def __add__(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(self.ac + other.ac, self.mac + other.mac, self.cmp + other.cmp)

    @property
    def total(self) -> int:
        return self.ac + self.mac + self.cmp

    def to_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


def tally(counter: OpCounter | None, ac: int = 0, mac: int = 0, cmp: int = 0) -> None:
    if counter is not None:
        counter.add(ac, mac, cmp)


@dataclass(frozen=True)
class EnergyReport:
    ac_energy: float
    mac_energy: float
    total: float
    e_ac_pj: float
    e_mac_pj: float

    def to_dict(self) -> dict:
        return asdict(self)


def energy_estimate(c: OpCounter, e_ac_pj: float = E_AC_PJ, e_mac_pj: float = E_MAC_PJ) -> EnergyReport:
    """Energy in joules: ``ac * E_AC + mac * E_MAC``. Comparisons are free."""
    ac_energy = c.ac * e_ac_pj * 1e-12
    mac_energy = c.mac * e_mac_pj * 1e-12
    return EnergyReport(
        ac_energy=ac_energy,
        mac_energy=mac_energy,
        total=ac_energy + mac_energy,
        e_ac_pj=e_ac_pj,
        e_mac_pj=e_mac_pj,
    )
