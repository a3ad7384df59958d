"""Data-aided receiver metrics: mean phase removal, effective SNR and gain over EDC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SymbolFrame


@dataclass(frozen=True)
class SnrReport:
    snr_db: float
    snr_db_x: float
    snr_db_y: float
    mean_phase_rad: float
    num_symbols: int
    # True when the error vector vanished and snr_db is the +inf sentinel.
    error_free: bool = False


def _check_pair(rx: SymbolFrame, tx: SymbolFrame) -> None:
    if len(rx) != len(tx):
        raise ValueError(f"received ({len(rx)}) and transmitted ({len(tx)}) frames differ in length")


def mean_phase(rx: np.ndarray, tx: np.ndarray) -> float:
    return float(np.angle(np.sum(rx * tx.conj())))


def mean_phase_removal(rx: SymbolFrame, tx: SymbolFrame, per_polarization: bool = False) -> SymbolFrame:
    """Derotate ``rx`` by the phase of its cross-correlation with ``tx``.

    A zero correlation leaves ``rx`` untouched.
    """
    _check_pair(rx, tx)
    r, t = rx.symbols, tx.symbols
    prod = r * t.conj()
    corr = np.sum(prod, axis=-1, keepdims=True) if per_polarization else np.full((2, 1), np.sum(prod))
    rot = np.where(np.abs(corr) > 0, np.exp(-1j * np.angle(corr)), 1.0)
    return SymbolFrame.from_array(r * rot, rx.symbol_rate)


def gain_normalize(rx: np.ndarray, tx: np.ndarray) -> np.ndarray:
    """Divide ``rx`` by the least-squares complex gain ``a`` of the model ``rx ~ a tx``.

    This removes the mean phase and any residual scaling in one go.
    """
    # same arithmetic in numerator and denominator, so rx == tx gives a == 1 exactly
    a = np.sum(rx * tx.conj()) / np.sum(tx * tx.conj()).real
    return rx / a if a != 0 else rx


def _snr_db(rx: np.ndarray, tx: np.ndarray) -> float:
    err = np.sum(np.abs(gain_normalize(rx, tx) - tx) ** 2)
    if err == 0:
        return float("inf")
    return float(10 * np.log10(np.sum(np.abs(tx) ** 2) / err))


def snr_estimate(rx: SymbolFrame, tx: SymbolFrame, edge_trim_symbols: int = 0) -> SnrReport:
    """Effective SNR ``sum|tx|^2 / sum|rx' - tx|^2`` after a joint complex-gain fit."""
    _check_pair(rx, tx)
    sl = slice(edge_trim_symbols, len(rx) - edge_trim_symbols)
    r, t = rx.symbols[:, sl], tx.symbols[:, sl]
    if r.shape[-1] == 0:
        raise ValueError("no symbols left after edge trimming")
    snr = _snr_db(r, t)
    return SnrReport(
        snr_db=snr,
        snr_db_x=_snr_db(r[0], t[0]),
        snr_db_y=_snr_db(r[1], t[1]),
        mean_phase_rad=mean_phase(r, t),
        num_symbols=r.shape[-1],
        error_free=np.isinf(snr),
    )


def snr_db(rx: np.ndarray, tx: np.ndarray) -> float:
    """Array shortcut for the joint effective SNR of ``(2, n)`` symbol arrays."""
    return _snr_db(np.asarray(rx), np.asarray(tx))


def gain_vs_edc(snr_dbp_db: float, snr_edc_db: float) -> float:
    if not (np.isfinite(snr_dbp_db) and np.isfinite(snr_edc_db)):
        raise ValueError("gain needs two finite SNR values")
    return snr_dbp_db - snr_edc_db
