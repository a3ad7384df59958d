"""MIMO intensity-to-phase filter used by the enhanced split-step receivers.

Band ``i`` rotates by ``theta_i[k] = sum_j sum_m c[i][j][m] P_j[k - m]``, where
``P_j`` is the joint (x+y) power of band ``j``.  Intra-band filters are
symmetric in ``m``; inter-band filters are not, because walk-off between
bands has a direction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft

FORMAT_TAG = "nlpr-coefficients v1"


@dataclass(frozen=True, eq=False)
class NlprCoefficients:
    """Real MIMO taps.

    ``intra`` has shape ``(n_sb, 2*k_intra + 1)`` and ``inter`` shape
    ``(n_sb, n_sb, 2*k_inter + 1)``; index ``K + m`` holds the tap at delay
    ``m``.  Diagonal entries of ``inter`` are unused and kept at zero.
    """

    intra: np.ndarray
    inter: np.ndarray

    def __post_init__(self):
        intra = np.array(self.intra, dtype=float, ndmin=2)
        n_sb = intra.shape[0]
        inter = np.array(self.inter, dtype=float)
        if inter.size == 0:
            inter = np.zeros((n_sb, n_sb, 1))
        if intra.shape[1] % 2 == 0 or inter.ndim != 3 or inter.shape[:2] != (n_sb, n_sb) or inter.shape[2] % 2 == 0:
            raise ValueError(f"inconsistent tap shapes {intra.shape} and {inter.shape}")
        if not np.all(np.isfinite(intra)) or not np.all(np.isfinite(inter)):
            raise ValueError("taps must be finite real numbers")
        if not np.array_equal(intra, intra[:, ::-1]):
            raise ValueError("intra-band taps must be symmetric in the delay index")
        if np.any(inter[np.arange(n_sb), np.arange(n_sb)]):
            raise ValueError("diagonal inter-band taps must be zero; use the intra-band taps")
        object.__setattr__(self, "intra", intra)
        object.__setattr__(self, "inter", inter)

    @classmethod
    def zeros(cls, n_sb: int, k_intra: int = 16, k_inter: int = 16) -> "NlprCoefficients":
        return cls(np.zeros((n_sb, 2 * k_intra + 1)), np.zeros((n_sb, n_sb, 2 * k_inter + 1)))

    @classmethod
    def single_tap(cls, c0: float, n_sb: int = 1) -> "NlprCoefficients":
        """Memoryless rotation ``c0 * P_i`` in every band, no coupling."""
        return cls(np.full((n_sb, 1), float(c0)), np.zeros((n_sb, n_sb, 1)))

    @property
    def num_subbands(self) -> int:
        return self.intra.shape[0]

    @property
    def k_intra(self) -> int:
        return self.intra.shape[1] // 2

    @property
    def k_inter(self) -> int:
        return self.inter.shape[2] // 2

    def taps(self, i: int, j: int) -> np.ndarray:
        """Filter from source band ``j`` to target band ``i``, delays ``-K..K``."""
        return self.intra[i] if i == j else self.inter[i, j]

    def kernel(self, length: int) -> np.ndarray:
        """Real-FFT responses ``(n_sb, n_sb, length//2 + 1)`` of the circularly placed taps."""
        if length < 2 * max(self.k_intra, self.k_inter) + 1:
            raise ValueError(f"subband block of {length} samples is shorter than the filter support")
        n_sb = self.num_subbands
        placed = np.zeros((n_sb, n_sb, length))
        for i in range(n_sb):
            for j in range(n_sb):
                taps = self.taps(i, j)
                k = taps.size // 2
                placed[i, j, np.arange(-k, k + 1) % length] = taps
        return sfft.rfft(placed, axis=-1)

    def is_zero(self) -> bool:
        return not (np.any(self.intra) or np.any(self.inter))


def nlpr_phase(power: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Phases ``(..., n_sb, M)`` from band powers ``(..., n_sb, M)`` by circular MIMO convolution."""
    m = power.shape[-1]
    spectra = sfft.rfft(power, axis=-1)
    mixed = np.einsum("ijf,...jf->...if", kernel, spectra)
    return sfft.irfft(mixed, n=m, axis=-1)


def band_power(bands: np.ndarray) -> np.ndarray:
    """Joint power ``(..., n_sb, M)`` of bands laid out as ``(..., 2, n_sb, M)``."""
    return np.sum(bands.real**2 + bands.imag**2, axis=-3)


def apply_nlpr(bands: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Rotate both polarizations of every band by its MIMO-filtered phase."""
    theta = nlpr_phase(band_power(bands), kernel)
    return bands * np.exp(1j * theta)[..., None, :, :]


# --- file format ----------------------------------------------------------------------


def save_coefficients(
    path, coeffs: NlprCoefficients, rho: float, num_steps: int, step_length_km: float
) -> None:
    """Write a self-describing text file: ``key = value`` header, then ``i j m value`` rows."""
    lines = [
        f"# {FORMAT_TAG}",
        f"n_sb = {coeffs.num_subbands}",
        f"k_intra = {coeffs.k_intra}",
        f"k_inter = {coeffs.k_inter}",
        f"rho = {rho!r}",
        f"n_st = {num_steps}",
        f"step_length_km = {step_length_km!r}",
        "# rows: target_band source_band delay tap_value",
    ]
    n_sb = coeffs.num_subbands
    for i in range(n_sb):
        for j in range(n_sb):
            taps = coeffs.taps(i, j)
            k = taps.size // 2
            for m, value in zip(range(-k, k + 1), taps):
                lines.append(f"{i} {j} {m} {value:.17e}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_coefficients(path) -> tuple[NlprCoefficients, dict]:
    """Read a file written by :func:`save_coefficients`; returns the taps and the header."""
    header: dict = {}
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            header[key] = value
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'i j m value', got {raw!r}")
        rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])))
    try:
        n_sb, k_intra, k_inter = (int(header[k]) for k in ("n_sb", "k_intra", "k_inter"))
    except KeyError as exc:
        raise ValueError(f"{path}: missing header field {exc}") from None
    intra = np.zeros((n_sb, 2 * k_intra + 1))
    inter = np.zeros((n_sb, n_sb, 2 * k_inter + 1))
    for i, j, m, value in rows:
        if i == j:
            intra[i, k_intra + m] = value
        else:
            inter[i, j, k_inter + m] = value
    meta = {
        "n_sb": n_sb,
        "k_intra": k_intra,
        "k_inter": k_inter,
        "rho": float(header["rho"]) if "rho" in header else None,
        "n_st": int(header["n_st"]) if "n_st" in header else None,
        "step_length_km": float(header["step_length_km"]) if "step_length_km" in header else None,
    }
    return NlprCoefficients(intra, inter), meta
