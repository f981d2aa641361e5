"""
Choose adapter injection layers from per-layer entropy and activation-gradient profiles.

Both profiles are normalised so that low entropy and low gradient score
high, mixed with weight ``alpha_mix`` into one score per layer, and the
band is the union of ``[c - s, c + s]`` around candidate layers, clipped to
``[0, L)``. Ties always resolve to the lowest layer index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from inflect.errors import DegenerateInputError, InvalidInputError

logger = logging.getLogger(__name__)

GREEDY = "greedy"
SKI_MAXIMA = "ski-maxima"
METHODS = (GREEDY, SKI_MAXIMA)

FLAG_NO_GRADIENT_LAYER = "no-layer-below-gradient-threshold"


@dataclass(frozen=True)
class LocatorConfig:
    method: str = GREEDY
    alpha_mix: float = 0.5
    threshold: float = 0.25
    s: int = 1
    calibration_steps: int = 20

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown locator method '{self.method}', expected one of {METHODS}")
        _check_alpha(self.alpha_mix)
        _check_threshold(self.threshold)
        _check_radius(self.s)
        if self.calibration_steps < 0:
            raise InvalidInputError(f"calibration_steps must be >= 0, got {self.calibration_steps}")


@dataclass
class SkiResult:
    H_tilde: List[float]
    G_tilde: List[float]
    ski: List[float]
    alpha_mix: Optional[float]
    candidates: List[int]
    band: List[int]
    s: int
    method: str = SKI_MAXIMA
    flags: List[str] = field(default_factory=list)
    H: Optional[List[float]] = None
    G: Optional[List[float]] = None
    alternate_band: Optional[List[int]] = None

    def to_dict(self) -> dict:
        record = {
            "method": self.method,
            "H": self.H,
            "G": self.G,
            "H_tilde": self.H_tilde,
            "G_tilde": self.G_tilde,
            "ski": self.ski,
            "alpha_mix": self.alpha_mix,
            "candidates": self.candidates,
            "band": self.band,
            "s": self.s,
            "flags": self.flags,
        }
        if self.alternate_band is not None:
            record["alternate_band"] = self.alternate_band
            record["bands_agree"] = self.alternate_band == self.band
        return record


def _check_alpha(alpha_mix: float):
    if not 0.0 <= alpha_mix <= 1.0:
        raise InvalidInputError(f"alpha_mix must lie in [0, 1], got {alpha_mix}")


def _check_threshold(threshold: float):
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError(f"threshold must lie in (0, 1), got {threshold}")


def _check_radius(s: int):
    if s < 0:
        raise InvalidInputError(f"expansion radius s must be >= 0, got {s}")


def _profile(values, what: str) -> np.ndarray:
    profile = np.asarray(values, dtype=np.float64).reshape(-1)
    if profile.size == 0:
        raise InvalidInputError(f"{what} profile is empty")
    if not np.isfinite(profile).all() or (profile < 0).any():
        raise InvalidInputError(f"{what} profile must be finite and non-negative")
    return profile


def _scaled(profile: np.ndarray, what: str) -> np.ndarray:
    peak = profile.max()
    if peak <= 0:
        raise DegenerateInputError(f"{what} profile is all zero; normalisation is undefined")
    return profile / peak


def normalize(H: Sequence[float], G: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    H = _profile(H, "entropy")
    G = _profile(G, "activation-gradient")
    if H.shape != G.shape:
        raise InvalidInputError(f"profiles differ in length: {H.size} vs {G.size}")
    return 1.0 - _scaled(H, "entropy"), 1.0 - _scaled(G, "activation-gradient")


def ski_scores(H_tilde, G_tilde, alpha_mix: float) -> np.ndarray:
    _check_alpha(alpha_mix)
    H_tilde = np.asarray(H_tilde, dtype=np.float64)
    G_tilde = np.asarray(G_tilde, dtype=np.float64)
    if H_tilde.shape != G_tilde.shape:
        raise InvalidInputError(f"profiles differ in length: {H_tilde.size} vs {G_tilde.size}")
    return alpha_mix * H_tilde + (1.0 - alpha_mix) * G_tilde


def local_maxima(values: Sequence[float]) -> List[int]:
    """Lowest index of every maximal run of equal values higher than both neighbours (edges count as lower)."""
    values = np.asarray(values, dtype=np.float64)
    candidates = []
    start = 0
    while start < values.size:
        end = start
        while end + 1 < values.size and values[end + 1] == values[start]:
            end += 1
        left_lower = start == 0 or values[start - 1] < values[start]
        right_lower = end == values.size - 1 or values[end + 1] < values[start]
        if left_lower and right_lower:
            candidates.append(start)
        start = end + 1
    return candidates


def expand_band(centres: Iterable[int], s: int, num_layers: int) -> List[int]:
    _check_radius(s)
    band = set()
    for centre in centres:
        band.update(range(max(centre - s, 0), min(centre + s, num_layers - 1) + 1))
    return sorted(band)


def locate_band_maxima(ski, s: int = 1, H_tilde=None, G_tilde=None, alpha_mix: Optional[float] = None) -> SkiResult:
    ski = np.asarray(ski, dtype=np.float64).reshape(-1)
    if ski.size == 0:
        raise InvalidInputError("ski profile is empty")
    candidates = local_maxima(ski)
    return SkiResult(
        H_tilde=[] if H_tilde is None else np.asarray(H_tilde, dtype=np.float64).tolist(),
        G_tilde=[] if G_tilde is None else np.asarray(G_tilde, dtype=np.float64).tolist(),
        ski=ski.tolist(),
        alpha_mix=None if alpha_mix is None else float(alpha_mix),
        candidates=candidates,
        band=expand_band(candidates, s, ski.size),
        s=s,
        method=SKI_MAXIMA,
    )


def locate_band_greedy(H, G, threshold: float = 0.25, s: int = 1, alpha_mix: float = 0.5) -> SkiResult:
    """
    Band around the minimum-entropy layer and the first layer whose gradient
    falls below ``threshold`` times the largest layer gradient.

    If no layer falls below the threshold, the band is built from the entropy
    layer alone and the result carries a flag.
    """
    _check_threshold(threshold)
    H_tilde, G_tilde = normalize(H, G)
    H = _profile(H, "entropy")
    G = _profile(G, "activation-gradient")

    candidates = [int(np.argmin(H))]
    flags = []
    below = np.flatnonzero(_scaled(G, "activation-gradient") < threshold)
    if below.size:
        candidates.append(int(below[0]))
    else:
        flags.append(FLAG_NO_GRADIENT_LAYER)
        logger.warning(f"No layer has normalised activation gradient below {threshold}; band uses the entropy layer only")

    return SkiResult(
        H_tilde=H_tilde.tolist(),
        G_tilde=G_tilde.tolist(),
        ski=ski_scores(H_tilde, G_tilde, alpha_mix).tolist(),
        alpha_mix=alpha_mix,
        candidates=sorted(set(candidates)),
        band=expand_band(candidates, s, H.size),
        s=s,
        method=GREEDY,
        flags=flags,
        H=H.tolist(),
        G=G.tolist(),
    )


def locate(H, G, config: LocatorConfig = LocatorConfig()) -> SkiResult:
    """Run the configured method and attach profiles; the other method's band is recorded for comparison."""
    H_tilde, G_tilde = normalize(H, G)
    ski = ski_scores(H_tilde, G_tilde, config.alpha_mix)
    greedy = locate_band_greedy(H, G, config.threshold, config.s, config.alpha_mix)
    maxima = locate_band_maxima(ski, config.s, H_tilde, G_tilde, config.alpha_mix)
    maxima.H, maxima.G = greedy.H, greedy.G

    chosen = greedy if config.method == GREEDY else maxima
    other = maxima if config.method == GREEDY else greedy
    if chosen.band != other.band:
        chosen.flags.append(f"disagrees-with-{other.method}")
    logger.info(f"Locator ({chosen.method}) band {chosen.band}; {other.method} band {other.band}")
    chosen.alternate_band = other.band
    return chosen
