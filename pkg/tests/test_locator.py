import numpy as np
import pytest

from inflect.diagnostics.locator import (FLAG_NO_GRADIENT_LAYER, GREEDY, SKI_MAXIMA, LocatorConfig, expand_band,
                                         local_maxima, locate, locate_band_greedy, locate_band_maxima, normalize,
                                         ski_scores)
from inflect.errors import DegenerateInputError, InvalidInputError

# Entropy bottoms out at layer 5; the gradient is already below a quarter of its peak at layer 0.
TWELVE_LAYER_H = [3.0, 2.9, 2.8, 2.6, 2.2, 1.0, 2.0, 2.5, 2.7, 2.8, 2.9, 3.0]
TWELVE_LAYER_G = [0.1, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.0, 0.9, 0.8, 0.7, 0.6]


def test_normalize_hand_computed():
    H_tilde, G_tilde = normalize([2.0, 1.0, 2.0], [3.0, 3.0, 1.0])
    assert H_tilde.tolist() == [0.0, 0.5, 0.0]
    assert G_tilde.tolist() == pytest.approx([0.0, 0.0, 2 / 3])


def test_normalize_constant_profile():
    H_tilde, _ = normalize([1.5, 1.5, 1.5], [1.0, 2.0, 3.0])
    assert H_tilde.tolist() == [0.0, 0.0, 0.0]


def test_normalize_all_zero_profile():
    with pytest.raises(DegenerateInputError):
        normalize([0.0, 0.0], [1.0, 2.0])


def test_ski_mixing():
    H_tilde, G_tilde = [0.0, 0.5, 0.0], [0.0, 0.0, 2 / 3]
    assert ski_scores(H_tilde, G_tilde, 1.0).tolist() == H_tilde
    assert ski_scores(H_tilde, G_tilde, 0.0).tolist() == pytest.approx(G_tilde)
    ski = ski_scores(H_tilde, G_tilde, 0.5)
    assert ski.tolist() == pytest.approx([0.0, 0.25, 1 / 3])
    assert int(np.argmax(ski)) == 2
    with pytest.raises(InvalidInputError):
        ski_scores(H_tilde, G_tilde, 1.5)


def test_maxima_band_single_peak():
    result = locate_band_maxima([0.0, 1.0, 0.0, 0.0], s=1)
    assert result.candidates == [1]
    assert result.band == [0, 1, 2]


def test_maxima_band_clipped_at_top():
    result = locate_band_maxima([0.0, 0.1, 0.2, 0.3], s=1)
    assert result.candidates == [3]
    assert result.band == [2, 3]


def test_maxima_band_without_expansion():
    result = locate_band_maxima([0.2, 0.1, 0.4, 0.3, 0.5], s=0)
    assert result.band == result.candidates == [0, 2, 4]


def test_plateau_maximum_takes_lowest_index():
    assert local_maxima([0.0, 0.7, 0.7, 0.7, 0.1]) == [1]
    assert local_maxima([0.3, 0.3, 0.3]) == [0]


def test_greedy_reproduces_published_band():
    result = locate_band_greedy(TWELVE_LAYER_H, TWELVE_LAYER_G, threshold=0.25, s=1)
    assert result.band == [0, 1, 4, 5, 6]
    assert result.candidates == [0, 5]
    assert result.flags == []
    assert result.method == GREEDY


def test_greedy_without_low_gradient_layer():
    result = locate_band_greedy([1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 0.9, 0.8], threshold=0.25, s=1)
    assert result.band == [0, 1]
    assert FLAG_NO_GRADIENT_LAYER in result.flags


def test_greedy_threshold_range():
    with pytest.raises(InvalidInputError):
        locate_band_greedy([1.0, 2.0], [1.0, 2.0], threshold=1.0)


def test_gradient_scale_does_not_move_band():
    for config in (LocatorConfig(method=GREEDY), LocatorConfig(method=SKI_MAXIMA)):
        reference = locate(TWELVE_LAYER_H, TWELVE_LAYER_G, config)
        scaled = locate(TWELVE_LAYER_H, [1e3 * g for g in TWELVE_LAYER_G], config)
        assert scaled.band == reference.band
        assert scaled.G_tilde == pytest.approx(reference.G_tilde, abs=1e-15)


def test_ties_resolve_deterministically():
    H = [1.0, 0.5, 0.5, 1.0, 0.5]
    G = [1.0, 1.0, 1.0, 1.0, 1.0]
    first = locate(H, G, LocatorConfig(method=GREEDY))
    assert first.candidates == [1]
    assert locate(H, G, LocatorConfig(method=GREEDY)).to_dict() == first.to_dict()


def test_band_stays_inside_model():
    rng = np.random.default_rng(0)
    for _ in range(50):
        L = int(rng.integers(1, 13))
        result = locate(rng.random(L) + 0.1, rng.random(L) + 0.1, LocatorConfig(method=SKI_MAXIMA, s=2))
        assert all(0 <= layer < L for layer in result.band)
        assert len(result.band) <= L
        assert result.band == expand_band(result.candidates, 2, L)


def test_entropy_minimum_lies_in_maxima_band_at_pure_entropy_weighting():
    result = locate(TWELVE_LAYER_H, TWELVE_LAYER_G, LocatorConfig(method=SKI_MAXIMA, alpha_mix=1.0))
    assert int(np.argmin(TWELVE_LAYER_H)) in result.band
    assert result.alternate_band == [0, 1, 4, 5, 6]


def test_locate_records_disagreement():
    result = locate(TWELVE_LAYER_H, TWELVE_LAYER_G, LocatorConfig(method=SKI_MAXIMA))
    record = result.to_dict()
    assert record["alternate_band"] == [0, 1, 4, 5, 6]
    assert record["bands_agree"] == (result.band == [0, 1, 4, 5, 6])
    if not record["bands_agree"]:
        assert "disagrees-with-greedy" in result.flags


def test_locator_config_validation():
    with pytest.raises(InvalidInputError):
        LocatorConfig(method="argmax")
    with pytest.raises(InvalidInputError):
        LocatorConfig(s=-1)
