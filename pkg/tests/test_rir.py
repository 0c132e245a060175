from __future__ import annotations

import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from xane import SAMPLE_RATE
from xane.errors import ConfigError, XaneError
from xane.rir import RoomSpec, image_sources, load_rir, save_rir, simulate_rir


def brute_force_images(spec: RoomSpec, max_order: int):
    """Independent mirrored-lattice oracle: reflect the source across every
    wall combination directly. Axis a images: x = +/- src_a + 2 r L_a with
    reflection count |r| + |r - p| for the sign flip p in {0, 1}."""
    out = []
    span = range(-(max_order + 1), max_order + 2)
    for p in itertools.product((0, 1), repeat=3):
        for r in itertools.product(span, repeat=3):
            pos, count = [], 0
            for a in range(3):
                pos.append((1 - 2 * p[a]) * spec.src[a] + 2 * r[a] * spec.dims[a])
                count += abs(r[a] - p[a]) + abs(r[a])
            if count <= max_order:
                out.append((round(pos[0], 9), round(pos[1], 9),
                            round(pos[2], 9), count))
    return sorted(out)


@pytest.mark.parametrize("max_order", [0, 1, 2, 3])
def test_image_sources_match_bruteforce_lattice(max_order):
    # A2 oracle: 20 random rooms against the brute-force enumeration
    rng = np.random.default_rng(42 + max_order)
    for _ in range(20):
        dims = tuple(rng.uniform(2.5, 9.0, size=3))
        src = tuple(rng.uniform(0.3, np.asarray(dims) - 0.3))
        mic = tuple(rng.uniform(0.3, np.asarray(dims) - 0.3))
        spec = RoomSpec(dims, beta=0.8, src=src, mic=mic, max_order=max_order)
        positions, counts = image_sources(spec)
        got = sorted((round(p[0], 9), round(p[1], 9), round(p[2], 9), int(c))
                     for p, c in zip(positions, counts))
        assert got == brute_force_images(spec, max_order)


def test_direct_path_sample_and_amplitude():
    # A2 closed form: d = 3.43 m -> index round(3.43/343*16000) = 160,
    # amplitude 1/(4 pi 3.43)
    spec = RoomSpec(dims=(10.0, 8.0, 4.0), beta=0.0,
                    src=(2.0, 3.0, 1.5), mic=(5.43, 3.0, 1.5))
    rir = simulate_rir(spec)
    assert rir.direct_index == 160
    assert_allclose(rir.samples[160], 1.0 / (4.0 * np.pi * 3.43), rtol=1e-12)
    assert np.count_nonzero(rir.samples) == 1  # beta 0: direct path only


def test_order_zero_has_single_image_at_source():
    spec = RoomSpec(dims=(4.0, 5.0, 3.0), beta=0.5,
                    src=(1.0, 2.0, 1.0), mic=(2.0, 2.0, 1.0), max_order=0)
    positions, counts = image_sources(spec)
    assert positions.shape == (1, 3)
    assert_allclose(positions[0], [1.0, 2.0, 1.0])
    assert counts[0] == 0


def test_first_order_image_count():
    # order <= 1 in a shoebox: the source plus its 6 wall reflections
    spec = RoomSpec(dims=(4.0, 5.0, 3.0), beta=0.5,
                    src=(1.0, 2.0, 1.0), mic=(2.0, 2.0, 1.0), max_order=1)
    _, counts = image_sources(spec)
    assert len(counts) == 7
    assert np.sum(counts == 0) == 1
    assert np.sum(counts == 1) == 6


def test_image_amplitudes_follow_beta_power():
    spec = RoomSpec(dims=(4.0, 4.0, 3.0), beta=0.6, src=(1.0, 1.0, 1.0),
                    mic=(2.5, 2.0, 1.5), max_order=2)
    rir = simulate_rir(spec)
    positions, counts = image_sources(spec)
    # reconstruct independently with np.add.at semantics
    expected = np.zeros_like(rir.samples)
    mic = np.asarray(spec.mic)
    for p, c in zip(positions, counts):
        d = float(np.linalg.norm(p - mic))
        idx = int(round(d / spec.c * SAMPLE_RATE))
        if idx < len(expected):
            expected[idx] += spec.beta**c / (4.0 * np.pi * d)
    assert_allclose(rir.samples, expected, rtol=1e-12)


def test_roomspec_validation():
    good = dict(dims=(4.0, 4.0, 3.0), beta=0.5, src=(1, 1, 1), mic=(2, 2, 2))
    RoomSpec(**good)
    with pytest.raises(ConfigError):
        RoomSpec(**{**good, "beta": 1.0})
    with pytest.raises(ConfigError):
        RoomSpec(**{**good, "beta": -0.1})
    with pytest.raises(ConfigError):
        RoomSpec(**{**good, "src": (5.0, 1.0, 1.0)})  # outside the room
    with pytest.raises(ConfigError):
        RoomSpec(**{**good, "dims": (0.0, 4.0, 3.0)})


def test_coincident_src_mic_errors():
    spec = RoomSpec(dims=(4.0, 4.0, 3.0), beta=0.5,
                    src=(1.0, 1.0, 1.0), mic=(1.0, 1.0, 1.0))
    with pytest.raises(XaneError, match="coincide"):
        simulate_rir(spec)


def test_simulate_is_deterministic():
    spec = dict(dims=(5.0, 4.0, 3.0), beta=0.85, src=(1.2, 1.1, 1.4),
                mic=(3.3, 2.2, 1.6))
    a = simulate_rir(RoomSpec(**spec))
    b = simulate_rir(RoomSpec(**spec))
    assert np.array_equal(a.samples, b.samples)


def test_save_load_roundtrip(tmp_path):
    spec = RoomSpec(dims=(5.0, 4.0, 3.0), beta=0.7,
                    src=(1.0, 1.0, 1.0), mic=(3.0, 2.0, 1.5))
    rir = simulate_rir(spec)
    save_rir(rir, tmp_path / "r.wav")
    back = load_rir(tmp_path / "r.wav")
    assert np.array_equal(back.samples, rir.samples)  # f32 cast applied in place
    assert back.spec.dims == spec.dims
    assert back.spec.beta == spec.beta
    assert back.direct_index == rir.direct_index


def test_default_max_order_rule():
    # default order: smallest n with beta^n < 1e-6, capped at 40
    assert RoomSpec((4, 4, 3), 0.5, (1, 1, 1), (2, 2, 2)).max_order == 20
    assert RoomSpec((4, 4, 3), 0.9, (1, 1, 1), (2, 2, 2)).max_order == 40
    assert RoomSpec((4, 4, 3), 0.0, (1, 1, 1), (2, 2, 2)).max_order == 0
