import math

import numpy as np
import pytest

from reconlab.trajectory import (
    ALL_PATTERNS, Pattern, TrajectorySpec, spoke_angles, spoke_coordinates, tiny_golden_angle,
)

TAU = (1 + math.sqrt(5)) / 2


def test_tiny_golden_angle_values():
    assert tiny_golden_angle(7) == pytest.approx(23.628, abs=5e-4)
    assert tiny_golden_angle(1) == pytest.approx(180 / TAU)
    assert tiny_golden_angle(1) == pytest.approx(111.246, abs=5e-4)
    assert tiny_golden_angle(2) == pytest.approx(68.754, abs=5e-4)
    with pytest.raises(ValueError):
        tiny_golden_angle(0)


def test_spec_defaults_and_validation():
    s = TrajectorySpec()
    assert s.acceleration == 13.0
    assert s.spokes_per_frame == 14 and s.full_spokes == 182 and s.tga_index == 7
    with pytest.raises(ValueError):
        TrajectorySpec(spokes_per_frame=0)
    with pytest.raises(ValueError):
        TrajectorySpec(spokes_per_frame=200)
    assert TrajectorySpec.from_dict(s.to_dict()) == s


def test_reg_no_rot_angles():
    a = spoke_angles(TrajectorySpec(pattern=Pattern.REG_NO_ROT), 5)
    assert np.allclose(a, np.arange(14) * 180 / 14)
    assert a[1] == pytest.approx(12.857, abs=1e-3)


def test_reg_rot_frame_step():
    s = TrajectorySpec(pattern=Pattern.REG_ROT)
    assert spoke_angles(s, 1)[0] == pytest.approx(180 / (14 * 13), abs=1e-12)
    assert spoke_angles(s, 1)[0] == pytest.approx(0.989, abs=5e-4)


def test_reg_rot_frames_tile_uniform_grid():
    s = TrajectorySpec(pattern=Pattern.REG_ROT)
    union = np.sort(np.concatenate([spoke_angles(s, f) for f in range(13)]))
    assert union.size == 182
    gaps = np.diff(np.append(union, union[0] + 180))
    assert np.max(np.abs(gaps - 180 / 182)) < 1e-9


def test_tga_rot_matches_no_rot_at_frame0_and_global_counter():
    rot, still = TrajectorySpec(pattern=Pattern.TGA_ROT), TrajectorySpec(pattern=Pattern.TGA_NO_ROT)
    assert np.array_equal(spoke_angles(rot, 0), spoke_angles(still, 0))
    assert spoke_angles(rot, 1)[0] == pytest.approx(150.79, abs=5e-3)


def test_non_rotating_patterns_static():
    for p in (Pattern.REG_NO_ROT, Pattern.TGA_NO_ROT):
        s = TrajectorySpec(pattern=p)
        ref = spoke_angles(s, 0)
        for f in (1, 7, 40):
            assert np.array_equal(spoke_angles(s, f), ref)


def test_rotating_patterns_consecutive_frames_disjoint():
    for p in (Pattern.REG_ROT, Pattern.TGA_ROT):
        s = TrajectorySpec(pattern=p)
        window = np.concatenate([spoke_angles(s, f) for f in range(13)])
        d = np.abs(window[:, None] - window[None, :])
        d = np.minimum(d, 180 - d)
        np.fill_diagonal(d, np.inf)
        assert d.min() > 1e-9


@pytest.mark.parametrize("pattern", ALL_PATTERNS)
def test_angles_and_coordinates_in_range(pattern):
    s = TrajectorySpec(pattern=pattern, readout_len=64)
    for f in (0, 3, 99):
        ss = spoke_coordinates(s, f)
        assert ss.angles.shape == (14,)
        assert np.all((ss.angles >= 0) & (ss.angles < 180))
        assert np.all(ss.radius <= 0.5 + 1e-12)


def test_axis_aligned_spoke():
    s = TrajectorySpec(pattern=Pattern.REG_NO_ROT, spokes_per_frame=2, full_spokes=2,
                       readout_len=3)
    ss = spoke_coordinates(s, 0)
    assert np.allclose(ss.kx[0], [-0.5, 0, 0.5]) and np.allclose(ss.ky[0], 0)
    assert np.allclose([ss.kx[1, 1], ss.ky[1, 1]], 0)


def test_default_sample_count():
    assert spoke_coordinates(TrajectorySpec(), 0).n_samples == 2688


def test_phase_offset_and_oversampling():
    s = TrajectorySpec(pattern=Pattern.REG_NO_ROT, phase_offset=180 / 28)
    assert spoke_angles(s, 0)[0] == pytest.approx(180 / 28)
    assert TrajectorySpec(readout_len=96, readout_oversampling=2).samples_per_spoke == 192
    with pytest.raises(ValueError):
        TrajectorySpec(readout_oversampling=3)


def test_with_acceleration_rounds_spokes():
    s = TrajectorySpec()
    assert [s.with_acceleration(a).spokes_per_frame for a in range(10, 17)] == \
        [18, 17, 15, 14, 13, 12, 11]


def test_pattern_lookup_case_insensitive():
    assert Pattern("tga_rot") is Pattern.TGA_ROT
    with pytest.raises(ValueError):
        Pattern("spiral")
