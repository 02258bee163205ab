import numpy as np
import pytest

from diffeoraptor.errors import StructuralError
from diffeoraptor.phantom import make_phantom


class TestSphere:
    def test_radius_zero_is_empty(self):
        _, lab = make_phantom("sphere", 16, radius=0)
        assert not lab.data.any()

    @pytest.mark.parametrize("radius", [8, 9.5, 12, 15])
    def test_voxelized_volume(self, radius):
        _, lab = make_phantom("sphere", 40, radius=radius)
        exact = 4.0 / 3.0 * np.pi * radius**3
        assert abs(lab.data.sum() - exact) <= 0.05 * exact

    def test_image_follows_labels(self):
        img, lab = make_phantom("sphere", 24, radius=6, edge_width=0.5)
        assert img.data[lab.data == 1].min() > 0.5 - 1e-12
        assert img.data[lab.data == 0].max() < 0.5

    def test_hard_edge(self):
        img, lab = make_phantom("sphere", 16, radius=5, edge_width=0)
        assert np.array_equal(img.data, lab.data.astype(float))

    def test_deterministic_noise(self):
        a, _ = make_phantom("sphere", 12, noise=0.1, seed=3)
        b, _ = make_phantom("sphere", 12, noise=0.1, seed=3)
        c, _ = make_phantom("sphere", 12, noise=0.1, seed=4)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_texture_leaves_labels(self):
        plain, lab = make_phantom("sphere", 16)
        tex, lab2 = make_phantom("sphere", 16, texture=0.5, texture_period=8)
        assert np.array_equal(lab.data, lab2.data)
        assert 0 < np.abs(tex.data - plain.data).max() <= 0.5 + 1e-12


class TestOtherKinds:
    def test_checker_period_equal_to_dims(self):
        _, lab = make_phantom("checker", (8, 10, 12), period=(8, 10, 12))
        assert set(np.unique(lab.data)) == {0, 1}
        assert lab.data.sum() == lab.data.size // 2
        assert lab.data[0, 0, 0] != lab.data[4, 0, 0]
        assert lab.data[0, 0, 0] == lab.data[4, 5, 0]

    def test_checker_cells(self):
        img, lab = make_phantom("checker", 16, period=4)
        assert lab.data[0, 0, 0] == 0 and lab.data[2, 0, 0] == 1 and lab.data[2, 2, 0] == 0
        assert np.array_equal(img.data, lab.data)

    def test_ramp(self):
        img, lab = make_phantom("ramp", 10)
        assert img.data[0].max() == 0.0 and img.data[-1].min() == 1.0
        assert lab.data[:5].sum() == 0 and lab.data[5:].all()


class TestValidation:
    @pytest.mark.parametrize("kwargs", [
        {"kind": "sphere", "dims": 7},
        {"kind": "sphere", "dims": (8, 8)},
        {"kind": "sphere", "dims": 8, "radius": -1},
        {"kind": "sphere", "dims": 8, "noise": -0.1},
        {"kind": "checker", "dims": 8, "period": 1},
        {"kind": "torus", "dims": 8},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(StructuralError):
            make_phantom(**kwargs)
