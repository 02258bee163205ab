import gzip
import struct

import numpy as np
import pytest

from diffeoraptor import nifti
from diffeoraptor.errors import NiftiParseError, StructuralError, UnsupportedFormatError
from diffeoraptor.volume import DisplacementField, LabelMap, Volume


def header_bytes(shape=(4, 5, 6), datatype=16, bitpix=32, slope=0.0, inter=0.0, magic=b"n+1\x00"):
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, len(shape), *shape, *([1] * (7 - len(shape))))
    struct.pack_into("<2h", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, 2.0, 3.0, 4.0, 1, 1, 1, 1)
    struct.pack_into("<3f", hdr, 108, 352.0, slope, inter)
    hdr[344:348] = magic
    return bytes(hdr) + b"\x00" * 4


class TestRoundTrip:
    @pytest.mark.parametrize("name", ["v.nii", "v.nii.gz"])
    def test_volume(self, tmp_path, rng, name):
        v = Volume(rng.normal(size=(16, 16, 16)), spacing=(0.5, 1.0, 2.0), origin=(1.0, -2.0, 3.5))
        path = tmp_path / name
        nifti.write_volume(v, path)
        back = nifti.read_volume(path)
        assert back.dims == v.dims
        assert back.spacing == v.spacing
        assert back.origin == v.origin
        np.testing.assert_array_equal(back.data, v.data.astype(np.float32))
        assert not (tmp_path / (name + ".partial")).exists()

    def test_gzip_on_disk(self, tmp_path):
        path = tmp_path / "v.nii.gz"
        nifti.write_volume(Volume(np.ones((8, 8, 8))), path)
        assert path.read_bytes()[:2] == b"\x1f\x8b"
        assert len(gzip.decompress(path.read_bytes())) == 352 + 4 * 512

    def test_labels(self, tmp_path, rng):
        m = LabelMap(rng.integers(0, 5, size=(8, 9, 10)))
        nifti.write_labels(m, tmp_path / "l.nii")
        assert np.array_equal(nifti.read_labels(tmp_path / "l.nii").data, m.data)

    def test_displacement(self, tmp_path, rng):
        d = DisplacementField(rng.normal(size=(3, 6, 7, 8)), spacing=(2.0, 1.0, 0.5))
        nifti.write_displacement(d, tmp_path / "d.nii")
        img = nifti.read_nifti(tmp_path / "d.nii")
        assert img.data.shape == (6, 7, 8, 1, 3)
        assert img.intent_code == 1006
        # stored in millimetres
        np.testing.assert_allclose(img.data[..., 0, 0], 2.0 * d.data[0], rtol=1e-6)
        back = nifti.read_displacement(tmp_path / "d.nii")
        np.testing.assert_allclose(back.data, d.data, rtol=1e-6, atol=1e-6)

    def test_nibabel_reads_our_files(self, tmp_path, rng):
        nib = pytest.importorskip("nibabel")
        v = Volume(rng.normal(size=(5, 6, 7)), spacing=(1.5, 2.0, 2.5), origin=(10.0, 20.0, 30.0))
        nifti.write_volume(v, tmp_path / "v.nii.gz")
        img = nib.load(tmp_path / "v.nii.gz")
        np.testing.assert_array_equal(np.asarray(img.dataobj), v.data.astype(np.float32))
        assert img.header.get_zooms() == (1.5, 2.0, 2.5)
        np.testing.assert_allclose(img.affine[:3, 3], v.origin)

    def test_we_read_nibabel_files(self, tmp_path, rng):
        nib = pytest.importorskip("nibabel")
        data = rng.integers(-300, 300, size=(6, 5, 4)).astype(np.int16)
        img = nib.Nifti1Image(data, np.diag([2.0, 3.0, 4.0, 1.0]))
        img.header.set_slope_inter(0.5, 10.0)
        nib.save(img, tmp_path / "n.nii")
        v = nifti.read_volume(tmp_path / "n.nii")
        assert v.spacing == (2.0, 3.0, 4.0)
        np.testing.assert_allclose(v.data, data * 0.5 + 10.0)


class TestHeader:
    def test_float32_3d_accepted(self):
        raw = header_bytes() + np.arange(120, dtype="<f4").tobytes()
        img = nifti.parse_nifti(raw)
        assert img.data.shape == (4, 5, 6)
        assert img.spacing == (2.0, 3.0, 4.0)
        # column-major on disk
        assert img.data[1, 0, 0] == 1.0 and img.data[0, 1, 0] == 4.0

    def test_scaling_applied(self):
        raw = header_bytes(datatype=4, bitpix=16, slope=2.0, inter=-1.0) + np.arange(120, dtype="<i2").tobytes()
        img = nifti.parse_nifti(raw)
        assert img.data[1, 0, 0] == 1.0 and img.data[0, 0, 0] == -1.0

    def test_big_endian(self):
        raw = bytearray(header_bytes(shape=(2, 2, 2)))
        for fmt, off, n in (("i", 0, 1), ("h", 40, 8), ("h", 70, 2), ("f", 76, 8), ("f", 108, 3)):
            vals = struct.unpack_from("<" + fmt * n, raw, off)
            struct.pack_into(">" + fmt * n, raw, off, *vals)
        raw = bytes(raw) + np.arange(8, dtype=">f4").tobytes()
        assert nifti.parse_nifti(raw).data[1, 1, 1] == 7.0

    def test_truncated_header(self):
        with pytest.raises(NiftiParseError) as err:
            nifti.parse_nifti(header_bytes()[:200])
        assert err.value.offset == 200

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "t.nii"
        nifti.write_volume(Volume(np.ones((8, 8, 8))), path)
        path.write_bytes(path.read_bytes()[:1000])
        with pytest.raises(NiftiParseError, match="truncated"):
            nifti.read_volume(path)

    def test_truncated_gzip(self, tmp_path):
        path = tmp_path / "t.nii.gz"
        nifti.write_volume(Volume(np.ones((8, 8, 8))), path)
        path.write_bytes(path.read_bytes()[:30])
        with pytest.raises(NiftiParseError):
            nifti.read_volume(path)

    def test_bad_magic(self):
        with pytest.raises(NiftiParseError, match="byte offset 344"):
            nifti.parse_nifti(header_bytes(magic=b"abcd") + bytes(480))

    def test_pair_format_rejected(self):
        with pytest.raises(NiftiParseError):
            nifti.parse_nifti(header_bytes(magic=b"ni1\x00") + bytes(480))

    def test_bad_sizeof_hdr(self):
        with pytest.raises(NiftiParseError, match="byte offset 0"):
            nifti.parse_nifti(b"\x00" * 400)

    def test_unsupported_datatype(self):
        with pytest.raises(UnsupportedFormatError) as err:
            nifti.parse_nifti(header_bytes(datatype=32, bitpix=64) + bytes(960))
        assert err.value.code == 32
        assert "32" in str(err.value)

    def test_bad_dims(self):
        with pytest.raises(NiftiParseError):
            nifti.parse_nifti(header_bytes(shape=(4, 0, 6)) + bytes(480))

    def test_vector_image_is_not_a_volume(self, tmp_path):
        nifti.write_displacement(DisplacementField(np.zeros((3, 4, 4, 4))), tmp_path / "d.nii")
        with pytest.raises(StructuralError):
            nifti.read_volume(tmp_path / "d.nii")
