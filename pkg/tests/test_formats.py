import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sit.autodiff.checkpoint import load_checkpoint, save_checkpoint
from sit.errors import DataError, ParseError
from sit.geometry import build_icosphere, build_patch_table
from sit.geometry.formats import (
    SurfaceSignal,
    read_smesh,
    read_sptbl,
    read_ssig,
    write_smesh,
    write_sptbl,
    write_ssig,
)


def test_smesh_roundtrip(tmp_path, mesh3):
    path = tmp_path / "m.smesh"
    write_smesh(path, mesh3)
    back = read_smesh(path)
    assert back.order == mesh3.order
    npt.assert_array_equal(back.vertices, mesh3.vertices)
    npt.assert_array_equal(back.faces, mesh3.faces)


def test_smesh_write_is_deterministic(tmp_path, mesh3):
    a, b = tmp_path / "a.smesh", tmp_path / "b.smesh"
    write_smesh(a, mesh3)
    write_smesh(b, mesh3)
    assert a.read_bytes() == b.read_bytes()


def test_ssig_roundtrip(tmp_path, rng):
    values = rng.standard_normal((42, 3)).astype(np.float32)
    sig = SurfaceSignal(values=values, channel_names=("myelin", "curv", "thick"))
    path = tmp_path / "s.ssig"
    write_ssig(path, sig)
    back = read_ssig(path)
    npt.assert_array_equal(back.values, values)
    assert back.channel_names == ("myelin", "curv", "thick")


def test_ssig_default_channel_names(tmp_path):
    sig = SurfaceSignal(values=np.zeros((5, 2), dtype=np.float32))
    path = tmp_path / "s.ssig"
    write_ssig(path, sig)
    assert read_ssig(path).channel_names == ("ch0", "ch1")


def test_ssig_rejects_comma_in_name(tmp_path):
    sig = SurfaceSignal(values=np.zeros((3, 1)), channel_names=("a,b",))
    with pytest.raises(DataError):
        write_ssig(tmp_path / "bad.ssig", sig)


def test_sptbl_roundtrip(tmp_path, table31):
    path = tmp_path / "t.sptbl"
    write_sptbl(path, table31)
    back = read_sptbl(path)
    assert back.high_order == 3 and back.patch_order == 1
    npt.assert_array_equal(back.patches, table31.patches)


def test_checkpoint_roundtrip(tmp_path):
    tensors = {
        "w": np.arange(6, dtype=np.float32).reshape(2, 3),
        "b": np.array([1.5], dtype=np.float32),
        "scalar": np.float32(2.0),
    }
    config = {"task": "pma", "layers": 4, "lr": 1e-4}
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, tensors, config)
    back, cfg = load_checkpoint(path)
    assert cfg == config
    assert set(back) == set(tensors)
    npt.assert_array_equal(back["w"], tensors["w"])
    npt.assert_array_equal(back["b"], tensors["b"])
    assert back["scalar"].shape in ((), (1,))
    assert float(np.ravel(back["scalar"])[0]) == 2.0


def test_checkpoint_rejects_bad_names(tmp_path):
    with pytest.raises(DataError):
        save_checkpoint(tmp_path / "c.ckpt", {"has space": np.zeros(2)}, {})
    with pytest.raises(DataError):
        save_checkpoint(tmp_path / "c.ckpt", {"": np.zeros(2)}, {})


def test_checkpoint_rejects_nonfinite(tmp_path):
    with pytest.raises(DataError):
        save_checkpoint(tmp_path / "c.ckpt", {"w": np.array([np.nan])}, {})


def test_checkpoint_write_is_deterministic(tmp_path):
    tensors = {"a": np.ones((3, 3), dtype=np.float32), "b": np.zeros(4, dtype=np.float32)}
    config = {"z": 1, "a": "x"}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save_checkpoint(p1, tensors, config)
    save_checkpoint(p2, tensors, config)
    assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize(
    "reader,magic",
    [(read_smesh, "SMESH"), (read_ssig, "SSIG"), (read_sptbl, "SPTBL"), (load_checkpoint, "SITCKPT")],
)
def test_readers_reject_wrong_magic(tmp_path, reader, magic):
    path = tmp_path / "bad"
    path.write_bytes(b"NOTAFORMAT 1\nend\n")
    with pytest.raises(ParseError) as exc:
        reader(path)
    assert exc.value.offset == 0


@pytest.mark.parametrize(
    "writer,reader,magic",
    [
        (lambda p: write_smesh(p, build_icosphere(0)), read_smesh, "SMESH"),
        (
            lambda p: write_ssig(p, SurfaceSignal(values=np.zeros((2, 1)), channel_names=("a",))),
            read_ssig,
            "SSIG",
        ),
        (lambda p: write_sptbl(p, build_patch_table(1, 0)), read_sptbl, "SPTBL"),
        (lambda p: save_checkpoint(p, {"w": np.zeros(1)}, {}), load_checkpoint, "SITCKPT"),
    ],
)
def test_readers_reject_future_version(tmp_path, writer, reader, magic):
    path = tmp_path / "f"
    writer(path)
    data = path.read_bytes()
    assert data.startswith(f"{magic} 1\n".encode())
    path.write_bytes(data.replace(f"{magic} 1\n".encode(), f"{magic} 2\n".encode(), 1))
    with pytest.raises(ParseError, match="version"):
        reader(path)


def test_truncated_payload_reports_offset(tmp_path, mesh3):
    path = tmp_path / "m.smesh"
    write_smesh(path, mesh3)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ParseError, match="truncated") as exc:
        read_smesh(path)
    assert exc.value.offset is not None and exc.value.offset > 0


def test_trailing_bytes_rejected(tmp_path, table31):
    path = tmp_path / "t.sptbl"
    write_sptbl(path, table31)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ParseError, match="trailing"):
        read_sptbl(path)


def test_header_without_end_rejected(tmp_path):
    path = tmp_path / "h.ssig"
    path.write_bytes(b"SSIG 1\nvertices 2\n")
    with pytest.raises(ParseError, match="before 'end'"):
        read_ssig(path)


def test_smesh_face_index_out_of_range(tmp_path):
    mesh = build_icosphere(0)
    path = tmp_path / "m.smesh"
    write_smesh(path, mesh)
    data = bytearray(path.read_bytes())
    # last uint32 of the face payload: point it past the vertex count
    data[-4:] = np.array([99], dtype="<u4").tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="out of range"):
        read_smesh(path)


def test_checkpoint_duplicate_tensor_name(tmp_path):
    path = tmp_path / "c.ckpt"
    payload = np.zeros(1, dtype="<f4").tobytes()
    path.write_bytes(
        b"SITCKPT 1\nconfig {}\ntensor w 1\ntensor w 1\nend\n" + payload + payload
    )
    with pytest.raises(ParseError, match="duplicate"):
        load_checkpoint(path)


def test_checkpoint_missing_config(tmp_path):
    path = tmp_path / "c.ckpt"
    path.write_bytes(b"SITCKPT 1\ntensor w 1\nend\n" + np.zeros(1, dtype="<f4").tobytes())
    with pytest.raises(ParseError, match="config"):
        load_checkpoint(path)


@settings(max_examples=20)
@given(
    n_verts=st.integers(min_value=1, max_value=40),
    n_chan=st.integers(min_value=1, max_value=5),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_ssig_roundtrip_property(tmp_path_factory, n_verts, n_chan, seed):
    values = np.random.default_rng(seed).standard_normal((n_verts, n_chan)).astype(np.float32)
    sig = SurfaceSignal(values=values)
    path = tmp_path_factory.mktemp("ssig") / "x.ssig"
    write_ssig(path, sig)
    npt.assert_array_equal(read_ssig(path).values, values)


def test_signal_validates_shape_and_finiteness():
    with pytest.raises(DataError):
        SurfaceSignal(values=np.zeros(5))
    with pytest.raises(DataError):
        SurfaceSignal(values=np.array([[np.inf]]))
    with pytest.raises(DataError):
        SurfaceSignal(values=np.zeros((3, 2)), channel_names=("only-one",))
