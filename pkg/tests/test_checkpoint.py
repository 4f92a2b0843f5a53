import struct

import numpy as np
import pytest

from nhgln.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from nhgln.errors import FormatError


@pytest.fixture
def entries(rng):
    return {"a.W": rng.normal(size=(3, 4)), "a.b": rng.normal(size=4), "scalar": np.array(2.5), "t": np.array([7.0])}


class TestCheckpoint:
    def test_round_trip_bit_exact(self, entries, tmp_path):
        path = tmp_path / "c.nhgln"
        save_checkpoint(path, entries)
        back = load_checkpoint(path)
        assert list(back) == list(entries)
        for k in entries:
            assert back[k].shape == entries[k].shape
            assert back[k].tobytes() == np.asarray(entries[k], dtype="<f8").tobytes()
        save_checkpoint(tmp_path / "d.nhgln", back)
        assert (tmp_path / "d.nhgln").read_bytes() == path.read_bytes()

    def test_layout(self, entries):
        blob = encode_checkpoint(entries)
        assert blob[:6] == MAGIC
        (mlen,) = struct.unpack("<Q", blob[6:14])
        lines = blob[14 : 14 + mlen].decode().split("\n")
        assert lines[0] == "a.W\t3,4\t0"
        assert lines[1] == "a.b\t4\t96"
        assert lines[2] == "scalar\t\t128"
        payload = blob[14 + mlen :]
        assert payload[:96] == entries["a.W"].astype("<f8").tobytes()

    def test_bad_magic(self, entries):
        blob = b"XXGLN1" + encode_checkpoint(entries)[6:]
        with pytest.raises(FormatError, match="offset 0"):
            decode_checkpoint(blob)

    def test_truncated(self, entries):
        blob = encode_checkpoint(entries)
        with pytest.raises(FormatError, match="truncated"):
            decode_checkpoint(blob[:-3])

    def test_trailing(self, entries):
        blob = encode_checkpoint(entries)
        with pytest.raises(FormatError, match=f"offset {len(blob)}"):
            decode_checkpoint(blob + b"\0" * 8)

    def test_bad_manifest(self):
        manifest = b"broken-line"
        with pytest.raises(FormatError, match="manifest"):
            decode_checkpoint(MAGIC + struct.pack("<Q", len(manifest)) + manifest)

    def test_offset_order(self):
        manifest = b"a\t1\t8"
        with pytest.raises(FormatError):
            decode_checkpoint(MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"\0" * 16)

    def test_tab_in_name(self):
        with pytest.raises(ValueError):
            encode_checkpoint({"bad\tname": np.zeros(1)})
