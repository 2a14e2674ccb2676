import struct

import numpy as np
import pytest

from empmp.checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from empmp.errors import ParseError
from empmp.model import EmpmpModel

from conftest import randomize, tiny_config


def test_round_trip_is_bit_exact(rng, tmp_path):
    m = randomize(EmpmpModel(tiny_config(norm_layout="temporal")), rng)
    extra = {"adam.m/embed.weight": rng.normal(size=(6, 4))}
    save_checkpoint(tmp_path / "m.empm", m, {"epochs_done": 3}, extra)
    ck = load_checkpoint(tmp_path / "m.empm")
    assert ck.model.config == m.config
    assert ck.meta == {"epochs_done": 3}
    for (n1, a), (n2, b) in zip(m.named_parameters(), ck.model.named_parameters()):
        assert n1 == n2 and np.array_equal(a.data, b.data)
    assert np.array_equal(ck.extra["adam.m/embed.weight"], extra["adam.m/embed.weight"])
    assert not (tmp_path / "m.empm.tmp").exists()


def test_layout_header():
    blob = dumps(EmpmpModel(tiny_config()))
    assert blob[:4] == MAGIC
    assert struct.unpack("<I", blob[4:8]) == (1,)


def test_corruption_is_detected():
    blob = bytearray(dumps(EmpmpModel(tiny_config())))
    blob[-3] ^= 0xFF
    with pytest.raises(ParseError, match="CRC"):
        loads(bytes(blob))
    with pytest.raises(ParseError, match="truncated"):
        loads(bytes(blob[:-10]))
    with pytest.raises(ParseError):
        loads(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(ParseError, match="trailing"):
        loads(dumps(EmpmpModel(tiny_config())) + b"\x00")


def test_serialization_is_deterministic():
    assert dumps(EmpmpModel(tiny_config(seed=4))) == dumps(EmpmpModel(tiny_config(seed=4)))
    assert dumps(EmpmpModel(tiny_config(seed=4))) != dumps(EmpmpModel(tiny_config(seed=5)))
