import numpy as np

from mineloc import io, rng


def test_table_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=7)
    io.write_columns(tmp_path / "t.csv", {"a": x, "b": np.arange(7), "c": np.array(list("abcdefg"), dtype=object)},
                     {"seed": 3, "note": "x"})
    meta, cols = io.read_columns(tmp_path / "t.csv")
    np.testing.assert_array_equal(cols["a"], x)
    assert meta["seed"] == "3" and meta["format"] == io.TABLE_FORMAT and cols["c"][2] == "c"


def test_config_hash_canonical():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_streams_independent_and_repeatable():
    a = rng.stream(0, "measure").random(4)
    np.testing.assert_array_equal(a, rng.stream(0, "measure").random(4))
    assert not np.array_equal(a, rng.stream(0, "mine-init").random(4))
    assert not np.array_equal(a, rng.stream(1, "measure").random(4))


def test_blocks_random_access():
    seq = [rng.block(5, "measure", i).random(3) for i in range(4)]
    np.testing.assert_array_equal(seq[2], rng.block(5, "measure", 2).random(3))
    assert not np.array_equal(seq[1], seq[2])
