from __future__ import annotations

import numpy as np
import pytest

from oracles import REL_TOL, fd_network, rel_err, sample_entries
from stabkit import network
from stabkit.errors import CorruptCheckpointError, DimensionError, ShapeMismatchError, StabkitError, VersionMismatchError
from stabkit.network import ConvSpec, NetworkConfig

SMALL = NetworkConfig(32, 18)


def _randomize(params, rng, scale=0.3):
    for k, v in params.arrays.items():
        v[...] = rng.normal(0, scale if k.startswith("fc") else np.sqrt(2.0 / max(v[0].size, 1)), v.shape)
        if k.endswith(".b"):
            v[...] = rng.normal(0, 0.05, v.shape)
    return params


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(in_channels=5)
    with pytest.raises(ValueError):
        NetworkConfig(layers=(ConvSpec(8, kernel=2),))
    with pytest.raises(ValueError):
        NetworkConfig(layers=(ConvSpec(8, activation="tanh"),))
    c = NetworkConfig()
    assert NetworkConfig.from_dict(c.to_dict()) == c


def test_build_identity_and_determinism(rng):
    p = network.build(SMALL, 3)
    h, _ = network.forward(p, rng.uniform(size=(6, 18, 32)))
    assert h.is_identity()
    assert p.bitwise_equal(network.build(SMALL, 3))
    assert not np.array_equal(p.arrays["conv0.w"], network.build(SMALL, 4).arrays["conv0.w"])


def test_forward_purity_and_dims(rng):
    p = _randomize(network.build(SMALL), rng)
    x = rng.uniform(size=(6, 18, 32))
    a, _ = network.forward(p, x)
    b, _ = network.forward(p, x)
    assert a == b
    with pytest.raises(DimensionError):
        network.forward(p, rng.uniform(size=(6, 18, 31)))


def test_pair_sharing_and_symmetry(rng):
    p = _randomize(network.build(SMALL), rng)
    x, y = rng.uniform(size=(2, 6, 18, 32))
    ft, fp, _ = network.forward_pair(p, x, x)
    assert ft == fp
    a, b, _ = network.forward_pair(p, x, y)
    c, d, _ = network.forward_pair(p, y, x)
    assert a == d and b == c


def test_backward_zero_and_linear(rng):
    p = _randomize(network.build(SMALL), rng)
    x = rng.uniform(size=(6, 18, 32))
    _, cache = network.forward(p, x)
    g = network.backward(p, cache, np.zeros(8))
    assert all(not v.any() for v in g.values())
    # one linear conv: delta = fc.w @ mean(conv(x)) + fc.b, so dfc.w = u pooled^T
    cfg = NetworkConfig(32, 18, (ConvSpec(4, activation="linear"),))
    q = _randomize(network.build(cfg), rng)
    _, cache = network.forward(q, x)
    u = rng.normal(size=8)
    g = network.backward(q, cache, u)
    np.testing.assert_allclose(g["fc.w"], np.outer(u, cache.pooled[:, 0]), atol=1e-15)
    np.testing.assert_array_equal(g["fc.b"], u)


def test_stale_cache(rng):
    p = network.build(SMALL)
    _, cache = network.forward(p, rng.uniform(size=(6, 18, 32)))
    p.version += 1
    with pytest.raises(StabkitError, match="stale"):
        network.backward(p, cache, np.ones(8))


def test_backward_matches_fd(rng):
    checked = skipped = 0
    for _ in range(3):
        p = _randomize(network.build(SMALL), rng)
        x = rng.uniform(size=(6, 18, 32))
        u = rng.normal(size=8)
        _, cache = network.forward(p, x)
        g = network.backward(p, cache, u)
        entries = sample_entries(p, 6, rng)
        fd, kinked = fd_network(p, x[None], u, entries)
        an = np.array([g[n].reshape(-1)[i] for n, i in entries])
        err = rel_err(an[~kinked], fd[~kinked])
        assert err.max() < REL_TOL
        checked += int((~kinked).sum())
        skipped += int(kinked.sum())
    assert skipped < 0.05 * (checked + skipped)


def test_pair_gradients_accumulate(rng):
    p = _randomize(network.build(SMALL), rng)
    x, y = rng.uniform(size=(2, 6, 18, 32))
    u, w = rng.normal(size=(2, 8))
    _, _, caches = network.forward_pair(p, x, y)
    g = network.backward_pair(p, caches, u, w)
    entries = sample_entries(p, 4, rng)
    fx, kx = fd_network(p, x[None], u, entries)
    fy, ky = fd_network(p, y[None], w, entries)
    ok = ~(kx | ky)
    an = np.array([g[n].reshape(-1)[i] for n, i in entries])
    assert rel_err(an[ok], (fx + fy)[ok]).max() < REL_TOL


def test_checkpoint_round_trip_and_errors(tmp_path, rng):
    p = _randomize(network.build(SMALL), rng)
    p.iteration = 17
    path = tmp_path / "a.stab"
    network.save_checkpoint(p, path)
    q = network.load_checkpoint(path)
    assert q.bitwise_equal(p)
    raw = path.read_bytes()
    tr = tmp_path / "t.stab"
    tr.write_bytes(raw[: len(raw) - 100])
    with pytest.raises(CorruptCheckpointError):
        network.load_checkpoint(tr)
    flip = bytearray(raw)
    flip[-5] ^= 0xFF
    (tmp_path / "f.stab").write_bytes(bytes(flip))
    with pytest.raises(CorruptCheckpointError, match="checksum"):
        network.load_checkpoint(tmp_path / "f.stab")
    ver = bytearray(raw)
    ver[len(network.MAGIC)] += 1
    (tmp_path / "v.stab").write_bytes(bytes(ver))
    with pytest.raises(VersionMismatchError):
        network.load_checkpoint(tmp_path / "v.stab")
    other = NetworkConfig(32, 18, (ConvSpec(8), ConvSpec(16), ConvSpec(32), ConvSpec(64), ConvSpec(256)))
    with pytest.raises(ShapeMismatchError, match="conv4"):
        network.load_checkpoint(path, other)
