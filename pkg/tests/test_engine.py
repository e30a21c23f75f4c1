from __future__ import annotations

import numpy as np
import pytest

from stabkit import datagen as dg
from stabkit import engine, network
from stabkit.engine import EngineConfig, HistoryBuffer
from stabkit.errors import DimensionError, StabkitError
from stabkit.image import Frame
from stabkit.network import NetworkConfig

CFG = NetworkConfig(32, 18)


@pytest.fixture(scope="module")
def clip():
    return dg.generate_clip(dg.MotionScript(kind="mixed", length=44), 6, (32, 18))


@pytest.fixture(scope="module")
def active():
    # small random weights so every step predicts a distinct non-identity warp
    p = network.build(CFG, 2)
    r = np.random.default_rng(9)
    p.arrays["fc.w"][...] = r.normal(0, 0.02, p.arrays["fc.w"].shape)
    p.arrays["fc.b"][...] = r.normal(0, 0.005, p.arrays["fc.b"].shape)
    return p


def test_config_validation():
    assert EngineConfig().offsets == (-29, -23, -17, -11, -5)
    assert EngineConfig.preset("paper-train").offsets == (-30, -24, -18, -12, -6)
    with pytest.raises(ValueError):
        EngineConfig(offsets=(-5, -10))
    with pytest.raises(ValueError):
        EngineConfig(offsets=(-3, 0))
    with pytest.raises(ValueError):
        EngineConfig(r=10)
    with pytest.raises(ValueError):
        EngineConfig(crop="middle")
    with pytest.raises(ValueError):
        EngineConfig.preset("nope")


def test_history_buffer():
    fs = [Frame.from_array(np.full((2, 2), i / 10)) for i in range(5)]
    b = HistoryBuffer(3, fs[:2])
    assert len(b) == 2 and b.at(-1) is fs[1] and b.at(-2) is fs[0]
    with pytest.raises(IndexError):
        b.at(-3)
    for f in fs[2:]:
        b.push(f)
    # oldest evicted first
    assert len(b) == 3 and [b.at(o) for o in (-3, -2, -1)] == fs[2:]
    with pytest.raises(IndexError):
        b.at(0)


def test_init_fills_buffer(clip):
    p = network.build(CFG)
    st = engine.init(clip.unsteady[0], EngineConfig(), p)
    assert st.t == 0 and len(st.buffer) == 29
    assert all(st.buffer.at(o) == clip.unsteady[0] for o in range(-29, 0))
    x = engine.stack_inputs(st, clip.unsteady[1])
    assert all(np.array_equal(x[c], clip.unsteady[0].data) for c in range(5))
    assert np.array_equal(x[5], clip.unsteady[1].data)
    with pytest.raises(DimensionError):
        engine.init(Frame.from_array(np.zeros((36, 64))), EngineConfig(), p)


def test_identity_checkpoint_is_noop(clip):
    res = engine.stabilize_clip(clip.unsteady, network.build(CFG), EngineConfig(crop="final"))
    assert all(a == b for a, b in zip(res.frames, clip.unsteady))
    assert all(h.is_identity() for h in res.transforms)
    assert len(res.transforms) == len(clip)
    assert (res.crop.x, res.crop.y, res.crop.width, res.crop.height) == (0, 0, 32, 18)
    one = engine.stabilize_clip(clip.unsteady[:1], network.build(CFG))
    assert len(one.frames) == 1 and one.frames[0] == clip.unsteady[0]
    with pytest.raises(StabkitError):
        engine.stabilize_clip([], network.build(CFG))


def test_buffer_holds_stabilized_outputs(clip, active):
    cfg = EngineConfig()
    st = engine.init(clip.unsteady[0], cfg, active)
    outs = []
    for t in range(40):
        if t >= 30:
            x = engine.stack_inputs(st, clip.unsteady[t])
            for c, o in enumerate(cfg.offsets):
                assert np.array_equal(x[c], outs[t + o].data)
        outs.append(engine.step(st, clip.unsteady[t]).frame)
    assert not all(h == outs[0] for h in outs[1:])


def test_causality_prefix_replay(clip, active):
    full = engine.stabilize_clip(clip.unsteady, active, EngineConfig(crop="none"))
    assert not all(h.is_identity() for h in full.transforms)
    for k in (1, 7, 31, 43):
        pre = engine.stabilize_clip(clip.unsteady[:k], active, EngineConfig(crop="none"))
        assert all(a == b for a, b in zip(pre.frames, full.frames[:k]))
        assert all(np.array_equal(a.params, b.params) for a, b in zip(pre.transforms, full.transforms[:k]))


def test_snapshot_determinism(clip, active):
    st = engine.init(clip.unsteady[0], EngineConfig(), active)
    for t in range(12):
        engine.step(st, clip.unsteady[t])
    snap = st.snapshot()
    a = engine.step(st, clip.unsteady[12])
    b = engine.step(snap, clip.unsteady[12])
    assert a.frame == b.frame and a.transform == b.transform
    # init twice gives identical state
    s1 = engine.init(clip.unsteady[0], EngineConfig(), active)
    s2 = engine.init(clip.unsteady[0], EngineConfig(), active)
    assert engine.step(s1, clip.unsteady[0]).frame == engine.step(s2, clip.unsteady[0]).frame


def test_stream_is_lazy(clip, active):
    consumed = []

    def source():
        for i, f in enumerate(clip.unsteady[:6]):
            consumed.append(i)
            yield f

    it = engine.stream(source(), active, EngineConfig(crop="running"))
    for k in range(6):
        r = next(it)
        # output k is available before input k+1 has been read
        assert consumed == list(range(k + 1)) and r.t == k
        assert r.crop is not None
    with pytest.raises(StopIteration):
        next(it)
    ref = engine.stabilize_clip(clip.unsteady[:6], active, EngineConfig(crop="running"))
    res = list(engine.stream(iter(clip.unsteady[:6]), active, EngineConfig(crop="running")))
    assert all(a.frame == b for a, b in zip(res, ref.frames))
    assert res[-1].crop == ref.crop


def test_running_crop_shrinks(clip, active):
    rs = list(engine.stream(iter(clip.unsteady[:10]), active, EngineConfig(crop="running")))
    areas = [r.crop.area for r in rs]
    assert all(b <= a for a, b in zip(areas, areas[1:]))


def test_step_errors(clip):
    st = engine.init(clip.unsteady[0], EngineConfig(), network.build(CFG))
    with pytest.raises(DimensionError):
        engine.step(st, Frame.from_array(np.zeros((18, 31))))
    assert len(st.timings) == 0
