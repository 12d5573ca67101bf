import zipfile

import numpy as np
import pytest

from hmadapt.adapt import SpotTuneNet, make_spottune
from hmadapt.checkpoint import load_checkpoint, save_checkpoint
from hmadapt.errors import ImageIOError
from hmadapt.nn import AdamState, NetConfig, adam_step, init_params, loss_and_grads

CFG = NetConfig(input_size=8, stem_channels=3, stage_channels=(3, 4), blocks_per_stage=(1, 1))


def trained(rng):
    net = init_params(CFG, rng)
    opt = AdamState(lr=1e-3)
    _, g = loss_and_grads(net, rng.random((2, 8, 8)), [0, 1])
    adam_step(net.params, g, opt)
    return net, opt


def test_net_roundtrip(tmp_path, rng):
    net, opt = trained(rng)
    save_checkpoint(tmp_path / "a.ckpt", net, opt, {"epoch": 3})
    back, opt2, meta = load_checkpoint(tmp_path / "a.ckpt")
    assert back.digest() == net.digest() and back.config == CFG and meta == {"epoch": 3}
    assert all(np.array_equal(back.buffers[k], v) for k, v in net.buffers.items())
    assert opt2.t == 1 and opt2.hyper() == opt.hyper()
    assert all(np.array_equal(opt2.m[k], v) for k, v in opt.m.items())


def test_spottune_roundtrip(tmp_path, rng):
    net, _ = trained(rng)
    st = make_spottune(net, rng, temperature=0.2)
    save_checkpoint(tmp_path / "s.ckpt", st)
    back, opt, _ = load_checkpoint(tmp_path / "s.ckpt")
    assert isinstance(back, SpotTuneNet) and opt is None and back.temperature == 0.2
    assert back.frozen.digest() == st.frozen.digest() and back.tuned.digest() == st.tuned.digest()
    assert not back.frozen.params["stem.conv"].flags.writeable


def test_byte_identical(tmp_path, rng):
    net, opt = trained(rng)
    save_checkpoint(tmp_path / "a.ckpt", net, opt)
    save_checkpoint(tmp_path / "b.ckpt", net, opt)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    names = zipfile.ZipFile(tmp_path / "a.ckpt").namelist()
    assert names[0] == "meta.json" and names[1:] == sorted(names[1:])


def test_corrupt(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not a zip")
    with pytest.raises(ImageIOError, match="x.ckpt"):
        load_checkpoint(tmp_path / "x.ckpt")
