import json
import math

import numpy as np
import pytest
from scipy.signal import correlate2d

from equitransporter.fields import FormatError, rotate_array, rotate_pixel
from equitransporter.groups import element, inverse, permute, regular
from equitransporter.nn import angle_net, checkpoint_to_bytes, softmax_ce, unet
from equitransporter.training import make_demos
from equitransporter.transporter import (ModelConfig, PickAction, PickMaps, PlaceAction, PlaceMap, TransporterAgent,
                                         decode, export_maps, pick_angle, place_baseline, place_equivariant)
from equitransporter.verify import check_exchange, check_pick, check_prop1, check_prop2


@pytest.fixture(scope="module")
def demo():
    return make_demos("insert-L", [3])[0]


def _nets(n, rng):
    psi = unet(n, 2, (2 * n, 2 * n, 2 * n), odd=True, rng=rng)
    phi = unet(n, 2, (2 * n, 2 * n, 2 * n), rng=rng)
    return psi, phi


# -- action types -------------------------------------------------------------


def test_action_angle_ranges():
    PickAction(0, 0, 0.0)
    PlaceAction(0, 0, 2 * math.pi - 1e-9)
    with pytest.raises(ValueError):
        PickAction(0, 0, math.pi)
    with pytest.raises(ValueError):
        PlaceAction(0, 0, -0.1)


# -- pick heads ---------------------------------------------------------------


def test_pick_equivariance_c4():
    res, detail = check_pick(4, instances=2)
    assert res <= 1e-8
    assert "argmax_mismatch=0" in detail


def test_constant_scene_gives_constant_interior(rng):
    f_p = unet(4, 2, rng=rng)
    out = f_p(np.ones((2, 64, 64)))[0]
    core = out[24:40, 24:40]
    np.testing.assert_allclose(core, core[0, 0], rtol=1e-12)


def test_uniform_crop_gives_uniform_angles(rng):
    f_t = angle_net(4, 2, rng=rng)
    logits = pick_angle(f_t, np.full((2, 17, 17), 0.7))
    assert logits.shape == (2,)
    assert logits[0] == pytest.approx(logits[1], abs=1e-12)


def test_angle_head_rejects_non_square_crop(rng):
    with pytest.raises(ValueError):
        pick_angle(angle_net(4, 2, rng=rng), np.zeros((2, 17, 15)))


# -- place heads --------------------------------------------------------------


def test_prop1_channel_permutation():
    assert check_prop1(4, instances=3)[0] <= 1e-8


def test_prop2_sweep_and_corollaries():
    assert check_prop2(4, instances=2)[0] <= 1e-8


def test_untied_kernels_fail_prop2():
    assert check_prop2(4, instances=1, untied=True)[0] > 1e-3


def test_exchange_identity():
    assert check_exchange(4, instances=2)[0] <= 1e-8


def test_single_angle_baseline_is_template_correlation(rng):
    psi = unet(1, 2, (4, 8, 8), odd=True, rng=rng)
    phi = unet(1, 2, (4, 8, 8), rng=rng)
    c, o = rng.normal(size=(2, 9, 9)), rng.normal(size=(2, 16, 16))
    got = place_baseline(psi, phi, c, o, 1).data
    want = correlate2d(phi(np.pad(o, ((0, 0), (4, 4), (4, 4))))[0], psi(c)[0], mode="valid")
    assert got.shape == (1, 16, 16)
    np.testing.assert_allclose(got[0], want, atol=1e-12)


def test_rotated_crop_agrees_across_formulations(rng):
    psi, phi = _nets(4, rng)
    c, o = rng.normal(size=(2, 13, 13)), rng.normal(size=(2, 32, 32))
    base = place_equivariant(psi, phi, c, o, 4).data
    for k in range(4):
        g = element(4, k)
        a = place_baseline(psi, phi, rotate_array(c, g), o, 4).data
        b = place_equivariant(psi, phi, rotate_array(c, g), o, 4).data
        np.testing.assert_allclose(a, b, atol=1e-10)
        np.testing.assert_allclose(b, permute(regular(4), inverse(g), base, axis=0), atol=1e-10)


def test_place_decode_is_rotation_consistent(rng):
    psi, phi = _nets(4, rng)
    c, o = rng.normal(size=(2, 13, 13)), rng.normal(size=(2, 32, 32))
    flat = PickMaps(np.zeros((32, 32)), np.zeros(2))
    _, place = decode(flat, place_equivariant(psi, phi, c, o, 4))
    for k in range(1, 4):
        g = element(4, k)
        m = place_equivariant(psi, phi, rotate_array(c, g), rotate_array(o, g), 4)
        _, pg = decode(flat, m)
        assert (pg.u, pg.v) == tuple(int(round(t)) for t in rotate_pixel((place.u, place.v), g, 32))
        assert pg.theta == place.theta


def test_place_map_shifts_with_the_scene(rng):
    psi, phi = _nets(4, rng)
    c = rng.normal(size=(2, 13, 13))
    o = np.zeros((2, 40, 40))
    o[:, 12:28, 12:28] = rng.normal(size=(2, 16, 16))
    shifted = np.roll(o, (4, -8), axis=(1, 2))
    a = place_equivariant(psi, phi, c, o, 4).data
    b = place_equivariant(psi, phi, c, shifted, 4).data
    np.testing.assert_allclose(b[:, 16:32, 8:24], a[:, 12:28, 16:32], atol=1e-10)


def test_place_rejects_mismatched_embeddings(rng):
    psi = unet(4, 2, (8, 8, 8), odd=True, rng=rng)
    phi = unet(4, 3, (8, 8, 8), rng=rng)
    with pytest.raises(ValueError):
        place_equivariant(psi, phi, np.zeros((2, 9, 9)), np.zeros((2, 16, 16)), 4)


def test_place_softmax_is_joint():
    m = PlaceMap(np.random.default_rng(0).normal(size=(8, 5, 5)))
    assert m.probabilities().sum() == pytest.approx(1.0)
    assert m.n == 8


# -- decoding -----------------------------------------------------------------


def test_decode_one_hot():
    pos = np.zeros((8, 8))
    pos[5, 2] = 1
    ang = np.array([0.0, 0.0, 3.0, 0.0])
    place = np.zeros((8, 8, 8))
    place[6, 1, 7] = 1
    pick, pl = decode(PickMaps(pos, ang), PlaceMap(place))
    assert (pick.u, pick.v) == (5, 2)
    assert pick.theta == pytest.approx(math.pi / 2)
    assert (pl.u, pl.v) == (1, 7)
    assert pl.theta == pytest.approx((math.pi / 2 + 2 * math.pi * 6 / 8) % (2 * math.pi))


def test_decode_tie_breaks():
    pos = np.zeros((4, 4))
    pos[2, 1] = pos[1, 3] = 1
    place = np.zeros((4, 4, 4))
    place[3, 0, 2] = place[1, 0, 2] = place[0, 2, 0] = 1
    pick, pl = decode(PickMaps(pos, np.zeros(2)), PlaceMap(place))
    assert (pick.u, pick.v, pick.theta) == (1, 3, 0.0)
    assert (pl.u, pl.v, pl.theta) == (0, 2, pytest.approx(2 * math.pi / 4))
    pick, pl = decode(PickMaps(np.zeros((4, 4)), np.zeros(2)), PlaceMap(np.zeros((4, 4, 4))))
    assert (pick.u, pick.v, pick.theta, pl.u, pl.v, pl.theta) == (0, 0, 0.0, 0, 0, 0.0)


# -- training -----------------------------------------------------------------


def test_labels(demo):
    agent = TransporterAgent(ModelConfig(n=8))
    pick = PickAction(10, 20, 3 * math.pi / 4)
    place = PlaceAction(30, 40, (3 * math.pi / 4 + math.pi / 2) % (2 * math.pi))
    lab = agent.labels(pick, place, (64, 64))
    assert lab == {"pick": (10, 20), "angle": 3, "place": (2, 30, 40)}
    with pytest.raises(ValueError):
        agent.labels(PickAction(64, 0, 0.0), place, (64, 64))


def test_initial_pick_loss_is_near_uniform(demo):
    hw = 64 * 64
    assert softmax_ce(np.zeros((64, 64)), 0)[0] == pytest.approx(math.log(hw))
    for seed in range(3):
        agent = TransporterAgent(ModelConfig(n=8, seed=seed))
        logits = agent.nets["pick"](demo.observation.data.astype(np.float32))[0]
        loss, _ = softmax_ce(logits, (demo.pick.u, demo.pick.v))
        assert abs(loss - math.log(hw)) < 0.5


def test_every_parameter_receives_gradient(demo):
    agent = TransporterAgent(ModelConfig(n=8))
    agent.training_step(demo)
    for name, net in agent.nets.items():
        for i, g in enumerate(net.gradients()):
            assert np.any(g != 0), f"{name} parameter {i}"


@pytest.mark.parametrize("place", ["equivariant", "baseline"])
def test_overfits_a_single_demo(demo, place):
    agent = TransporterAgent(ModelConfig(n=4, place=place, lr=1e-3))
    for _ in range(300):
        losses = agent.training_step(demo)
        if max(losses.values()) < 0.05:
            break
    assert max(losses.values()) < 0.05
    pick, pl = agent.act(demo.observation)
    assert (pick.u, pick.v) == (demo.pick.u, demo.pick.v)
    assert (pl.u, pl.v) == (demo.place.u, demo.place.v)


def test_baseline_pick_builds_plain_nets():
    agent = TransporterAgent(ModelConfig(n=8, pick="baseline", place="baseline"))
    assert agent.nets["pick"].n == 1 and agent.nets["psi"].n == 1
    assert agent.nets["angle"](np.zeros((2, 17, 17), np.float32)).shape == (4, 1, 1)


def test_config_validation():
    for bad in (dict(n=5), dict(pick_crop=16), dict(place="other")):
        with pytest.raises(ValueError):
            ModelConfig(**bad)


# -- persistence and export ---------------------------------------------------


def test_agent_round_trip(demo):
    agent = TransporterAgent(ModelConfig(n=4, lr=1e-3))
    agent.training_step(demo)
    buf = agent.to_bytes({"note": "x"})
    clone, extra = TransporterAgent.from_bytes(buf)
    assert extra["note"] == "x" and clone.config == agent.config
    assert clone.to_bytes({"note": "x"}) == buf
    assert clone.act(demo.observation) == agent.act(demo.observation)
    with pytest.raises(FormatError):
        TransporterAgent.from_bytes(checkpoint_to_bytes({"pick": agent.nets["pick"]}))


def _read_pgm(path):
    raw = path.read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    w, h = (int(t) for t in dims.split())
    return magic, w, h, int(maxval), np.frombuffer(body, dtype=">u2").reshape(h, w)


def test_export_files(demo, tmp_path):
    agent = TransporterAgent(ModelConfig(n=8))
    pm = agent.pick_maps(demo.observation)
    uv = np.unravel_index(int(np.argmax(pm.position)), pm.position.shape)
    place = agent.place_map(demo.observation, uv)
    files = export_maps(pm, place, tmp_path / "a")
    names = sorted(p.name for p in files)
    assert len([x for x in names if x.startswith("place_") and x.endswith(".pgm")]) == 8
    magic, w, h, maxval, img = _read_pgm(tmp_path / "a" / "pick_position.pgm")
    assert (magic, w, h, maxval) == (b"P5", 64, 64, 65535)
    assert img.max() == 65535 and img.min() == 0
    side = json.loads((tmp_path / "a" / "maps.json").read_text())
    assert side["place_channels"] == 8
    lo, hi = side["scales"]["pick_position.pgm"]["min"], side["scales"]["pick_position.pgm"]["max"]
    np.testing.assert_allclose(lo + img / 65535 * (hi - lo), pm.probabilities()[0], atol=(hi - lo) / 65535)
    csv = np.loadtxt(tmp_path / "a" / "pick_angle.csv", delimiter=",")
    assert csv.shape == (4,)
    export_maps(pm, place, tmp_path / "b")
    for p in files:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
