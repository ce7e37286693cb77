"""Pick and place heads of (Equivariant) Transporter Net.

``f_p``: scene -> pick position logits.  ``f_theta``: crop -> ``n/2`` gripper
angle logits.  Place: an encoding of the crop around the pick is rotated ``n``
times and cross-correlated with an encoding of the padded scene, giving one
logit per (angle channel, pixel).

Place channels encode the rotation the object undergoes between pick and
place, so the absolute place yaw is ``theta_pick + 2*pi*j/n``.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .fields import (FeatureField, FormatError, correlate, correlate_backward, crop_array, rotate_array,
                     rotate_array_adjoint)
from .groups import element, from_angle
from .nn import (AdamState, GConv, Network, ReLU, MaxPool2, SpatialMean, adam_step,
                 angle_net, checkpoint_from_bytes, checkpoint_to_bytes, softmax_ce, unet)

__all__ = [
    "PickAction",
    "PlaceAction",
    "PickMaps",
    "PlaceMap",
    "ModelConfig",
    "TransporterAgent",
    "pick_position",
    "pick_angle",
    "place_equivariant",
    "place_baseline",
    "decode",
    "softmax",
    "plain_angle_net",
    "export_maps",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PickAction:
    u: int
    v: int
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.theta < math.pi:
            raise ValueError(f"pick angle {self.theta} outside [0, pi)")


@dataclass(frozen=True)
class PlaceAction:
    u: int
    v: int
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.theta < TWO_PI:
            raise ValueError(f"place angle {self.theta} outside [0, 2*pi)")


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class PickMaps:
    position: np.ndarray  # H x W logits
    angle: np.ndarray  # n/2 logits at the argmax position

    def probabilities(self):
        return softmax(self.position), softmax(self.angle)


@dataclass
class PlaceMap:
    data: np.ndarray  # n x H x W logits, channel j <-> rotation 2*pi*j/n

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def probabilities(self) -> np.ndarray:
        return softmax(self.data)


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, FeatureField) else np.asarray(x)


# ----------------------------------------------------------------------------
# heads


def pick_position(f_p: Network, o_t) -> np.ndarray:
    """Pick position logits, one per pixel."""
    return f_p(_arr(o_t))[0]


def pick_angle(f_theta: Network, crop) -> np.ndarray:
    """``n/2`` logits for gripper angles ``2*pi*i/n``, ``0 <= i < n/2``."""
    c = _arr(crop)
    if c.shape[-1] != c.shape[-2]:
        raise ValueError(f"angle crop must be square, got {c.shape}")
    return f_theta(c).reshape(-1)


def _lift_array(x: np.ndarray, n: int) -> np.ndarray:
    return np.stack([rotate_array(x, element(n, i)) for i in range(n)])


def _check_embeddings(k: np.ndarray, f: np.ndarray):
    if k.shape[1] != f.shape[0]:
        raise ValueError(f"crop encoder gives {k.shape[1]} channels, scene encoder {f.shape[0]}")


def place_equivariant(psi: Network, phi: Network, c, o_t, n: int, d: int | None = None) -> PlaceMap:
    """``R_n[psi(c)] * phi(pad(o_t))``: psi runs once, its output is lifted."""
    c, o = _arr(c), _arr(o_t)
    d = c.shape[-1] // 2 if d is None else d
    kern = _lift_array(psi(c), n)
    feat = phi(np.pad(o, ((0, 0), (d, d), (d, d))))
    _check_embeddings(kern, feat)
    return PlaceMap(correlate(feat, kern))


def place_baseline(psi_plain: Network, phi_plain: Network, c, o_t, n: int, d: int | None = None) -> PlaceMap:
    """``psi(R_n(c)) * phi(pad(o_t))``: the crop is lifted first, psi runs per slice."""
    c, o = _arr(c), _arr(o_t)
    d = c.shape[-1] // 2 if d is None else d
    kern = np.stack([psi_plain(s) for s in _lift_array(c, n)])
    feat = phi_plain(np.pad(o, ((0, 0), (d, d), (d, d))))
    _check_embeddings(kern, feat)
    return PlaceMap(correlate(feat, kern))


def decode(pick_maps: PickMaps, place_map: PlaceMap) -> tuple[PickAction, PlaceAction]:
    """Argmax decoding; ties go to the smallest row-major pixel, then channel."""
    pos = pick_maps.position
    u, v = np.unravel_index(int(np.argmax(pos)), pos.shape)
    half = pick_maps.angle.shape[0]
    n = place_map.n
    i = int(np.argmax(pick_maps.angle))
    theta_pick = math.pi * i / half
    hwn = np.moveaxis(place_map.data, 0, -1)
    pu, pv, j = np.unravel_index(int(np.argmax(hwn)), hwn.shape)
    theta_place = (theta_pick + TWO_PI * j / n) % TWO_PI
    return PickAction(int(u), int(v), theta_pick), PlaceAction(int(pu), int(pv), theta_place)


def plain_angle_net(bins, in_channels, widths=(8, 16), r=3, rng=None, dtype=np.float64,
                    name="angle"):
    """Unconstrained CNN with ``bins`` angle logits (non-equivariant pick ablation)."""
    kw = dict(r=r, rng=rng, dtype=dtype)
    m1, m2 = widths
    layers = [
        GConv(1, "trivial", in_channels, "regular", m1, **kw), ReLU(),
        GConv(1, "regular", m1, "regular", m1, **kw), ReLU(),
        MaxPool2(),
        GConv(1, "regular", m1, "regular", m2, **kw), ReLU(),
        MaxPool2(),
        GConv(1, "regular", m2, "regular", m2, **kw), ReLU(),
        GConv(1, "regular", m2, "regular", bins, **kw),
        SpatialMean(),
    ]
    return Network(layers, ("trivial", in_channels), name)


# ----------------------------------------------------------------------------
# agent


@dataclass
class ModelConfig:
    n: int = 8
    in_channels: int = 2
    pick_crop: int = 17
    place_crop: int = 25
    widths: tuple = (8, 16, 32)
    angle_widths: tuple = (8, 16)
    pick: str = "equivariant"  # or "baseline"
    place: str = "equivariant"  # or "baseline"
    lr: float = 1e-4
    seed: int = 0
    untied: bool = False

    def __post_init__(self):
        if self.n % 2:
            raise ValueError("group order must be even (gripper quotient C_n/C_2)")
        for size in (self.pick_crop, self.place_crop):
            if size % 2 == 0:
                raise ValueError("crop sizes must be odd")
        if self.pick not in ("equivariant", "baseline") or self.place not in ("equivariant", "baseline"):
            raise ValueError("pick/place must be 'equivariant' or 'baseline'")
        self.widths = tuple(self.widths)
        self.angle_widths = tuple(self.angle_widths)


class TransporterAgent:
    """The four networks, their Adam states, inference and one training step."""

    def __init__(self, config: ModelConfig | None = None, dtype=np.float32, networks=None, adam=None):
        self.config = cfg = config or ModelConfig()
        self.dtype = dtype
        if networks is None:
            rng = np.random.default_rng(cfg.seed)
            n, c = cfg.n, cfg.in_channels
            kw = dict(rng=rng, dtype=dtype, untied=cfg.untied)
            gp = n if cfg.pick == "equivariant" else 1
            gq = n if cfg.place == "equivariant" else 1
            networks = {
                "pick": unet(gp, c, cfg.widths, odd=False, name="pick", **kw),
                "angle": (angle_net(n, c, cfg.angle_widths, name="angle", **kw)
                          if cfg.pick == "equivariant"
                          else plain_angle_net(n // 2, c, cfg.angle_widths, rng=rng, dtype=dtype)),
                "psi": unet(gq, c, cfg.widths, odd=True, name="psi", **kw),
                "phi": unet(gq, c, cfg.widths, odd=False, name="phi", **kw),
            }
        self.nets = networks
        self.adam = adam or {k: AdamState(lr=cfg.lr) for k in self.nets}

    # -- inference ---------------------------------------------------------
    def _obs(self, obs) -> np.ndarray:
        return _arr(obs).astype(self.dtype, copy=False)

    def pick_maps(self, obs) -> PickMaps:
        o = self._obs(obs)
        pos = pick_position(self.nets["pick"], o)
        u, v = np.unravel_index(int(np.argmax(pos)), pos.shape)
        ang = pick_angle(self.nets["angle"], crop_array(o, (u, v), self.config.pick_crop))
        return PickMaps(pos, ang)

    def place_map(self, obs, pick_uv) -> PlaceMap:
        o = self._obs(obs)
        c = crop_array(o, pick_uv, self.config.place_crop)
        head = place_equivariant if self.config.place == "equivariant" else place_baseline
        return head(self.nets["psi"], self.nets["phi"], c, o, self.config.n)

    def act(self, obs) -> tuple[PickAction, PlaceAction]:
        pm = self.pick_maps(obs)
        u, v = np.unravel_index(int(np.argmax(pm.position)), pm.position.shape)
        return decode(pm, self.place_map(obs, (u, v)))

    # -- training ----------------------------------------------------------
    def labels(self, pick: PickAction, place: PlaceAction, shape) -> dict:
        n = self.config.n
        h, w = shape
        for a in (pick, place):
            if not (0 <= a.u < h and 0 <= a.v < w):
                raise ValueError(f"action {a} outside the {h}x{w} scene")
        rel = (place.theta - pick.theta) % TWO_PI
        return {
            "pick": (pick.u, pick.v),
            "angle": from_angle(pick.theta, n).index % (n // 2),
            "place": (from_angle(rel, n).index, place.u, place.v),
        }

    def training_step(self, demo) -> dict:
        """Three cross-entropy losses on one demonstration, one Adam step per network."""
        cfg, nets = self.config, self.nets
        o = self._obs(demo.observation)
        lab = self.labels(demo.pick, demo.place, o.shape[-2:])
        for net in nets.values():
            net.zero_grad()
        losses = {}

        logits = nets["pick"](o)
        losses["pick"], g = softmax_ce(logits[0], lab["pick"])
        nets["pick"].backward(g[None])

        c_pick = crop_array(o, lab["pick"], cfg.pick_crop)
        logits = nets["angle"](c_pick)
        losses["angle"], g = softmax_ce(logits.reshape(-1), lab["angle"])
        nets["angle"].backward(g.reshape(logits.shape))

        n = cfg.n
        c = crop_array(o, lab["pick"], cfg.place_crop)
        d = cfg.place_crop // 2
        feat = nets["phi"](np.pad(o, ((0, 0), (d, d), (d, d))))
        psi = nets["psi"]
        if cfg.place == "equivariant":
            kern = _lift_array(psi(c), n)
        else:
            lifted = _lift_array(c, n)
            kern = np.stack([psi(s) for s in lifted])
        logits = correlate(feat, kern)
        losses["place"], g = softmax_ce(logits, lab["place"])
        dfeat, dkern = correlate_backward(feat, kern, g)
        nets["phi"].backward(dfeat)
        if cfg.place == "equivariant":
            dpsi = sum(rotate_array_adjoint(dkern[i], element(n, i)) for i in range(n))
            psi.backward(dpsi)
        else:
            for i in range(n):
                psi(lifted[i])
                psi.backward(dkern[i])

        for name, net in nets.items():
            adam_step(self.adam[name], net.parameters(), net.gradients())
        return losses

    # -- persistence -------------------------------------------------------
    def state_dict(self):
        return [p.copy() for net in self.nets.values() for p in net.parameters()]

    def load_state(self, arrays):
        it = iter(arrays)
        for net in self.nets.values():
            for p in net.parameters():
                p[...] = next(it)

    def to_bytes(self, extra: dict | None = None) -> bytes:
        meta = {"model_config": asdict(self.config)}
        meta.update(extra or {})
        return checkpoint_to_bytes(self.nets, self.adam, meta)

    @classmethod
    def from_bytes(cls, buf: bytes) -> tuple["TransporterAgent", dict]:
        nets, adam, extra = checkpoint_from_bytes(buf)
        try:
            cfg = ModelConfig(**extra["model_config"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"checkpoint lacks a usable model config: {exc!r}") from exc
        if set(nets) != {"pick", "angle", "psi", "phi"}:
            raise FormatError(f"checkpoint holds networks {sorted(nets)}, not a pick-place agent")
        nets = {k: nets[k] for k in ("pick", "angle", "psi", "phi")}
        return cls(cfg, np.float32, nets, adam), extra

    def clone(self) -> "TransporterAgent":
        return copy.deepcopy(self)


# ----------------------------------------------------------------------------
# map export


def _write_pgm(path: Path, img: np.ndarray) -> dict:
    lo, hi = float(img.min()), float(img.max())
    scale = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    q = np.round(scale * 65535).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(q.tobytes())
    return {"min": lo, "max": hi}


def _write_csv(path: Path, img: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(img), delimiter=",", fmt="%.9g")


def export_maps(pick_maps: PickMaps, place_map: PlaceMap, out_dir) -> list[Path]:
    """Write probability maps as 16-bit PGM + CSV, with a JSON sidecar of scales."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p_pos, p_ang = pick_maps.probabilities()
    p_place = place_map.probabilities()
    maps = {"pick_position": p_pos, "pick_angle": p_ang[None, :]}
    for j in range(place_map.n):
        maps[f"place_{j:02d}"] = p_place[j]
    scales, files = {}, []
    for name, img in maps.items():
        pgm, csv = out / f"{name}.pgm", out / f"{name}.csv"
        scales[pgm.name] = _write_pgm(pgm, img.astype(np.float64))
        _write_csv(csv, img)
        files += [pgm, csv]
    side = out / "maps.json"
    side.write_text(json.dumps({"scales": scales, "place_channels": place_map.n}, indent=2,
                               sort_keys=True))
    files.append(side)
    return files
