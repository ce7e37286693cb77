"""Numerical certification of the equivariance properties.

Each ``check_*`` function draws fresh random instances, evaluates both sides
of one identity and returns a :class:`Check` with the worst residual.  Two
tolerance profiles exist: ``exact`` for group orders whose rotations are all
quarter turns (n = 1, 2, 4), and ``interp`` for everything else, where
non-quarter rotations are bilinear, inputs are smoothed, residuals are
relative to the reference magnitude and only the rotation-valid interior is
compared.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .fields import (act_array, correlate, crop_array, is_exact, rotate_array, rotate_kernel_operator,
                     rotate_pixel)
from .groups import (compose, element, inverse, permute, quotient, regular, rep_matrix, standard,
                     trivial)
from .nn import (GConv, GroupPool, MaxPool2, Merge, Network, QuotientPool, ReLU, Save, SpatialMean,
                 Upsample2, adam_step, AdamState, angle_net, unet)
from .transporter import _lift_array, place_baseline, place_equivariant

__all__ = ["Check", "profile", "run_suite", "SUITE"]


@dataclass
class Check:
    name: str
    residual: float
    tol: float
    seconds: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual)) and self.residual <= self.tol

    def line(self, timing: bool = True) -> str:
        flag = "PASS" if self.passed else "FAIL"
        t = f"  ({self.seconds:.2f}s)" if timing else ""
        return f"{flag}  {self.name:<24} residual={self.residual:.3e}  tol={self.tol:.0e}{t}  {self.detail}"


def profile(n: int) -> str:
    return "exact" if all(is_exact(element(n, i)) for i in range(n)) else "interp"


_TOL = {
    "exact": {"perm": 0.0, "standard": 1e-12, "lemma81": 1e-10, "net": 1e-8, "grad": 1e-4},
    "interp": {"perm": 0.0, "standard": 1e-12, "lemma81": 5e-2, "net": 5e-2, "grad": 1e-4},
}


# smoothing of test fields in the interpolated profile, in pixels; the coarsest
# U-Net level sees a quarter of this
_SIGMA = 8.0
_BIG = 65
_CROP_EXTENT = 0.3


def _timed(name, tol, fn, *args, **kw):
    t = time.perf_counter()
    res, detail = fn(*args, **kw)
    return Check(name, float(res), tol, time.perf_counter() - t, detail)


class _Cmp:
    """Residual accumulator.

    Exact profile: worst absolute difference.  Interpolated profile: relative
    L2 error pooled over every comparison, sqrt(sum |lhs - rhs|^2 / sum |rhs|^2),
    so a single near-cancelling instance cannot dominate.
    """

    def __init__(self, exact: bool):
        self.exact = exact
        self._max = 0.0
        self._num = 0.0
        self._den = 0.0

    def add(self, lhs, rhs, mask=None):
        lhs, rhs = np.asarray(lhs), np.asarray(rhs)
        if mask is not None and not self.exact:
            lhs, rhs = lhs[..., mask], rhs[..., mask]
        if not lhs.size:
            return
        if self.exact:
            diff = float(np.abs(lhs - rhs).max())
            self._max = max(self._max, diff if np.isfinite(diff) else np.inf)
        else:
            self._num += float(np.sum((lhs - rhs) ** 2))
            self._den += float(np.sum(rhs ** 2))

    @property
    def worst(self) -> float:
        if self.exact:
            return self._max
        if not np.isfinite(self._num) or not np.isfinite(self._den):
            return np.inf
        return float(np.sqrt(self._num / self._den)) if self._den > 0 else (0.0 if self._num == 0 else np.inf)


def _radius(size):
    c = (size - 1) / 2
    yy, xx = np.mgrid[:size, :size]
    return np.hypot(yy - c, xx - c)


def _field(rng, shape, smooth, extent=0.4):
    """White noise, or for the interpolated profile smoothed noise tapered to a
    disk so that no content is lost when rotating by an arbitrary angle."""
    x = rng.normal(size=shape)
    if smooth:
        x = gaussian_filter(x, sigma=(0,) * (len(shape) - 2) + (_SIGMA, _SIGMA))
        # the window is blurred at the same scale so it adds no sharper edges
        size = shape[-1]
        disk = (_radius(size) <= extent * size - 1.5 * _SIGMA).astype(float)
        x *= gaussian_filter(disk, _SIGMA)
        x /= np.abs(x).max()
    return x


def _interior(size, margin):
    """Inscribed disk shrunk by ``margin`` pixels (only used by the interpolated profile)."""
    return _radius(size) <= (size - 1) / 2 - margin


# ----------------------------------------------------------------------------
# group_core


def check_rep_algebra(orders=((4, 1), (8, 1), (36, 2))):
    worst_perm, worst_std = 0.0, 0.0
    for n, k in orders:
        reps = [trivial(n), regular(n), quotient(n, k)] if k > 1 else [trivial(n), regular(n)]
        elems = [element(n, i) for i in range(n)]
        for rep in reps + [standard(n)]:
            mats = {g.index: rep_matrix(rep, g) for g in elems}
            eye = np.eye(rep.dim)
            res = 0.0
            for g in elems:
                res = max(res, np.abs(mats[g.index] @ mats[inverse(g).index] - eye).max())
                for h in elems:
                    res = max(res, np.abs(mats[g.index] @ mats[h.index] - mats[compose(g, h).index]).max())
            if rep.kind == "quotient":
                step = n // k
                for g in elems:
                    res = max(res, np.abs(mats[g.index] - mats[(g.index + step) % n]).max())
            if rep.kind == "standard":
                worst_std = max(worst_std, res)
            else:
                worst_perm = max(worst_perm, res)
    return worst_perm, worst_std


# ----------------------------------------------------------------------------
# tensor_field lemmas


def check_lemma81(n=4, instances=100, seed=0, size=16, r=3):
    """Rotating kernel and field rotates the correlation."""
    rng = np.random.default_rng(seed)
    exact = profile(n) == "exact"
    size = size if exact else _BIG
    cmp = _Cmp(exact)
    for _ in range(instances):
        k = rng.normal(size=(1, 1, r, r))
        if not exact:
            k *= _radius(r) <= (r - 1) / 2  # off-grid rotations keep only the inscribed disk
        f = _field(rng, (1, size, size), not exact)
        base = correlate(f, k, r // 2)
        for i in range(n):
            g = element(n, i)
            kg = (rotate_kernel_operator(r, n, i) @ k.reshape(-1)).reshape(k.shape)
            lhs = rotate_array(base, g)
            rhs = correlate(rotate_array(f, g), kg, r // 2)
            cmp.add(lhs, rhs, _interior(size, r))
    return cmp.worst, f"{instances} instances x {n} rotations"


def check_lemma82(n=4, instances=100, seed=0, size=12, r=3):
    """Permuting diagonal kernels permutes the outputs (bitwise)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    rep = regular(n)
    for _ in range(instances):
        f = rng.normal(size=(1, size, size))
        dup = np.repeat(f, n, axis=0)
        ks = rng.normal(size=(n, r, r))
        diag = np.zeros((n, n, r, r))
        diag[np.arange(n), np.arange(n)] = ks
        out = correlate(dup, diag, r // 2)
        for i in range(n):
            g = element(n, i)
            pk = np.zeros_like(diag)
            pk[np.arange(n), np.arange(n)] = permute(rep, g, ks, axis=0)
            lhs = correlate(dup, pk, r // 2)
            worst = max(worst, float(np.abs(lhs - permute(rep, g, out, axis=0)).max()))
    return worst, f"{instances} instances"


def check_lemma83(n=4, instances=100, seed=0, size=15):
    """Lifting a rotated field cyclically shifts the lifted stack: R(T_g f) = rho(-g) R(f)."""
    rng = np.random.default_rng(seed)
    exact = profile(n) == "exact"
    size = size if exact else _BIG
    cmp = _Cmp(exact)
    rep = regular(n)
    for _ in range(instances):
        f = _field(rng, (1, size, size), not exact)
        lifted = _lift_array(f, n)
        for i in range(n):
            g = element(n, i)
            lhs = _lift_array(rotate_array(f, g), n)
            rhs = permute(rep, inverse(g), lifted, axis=0)
            cmp.add(lhs, rhs, _interior(size, 1))
    return cmp.worst, f"{instances} instances, convention rho_reg(-g)"


# ----------------------------------------------------------------------------
# equi_nn


def _layer_cases(n, rng, untied=False):
    kw = dict(rng=rng, untied=untied)
    return [
        ("trivial->regular", GConv(n, "trivial", 2, "regular", 2, **kw), trivial(n), 2, regular(n)),
        ("regular->regular", GConv(n, "regular", 2, "regular", 3, **kw), regular(n), 2 * n, regular(n)),
        ("trivial->trivial", GConv(n, "trivial", 2, "trivial", 2, **kw), trivial(n), 2, trivial(n)),
        ("group-pool", GroupPool(n), regular(n), 2 * n, trivial(n)),
        ("relu", ReLU(), regular(n), n, regular(n)),
        ("maxpool-even", MaxPool2(), regular(n), n, regular(n)),
        ("maxpool-odd", MaxPool2(), regular(n), n, regular(n)),
        ("upsample-even", Upsample2(False), regular(n), n, regular(n)),
        ("upsample-odd", Upsample2(True), regular(n), n, regular(n)),
    ]


def check_layer_equivariance(n=4, instances=5, seed=0, untied=False):
    rng = np.random.default_rng(seed)
    exact = profile(n) == "exact"
    cmp = _Cmp(exact)
    for _ in range(instances):
        for name, layer, rin, cin, rout in _layer_cases(n, rng, untied):
            size = 17 if name.endswith("odd") else 16
            if not exact:
                size = _BIG if name.endswith("odd") else _BIG - 1
            x = _field(rng, (cin, size, size), not exact)
            if name.startswith("upsample"):
                x = x[:, : (size + 1) // 2, : (size + 1) // 2].copy()
            base = layer.forward(x, {})
            for i in range(n):
                g = element(n, i)
                lhs = layer.forward(act_array(g, x, rin), {})
                rhs = act_array(g, base, rout)
                cmp.add(lhs, rhs, _interior(lhs.shape[-1], 2))
    return cmp.worst, "gconv (3 type pairs), relu, pool, upsample, group pool"


def _tiny_nets(rng):
    """Small networks covering every layer type, for gradient checks."""
    return {
        "gconv trivial->regular": Network([GConv(4, "trivial", 2, "regular", 1, rng=rng)], ("trivial", 2)),
        "gconv regular->regular": Network([GConv(4, "regular", 1, "regular", 2, rng=rng)], ("regular", 1)),
        "gconv trivial->trivial": Network([GConv(4, "trivial", 2, "trivial", 2, r=1, rng=rng)], ("trivial", 2)),
        "gconv C8 (splat)": Network([GConv(8, "regular", 1, "regular", 1, rng=rng)], ("regular", 1)),
        "relu": Network([GConv(4, "trivial", 1, "regular", 1, rng=rng), ReLU()], ("trivial", 1)),
        "maxpool even": Network([MaxPool2()], ("trivial", 2)),
        "maxpool odd": Network([MaxPool2()], ("trivial", 2)),
        "upsample even": Network([Upsample2(False)], ("trivial", 2)),
        "upsample odd": Network([Upsample2(True)], ("trivial", 2)),
        "skip-merge": Network([Save("a"), GConv(1, "trivial", 2, "trivial", 2, rng=rng), Merge("a")],
                              ("trivial", 2)),
        "group-pool": Network([GConv(4, "trivial", 1, "regular", 2, rng=rng), GroupPool(4)], ("trivial", 1)),
        "quotient-pool": Network([GConv(4, "trivial", 1, "regular", 1, rng=rng), QuotientPool(4, 2)],
                                 ("trivial", 1)),
        "spatial-mean": Network([GConv(4, "trivial", 1, "regular", 1, rng=rng), SpatialMean()], ("trivial", 1)),
    }


def _grad_rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def check_gradients(probes=10, seed=0, h=1e-5):
    """Analytic gradients against central finite differences for every layer type."""
    rng = np.random.default_rng(seed)
    worst, names = 0.0, []
    for name, net in _tiny_nets(rng).items():
        size = 9 if "odd" in name else 8
        x = rng.normal(size=(net.in_channels(), size, size))
        y = net(x)
        w = rng.normal(size=y.shape)

        def loss(inp):
            return float((net(inp) * w).sum())

        net.zero_grad()
        net(x)
        dx = net.backward(w)
        grads = [g.copy() for g in net.gradients()]
        for _ in range(probes):
            idx = tuple(int(rng.integers(s)) for s in x.shape)
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            worst = max(worst, _grad_rel(dx[idx], (loss(xp) - loss(xm)) / (2 * h)))
        for p, g in zip(net.parameters(), grads):
            for _ in range(probes):
                idx = tuple(int(rng.integers(s)) for s in p.shape)
                old = p[idx]
                p[idx] = old + h
                lp = loss(x)
                p[idx] = old - h
                lm = loss(x)
                p[idx] = old
                worst = max(worst, _grad_rel(g[idx], (lp - lm) / (2 * h)))
        names.append(name)
    return worst, f"{len(names)} layer types x {probes} probes"


def check_weight_tying(n=4, steps=5, seed=0):
    """Equivariance still holds after Adam updates of the base weights."""
    rng = np.random.default_rng(seed)
    net = Network([GConv(n, "trivial", 1, "regular", 2, rng=rng), ReLU(),
                   GConv(n, "regular", 2, "regular", 1, rng=rng)], ("trivial", 1))
    st = AdamState(lr=1e-2)
    exact = profile(n) == "exact"
    size = 12 if exact else _BIG
    for _ in range(steps):
        x = _field(rng, (1, size, size), not exact)
        y = net(x)
        net.zero_grad()
        net.backward(rng.normal(size=y.shape))
        adam_step(st, net.parameters(), net.gradients())
    cmp = _Cmp(exact)
    x = _field(rng, (1, size, size), not exact)
    base = net(x)
    for i in range(n):
        g = element(n, i)
        cmp.add(net(rotate_array(x, g)), act_array(g, base, regular(n)), _interior(size, 3))
    return cmp.worst, f"after {steps} Adam steps"


# ----------------------------------------------------------------------------
# transporter


def _place_nets(n, rng, untied=False):
    psi = unet(n, 2, (2 * n, 2 * n, 2 * n), odd=True, rng=rng, untied=untied, name="psi")
    phi = unet(n, 2, (2 * n, 2 * n, 2 * n), odd=False, rng=rng, untied=untied, name="phi")
    return psi, phi


def _sizes(n, crop, scene):
    # the interpolated profile needs room for a disk-shaped content window
    if crop is None:
        crop = 13 if profile(n) == "exact" else 41
    if scene is None:
        scene = 32 if profile(n) == "exact" else 96
    return crop, scene


def check_prop1(n=4, instances=50, seed=0, crop=None, scene=None):
    """Baseline place head: rotating the crop shifts angle channels by -g."""
    crop, scene = _sizes(n, crop, scene)
    rng = np.random.default_rng(seed)
    exact = profile(n) == "exact"
    psi = unet(1, 2, (4, 8, 8), odd=True, rng=rng, name="psi_plain")
    phi = unet(1, 2, (4, 8, 8), odd=False, rng=rng, name="phi_plain")
    cmp = _Cmp(exact)
    rep = regular(n)
    for _ in range(instances):
        c = _field(rng, (2, crop, crop), not exact, _CROP_EXTENT)
        o = _field(rng, (2, scene, scene), not exact)
        base = place_baseline(psi, phi, c, o, n).data
        for i in range(n):
            g = element(n, i)
            lhs = place_baseline(psi, phi, rotate_array(c, g), o, n).data
            cmp.add(lhs, permute(rep, inverse(g), base, axis=0))
    return cmp.worst, f"{instances} pairs x {n} rotations"


def _place_sweep(n, instances, seed, untied, crop, scene):
    rng = np.random.default_rng(seed)
    exact = profile(n) == "exact"
    # fresh networks per instance: one ill-conditioned draw cannot dominate
    rep = regular(n)
    d = crop // 2
    sweep, inv, rel = _Cmp(exact), _Cmp(exact), _Cmp(exact)
    margin = 0 if exact else 10
    for _ in range(instances):
        psi, phi = _place_nets(n, rng, untied)
        c = _field(rng, (2, crop, crop), not exact, _CROP_EXTENT)
        o = _field(rng, (2, scene, scene), not exact)
        kern = {i: _lift_array(psi(rotate_array(c, element(n, i))), n) for i in range(n)}
        feat = {i: phi(np.pad(rotate_array(o, element(n, i)), ((0, 0), (d, d), (d, d)))) for i in range(n)}
        base = correlate(feat[0], kern[0])
        for i1 in range(n):
            g1 = element(n, i1)
            for i2 in range(n):
                g2 = element(n, i2)
                lhs = correlate(feat[i2], kern[i1])
                rhs = permute(rep, element(n, i2 - i1), rotate_array(base, g2), axis=0)
                mask = _interior(scene, margin)
                sweep.add(lhs, rhs, mask)
                if i1 == i2:
                    inv.add(lhs, rotate_array(base, g2), mask)
            # relativity: f(T_g c, o) = rho(-g) T_g [f(c, T_-g o)], with T_g acting on the
            # bracketed n-channel map as a regular field (space and channels)
            inner = correlate(feat[(n - i1) % n], kern[0])
            rhs = permute(rep, inverse(g1), act_array(g1, inner, rep), axis=0)
            rel.add(correlate(feat[0], kern[i1]), rhs, _interior(scene, margin))
    return sweep.worst, inv.worst, rel.worst


def check_prop2(n=4, instances=20, seed=0, untied=False, crop=None, scene=None):
    """Equivariant place head: full C_n x C_n sweep plus the two corollaries."""
    crop, scene = _sizes(n, crop, scene)
    s, i, r = _place_sweep(n, instances, seed, untied, crop, scene)
    return max(s, i, r), f"sweep={s:.1e} invariance={i:.1e} relativity={r:.1e}"


def check_exchange(n=4, instances=10, seed=0, crop=None, scene=None):
    """With an equivariant psi, lifting before or after psi gives the same place map."""
    crop, scene = _sizes(n, crop, scene)
    rng = np.random.default_rng(seed)
    exact = profile(n) == "exact"
    # fresh networks per instance: one ill-conditioned draw cannot dominate
    cmp = _Cmp(exact)
    margin = 0 if exact else 4
    for _ in range(instances):
        psi, phi = _place_nets(n, rng)
        c = _field(rng, (2, crop, crop), not exact, _CROP_EXTENT)
        o = _field(rng, (2, scene, scene), not exact)
        a = place_baseline(psi, phi, c, o, n).data
        b = place_equivariant(psi, phi, c, o, n).data
        mask = np.ones((scene, scene), bool) if exact else _interior(scene, margin)
        cmp.add(a, b, mask)
    return cmp.worst, f"{instances} instances"


def check_pick(n=4, instances=5, seed=0, scene=None, crop=None):
    """Pick position equivariance (field and argmax) and the angle head's
    cyclic shift / pi invariance."""
    crop, scene = _sizes(n, crop, scene)
    rng = np.random.default_rng(seed)
    exact = profile(n) == "exact"
    f_p = unet(n, 2, (2 * n, 2 * n, 2 * n), rng=rng, name="pick")
    f_t = angle_net(n, 2, (2 * n, 2 * n), rng=rng)
    field_cmp, shift_cmp, pi_cmp = _Cmp(exact), _Cmp(exact), _Cmp(exact)
    argmax_bad = 0
    qrep = quotient(n, 2)
    for _ in range(instances):
        o = _field(rng, (2, scene, scene), not exact)
        base = f_p(o)[0]
        uv = np.unravel_index(int(np.argmax(base)), base.shape)
        ang = f_t(crop_array(o, uv, crop)).reshape(-1)
        for i in range(n):
            g = element(n, i)
            og = rotate_array(o, g)
            out = f_p(og)[0]
            field_cmp.add(out, rotate_array(base, g), _interior(scene, 8))
            if is_exact(g):
                got = np.unravel_index(int(np.argmax(out)), out.shape)
                want = tuple(int(round(t)) for t in rotate_pixel(uv, g, scene))
                argmax_bad += got != want
                ang_g = f_t(crop_array(og, want, crop)).reshape(-1)
                shift_cmp.add(ang_g, permute(qrep, g, ang))
        c = _field(rng, (2, crop, crop), not exact)
        a0 = f_t(c).reshape(-1)
        pi_cmp.add(f_t(rotate_array(c, element(n, n // 2))).reshape(-1), a0)
    worst = max(field_cmp.worst, shift_cmp.worst, pi_cmp.worst, float(argmax_bad))
    return worst, (f"field={field_cmp.worst:.1e} argmax_mismatch={argmax_bad} "
                   f"shift={shift_cmp.worst:.1e} pi={pi_cmp.worst:.1e}")


# ----------------------------------------------------------------------------
# runner


def SUITE(n: int, untied: bool = False, seed: int = 0, quick: bool = False):
    """``(name, tol, fn, kwargs)`` for every property at group order ``n``."""
    tol = _TOL[profile(n)]
    # interpolated checks run on much larger grids, so they take fewer instances
    if profile(n) == "exact":
        q = (lambda full, small: small if quick else full)
    else:
        q = (lambda full, small: max(1, small // 3) if quick else max(2, small))
    return [
        ("rep-algebra/permutation", tol["perm"], lambda: (check_rep_algebra()[0], "C4, C8, C36/C2"), {}),
        ("rep-algebra/standard", tol["standard"], lambda: (check_rep_algebra()[1], "rho_1"), {}),
        ("lemma-8.1", tol["lemma81"], check_lemma81, dict(n=n, instances=q(100, 10), seed=seed)),
        ("lemma-8.2", tol["perm"], check_lemma82, dict(n=n, instances=q(100, 10), seed=seed)),
        ("lemma-8.3", tol["perm"] if profile(n) == "exact" else tol["net"], check_lemma83,
         dict(n=n, instances=q(100, 10), seed=seed)),
        ("layer-equivariance", tol["net"], check_layer_equivariance,
         dict(n=n, instances=q(5, 1), seed=seed, untied=untied)),
        ("weight-tying", tol["net"], check_weight_tying, dict(n=n, seed=seed)),
        ("gradients", tol["grad"], check_gradients, dict(seed=seed)),
        ("prop-1", tol["net"], check_prop1, dict(n=n, instances=q(50, 5), seed=seed)),
        ("prop-2", tol["net"], check_prop2, dict(n=n, instances=q(20, 3), seed=seed, untied=untied)),
        ("exchange", tol["net"], check_exchange, dict(n=n, instances=q(10, 3), seed=seed)),
        ("pick", tol["net"], check_pick, dict(n=n, instances=q(5, 2), seed=seed)),
    ]


def run_suite(n: int = 4, untied: bool = False, seed: int = 0, quick: bool = False,
              threads: int | None = None) -> list[Check]:
    if threads is None:
        threads = int(os.environ.get("ETP_THREADS", "1") or 1)
    jobs = SUITE(n, untied, seed, quick)

    def run(job):
        name, tol, fn, kw = job
        return _timed(name, tol, fn, **kw)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, jobs))
    return [run(j) for j in jobs]
