"""Central finite-difference checks for every differentiable op and network piece.

Small operations are checked entry by entry. Composite networks are checked
along a random unit direction per seed: the analytic directional derivative
``<grad, v>`` is compared with ``(f(x + eps v) - f(x - eps v)) / (2 eps)``.
Non-scalar outputs are reduced with a fixed random weighting first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adversary import (Discriminator, FeatureExtractor, LossWeights, attn_loss, d_loss, g_adv_loss, g_total_loss,
                        ma_gp, recon_loss)
from .autograd import Module, Tape, Tensor, UnsupportedOpError, grad, ops
from .decoder import MCAT, RAT, CrossAffine, DAFTBlock, Generator, LSTMCell, RecurrentState
from .encoder import SMCBlock, SMCEncoder, mask_normalize
from .text import TextBundle, TextEncoder

EPS = 1e-5
TOL = 1e-4
TOL_MAGP = 1e-3
SCOPES = ("tensor-core", "mask-encoder", "daft-decoder", "adversary", "magp")


@dataclass
class Case:
    """Scalar ``fn()`` of ``leaves``; ``full`` selects entrywise rather than directional checking."""

    fn: Callable[[], Tensor]
    leaves: list[Tensor]
    full: bool = True


@dataclass
class Target:
    name: str
    scope: str
    build: Callable[[np.random.Generator], Case]
    tol: float = TOL


@dataclass
class CheckResult:
    name: str
    scope: str
    max_rel_err: float
    tol: float
    seeds: int
    unsupported: str | None = None

    @property
    def passed(self) -> bool:
        return self.unsupported is None and self.max_rel_err <= self.tol

    def line(self) -> str:
        status = f"UNSUPPORTED({self.unsupported})" if self.unsupported else ("PASS" if self.passed else "FAIL")
        return f"{self.scope:<13} {self.name:<26} {self.max_rel_err:10.3e} {self.tol:8.0e} {self.seeds:5d}  {status}"


def _leaf(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _weighted(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Reducer ``out -> sum(out * R)`` with R drawn once."""
    if out.size == 1:
        return lambda t: ops.reshape(t, ()) if t.ndim else t
    r = Tensor(rng.standard_normal(out.shape))
    return lambda t: ops.sum(ops.mul(t, r))


def _scalar_case(fn: Callable[[], Tensor], leaves, rng, full=True) -> Case:
    probe = fn()
    reduce = _weighted(probe, rng)
    return Case(lambda: reduce(fn()), list(leaves), full)


KINKED_OPS = ("relu", "leaky_relu", "abs")
MAX_REDRAWS = 20


def _value(case: Case) -> tuple[float, list[np.ndarray]]:
    """Value of ``case.fn()`` plus the sign pattern at every kinked op.

    Evaluated with grad mode on (some targets differentiate internally), so
    the tape sees every node.
    """
    with Tape() as tape:
        v = float(case.fn().data)
    signs = [r._node.inputs[0].data > 0 for r in tape.records if r._node.op in KINKED_OPS]
    return v, signs


def _same_side(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def check_case(case: Case, rng: np.random.Generator, eps: float = EPS) -> float:
    """Relative error between analytic and central-difference derivatives.

    A difference quotient whose two evaluation points straddle a kink of a
    piecewise-linear op is not an estimate of the derivative; such
    coordinates are skipped and such directions redrawn.
    """
    analytic = [g.data for g in grad(case.fn(), case.leaves)]
    if case.full:
        worst, scale = 0.0, 0.0
        for leaf, ga in zip(case.leaves, analytic):
            base = leaf.data
            num = np.zeros_like(base)
            valid = np.ones(base.shape, dtype=bool)
            for i in np.ndindex(base.shape):
                pts = []
                for sign in (1.0, -1.0):
                    d = base.copy()
                    d[i] += sign * eps
                    leaf.data = d
                    pts.append(_value(case))
                leaf.data = base
                num[i] = (pts[0][0] - pts[1][0]) / (2 * eps)
                valid[i] = _same_side(pts[0][1], pts[1][1])
            if valid.any():
                worst = max(worst, float(np.max(np.abs(num - ga)[valid])))
            scale = max(scale, float(np.max(np.abs(num), initial=0.0)), float(np.max(np.abs(ga), initial=0.0)))
        return worst / max(scale, 1e-8)
    bases = [leaf.data for leaf in case.leaves]
    for _ in range(MAX_REDRAWS):
        dirs = [rng.standard_normal(leaf.shape) for leaf in case.leaves]
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in dirs))
        dirs = [v / norm for v in dirs]  # unit direction: the step length is exactly eps
        pts = []
        for sign in (1.0, -1.0):
            for leaf, base, v in zip(case.leaves, bases, dirs):
                leaf.data = base + sign * eps * v
            pts.append(_value(case))
        for leaf, base in zip(case.leaves, bases):
            leaf.data = base
        if _same_side(pts[0][1], pts[1][1]):
            break
    a = sum(float(np.sum(ga * v)) for ga, v in zip(analytic, dirs))
    n = (pts[0][0] - pts[1][0]) / (2 * eps)
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _randomize(module: Module, rng: np.random.Generator, scale: float = 0.3) -> list[Tensor]:
    """Give every parameter (including zero-initialized ones) a generic random value."""
    params = module.parameters()
    for p in params:
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return params


def _away(rng, shape, gap=0.05):
    """Normal samples kept at least ``gap`` from zero (avoids kinks)."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap + x, x)


def _distinct(rng, shape, gap=0.01):
    """Values whose pairwise gaps exceed ``gap`` (unique max-pool winners)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, n)).reshape(shape)


def _unary(name, op, sample=None):
    def build(rng):
        x = _leaf(sample(rng, (2, 3, 4)) if sample else rng.standard_normal((2, 3, 4)))
        return _scalar_case(lambda: op(x), [x], rng)
    return Target(name, "tensor-core", build)


def _binary(name, op):
    def build(rng):
        a, b = _leaf(rng.standard_normal((3, 4))), _leaf(rng.standard_normal((3, 4)))
        return _scalar_case(lambda: op(a, b), [a, b], rng)
    return Target(name, "tensor-core", build)


def _conv_case(k, s, p):
    def build(rng):
        x = _leaf(rng.standard_normal((2, 3, 6, 6)))
        w = _leaf(rng.standard_normal((4, 3, k, k)))
        b = _leaf(rng.standard_normal(4))
        return _scalar_case(lambda: ops.conv2d(x, w, b, s, p), [x, w, b], rng)
    return build


def _conv_input_grad_case(rng):
    g = _leaf(rng.standard_normal((2, 4, 3, 3)))
    w = _leaf(rng.standard_normal((4, 3, 4, 4)))
    return _scalar_case(lambda: ops.conv2d_input_grad(g, w, (2, 3, 6, 6), 2, 1), [g, w], rng)


def _conv_weight_grad_case(rng):
    x = _leaf(rng.standard_normal((2, 3, 6, 6)))
    g = _leaf(rng.standard_normal((2, 4, 6, 6)))
    return _scalar_case(lambda: ops.conv2d_weight_grad(x, g, (4, 3, 3, 3), 1, 1), [x, g], rng)


def _double_conv_case(rng):
    """Squared input-gradient norm of a conv net: exercises the double-backward family."""
    x = _leaf(rng.standard_normal((2, 2, 5, 5)))
    w1 = _leaf(rng.standard_normal((3, 2, 3, 3)))
    w2 = _leaf(rng.standard_normal((1, 3, 4, 4)))

    def fn():
        h = ops.leaky_relu(ops.conv2d(x, w1, None, 1, 1))
        out = ops.sum(ops.conv2d(h, w2, None, 2, 1))
        (gx,) = grad(out, [x], create_graph=True)
        return ops.sum(ops.mul(gx, gx))
    return Case(fn, [x, w1, w2], True)


def _double_mlp_case(rng):
    x = _leaf(rng.standard_normal((3, 4)))
    w = _leaf(rng.standard_normal((5, 4)))
    b = _leaf(rng.standard_normal(5))

    def fn():
        out = ops.sum(ops.power(ops.leaky_relu(ops.linear(x, w, b)), 2.0))
        (gx,) = grad(out, [x], create_graph=True)
        return ops.sqrt(ops.sum(ops.mul(gx, gx)))
    return Case(fn, [x, w, b], True)


def _tensor_core_targets() -> list[Target]:
    pos = lambda rng, shape: rng.uniform(0.5, 2.0, shape)  # noqa: E731
    t = [
        _binary("add", ops.add), _binary("sub", ops.sub), _binary("mul", ops.mul),
        _unary("neg", ops.neg), _unary("scale", lambda x: ops.scale(x, -1.7)),
        _unary("power", lambda x: ops.power(x, 2.5), pos), _unary("sqrt", ops.sqrt, pos),
        _unary("relu", ops.relu, _away), _unary("leaky_relu", ops.leaky_relu, _away),
        _unary("tanh", ops.tanh), _unary("sigmoid", ops.sigmoid), _unary("abs", ops.abs, _away),
        _unary("exp", ops.exp), _unary("sum_axis", lambda x: ops.sum(x, axis=(0, 2))),
        _unary("mean_axis", lambda x: ops.mean(x, axis=1, keepdims=True)),
        _unary("square_norm", ops.square_norm), _unary("reshape", lambda x: ops.reshape(x, (6, 4))),
        _unary("transpose", lambda x: ops.transpose(x, (2, 0, 1))),
        _unary("broadcast_to", lambda x: ops.broadcast_to(ops.reshape(x, (1, 2, 3, 4)), (3, 2, 3, 4))),
        _unary("getitem", lambda x: ops.getitem(x, (slice(None), slice(1, 3), 2))),
        _unary("concat", lambda x: ops.concat([x, ops.mul(x, x)], axis=1)),
        _unary("split", lambda x: ops.mul(*ops.split(x, [2, 2], axis=2))),
        _unary("softmax", lambda x: ops.softmax(x, axis=-1)),
        _unary("upsample", lambda x: ops.upsample_nearest2x(ops.reshape(x, (1, 2, 3, 4)))),
        _unary("spatial_replicate", lambda x: ops.spatial_replicate(x, 2, 3)),
        _unary("max_pool2d", lambda x: ops.max_pool2d(ops.reshape(x, (1, 2, 3, 4)), 2, 1, 1), _distinct),
        Target("matmul", "tensor-core", lambda rng: (lambda a, b: _scalar_case(
            lambda: ops.matmul(a, b), [a, b], rng))(_leaf(rng.standard_normal((2, 3, 4))),
                                                    _leaf(rng.standard_normal((2, 4, 5))))),
        Target("linear", "tensor-core", lambda rng: (lambda x, w, b: _scalar_case(
            lambda: ops.linear(x, w, b), [x, w, b], rng))(_leaf(rng.standard_normal((2, 3, 4))),
                                                          _leaf(rng.standard_normal((5, 4))),
                                                          _leaf(rng.standard_normal(5)))),
        Target("embedding", "tensor-core", lambda rng: (lambda tab, idx: _scalar_case(
            lambda: ops.embedding(tab, idx), [tab], rng))(_leaf(rng.standard_normal((6, 3))),
                                                          rng.integers(0, 6, size=(2, 4)))),
        Target("conv2d_k3s1p1", "tensor-core", _conv_case(3, 1, 1)),
        Target("conv2d_k4s2p1", "tensor-core", _conv_case(4, 2, 1)),
        Target("conv2d_input_grad", "tensor-core", _conv_input_grad_case),
        Target("conv2d_weight_grad", "tensor-core", _conv_weight_grad_case),
        Target("double_backward_conv", "tensor-core", _double_conv_case),
        Target("double_backward_mlp", "tensor-core", _double_mlp_case),
    ]
    return t


def _mask(rng, shape, p=0.4):
    return (rng.uniform(size=shape) < p).astype(np.float64)


def _mask_normalize_case(rng):
    f = _leaf(rng.standard_normal((2, 3, 5, 5)))
    sc, sh = _leaf(rng.standard_normal(3)), _leaf(rng.standard_normal(3))
    m = _mask(rng, (2, 5, 5))
    return _scalar_case(lambda: mask_normalize(f, m, sc, sh), [f, sc, sh], rng)


def _smc_case(rng):
    block = SMCBlock(3, 4, 4, 2, 1, rng)
    params = _randomize(block, rng)
    f = _leaf(rng.standard_normal((2, 3, 8, 8)))
    m = _mask(rng, (2, 8, 8))
    return _scalar_case(lambda: block(f, m)[0], [f] + params, rng, full=False)


def _encoder_case(rng):
    enc = SMCEncoder(3, [4, 6, 8], rng=rng)
    params = _randomize(enc, rng)
    x = _leaf(rng.uniform(-1, 1, (2, 3, 16, 16)))
    m = _mask(rng, (2, 16, 16))

    def fn():
        pyr = enc(x, m)
        return ops.concat([ops.reshape(pyr[j][0], (2, -1)) for j in range(1, 4)], axis=1)
    return _scalar_case(fn, [x] + params, rng, full=False)


def _text(rng, n=2, length=3, dim=6) -> tuple[TextBundle, list[Tensor]]:
    words = _leaf(rng.standard_normal((n, length, dim)))
    sentence = _leaf(rng.standard_normal((n, dim)))
    valid = np.ones((n, length), dtype=bool)
    valid[0, -1] = False
    return TextBundle(words, sentence, valid), [words, sentence]


def _lstm_case(rng):
    cell = LSTMCell(5, 4, rng)
    params = _randomize(cell, rng)
    x = _leaf(rng.standard_normal((2, 5)))
    h, c = _leaf(rng.standard_normal((2, 4))), _leaf(rng.standard_normal((2, 4)))

    def fn():
        st = cell(x, RecurrentState(h, c, 0))
        return ops.concat([st.h, st.c], axis=1)
    return _scalar_case(fn, [x, h, c] + params, rng, full=False)


def _rat_case(rng):
    rat = RAT(3, 6, rng)
    params = _randomize(rat, rng)
    f = _leaf(rng.standard_normal((2, 3, 4, 4)))
    text, tl = _text(rng)
    state = RecurrentState(_leaf(rng.standard_normal((2, 6))), _leaf(rng.standard_normal((2, 6))), 0)
    return _scalar_case(lambda: rat(f, text.sentence, state)[0], [f, tl[1], state.h, state.c] + params, rng,
                        full=False)


def _cross_affine_case(rng):
    layer = CrossAffine(3, 6, rng)
    params = _randomize(layer, rng)
    x = _leaf(rng.standard_normal((2, 3, 4, 4)))
    h = _leaf(rng.standard_normal((2, 6)))
    text, tl = _text(rng)
    return _scalar_case(lambda: layer(x, h, text), [x, h] + tl + params, rng, full=False)


def _mcat_case(rng):
    layer = MCAT(3, 4, 6, rng)
    params = _randomize(layer, rng)
    x = _leaf(rng.standard_normal((2, 3, 4, 4)))
    prev = _leaf(rng.standard_normal((2, 4, 2, 2)))
    h = _leaf(rng.standard_normal((2, 6)))
    text, tl = _text(rng)
    return _scalar_case(lambda: layer(x, text, h, prev, True), [x, prev, h] + tl + params, rng, full=False)


def _daft_block_case(rng):
    block = DAFTBlock(4, 3, 5, 2, 6, True, rng)
    params = _randomize(block, rng)
    g = _leaf(rng.standard_normal((2, 4, 2, 2)))
    skip = _leaf(rng.standard_normal((2, 5, 4, 4)))
    prev = _leaf(rng.standard_normal((2, 2, 2, 2)))
    text, tl = _text(rng)
    state = RecurrentState(_leaf(rng.standard_normal((2, 6))), _leaf(rng.standard_normal((2, 6))), 1)

    def fn():
        g_out, s_out, st = block(g, skip, text, state, prev)
        return ops.concat([ops.reshape(g_out, (2, -1)), ops.reshape(s_out, (2, -1)), st.h], axis=1)
    return _scalar_case(fn, [g, skip, prev, state.h, state.c] + tl + params, rng, full=False)


def _generator_case(rng):
    gen = Generator(3, [4, 6, 8], dim=6, noise_dim=5, spatial_channels=3, seed=int(rng.integers(2 ** 31)))
    params = _randomize(gen, rng, scale=0.2)
    x = _leaf(rng.uniform(-1, 1, (2, 3, 16, 16)))
    m = _mask(rng, (2, 16, 16))
    z = _leaf(rng.standard_normal((2, 5)))
    text, tl = _text(rng)
    return _scalar_case(lambda: gen(x, m, z, text).composited, [x, z] + tl + params, rng, full=False)


def _text_encoder_case(rng):
    enc = TextEncoder(dim=5, seed=int(rng.integers(2 ** 31)), scale=1.0)
    toks = [[1, 4, 7], [2, 3]]

    def fn():
        tb = enc.encode_batch(toks)
        return ops.concat([ops.reshape(tb.words, (2, -1)), tb.sentence], axis=1)
    return _scalar_case(fn, enc.parameters(), rng)


def _disc(rng, size=16):
    d = Discriminator(size, channels=4, dim=6, max_channels=8, seed=int(rng.integers(2 ** 31)))
    return d, _randomize(d, rng, scale=0.1)


def _disc_case(rng):
    d, params = _disc(rng)
    x = _leaf(rng.uniform(-1, 1, (2, 3, 16, 16)))
    s = _leaf(rng.standard_normal((2, 6)))
    return _scalar_case(lambda: d(x, s), [x, s] + params, rng, full=False)


def _recon_case(rng):
    fe = FeatureExtractor(seed=int(rng.integers(2 ** 31)))
    xh = _leaf(rng.uniform(-1, 1, (2, 3, 8, 8)))
    x = rng.uniform(-1, 1, (2, 3, 8, 8))
    return _scalar_case(lambda: recon_loss(xh, Tensor(x), fe), [xh], rng, full=False)


def _adv_case(rng):
    d, params = _disc(rng)
    xh = _leaf(rng.uniform(-1, 1, (2, 3, 16, 16)))
    s = _leaf(rng.standard_normal((2, 6)))
    return _scalar_case(lambda: g_adv_loss(d, xh, s), [xh, s] + params, rng, full=False)


def _attn_case(rng):
    xh = _leaf(rng.uniform(-1, 1, (2, 3, 4, 4)))
    x = xh.data + _away(rng, (2, 3, 4, 4), 0.05)
    a = rng.uniform(0.1, 1.0, (2, 1, 4, 4))
    return _scalar_case(lambda: attn_loss(xh, Tensor(x), a), [xh], rng)


def _g_total_case(rng):
    comps = [_leaf(rng.standard_normal(())) for _ in range(4)]
    w = LossWeights()
    return _scalar_case(lambda: g_total_loss(*comps, w).total, comps, rng)


def _magp_case(rng):
    d, params = _disc(rng)
    x = _leaf(rng.uniform(-1, 1, (2, 3, 16, 16)))
    s = _leaf(rng.standard_normal((2, 6)))
    return _scalar_case(lambda: ma_gp(d, x, s, 2.0, 6.0)[0], params, rng, full=False)


def _d_loss_case(rng):
    d, params = _disc(rng)
    x = rng.uniform(-1, 1, (2, 3, 16, 16))
    xf = rng.uniform(-1, 1, (2, 3, 16, 16))
    s, s_mis = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
    return _scalar_case(lambda: d_loss(d, Tensor(x), Tensor(xf), Tensor(s), Tensor(s_mis), 2.0, 6.0).total,
                        params, rng, full=False)


def all_targets() -> list[Target]:
    return _tensor_core_targets() + [
        Target("mask_normalize", "mask-encoder", _mask_normalize_case),
        Target("smc_block", "mask-encoder", _smc_case),
        Target("smc_encoder", "mask-encoder", _encoder_case),
        Target("text_encoder", "daft-decoder", _text_encoder_case),
        Target("lstm_cell", "daft-decoder", _lstm_case),
        Target("rat_step", "daft-decoder", _rat_case),
        Target("cross_affine", "daft-decoder", _cross_affine_case),
        Target("mcat", "daft-decoder", _mcat_case),
        Target("daft_block", "daft-decoder", _daft_block_case),
        Target("generator_16px", "daft-decoder", _generator_case),
        Target("discriminator_16px", "adversary", _disc_case),
        Target("recon_loss", "adversary", _recon_case),
        Target("g_adv_loss", "adversary", _adv_case),
        Target("attn_loss", "adversary", _attn_case),
        Target("g_total_loss", "adversary", _g_total_case),
        Target("ma_gp", "magp", _magp_case, TOL_MAGP),
        Target("d_loss", "magp", _d_loss_case, TOL_MAGP),
    ]


def targets_for(scope: str) -> list[Target]:
    if scope == "all":
        return all_targets()
    if scope not in SCOPES:
        raise ValueError(f"unknown grad-check scope {scope!r}; choose from {', '.join(SCOPES + ('all',))}")
    return [t for t in all_targets() if t.scope == scope]


def run_target(target: Target, seeds: int = 50, eps: float = EPS) -> CheckResult:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng([seed, 0x6C])
        try:
            case = target.build(rng)
            worst = max(worst, check_case(case, rng, eps))
        except UnsupportedOpError as exc:
            return CheckResult(target.name, target.scope, float("nan"), target.tol, seed + 1, exc.op)
    return CheckResult(target.name, target.scope, worst, target.tol, seeds)


def run_scope(scope: str, seeds: int = 50, on_result: Callable[[CheckResult], None] | None = None):
    results = []
    for target in targets_for(scope):
        res = run_target(target, seeds)
        results.append(res)
        if on_result is not None:
            on_result(res)
    return results
