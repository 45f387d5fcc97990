import numpy as np
import pytest
from math import erf

from helpers import SEEDS, grad_check
from xrestormer.attention import (
    GdfnParams, MdtaParams, OcaParams, SsabParams, TsabParams, ffn_hidden, gdfn_forward, mdta_forward,
    oca_forward, relative_position_index, ssab_forward, tsab_forward,
)
from xrestormer.errors import ConfigError, ContractError
from xrestormer.nn import layer_norm
from xrestormer.tensor import Tensor

F64 = np.float64


# -- independent numpy oracles --------------------------------------------------------
def np_conv1x1(x, w):
    return np.einsum("oc,bchw->bohw", w[:, :, 0, 0], x)


def np_dw3x3_reflect(x, w):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    out = np.zeros_like(x)
    for c in range(C):
        for u in range(3):
            for v in range(3):
                out[:, c] += w[c, 0, u, v] * xp[:, c, u:u + H, v:v + W]
    return out


def np_softmax(z):
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def np_mdta(x, qkv, dw, proj, temp):
    B, C, H, W = x.shape
    h = len(temp)
    y = np_dw3x3_reflect(np_conv1x1(x, qkv), dw)
    q, k, v = y[:, :C], y[:, C:2 * C], y[:, 2 * C:]
    out = np.zeros_like(x)
    d = C // h
    for b in range(B):
        for head in range(h):
            sl = slice(head * d, (head + 1) * d)
            qh = q[b, sl].reshape(d, H * W)
            kh = k[b, sl].reshape(d, H * W)
            vh = v[b, sl].reshape(d, H * W)
            qh = qh / np.linalg.norm(qh, axis=1, keepdims=True)
            kh = kh / np.linalg.norm(kh, axis=1, keepdims=True)
            attn = np_softmax(qh @ kh.T * temp[head])
            out[b, sl] = (attn @ vh).reshape(d, H, W)
    return np_conv1x1(out, proj)


def np_gelu(z):
    return 0.5 * z * (1 + np.vectorize(erf)(z / np.sqrt(2)))


def np_gdfn(x, w_in, dw, w_out):
    y = np_dw3x3_reflect(np_conv1x1(x, w_in), dw)
    hid = y.shape[1] // 2
    return np_conv1x1(np_gelu(y[:, :hid]) * y[:, hid:], w_out)


def np_oca(x, qkv, proj, table, heads, M, Mo):
    """Window-by-window loops; bias looked up from explicit relative coordinates."""
    B, C, H, W = x.shape
    inner = qkv.shape[0] // 3
    d = inner // heads
    y = np_conv1x1(x, qkv)
    q, k, v = y[:, :inner], y[:, inner:2 * inner], y[:, 2 * inner:]
    pad = (Mo - M) // 2
    kp = np.pad(k, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    vp = np.pad(v, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    span = M + Mo - 1
    out = np.zeros((B, inner, H, W))
    for b in range(B):
        for r0 in range(0, H, M):
            for c0 in range(0, W, M):
                qw = q[b, :, r0:r0 + M, c0:c0 + M].reshape(inner, M * M).T
                kw = kp[b, :, r0:r0 + Mo, c0:c0 + Mo].reshape(inner, Mo * Mo).T
                vw = vp[b, :, r0:r0 + Mo, c0:c0 + Mo].reshape(inner, Mo * Mo).T
                for head in range(heads):
                    sl = slice(head * d, (head + 1) * d)
                    logits = (qw[:, sl] * d ** -0.5) @ kw[:, sl].T
                    for i in range(M * M):
                        qy, qx = divmod(i, M)
                        for j in range(Mo * Mo):
                            ky, kx = divmod(j, Mo)
                            # key position relative to the query, both in image coordinates
                            dy, dx = (ky - pad) - qy, (kx - pad) - qx
                            logits[i, j] += table[(dy + M - 1 + pad) * span + (dx + M - 1 + pad), head]
                    att = np_softmax(logits)
                    out[b, sl, r0:r0 + M, c0:c0 + M] = (att @ vw[:, sl]).T.reshape(d, M, M)
    return np_conv1x1(out, proj)


def plain_window_attention(x, qkv, proj, heads, M):
    """Standard non-overlapping window self-attention, no bias."""
    B, C, H, W = x.shape
    inner = qkv.shape[0] // 3
    d = inner // heads
    y = np_conv1x1(x, qkv)
    out = np.zeros((B, inner, H, W))
    for b in range(B):
        for r0 in range(0, H, M):
            for c0 in range(0, W, M):
                tok = y[b, :, r0:r0 + M, c0:c0 + M].reshape(3 * inner, M * M).T
                for head in range(heads):
                    q = tok[:, head * d:(head + 1) * d] * d ** -0.5
                    k = tok[:, inner + head * d:inner + (head + 1) * d]
                    v = tok[:, 2 * inner + head * d:2 * inner + (head + 1) * d]
                    out[b, head * d:(head + 1) * d, r0:r0 + M, c0:c0 + M] = \
                        (np_softmax(q @ k.T) @ v).T.reshape(d, M, M)
    return np_conv1x1(out, proj)


def _mdta(C, heads, seed=0):
    return MdtaParams.create(C, heads, np.random.default_rng(seed), dtype=F64)


def _oca(C, heads, M=4, gamma=0.5, head_dim=None, seed=0):
    return OcaParams.create(C, heads, np.random.default_rng(seed), M, gamma, head_dim, dtype=F64)


def _x(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


# -- MDTA ----------------------------------------------------------------------------------
def test_mdta_attention_is_channel_by_channel():
    _, attn = mdta_forward(_x((1, 48, 8, 8)), _mdta(48, 1), return_attention=True)
    assert attn.shape == (1, 1, 48, 48)


@pytest.mark.parametrize("C,heads", [(48, 1), (96, 2), (192, 4), (384, 8)])
def test_mdta_rows_sum_to_one_all_levels(C, heads):
    out, attn = mdta_forward(_x((1, C, 4, 4)), _mdta(C, heads), return_attention=True)
    assert attn.shape == (1, heads, C // heads, C // heads)
    assert np.max(np.abs(attn.data.sum(-1) - 1)) < 1e-6
    assert out.shape == (1, C, 4, 4)


def test_mdta_scripted_oracle_tiny_instance():
    C = 4
    # hand-set, non-degenerate (every q/k channel keeps a clearly non-zero norm)
    qkv = np.sin(1.3 * np.arange(3 * C * C, dtype=F64)).reshape(3 * C, C, 1, 1) / 2
    dw = np.cos(0.7 * np.arange(3 * C * 9, dtype=F64)).reshape(3 * C, 1, 3, 3) / 3
    proj = (np.arange(C * C, dtype=F64).reshape(C, C, 1, 1) % 3 - 1) / 2
    temp = np.array([1.5, 0.7])
    p = MdtaParams(Tensor(qkv), Tensor(dw), Tensor(proj), Tensor(temp), heads=2)
    x = np.array([[[[0.1, -0.4], [0.9, 0.3]], [[-0.2, 0.5], [0.0, 0.8]],
                   [[0.6, -0.7], [0.2, 0.1]], [[-0.3, 0.4], [-0.9, 0.6]]]])
    assert np.max(np.abs(mdta_forward(Tensor(x), p).data - np_mdta(x, qkv, dw, proj, temp))) < 1e-10


@pytest.mark.parametrize("seed", SEEDS)
def test_mdta_random_matches_oracle(seed):
    p = _mdta(8, 2, seed)
    x = _x((2, 8, 5, 6), seed)
    ref = np_mdta(x.data, p.qkv.data, p.qkv_dw.data, p.proj.data, p.temperature.data)
    assert np.max(np.abs(mdta_forward(x, p).data - ref)) < 1e-10


def test_mdta_indivisible_heads():
    with pytest.raises(ConfigError):
        MdtaParams.create(6, 4, np.random.default_rng(0))


def _permute(x, perm):
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W)[..., perm].reshape(B, C, H, W)


def test_mdta_permutation_control():
    """Centre-only depthwise kernels (1x1 equivalent) make MDTA equivariant to pixel
    permutations; genuine 3x3 kernels mix neighbours and break it."""
    C, H, W = 8, 6, 6
    rng = np.random.default_rng(5)
    perm = rng.permutation(H * W)
    x = rng.standard_normal((1, C, H, W))
    p = _mdta(C, 2, seed=5)
    centre = np.zeros_like(p.qkv_dw.data)
    centre[:, :, 1, 1] = p.qkv_dw.data[:, :, 1, 1]
    p1 = MdtaParams(p.qkv, Tensor(centre), p.proj, p.temperature, 2)
    lhs = mdta_forward(Tensor(_permute(x, perm)), p1).data
    rhs = _permute(mdta_forward(Tensor(x), p1).data, perm)
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    lhs = mdta_forward(Tensor(_permute(x, perm)), p).data
    rhs = _permute(mdta_forward(Tensor(x), p).data, perm)
    assert np.max(np.abs(lhs - rhs)) > 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_mdta_gradient(seed):
    p = _mdta(4, 2, seed)

    def fn(x, qkv, dw, proj, temp):
        return mdta_forward(x, MdtaParams(qkv, dw, proj, temp, 2))

    rng = np.random.default_rng(seed)
    inputs = [rng.standard_normal((1, 4, 4, 5)), p.qkv.data, p.qkv_dw.data, p.proj.data * 10,
              rng.uniform(0.5, 2.0, 2)]
    assert grad_check(fn, inputs, seed=seed) < 1e-4


# -- OCA ------------------------------------------------------------------------------------
def test_oca_paper_window_attention_extent():
    _, attn = oca_forward(_x((1, 16, 16, 16)), _oca(16, 2, M=8, gamma=0.5), return_attention=True)
    assert attn.shape == (4, 2, 64, 144)


@pytest.mark.parametrize("C,heads,head_dim", [(48, 1, None), (96, 2, None), (192, 4, 16), (384, 8, 16), (8, 1, None)])
def test_oca_rows_sum_to_one_all_levels(C, heads, head_dim):
    rng = np.random.default_rng(C)
    p = OcaParams.create(C, heads, rng, 8, 0.5, head_dim, dtype=F64)
    out, attn = oca_forward(_x((1, C, 8, 16), seed=C), p, return_attention=True)
    assert np.max(np.abs(attn.data.sum(-1) - 1)) < 1e-6
    assert out.shape == (1, C, 8, 16)


def test_oca_gamma0_zero_bias_is_plain_window_attention():
    p = _oca(8, 2, M=4, gamma=0.0)
    p.rpb_table.data[...] = 0
    x = _x((2, 8, 8, 12), seed=3)
    ref = plain_window_attention(x.data, p.qkv.data, p.proj.data, 2, 4)
    assert np.max(np.abs(oca_forward(x, p).data - ref)) < 1e-10


@pytest.mark.parametrize("seed", SEEDS)
def test_oca_matches_loop_oracle_with_overlap_and_bias(seed):
    p = _oca(8, 2, M=4, gamma=0.5, seed=seed)
    p.rpb_table.data[...] = np.random.default_rng(seed).standard_normal(p.rpb_table.shape)
    x = _x((1, 8, 8, 8), seed)
    ref = np_oca(x.data, p.qkv.data, p.proj.data, p.rpb_table.data, 2, 4, 6)
    assert np.max(np.abs(oca_forward(x, p).data - ref)) < 1e-10


def test_oca_head_dim_decouples_width():
    p = _oca(32, 2, M=4, head_dim=4)
    assert p.qkv.shape == (24, 32, 1, 1) and p.proj.shape == (32, 8, 1, 1)
    assert oca_forward(_x((1, 32, 4, 4)), p).shape == (1, 32, 4, 4)


def test_relative_position_index_range_and_centre():
    M, Mo = 8, 12
    idx = relative_position_index(M, Mo)
    span = M + Mo - 1
    assert idx.shape == (64, 144)
    assert idx.min() == 0 and idx.max() == span * span - 1
    # key at the same image position as the query maps to zero offset
    pad = 2
    zero = (M - 1 + pad) * span + (M - 1 + pad)
    for qy, qx in [(0, 0), (3, 5), (7, 7)]:
        assert idx[qy * M + qx, (qy + pad) * Mo + (qx + pad)] == zero


def test_oca_requires_window_multiple():
    with pytest.raises(ContractError):
        oca_forward(_x((1, 8, 6, 8)), _oca(8, 1, M=4))


@pytest.mark.parametrize("seed", SEEDS)
def test_oca_gradient(seed):
    p = _oca(4, 2, M=2, gamma=1.0, seed=seed)

    def fn(x, qkv, proj, table):
        return oca_forward(x, OcaParams(qkv, proj, table, 2, 2, 1.0))

    rng = np.random.default_rng(seed)
    inputs = [rng.standard_normal((1, 4, 4, 4)), p.qkv.data * 20, p.proj.data * 20, rng.standard_normal(p.rpb_table.shape)]
    assert grad_check(fn, inputs, seed=seed) < 1e-4


# -- GDFN -----------------------------------------------------------------------------------
def test_gdfn_hidden_width():
    assert ffn_hidden(48, 2.66) == 127
    assert GdfnParams.create(48, 2.66, np.random.default_rng(0)).hidden == 127


def test_gdfn_zero_gate_gives_zero():
    p = GdfnParams.create(8, 2.66, np.random.default_rng(0), dtype=F64)
    p.project_in.data[: p.hidden] = 0
    assert np.array_equal(gdfn_forward(_x((1, 8, 5, 5)), p).data, np.zeros((1, 8, 5, 5)))


def test_gdfn_scripted_oracle_tiny_instance():
    C, hid = 2, 3
    w_in = (np.arange(2 * hid * C, dtype=F64).reshape(2 * hid, C, 1, 1) % 5 - 2) / 3
    dw = (np.arange(2 * hid * 9, dtype=F64).reshape(2 * hid, 1, 3, 3) % 7 - 3) / 6
    w_out = (np.arange(C * hid, dtype=F64).reshape(C, hid, 1, 1) % 4 - 1.5) / 2
    x = np.array([[[[0.2, -0.5, 0.1], [0.7, 0.0, -0.3]], [[-0.6, 0.4, 0.9], [0.3, -0.1, 0.5]]]])
    p = GdfnParams(Tensor(w_in), Tensor(dw), Tensor(w_out))
    assert np.max(np.abs(gdfn_forward(Tensor(x), p).data - np_gdfn(x, w_in, dw, w_out))) < 1e-10


@pytest.mark.parametrize("seed", SEEDS)
def test_gdfn_gradient(seed):
    p = GdfnParams.create(3, 2.0, np.random.default_rng(seed), dtype=F64)
    fn = lambda x, a, b, c: gdfn_forward(x, GdfnParams(a, b, c))
    rng = np.random.default_rng(seed)
    inputs = [rng.standard_normal((1, 3, 4, 4)), p.project_in.data * 20, p.dw.data, p.project_out.data * 20]
    assert grad_check(fn, inputs, seed=seed) < 1e-4


# -- blocks ---------------------------------------------------------------------------------
def _tsab(C=8, heads=2, seed=0):
    return TsabParams.create(C, heads, 2.66, np.random.default_rng(seed), F64)


def _ssab(C=8, heads=2, seed=0, M=4):
    return SsabParams.create(C, heads, 2.66, np.random.default_rng(seed), F64, window=M, overlap=0.5)


@pytest.mark.parametrize("make,fwd", [(_tsab, tsab_forward), (_ssab, ssab_forward)])
def test_block_zero_projections_is_identity(make, fwd):
    p = make()
    for t in p.output_projections:
        t.data[...] = 0
    x = _x((2, 8, 8, 8), 4)
    assert np.array_equal(fwd(x, p).data, x.data)


@pytest.mark.parametrize("make,fwd", [(_tsab, tsab_forward), (_ssab, ssab_forward)])
@pytest.mark.parametrize("hw", [(8, 8), (6, 10), (5, 3)])
def test_block_shape_preserved(make, fwd, hw):
    x = _x((1, 8) + hw)
    assert fwd(x, make()).shape == x.shape


def test_tsab_matches_manual_composition():
    p = _tsab()
    x = _x((1, 8, 6, 6))
    t = x.data + mdta_forward(layer_norm(x, p.norm1), p.attn).data
    t = Tensor(t)
    out = t.data + gdfn_forward(layer_norm(t, p.norm2), p.ffn).data
    assert tsab_forward(x, p).data.tobytes() == out.tobytes()


def test_ssab_matches_manual_composition():
    p = _ssab()
    x = _x((1, 8, 8, 8))
    s = Tensor(x.data + oca_forward(layer_norm(x, p.norm1), p.attn).data)
    out = s.data + gdfn_forward(layer_norm(s, p.norm2), p.ffn).data
    assert ssab_forward(x, p).data.tobytes() == out.tobytes()


def _block_fn(p, fwd):
    names = [n for n, _ in p.named()]

    def fn(x, *values):
        return fwd(x, _rebuild(p, dict(zip(names, values))))

    return fn, [t.data.copy() for _, t in p.named()]


def _rebuild(p, lookup):
    from dataclasses import replace
    from xrestormer.nn import LayerNormParams
    attn_fields = {k.split(".", 1)[1]: v for k, v in lookup.items() if k.startswith("attn.")}
    ffn_fields = {k.split(".", 1)[1]: v for k, v in lookup.items() if k.startswith("ffn.")}
    return replace(
        p,
        norm1=LayerNormParams(lookup["norm1.gamma"], lookup["norm1.beta"]),
        attn=replace(p.attn, **attn_fields),
        norm2=LayerNormParams(lookup["norm2.gamma"], lookup["norm2.beta"]),
        ffn=replace(p.ffn, **ffn_fields),
    )


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("kind", ["tsab", "ssab"])
def test_block_gradient(kind, seed):
    if kind == "tsab":
        p, fwd = TsabParams.create(4, 2, 2.0, np.random.default_rng(seed), F64), tsab_forward
    else:
        p, fwd = SsabParams.create(4, 2, 2.0, np.random.default_rng(seed), F64, window=2, overlap=1.0), ssab_forward
    for t in p.output_projections:
        t.data *= 20  # lift the 0.02-std projections so the residual branches matter
    fn, values = _block_fn(p, fwd)
    x = np.random.default_rng(seed).standard_normal((1, 4, 4, 4))
    assert grad_check(fn, [x] + values, seed=seed, max_entries=12) < 1e-4
