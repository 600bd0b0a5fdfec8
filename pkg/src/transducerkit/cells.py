"""Layer-normalized recurrent cells with hand-written backward passes.

Two cells: an LSTM with per-gate layer norm, a normalized cell output, and a
linear projection feeding both the layer above and the recurrence; and a GRU
with per-gate layer norm and no projection. Forward steps return a cache that
the matching backward consumes; parameter gradients accumulate into the
owning ParamRegistry buffers.
"""

import numpy as np

from .tensor import (
    DTYPE,
    layer_norm_bwd,
    layer_norm_fwd,
    sigmoid,
)

LN_EPSILON = 1e-5


class CellState:
    """Recurrent state: hidden/output vector ``h`` and memory cell ``c`` (LSTM only)."""

    __slots__ = ("h", "c")

    def __init__(self, h, c=None):
        self.h = h
        self.c = c


def _uniform_init(rng, shape, fanin):
    limit = 1.0 / np.sqrt(fanin)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class _GateBlock:
    """One gate's parameters: input/recurrent weights, bias, LN gain/bias."""

    __slots__ = ("wx", "wh", "b", "gain", "bias")

    def __init__(self, reg, prefix, in_dim, rec_dim, out_dim, rng, bias_init=0.0, ln_bias_init=0.0):
        self.wx = reg.add(prefix + ".wx", _uniform_init(rng, (out_dim, in_dim), in_dim))
        self.wh = reg.add(prefix + ".wh", _uniform_init(rng, (out_dim, rec_dim), rec_dim))
        self.b = reg.add(prefix + ".b", np.full(out_dim, bias_init, dtype=DTYPE))
        self.gain = reg.add(prefix + ".ln_gain", np.ones(out_dim, dtype=DTYPE))
        self.bias = reg.add(prefix + ".ln_bias", np.full(out_dim, ln_bias_init, dtype=DTYPE))

    def pre(self, x, h_prev):
        return self.wx.value @ x + self.wh.value @ h_prev + self.b.value

    def norm(self, a):
        return layer_norm_fwd(a, self.gain.value, self.bias.value, LN_EPSILON)

    def backward(self, d_s, ln_cache, x, h_prev):
        """From the gradient at the normalized pre-activation back to inputs."""
        d_a, d_gain, d_bias = layer_norm_bwd(d_s, self.gain.value, ln_cache)
        self.gain.grad += d_gain
        self.bias.grad += d_bias
        self.wx.grad += np.outer(d_a, x)
        self.wh.grad += np.outer(d_a, h_prev)
        self.b.grad += d_a
        return self.wx.value.T @ d_a, self.wh.value.T @ d_a


class LnLstmCell:
    """Layer-normalized LSTM with a projection layer.

    Gates read the input and the *projected* previous output; the memory
    cell is ``hidden``-dim, the output is ``proj``-dim (proj <= hidden).
    The cell state is normalized before the output tanh.
    """

    state_kind = "lstm"

    def __init__(self, reg, prefix, input_dim, hidden, proj, rng):
        if proj > hidden:
            raise ValueError(f"projection dim {proj} must be <= hidden dim {hidden}")
        self.input_dim = input_dim
        self.hidden = hidden
        self.proj = proj
        # Forget bias +1 goes on both b and the LN bias: a constant vector
        # added inside LN is removed by mean-centering, so only the LN bias
        # actually shifts the gate.
        self.g_in = _GateBlock(reg, prefix + ".in_gate", input_dim, proj, hidden, rng)
        self.g_forget = _GateBlock(
            reg, prefix + ".forget_gate", input_dim, proj, hidden, rng, bias_init=1.0, ln_bias_init=1.0
        )
        self.g_cand = _GateBlock(reg, prefix + ".cell_cand", input_dim, proj, hidden, rng)
        self.g_out = _GateBlock(reg, prefix + ".out_gate", input_dim, proj, hidden, rng)
        self.cell_gain = reg.add(prefix + ".cell_ln_gain", np.ones(hidden, dtype=DTYPE))
        self.cell_bias = reg.add(prefix + ".cell_ln_bias", np.zeros(hidden, dtype=DTYPE))
        self.w_proj = reg.add(prefix + ".w_proj", _uniform_init(rng, (proj, hidden), hidden))

    def initial_state(self):
        return CellState(np.zeros(self.proj, dtype=DTYPE), np.zeros(self.hidden, dtype=DTYPE))

    def step(self, x, prev):
        """One forward step; returns (CellState, cache)."""
        if x.shape[0] != self.input_dim:
            raise ValueError(f"lstm input dim {x.shape[0]} != {self.input_dim}")
        h_prev, c_prev = prev.h, prev.c
        s_i, ln_i = self.g_in.norm(self.g_in.pre(x, h_prev))
        s_f, ln_f = self.g_forget.norm(self.g_forget.pre(x, h_prev))
        s_c, ln_c = self.g_cand.norm(self.g_cand.pre(x, h_prev))
        s_o, ln_o = self.g_out.norm(self.g_out.pre(x, h_prev))
        gi = sigmoid(s_i)
        gf = sigmoid(s_f)
        go = sigmoid(s_o)
        cand = np.tanh(s_c)
        c = gf * c_prev + gi * cand
        cn, ln_cell = layer_norm_fwd(c, self.cell_gain.value, self.cell_bias.value, LN_EPSILON)
        tc = np.tanh(cn)
        q = go * tc
        h = self.w_proj.value @ q
        cache = (x, h_prev, c_prev, gi, gf, go, cand, ln_i, ln_f, ln_c, ln_o, ln_cell, tc, q)
        return CellState(h, c), cache

    def backward(self, d_h, d_c, cache):
        """Reverse of step. Returns (d_x, d_h_prev, d_c_prev)."""
        if cache is None:
            raise ValueError("lstm backward called without a forward cache")
        x, h_prev, c_prev, gi, gf, go, cand, ln_i, ln_f, ln_c, ln_o, ln_cell, tc, q = cache
        d_q = self.w_proj.value.T @ d_h
        self.w_proj.grad += np.outer(d_h, q)
        d_go = d_q * tc
        d_cn = d_q * go * (1.0 - tc * tc)
        d_c_from_q, d_gain, d_bias = layer_norm_bwd(d_cn, self.cell_gain.value, ln_cell)
        self.cell_gain.grad += d_gain
        self.cell_bias.grad += d_bias
        d_ct = d_c_from_q + (d_c if d_c is not None else 0.0)
        d_gf = d_ct * c_prev
        d_c_prev = d_ct * gf
        d_gi = d_ct * cand
        d_cand = d_ct * gi

        d_si = d_gi * gi * (1.0 - gi)
        d_sf = d_gf * gf * (1.0 - gf)
        d_so = d_go * go * (1.0 - go)
        d_sc = d_cand * (1.0 - cand * cand)
        dx_i, dh_i = self.g_in.backward(d_si, ln_i, x, h_prev)
        dx_f, dh_f = self.g_forget.backward(d_sf, ln_f, x, h_prev)
        dx_c, dh_c = self.g_cand.backward(d_sc, ln_c, x, h_prev)
        dx_o, dh_o = self.g_out.backward(d_so, ln_o, x, h_prev)
        d_x = dx_i + dx_f + dx_c + dx_o
        d_h_prev = dh_i + dh_f + dh_c + dh_o
        return d_x, d_h_prev, d_c_prev

    @property
    def out_dim(self):
        return self.proj


class LnGruCell:
    """Layer-normalized GRU: update/reset gates, candidate with the reset
    applied to the previous state inside the recurrent product, output
    interpolated as z*prev + (1-z)*candidate. No projection."""

    state_kind = "gru"

    def __init__(self, reg, prefix, input_dim, hidden, rng):
        self.input_dim = input_dim
        self.hidden = hidden
        self.g_update = _GateBlock(reg, prefix + ".update_gate", input_dim, hidden, hidden, rng)
        self.g_reset = _GateBlock(reg, prefix + ".reset_gate", input_dim, hidden, hidden, rng)
        self.g_cand = _GateBlock(reg, prefix + ".cand", input_dim, hidden, hidden, rng)

    def initial_state(self):
        return CellState(np.zeros(self.hidden, dtype=DTYPE))

    def step(self, x, prev):
        if x.shape[0] != self.input_dim:
            raise ValueError(f"gru input dim {x.shape[0]} != {self.input_dim}")
        h_prev = prev.h
        s_z, ln_z = self.g_update.norm(self.g_update.pre(x, h_prev))
        s_r, ln_r = self.g_reset.norm(self.g_reset.pre(x, h_prev))
        z = sigmoid(s_z)
        r = sigmoid(s_r)
        rh = r * h_prev
        s_h, ln_h = self.g_cand.norm(self.g_cand.pre(x, rh))
        hbar = np.tanh(s_h)
        h = z * h_prev + (1.0 - z) * hbar
        cache = (x, h_prev, z, r, rh, hbar, ln_z, ln_r, ln_h)
        return CellState(h), cache

    def backward(self, d_h, d_c, cache):
        """Reverse of step (d_c unused; present for a uniform cell interface)."""
        if cache is None:
            raise ValueError("gru backward called without a forward cache")
        x, h_prev, z, r, rh, hbar, ln_z, ln_r, ln_h = cache
        d_z = d_h * (h_prev - hbar)
        d_h_prev = d_h * z
        d_hbar = d_h * (1.0 - z)

        d_sh = d_hbar * (1.0 - hbar * hbar)
        d_x, d_rh = self.g_cand.backward(d_sh, ln_h, x, rh)
        d_r = d_rh * h_prev
        d_h_prev = d_h_prev + d_rh * r

        d_sz = d_z * z * (1.0 - z)
        dx_z, dh_z = self.g_update.backward(d_sz, ln_z, x, h_prev)
        d_sr = d_r * r * (1.0 - r)
        dx_r, dh_r = self.g_reset.backward(d_sr, ln_r, x, h_prev)
        d_x = d_x + dx_z + dx_r
        d_h_prev = d_h_prev + dh_z + dh_r
        return d_x, d_h_prev, None

    @property
    def out_dim(self):
        return self.hidden
