"""Pure-numpy fused recurrent sequence kernels.

Forward runs the whole padded batch of sequences through one cell loop and
returns the final hidden states plus a cache; backward replays the loop in
reverse. Semantics must match ``_fused`` (the compiled twin) exactly: rows
whose sequence has ended carry their state through unchanged.

Input projections are hoisted out of the time loop into one matrix product;
only the recurrent term stays sequential.

Gate layout: LSTM ``[input, forget, cell, output]``; GRU ``[reset, update,
candidate]`` with the update gate keeping the old state.
"""

import numpy as np


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def lstm_forward(x, lengths, wx, wh, b):
    """Run an LSTM over ``n`` packed rows of a padded [n*max_len, d] input.

    Returns ``(h_final [n, h], cache)``.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    n = lengths.shape[0]
    d = x.shape[1]
    max_len = x.shape[0] // n
    h = wh.shape[0]
    x3 = np.ascontiguousarray(x).reshape(n, max_len, d)
    steps = int(lengths.max()) if n else 0

    xp3 = (x @ wx + b).reshape(n, max_len, 4 * h)
    hs = np.zeros((n, h))
    cs = np.zeros((n, h))
    gates = np.zeros((steps, n, 4 * h))
    tanc = np.zeros((steps, n, h))
    cprev = np.zeros((steps, n, h))
    hprev = np.zeros((steps, n, h))

    for t in range(steps):
        mask = (t < lengths).astype(np.float64)[:, None]
        g = xp3[:, t, :] + hs @ wh
        gi = _sigmoid(g[:, :h])
        gf = _sigmoid(g[:, h:2 * h])
        gc = np.tanh(g[:, 2 * h:3 * h])
        go = _sigmoid(g[:, 3 * h:])
        cprev[t] = cs
        hprev[t] = hs
        c_new = gf * cs + gi * gc
        tc = np.tanh(c_new)
        h_new = go * tc
        gates[t] = np.concatenate([gi, gf, gc, go], axis=1)
        tanc[t] = tc
        cs = mask * c_new + (1.0 - mask) * cs
        hs = mask * h_new + (1.0 - mask) * hs

    cache = (x3, lengths, wx, wh, steps, gates, tanc, cprev, hprev)
    return hs, cache


def lstm_backward(dh_final, cache):
    """Gradient of ``lstm_forward`` w.r.t. (x, wx, wh, b)."""
    x3, lengths, wx, wh, steps, gates, tanc, cprev, hprev = cache
    n, max_len, d = x3.shape
    h = wh.shape[0]

    dz3 = np.zeros((steps, n, 4 * h))
    dh = np.array(dh_final, dtype=np.float64, copy=True)
    dc = np.zeros((n, h))

    for t in range(steps - 1, -1, -1):
        mask = (t < lengths).astype(np.float64)[:, None]
        g = gates[t]
        gi = g[:, :h]
        gf = g[:, h:2 * h]
        gc = g[:, 2 * h:3 * h]
        go = g[:, 3 * h:]
        tc = tanc[t]

        dh_a = dh * mask
        dct = dc * mask + dh_a * go * (1.0 - tc * tc)
        do = dh_a * tc
        di = dct * gc
        df = dct * cprev[t]
        dgc = dct * gi

        dz = np.concatenate([
            di * gi * (1.0 - gi),
            df * gf * (1.0 - gf),
            dgc * (1.0 - gc * gc),
            do * go * (1.0 - go),
        ], axis=1)
        dz3[t] = dz
        dh = dh * (1.0 - mask) + dz @ wh.T
        dc = dc * (1.0 - mask) + dct * gf

    return _sequence_grads(dz3, dz3, x3, hprev, wx, wh, steps)


def gru_forward(x, lengths, wx, wh, b):
    """Run a GRU over ``n`` packed rows of a padded [n*max_len, d] input.

    Returns ``(h_final [n, h], cache)``.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    n = lengths.shape[0]
    d = x.shape[1]
    max_len = x.shape[0] // n
    h = wh.shape[0]
    x3 = np.ascontiguousarray(x).reshape(n, max_len, d)
    steps = int(lengths.max()) if n else 0

    xp3 = (x @ wx + b).reshape(n, max_len, 3 * h)
    hs = np.zeros((n, h))
    gates = np.zeros((steps, n, 3 * h))
    ahn = np.zeros((steps, n, h))
    hprev = np.zeros((steps, n, h))

    for t in range(steps):
        mask = (t < lengths).astype(np.float64)[:, None]
        ax = xp3[:, t, :]
        ah = hs @ wh
        gr = _sigmoid(ax[:, :h] + ah[:, :h])
        gz = _sigmoid(ax[:, h:2 * h] + ah[:, h:2 * h])
        gn = np.tanh(ax[:, 2 * h:] + gr * ah[:, 2 * h:])
        hprev[t] = hs
        ahn[t] = ah[:, 2 * h:]
        gates[t] = np.concatenate([gr, gz, gn], axis=1)
        h_new = gz * hs + (1.0 - gz) * gn
        hs = mask * h_new + (1.0 - mask) * hs

    cache = (x3, lengths, wx, wh, steps, gates, ahn, hprev)
    return hs, cache


def gru_backward(dh_final, cache):
    """Gradient of ``gru_forward`` w.r.t. (x, wx, wh, b)."""
    x3, lengths, wx, wh, steps, gates, ahn, hprev = cache
    n, max_len, d = x3.shape
    h = wh.shape[0]

    dax3 = np.zeros((steps, n, 3 * h))
    dah3 = np.zeros((steps, n, 3 * h))
    dh = np.array(dh_final, dtype=np.float64, copy=True)

    for t in range(steps - 1, -1, -1):
        mask = (t < lengths).astype(np.float64)[:, None]
        g = gates[t]
        gr = g[:, :h]
        gz = g[:, h:2 * h]
        gn = g[:, 2 * h:]
        hp = hprev[t]

        dh_a = dh * mask
        dz_gate = dh_a * (hp - gn)
        dn = dh_a * (1.0 - gz)
        dpre_n = dn * (1.0 - gn * gn)
        dr = dpre_n * ahn[t]
        dpre_r = dr * gr * (1.0 - gr)
        dpre_z = dz_gate * gz * (1.0 - gz)

        dax = np.concatenate([dpre_r, dpre_z, dpre_n], axis=1)
        dah = np.concatenate([dpre_r, dpre_z, dpre_n * gr], axis=1)
        dax3[t] = dax
        dah3[t] = dah
        dh = dh * (1.0 - mask) + dh_a * gz + dah @ wh.T

    return _sequence_grads(dax3, dah3, x3, hprev, wx, wh, steps)


def _sequence_grads(dx_proj3, dh_proj3, x3, hprev, wx, wh, steps):
    """Batched weight/input gradients shared by both cells.

    ``dx_proj3``/``dh_proj3`` hold the pre-activation gradients feeding the
    input and recurrent projections ([steps, n, gates*h], time-major).
    """
    n, max_len, d = x3.shape
    g_width = dx_proj3.shape[2] if steps else wx.shape[1]
    dxp = dx_proj3.transpose(1, 0, 2).reshape(n * steps, g_width)
    dhp = dh_proj3.transpose(1, 0, 2).reshape(n * steps, g_width)
    x2 = x3[:, :steps, :].reshape(n * steps, d)
    hp2 = hprev.transpose(1, 0, 2).reshape(n * steps, wh.shape[0])
    dx3 = np.zeros((n, max_len, d))
    if steps:
        dx3[:, :steps, :] = (dxp @ wx.T).reshape(n, steps, d)
    dwx = x2.T @ dxp
    dwh = hp2.T @ dhp
    db = dxp.sum(axis=0)
    return dx3.reshape(n * max_len, d), dwx, dwh, db
