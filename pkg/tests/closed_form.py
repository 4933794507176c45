"""Closed-form cost of the HyperUNet, summed layer by layer from its published layer table.

Written independently of the accountant's graph walk: every term below is an
explicit product of channel counts and extents for an input whose side is a
multiple of 32, so no shape inference is involved.
"""


def _conv(ci, co, side, bias=True):
    w = ci * co * 9
    return w + (co if bias else 0), 2 * w * side * side


def _mlp(cf, n, out):
    dims = [(cf, n), (n, n), (n, out)]
    return sum(i * o + o for i, o in dims), sum(2 * i * o for i, o in dims)


def _hyperconv(ci, cf, co, n, side, f_side):
    mp, mf = _mlp(cf, n, 9 * ci * co)
    params = 9 * ci * co + mp + cf * co + co
    flops = 2 * 9 * ci * co * side * side + mf + 2 * cf * co + cf * f_side * f_side
    return params, flops


def hyper_unet_cost(n_fwd, n_embed, n_hid, side, n_in=4, n_out=3, hyper=True):
    """(params, flops) of the HyperUNet (or its plain ablation) on an (n_in, side, side) input."""
    assert side % 32 == 0
    nf, eb, half, nh = n_fwd, n_embed, n_fwd // 2, n_hid
    h2 = max(nh // 2, 1)
    s = {k: side // k for k in (1, 2, 4, 8, 16, 32)}
    params = flops = 0

    def add(pf):
        nonlocal params, flops
        params += pf[0]
        flops += pf[1]

    def elementwise(c, sd):
        add((0, c * sd * sd))

    # activations, pools and upsamples of the main path
    for c, k in ((nf, 1), (nf, 1), (half, 2), (half, 4), (half, 8), (half, 16), (half, 8), (half, 4),
                 (nf, 2), (nf, 1)):
        elementwise(c, s[k])
    elementwise(n_out, 2 * side)
    for c, k in ((nf, 2), (half, 4), (half, 8), (half, 16)):
        elementwise(c, s[k])
    for c, k in ((half, 8), (half, 4), (half, 2), (nf, 1)):
        elementwise(c, s[k])
    elementwise(nf, 2 * side)

    layers = [  # (c_in, c_filter, c_out, n_hid, side)
        (n_in, 16 * eb, nf, nh, side), (nf, 16 * eb, nf, nh, side), (nf, 16 * eb, nf, nh, side),
        (nf, 16 * eb, n_out, nh, 2 * side),
        (nf, 8 * eb, half, h2, s[2]), (half, 8 * eb, nf, h2, s[2]),
        (half, 4 * eb, half, h2, s[4]), (half, 4 * eb, half, h2, s[4]),
        (half, 2 * eb, half, h2, s[8]), (half, 2 * eb, half, h2, s[8]), (half, 2 * eb, half, h2, s[16]),
    ]
    if not hyper:
        for ci, _, co, _, sd in layers:
            add(_conv(ci, co, sd))
        return params, flops

    for ci, cf, co, n, sd in layers:
        add(_hyperconv(ci, cf, co, n, sd, s[32]))
    # embeddings: convs (with bias), then pool and gelu on the pooled extent
    chains = [
        [(n_in, eb, 1, 2), (eb, 2 * eb, 2, 2), (2 * eb, 4 * eb, 4, 2), (4 * eb, 8 * eb, 8, 4), (8 * eb, 16 * eb, 32, 0)],
        [(nf, eb, 2, 2), (eb, 2 * eb, 4, 2), (2 * eb, 4 * eb, 8, 4), (4 * eb, 8 * eb, 32, 0)],
        [(half, eb // 2, 4, 2), (eb // 2, 2 * eb, 8, 4), (2 * eb, 4 * eb, 32, 0)],
        [(half, eb // 2, 8, 4), (eb // 2, 2 * eb, 32, 0)],
    ]
    for chain in chains:
        for ci, co, k, pool in chain:
            add(_conv(ci, co, s[k]))
            if pool:
                elementwise(co, s[k * pool])  # pool
                elementwise(co, s[k * pool])  # gelu
    return params, flops
