"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np
import torch

from cacunet.blocks import BlockSpec
from cacunet.spectral import StftParams
from cacunet.unet import ModelConfig, SamplingSpec


def numeric_grad(loss_fn, param, index, eps=1e-5):
    """Central difference of ``loss_fn()`` with respect to one scalar."""
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + eps
        up = loss_fn()
        param[index] = orig - eps
        down = loss_fn()
        param[index] = orig
    return (up - down) / (2 * eps)


def gradient_check(module, x, target, n_samples=60, seed=0, floor=1e-5):
    """Compare autograd against central differences on sampled parameters.

    Every parameter tensor contributes at least one scalar; the rest of the
    ``n_samples`` budget is spread proportionally.  Returns a list of
    (name, index, analytic, numeric, relative error).  ``floor`` bounds the
    denominator so parameters with an exactly zero gradient (convolution
    biases feeding batch norm) do not turn rounding noise into a large ratio.
    """
    module = module.double().train()
    x, target = x.double(), target.double()

    def loss_fn():
        return float(torch.mean((module(x) - target) ** 2))

    module.zero_grad()
    torch.mean((module(x) - target) ** 2).backward()
    analytic = {n: p.grad.detach().clone() for n, p in module.named_parameters()}

    rng = np.random.default_rng(seed)
    params = list(module.named_parameters())
    total = sum(p.numel() for _, p in params)
    results = []
    for name, p in params:
        k = max(1, int(round(n_samples * p.numel() / total)))
        k = min(k, p.numel())
        for flat in rng.choice(p.numel(), size=k, replace=False):
            idx = np.unravel_index(flat, p.shape)
            a = analytic[name][idx].item()
            # running BN statistics move on every forward in train mode;
            # they do not feed back into the loss, so no reset is needed
            num = numeric_grad(loss_fn, p.data, idx)
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            results.append((name, idx, a, num, rel))
    return results


def miniature_specs(c=2, growth=4, layers=3):
    """One small spec per block family with c input and output channels."""
    return {
        "TDF": BlockSpec("TDF", c, c, tdf_layers=2, bf=4),
        "TDC": BlockSpec("TDC", c, c, growth_rate=growth, num_layers=layers, kernel_f=3),
        "TFC": BlockSpec("TFC", c, c, growth_rate=growth, num_layers=layers, kernel_f=3,
                         kernel_t=3),
        "TFC_TDF": BlockSpec("TFC_TDF", c, c, growth_rate=growth, num_layers=layers,
                             kernel_f=3, kernel_t=3, tdf_layers=2, bf=4),
        "TDC_RNN": BlockSpec("TDC_RNN", c, c, growth_rate=growth, num_layers=layers,
                             kernel_f=3, bf=4),
    }


def brute_force_sdr(est, ref, filter_len):
    """SDR via an explicit delay matrix and ``lstsq``, no Toeplitz tricks."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    n = ref.size
    m = n + filter_len - 1
    basis = np.zeros((m, filter_len))
    for d in range(filter_len):
        basis[d:d + n, d] = ref
    est_pad = np.concatenate([est, np.zeros(filter_len - 1)])
    coef, *_ = np.linalg.lstsq(basis, est_pad, rcond=None)
    target = basis @ coef
    err = est_pad - target
    return 10 * np.log10(np.dot(target, target) / np.dot(err, err))


def seven_block(family, n_fft, mode="cac", width=24):
    """Seven-block U-Net of one block family with its usual sampling.

    Time-distributed families (TDC, TDF) only ever rescale frequency so the
    whole network stays frame-independent; TFC and TFC-TDF halve both axes.
    """
    def make(c_in):
        common = dict(growth_rate=width, num_layers=5, kernel_f=3)
        if family == "TDC":
            return BlockSpec("TDC", c_in, width, **common)
        if family == "TDF":
            return BlockSpec("TDF", c_in, width, tdf_layers=2, bf=4, min_hidden=16)
        if family == "TFC":
            return BlockSpec("TFC", c_in, width, kernel_t=3, **common)
        return BlockSpec("TFC_TDF", c_in, width, kernel_t=3, tdf_layers=2, bf=16,
                         min_hidden=16, **common)

    scale_t = 1 if family in ("TDC", "TDF") else 2
    blocks = [make(width) for _ in range(4)] + [make(2 * width) for _ in range(3)]
    sampling = [SamplingSpec(scale_t, 2, i) for i in range(3)]
    return ModelConfig(stft=StftParams(n_fft, n_fft // 2), mode=mode, c=2, c_internal=width,
                       blocks=blocks, sampling=sampling, name=f"{family.lower()}7")


def small_config(mode="cac", sampling=((2, 2),), n_fft=64):
    """Three-block mixed-family model for fast structural tests."""
    blocks = [
        BlockSpec("TFC", 8, 8, growth_rate=4, num_layers=2, kernel_f=3, kernel_t=3),
        BlockSpec("TDC", 8, 8, growth_rate=4, num_layers=2, kernel_f=3),
        BlockSpec("TFC_TDF", 16, 8, growth_rate=4, num_layers=2, kernel_f=3, kernel_t=3,
                  tdf_layers=2, bf=4),
    ]
    return ModelConfig(stft=StftParams(n_fft, n_fft // 2), mode=mode, c=2, c_internal=8,
                       blocks=blocks,
                       sampling=[SamplingSpec(t, f, i) for i, (t, f) in enumerate(sampling)])


def identity_model():
    """Hand-set one-block TDC U-Net whose output equals its input.

    The entry convolution routes ``relu(x)`` and ``relu(-x)`` into separate
    channels, the dense block passes them through its last layer untouched,
    and the exit convolution subtracts the pair again.
    """
    import torch
    from cacunet.blocks import BN_EPS
    from cacunet.unet import build_model

    io, width = 4, 8
    tdc = BlockSpec("TDC", width, width, growth_rate=4, num_layers=2, kernel_f=3)
    cfg = ModelConfig(stft=StftParams(256, 128), c=2, c_internal=width, blocks=[tdc],
                      name="identity")
    model = build_model(cfg)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        first = model.first.conv.weight
        for j in range(io):
            first[j, j, 0, 0] = 1.0
            first[io + j, j, 0, 0] = -1.0
        conv, bn = model.middle.layers[-1][0], model.middle.layers[-1][1]
        for j in range(width):
            conv.weight[j, j, 0, 1] = 1.0
        bn.weight.fill_(float(np.sqrt(1 + BN_EPS)))
        bn.running_var.fill_(1.0)
        bn.running_mean.zero_()
        last = model.last.conv.weight
        for j in range(io):
            last[j, j, 0, 0] = 1.0
            last[j, io + j, 0, 0] = -1.0
    return model.eval()
