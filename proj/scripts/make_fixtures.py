#!/usr/bin/env python3
"""Generates the committed test fixtures under tests/fixtures/.

mlp-2layer: 4 -> fc 8 -> relu -> fc 4 on four Gaussian clusters.
cnn-digits: small residual CNN on sklearn's 8x8 digits (pixels / 16).

Each fixture holds model/ (manifest.json + f32 blobs), calib/ and test/
(calib.json, inputs.f32, labels.u32) and golden/ with float64 reference
logits and a scalar reference quantization of one weight tensor.

Usage: python3 scripts/make_fixtures.py [--out tests/fixtures]
"""
import argparse
import json
import math
from pathlib import Path

import numpy as np
import torch
from sklearn.datasets import load_digits
from torch import nn


def write_f32(path, array):
    np.asarray(array, dtype="<f4").tofile(path)


def write_set(directory, inputs, labels, num_classes):
    directory.mkdir(parents=True, exist_ok=True)
    write_f32(directory / "inputs.f32", inputs)
    np.asarray(labels, dtype="<u4").tofile(directory / "labels.u32")
    meta = {"count": int(len(labels)), "input_shape": list(inputs.shape[1:]), "num_classes": num_classes}
    (directory / "calib.json").write_text(json.dumps(meta, indent=2) + "\n")


def write_model(directory, name, num_classes, input_shape, layers):
    """layers: list of dicts with kind plus weight/bias numpy arrays where present."""
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for i, spec in enumerate(layers, start=1):
        rec = {"index": i, "kind": spec["kind"]}
        if spec["kind"] == "conv2d":
            w = spec["weight"]
            rec.update(out_channels=w.shape[0], in_channels=w.shape[1], kernel=[w.shape[2], w.shape[3]],
                       stride=spec.get("stride", 1), pad=spec.get("pad", 0))
        elif spec["kind"] == "fc":
            w = spec["weight"]
            rec.update(out_features=w.shape[0], in_features=w.shape[1])
        elif spec["kind"] == "maxpool":
            rec.update(kernel=spec["kernel"], stride=spec["kernel"])
        elif spec["kind"] == "add":
            rec.update(skip_from=spec["skip_from"])
        if "weight" in spec:
            rec["weights"] = f"w{i}.f32"
            write_f32(directory / rec["weights"], spec["weight"])
            rec["bias"] = f"b{i}.f32"
            write_f32(directory / rec["bias"], spec["bias"])
        records.append(rec)
    manifest = {"name": name, "num_classes": num_classes, "input_shape": list(input_shape), "layers": records}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# float64 reference forward pass, written independently of torch.
def ref_conv(x, w, b, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("nchw,oc->nohw", xp[:, :, i:i + oh, j:j + ow], w[:, :, i, j])
    return out + b[None, :, None, None]


def ref_forward(layers, x):
    outs = [x.astype(np.float64)]
    for spec in layers:
        h = outs[-1]
        kind = spec["kind"]
        if kind == "conv2d":
            h = ref_conv(h, spec["weight"].astype(np.float64), spec["bias"].astype(np.float64), spec.get("pad", 0))
        elif kind == "fc":
            h = h @ spec["weight"].astype(np.float64).T + spec["bias"].astype(np.float64)
        elif kind == "relu":
            h = np.maximum(h, 0.0)
        elif kind == "maxpool":
            k = spec["kernel"]
            n, c, hh, ww = h.shape
            h = h[:, :, :hh // k * k, :ww // k * k].reshape(n, c, hh // k, k, ww // k, k).max(axis=(3, 5))
        elif kind == "add":
            h = h + outs[spec["skip_from"]]
        elif kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        outs.append(h)
    return outs[-1]


def ref_quantize(w, gamma_c, bits, gamma_n, gamma_s, order):
    """Scalar reference for clip + unequal-range rounding."""
    m = 2 ** (bits - 1) - 1
    th = gamma_c * float(np.max(np.abs(w.astype(np.float64))))
    s = th / m
    out = np.empty(w.size, dtype=np.float64)
    levels = np.empty(w.size, dtype=np.int64)
    for idx, v in enumerate(w.astype(np.float64).ravel().tolist()):
        wc = min(max(v, -th), th)
        wr = math.floor(wc / s + 0.5)
        sign = lambda t: float((t > 0) - (t < 0))
        if order == "first":
            fr = 0.5 * sign(wc * gamma_n) * abs(gamma_n) ** abs(wr)
        else:
            pivot = gamma_s * 2 ** (bits - 1)
            beta = 2 ** (bits - 2)
            fr = 0.5 * sign(wc * gamma_n * (pivot - abs(wr))) * abs(gamma_n) ** abs(abs(abs(wr) - pivot) - beta)
        k = min(max(math.floor(wc / s + 0.5 + fr), -m), m)
        levels[idx] = k
        out[idx] = s * k
    return out.reshape(w.shape), levels.reshape(w.shape), s


def torch_layers(layers):
    modules = []
    for spec in layers:
        kind = spec["kind"]
        if kind == "conv2d":
            modules.append(nn.Conv2d(spec["in"], spec["out"], 3, padding=spec["pad"]))
        elif kind == "fc":
            modules.append(nn.Linear(spec["in"], spec["out"]))
        else:
            modules.append(None)
    return modules


class Net(nn.Module):
    def __init__(self, layers):
        super().__init__()
        self.layers = layers
        self.mods = nn.ModuleList([m if m is not None else nn.Identity() for m in torch_layers(layers)])

    def forward(self, x):
        outs = [x]
        for spec, mod in zip(self.layers, self.mods):
            h = outs[-1]
            kind = spec["kind"]
            if kind in ("conv2d", "fc"):
                h = mod(h)
            elif kind == "relu":
                h = torch.relu(h)
            elif kind == "maxpool":
                h = torch.nn.functional.max_pool2d(h, spec["kernel"])
            elif kind == "add":
                h = h + outs[spec["skip_from"]]
            elif kind == "flatten":
                h = h.flatten(1)
            outs.append(h)
        return outs[-1]

    def export(self):
        out = []
        for spec, mod in zip(self.layers, self.mods):
            e = {k: v for k, v in spec.items() if k not in ("in", "out")}
            if spec["kind"] in ("conv2d", "fc"):
                e["weight"] = mod.weight.detach().numpy().astype(np.float32)
                e["bias"] = mod.bias.detach().numpy().astype(np.float32)
            out.append(e)
        return out


def train(net, x, y, epochs, lr, batch, weight_decay=0.0):
    opt = torch.optim.Adam(net.parameters(), lr=lr, weight_decay=weight_decay)
    xt, yt = torch.tensor(x), torch.tensor(y, dtype=torch.long)
    gen = torch.Generator().manual_seed(0)
    for _ in range(epochs):
        perm = torch.randperm(len(xt), generator=gen)
        for i in range(0, len(xt), batch):
            idx = perm[i:i + batch]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(xt[idx]), yt[idx])
            loss.backward()
            opt.step()


def accuracy(layers, x, y):
    return float(np.mean(ref_forward(layers, x).argmax(axis=1) == y))


def write_golden(directory, layers, calib_x, calib_y, test_x, test_y, quant_layer, quant_cases):
    directory.mkdir(parents=True, exist_ok=True)
    write_f32(directory / "calib_logits.f32", ref_forward(layers, calib_x))
    meta = {"calib_accuracy": accuracy(layers, calib_x, calib_y), "quantized": []}
    if test_x is not None:
        meta["test_accuracy"] = accuracy(layers, test_x, test_y)
    w = layers[quant_layer - 1]["weight"]
    for n, (gamma_c, bits, gamma_n, gamma_s, order) in enumerate(quant_cases):
        wq, levels, s = ref_quantize(w, gamma_c, bits, gamma_n, gamma_s, order)
        blob = f"quant{n}.f64"
        np.asarray(wq, dtype="<f8").tofile(directory / blob)
        meta["quantized"].append({"layer": quant_layer, "gamma_c": gamma_c, "q": bits, "gamma_n": gamma_n,
                                  "gamma_s": gamma_s, "order": order, "scale": repr(s), "values": blob})
    (directory / "golden.json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def make_mlp(root):
    rng = np.random.default_rng(7)
    centers = rng.normal(0.0, 2.0, size=(4, 4))
    def sample(n):
        y = np.arange(n) % 4
        x = centers[y] + rng.normal(0.0, 0.5, size=(n, 4))
        return x.astype(np.float32), y.astype(np.uint32)
    train_x, train_y = sample(800)
    calib_x, calib_y = sample(200)
    spec = [{"kind": "fc", "in": 4, "out": 8}, {"kind": "relu"}, {"kind": "fc", "in": 8, "out": 4}]
    torch.manual_seed(0)
    net = Net(spec)
    train(net, train_x, train_y.astype(np.int64), epochs=200, lr=0.02, batch=64)
    layers = net.export()
    d = root / "mlp-2layer"
    write_model(d / "model", "mlp-2layer", 4, [4], layers)
    write_set(d / "calib", calib_x, calib_y, 4)
    meta = write_golden(d / "golden", layers, calib_x, calib_y, None, None, 1,
                        [(0.8, 3, 0.4, 0.5, "second"), (1.0, 4, -0.6, 0.0, "first")])
    print("mlp-2layer calib accuracy", meta["calib_accuracy"])


def make_cnn(root):
    digits = load_digits()
    x = (digits.images / 16.0).astype(np.float32)[:, None, :, :]
    y = digits.target.astype(np.uint32)
    rng = np.random.default_rng(11)
    perm = rng.permutation(len(y))
    train_idx, test_idx = perm[:1200], perm[1200:]
    spec = [
        {"kind": "conv2d", "in": 1, "out": 8, "pad": 1},
        {"kind": "relu"},
        {"kind": "conv2d", "in": 8, "out": 16, "pad": 1},
        {"kind": "relu"},
        {"kind": "maxpool", "kernel": 2},
        {"kind": "conv2d", "in": 16, "out": 16, "pad": 1},
        {"kind": "relu"},
        {"kind": "add", "skip_from": 5},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "fc", "in": 256, "out": 10},
    ]
    torch.manual_seed(0)
    net = Net(spec)
    train(net, x[train_idx], y[train_idx].astype(np.int64), epochs=40, lr=0.003, batch=32)
    layers = net.export()

    # Calibration: 50 samples per class from the training split.
    calib_idx = np.concatenate([train_idx[y[train_idx] == c][:50] for c in range(10)])
    calib_idx = calib_idx[np.argsort(rng.permutation(len(calib_idx)))]
    d = root / "cnn-digits"
    write_model(d / "model", "cnn-digits", 10, [1, 8, 8], layers)
    write_set(d / "calib", x[calib_idx], y[calib_idx], 10)
    write_set(d / "test", x[test_idx], y[test_idx], 10)
    meta = write_golden(d / "golden", layers, x[calib_idx], y[calib_idx], x[test_idx], y[test_idx], 3,
                        [(0.7, 3, 0.3, 0.5, "second"), (0.9, 4, -0.5, 0.25, "second"), (1.0, 3, 0.6, 0.0, "first")])
    print("cnn-digits calib accuracy", meta["calib_accuracy"], "test accuracy", meta["test_accuracy"])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests" / "fixtures"))
    args = parser.parse_args()
    torch.set_num_threads(1)
    root = Path(args.out)
    make_mlp(root)
    make_cnn(root)


if __name__ == "__main__":
    main()
