#!/usr/bin/env python3
"""Regenerates the frozen reference values under tests/data from independent
implementations (PyTorch, the Hugging Face MobileViTV2 port, scikit-learn and
plain struct/zlib for MVW1). Run once; the outputs are committed.

    python3 tests/oracles/make_oracles.py [--check]

--check recomputes everything and fails if the committed files differ.
"""

import argparse
import json
import math
import os
import sys
import warnings

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "data")
sys.path.insert(0, HERE)

import oracle_common as oc  # noqa: E402


def log_loss(skm, truth, probs, labels):
    # float32 rows sum to 1 only within rounding; sklearn warns about that
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="The y_prob values do not sum to one")
        return skm.log_loss(truth, probs, labels=labels)


def tensor(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def named(pairs):
    return {n: tensor(v) for n, v in pairs}


# ---- torch primitives ---------------------------------------------------------------

def conv_cases(torch, rng):
    F = torch.nn.functional
    specs = [
        # B, Cin, H, W, Cout, k, stride, pad, groups, bias
        (1, 3, 5, 5, 4, 3, 1, 1, 1, True),
        (2, 4, 6, 7, 6, 3, 2, 1, 2, False),
        (2, 6, 5, 4, 6, 3, 1, 1, 6, True),
        (1, 3, 8, 8, 2, 1, 1, 0, 1, False),
        (2, 2, 7, 5, 3, 2, 2, 0, 1, True),
        (1, 8, 6, 6, 8, 3, 2, 1, 8, False),
    ]
    out = []
    for b, cin, h, w, cout, k, s, p, g, bias in specs:
        x = rng.normal(size=(b, cin, h, w))
        wt = rng.normal(size=(cout, cin // g, k, k))
        bb = rng.normal(size=(cout,)) if bias else None
        y = F.conv2d(torch.from_numpy(x), torch.from_numpy(wt), None if bb is None else torch.from_numpy(bb),
                     stride=s, padding=p, groups=g).numpy()
        case = {"stride": s, "padding": p, "groups": g, "x": tensor(x), "weight": tensor(wt), "y": tensor(y)}
        if bias:
            case["bias"] = tensor(bb)
        out.append(case)
    return out


def batch_norm_cases(torch, rng):
    F = torch.nn.functional
    out = []
    for shape in [(4, 3, 2, 2), (2, 5, 3, 4)]:
        c = shape[1]
        x = rng.normal(1.0, 2.0, size=shape)
        gamma = rng.uniform(0.5, 1.5, c)
        beta = rng.normal(0, 0.5, c)
        rm0 = rng.normal(0, 0.3, c)
        rv0 = rng.uniform(0.5, 1.5, c)
        rm = torch.from_numpy(rm0.copy())
        rv = torch.from_numpy(rv0.copy())
        y_train = F.batch_norm(torch.from_numpy(x), rm, rv, torch.from_numpy(gamma), torch.from_numpy(beta),
                               training=True, momentum=0.1, eps=1e-5).numpy()
        y_eval = F.batch_norm(torch.from_numpy(x), torch.from_numpy(rm0), torch.from_numpy(rv0),
                              torch.from_numpy(gamma), torch.from_numpy(beta), training=False, eps=1e-5).numpy()
        out.append({"x": tensor(x), "gamma": tensor(gamma), "beta": tensor(beta), "running_mean": tensor(rm0),
                    "running_var": tensor(rv0), "y_train": tensor(y_train), "y_eval": tensor(y_eval),
                    "running_mean_after": tensor(rm.numpy()), "running_var_after": tensor(rv.numpy())})
    return out


def group_norm_cases(torch, rng):
    F = torch.nn.functional
    out = []
    for shape, groups, last in [((2, 6, 3, 3), 3, False), ((2, 6, 3, 3), 1, False), ((1, 4, 5), 2, False),
                                ((2, 3, 4, 8), 1, True), ((2, 5, 4), 4, True)]:
        x = rng.normal(0.5, 1.5, size=shape)
        c = shape[-1] if last else shape[1]
        gamma = rng.uniform(0.5, 1.5, c)
        beta = rng.normal(0, 0.5, c)
        xt = torch.from_numpy(x)
        if last:
            xt = xt.movedim(-1, 1)
        y = F.group_norm(xt, groups, torch.from_numpy(gamma), torch.from_numpy(beta), eps=1e-5)
        if last:
            y = y.movedim(1, -1)
        out.append({"groups": groups, "channels_last": last, "x": tensor(x), "gamma": tensor(gamma),
                    "beta": tensor(beta), "y": tensor(y.numpy())})
    return out


def loss_cases(torch, rng):
    F = torch.nn.functional
    logits = rng.normal(0, 2.0, size=(5, 4))
    targets = [0, 3, 1, 1, 2]
    lt = torch.from_numpy(logits).requires_grad_(True)
    loss = F.cross_entropy(lt, torch.tensor(targets))
    loss.backward()
    return {"logits": tensor(logits), "targets": targets, "loss": float(loss.item()), "grad": tensor(lt.grad.numpy()),
            "softmax": tensor(F.softmax(torch.from_numpy(logits), 1).numpy()),
            "log_softmax": tensor(F.log_softmax(torch.from_numpy(logits), 1).numpy()),
            "silu_x": tensor(logits), "silu": tensor(F.silu(torch.from_numpy(logits)).numpy())}


def resize_cases(torch, rng):
    F = torch.nn.functional
    out = []
    for (h, w), (oh, ow) in [((5, 7), (3, 4)), ((4, 6), (9, 11)), ((6, 6), (6, 6)), ((7, 3), (16, 20))]:
        img = rng.uniform(0, 1, size=(3, h, w))
        y = F.interpolate(torch.from_numpy(img)[None], size=(oh, ow), mode="bilinear", align_corners=False,
                          antialias=False)[0].numpy()
        out.append({"x": tensor(img), "y": tensor(y)})
    return out


def adam_case(torch, rng):
    w0 = rng.normal(size=(7,))
    grads = [rng.normal(size=(7,)) for _ in range(6)]
    p = torch.nn.Parameter(torch.from_numpy(w0.copy()))
    opt = torch.optim.Adam([p], lr=0.01, betas=(0.9, 0.999), eps=1e-8)
    for g in grads:
        opt.zero_grad()
        p.grad = torch.from_numpy(g.copy())
        opt.step()
    return {"lr": 0.01, "w0": tensor(w0), "grads": [tensor(g) for g in grads], "w": tensor(p.detach().numpy())}


# ---- Hugging Face MobileViTV2 modules --------------------------------------------------

def hf_config():
    from transformers import MobileViTV2Config

    return MobileViTV2Config(width_multiplier=0.5, num_labels=10)


def init_module(torch, module, rng, scale=0.3):
    with torch.no_grad():
        for name, p in module.named_parameters():
            p.copy_(torch.from_numpy(rng.normal(0, scale, p.shape)))
    oc.randomize_norm_stats(module, rng)
    module.eval()


def attention_case(torch, rng):
    from transformers.models.mobilevitv2.modeling_mobilevitv2 import MobileViTV2LinearSelfAttention

    d = 8
    m = MobileViTV2LinearSelfAttention(hf_config(), d).double()
    init_module(torch, m, rng)
    tokens = rng.normal(size=(2, 4, 5, d))  # [B, P, N, d]
    with torch.no_grad():
        y = m(torch.from_numpy(tokens).permute(0, 3, 1, 2)).permute(0, 2, 3, 1).numpy()
    sd = {k: v.detach().numpy() for k, v in m.state_dict().items()}
    pairs = []
    for k, v in sd.items():
        mapped = oc.map_mv_block("transformer.layer.0.attention." + k, v, "blk")
        pairs += [(n.replace("blk.transformer.0.attn.", ""), a) for n, a in mapped]
    return {"tokens": tensor(tokens), "weights": named(pairs), "y": tensor(y)}


def bottleneck_cases(torch, rng):
    from transformers.models.mobilevitv2.modeling_mobilevitv2 import MobileViTV2InvertedResidual

    out = []
    for cin, cout, stride, hw in [(16, 16, 1, 6), (16, 24, 2, 7), (8, 16, 1, 5)]:
        m = MobileViTV2InvertedResidual(hf_config(), cin, cout, stride).double()
        init_module(torch, m, rng)
        x = rng.normal(size=(2, cin, hw, hw))
        with torch.no_grad():
            y = m(torch.from_numpy(x)).numpy()
        pairs = []
        for k, v in m.state_dict().items():
            if k.endswith("num_batches_tracked"):
                continue
            pairs.append((oc.map_bottleneck(k, "blk")[0][0], v.numpy()))
        out.append({"in_ch": cin, "out_ch": cout, "stride": stride, "x": tensor(x), "weights": named(pairs),
                    "y": tensor(y)})
    return out


def mv_block_case(torch, rng, hw=(8, 6)):
    from transformers.models.mobilevitv2.modeling_mobilevitv2 import MobileViTV2Layer

    ch, d, depth = 16, 16, 2
    m = MobileViTV2Layer(hf_config(), ch, ch, d, n_attn_blocks=depth, stride=1).double()
    init_module(torch, m, rng, scale=0.2)
    x = rng.normal(size=(2, ch) + hw)
    with torch.no_grad():
        y = m(torch.from_numpy(x)).numpy()
    pairs = []
    for k, v in m.state_dict().items():
        if k.endswith("num_batches_tracked"):
            continue
        mapped = oc.map_mv_block(k, v.numpy(), "blk")
        if mapped is None:
            raise KeyError(k)
        pairs += mapped
    return {"channels": ch, "attn_dim": d, "depth": depth, "x": tensor(x), "weights": named(pairs), "y": tensor(y)}


def model_counts():
    from transformers import MobileViTV2Config, MobileViTV2ForImageClassification

    out = {}
    for n in (3, 10, 1000):
        m = MobileViTV2ForImageClassification(MobileViTV2Config(width_multiplier=0.5, num_labels=n))
        out[str(n)] = sum(p.numel() for p in m.parameters())
    return out


# ---- scikit-learn metrics ---------------------------------------------------------------

def metric_case(rng):
    from sklearn import metrics as skm

    n, c = 40, 4
    truth = rng.integers(0, c - 1, size=n)  # class 3 never occurs
    logits = rng.normal(size=(n, c))
    logits[np.arange(n), truth] += 1.2
    logits[:, 3] -= 4.0  # ...and is never predicted
    probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    probs = probs.astype(np.float32).astype(np.float64)  # values the float engine will see
    pred = probs.argmax(1)
    labels = list(range(c))
    p, r, f, s = skm.precision_recall_fscore_support(truth, pred, labels=labels, zero_division=0)
    roc = []
    for k in range(c):
        pos = truth == k
        if pos.all() or not pos.any():
            roc.append(None)
            continue
        fpr, tpr, _ = skm.roc_curve(pos, probs[:, k], drop_intermediate=False)
        roc.append({"fpr": [float(v) for v in fpr], "tpr": [float(v) for v in tpr],
                    "auc": float(skm.roc_auc_score(pos, probs[:, k]))})
    return {
        "probs": tensor(probs),
        "truth": [int(t) for t in truth],
        "confusion": skm.confusion_matrix(truth, pred, labels=labels).tolist(),
        "accuracy": float(skm.accuracy_score(truth, pred)),
        "precision": [float(v) for v in p],
        "recall": [float(v) for v in r],
        "f1": [float(v) for v in f],
        "support": [int(v) for v in s],
        "macro_precision": float(np.mean(p)),
        "macro_recall": float(np.mean(r)),
        "macro_f1": float(np.mean(f)),
        "top2": float(skm.top_k_accuracy_score(truth, probs, k=2, labels=labels)),
        "top3": float(skm.top_k_accuracy_score(truth, probs, k=3, labels=labels)),
        "log_loss": float(log_loss(skm, truth, probs, labels)),
        "roc": roc,
    }


# ---- MVW1 golden file ------------------------------------------------------------------

def golden_mvw(rng):
    tensors = [
        ("stem.conv.weight", rng.normal(size=(4, 3, 3, 3)).astype(np.float32)),
        ("stem.bn.weight", np.ones(4, np.float32)),
        ("stem.bn.bias", np.zeros(4, np.float32)),
        ("stem.bn.running_mean", rng.normal(size=(4,)).astype(np.float32)),
        ("stem.bn.running_var", rng.uniform(0.5, 2, size=(4,)).astype(np.float32)),
        ("head.fc.weight", rng.normal(size=(4, 3)).astype(np.float32)),
        ("head.fc.bias", np.array([0.5, -1.25, 3.0], np.float32)),
        ("scalar.temperature", np.array(2.5, np.float32)),
        ("unicode.gewicht.ä", np.array([[1.0, -0.0], [math.inf, 1e-30]], np.float32)),
    ]
    return oc.mvw_bytes(tensors)


def build(torch):
    rng = np.random.default_rng(20240611)
    torch.manual_seed(0)
    prims = {
        "conv2d": conv_cases(torch, rng),
        "batch_norm": batch_norm_cases(torch, rng),
        "group_norm": group_norm_cases(torch, rng),
        "loss": loss_cases(torch, rng),
        "resize": resize_cases(torch, rng),
        "adam": adam_case(torch, rng),
    }
    blocks = {
        "attention": attention_case(torch, rng),
        "bottleneck": bottleneck_cases(torch, rng),
        "mv_block": mv_block_case(torch, rng),
        "mv_block_odd": mv_block_case(torch, rng, (7, 5)),
        "param_counts": model_counts(),
    }
    metrics = metric_case(rng)
    mvw = golden_mvw(rng)
    return {
        "primitives.json": json.dumps(prims, indent=1) + "\n",
        "blocks.json": json.dumps(blocks, indent=1) + "\n",
        "metrics.json": json.dumps(metrics, indent=1) + "\n",
        "golden.mvw": mvw,
        "golden_listing.txt": oc.listing(mvw),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    import torch

    torch.set_num_threads(1)
    from transformers.models.mobilevitv2.modeling_mobilevitv2 import MobileViTV2Layer

    oc.pad_and_crop(MobileViTV2Layer, torch)  # odd maps: zero-pad, then crop after folding
    files = build(torch)
    bad = 0
    for name, content in files.items():
        path = os.path.join(DATA, name)
        raw = content if isinstance(content, bytes) else content.encode("utf-8")
        if args.check:
            with open(path, "rb") as f:
                if f.read() != raw:
                    print("differs: " + name)
                    bad += 1
        else:
            os.makedirs(DATA, exist_ok=True)
            with open(path, "wb") as f:
                f.write(raw)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
