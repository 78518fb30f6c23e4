#!/usr/bin/env python3
"""End-to-end check against the Hugging Face MobileViTV2 port: random HF
weights are converted to MVW1, then `leafvit classify`, `inspect` and `bench`
must agree with the HF forward pass, tensor listing and parameter count.

    python3 check_hf_model.py --leafvit build/tools/leafvit --workdir /tmp/x
"""

import argparse
import json
import os
import subprocess
import sys

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)

import oracle_common as oc  # noqa: E402

MEAN = np.array([0.485, 0.456, 0.406], np.float32)
STD = np.array([0.229, 0.224, 0.225], np.float32)


def run(cmd):
    r = subprocess.run(cmd, capture_output=True, text=True)
    if r.returncode != 0:
        sys.stderr.write(r.stderr)
        raise SystemExit("command failed (%d): %s" % (r.returncode, " ".join(cmd)))
    return r.stdout


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--leafvit", required=True)
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--tol", type=float, default=1e-4)
    args = ap.parse_args()

    import torch
    from transformers import MobileViTV2Config, MobileViTV2ForImageClassification
    from transformers.models.mobilevitv2.modeling_mobilevitv2 import MobileViTV2Layer

    oc.pad_and_crop(MobileViTV2Layer, torch)

    torch.manual_seed(7)
    torch.set_num_threads(1)
    rng = np.random.default_rng(7)
    labels = ["alpha", "beta", "gamma", "delta", "epsilon"]
    model = MobileViTV2ForImageClassification(MobileViTV2Config(width_multiplier=0.5, num_labels=len(labels)))
    oc.randomize_norm_stats(model, rng)
    with torch.no_grad():
        model.classifier.weight.mul_(20.0)  # spread the logits so the ranking is informative
    model.eval()

    os.makedirs(args.workdir, exist_ok=True)
    mvw = oc.mvw_bytes(oc.hf_model_to_leafvit(model.state_dict()))
    weights = os.path.join(args.workdir, "hf.mvw")
    with open(weights, "wb") as f:
        f.write(mvw)
    with open(os.path.join(args.workdir, "labels.txt"), "w") as f:
        f.write("\n".join(labels) + "\n")
    pixels = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    image = os.path.join(args.workdir, "image.ppm")
    with open(image, "wb") as f:
        f.write(b"P6\n224 224\n255\n" + pixels.tobytes())

    x = (pixels.astype(np.float32) / 255.0 - MEAN) / STD
    with torch.no_grad():
        logits = model(torch.from_numpy(x.transpose(2, 0, 1)[None].copy())).logits
    expected = torch.softmax(logits.double(), 1)[0].numpy()

    failures = []
    got = json.loads(run([args.leafvit, "classify", "--model", weights, "--labels",
                          os.path.join(args.workdir, "labels.txt"), "--image", image, "--topk", "5"]))
    got_probs = {e["label"]: e["prob"] for e in got}
    err = max(abs(got_probs[l] - expected[i]) for i, l in enumerate(labels))
    print("classify: max |p - p_hf| = %.3g" % err)
    order = [labels[i] for i in np.argsort(-expected, kind="stable")]
    if err > args.tol:
        failures.append("probabilities differ by %.3g" % err)
    if [e["label"] for e in got] != order:
        failures.append("ranking differs: %s vs %s" % ([e["label"] for e in got], order))

    listing = run([args.leafvit, "inspect", "--weights", weights])
    if listing != oc.listing(mvw):
        failures.append("inspect listing differs from the independent reader")

    hf_params = sum(p.numel() for p in model.parameters())
    bench = json.loads(run([args.leafvit, "bench", "--model", weights, "--iters", "1", "--warmup", "0"]))
    print("params: leafvit %d, hf %d" % (bench["params"], hf_params))
    if bench["params"] != hf_params:
        failures.append("parameter count %d != %d" % (bench["params"], hf_params))

    for f in failures:
        print("FAIL: " + f)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
