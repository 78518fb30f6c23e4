#!/usr/bin/env python3
"""Runs `leafvit evaluate` on small datasets and validates every report
against docs/report.schema.json, plus the cross-field invariants a schema
cannot express.

    python3 check_report_schema.py --leafvit build/tools/leafvit --schema docs/report.schema.json
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile

import jsonschema


def run(cmd):
    r = subprocess.run(cmd, capture_output=True, text=True)
    if r.returncode != 0:
        sys.stderr.write(r.stderr)
        raise SystemExit("command failed (%d): %s" % (r.returncode, " ".join(cmd)))
    return r.stdout


def write_ppm(path, rgb):
    with open(path, "wb") as f:
        f.write(b"P6\n1 1\n255\n" + bytes(rgb))


def consistency(report):
    errors = []
    c = len(report["labels"])
    if len(report["classes"]) != c or len(report["roc"]) != c:
        errors.append("per-class arrays do not match the label count")
    cm = report["confusion_matrix"]
    if len(cm) != c or any(len(row) != c for row in cm):
        errors.append("confusion matrix is not %dx%d" % (c, c))
    if sum(map(sum, cm)) != report["samples"]:
        errors.append("confusion matrix total != samples")
    if abs(report["accuracy"] - report["top1"]) > 1e-12:
        errors.append("top1 != accuracy")
    for k, cls in enumerate(report["classes"]):
        if cls["support"] != sum(cm[k]):
            errors.append("support of %s != its confusion row" % cls["label"])
        if cls["auc"] != report["roc"][k]["auc"]:
            errors.append("auc of %s differs between classes and roc" % cls["label"])
        pts = report["roc"][k]["points"]
        if pts[0] != [0.0, 0.0] or pts[-1] != [1.0, 1.0]:
            errors.append("roc of %s does not run from (0,0) to (1,1)" % cls["label"])
    return errors


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--leafvit", required=True)
    ap.add_argument("--schema", required=True)
    args = ap.parse_args()
    with open(args.schema) as f:
        schema = json.load(f)
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    failures = []
    with tempfile.TemporaryDirectory() as tmp:
        model = os.path.join(tmp, "m.mvw")
        run([args.leafvit, "init", "--num-classes", "3", "--seed", "1", "--out", model])

        fixture = os.path.join(tmp, "fixture")
        run([args.leafvit, "make-fixture", "--out", fixture, "--per-class", "5", "--size", "16"])
        labels = os.path.join(tmp, "labels.txt")
        with open(labels, "w") as f:
            f.write("blue_patch\ngreen_patch\nred_patch\n")

        # one image in "rare" never reaches the validation split, so its AUC is undefined
        sparse = os.path.join(tmp, "sparse")
        for name, n in (("common", 6), ("other", 6), ("rare", 1)):
            os.makedirs(os.path.join(sparse, name))
            for i in range(n):
                write_ppm(os.path.join(sparse, name, "%d.ppm" % i), (40 * i % 256, 90, 200))
        sparse_labels = os.path.join(tmp, "sparse_labels.txt")
        with open(sparse_labels, "w") as f:
            f.write("common\nother\nrare\n")

        cases = [("fixture val", fixture, labels, "val"), ("fixture train", fixture, labels, "train"),
                 ("sparse val", sparse, sparse_labels, "val")]
        for name, data, lab, split in cases:
            out = os.path.join(tmp, name.replace(" ", "_") + ".json")
            run([args.leafvit, "--threads", "1", "evaluate", "--model", model, "--labels", lab, "--data-dir", data,
                 "--split", split, "--out", out])
            with open(out) as f:
                report = json.load(f)
            problems = [e.message for e in validator.iter_errors(report)] + consistency(report)
            if name == "sparse val" and report["classes"][2]["auc"] is not None:
                problems.append("class without validation samples should have a null auc")
            print("%s: %s" % (name, "ok" if not problems else "; ".join(problems)))
            failures.extend(problems)

    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
