# SPDX-License-Identifier: Apache-2.0
"""Straight-line evaluator for meditool model files.

Reads the coefficient file, scores random valid patients with the textbook
formula and rewrites the file's "test_vectors" array. Shares no code with
the C++ engine.

    python3 scripts/model_oracle.py data/models/cvd10.model --count 12 --seed 1
    python3 scripts/model_oracle.py data/models/cvd10.model --check
"""

import argparse
import json
import math
import random
import re
import sys


def derived_value(op, xs):
    if op == "product":
        return xs[0] * xs[1]
    if op == "square":
        return xs[0] * xs[0]
    if op == "log":
        return math.log(xs[0])
    raise ValueError(f"unknown op {op}")


def raw(feature, patient):
    name = feature["name"]
    value = patient.get(name, feature.get("default"))
    if value is None:
        raise ValueError(f"missing {name}")
    if feature["type"] == "boolean":
        return 1.0 if value else 0.0
    return value


def reference(model):
    out = {}
    for f in model["features"]:
        if f["type"] == "continuous":
            out[f["name"]] = float(f["mean"])
        elif f["type"] == "boolean":
            out[f["name"]] = False
        else:
            out[f["name"]] = f["reference"]
    return out


def probability(model, patient):
    beta = {c["term"]: c["beta"] for c in model["coefficients"]}
    eta = model["intercept_or_S0"] if model["kind"] == "logistic" else 0.0
    for f in model["features"]:
        x = raw(f, patient)
        if f["type"] == "continuous":
            eta += beta[f["name"]] * ((x - f["mean"]) / f["scale"])
        elif f["type"] == "boolean":
            eta += beta[f["name"]] * x
        elif x != f["reference"]:
            eta += beta[f"{f['name']}={x}"]
    by_name = {f["name"]: f for f in model["features"]}
    ref = reference(model)
    for d in model.get("derived_features", []):
        here = [float(raw(by_name[n], patient)) for n in d["inputs"]]
        there = [float(raw(by_name[n], ref)) for n in d["inputs"]]
        centred = derived_value(d["op"], here) - derived_value(d["op"], there)
        eta += beta[d["name"]] * (centred / d.get("scale", 1.0))
    eta = max(-30.0, min(30.0, eta))
    if model["kind"] == "logistic":
        return 1.0 / (1.0 + math.exp(-eta))
    return 1.0 - math.pow(model["intercept_or_S0"], math.exp(eta))


def random_patient(model, rng):
    patient = {}
    for f in model["features"]:
        kind = f["type"]
        if kind == "continuous":
            if f.get("integer"):
                patient[f["name"]] = rng.randint(int(f["min"]), int(f["max"]))
            else:
                patient[f["name"]] = round(rng.uniform(f["min"], f["max"]), 2)
        elif kind == "boolean":
            if "default" in f and rng.random() < 0.3:
                continue
            patient[f["name"]] = rng.random() < 0.3
        else:
            if "default" in f and rng.random() < 0.3:
                continue
            patient[f["name"]] = rng.choice(f["levels"])
    return patient


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("model")
    ap.add_argument("--count", type=int, default=12)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--check", action="store_true", help="verify existing vectors instead of writing")
    args = ap.parse_args()

    with open(args.model) as fh:
        text = fh.read()
    model = json.loads(text)

    if args.check:
        worst = 0.0
        for tv in model["test_vectors"]:
            worst = max(worst, abs(probability(model, tv["patient"]) - tv["expected_probability"]))
        print(f"{len(model['test_vectors'])} vectors, max abs error {worst:.3e}")
        return 0 if worst <= 1e-10 else 1

    rng = random.Random(args.seed)
    patients = [model["example_patient"]] if "example_patient" in model else []
    patients += [random_patient(model, rng) for _ in range(args.count - len(patients))]
    lines = []
    for p in patients:
        entry = {"patient": p, "expected_probability": probability(model, p)}
        lines.append("    " + json.dumps(entry, separators=(", ", ": ")))
    block = '"test_vectors": [\n' + ",\n".join(lines) + "\n  ]"
    text, n = re.subn(r'"test_vectors": \[.*?\n?\s*\]', block, text, count=1, flags=re.S)
    if n != 1:
        print("no test_vectors field to replace", file=sys.stderr)
        return 1
    with open(args.model, "w") as fh:
        fh.write(text)
    print(f"wrote {len(patients)} vectors to {args.model}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
