"""Build the bundled fixture MLP and its 200-sample evaluation set.

Run from the repository root:  python3 tools/make_fixture_network.py

The network is a 256-128-10 ReLU MLP trained with plain minibatch SGD on
synthetic 16x16 "glyph" images (ten noisy class prototypes). Training uses a
straight-through estimator on a 0.25 grid during the last epochs so that the
weights survive 4-bit fixed point. The evaluation set is drawn from a large
pool: 190 samples the float network classifies correctly and 10 it gets wrong,
so its accuracy is exactly 0.95. Accuracy is computed here with an independent
loop-based forward pass and written to fixture_meta.json as the oracle.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from sramfault.nn import LabeledData, Layer, Network, save_data, save_network  # noqa: E402

OUT = ROOT / "src" / "sramfault" / "data"
SIDE, HIDDEN, CLASSES = 16, 128, 10
N_EVAL, N_WRONG = 200, 10
SEED = 20240611


def prototypes(rng):
    protos = np.zeros((CLASSES, SIDE, SIDE))
    for c in range(CLASSES):
        for _ in range(4):
            r0, c0 = rng.integers(0, SIDE - 5, size=2)
            h, w = rng.integers(2, 6, size=2)
            protos[c, r0:r0 + h, c0:c0 + w] = 1.0
    return protos


def sample(rng, protos, n, noise):
    labels = rng.integers(0, CLASSES, size=n)
    x = protos[labels] + rng.normal(0.0, noise, size=(n, SIDE, SIDE))
    shift = rng.integers(-1, 2, size=(n, 2))
    for i in range(n):
        x[i] = np.roll(x[i], tuple(shift[i]), axis=(0, 1))
    return np.clip(x, 0.0, 1.0).reshape(n, -1).astype(np.float32), labels


def train(rng, x, y, epochs=60, lr=0.05, batch=64):
    w1 = rng.normal(0, np.sqrt(2.0 / x.shape[1]), size=(HIDDEN, x.shape[1]))
    b1 = np.zeros(HIDDEN)
    w2 = rng.normal(0, np.sqrt(2.0 / HIDDEN), size=(CLASSES, HIDDEN))
    b2 = np.zeros(CLASSES)
    onehot = np.eye(CLASSES)[y]
    for epoch in range(epochs):
        snap = epoch >= epochs // 2
        order = rng.permutation(len(x))
        for i in range(0, len(x), batch):
            idx = order[i:i + batch]
            q1 = np.clip(np.round(w1 * 4) / 4, -2, 1.75) if snap else w1
            q2 = np.clip(np.round(w2 * 4) / 4, -2, 1.75) if snap else w2
            h = np.maximum(x[idx] @ q1.T + b1, 0)
            z = h @ q2.T + b2
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            dz = (p - onehot[idx]) / len(idx)
            dw2 = dz.T @ h
            dh = (dz @ q2) * (h > 0)
            dw1 = dh.T @ x[idx]
            w2 -= lr * dw2
            b2 -= lr * dz.sum(0)
            w1 -= lr * dw1
            b1 -= lr * dh.sum(0)
    return [w.astype(np.float32) for w in (w1, b1, w2, b2)]


def reference_predict(params, x):
    """Loop-based forward pass, independent of the package engine."""
    w1, b1, w2, b2 = (p.astype(np.float64) for p in params)
    preds = []
    for v in x.astype(np.float64):
        hidden = [max(0.0, sum(w1[j, k] * v[k] for k in range(v.size)) + b1[j]) for j in range(HIDDEN)]
        scores = [sum(w2[c, j] * hidden[j] for j in range(HIDDEN)) + b2[c] for c in range(CLASSES)]
        best = 0
        for c in range(1, CLASSES):
            if scores[c] > scores[best]:
                best = c
        preds.append(best)
    return np.array(preds)


def main():
    rng = np.random.default_rng(SEED)
    protos = prototypes(rng)
    x_train, y_train = sample(rng, protos, 3000, noise=0.45)
    params = train(rng, x_train, y_train)

    pool_x, pool_y = sample(rng, protos, 1200, noise=0.6)
    pool_pred = reference_predict(params, pool_x)
    right = np.flatnonzero(pool_pred == pool_y)
    wrong = np.flatnonzero(pool_pred != pool_y)
    if right.size < N_EVAL - N_WRONG or wrong.size < N_WRONG:
        raise SystemExit(f"pool too easy or too hard: {right.size} right, {wrong.size} wrong")
    chosen = np.sort(np.concatenate([right[:N_EVAL - N_WRONG], wrong[:N_WRONG]]))
    x_eval, y_eval = pool_x[chosen], pool_y[chosen]
    oracle = float(np.mean(reference_predict(params, x_eval) == y_eval))

    w1, b1, w2, b2 = params
    net = Network((SIDE * SIDE,), (
        Layer("dense", w1, b1), Layer("relu"),
        Layer("dense", w2, b2), Layer("softmax"),
    ), name="mlp")
    OUT.mkdir(parents=True, exist_ok=True)
    save_network(net, OUT)
    save_data(LabeledData(x_eval, y_eval, name="eval"), OUT)
    meta = {
        "network": "network.json",
        "dataset": "dataset.json",
        "oracle_accuracy": oracle,
        "weights": int(w1.size + w2.size),
        "seed": SEED,
    }
    (OUT / "fixture_meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(meta))


if __name__ == "__main__":
    main()
