"""Independent brute-force references shared by unit and acceptance tests."""

import math

import numpy as np


def cos(a, b):
    return sum(x * y for x, y in zip(a, b)) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def unit_cosines(rows, query):
    """Cosines computed exactly as the library does, so ties compare equal."""
    rows = np.asarray(rows, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)) @ (query / np.linalg.norm(query))


def top_k_by_full_sort(sims, k):
    """Indices of the k largest similarities; ties resolved by position."""
    return sorted(range(len(sims)), key=lambda i: (-sims[i], i))[:k]


def greedy_nms(pairwise, q):
    """Walk candidates in rank order, keeping each one whose similarity to all kept ones is <= q."""
    kept = []
    for i in range(len(pairwise)):
        if all(pairwise[i][j] <= q for j in kept):
            kept.append(i)
    return kept


def box_iou(a, b):
    w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = w * h
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + ((b[2] - b[0]) * (b[3] - b[1])) - inter)


def pr_curve_ap(dets, gts, category, threshold):
    """Plain-loop PR curve: greedy matching, then max precision at recall >= r for 101 r."""
    gts = [g for g in gts if g[1] == category]
    if not gts:
        return None
    dets = sorted((d for d in dets if d.category_id == category),
                  key=lambda d: (-d.score, d.image_id, d.category_id, d.box))
    used = set()
    tp = 0
    points = []
    for k, d in enumerate(dets, start=1):
        best, best_iou = None, -1.0
        for j, (img, _, box) in enumerate(gts):
            if img != d.image_id or j in used:
                continue
            o = box_iou(d.box, box)
            if o > best_iou:
                best, best_iou = j, o
        if best is not None and best_iou >= threshold:
            used.add(best)
            tp += 1
        points.append((tp / len(gts), tp / k))
    sampled = []
    for r in np.linspace(0.0, 1.0, 101):
        sampled.append(max((p for rec, p in points if rec >= r), default=0.0))
    return float(np.mean(sampled))


def grid_box(rng):
    x = sorted(rng.choice(np.arange(0, 1.01, 0.1), 2, replace=False))
    y = sorted(rng.choice(np.arange(0, 1.01, 0.1), 2, replace=False))
    return (float(x[0]), float(y[0]), float(x[1]), float(y[1]))


def tiny_detection_instance(rng, detection_cls):
    """At most 5 images, 6 ground truths and 10 detections on a coarse box grid (ties are common)."""
    images = [f"i{k}" for k in range(int(rng.integers(1, 6)))]
    gts = [(str(rng.choice(images)), str(rng.choice(["a", "b"])), grid_box(rng))
           for _ in range(int(rng.integers(1, 7)))]
    dets = []
    for _ in range(int(rng.integers(0, 11))):
        if rng.random() < 0.6:
            img, cat, box = gts[int(rng.integers(len(gts)))]
            if rng.random() < 0.5:
                box = grid_box(rng)
        else:
            img, cat, box = str(rng.choice(images)), str(rng.choice(["a", "b"])), grid_box(rng)
        dets.append(detection_cls(img, box, cat, float(rng.choice([0.2, 0.5, 0.9, rng.uniform()]))))
    return dets, gts


def adamw_reference(p0, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=1e-4):
    """Scalar-by-scalar AdamW recurrence with decoupled decay; returns every iterate."""
    p = list(p0)
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    out = []
    for t, g in enumerate(grads, start=1):
        for i in range(len(p)):
            p[i] = p[i] * (1.0 - lr * wd)
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] ** 2
            m_hat = m[i] / (1.0 - b1 ** t)
            v_hat = v[i] / (1.0 - b2 ** t)
            p[i] = p[i] - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(list(p))
    return out


def central_difference(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        out[idx] = (f(up) - f(down)) / (2 * h)
    return out


def relative_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale < 1e-300 else float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)
