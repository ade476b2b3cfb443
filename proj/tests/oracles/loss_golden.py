"""Independent reference for the two-prediction, one-target loss case in test_heads."""
import math

alpha, gamma, kappa = 0.25, 2.0, 0.1


def sigmoid(x):
    return 1 / (1 + math.exp(-x))


def focal(p, y):
    return -alpha * (1 - p) ** gamma * math.log(p) if y else -(1 - alpha) * p ** gamma * math.log(1 - p)


def xyxy(b):
    return (b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2)


def giou(a, b):
    a, b = xyxy(a), xyxy(b)
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
    iw = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    uni = area(a) + area(b) - inter
    hull = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    return inter / uni - (hull - uni) / hull


def l1(a, b):
    fa = [x for r in a for x in r] if isinstance(a[0], list) else a
    fb = [x for r in b for x in r] if isinstance(b[0], list) else b
    return sum(abs(x - y) for x, y in zip(fa, fb)) / len(fa)


def masked_l1(a, b, vis):
    rows = [(ra, rb) for ra, rb, v in zip(a, b, vis) if v]
    return sum(abs(x - y) for ra, rb in rows for x, y in zip(ra, rb)) / (len(rows) * len(a[0]))


preds = [
    dict(logit=0.3, box=[0.5, 0.5, 0.2, 0.3],
         j2d=[[0.5, 0.4], [0.45, 0.6], [0.55, 0.62]],
         pose=[[0.1, -0.2, 0.05], [0.0, 0.3, -0.1], [0.2, 0.1, 0.0]],
         shape=[0.1, -0.3, 0.2, 0.0], trans=[0.05, -0.1, 6.2],
         kp3d=[[0.0, 0.0, 6.0], [0.1, 0.4, 6.1], [-0.1, 0.45, 5.9]],
         kp2d=[[0.5, 0.5], [0.52, 0.6], [0.47, 0.62]]),
    dict(logit=-1.2, box=[0.2, 0.25, 0.1, 0.12],
         j2d=[[0.2, 0.2], [0.18, 0.3], [0.22, 0.31]],
         pose=[[0.0] * 3] * 3, shape=[0.0] * 4, trans=[0.0, 0.0, 6.0],
         kp3d=[[0.0, 0.0, 6.0]] * 3, kp2d=[[0.2, 0.2]] * 3),
]
gt = dict(box=[0.52, 0.48, 0.22, 0.28],
          j2d=[[0.51, 0.41], [0.44, 0.58], [0.56, 0.6]],
          j3d=[[0.02, -0.01, 6.05], [0.12, 0.38, 6.0], [-0.08, 0.5, 5.95]],
          pose=[[0.12, -0.25, 0.0], [0.05, 0.25, -0.05], [0.1, 0.1, 0.1]],
          shape=[0.0, -0.2, 0.25, 0.1], trans=[0.0, -0.05, 6.1],
          visible=[1, 0, 1])

costs = []
for p in preds:
    prob = sigmoid(p["logit"])
    costs.append(focal(prob, 1) - focal(prob, 0) + l1(p["box"], gt["box"]) + 1 - giou(p["box"], gt["box"]))
m = min(range(2), key=lambda i: costs[i])
p = preds[m]

cls = sum(focal(sigmoid(q["logit"]), 1 if i == m else 0) for i, q in enumerate(preds))
box = l1(p["box"], gt["box"]) + 1 - giou(p["box"], gt["box"])
s = math.sqrt(gt["box"][2] * gt["box"][3])
oks_terms = [math.exp(-((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) / (2 * s * s * kappa * kappa))
             for a, b, v in zip(p["j2d"], gt["j2d"], gt["visible"]) if v]
j2d = masked_l1(p["j2d"], gt["j2d"], gt["visible"]) + 1 - sum(oks_terms) / len(oks_terms)
flat = lambda x: [v for r in x for v in r]
pa = flat(p["pose"]) + p["shape"] + p["trans"]
pb = flat(gt["pose"]) + gt["shape"] + gt["trans"]
param = sum(abs(x - y) for x, y in zip(pa, pb)) / len(pa)
kp3d = masked_l1(p["kp3d"], gt["j3d"], gt["visible"])
kp2d = masked_l1(p["kp2d"], gt["j2d"], gt["visible"])
print("costs", ["%.17g" % c for c in costs], "match", m)
for name, v in [("cls", cls), ("box", box), ("j2d", j2d), ("param", param), ("kp3d", kp3d), ("kp2d", kp2d),
                ("total", cls + box + j2d + param + kp3d + kp2d)]:
    print(name, "%.17g" % v)
