"""Writes annotations.json and detections.json for the 20-image eval fixture."""
import json
import random

from fractions import Fraction

CATEGORIES = ["stop", "yield", "speed_limit", "no_entry"]  # no_entry has no ground truth
W, H = 640, 480


def iou(a, b):
    a = [Fraction(str(v)) for v in a]
    b = [Fraction(str(v)) for v in b]
    iw = max(Fraction(0), min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(Fraction(0), min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def box(rng, side):
    w = side * rng.uniform(0.8, 1.25)
    h = side * rng.uniform(0.8, 1.25)
    x0 = rng.uniform(0, W - w)
    y0 = rng.uniform(0, H - h)
    return [round(x0, 2), round(y0, 2), round(x0 + w, 2), round(y0 + h, 2)]


def jitter(rng, b, amount):
    w, h = b[2] - b[0], b[3] - b[1]
    out = [b[0] + rng.uniform(-amount, amount) * w, b[1] + rng.uniform(-amount, amount) * h,
           b[2] + rng.uniform(-amount, amount) * w, b[3] + rng.uniform(-amount, amount) * h]
    out = [min(max(v, 0.0), lim) for v, lim in zip(out, [W, H, W, H])]
    if out[2] - out[0] < 1 or out[3] - out[1] < 1:
        return list(b)
    return [round(v, 2) for v in out]


def well_posed(gts, dets):
    """No IoU within 1e-6 of the 0.5 threshold and no exact IoU ties."""
    for d in dets:
        seen = []
        for g in gts:
            if g["image_id"] != d["image_id"] or g["class"] != d["class"]:
                continue
            o = iou(d["bbox"], g["bbox"])
            if abs(o - Fraction(1, 2)) < Fraction(1, 10**6) or (o > 0 and o in seen):
                return False
            seen.append(o)
    return True


def main():
    rng = random.Random(20)
    while True:
        images, gts, dets = [], [], []
        for i in range(20):
            images.append({"image_id": i, "path": f"images/{i:02d}.png", "width": W, "height": H})
            for _ in range(rng.randint(0, 4)):
                side = rng.choice([16, 24, 48, 64, 90, 120, 160])
                gts.append({"image_id": i, "bbox": box(rng, side), "class": rng.choice(CATEGORIES[:3])})
        for g in gts:
            r = rng.random()
            if r < 0.15:
                continue
            n = 2 if r > 0.85 else 1
            for _ in range(n):
                cls = g["class"] if rng.random() > 0.1 else rng.choice(CATEGORIES)
                dets.append({"image_id": g["image_id"], "class": cls,
                             "bbox": jitter(rng, g["bbox"], rng.choice([0.03, 0.1, 0.25])),
                             "score": round(rng.random(), 2)})
        for _ in range(15):
            dets.append({"image_id": rng.randrange(20), "class": rng.choice(CATEGORIES[:3]),
                         "bbox": box(rng, rng.choice([20, 50, 100])), "score": round(rng.random(), 2)})
        rng.shuffle(dets)
        if well_posed(gts, dets):
            break
    ann = {"categories": CATEGORIES, "images": images, "ground_truths": gts}
    with open("annotations.json", "w") as f:
        json.dump(ann, f, indent=2)
        f.write("\n")
    with open("detections.json", "w") as f:
        json.dump(dets, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
