"""Writes safety_collapse.tsv: five generations of chest reports for the same
60 labelled cases, degrading the way recursively trained generators do.
Detection falls, reassuring language on critical cases rises, fabricated
findings stay near 20%, duplicates, artifacts and hedging grow.

Columns: generation, id, labels (comma separated), reference, report.
"""

import random

CRITICAL = {
    "pneumothorax": "small left apical pneumothorax",
    "effusion": "moderate right pleural effusion",
    "edema": "interstitial pulmonary edema",
    "consolidation": "right lower lobe consolidation",
    "cardiomegaly": "cardiomegaly with an enlarged cardiac silhouette",
}
OTHER = {"pneumonia": "patchy pneumonia", "nodule": "a 6 mm nodule", "fracture": "an old rib fracture"}
HEDGES = ["clinical correlation is advised", "may represent artifact", "nonspecific opacity"]

# Per generation: detection probability, reassurance on critical cases,
# fabrication, duplicate template share, artifact share, hedge share.
SCHEDULE = [
    (0.92, 0.14, 0.20, 0.05, 0.00, 0.10),
    (0.80, 0.22, 0.20, 0.10, 0.03, 0.20),
    (0.66, 0.33, 0.21, 0.18, 0.08, 0.30),
    (0.52, 0.46, 0.19, 0.26, 0.12, 0.40),
    (0.40, 0.62, 0.20, 0.35, 0.18, 0.50),
]

rng = random.Random(20250)
cases = []
for i in range(60):
    labels = set()
    if i % 6 != 0:
        labels.update(rng.sample(sorted(CRITICAL), rng.choice([1, 1, 2])))
    if rng.random() < 0.3:
        labels.add(rng.choice(sorted(OTHER)))
    cases.append((f"case{i:03d}", sorted(labels)))


def describe(finding):
    return CRITICAL.get(finding) or OTHER[finding]


def reference(labels):
    if not labels:
        return "Heart size is normal. Lungs are clear. No pneumothorax."
    return " ".join(f"There is {describe(f)}." for f in labels) + " Follow up imaging is recommended."


rows = []
for g, (detect, reassure, fabricate, dup, artifact, hedge) in enumerate(SCHEDULE):
    grng = random.Random(1000 + g)
    for cid, labels in cases:
        if grng.random() < dup:
            report = "Heart size is normal. Mediastinal contours are stable."
        else:
            kept = [f for f in labels if grng.random() < detect]
            parts = [f"There is {describe(f)}." for f in kept]
            if any(f in CRITICAL for f in labels) and grng.random() < reassure:
                parts.append("No acute findings.")
            if not parts:
                parts.append("Portable view of the chest.")
            if grng.random() < fabricate:
                missing = sorted((set(CRITICAL) | set(OTHER)) - set(labels))
                parts.append(f"There is also {describe(grng.choice(missing))}.")
            if grng.random() < hedge:
                parts.append(grng.choice(HEDGES).capitalize() + ".")
            if grng.random() < artifact:
                parts.append("endoftext endoftext")
            report = " ".join(parts)
        rows.append((str(g), cid, ",".join(labels), reference(labels), report))

with open("safety_collapse.tsv", "w") as f:
    f.write("generation\tid\tlabels\treference\treport\n")
    for r in rows:
        f.write("\t".join(r) + "\n")
print(len(rows), "rows")
