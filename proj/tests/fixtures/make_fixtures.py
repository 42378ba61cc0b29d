#!/usr/bin/env python3
# Copyright 2026 The ICE Localizer Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Regenerates the reference fixtures in this directory (deterministic)."""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
VIEWS = ["TV", "MV", "LPV", "CT"]
PACING = ["NSR", "DIST", "PROX"]

BEATS = [95, 90, 114, 108, 108, 108, 100, 162, 108, 98, 157, 66, 107, 108, 101, 107, 34, 152,
         107, 106, 108, 165, 164, 168, 96, 165, 107, 162, 108, 108, 103, 108, 167, 167, 168,
         168, 168, 106, 160]

VAL = [
    [72.73, 90.90, 63.63, 54.54, 72.73],
    [75, 83.33, 66.67, 50, 75],
    [75, 91.67, 83.33, 81.81, 91.67],
    [66.67, 66.67, 66.67, 58.33, 75],
    [70, 80, 100, 80, 90],
    [70, 58.33, 50, 41.66, 66.67],
    [75, 91.67, 91.67, 75, 83.33],
    [66.67, 75, 66.67, 58.33, 66.67],
    [75, 66.67, 58.33, 60, 75],
    [66.67, 66.67, 83.33, 70, 66.67],
]
TEST = [
    [50, 75, 75, 50, 83.33],
    [63.63, 45.45, 63.63, 54.54, 63.64],
    [58.33, 66.67, 41.67, 50, 66.67],
    [66.67, 75, 83.33, 72.72, 66.67],
    [66.67, 58.33, 66.67, 58.33, 66.67],
    [70, 80, 70, 60, 90],
    [40, 50, 50, 50, 41.67],
    [75, 75, 58.33, 58.33, 66.67],
    [66.67, 66.67, 66.67, 33.33, 58.33],
    [58.33, 58.33, 58.33, 60, 58.33],
]


def write_manifest():
    assert sum(BEATS) == 4802 and len(BEATS) == 39
    patients = []
    for i, total in enumerate(BEATS):
        pid = "P%d" % (i + 1)
        clips = []
        k = 0
        for view in VIEWS:
            for pacing in PACING:
                n = total // 12 + (1 if k < total % 12 else 0)
                k += 1
                if n == 0:
                    continue
                cid = "%s_%s_%s" % (pid, view, pacing)
                beats = [{"start_frame": 25 * b, "pr_frame": 25 * b + 5, "end_frame": 25 * b + 25}
                         for b in range(n)]
                clips.append({"clip_id": cid, "view": view, "pacing": pacing,
                              "frame_store": "frames/" + cid, "frame_count": 25 * n,
                              "beats": beats})
        patients.append({"id": pid, "clips": clips})
    doc = {"patients": patients, "ordering": [p["id"] for p in patients]}
    with open(os.path.join(HERE, "reference_cohort_manifest.json"), "w") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


def write_tables():
    for name, rows in (("reference_val_table.csv", VAL), ("reference_test_table.csv", TEST)):
        with open(os.path.join(HERE, name), "w") as f:
            f.write("Fold,TV,MV,LPV,CT,Cross-View\n")
            for r, row in enumerate(rows):
                f.write("%d,%s\n" % (r + 1, ",".join("%.2f" % v for v in row)))


def fraction(value, dens):
    """(k, d) with 100k/d matching a two-decimal table entry (rounded or truncated)."""
    for d in dens:
        for k in range(d + 1):
            exact = 100.0 * k / d
            if abs(round(exact, 2) - value) < 1e-6 or abs(int(exact * 100) / 100 - value) < 1e-6:
                return k, d
    raise ValueError(value)


def fused_correct(truth, votes):
    counts = [0, 0, 0]
    for v in votes:
        counts[v] += 1
    best = max(counts)
    return counts.index(best) == truth


def solve_fold(row, rng):
    kx, units = fraction(row[4], [12, 11, 10])
    cols = [fraction(v, [units] + [d for d in (12, 11, 10) if d < units]) for v in row[:4]]
    # assign[u] = (correct flags per view, wrong class)
    assign = []
    for u in range(units):
        truth = u % 3
        assign.append(([rng.random() < 0.6 for _ in VIEWS], rng.choice([c for c in range(3) if c != truth])))

    def votes_of(u):
        flags, wrong = assign[u]
        truth = u % 3
        return [truth if flags[v] else wrong for v in range(4) if u < cols[v][1]]

    def cost():
        c = 0
        for v in range(4):
            got = sum(1 for u in range(cols[v][1]) if assign[u][0][v])
            c += abs(got - cols[v][0])
        got = sum(1 for u in range(units) if fused_correct(u % 3, votes_of(u)))
        return c + abs(got - kx)

    current = cost()
    for _ in range(200000):
        if current == 0:
            break
        u = rng.randrange(units)
        old = assign[u]
        flags = list(old[0])
        if rng.random() < 0.8:
            flags[rng.randrange(4)] ^= True
            assign[u] = (flags, old[1])
        else:
            truth = u % 3
            assign[u] = (flags, rng.choice([c for c in range(3) if c != truth]))
        new = cost()
        if new <= current:
            current = new
        else:
            assign[u] = old
    assert current == 0, row
    preds = []
    for u in range(units):
        pid = "Q%02d" % (u // 3 + 1)
        truth = u % 3
        flags, wrong = assign[u]
        for v, view in enumerate(VIEWS):
            if u >= cols[v][1]:
                continue
            pred = truth if flags[v] else wrong
            cid = "%s_%s_%s" % (pid, view, PACING[truth])
            for b in range(3):
                preds.append((view, {"patient_id": pid, "clip_id": cid, "view": view,
                                     "true_pacing": PACING[truth], "predicted_pacing": PACING[pred],
                                     "beat_index": b, "split": "test"}))
    return preds


def write_predictions():
    rng = random.Random(20)
    root = os.path.join(HERE, "reference_test_run")
    for r, row in enumerate(TEST):
        preds = solve_fold(row, rng)
        for view in VIEWS:
            d = os.path.join(root, "fold_%d" % r, "view_%s" % view)
            os.makedirs(d, exist_ok=True)
            with open(os.path.join(d, "preds.jsonl"), "w") as f:
                for v, p in preds:
                    if v == view:
                        f.write(json.dumps(p, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    write_manifest()
    write_tables()
    write_predictions()
