#!/usr/bin/env python3
"""Grid-search reference for the two-occupant fairness problem.

Reads a scenario fixture with a probe block (temperature, hand-set cost
increments) and a priors file, enumerates all 81 type profiles directly and
walks alpha_1 over a fine grid. For two occupants the column-sum constraints
force beta_12 = beta_21 = 1, so alpha_1 is the only free parameter. The
stage-1 root (equal expected net benefits) is bracketed on the grid and the
sum of variances is interpolated there.

Writes {alpha_1, sum_variance, common_benefit, step} as JSON.
"""

import argparse
import json
import os

VALUES = [
    (0.2, 0.0, -0.2), (0.4, 0.0, -0.2), (0.4, -0.2, -0.4),
    (0.0, 0.4, 0.0), (0.0, 0.2, -0.2), (-0.2, 0.2, 0.0),
    (-0.2, 0.0, 0.2), (-0.2, 0.0, 0.4), (-0.4, -0.2, 0.4),
]


def best(types, dc):
    order = (1, 0, 2)
    pick, w_pick = None, None
    for k in order:
        if dc[k] is None:
            continue
        w = sum(VALUES[t][k] for t in types) - dc[k]
        if pick is None or w > w_pick + 1e-12:
            pick, w_pick = k, w
        elif abs(w - w_pick) <= 1e-12 and dc[k] < dc[pick]:
            pick, w_pick = k, w
    return pick


def moments(priors, dc, a1):
    alpha = (a1, 1.0 - a1)
    psi = [[0.0] * 9 for _ in range(2)]
    for i in range(2):
        j = 1 - i
        for own in range(9):
            s = 0.0
            for other in range(9):
                types = [0, 0]
                types[i], types[j] = own, other
                x = best(types, dc)
                s += priors[j][other] * (VALUES[other][x] - alpha[j] * dc[x])
            psi[i][own] = s
    mean = [0.0, 0.0]
    second = [0.0, 0.0]
    for t0 in range(9):
        for t1 in range(9):
            p = priors[0][t0] * priors[1][t1]
            if p == 0.0:
                continue
            types = (t0, t1)
            x = best(types, dc)
            for i in range(2):
                j = 1 - i
                t = alpha[i] * dc[x] - psi[i][types[i]] + psi[j][types[j]]
                pi = VALUES[types[i]][x] - t
                mean[i] += p * pi
                second[i] += p * pi * pi
    var = [second[i] - mean[i] ** 2 for i in range(2)]
    return mean, var


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("scenario")
    ap.add_argument("--out", required=True)
    ap.add_argument("--step", type=float, default=1e-4)
    args = ap.parse_args()

    with open(args.scenario) as f:
        spec = json.load(f)
    base = os.path.dirname(os.path.abspath(args.scenario))
    with open(os.path.join(base, spec["priors"]["file"])) as f:
        table = json.load(f)
    temp = str(spec["probe"]["temperature"])
    occupants = spec["session"]["occupancy"]
    if len(occupants) != 2:
        raise SystemExit("grid oracle handles two occupants only")
    priors = [table[o][temp] for o in occupants]
    dc = spec["probe"]["increments"]

    steps = int(round(1.0 / args.step))
    prev = None
    for k in range(steps + 1):
        a1 = k * args.step
        mean, var = moments(priors, dc, a1)
        gap = mean[0] - mean[1]
        cur = (a1, gap, var[0] + var[1], mean[0])
        if prev is not None and (prev[1] <= 0) != (cur[1] <= 0):
            w = prev[1] / (prev[1] - cur[1])
            result = {
                "alpha_1": prev[0] + w * args.step,
                "sum_variance": prev[2] + w * (cur[2] - prev[2]),
                "common_benefit": prev[3] + w * (cur[3] - prev[3]),
                "step": args.step,
            }
            with open(args.out, "w") as f:
                json.dump(result, f, indent=2)
                f.write("\n")
            return
        prev = cur
    raise SystemExit("no stage-1 root on the grid")


if __name__ == "__main__":
    main()
