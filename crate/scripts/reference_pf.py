"""Produce reference AC power-flow solutions with PYPOWER.

Runs Newton-Raphson with generator reactive limits enforced and writes bus
voltage magnitudes and angles (radians, relative to the reference bus) as
JSON. Used to freeze fixtures under crates/core/tests/fixtures/.

usage: python3 scripts/reference_pf.py data/cases/case118.m out.json
"""
import json
import re
import sys

import numpy as np
from pypower.api import ppoption, runpf


def block(text, name):
    body = re.search(r"mpc\.%s = \[(.*?)\];" % name, text, re.S).group(1)
    rows = []
    for line in body.strip().splitlines():
        line = line.split("%")[0].strip().rstrip(";").strip()
        if line:
            rows.append([float(v) for v in line.split()])
    return np.array(rows)


def main(src, dst):
    text = open(src).read()
    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.]+)", text).group(1))
    ppc = {
        "version": "2",
        "baseMVA": base,
        "bus": block(text, "bus"),
        "gen": block(text, "gen"),
        "branch": block(text, "branch"),
    }
    opt = ppoption(PF_ALG=1, PF_TOL=1e-11, PF_MAX_IT=30, ENFORCE_Q_LIMS=0, VERBOSE=0, OUT_ALL=0)
    # PV -> PQ switching on generator reactive limits, same outer loop as
    # runpf(ENFORCE_Q_LIMS=1): violating gens are fixed at their limit and
    # folded into the bus load, their bus becomes PQ.
    gen0 = ppc["gen"].copy()
    limited = []
    while True:
        res, ok = runpf(ppc, opt)
        assert ok, "reference power flow did not converge"
        g = res["gen"]
        on = g[:, 7] > 0
        viol = np.where(on & ((g[:, 2] > g[:, 3] + 5e-6) | (g[:, 2] < g[:, 4] - 5e-6)))[0]
        if len(viol) == 0:
            break
        bus = ppc["bus"]
        row = {int(b): i for i, b in enumerate(bus[:, 0])}
        for k in viol:
            qfix = g[k, 3] if g[k, 2] > g[k, 3] else g[k, 4]
            bi = row[int(g[k, 0])]
            bus[bi, 2] -= g[k, 1]
            bus[bi, 3] -= qfix
            ppc["gen"][k, 7] = 0
            assert bus[bi, 1] != 3, "reference bus hit a reactive limit"
            bus[bi, 1] = 1
            limited.append(int(k))
        # warm start from the previous solution
        bus[:, 7] = res["bus"][:, 7]
        bus[:, 8] = res["bus"][:, 8]
    bus = res["bus"]
    print("limited gens", limited)
    ref_rows = np.where(bus[:, 1] == 3)[0]
    ref_id = int(bus[ref_rows[0], 0])
    va = np.deg2rad(bus[:, 8] - bus[ref_rows[0], 8])
    out = {
        "source": src.split("/")[-1],
        "solver": "PYPOWER runpf, Newton-Raphson, PV->PQ on reactive limits, PF_TOL=1e-11",
        "reference_bus": ref_id,
        "bus": [int(b) for b in bus[:, 0]],
        "vm": [float(v) for v in bus[:, 7]],
        "va_rad": [float(v) for v in va],
        "slack_pg_mw": float(res["gen"][res["gen"][:, 0] == ref_id, 1].sum()),
        "q_limited_gen_buses": sorted({int(gen0[k, 0]) for k in limited}),
    }
    with open(dst, "w") as fh:
        json.dump(out, fh, indent=1)
    print(dst, "ref", ref_id, "q-limited", out["q_limited_gen_buses"], "slack pg", out["slack_pg_mw"])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
