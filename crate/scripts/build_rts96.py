"""Assemble the three-area RTS-96 case from the single-area RTS-24 data.

Areas 1, 2 and 3 are copies of case24_ieee_rts with bus numbers offset by
100, 200 and 300. Bus 325 and the six interconnecting branches follow the
RTS-96 interconnection table. Only bus 113 keeps the reference type.

usage: python3 scripts/build_rts96.py data/cases/case24_ieee_rts.m data/cases/case73_rts96.m
"""
import re
import sys

TIES = [
    # from, to, r, x, b, rateA, rateB, rateC, ratio
    (107, 203, 0.042, 0.161, 0.044, 175, 193, 200, 0),
    (113, 215, 0.010, 0.075, 0.000, 500, 600, 625, 0),
    (123, 217, 0.010, 0.074, 0.000, 500, 600, 625, 0),
    (325, 121, 0.012, 0.097, 0.000, 500, 600, 625, 0),
    (318, 223, 0.013, 0.104, 0.000, 500, 600, 625, 0),
    (323, 325, 0.000, 0.009, 0.000, 722, 893, 893, 1.0),
]


def block(text, name):
    body = re.search(r"mpc\.%s = \[(.*?)\];" % name, text, re.S).group(1)
    rows = []
    for line in body.strip().splitlines():
        line = line.split("%")[0].strip().rstrip(";").strip()
        if line:
            rows.append(line.split())
    return rows


def fmt(row):
    return "\t" + "\t".join(str(v) for v in row) + ";"


def main(src, dst):
    text = open(src).read()
    bus, gen, branch = block(text, "bus"), block(text, "gen"), block(text, "branch")
    out_bus, out_gen, out_branch = [], [], []
    for area in (1, 2, 3):
        off = area * 100
        for r in bus:
            r = list(r)
            r[0] = str(int(r[0]) + off)
            if r[1] == "3" and area != 1:
                r[1] = "2"
            r[6] = str(area)
            out_bus.append(r)
        for r in gen:
            r = list(r)
            r[0] = str(int(r[0]) + off)
            out_gen.append(r)
        for r in branch:
            r = list(r)
            r[0] = str(int(r[0]) + off)
            r[1] = str(int(r[1]) + off)
            out_branch.append(r)
    out_bus.append(["325", "1", "0", "0", "0", "0", "3", "1", "0", "230", "1", "1.05", "0.95"])
    for (f, t, rr, x, b, ra, rb, rc, ratio) in TIES:
        out_branch.append([f, t, rr, x, b, ra, rb, rc, ratio, 0, 1, -360, 360])

    with open(dst, "w") as fh:
        fh.write("function mpc = case73_rts96\n")
        fh.write("%CASE73_RTS96  Three-area IEEE RTS-96 assembled from case24_ieee_rts.\n")
        fh.write("%   Generated by scripts/build_rts96.py.\n\n")
        fh.write("mpc.version = '2';\n\nmpc.baseMVA = 100;\n\n")
        fh.write("%% bus data\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n")
        fh.write("\n".join(fmt(r) for r in out_bus) + "\n];\n\n")
        fh.write("%% generator data\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\t...\nmpc.gen = [\n")
        fh.write("\n".join(fmt(r) for r in out_gen) + "\n];\n\n")
        fh.write("%% branch data\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\nmpc.branch = [\n")
        fh.write("\n".join(fmt(r) for r in out_branch) + "\n];\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
