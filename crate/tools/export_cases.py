"""Export reference cases and independent power-flow fixtures.

Writes MATPOWER-format case files into data/ and solved bus voltages plus
branch-end active flows (computed by PYPOWER's Newton solver, Q limits off)
into data/fixtures/. Angles are rebased so the slack bus sits at 0 rad.

    pip install pypower
    python3 tools/export_cases.py
"""
import os
import numpy as np
from pypower.api import case9, case118, ppoption, runpf, makeYbus
from pypower.ext2int import ext2int

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")
DATA = os.path.join(ROOT, "data")
FIX = os.path.join(DATA, "fixtures")


def case3():
    # slack, PV, PQ; one off-nominal tap and one phase shifter
    return {
        "version": "2",
        "baseMVA": 100.0,
        "bus": np.array([
            [1, 3, 0.0, 0.0, 0.0, 0.0, 1, 1.02, 0.0, 230.0, 1, 1.1, 0.9],
            [2, 2, 20.0, 10.0, 0.0, 0.0, 1, 1.01, 0.0, 230.0, 1, 1.1, 0.9],
            [3, 1, 150.0, 50.0, 0.0, 15.0, 1, 1.0, 0.0, 115.0, 1, 1.1, 0.9],
        ]),
        "gen": np.array([
            [1, 0.0, 0.0, 300.0, -300.0, 1.02, 100.0, 1, 300.0, 0.0] + [0.0] * 11,
            [2, 80.0, 0.0, 300.0, -300.0, 1.01, 100.0, 1, 300.0, 0.0] + [0.0] * 11,
        ]),
        "branch": np.array([
            [1, 2, 0.01, 0.08, 0.04, 250, 250, 250, 0.0, 0.0, 1, -360, 360],
            [1, 3, 0.02, 0.12, 0.0, 250, 250, 250, 1.05, 0.0, 1, -360, 360],
            [2, 3, 0.015, 0.10, 0.0, 250, 250, 250, 0.98, 3.0, 1, -360, 360],
        ]),
    }


def fmt(x):
    return ("%d" % x) if float(x).is_integer() else repr(float(x))


def table(f, key, rows, ncols):
    f.write("mpc.%s = [\n" % key)
    for row in rows:
        f.write("\t" + "\t".join(fmt(v) for v in row[:ncols]) + ";\n")
    f.write("];\n\n")


def write_m(path, name, ppc):
    with open(path, "w") as f:
        f.write("function mpc = %s\n" % name)
        f.write("%% exported from PYPOWER by tools/export_cases.py\n\n")
        f.write("mpc.version = '2';\n\n")
        f.write("%%%% system MVA base\nmpc.baseMVA = %s;\n\n" % fmt(ppc["baseMVA"]))
        f.write("%% bus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n")
        table(f, "bus", ppc["bus"], 13)
        f.write("%% bus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n")
        table(f, "gen", ppc["gen"], 10)
        f.write("%% fbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n")
        table(f, "branch", ppc["branch"], 13)


def export(name, ppc):
    ppc = dict(ppc)
    ppc.pop("gencost", None)
    ppc.pop("areas", None)
    write_m(os.path.join(DATA, name + ".m"), name, ppc)
    opt = ppoption(PF_ALG=1, PF_TOL=1e-12, PF_MAX_IT=30, ENFORCE_Q_LIMS=0, VERBOSE=0, OUT_ALL=0)
    res, ok = runpf(ppc, opt)
    assert ok, name
    bus = res["bus"]
    slack = bus[bus[:, 1] == 3][0]
    va0 = np.deg2rad(slack[8])
    with open(os.path.join(FIX, name + "_bus.csv"), "w") as f:
        f.write("bus,vm,va_rad\n")
        for row in bus:
            f.write("%d,%.15e,%.15e\n" % (row[0], row[7], np.deg2rad(row[8]) - va0))
    with open(os.path.join(FIX, name + "_branch.csv"), "w") as f:
        f.write("from,to,pf_mw,pt_mw\n")
        for row in res["branch"]:
            f.write("%d,%d,%.15e,%.15e\n" % (row[0], row[1], row[13], row[15]))


def export_ybus(name, ppc):
    ppc = ext2int(dict(ppc))
    ybus, _, _ = makeYbus(ppc["baseMVA"], ppc["bus"], ppc["branch"])
    ybus = ybus.toarray()
    with open(os.path.join(FIX, name + "_ybus.csv"), "w") as f:
        f.write("row,col,re,im\n")
        for i in range(ybus.shape[0]):
            for j in range(ybus.shape[1]):
                f.write("%d,%d,%.15e,%.15e\n" % (i, j, ybus[i, j].real, ybus[i, j].imag))


if __name__ == "__main__":
    os.makedirs(FIX, exist_ok=True)
    export("case3", case3())
    export_ybus("case3", case3())
    export("case9", case9())
    export("case118", case118())
