"""Smoke test for the Python extension: run with `python python/smoke_test.py`."""

import math

import mutualism


def check(name, ok):
    print(f"{'PASS' if ok else 'FAIL'} {name}")
    return ok


def main():
    results = []

    eqs = mutualism.equilibria(s_in=3.0, d=0.2)
    results.append(check("three equilibria at the reference point", len(eqs) == 3))
    washout = eqs[0]
    results.append(check("washout at (S_in, 0, 0)", washout["kind"] == "washout" and washout["state"] == (3.0, 0.0, 0.0)))
    results.append(check("washout stable", washout["stable"]))

    times, states = mutualism.simulate((1.5, 0.01, 0.01), 200.0, s_in=3.0, d=0.2)
    results.append(check("small inoculum washes out", states[-1][1] < 1e-3 and states[-1][2] < 1e-3))
    results.append(check("simulate returns matching lengths", len(times) == len(states) and times[-1] == 200.0))

    b = mutualism.branch("sin", 2.5, 3.6, d=0.2)
    kinds = [(e["kind"], round(e["param"], 4)) for e in b["events"]]
    results.append(check(f"branch events {kinds}", ("LP", 2.8504) in kinds and ("H", 3.2381) in kinds))

    fam = mutualism.cycles_from_hopf(3.2, 3.24, d=0.2)
    order = [e["kind"] for e in fam["events"]]
    results.append(check(f"cycle events {order}", order == ["LPC", "LPC", "PD", "Hom"]))
    hom = fam["events"][-1]["param"]
    results.append(check(f"homoclinic at {hom:.5f}", math.isclose(hom, 3.2307, abs_tol=2e-3)))

    label = mutualism.classify((1.5, 1.0, 1.0), s_in=3.5, d=0.2)
    results.append(check(f"large inoculum persists ({label['tag']})", label["kind"] == "equilibrium" and label["index"] != 0))

    try:
        mutualism.equilibria(d=-1.0)
        results.append(check("negative D rejected", False))
    except ValueError:
        results.append(check("negative D rejected", True))

    if not all(results):
        raise SystemExit(1)


if __name__ == "__main__":
    main()
