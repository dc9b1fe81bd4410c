"""Seeded random small instances for oracle comparisons."""
import numpy as np

from ventopt.problem import Options
from ventopt.samples import NetBuilder, catalog, duct_element, fan_line, outlet_element, silencer, station, vfc


def random_instance(seed):
    """At most 8 variable slots, 2 scenarios, 2 fan candidates and 2 silencers."""
    rng = np.random.default_rng(seed)
    n_scen = int(rng.integers(1, 3))
    w = rng.dirichlet(np.ones(n_scen)) if n_scen > 1 else np.array([1.0])
    scen = [(f"s{j + 1}", float(w[j])) for j in range(n_scen)]
    n_rooms = int(rng.integers(1, 4))
    nb = NetBuilder(scen, name=f"rand{seed}")
    nb.junction("a")
    nb.junction("b")
    flows = {}
    for i in range(n_rooms):
        base = float(rng.uniform(0.15, 0.5))
        flows[f"r{i}"] = {s: base * (1.0 if j == 0 else float(rng.uniform(0.5, 0.9)))
                          for j, (s, _) in enumerate(scen)}
    nb.edge("FS", "src", "a", "fan_station", "st")
    sils = 0
    if rng.random() < 0.5:
        nb.edge("S0", "a", "b", "silencer", "sil")
        sils += 1
    else:
        nb.edge("trunk", "a", "b", "fixed_chain", k=float(rng.uniform(10, 40)),
                elements=[duct_element(_total(flows, scen), 1.0, 1.0)])
    vfcs = 0
    for i in range(n_rooms):
        r = f"r{i}"
        nb.room(r, flows[r], limit=None)
        up = "b"
        nxt = f"{r}-j"
        nb.junction(nxt)
        nb.edge(f"{r}-duct", up, nxt, "fixed_chain", k=float(rng.uniform(1000, 3000)),
                elements=[duct_element(flows[r], 2.0, 0.3, base=-4.0)])
        up = nxt
        if n_rooms > 1:
            nxt = f"{r}-v"
            nb.junction(nxt)
            nb.edge(f"{r}-VFC", up, nxt, "vfc", "vfc")
            vfcs += 1
            up = nxt
        if sils < 2 and rng.random() < 0.4:
            nxt = f"{r}-s"
            nb.junction(nxt)
            nb.edge(f"{r}-S", up, nxt, "silencer", "sil")
            sils += 1
            up = nxt
        nb.edge(f"{r}-out", up, r, "fixed_chain", k=float(rng.uniform(50, 200)),
                elements=[outlet_element(flows[r])])
    qmax = sum(max(f.values()) for f in flows.values())
    lines = {}
    cands = []
    for j in range(int(rng.integers(1, 3))):
        lid = f"L{j}"
        lines[lid] = fan_line((-6.0, float(rng.uniform(20, 50)), float(rng.uniform(2600, 3600))),
                              eta=float(rng.uniform(0.45, 0.8)), beta3=float(rng.uniform(0, 60)),
                              beta4=float(rng.uniform(0, 15)), cost=(float(rng.uniform(1500, 3000)), 300.0, 0, 0),
                              level=float(rng.uniform(26, 38)), sizes=((0.5, 0.05, max(1.6, qmax)),))
        cands.append((lid, 0.5, int(rng.integers(1, 3))))
    n_max = int(min(sum(c for *_, c in cands), rng.integers(1, 5)))
    cat = catalog(lines, {"st": station(cands, n_max=n_max)}, {"vfc": vfc()},
                  {"sil": silencer(splitters=(2, 3), length=(0.5, 1.0))})
    return nb.graph(), cat, Options(length_step_m=0.05)


def _total(flows, scen):
    return {s: sum(f[s] for f in flows.values()) for s, _ in scen}
