"""Reading the CSV outputs back, with schema checks."""
import csv
import os

import numpy as np

from .experiments import CHECKPOINTS, SUMMARY_COLUMNS, SimulationSet
from .walk import RENEWAL_COLUMNS, RenewalTable


class SchemaError(ValueError):
    pass


def read_csv(path, columns):
    """Rows of a CSV with ``#`` comment lines, as a dict of string columns."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing input file: {path}")
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{path}: empty file (no header)")
    for c in columns:
        if c not in header:
            raise SchemaError(f"{path}: missing column '{c}'")
    for c in header:
        if c not in columns:
            raise SchemaError(f"{path}: unexpected column '{c}'")
    rows = list(reader)
    return {c: [r[j] for r in rows] for j, c in enumerate(header)}


def read_renewals(path):
    """{replica: (RenewalTable, V column)} from a renewal CSV."""
    cols = read_csv(path, RENEWAL_COLUMNS)
    rep = np.array(cols["replica"], dtype=np.int64)
    out = {}
    for r in dict.fromkeys(rep.tolist()):
        idx = np.flatnonzero(rep == r)
        g = lambda c: [cols[c][i] for i in idx]
        cens = np.array(g("censored"), dtype=np.int64).astype(bool)
        num = lambda c, fill: np.array([fill if v == "" else v for v in g(c)], dtype=float)
        phi = num("phi_entry", "nan")
        phi_exit = np.append(phi[1:], np.nan)
        tab = RenewalTable(np.array(g("tau"), dtype=np.int64), np.array(g("height"), dtype=np.int64),
                           phi, phi_exit, num("duration", -1).astype(np.int64),
                           num("height_gain", -1).astype(np.int64), cens, -1, -1)
        out[r] = (tab, num("V", "nan"))
    return out


def read_summaries(path):
    cols = read_csv(path, SUMMARY_COLUMNS)
    return cols


def load_simulation(directory):
    """SimulationSet from a ``simulate`` output directory."""
    summ = read_summaries(os.path.join(directory, "summaries.csv"))
    ren = read_renewals(os.path.join(directory, "renewals.csv"))
    ok = [i for i, e in enumerate(summ["error"]) if e == ""]
    reps = np.array([int(summ["replica"][i]) for i in ok], dtype=np.int64)
    H = np.array([[float(summ[c][i]) for c in ("h_t025", "h_t050", "h_t100")] for i in ok],
                 dtype=float).reshape(-1, len(CHECKPOINTS))
    tables, chains = [], []
    for r in reps.tolist():
        tab, V = ren.get(r, (None, None))
        if tab is None:
            tab = RenewalTable(*(np.zeros(0, dtype=np.int64),) * 2, np.zeros(0), np.zeros(0),
                               *(np.zeros(0, dtype=np.int64),) * 2, np.zeros(0, dtype=bool), -1, -1)
            V = np.zeros(0)
        tables.append(tab)
        keep = tab.uncensored
        chains.append({"phi": tab.phi_exit[keep], "V": V[keep]})
    failures = [(int(summ["replica"][i]), summ["error"][i]) for i, e in enumerate(summ["error"]) if e]
    return SimulationSet(reps, np.array([int(summ["n_steps"][i]) for i in ok], dtype=np.int64),
                         H, tables, chains, failures)
