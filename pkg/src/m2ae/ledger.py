"""Multiply-accumulate bookkeeping.

One MAC (multiply-accumulate) is one unit. Only convolution / linear layers and
deformable sampling are counted; normalization, gating, residual adds and the
gather/scatter index arithmetic are data movement and stay out of the totals.
"""
from dataclasses import dataclass, field
from fractions import Fraction


@dataclass(frozen=True)
class LedgerEntry:
    op: str
    dense_macs: int
    actual_macs: int
    pruned: bool = False
    active_pixels: int | None = None
    total_pixels: int | None = None
    kind: str = "dense"

    @property
    def ratio(self):
        return self.actual_macs / self.dense_macs if self.dense_macs else 1.0

    @property
    def exact_ratio(self):
        return Fraction(self.actual_macs, self.dense_macs) if self.dense_macs else Fraction(1)

    @property
    def module(self):
        return self.op.split(".", 1)[0]


@dataclass
class FlopLedger:
    entries: list = field(default_factory=list)

    def record(self, op, dense_macs, actual_macs=None, *, pruned=False, active_pixels=None,
               total_pixels=None, kind="dense"):
        actual = dense_macs if actual_macs is None else actual_macs
        if actual > dense_macs:
            raise ValueError(f"{op}: actual MACs {actual} exceed dense MACs {dense_macs}")
        if not pruned and actual != dense_macs:
            raise ValueError(f"{op}: unpruned entry must record dense MACs")
        self.entries.append(LedgerEntry(op, int(dense_macs), int(actual), pruned,
                                        active_pixels, total_pixels, kind))

    def merge(self, other):
        self.entries.extend(other.entries)
        return self

    @property
    def dense_total(self):
        return sum(e.dense_macs for e in self.entries)

    @property
    def actual_total(self):
        return sum(e.actual_macs for e in self.entries)

    def __len__(self):
        return len(self.entries)


def flop_report(ledger):
    """Summarize a ledger per module and overall; the result is JSON-serializable."""
    modules = {}
    for e in ledger.entries:
        m = modules.setdefault(e.module, {"dense_macs": 0, "actual_macs": 0})
        m["dense_macs"] += e.dense_macs
        m["actual_macs"] += e.actual_macs
    for m in modules.values():
        m["ratio"] = m["actual_macs"] / m["dense_macs"] if m["dense_macs"] else 1.0
    dense, actual = ledger.dense_total, ledger.actual_total
    return {
        "convention": "1 multiply-accumulate = 1 unit; gather/scatter/unfold index work excluded",
        "entries": [
            {"op": e.op, "dense_macs": e.dense_macs, "actual_macs": e.actual_macs, "ratio": e.ratio,
             "pruned": e.pruned, "kind": e.kind}
            for e in ledger.entries
        ],
        "modules": modules,
        "totals": {"dense_macs": dense, "actual_macs": actual,
                   "ratio": actual / dense if dense else 1.0},
    }
