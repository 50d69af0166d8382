"""Static parameter and multiply-accumulate accounting.

Conventions: a conv costs ``K*K*(Cin/groups)*Cout*Hout*Wout`` MACs, a
transpose conv ``K*K*Cin*Cout*Hin*Win``, a linear layer over tokens
``tokens*Din*Dout``, and attention adds ``B*h*S^2*d_head`` for QK^T and again
for attention @ V. Norms, activations and residual adds count zero MACs; their
element counts appear in the ``elementwise`` column. FLOPs are reported as
``2 * MACs``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

from .nn.module import CostRow, Module

FIELDS = ("name", "kind", "params", "macs", "elementwise")
CALIBRATION_RESOLUTIONS = (256, 512)
TARGET_GMACS = 1.3


@dataclass
class CostReport:
    rows: list[CostRow]
    resolution: int
    notes: dict = field(default_factory=dict)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def flops(self) -> int:
        return 2 * self.macs

    @property
    def elementwise(self) -> int:
        return sum(r.elementwise for r in self.rows)

    def subtree_params(self, prefix: str) -> int:
        return sum(r.params for r in self.rows if r.name == prefix or r.name.startswith(prefix + "."))

    def subtree_macs(self, prefix: str) -> int:
        return sum(r.macs for r in self.rows if r.name == prefix or r.name.startswith(prefix + "."))

    def totals(self) -> dict:
        return {"params": self.params, "macs": self.macs, "flops": self.flops,
                "elementwise": self.elementwise, "resolution": self.resolution}


def analyze(model: Module, resolution: int, batch: int = 1) -> CostReport:
    """Per-layer cost of ``model`` at a square ``resolution``, in construction order."""
    cfg = getattr(model, "config", None)
    in_channels = cfg.in_channels if cfg is not None else 3
    rows: list[CostRow] = []
    model.profile((batch, in_channels, resolution, resolution), rows)
    return CostReport(rows, resolution)


def count_params(model: Module) -> tuple[int, list[CostRow]]:
    report = analyze(model, model.config.image_size)
    return report.params, [r for r in report.rows if r.params]


def count_macs(model: Module, resolution: int) -> tuple[int, list[CostRow]]:
    report = analyze(model, resolution)
    return report.macs, report.rows


def calibrate(model: Module, target_gmacs: float = TARGET_GMACS,
              resolutions=CALIBRATION_RESOLUTIONS) -> tuple[CostReport, dict[int, CostReport]]:
    """Analyze at every candidate resolution; pick the one whose G-MACs land nearest the target."""
    reports = {r: analyze(model, r) for r in resolutions}
    best = min(resolutions, key=lambda r: abs(reports[r].macs / 1e9 - target_gmacs))
    chosen = reports[best]
    chosen.notes = {
        "calibration_resolution": best,
        "gmacs_by_resolution": {str(r): reports[r].macs / 1e9 for r in resolutions},
        "flop_convention": "GFLOPs column read as giga-MACs; flops = 2 * macs",
    }
    return chosen, reports


def render_report(report: CostReport, fmt: str = "table") -> str:
    """Serialize a report as ``table``, ``json`` or ``csv``; totals come last."""
    if fmt == "json":
        payload = {
            "resolution": report.resolution,
            "notes": report.notes,
            "rows": [asdict(r) for r in report.rows],
            "totals": report.totals(),
        }
        return json.dumps(payload, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FIELDS)
        for r in report.rows:
            writer.writerow([r.name, r.kind, r.params, r.macs, r.elementwise])
        writer.writerow(["TOTAL", "total", report.params, report.macs, report.elementwise])
        return buf.getvalue()
    if fmt == "table":
        width = max([len(r.name) for r in report.rows] + [5])
        lines = [f"# resolution {report.resolution}"]
        for key, value in report.notes.items():
            lines.append(f"# {key}: {value}")
        lines.append(f"{'name':<{width}}  {'kind':<14} {'params':>10} {'macs':>14} {'elementwise':>12}")
        for r in report.rows:
            lines.append(f"{r.name:<{width}}  {r.kind:<14} {r.params:>10,} {r.macs:>14,} {r.elementwise:>12,}")
        lines.append(f"{'TOTAL':<{width}}  {'total':<14} {report.params:>10,} {report.macs:>14,} "
                     f"{report.elementwise:>12,}")
        lines.append(f"# params {report.params / 1e6:.3f} M | MACs {report.macs / 1e9:.3f} G | "
                     f"FLOPs {report.flops / 1e9:.3f} G")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; expected table, json or csv")
