"""Plain-text summaries of finished runs."""

from __future__ import annotations

from pathlib import Path

from .io import RunManifest, write_csv


def _fmt_threshold(g) -> str:
    if g["relation"] == "in":
        lo, hi = g["threshold"]
        return f"in [{lo:g}, {hi:g}]"
    return f"{g['relation']} {g['threshold']:.6g}"


def report(manifest: RunManifest | str | Path) -> str:
    """Render gates and summary numbers; the last line is ``PASS`` or names failed gates.

    Also writes ``report_gates.csv`` next to the manifest.
    """
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    root = Path(manifest.root)
    missing = [name for name in manifest.outputs if not (root / name).exists()]
    if missing:
        raise FileNotFoundError(f"missing output files: {', '.join(missing[:5])}")
    if not manifest.gates:
        raise ValueError("manifest has no gates")
    lines = [f"experiment {manifest.experiment}  seed {manifest.seed}  "
             f"config {manifest.config_hash[:12]}  version {manifest.code_version}"]
    for key, val in manifest.summary.items():
        lines.append(f"  {key}: {val}")
    width = max(len(g["name"]) for g in manifest.gates)
    for g in manifest.gates:
        mark = "pass" if g["passed"] else "FAIL"
        detail = f"  ({g['detail']})" if g.get("detail") else ""
        lines.append(f"  {mark}  {g['name']:<{width}}  {g['statistic']:.6g} "
                     f"{_fmt_threshold(g)}{detail}")
    failed = [g["name"] for g in manifest.gates if not g["passed"]]
    lines.append("FAIL: " + ", ".join(failed) if failed else "PASS")
    write_csv(root / "report_gates.csv", ["gate", "statistic", "threshold", "passed", "detail"],
              [(g["name"], g["statistic"], _fmt_threshold(g), g["passed"], g.get("detail", ""))
               for g in manifest.gates])
    return "\n".join(lines)
