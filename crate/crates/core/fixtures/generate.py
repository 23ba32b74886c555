"""Regenerates fixtures/corpus/*/reference.png and fixtures/traces/*.json.

Each task dir holds gold.src, instruction.txt, reference.txt (OCR lines) and
expected.json (the element trace the gold program produces). References are
rendered the way the sandbox runner does it: Agg backend, auto-save of the
current figure to chart.png.
"""
import hashlib
import json
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent
RUNNER = """import os, runpy
import matplotlib
matplotlib.use("Agg")
runpy.run_path("program.py", run_name="__main__")
import matplotlib.pyplot as _plt
if not os.path.exists("chart.png") and _plt.get_fignums():
    _plt.savefig("chart.png")
"""


def render(src):
    with tempfile.TemporaryDirectory() as d:
        pathlib.Path(d, "program.py").write_text(src)
        pathlib.Path(d, "runner.py").write_text(RUNNER)
        subprocess.run([sys.executable, "runner.py"], cwd=d, check=True, env={**os.environ, "MPLBACKEND": "Agg"})
        return pathlib.Path(d, "chart.png").read_bytes()


def source_digest(src):
    # Same key as the evaluator's pinned-trace lookup.
    norm = "\n".join(line.rstrip() for line in src.splitlines()).strip("\n")
    return hashlib.sha256(norm.encode()).hexdigest()


def main():
    traces = ROOT / "traces"
    shutil.rmtree(traces, ignore_errors=True)
    traces.mkdir()
    for task in sorted((ROOT / "corpus").iterdir()):
        src = (task / "gold.src").read_text()
        (task / "reference.png").write_bytes(render(src))
        digest = source_digest(src)
        expected = json.loads((task / "expected.json").read_text())
        (traces / f"{digest}.json").write_text(json.dumps(expected, indent=1) + "\n")
        print(task.name, digest[:12])


if __name__ == "__main__":
    main()
