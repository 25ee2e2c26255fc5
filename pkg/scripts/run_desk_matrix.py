"""Desk-scale matrix: both synthetic regimes, both methods, three seeds, with probes.

Writes the log plus every table and plot-data file to OUT_DIR (default desk_run/).
Pass extra scenario names to include real datasets, e.g.

    python scripts/run_desk_matrix.py desk_run rotmnist.digits_pairs
"""
import sys
import time
from pathlib import Path

from streamreplay.cli import main
from streamreplay.streams import DEFAULT_SCENARIOS


def run(out_dir: Path, extra: list[str]) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    log = out_dir / "runs.log"
    if log.exists():
        log.unlink()
    scenarios = ",".join([*DEFAULT_SCENARIOS, *extra])
    start = time.perf_counter()
    code = main(["matrix", "--scenarios", scenarios, "--probe", "--out", str(log)])
    print(f"matrix finished in {time.perf_counter() - start:.1f}s with exit code {code}")
    if code != 0:
        return code
    return main(["report", "--log", str(log), "--out-dir", str(out_dir / "report")])


if __name__ == "__main__":
    args = sys.argv[1:]
    sys.exit(run(Path(args[0]) if args else Path("desk_run"), args[1:]))
