"""Deterministic metrics CSV writing.

Floats are rendered with repr (shortest round-trip form), so a seeded run
reproduces its metrics file byte for byte. Wall-clock timings go to a
separate timing file that makes no determinism promise.
"""

import csv
import time


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    def __init__(self, path, header):
        self.path = path
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(header)

    def write(self, row) -> None:
        self._writer.writerow([_fmt(v) for v in row])

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class TimingWriter(MetricsWriter):
    def __init__(self, path):
        super().__init__(path, ["step", "wall_ms"])
        self._last = time.perf_counter()

    def mark(self, step: int) -> None:
        now = time.perf_counter()
        self.write([step, (now - self._last) * 1000.0])
        self._last = now


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))
