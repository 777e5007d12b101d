"""Per-image quality rows and corpus means, stored as CSV with a trailing mean row."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

COLUMNS = ("image", "psnr_y", "ssim_y", "niqe", "perceptual_index")
MEAN_ROW = "__mean__"


@dataclass
class QualityRow:
    image: str
    psnr_y: float | None = None
    ssim_y: float | None = None
    niqe: float | None = None
    perceptual_index: float | None = None


@dataclass
class QualityReport:
    rows: list[QualityRow] = field(default_factory=list)
    convention: str = ""

    def means(self) -> dict:
        out = {}
        for col in COLUMNS[1:]:
            vals = [getattr(r, col) for r in self.rows if getattr(r, col) is not None]
            out[col] = math.fsum(vals) / len(vals) if vals else None
        return out

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            if self.convention:
                f.write(f"# {self.convention}\n")
            w = csv.writer(f)
            w.writerow(COLUMNS)
            for r in sorted(self.rows, key=lambda r: r.image):
                w.writerow([r.image, *(_fmt(getattr(r, c)) for c in COLUMNS[1:])])
            m = self.means()
            w.writerow([MEAN_ROW, *(_fmt(m[c]) for c in COLUMNS[1:])])

    @classmethod
    def read_csv(cls, path) -> tuple["QualityReport", dict]:
        """Return the per-image rows and the stored mean row."""
        rows, stored, convention = [], {}, ""
        with open(path, newline="") as f:
            lines = [l for l in f]
        body = []
        for l in lines:
            if l.startswith("#"):
                convention = l[1:].strip()
            else:
                body.append(l)
        for rec in csv.DictReader(body):
            vals = {c: _parse(rec[c]) for c in COLUMNS[1:]}
            if rec["image"] == MEAN_ROW:
                stored = vals
            else:
                rows.append(QualityRow(rec["image"], **vals))
        return cls(rows, convention), stored


def _fmt(v):
    return "" if v is None else repr(float(v))


def _parse(s: str):
    return None if s == "" else float(s)
