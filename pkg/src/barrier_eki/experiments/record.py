"""Per-checkpoint trajectory records and their CSV / JSON forms.

Floats are written with ``repr`` so that export followed by import gives the
same values bit for bit.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError

RECORD_VERSION = 1
COLUMNS = ("t", "V_e", "eta_min", "margin", "phi_reg", "phi_b", "err_param", "err_obs",
           "subspace_dist", "rho_t", "tau_t")
STEP_COLUMNS = ("accepted", "rejected_error", "rejected_feasibility", "nfev")
_CSV_HEADER = f"# barrier-eki trajectory record v{RECORD_VERSION}"


def _num(x):
    """JSON-safe float: non-finite values become strings."""
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _unnum(x):
    return float(x)


def json_safe(obj):
    """Recursively replace non-finite floats by strings for strict JSON."""
    if isinstance(obj, float):
        return _num(obj)
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


@dataclass
class TrajectoryRecord:
    """Diagnostics at every checkpoint of one run.

    ``columns`` maps each name in :data:`COLUMNS` to a list of floats,
    ``steps`` maps :data:`STEP_COLUMNS` to cumulative integer counts and
    ``extra`` holds further per-checkpoint series (for instance the
    gradient-flow approximation error). ``abort`` is ``None`` for a completed
    run, otherwise a dict with ``reason``, ``message`` and ``t``.
    """

    columns: dict = field(default_factory=lambda: {c: [] for c in COLUMNS})
    steps: dict = field(default_factory=lambda: {c: [] for c in STEP_COLUMNS})
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    abort: dict = None

    def __len__(self):
        return len(self.columns["t"])

    def append(self, row, steps=None, **extra):
        if set(row) != set(COLUMNS):
            raise InvalidInputError(f"row must have exactly the columns {COLUMNS}")
        if len(self) and not row["t"] > self.columns["t"][-1]:
            raise InvalidInputError("checkpoint times must be strictly increasing")
        for c in COLUMNS:
            self.columns[c].append(float(row[c]))
        steps = steps or {}
        for c in STEP_COLUMNS:
            self.steps[c].append(int(steps.get(c, 0)))
        for k, v in extra.items():
            self.extra.setdefault(k, []).append(float(v))

    def array(self, name):
        if name in self.columns:
            return np.asarray(self.columns[name])
        if name in self.extra:
            return np.asarray(self.extra[name])
        if name in self.steps:
            return np.asarray(self.steps[name])
        raise KeyError(name)

    @property
    def completed(self):
        return self.abort is None

    # -- serialization ------------------------------------------------------

    def to_csv(self):
        buf = io.StringIO()
        buf.write(_CSV_HEADER + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(len(self)):
            w.writerow([repr(self.columns[c][i]) for c in COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# barrier-eki trajectory record"):
            raise InvalidInputError("not a trajectory record CSV")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != RECORD_VERSION:
            raise InvalidInputError(f"unsupported record version {version}")
        rows = list(csv.reader(lines[1:]))
        if tuple(rows[0]) != COLUMNS:
            raise InvalidInputError("unexpected CSV columns")
        rec = cls()
        for r in rows[1:]:
            for c, v in zip(COLUMNS, r):
                rec.columns[c].append(float(v))
        return rec

    def to_json(self):
        doc = {
            "version": RECORD_VERSION,
            "columns": list(COLUMNS),
            "data": {c: [_num(v) for v in self.columns[c]] for c in COLUMNS},
            "steps": self.steps,
            "extra": {k: [_num(v) for v in vs] for k, vs in self.extra.items()},
            "meta": json_safe(self.meta),
            "abort": json_safe(self.abort),
        }
        return json.dumps(doc, indent=1, allow_nan=False)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != RECORD_VERSION:
            raise InvalidInputError(f"unsupported record version {doc.get('version')}")
        rec = cls()
        rec.columns = {c: [_unnum(v) for v in doc["data"][c]] for c in COLUMNS}
        rec.steps = {c: [int(v) for v in doc["steps"][c]] for c in STEP_COLUMNS}
        rec.extra = {k: [_unnum(v) for v in vs] for k, vs in doc["extra"].items()}
        rec.meta = doc.get("meta", {})
        rec.abort = doc.get("abort")
        return rec

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "record.csv").write_text(self.to_csv())
        (d / "record.json").write_text(self.to_json())

    @classmethod
    def read(cls, path):
        """Load from a ``.json`` or ``.csv`` file, or a run directory."""
        p = Path(path)
        if p.is_dir():
            p = p / "record.json"
        text = p.read_text()
        return cls.from_csv(text) if p.suffix == ".csv" else cls.from_json(text)
