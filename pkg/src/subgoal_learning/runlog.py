"""Time-stamped trial logs and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_SCHEMA = "run-log/1"
COLUMNS = ("t", "x", "y", "psi", "v", "u_lon", "u_lat", "subgoal")
OUTCOMES = ("goal_reached", "timeout", "collision")


@dataclass
class RunLog:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    u_lon: np.ndarray
    u_lat: np.ndarray
    subgoal: np.ndarray  # active node index, -1 when none
    outcome: str = "timeout"
    flight_time: float | None = None
    run_id: int = 0
    decisions: list = field(default_factory=list, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t))) if len(self.t) > 1 else 0.02

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def completed(self) -> bool:
        return self.outcome == "goal_reached"

    def turn_rate(self) -> np.ndarray:
        if len(self.t) < 2:
            return np.zeros_like(self.t)
        return np.gradient(np.unwrap(self.psi), self.t)

    @classmethod
    def from_rows(cls, rows, outcome="timeout", flight_time=None, run_id=0) -> "RunLog":
        a = np.asarray(rows, dtype=float).reshape(-1, len(COLUMNS))
        return cls(*(a[:, j].copy() for j in range(7)), a[:, 7].astype(int), outcome, flight_time, run_id)

    # -- CSV -----------------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        ft = "" if self.flight_time is None else repr(float(self.flight_time))
        buf.write(f"# schema={LOG_SCHEMA} run_id={self.run_id} outcome={self.outcome} flight_time={ft}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for j in range(len(self.t)):
            w.writerow(
                [repr(float(a[j])) for a in (self.t, self.x, self.y, self.psi, self.v, self.u_lon, self.u_lat)]
                + [int(self.subgoal[j])]
            )
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunLog":
        lines = text.splitlines()
        meta = {}
        body = []
        for line in lines:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        meta[key] = val
            elif line.strip():
                body.append(line)
        if meta.get("schema", LOG_SCHEMA) != LOG_SCHEMA:
            raise ValueError(f"unsupported log schema {meta.get('schema')}")
        reader = csv.reader(body)
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"unexpected columns {header}")
        rows = [[float(v) for v in r] for r in reader]
        ft = meta.get("flight_time", "")
        return cls.from_rows(
            rows,
            outcome=meta.get("outcome", "timeout"),
            flight_time=float(ft) if ft not in ("", "None") else None,
            run_id=int(meta.get("run_id", 0)),
        )

    @classmethod
    def read_csv(cls, path) -> "RunLog":
        return cls.from_csv(Path(path).read_text())

    def transformed(self, rotation: float = 0.0, translation=(0.0, 0.0), mirror: bool = False) -> "RunLog":
        """Copy under the same rigid motion / mirror as ``Environment.transformed``."""
        c, s = math.cos(rotation), math.sin(rotation)
        ys = -self.y if mirror else self.y
        x = c * self.x - s * ys + translation[0]
        y = s * self.x + c * ys + translation[1]
        psi = (-self.psi if mirror else self.psi) + rotation
        psi = np.mod(psi + math.pi, 2 * math.pi) - math.pi
        return RunLog(
            self.t.copy(), x, y, psi, self.v.copy(), self.u_lon.copy(),
            (-self.u_lat if mirror else self.u_lat).copy(), self.subgoal.copy(),
            self.outcome, self.flight_time, self.run_id,
        )
