import csv
import io
import math

from dataclasses import dataclass
from typing import Iterable, List, Optional


TRACE_COLUMNS = [
    "step",
    "episode",
    "reward",
    "rdisc",
    "errApprox",
    "numVarsAware",
    "numActionsAware",
    "adviceCount",
    "queryCount",
    "cutoff",
    "terminal",
]


@dataclass(frozen=True)
class TraceRow:
    """단계별 지표 한 줄"""

    step: int
    episode: int
    reward: float
    rdisc: float
    err_approx: Optional[float]
    num_vars_aware: int
    num_actions_aware: int
    advice_count: int
    query_count: int
    cutoff: bool = False
    terminal: bool = False

    def values(self) -> List[str]:
        return [
            str(self.step),
            str(self.episode),
            repr(float(self.reward)),
            repr(float(self.rdisc)),
            _optional_float(self.err_approx),
            str(self.num_vars_aware),
            str(self.num_actions_aware),
            str(self.advice_count),
            str(self.query_count),
            str(int(self.cutoff)),
            str(int(self.terminal)),
        ]


def write_trace(rows: Iterable[TraceRow]) -> str:
    """지표 행을 CSV 텍스트로 변환 (CRLF 줄바꿈, 헤더 포함)"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\r\n")
    writer.writerow(TRACE_COLUMNS)
    for row in rows:
        writer.writerow(row.values())
    return buffer.getvalue()


def read_trace(text: str) -> List[TraceRow]:
    reader = csv.DictReader(io.StringIO(text, newline=""))
    rows = []
    for record in reader:
        rows.append(
            TraceRow(
                step=int(record["step"]),
                episode=int(record["episode"]),
                reward=float(record["reward"]),
                rdisc=float(record["rdisc"]),
                err_approx=float(record["errApprox"]) if record["errApprox"] else None,
                num_vars_aware=int(record["numVarsAware"]),
                num_actions_aware=int(record["numActionsAware"]),
                advice_count=int(record["adviceCount"]),
                query_count=int(record["queryCount"]),
                cutoff=record.get("cutoff") == "1",
                terminal=record.get("terminal") == "1",
            )
        )
    return rows


def _optional_float(value: Optional[float]) -> str:
    if value is None or math.isnan(value):
        return ""
    return repr(float(value))
