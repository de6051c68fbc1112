"""Rollout files: documented CSV and a compact little-endian binary form.

CSV columns: step, agent_id, x, y, heading, speed, valid (floats with 4 decimals),
records ordered by step then agent.

Binary layout:
    header  16 bytes  magic b"RSRO", u16 version, u16 reserved, u32 agents, u32 steps
    ids     per agent u16 byte length + utf-8 id
    records per (step, agent) i32 step, 4 x f64 (x, y, heading, speed), u8 valid
"""
from __future__ import annotations

import csv
import io
import logging
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from core.errors import RolloutMismatchError
from core.sim_engine import Rollout

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "agent_id", "x", "y", "heading", "speed", "valid")
MAGIC = b"RSRO"
VERSION = 1
HEADER = struct.Struct("<4sHHII")
RECORD = np.dtype(
    [("step", "<i4"), ("x", "<f8"), ("y", "<f8"), ("heading", "<f8"), ("speed", "<f8"), ("valid", "u1")]
)
SEED_SEPARATOR = "__seed"

PathLike = Union[str, Path]


def rollout_filename(scenario_id: str, seed: int, binary: bool = False) -> str:
    return f"{scenario_id}{SEED_SEPARATOR}{seed}.{'bin' if binary else 'csv'}"


def parse_filename(path: PathLike) -> Tuple[str, int]:
    stem = Path(path).stem
    scenario_id, sep, seed = stem.rpartition(SEED_SEPARATOR)
    if not sep or not seed.lstrip("-").isdigit():
        raise RolloutMismatchError(f"not a rollout file name: {Path(path).name}")
    return scenario_id, int(seed)


def _empty_rollout(path: PathLike, agent_ids: List[str], steps: List[int], states: np.ndarray) -> Rollout:
    scenario_id, seed = parse_filename(path)
    n = len(agent_ids)
    return Rollout(
        scenario_id=scenario_id,
        seed=seed,
        start_step=steps[0] if steps else 0,
        horizon=len(steps),
        agent_ids=agent_ids,
        object_types=["vehicle"] * n,
        dims=np.full((n, 2), np.nan),
        states=states,
    )


# -------------------------------------------------------------------
# CSV
# -------------------------------------------------------------------
def rollout_to_csv(rollout: Rollout) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for k, step in enumerate(rollout.steps):
        for i, agent_id in enumerate(rollout.agent_ids):
            x, y, heading, speed, valid = rollout.states[i, k]
            writer.writerow(
                [int(step), agent_id, f"{x:.4f}", f"{y:.4f}", f"{heading:.4f}", f"{speed:.4f}", int(valid > 0.5)]
            )
    return buf.getvalue()


def write_rollout_csv(rollout: Rollout, out_dir: PathLike) -> Path:
    path = Path(out_dir) / rollout_filename(rollout.scenario_id, rollout.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rollout_to_csv(rollout), encoding="utf-8")
    return path


def read_rollout_csv(path: PathLike) -> Rollout:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise RolloutMismatchError(f"{Path(path).name}: unexpected CSV header {header}")
        rows = list(reader)

    agent_ids: List[str] = []
    steps: List[int] = []
    for row in rows:
        step, agent_id = int(row[0]), row[1]
        if not steps or steps[-1] != step:
            steps.append(step)
        if len(steps) == 1:
            agent_ids.append(agent_id)
    n = len(agent_ids)
    if n and len(rows) != n * len(steps):
        raise RolloutMismatchError(f"{Path(path).name}: {len(rows)} records for {n} agents x {len(steps)} steps")

    states = np.zeros((n, len(steps), 5))
    for r, row in enumerate(rows):
        k, i = divmod(r, n)
        if row[1] != agent_ids[i]:
            raise RolloutMismatchError(f"{Path(path).name}: agent order changes at step {row[0]}", [row[1]])
        states[i, k] = [float(row[2]), float(row[3]), float(row[4]), float(row[5]), float(row[6])]
    return _empty_rollout(path, agent_ids, steps, states)


# -------------------------------------------------------------------
# Binary
# -------------------------------------------------------------------
def rollout_to_bytes(rollout: Rollout) -> bytes:
    n, horizon = len(rollout.agent_ids), rollout.horizon
    parts = [HEADER.pack(MAGIC, VERSION, 0, n, horizon)]
    for agent_id in rollout.agent_ids:
        raw = agent_id.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    records = np.zeros(n * horizon, dtype=RECORD)
    # step-major, matching the CSV order
    states = np.swapaxes(rollout.states, 0, 1).reshape(n * horizon, 5)
    records["step"] = np.repeat(rollout.steps, n)
    for j, name in enumerate(("x", "y", "heading", "speed")):
        records[name] = states[:, j]
    records["valid"] = states[:, 4] > 0.5
    parts.append(records.tobytes())
    return b"".join(parts)


def write_rollout_bin(rollout: Rollout, out_dir: PathLike) -> Path:
    path = Path(out_dir) / rollout_filename(rollout.scenario_id, rollout.seed, binary=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(rollout_to_bytes(rollout))
    return path


def read_rollout_bin(path: PathLike) -> Rollout:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise RolloutMismatchError(f"{Path(path).name}: truncated header")
    magic, version, _, n, horizon = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise RolloutMismatchError(f"{Path(path).name}: bad magic {magic!r}")
    if version != VERSION:
        raise RolloutMismatchError(f"{Path(path).name}: unsupported version {version}")
    offset = HEADER.size
    agent_ids = []
    for _ in range(n):
        (size,) = struct.unpack_from("<H", data, offset)
        offset += 2
        agent_ids.append(data[offset : offset + size].decode("utf-8"))
        offset += size
    expected = n * horizon * RECORD.itemsize
    if len(data) - offset != expected:
        raise RolloutMismatchError(f"{Path(path).name}: expected {expected} record bytes, found {len(data) - offset}")
    records = np.frombuffer(data, dtype=RECORD, count=n * horizon, offset=offset)
    states = np.zeros((n, horizon, 5))
    for j, name in enumerate(("x", "y", "heading", "speed", "valid")):
        states[:, :, j] = records[name].astype(float).reshape(horizon, n).T
    steps = records["step"][::n].tolist() if n else []
    return _empty_rollout(path, agent_ids, steps, states)


def read_rollout(path: PathLike) -> Rollout:
    if Path(path).suffix == ".bin":
        return read_rollout_bin(path)
    return read_rollout_csv(path)


def find_rollouts(directory: PathLike, scenario_id: str) -> List[Path]:
    """Rollout files of one scenario, CSV preferred over binary, ordered by seed."""
    found = {}
    for path in sorted(Path(directory).glob(f"{scenario_id}{SEED_SEPARATOR}*")):
        if path.suffix not in (".csv", ".bin"):
            continue
        try:
            sid, seed = parse_filename(path)
        except RolloutMismatchError:
            continue
        if sid != scenario_id:
            continue
        if seed not in found or path.suffix == ".csv":
            found[seed] = path
    return [found[s] for s in sorted(found)]
