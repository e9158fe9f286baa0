"""JSON weight files and strict CSV writing/reading.

Floats are written in Python's shortest round-trip form, so a load/dump
cycle reproduces a file byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .jmvae import NET_NAMES, JmvaeModel
from .nnkit import DenseNet, Layer


def net_to_json(net: DenseNet) -> list[dict]:
    return [
        {
            "rows": int(l.weight.shape[0]),
            "cols": int(l.weight.shape[1]),
            "weights": [float(v) for v in l.weight.ravel()],
            "bias": [float(v) for v in l.bias],
            "activation": l.activation,
        }
        for l in net.layers
    ]


def net_from_json(layers: list[dict]) -> DenseNet:
    out = []
    for spec in layers:
        w = np.array(spec["weights"], dtype=np.float64)
        if w.size != spec["rows"] * spec["cols"]:
            raise ValueError("weight list does not match rows x cols")
        out.append(Layer(w.reshape(spec["rows"], spec["cols"]), spec["bias"], spec["activation"]))
    return DenseNet(out)


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


def jmvae_to_json(model: JmvaeModel) -> dict:
    return {
        "dims": {"d_x": model.d_x, "d_w": model.d_w, "d_z": model.d_z},
        "nets": {name: net_to_json(net) for name, net in model.nets().items()},
    }


def jmvae_from_json(obj: dict) -> JmvaeModel:
    nets = {name: net_from_json(obj["nets"][name]) for name in NET_NAMES}
    return JmvaeModel(**nets, **obj["dims"])


def save_jmvae(model: JmvaeModel, path: Path) -> None:
    Path(path).write_text(dumps(jmvae_to_json(model)))


def load_jmvae(path: Path) -> JmvaeModel:
    return jmvae_from_json(json.loads(Path(path).read_text()))


def qnet_to_json(net: DenseNet, modality: str, n_poi: int, d_z: int) -> dict:
    return {
        "dims": {"n_poi": n_poi, "d_z": d_z, "n_actions": n_poi + 1},
        "modality": modality,
        "nets": {"q": net_to_json(net)},
    }


def save_qnet(net: DenseNet, path: Path, modality: str, n_poi: int, d_z: int) -> None:
    Path(path).write_text(dumps(qnet_to_json(net, modality, n_poi, d_z)))


def load_qnet(path: Path) -> tuple[DenseNet, dict]:
    obj = json.loads(Path(path).read_text())
    return net_from_json(obj["nets"]["q"]), obj


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, header: list[str], rows) -> None:
    Path(path).write_text(csv_text(header, rows))


def read_csv(path: Path, header: list[str]) -> list[list[str]]:
    """Read a CSV whose first row must equal ``header`` exactly."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        raise ValueError(f"{path}: expected header {header}, got {rows[0] if rows else None}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{i}: expected {len(header)} cells, got {len(row)}")
    return rows[1:]
