"""Network checkpoints.

Format: a JSON document with the architecture descriptor, the flat
parameter vector encoded as C99 hex-float strings (bit-exact round
trips), and an optional adversary head descriptor::

    {
      "format": "pivotnet-net",
      "version": 1,
      "layer_sizes": [2, 20, 20, 1],
      "activations": ["tanh", "relu", "sigmoid"],
      "head": null | {"kind": "mixture", "size": 5},
      "params_hex": ["0x1.5a...p-3", ...]
    }
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .adversary import HeadSpec
from .errors import ConfigError, DataError
from .nets import DenseNet

FORMAT_NAME = "pivotnet-net"
FORMAT_VERSION = 1


def save_net(net: DenseNet, path: str | Path, head: HeadSpec | None = None) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "head": None if head is None else {"kind": head.kind, "size": head.size},
        "params_hex": [float(p).hex() for p in net.params],
    }
    Path(path).write_text(json.dumps(doc))


def load_net(path: str | Path) -> tuple[DenseNet, HeadSpec | None]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    if doc.get("format") != FORMAT_NAME:
        raise DataError(f"{path}: not a {FORMAT_NAME} checkpoint")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    try:
        params = np.array([float.fromhex(h) for h in doc["params_hex"]])
        net = DenseNet(
            layer_sizes=tuple(doc["layer_sizes"]),
            activations=tuple(doc["activations"]),
            params=params,
        )
        head_doc = doc.get("head")
        head = None if head_doc is None else HeadSpec(head_doc["kind"], head_doc["size"])
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise DataError(f"{path}: malformed checkpoint ({exc})") from exc
    return net, head
