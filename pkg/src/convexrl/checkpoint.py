"""Single-file network checkpoints.

Layout: one JSON header line describing every component (kind, shape
spec, constraint flag, offset into the payload), then the concatenated
parameter vectors as raw little-endian float64. The header carries an
arbitrary JSON metadata dict for run provenance (method, alpha, seed,
training step); weights round-trip bit-exactly.
"""

from __future__ import annotations

import json
from typing import Union

import numpy as np

from .nets import Activation, Mlp, mlp_init
from .picnn import Picnn, picnn_init

FORMAT_NAME = "convexrl-checkpoint"
FORMAT_VERSION = 1

Network = Union[Mlp, Picnn]


def _mlp_spec(net: Mlp) -> dict:
    return {
        "kind": "mlp",
        "dims": [net.layers[0].weight.shape[1]]
                + [layer.weight.shape[0] for layer in net.layers],
        "activations": [layer.activation.value for layer in net.layers],
    }


def _picnn_spec(p: Picnn) -> dict:
    widths = [p.z_entry.w_zs.shape[0]] + [zl.w_zz.shape[0] for zl in p.z_layers[:-1]]
    return {
        "kind": "picnn",
        "state_dim": p.state_dim,
        "action_dim": p.action_dim,
        "widths": widths,
        "heads": p.heads,
        "hidden_activation": p.z_entry.activation.value,
        "strict": p.strict,
    }


def _build(spec: dict) -> Network:
    rng = np.random.default_rng(0)
    if spec["kind"] == "mlp":
        return mlp_init(spec["dims"], [Activation(a) for a in spec["activations"]], rng)
    if spec["kind"] == "picnn":
        return picnn_init(
            spec["state_dim"], spec["action_dim"], rng,
            widths=tuple(spec["widths"]), heads=spec["heads"],
            hidden_activation=Activation(spec["hidden_activation"]),
            strict=spec["strict"],
        )
    raise ValueError(f"unknown checkpoint component kind {spec['kind']!r}")


def save_checkpoint(path, components: dict[str, Network], meta: dict | None = None) -> None:
    specs = []
    blobs = []
    offset = 0
    for name, net in components.items():
        flat = np.ascontiguousarray(net.flat(), dtype="<f8")
        spec = _picnn_spec(net) if isinstance(net, Picnn) else _mlp_spec(net)
        specs.append({"name": name, "offset": offset, "size": int(flat.size), **spec})
        blobs.append(flat.tobytes())
        offset += int(flat.size)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "components": specs,
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(b"".join(blobs))


def load_checkpoint(path) -> tuple[dict[str, Network], dict]:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"not a checkpoint file: {path}") from exc
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ValueError(f"not a checkpoint file: {path}")
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    components: dict[str, Network] = {}
    for spec in header["components"]:
        lo, hi = spec["offset"], spec["offset"] + spec["size"]
        if hi > payload.size:
            raise ValueError(f"checkpoint payload truncated at component {spec['name']!r}")
        net = _build(spec)
        net.load_flat(payload[lo:hi].astype(np.float64))
        components[spec["name"]] = net
    return components, header.get("meta", {})
