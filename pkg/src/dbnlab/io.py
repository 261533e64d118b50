"""On-disk formats: model files and distribution files.

Model file (text, version 1)::

    dbnlab-model 1
    L <number of layers>
    layer <i> <card> <card> ...          # one line per layer, visible layer is 0
    block <name> <shape...>              # followed by one line per row
    <float> <float> ...
    end

Blocks are ``rbm.W``, ``rbm.b``, ``rbm.c`` and ``layer<i>.Theta``,
``layer<i>.theta`` for each directed layer ``i`` (``i = 0`` feeds the visible
layer).  Floats are written with ``repr`` so a round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from dbnlab.conditional_layers import LayerParams
from dbnlab.dbn import DbnParams
from dbnlab.distributions import Dist, empirical_from_samples
from dbnlab.errors import SchemaError, StorageError
from dbnlab.rbm import RbmParams
from dbnlab.state_space import StateSpace

MODEL_MAGIC = "dbnlab-model"
MODEL_VERSION = 1


def _write(path: Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _read(path: Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def _row_count(shape: tuple[int, ...]) -> int:
    """Rows a block occupies: none when empty, one for vectors, ``shape[0]`` for matrices."""
    if int(np.prod(shape)) == 0:
        return 0
    return shape[0] if len(shape) == 2 else 1


def _block(name: str, arr: np.ndarray) -> list[str]:
    arr = np.asarray(arr, dtype=float)
    lines = [f"block {name} " + " ".join(str(d) for d in arr.shape)]
    nrows = _row_count(arr.shape)
    if nrows:
        for row in arr.reshape(nrows, -1):
            lines.append(" ".join(repr(float(v)) for v in row))
    return lines


def model_to_text(params: DbnParams | RbmParams) -> str:
    if isinstance(params, RbmParams):
        params = DbnParams((params.visible, params.hidden), params)
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"L {params.L}"]
    for i, sp in enumerate(params.spaces):
        lines.append(f"layer {i} " + " ".join(str(q) for q in sp.cards))
    lines += _block("rbm.W", params.rbm.W)
    lines += _block("rbm.b", params.rbm.b)
    lines += _block("rbm.c", params.rbm.c)
    for i, lp in enumerate(params.layers):
        lines += _block(f"layer{i}.Theta", lp.Theta)
        lines += _block(f"layer{i}.theta", lp.theta)
    lines.append("end")
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> DbnParams:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split()[:1] != [MODEL_MAGIC]:
        raise SchemaError("not a dbnlab model file")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise SchemaError("model file header lacks a version") from exc
    if version != MODEL_VERSION:
        raise SchemaError(f"model file version {version} is not supported")
    pos = 1
    try:
        tag, L = lines[pos].split()
        if tag != "L":
            raise SchemaError("expected 'L <layers>' after the header")
        L = int(L)
        pos += 1
        spaces = []
        for i in range(L):
            parts = lines[pos].split()
            if parts[0] != "layer" or int(parts[1]) != i:
                raise SchemaError(f"expected layer line {i}")
            spaces.append(StateSpace(tuple(int(q) for q in parts[2:])))
            pos += 1
        blocks: dict[str, np.ndarray] = {}
        while lines[pos] != "end":
            parts = lines[pos].split()
            if parts[0] != "block":
                raise SchemaError(f"expected a block header, got {lines[pos]!r}")
            name, shape = parts[1], tuple(int(d) for d in parts[2:])
            nrows = _row_count(shape)
            rows = [[float(v) for v in lines[pos + 1 + r].split()] for r in range(nrows)]
            pos += 1 + nrows
            blocks[name] = np.array(rows, dtype=float).reshape(shape)
    except (IndexError, ValueError) as exc:
        raise SchemaError(f"malformed model file near line {pos + 1}: {exc}") from exc
    try:
        rbm = RbmParams(spaces[-2], spaces[-1], blocks["rbm.W"], blocks["rbm.b"], blocks["rbm.c"])
        layers = tuple(
            LayerParams(spaces[i + 1], spaces[i], blocks[f"layer{i}.Theta"], blocks[f"layer{i}.theta"]) for i in range(L - 2)
        )
    except KeyError as exc:
        raise SchemaError(f"model file lacks block {exc}") from exc
    return DbnParams(tuple(spaces), rbm, layers)


def save_model(params: DbnParams | RbmParams, path: str | Path) -> None:
    _write(Path(path), model_to_text(params))


def load_model(path: str | Path) -> DbnParams:
    return model_from_text(_read(Path(path)))


def dist_to_dict(p: Dist) -> dict:
    return {"cards": list(p.space.cards), "mass": [float(v) for v in p.mass]}


def dist_from_dict(d: dict) -> Dist:
    """``{"cards", "mass"}`` or ``{"cards", "samples"}`` (an empirical distribution)."""
    if not isinstance(d, dict) or "cards" not in d:
        raise SchemaError("distribution file needs 'cards' and either 'mass' or 'samples'")
    space = StateSpace(tuple(int(q) for q in d["cards"]))
    if "mass" in d:
        return Dist(space, np.asarray(d["mass"], dtype=float))
    if "samples" in d:
        return empirical_from_samples(space, np.asarray(d["samples"], dtype=np.int64))
    raise SchemaError("distribution file needs 'mass' or 'samples'")


def save_dist(p: Dist, path: str | Path) -> None:
    _write(Path(path), json.dumps(dist_to_dict(p)) + "\n")


def load_dist(path: str | Path) -> Dist:
    text = _read(Path(path))
    try:
        return dist_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def load_json(path: str | Path) -> dict:
    text = _read(Path(path))
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
