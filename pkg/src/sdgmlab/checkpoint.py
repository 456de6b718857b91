"""Model checkpoints: one directory per save, raw float64 payload.

Layout:

    manifest.json   ordered records {name, shape, offset}
    params.bin      every tensor back to back, little-endian float64,
                    in manifest order
    config.json     optional caller metadata (architecture echo), only
                    written when a config is supplied

Values travel as raw '<f8' bytes, never through decimal text, so a
save/load round-trip is bit-exact.  Offsets are bytes into params.bin.
"""

import json
import os

import numpy as np

from sdgmlab.errors import InputError, ParseError

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"
CONFIG_NAME = "config.json"

_DTYPE = "<f8"


def save_checkpoint(path: str, state: dict[str, np.ndarray],
                    config: dict | None = None) -> None:
    """Write `state` (a model snapshot) as a checkpoint directory.

    Manifest order is the dict's insertion order, which for model
    snapshots follows named_parameters; identical states therefore
    produce byte-identical directories.
    """
    if not state:
        raise InputError("refusing to write an empty checkpoint")
    os.makedirs(path, exist_ok=True)
    records = []
    offset = 0
    with open(os.path.join(path, PARAMS_NAME), "wb") as fh:
        for name, arr in state.items():
            flat = np.ascontiguousarray(arr, dtype=_DTYPE)
            records.append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(flat.tobytes())
            offset += flat.nbytes
    manifest = {"dtype": _DTYPE, "total_bytes": offset, "tensors": records}
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if config is not None:
        with open(os.path.join(path, CONFIG_NAME), "w", encoding="utf-8") as fh:
            json.dump(config, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    """Read a checkpoint directory back into {name: float64 array}."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{manifest_path}: not valid JSON ({e})") from None
    for key in ("dtype", "total_bytes", "tensors"):
        if key not in manifest:
            raise ParseError(f"{manifest_path}: missing key {key!r}")
    if manifest["dtype"] != _DTYPE:
        raise ParseError(f"{manifest_path}: unsupported dtype {manifest['dtype']!r}")
    with open(os.path.join(path, PARAMS_NAME), "rb") as fh:
        buf = fh.read()
    if len(buf) != manifest["total_bytes"]:
        raise ParseError(
            f"{path}: params.bin holds {len(buf)} bytes, manifest says "
            f"{manifest['total_bytes']}")
    state: dict[str, np.ndarray] = {}
    for rec in manifest["tensors"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = rec["offset"] + count * 8
        if end > len(buf):
            raise ParseError(f"{path}: tensor {rec['name']!r} overruns params.bin")
        arr = np.frombuffer(buf, dtype=_DTYPE, count=count, offset=rec["offset"])
        state[rec["name"]] = arr.reshape(shape).copy()
    return state


def load_config(path: str) -> dict | None:
    """Return the config echo stored beside the tensors, if any."""
    config_path = os.path.join(path, CONFIG_NAME)
    if not os.path.exists(config_path):
        return None
    with open(config_path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{config_path}: not valid JSON ({e})") from None


def save_model(path: str, model, config: dict | None = None) -> None:
    """Snapshot `model` (anything with .snapshot()) into a checkpoint dir."""
    save_checkpoint(path, model.snapshot(), config)


def restore_model(path: str, model) -> None:
    """Load a checkpoint into an already-built model, validating fit.

    The checkpoint must name exactly the tensors the model owns, with
    matching shapes; a partially matching checkpoint is refused rather
    than half-applied.
    """
    state = load_checkpoint(path)
    current = model.snapshot()
    missing = sorted(set(current) - set(state))
    extra = sorted(set(state) - set(current))
    if missing or extra:
        raise InputError(
            f"checkpoint at {path} does not fit this model "
            f"(missing: {missing[:3]}{'...' if len(missing) > 3 else ''}, "
            f"unexpected: {extra[:3]}{'...' if len(extra) > 3 else ''})")
    for name, arr in state.items():
        if arr.shape != current[name].shape:
            raise InputError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, "
                f"model expects {current[name].shape}")
    model.restore(state)
