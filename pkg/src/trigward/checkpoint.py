"""Checkpoint container: architecture, parameters, creation metadata, and —
when the model ships with one — the trigger array with its mode and step."""

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fingerprint import file_sha256
from .models import build_model
from .trigger import Trigger

FORMAT_VERSION = 1


def save_checkpoint(model, path, trigger=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # wall-clock values go to a sidecar so checkpoint bytes are a pure
    # function of config and seeds
    meta = dict(model.meta)
    timing = None
    if "epoch_log" in meta:
        timing = [e.get("seconds") for e in meta["epoch_log"]]
        meta["epoch_log"] = [{k: v for k, v in e.items() if k != "seconds"}
                             for e in meta["epoch_log"]]
    header = {
        "format": FORMAT_VERSION,
        "arch_id": model.arch_id,
        "class_count": model.class_count,
        "input_shape": list(model.input_shape),
        "dtype": str(model.dtype),
        "meta": meta,
    }
    arrays = {}
    for k, v in model.params.items():
        arrays[f"param/{k}"] = v
    for k, v in model.state.items():
        arrays[f"state/{k}"] = v
    if trigger is not None:
        header["trigger"] = {"mode": trigger.mode, "eps_t": trigger.eps_t,
                             "step_alpha": trigger.step_alpha, "seed": trigger.seed,
                             "update_count": trigger.update_count}
        arrays["trigger/values"] = trigger.values
    np.savez_compressed(path, header=json.dumps(header), **arrays)
    if timing is not None and any(t is not None for t in timing):
        with open(str(path) + ".timing.json", "w") as f:
            json.dump({"epoch_seconds": timing}, f)
    return path


def load_checkpoint(path):
    """Rebuild (model, trigger-or-None) from a checkpoint file."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint format in {path}")
        model = build_model(header["arch_id"], header["class_count"],
                            init_seed=header["meta"].get("init_seed", 0),
                            input_shape=tuple(header["input_shape"]),
                            dtype=np.dtype(header["dtype"]))
        for k in list(model.params):
            model.params[k] = z[f"param/{k}"].copy()
        for k in list(model.state):
            model.state[k] = z[f"state/{k}"].copy()
        model.meta = header["meta"]
        trigger = None
        if "trigger" in header:
            t = header["trigger"]
            trigger = Trigger(z["trigger/values"].copy(), t["mode"], eps_t=t["eps_t"],
                              step_alpha=t["step_alpha"], seed=t["seed"],
                              update_count=t.get("update_count", 0))
    return model, trigger


def checkpoint_hash(path):
    return file_sha256(path)
