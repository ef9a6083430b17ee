"""JSON checkpoint manifests: every tensor by name, shape and row-major values.

Values are written as the shortest decimal that round-trips, so a reloaded
model (and optimizer state) is bit-identical to the saved one.
"""
from __future__ import annotations

import json
import os

import torch

from .errors import CheckpointMismatch, MissingCheckpoint, ParseError
from .features import LineNet, NetConfig

FORMAT = "linereg.checkpoint/1"
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def _tensor_record(name: str, x: torch.Tensor) -> dict:
    x = x.detach()
    return {"name": name, "shape": list(x.shape), "values": x.double().reshape(-1).tolist()}


def _tensor_from(rec: dict, dtype) -> torch.Tensor:
    return torch.tensor(rec["values"], dtype=torch.float64).reshape(rec["shape"]).to(dtype)


def checkpoint_dict(model: LineNet, optimizer: torch.optim.Optimizer | None = None, epoch: int = 0, extra=None) -> dict:
    dtype = str(model.dtype).replace("torch.", "")
    d = {
        "format": FORMAT,
        "net_config": model.cfg.to_dict(),
        "dtype": dtype,
        "epoch": int(epoch),
        "tensors": [_tensor_record(n, p) for n, p in model.named_parameters()],
    }
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        state = []
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p, {})
                rec = {"name": names[id(p)]}
                for key, val in st.items():
                    rec[key] = _tensor_record(key, val) if torch.is_tensor(val) else val
                state.append(rec)
        hyper = {k: (list(v) if isinstance(v, tuple) else v) for k, v in optimizer.param_groups[0].items() if k != "params"}
        d["optimizer"] = {"type": type(optimizer).__name__, "hyper": hyper, "state": state}
    if extra:
        d["extra"] = extra
    return d


def save_checkpoint(path, model: LineNet, optimizer=None, epoch: int = 0, extra=None) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model, optimizer, epoch, extra), fh, separators=(",", ":"))
        fh.write("\n")


def read_checkpoint(path) -> dict:
    if not os.path.exists(path):
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid checkpoint JSON: {exc.msg}", os.fspath(path), exc.lineno) from None
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise ParseError(f"not a {FORMAT} document", os.fspath(path), 1)
    return d


def model_from_dict(d: dict, cfg: NetConfig | None = None) -> LineNet:
    """Rebuild the network; ``cfg`` (if given) must match the stored shapes."""
    stored = NetConfig(**d["net_config"])
    model = LineNet(cfg if cfg is not None else stored).to(_DTYPES[d.get("dtype", "float32")])
    params = dict(model.named_parameters())
    recs = {r["name"]: r for r in d["tensors"]}
    missing = sorted(set(params) - set(recs))
    extra = sorted(set(recs) - set(params))
    if missing or extra:
        raise CheckpointMismatch(f"checkpoint tensors differ from network: missing {missing}, unexpected {extra}")
    with torch.no_grad():
        for name, p in params.items():
            rec = recs[name]
            if list(p.shape) != list(rec["shape"]):
                raise CheckpointMismatch(f"{name}: checkpoint shape {rec['shape']} vs network {list(p.shape)}")
            if len(rec["values"]) != p.numel():
                raise CheckpointMismatch(f"{name}: {len(rec['values'])} values for shape {rec['shape']}")
            p.copy_(_tensor_from(rec, p.dtype))
    return model


def load_optimizer_state(d: dict, model: LineNet, optimizer: torch.optim.Optimizer) -> None:
    """Restore optimizer moments saved by :func:`save_checkpoint`."""
    opt = d.get("optimizer")
    if opt is None:
        return
    params = dict(model.named_parameters())
    for rec in opt["state"]:
        p = params[rec["name"]]
        st = {}
        for key, val in rec.items():
            if key == "name":
                continue
            if isinstance(val, dict) and "values" in val:
                dtype = torch.float32 if key == "step" else p.dtype
                val = _tensor_from(val, dtype)
            st[key] = val
        if st:
            optimizer.state[p] = st


def load_checkpoint(path, cfg: NetConfig | None = None):
    """``(model, manifest)``; see :func:`load_optimizer_state` for resuming."""
    d = read_checkpoint(path)
    return model_from_dict(d, cfg), d
