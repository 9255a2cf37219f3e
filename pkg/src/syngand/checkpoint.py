"""Trained-model bundle and its on-disk checkpoint format.

A checkpoint is ``<stem>.json`` (architecture, vocabularies, schedules,
standardization stats, seed history, tensor table) next to ``<stem>.bin``,
the parameters as little-endian float32 in the declared tensor order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .continuous import ContinuousSchedule, Standardizer
from .denoiser import DenoiserConfig, DenoiserOutput, GraphBatch, param_shapes, predict
from .discrete import DiscreteSchedule
from .molgraph import ATOMS, BONDS, MAX_VALENCE

FORMAT = "syngand-checkpoint/1"


@dataclass
class Model:
    cfg: DenoiserConfig
    params: dict
    discrete: DiscreteSchedule
    continuous: ContinuousSchedule
    standardizer: Standardizer
    node_hist: dict                 # node count -> probability
    sample_mask: np.ndarray         # channels the sampler treats as observed
    seed_history: list = field(default_factory=list)
    discrete_s: float = 0.008

    @property
    def T(self) -> int:
        return self.cfg.T

    def denoise(self, batch: GraphBatch, z_y, y_mask, t) -> DenoiserOutput:
        return predict(self.params, self.cfg, batch, z_y, y_mask, t)


def _tensor_bytes(params, cfg):
    chunks = []
    table = []
    offset = 0
    for name, shape in param_shapes(cfg):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        if arr.shape != tuple(shape):
            raise ValueError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        chunks.append(arr.tobytes())
        table.append({"name": name, "shape": list(shape), "offset": offset})
        offset += arr.nbytes
    return b"".join(chunks), table


def save_checkpoint(model: Model, path) -> tuple[Path, Path]:
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    blob, table = _tensor_bytes(model.params, model.cfg)
    manifest = {
        "format": FORMAT,
        "tool_version": __version__,
        "architecture": model.cfg.to_dict(),
        "param_count": int(sum(np.prod(t["shape"]) for t in table)),
        "atom_vocab": list(ATOMS),
        "max_valence": MAX_VALENCE,
        "bond_vocab": list(BONDS),
        "discrete_schedule": {"name": "cosine", "T": model.T, "s": model.discrete_s,
                              "m_X": model.discrete.m_X.tolist(),
                              "m_E": model.discrete.m_E.tolist()},
        "continuous_schedule": {"name": "cosine", "T": model.T, "alpha_floor": 1e-3},
        "standardization": model.standardizer.to_dict(),
        "node_count_hist": {str(k): v for k, v in sorted(model.node_hist.items())},
        "sample_mask": [bool(x) for x in model.sample_mask],
        "seed_history": list(model.seed_history),
        "blob": bin_path.name,
        "blob_dtype": "float32-le",
        "blob_blake2b": hashlib.blake2b(blob, digest_size=8).hexdigest(),
        "tensors": table,
    }
    bin_path.write_bytes(blob)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path, bin_path


def load_checkpoint(path) -> Model:
    from .continuous import cosine_alpha
    from .discrete import cosine_abar

    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} manifest")
    blob = (path.parent / manifest["blob"]).read_bytes()
    if hashlib.blake2b(blob, digest_size=8).hexdigest() != manifest["blob_blake2b"]:
        raise ValueError(f"{path}: parameter blob checksum mismatch")
    cfg = DenoiserConfig(**manifest["architecture"])
    params = {}
    for t in manifest["tensors"]:
        count = int(np.prod(t["shape"]))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=t["offset"])
        params[t["name"]] = arr.astype(np.float64).reshape(t["shape"])
    ds = manifest["discrete_schedule"]
    T = cfg.T
    return Model(
        cfg=cfg,
        params=params,
        discrete=DiscreteSchedule(cosine_abar(T, ds["s"]), ds["m_X"], ds["m_E"]),
        continuous=ContinuousSchedule(cosine_alpha(T)),
        standardizer=Standardizer.from_dict(manifest["standardization"]),
        node_hist={int(k): v for k, v in manifest["node_count_hist"].items()},
        sample_mask=np.array(manifest["sample_mask"], dtype=bool),
        seed_history=manifest["seed_history"],
        discrete_s=ds["s"],
    )
