"""Deterministic minibatch training for the triplet model and the two-branch
baseline, with binary checkpointing.

(seed, config, data) fully determine every parameter after every step: the
same run repeated gives bitwise-identical checkpoints. Each epoch shuffles
the examples (seeded), walks all full batches plus the final partial batch,
takes one Adam step per batch and zeroes gradients afterwards. One JSON line
per epoch goes to stdout: ``{"epoch": k, "mean_loss": x, "eval_acc": y?}``.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data import DataError, FeatureStore, TripletExample, pairs_from_triplets
from .nn import NonFiniteLossError, RngState, adam_step, zero_grads

CHECKPOINT_VERSION = 1
_MAGIC = "triplet-recsys-checkpoint"


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    dropout_p: float = 0.2
    learning_rate: float = 1e-3
    seed: int = 0
    model_kind: str = "triplet"  # "triplet" | "twonet"
    user_tower: M.TowerSpec = field(default_factory=M.user_tower_spec)
    item_tower: M.TowerSpec = field(default_factory=M.item_tower_spec)
    eval_every: int = 0  # epochs between held-out evaluations; 0 disables

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.model_kind not in ("triplet", "twonet"):
            raise ValueError(f"unknown model kind: {self.model_kind!r}")


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to reproduce them."""

    config: TrainConfig
    model: M.TripletModelParams
    rng: RngState
    epoch: int
    loss_history: list[float]
    format_version: int = CHECKPOINT_VERSION


def build_model(config: TrainConfig, rng: RngState) -> M.TripletModelParams:
    """Fresh towers/head per the config; the config's dropout applies to
    both towers."""
    user_spec = dataclasses.replace(config.user_tower, dropout_p=config.dropout_p)
    item_spec = dataclasses.replace(config.item_tower, dropout_p=config.dropout_p)
    return M.init_model(user_spec, item_spec, rng)


def _gather_triplet_rows(store: FeatureStore, triplets: list[TripletExample]):
    u = np.array([store.user_row(t.user_id) for t in triplets], dtype=np.intp)
    i = np.array([store.item_row(t.item_i_id) for t in triplets], dtype=np.intp)
    j = np.array([store.item_row(t.item_j_id) for t in triplets], dtype=np.intp)
    labels = np.array([t.label for t in triplets], dtype=np.float64)
    return u, i, j, labels


def _eval_pairwise(model, store, triplets) -> float:
    u, i, j, labels = _gather_triplet_rows(store, triplets)
    o = M.pair_logit(
        model, store.user_topics[u], store.item_features[i], store.item_features[j]
    )
    correct = ((o < 0) & (labels == 0)) | ((o > 0) & (labels == 1))
    return float(correct.mean())


def train(
    store: FeatureStore,
    triplets: list[TripletExample],
    config: TrainConfig,
    eval_triplets: list[TripletExample] | None = None,
    log_stream=None,
) -> Checkpoint:
    """Train per the config and return the final checkpoint.

    ``eval_triplets`` plus ``config.eval_every > 0`` adds a held-out pairwise
    accuracy to the per-epoch JSON line every eval_every epochs.
    """
    if not triplets:
        raise DataError("no training triplets")
    log = log_stream if log_stream is not None else sys.stdout

    rng = RngState(config.seed)
    model = build_model(config, rng)
    params = model.parameters()

    u_rows, i_rows, j_rows, tri_labels = _gather_triplet_rows(store, triplets)
    if config.model_kind == "twonet":
        pair_uids, pair_iids, pair_labels = pairs_from_triplets(triplets, store)
        pu_rows = np.array([store.user_row(x) for x in pair_uids], dtype=np.intp)
        pi_rows = np.array([store.item_row(x) for x in pair_iids], dtype=np.intp)
        n_examples = len(pair_labels)
    else:
        n_examples = len(triplets)

    loss_history: list[float] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.next_generator().permutation(n_examples)
        total = 0.0
        for start in range(0, n_examples, config.batch_size):
            idx = perm[start : start + config.batch_size]
            try:
                if config.model_kind == "triplet":
                    loss = M.triplet_loss_and_grads(
                        model,
                        store.user_topics[u_rows[idx]],
                        store.item_features[i_rows[idx]],
                        store.item_features[j_rows[idx]],
                        tri_labels[idx],
                        training=True,
                        rng=rng,
                    )
                else:
                    loss = M.twonet_loss_and_grads(
                        model,
                        store.user_topics[pu_rows[idx]],
                        store.item_features[pi_rows[idx]],
                        pair_labels[idx],
                        training=True,
                        rng=rng,
                    )
            except NonFiniteLossError as e:
                raise NonFiniteLossError(
                    f"epoch {epoch}, batch starting at {start}: {e}; "
                    f"example indices {idx[:8].tolist()}"
                ) from None
            step += 1
            adam_step(params, lr=config.learning_rate, step=step)
            zero_grads(params)
            total += loss * len(idx)
        mean_loss = total / n_examples
        loss_history.append(mean_loss)

        line = {"epoch": epoch, "mean_loss": mean_loss}
        if (
            eval_triplets
            and config.eval_every > 0
            and (epoch % config.eval_every == 0 or epoch == config.epochs)
        ):
            line["eval_acc"] = _eval_pairwise(model, store, eval_triplets)
        print(json.dumps(line), file=log)

    return Checkpoint(
        config=config,
        model=model,
        rng=rng,
        epoch=config.epochs,
        loss_history=loss_history,
    )


# ---------------------------------------------------------------------------
# Checkpoint serialization: one JSON header line, then raw little-endian
# float64 tensor sections in the order the header lists them.
# ---------------------------------------------------------------------------


def _config_to_dict(config: TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["user_tower"] = M.TowerSpec(**d["user_tower"])
    d["item_tower"] = M.TowerSpec(**d["item_tower"])
    return TrainConfig(**d)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = M.named_parameters(ckpt.model)
    header = {
        "magic": _MAGIC,
        "format_version": ckpt.format_version,
        "config": _config_to_dict(ckpt.config),
        "rng": {"seed": ckpt.rng.seed, "counter": ckpt.rng.counter},
        "epoch": ckpt.epoch,
        "loss_history": ckpt.loss_history,
        "tensors": [{"name": n, "shape": list(p.value.shape)} for n, p in tensors],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, p in tensors:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: not a checkpoint (missing header line)")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header: {e}") from None
    if header.get("magic") != _MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {header.get('format_version')!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )

    config = _config_from_dict(header["config"])
    model = build_model(config, RngState(config.seed))
    by_name = dict(M.named_parameters(model))
    offset = nl + 1
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in by_name:
            raise DataError(f"{path}: unknown tensor section {name!r}")
        p = by_name[name]
        if p.value.shape != shape:
            raise DataError(
                f"{path}: tensor {name!r} has shape {shape}, config implies {p.value.shape}"
            )
        nbytes = int(np.prod(shape)) * 8
        section = blob[offset : offset + nbytes]
        if len(section) != nbytes:
            raise DataError(f"{path}: truncated tensor section {name!r}")
        p.value[...] = np.frombuffer(section, dtype="<f8").reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes after tensor sections")

    return Checkpoint(
        config=config,
        model=model,
        rng=RngState(header["rng"]["seed"], header["rng"]["counter"]),
        epoch=header["epoch"],
        loss_history=list(header["loss_history"]),
        format_version=header["format_version"],
    )
