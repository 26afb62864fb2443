"""Checkpoint files (``.npz``).

Layout, format version 1:

``meta``
    UTF-8 JSON string: ``format_version``, ``env_hash`` (sha256 of the run
    config's environment block), ``train_config`` (field -> value) and
    ``params_sha256`` over every array below, visited in sorted-name order
    (name bytes, then little-endian float64 bytes of the array).
``actor.W{i}``, ``actor.b{i}``, ``actor.log_std``
    Current actor; weights are ``(fan_in, fan_out)``.
``actor_old.*``
    Behaviour actor (identical to ``actor`` after every update).
``critic.W{i}``, ``critic.b{i}``
    Value network.
``adam_actor.{t,m{i},v{i}}``, ``adam_critic.*``
    Optimizer moments, in the networks' parameter order (actor log-std last).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from .errors import ChecksumMismatch, NoSuchFile
from .nn import Adam, Mlp
from .ppo import Actor, Optimizers, TrainConfig, TrainResult

FORMAT_VERSION = 1


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return h.hexdigest()


def _actor_arrays(actor: Actor, prefix: str) -> dict[str, np.ndarray]:
    out = actor.net.state_arrays(prefix)
    out[f"{prefix}.log_std"] = actor.log_std
    return out


def save_checkpoint(path: str | os.PathLike, result: TrainResult, env_hash: str) -> None:
    arrays: dict[str, np.ndarray] = {}
    arrays.update(_actor_arrays(result.actor, "actor"))
    arrays.update(_actor_arrays(result.actor_old, "actor_old"))
    arrays.update(result.critic.state_arrays("critic"))
    arrays.update(result.opts.actor.state_arrays("adam_actor"))
    arrays.update(result.opts.critic.state_arrays("adam_critic"))
    tc = dataclasses.asdict(result.config)
    tc["hidden"] = list(tc["hidden"])
    meta = {
        "format_version": FORMAT_VERSION,
        "env_hash": env_hash,
        "train_config": tc,
        "params_sha256": _digest(arrays),
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | os.PathLike, expected_env_hash: str | None = None) -> TrainResult:
    """Load and verify a checkpoint; raises ChecksumMismatch on any integrity failure."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except FileNotFoundError:
        raise NoSuchFile(str(path)) from None
    meta = json.loads(str(arrays.pop("meta")))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ChecksumMismatch(f"unsupported checkpoint format {meta.get('format_version')!r}")
    if _digest(arrays) != meta.get("params_sha256"):
        raise ChecksumMismatch("parameter checksum does not match checkpoint contents")
    if expected_env_hash is not None and meta.get("env_hash") != expected_env_hash:
        raise ChecksumMismatch("checkpoint was trained on a different environment config")
    tc = meta["train_config"]
    tc["hidden"] = tuple(tc["hidden"])
    config = TrainConfig(**tc)
    actor = Actor(Mlp.from_arrays(arrays, "actor", config.dtype), arrays["actor.log_std"])
    actor_old = Actor(Mlp.from_arrays(arrays, "actor_old", config.dtype), arrays["actor_old.log_std"])
    critic = Mlp.from_arrays(arrays, "critic", config.dtype)
    opts = Optimizers(Adam(actor.params, config.policy_lr), Adam(critic.params, config.value_lr))
    opts.actor.load_arrays(arrays, "adam_actor")
    opts.critic.load_arrays(arrays, "adam_critic")
    return TrainResult([], actor, actor_old, critic, opts, config)
