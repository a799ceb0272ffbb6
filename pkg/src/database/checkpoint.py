"""
Checkpoint Module
Versioned search checkpoints as numpy .npz archives.

Layout: every array under a slash-separated name plus one string entry
`header` holding JSON metadata:

    header                      {"format": "fxdarts-ckpt", "version": 1, ...}
    alpha/<k>/<j>               α of node j in cell k
    alive/<k>/<j>               alive mask (bool)
    theta/<identifier>          model parameters
    alpha_opt/m/<identifier>    Adam moments of α (and alpha_opt/v/..., alpha_opt/steps)
    archive/<n>/alpha/<k>/<j>   α of the n-th snapshot
    archive/<n>/alive/<k>/<j>   alive mask of the n-th snapshot
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from src.errors import CheckpointError
from src.search.ess_controller import ArchiveEntry, EssController, EssState, SearchPhase
from src.search_space.genotype import Genotype
from src.search_space.operators import OperatorSpace
from src.search_space.supernet import SuperNetwork

logger = logging.getLogger(__name__)

FORMAT = "fxdarts-ckpt"
VERSION = 1


@dataclass
class Checkpoint:
    header: Dict
    arrays: Dict[str, np.ndarray]

    @property
    def config_text(self) -> str:
        return self.meta("config")

    def meta(self, *keys: str):
        """
        Nested header value, e.g. meta("dims", "cells").

        Raises:
            CheckpointError: Naming the first missing key
        """
        value = self.header
        for depth, key in enumerate(keys):
            if not isinstance(value, dict) or key not in value:
                raise CheckpointError(f"checkpoint header has no {'.'.join(keys[:depth + 1])!r} entry")
            value = value[key]
        return value

    def array(self, name: str) -> np.ndarray:
        try:
            return self.arrays[name]
        except KeyError:
            raise CheckpointError(f"checkpoint is missing array {name!r}") from None


def _node_arrays(prefix: str, values: Dict) -> Dict[str, np.ndarray]:
    return {f"{prefix}/{k}/{j}": np.asarray(value) for (k, j), value in values.items()}


def save_checkpoint(path: Path, controller: EssController, config_text: str,
                    rngs: Optional[Dict[str, np.random.Generator]] = None) -> Path:
    """
    Write the controller's complete search state.

    Args:
        path: Destination .npz file (replaced atomically)
        controller: Controller whose network, state and α optimizer are saved
        config_text: The run configuration in text form
        rngs: Named random streams whose states are saved

    Returns:
        The written path
    """
    net, state = controller.net, controller.state
    alpha, alive = net.arch.snapshot()
    arrays = {}
    arrays.update(_node_arrays("alpha", alpha))
    arrays.update(_node_arrays("alive", alive))
    arrays.update({f"theta/{p.identifier}": p.data for p in net.model_parameters()})
    arrays.update(controller.alpha_optimizer.state_arrays("alpha_opt"))
    for n, entry in enumerate(state.archive):
        arrays.update(_node_arrays(f"archive/{n}/alpha", entry.alpha))
        arrays.update(_node_arrays(f"archive/{n}/alive", entry.alive))

    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": config_text,
        "space": net.space.space_id,
        "dims": {
            "cells": net.cell_count,
            "nodes": net.node_count,
            "channels": net.channels,
            "classes": net.classes,
            "in_channels": net.in_channels,
            "normalization": net.normalization,
        },
        "state": {
            "lambdas": {str(k): v for k, v in state.lambdas.items()},
            "prev_entropy": {str(k): v for k, v in state.prev_entropy.items()},
            "phase": state.phase.value,
            "round": state.round,
            "epoch": state.epoch,
            "step": state.step,
            "delta_e": state.delta_e,
            "initial_entropy": state.initial_entropy,
            "max_grad_ce_norm": state.max_grad_ce_norm,
            "completed_rounds": state.completed_rounds,
        },
        "archive": [
            {"label": e.label, "round": e.round, "epoch": e.epoch, "genotype": e.genotype.to_dict()}
            for e in state.archive
        ],
        "rng_states": {name: rng.bit_generator.state for name, rng in (rngs or {}).items()},
    }
    arrays["header"] = np.array(json.dumps(header))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)
    logger.info(f"Checkpoint written: {path} (round {state.completed_rounds}, step {state.step})")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Raises:
        CheckpointError: If the file is unreadable, of another format or version
    """
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {name: data[name] for name in data.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if "header" not in arrays:
        raise CheckpointError(f"{path} has no header entry")
    try:
        header = json.loads(str(arrays.pop("header")))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path} has a malformed header: {e}") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an FX-DARTS checkpoint (format {header.get('format')!r})")
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r} (expected {VERSION})")
    return Checkpoint(header, arrays)


def restore_supernet(checkpoint: Checkpoint, rng: Optional[np.random.Generator] = None) -> SuperNetwork:
    """Rebuild the super-network with α, masks and θ from the checkpoint."""
    try:
        space = OperatorSpace.from_id(checkpoint.meta("space"))
    except ValueError as e:
        raise CheckpointError(str(e)) from None
    cells, nodes, channels, classes, in_channels = (
        checkpoint.meta("dims", name) for name in ("cells", "nodes", "channels", "classes", "in_channels")
    )
    normalization = checkpoint.meta("dims").get("normalization", "node")
    net = SuperNetwork(cells, nodes, space, channels, classes, in_channels, rng, normalization)
    alpha = {key: checkpoint.array(f"alpha/{key[0]}/{key[1]}") for key in net.arch.keys()}
    alive = {key: checkpoint.array(f"alive/{key[0]}/{key[1]}") for key in net.arch.keys()}
    for key in net.arch.keys():
        if alpha[key].shape != net.arch.alpha[key].shape:
            raise CheckpointError(f"alpha/{key[0]}/{key[1]} has shape {alpha[key].shape}, "
                                  f"expected {net.arch.alpha[key].shape}")
    net.arch.load(alpha, alive)
    theta = {name[len("theta/"):]: value for name, value in checkpoint.arrays.items() if name.startswith("theta/")}
    net.load_parameters(theta, strict=True)
    return net


def restore_state(checkpoint: Checkpoint, net: SuperNetwork) -> EssState:
    """Rebuild the controller state, archive included."""
    saved = checkpoint.meta("state")
    try:
        state = EssState(
            lambdas={int(k): float(v) for k, v in saved["lambdas"].items()},
            prev_entropy={int(k): (None if v is None else float(v)) for k, v in saved["prev_entropy"].items()},
            phase=SearchPhase(saved["phase"]),
            round=saved["round"],
            epoch=saved["epoch"],
            step=saved["step"],
            delta_e=saved["delta_e"],
            initial_entropy=saved["initial_entropy"],
            max_grad_ce_norm=saved["max_grad_ce_norm"],
            completed_rounds=saved["completed_rounds"],
        )
    except KeyError as e:
        raise CheckpointError(f"checkpoint header has no 'state.{e.args[0]}' entry") from None
    for n, meta in enumerate(checkpoint.meta("archive")):
        state.archive.append(ArchiveEntry(
            label=meta["label"],
            round=meta["round"],
            epoch=meta["epoch"],
            alpha={key: checkpoint.array(f"archive/{n}/alpha/{key[0]}/{key[1]}") for key in net.arch.keys()},
            alive={key: checkpoint.array(f"archive/{n}/alive/{key[0]}/{key[1]}").astype(bool)
                   for key in net.arch.keys()},
            genotype=Genotype.from_dict(meta["genotype"]),
        ))
    return state


def restore_rngs(checkpoint: Checkpoint, rngs: Dict[str, np.random.Generator]):
    """Put saved bit-generator states back into the given generators."""
    for name, saved in checkpoint.header.get("rng_states", {}).items():
        if name in rngs:
            rngs[name].bit_generator.state = saved
