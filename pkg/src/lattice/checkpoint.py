"""
Lattice checkpoints

A checkpoint is a JSON header (config, map, row counts) next to a binary
body. The body is one Kalman row snapshot (the state_to_bytes layout: dim,
xi^2, sigma0, then h, inverse Hessian, A and Gamma, row-major complex128)
per bank, stage and output bin in that order, followed by the delay
buffers as little-endian complex128. A pending shadow filter is not saved;
it is rebuilt by the next map refresh.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Union

import numpy as np

from src.common.errors import ShapeError
from src.dependency.dependency_map import DependencyMap
from src.kalman.miso_bank import MisoBank
from src.kalman.miso_kalman import MisoKalmanState, snapshot_dim, snapshot_size, state_from_bytes, state_to_bytes
from src.lattice.lattice_filter import LatticeConfig, LatticeFilter, init_lattice

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2
BANKS = ("forward", "backward", "joint")


def _row_states(bank: MisoBank, xi2: float):
    counts = bank.layout.valid.sum(axis=1)
    for stage in range(bank.batch):
        for row, dim in enumerate(counts):
            eye = np.eye(dim, dtype=np.complex128)
            yield MisoKalmanState(
                h=bank.coefficients[stage, row, :dim],
                inv_hessian=bank.inv_hessian[stage, row, :dim, :dim],
                transition=bank.a * eye,
                process_noise=bank.gamma * eye,
                measurement_noise=xi2,
                sigma0=bank.sigma0,
            )


def save_checkpoint(lattice: LatticeFilter, path: Union[str, Path]) -> Path:
    """Write <path>.json and <path>.bin"""
    base = Path(path)
    banks = lattice._banks
    xi2 = lattice.noise_estimate or lattice.config.xi_floor
    dependency_map = lattice.dependency_map

    parts = []
    for name in BANKS:
        parts.extend(state_to_bytes(state) for state in _row_states(getattr(banks, name), xi2))
    parts.append(np.ascontiguousarray(banks.delayed_backward, dtype="<c16").tobytes())

    header = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "dtype": "complex128",
        "config": {**asdict(lattice.config), "gain_pairing": lattice.config.gain_pairing.value},
        "map": dependency_map.matrix.astype(int).tolist(),
        "conjugate_map": dependency_map.conjugate_or_empty().astype(int).tolist(),
        "smoothed_residual": lattice.smoothed_residual,
        "banks": list(BANKS),
        "rows_per_bank": lattice.config.num_stages * lattice.config.num_bins,
        "delay_shape": list(banks.delayed_backward.shape),
    }
    base.with_suffix(".json").write_text(json.dumps(header, indent=2), encoding="utf-8")
    base.with_suffix(".bin").write_bytes(b"".join(parts))
    logger.info("Saved lattice checkpoint to %s", base)
    return base


def _restore_bank(bank: MisoBank, body: bytes, offset: int) -> int:
    counts = bank.layout.valid.sum(axis=1)
    for stage in range(bank.batch):
        for row, dim in enumerate(counts):
            if offset + snapshot_size(0) > len(body) or snapshot_dim(body, offset) != dim:
                raise ShapeError(f"checkpoint row (stage {stage}, bin {row}) does not match a "
                                 f"{dim}-input row of the current map")
            size = snapshot_size(dim)
            state = state_from_bytes(body[offset:offset + size])
            bank.coefficients[stage, row, :dim] = state.h
            bank.inv_hessian[stage, row, :dim, :dim] = state.inv_hessian
            offset += size
    return offset


def load_checkpoint(path: Union[str, Path]) -> LatticeFilter:
    base = Path(path)
    header = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ShapeError(f"unsupported checkpoint format {header.get('format_version')}")
    config = LatticeConfig(**header["config"])
    dependency_map = DependencyMap(np.array(header["map"], dtype=bool),
                                   np.array(header["conjugate_map"], dtype=bool))
    lattice = init_lattice(config, dependency_map)
    lattice.smoothed_residual = header["smoothed_residual"]

    body = base.with_suffix(".bin").read_bytes()
    offset = 0
    for name in header["banks"]:
        offset = _restore_bank(getattr(lattice._banks, name), body, offset)

    delayed = lattice._banks.delayed_backward
    remaining = np.frombuffer(body, dtype="<c16", offset=offset)
    if list(delayed.shape) != header["delay_shape"] or remaining.size != delayed.size:
        raise ShapeError(f"checkpoint delay buffers hold {remaining.size} values, "
                         f"filter expects {delayed.size}")
    delayed[...] = remaining.reshape(delayed.shape)
    return lattice
