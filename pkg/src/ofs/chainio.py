"""Chain serialization: CSV of draws plus a JSON metadata sidecar.

Floats are written with repr so that reading a file back reproduces the
in-memory chain bitwise.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import ParamVec
from .samplers import AdaptConfig, Chain, ChainConfig

LOG_VALUE_COLUMN = "log_value"


def sidecar_path(csv_path):
    csv_path = Path(csv_path)
    name = csv_path.name
    if name.endswith(".csv"):
        name = name[: -len(".csv")]
    return csv_path.with_name(name + ".meta.json")


def _config_to_dict(config):
    scale = np.asarray(config.proposal_scale, dtype=float)
    return {
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "thin": config.thin,
        "proposal_scale": scale.tolist() if scale.ndim else float(scale),
        "adapt": {
            "enabled": config.adapt.enabled,
            "target_acceptance": config.adapt.target_acceptance,
            "window": config.adapt.window,
        },
        "seed": config.seed,
        "initial": {
            "names": list(config.initial.names),
            "values": config.initial.values.tolist(),
            "support": list(config.initial.support),
        },
    }


def _config_from_dict(doc):
    initial = ParamVec(
        tuple(doc["initial"]["names"]),
        np.asarray(doc["initial"]["values"], dtype=float),
        tuple(doc["initial"]["support"]),
    )
    adapt = AdaptConfig(
        enabled=doc["adapt"]["enabled"],
        target_acceptance=doc["adapt"]["target_acceptance"],
        window=doc["adapt"]["window"],
    )
    scale = doc["proposal_scale"]
    scale = np.asarray(scale, dtype=float) if isinstance(scale, list) else float(scale)
    return ChainConfig(
        iterations=doc["iterations"],
        burn_in=doc["burn_in"],
        initial=initial,
        proposal_scale=scale,
        thin=doc["thin"],
        adapt=adapt,
        seed=doc["seed"],
    )


def write_chain(chain, csv_path):
    """Write draws to CSV and metadata to the sidecar; returns both paths."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(chain.names) + [LOG_VALUE_COLUMN])
        for row, log_value in zip(chain.draws, chain.log_values):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(log_value))])
    meta = {
        "names": list(chain.names),
        "support": list(chain.support),
        "adjusted": chain.adjusted,
        "acceptance_rate": chain.acceptance_rate,
        "support_violations": chain.support_violations,
        "block_acceptance": [[name, rate] for name, rate in chain.block_acceptance],
        "seed": chain.config.seed,
        "config": _config_to_dict(chain.config),
    }
    meta_path = sidecar_path(csv_path)
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, meta_path


def read_chain(csv_path):
    """Read a chain written by write_chain, reproducing it bitwise."""
    csv_path = Path(csv_path)
    with open(sidecar_path(csv_path)) as fh:
        meta = json.load(fh)
    names = tuple(meta["names"])
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != list(names) + [LOG_VALUE_COLUMN]:
            raise ValueError(
                f"chain CSV header {header} does not match metadata names {names}"
            )
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(names) + 1)
    return Chain(
        names=names,
        support=tuple(meta["support"]),
        draws=data[:, : len(names)],
        log_values=data[:, len(names)],
        acceptance_rate=meta["acceptance_rate"],
        config=_config_from_dict(meta["config"]),
        adjusted=meta["adjusted"],
        support_violations=meta["support_violations"],
        block_acceptance=tuple(
            (n, r) for n, r in meta.get("block_acceptance", [])
        ),
    )
