"""
Checkpoint files
================

Encoder weights go to a small binary format: magic, version, JSON metadata,
then named little-endian float32 arrays. Loading is bit-exact and damaged
files are refused.
"""

import tempfile
from pathlib import Path

import numpy as np

from mamkit import model as M
from mamkit.checkpoint import load_model, save_model
from mamkit.errors import CheckpointFormatError

cfg = M.ModelConfig(n_layers=2, d_model=64, d_ff=128, n_heads=4, input_dim=128)
state = M.init_state(cfg, np.random.default_rng(0))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "encoder.mamc"
    save_model(path, state, cfg, seed=0, technique="time")
    print("wrote", path.stat().st_size, "bytes for", M.n_parameters(cfg), "parameters")

    back, back_cfg, meta, _ = load_model(path)
    print("same config:", back_cfg == cfg)
    print("bit-exact:", all(np.array_equal(back[k], state[k]) for k in state))
    print("metadata:", meta)

    # cut the file short and try again
    raw = path.read_bytes()
    (Path(tmp) / "cut.mamc").write_bytes(raw[: len(raw) - 100])
    try:
        load_model(Path(tmp) / "cut.mamc")
    except CheckpointFormatError as err:
        print("rejected:", err)
