"""Regenerate the bundled random-weight reference model.

2 layers, hidden 128, 65-character vocabulary, weights uniform in [-0.5, 0.5]
(seed 0). The output is deterministic, so the committed file can be checked
with ``git diff`` after running this.
"""

import argparse
from pathlib import Path

from lstmq88.model_io import random_float_model, serialize

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "lstmq88" / "data" / "reference_model.lstmq"

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--scale", type=float, default=0.5)
    args = ap.parse_args()
    fm = random_float_model(args.seed, args.hidden, args.layers, scale=args.scale)
    args.out.write_bytes(serialize(fm))
    print(f"wrote {args.out} ({args.out.stat().st_size} bytes)")
