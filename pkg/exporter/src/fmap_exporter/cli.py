"""fmap-export: dump a backbone layer's activations per proposal crop.

The jobs file is JSON: a list of {"image": path, "boxes": [[cx,cy,h,w],...],
"labels": [int,...] (optional)} entries; boxes use the row/col convention
(cx is the row center, h the row extent).
"""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportJob, Proposal, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fmap-export", description=__doc__)
    parser.add_argument("--jobs", required=True, help="JSON file of images + boxes")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--layer", required=True, help="feature node, e.g. layer2")
    parser.add_argument("--lattice", type=int, nargs=2, default=(28, 28), metavar=("H", "W"))
    parser.add_argument("--arch", default="resnet18")
    parser.add_argument("--weights", default=None, help="local state-dict path")
    parser.add_argument("--channels", type=int, default=None, help="expected D")
    parser.add_argument("--margin", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    with open(args.jobs) as fh:
        rows = json.load(fh)
    images, proposals = [], []
    for row in rows:
        images.append(row["image"])
        labels = row.get("labels") or [None] * len(row["boxes"])
        proposals.append(
            [Proposal(box=tuple(b), label=l) for b, l in zip(row["boxes"], labels)]
        )
    job = ExportJob(
        images=images,
        proposals=proposals,
        layer=args.layer,
        lattice=tuple(args.lattice),
        out_dir=args.out,
        arch=args.arch,
        weights_path=args.weights,
        channels=args.channels,
        margin=args.margin,
        seed=args.seed,
    )
    manifest = export(job)
    print(f"exported {len(manifest['records'])} crops -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
