"""Reference external scorer speaking protocol v1 on stdin/stdout.

Useful for tests and as a template for wiring real scoring programs:

    fraggen train --scorer "external:python3 -m fraggen.echo_scorer --metric neg-node-count"
"""

from __future__ import annotations

import argparse
import base64
import sys

from .graphs import parse_graph


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--constant", type=float, default=None,
                    help="reply with this fixed score")
    ap.add_argument("--metric", default="neg-node-count",
                    choices=["neg-node-count", "neg-label2-count"],
                    help="score to emit when no constant is given")
    ap.add_argument("--fail-every", type=int, default=0,
                    help="reply NaN on every k-th request")
    args = ap.parse_args(argv)

    n = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        n += 1
        if args.fail_every and n % args.fail_every == 0:
            print("NaN", flush=True)
            continue
        if args.constant is not None:
            print(repr(args.constant), flush=True)
            continue
        g = parse_graph(base64.b64decode(line).decode())
        if args.metric == "neg-node-count":
            score = -float(g.n)
        else:
            score = -float(sum(1 for lab in g.labels if lab == 2))
        print(repr(score), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
