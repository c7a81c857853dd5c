"""Standalone dApp endpoint: connects to a gNB over TCP and runs the
detection loop until the peer closes the socket.

Started by the simulator in tcp transport mode (one genuine process per
endpoint), but usable by hand against anything speaking the E3 framing:

    python -m spectrumshare.remote --port 36422 --n-prb 106 --mu 1
"""

from __future__ import annotations

import argparse
import socket
import sys

from .dapp import Dapp, DetectorParams
from .grid import make_grid


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spectrumshare.remote", description=__doc__.splitlines()[0]
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--n-prb", type=int, default=106)
    parser.add_argument("--mu", type=int, default=1)
    parser.add_argument("--margin-db", type=float, default=6.0)
    parser.add_argument("--k-on", type=int, default=1)
    parser.add_argument("--k-off", type=int, default=3)
    parser.add_argument("--floor-mode", choices=["median", "ewma"], default="median")
    parser.add_argument("--ewma-alpha", type=float, default=0.1)
    parser.add_argument("--subscribe-period", type=int, default=1)
    parser.add_argument("--ran-id", type=int, default=1)
    args = parser.parse_args(argv)

    grid = make_grid(args.mu, args.n_prb)
    params = DetectorParams(
        margin_db=args.margin_db,
        k_on=args.k_on,
        k_off=args.k_off,
        floor_mode=args.floor_mode,
        ewma_alpha=args.ewma_alpha,
    )
    dapp = Dapp(grid, params, ran_id=args.ran_id, subscribe_period=args.subscribe_period)

    with socket.create_connection((args.host, args.port), timeout=10.0) as sock:
        sock.settimeout(None)
        sock.sendall(dapp.start())
        while True:
            data = sock.recv(65536)
            if not data:
                break
            replies = dapp.feed(data)
            if replies:
                sock.sendall(replies)
    return 0


if __name__ == "__main__":
    sys.exit(main())
