import argparse

from . import PROTOCOL_VERSION
from .worker import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vizflow-worker",
        description="sandboxed code-to-image execution worker (stdio frames)")
    parser.add_argument("--protocol-version", type=int, default=PROTOCOL_VERSION)
    args = parser.parse_args(argv)
    return serve(args.protocol_version)


if __name__ == "__main__":
    raise SystemExit(main())
