"""Child-process entry point: one request on stdin, one response on stdout."""

import json
import sys

from . import ProtocolError, run_request


def main() -> int:
    raw = sys.stdin.read()
    try:
        reply = run_request(raw)
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 1
    json.dump(reply, sys.stdout)
    sys.stdout.write("\n")
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
