import argparse
import sys

from .model import ModelUnavailable, load_model
from .selftest import selftest
from .server import serve


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="tabpfn-bridge",
        description="NDJSON predictor server over stdin/stdout")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve", help="serve until shutdown or EOF")
    p.add_argument("--model", default="tabpfn", choices=["tabpfn", "stub"],
                   help="stub is a synthetic predictor for protocol tests")
    p = sub.add_parser("selftest", help="verify the install end to end")
    p.add_argument("--model", default="tabpfn", choices=["tabpfn", "stub"])
    args = ap.parse_args(argv)

    if args.command == "selftest":
        return selftest(args.model)
    try:
        model = load_model(args.model)
    except ModelUnavailable as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    serve(model, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
