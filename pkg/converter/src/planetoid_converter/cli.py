"""planetoid-converter convert --in DIR --name {cora|citeseer|pubmed|nell} --out DIR"""

from __future__ import annotations

import argparse
import json
import sys

from planetoid_converter.convert import KNOWN_NAMES, BundleError, convert


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="planetoid-converter")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("convert", help="convert one bundle to the neutral directory format")
    p.add_argument("--in", dest="input_dir", required=True, help="directory with ind.NAME.* files")
    p.add_argument("--name", required=True, choices=KNOWN_NAMES)
    p.add_argument("--out", dest="output_dir", required=True, help="output dataset directory")
    args = parser.parse_args(argv)

    try:
        summary = convert(args.input_dir, args.name, args.output_dir)
    except (BundleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary.as_dict(), sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
