"""Mixing-coefficient sweep over 0.1 ... 0.9 on the desk-scale task (writes sweep.csv)."""

import argparse
import sys

from cauirl.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/digits_lt.yaml")
    parser.add_argument("--out", default="runs/lambda_sweep")
    args = parser.parse_args()
    values = ",".join(f"{0.1 * k:.1f}" for k in range(1, 10))
    return cli_main(["sweep", "--config", args.config, "--param", "lambda", "--values", values, "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
