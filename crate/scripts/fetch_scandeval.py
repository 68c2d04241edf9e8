"""Assemble a score table for the toy model from ScandEval results.

Best effort. The exact leaderboard snapshot behind the published analysis is
not recorded, so this script only reshapes results you already have:

* JSON-lines files written by the `scandeval` package
  (`scandeval_benchmark_results.jsonl`), one record per (model, dataset), or
* a wide CSV export with a `model` column and one column per dataset.

Usage:

    python3 scripts/fetch_scandeval.py RESULTS [RESULTS ...] \
        --out fixtures/scandeval_germanic_nlg.csv

Choices made here:

* one primary metric per dataset (see METRICS), taken from the `total`
  block with the `test_` prefix;
* when a model has several records for a dataset, the last one wins;
* models lacking any of the four datasets are dropped, since the fitter
  deletes incomplete rows anyway.

The acceptance suite fits the toy model to the output file if it exists.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

# dataset name in ScandEval -> (column in the score table, metric key)
METRICS = {
    "danish-citizen-tests": ("danish_citizen_tests", "mcc"),
    "danske-talemaader": ("danske_talemaader", "mcc"),
    "cnn-dailymail": ("cnn_dm", "bertscore"),
    "squad": ("squad", "f1"),
}
COLUMNS = [column for column, _ in METRICS.values()]


def from_jsonl(path, table):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                print(f"{path}:{lineno}: skipped ({e})", file=sys.stderr)
                continue
            dataset = record.get("dataset")
            if dataset not in METRICS:
                continue
            column, metric = METRICS[dataset]
            total = record.get("results", {}).get("total", {})
            value = total.get(f"test_{metric}", total.get(metric))
            if value is None:
                print(f"{path}:{lineno}: no `{metric}` for {dataset}", file=sys.stderr)
                continue
            table.setdefault(record["model"], {})[column] = float(value)


def from_csv(path, table):
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            model = row.get("model")
            if not model:
                continue
            for dataset, (column, _) in METRICS.items():
                for key in (column, dataset):
                    if row.get(key) not in (None, ""):
                        table.setdefault(model, {})[column] = float(row[key])
                        break


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("results", nargs="+", type=Path)
    parser.add_argument("--out", type=Path, default=Path("fixtures/scandeval_germanic_nlg.csv"))
    args = parser.parse_args()

    table = {}
    for path in args.results:
        if path.suffix == ".csv":
            from_csv(path, table)
        else:
            from_jsonl(path, table)

    complete = {m: s for m, s in table.items() if all(c in s for c in COLUMNS)}
    dropped = len(table) - len(complete)
    if not complete:
        sys.exit("no model has scores for all four datasets")

    with open(args.out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model", *COLUMNS])
        for model in sorted(complete):
            writer.writerow([model, *(complete[model][c] for c in COLUMNS)])
    print(f"wrote {len(complete)} models to {args.out} ({dropped} incomplete dropped)")


if __name__ == "__main__":
    main()
