#!/usr/bin/env python3
"""Convert the Veteran, WHAS500 and GBSG2 datasets to the CSV layout read by `survgen`.

The ARFF sources ship inside the scikit-survival wheel. Pass --source with a directory
holding the .arff files, or let the script fetch the wheel with `pip download`.
"""

import argparse
import csv
import pathlib
import subprocess
import tempfile
import zipfile

# name -> (arff file, time column, event column, value meaning "event observed")
DATASETS = {
    "veteran": ("veteran.arff", "Survival_in_days", "Status", "dead"),
    "whas500": ("whas500.arff", "lenfol", "fstat", "1"),
    "gbsg2": ("GBSG2.arff", "time", "cens", "1"),
}


def read_arff(path):
    columns, rows, in_data = [], [], False
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("%"):
            continue
        lower = line.lower()
        if lower.startswith("@attribute"):
            columns.append(line.split()[1])
        elif lower.startswith("@data"):
            in_data = True
        elif in_data:
            rows.append(next(csv.reader([line], quotechar="'", skipinitialspace=True)))
    return columns, rows


def arff_dir_from_wheel(workdir):
    subprocess.run(
        ["pip", "download", "--no-deps", "--only-binary=:all:", "-d", workdir, "scikit-survival"],
        check=True,
    )
    wheel = next(pathlib.Path(workdir).glob("scikit_survival-*.whl"))
    with zipfile.ZipFile(wheel) as zf:
        zf.extractall(workdir)
    return pathlib.Path(workdir) / "sksurv" / "datasets" / "data"


def convert(source, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (arff, time_col, event_col, observed) in DATASETS.items():
        columns, rows = read_arff(source / arff)
        t, e = columns.index(time_col), columns.index(event_col)
        with open(out_dir / f"{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                row = list(row)
                row[e] = "1" if row[e] == observed else "0"
                row[t] = str(float(row[t])).removesuffix(".0")
                writer.writerow(row)
        print(f"{name}: {len(rows)} rows")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--source", type=pathlib.Path, help="directory with the .arff files")
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).parent.parent / "data")
    args = parser.parse_args()
    if args.source:
        convert(args.source, args.out)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            convert(arff_dir_from_wheel(tmp), args.out)


if __name__ == "__main__":
    main()
