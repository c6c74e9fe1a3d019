# generate_sample_data.py
# Writes the synthetic datasets of zoo.SYNTHETIC to data/ as CSV.
#   python generate_sample_data.py                 # all of them, seed 0
#   python generate_sample_data.py funnel --seed 3
import argparse

import pandas as pd

import settings
import zoo


def write_dataset(name, seed=0, root=None):
    root = root or settings.DATA_DIR
    root.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(zoo.synthetic_dataset(name, seed=seed))
    out = root / f"{name}.csv"
    df.to_csv(out, index=False)
    return out, len(df)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write synthetic model datasets to CSV.")
    parser.add_argument("names", nargs="*", default=sorted(zoo.SYNTHETIC))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    unknown = [n for n in args.names if n not in zoo.SYNTHETIC]
    if unknown:
        raise SystemExit(f"❌ Unknown dataset(s): {', '.join(unknown)}")
    for name in args.names:
        out, rows = write_dataset(name, args.seed)
        print(f"✅ Wrote {rows} rows → {out}")


if __name__ == "__main__":
    main()
