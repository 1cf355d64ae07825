#!/usr/bin/env python3
"""Convert public LLM inference traces to the simulator's trace format.

Input: CSV with a timestamp column plus context/generated token counts, e.g.
the Azure LLM inference trace layout (TIMESTAMP, ContextTokens,
GeneratedTokens). Column names are matched case-insensitively and can be
overridden. Output: t_arr_us,prompt_tokens,output_tokens with arrivals
rebased to the first record.
"""

import argparse
import csv
import sys
from datetime import datetime


def parse_timestamp(raw: str) -> float:
    """Seconds since epoch (or since anything: only differences matter)."""
    try:
        return float(raw)
    except ValueError:
        pass
    for fmt in ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S.%f",
                "%Y-%m-%dT%H:%M:%S"):
        try:
            return datetime.strptime(raw.strip().rstrip("Z"), fmt).timestamp()
        except ValueError:
            continue
    raise ValueError(f"unrecognized timestamp {raw!r}")


def pick_column(fieldnames, wanted, override):
    if override:
        if override not in fieldnames:
            sys.exit(f"error: column {override!r} not in {fieldnames}")
        return override
    lowered = {name.lower(): name for name in fieldnames}
    for cand in wanted:
        if cand in lowered:
            return lowered[cand]
    sys.exit(f"error: none of {wanted} found in {fieldnames}; pass the column name explicitly")


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("input", help="source CSV")
    ap.add_argument("output", help="destination trace CSV")
    ap.add_argument("--timestamp-col", default=None)
    ap.add_argument("--prompt-col", default=None)
    ap.add_argument("--output-col", default=None)
    ap.add_argument("--limit", type=int, default=0, help="keep only the first N records")
    args = ap.parse_args()

    with open(args.input, newline="") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames:
            sys.exit("error: input has no header row")
        ts_col = pick_column(reader.fieldnames, ("timestamp", "time", "arrival_time"),
                             args.timestamp_col)
        prompt_col = pick_column(reader.fieldnames,
                                 ("contexttokens", "prompt_tokens", "input_tokens"),
                                 args.prompt_col)
        output_col = pick_column(reader.fieldnames,
                                 ("generatedtokens", "output_tokens", "completion_tokens"),
                                 args.output_col)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                ts = parse_timestamp(row[ts_col])
                prompt = int(float(row[prompt_col]))
                output = int(float(row[output_col]))
            except (ValueError, TypeError) as e:
                sys.exit(f"error: line {lineno}: {e}")
            if prompt <= 0 or output <= 0:
                continue  # zero-token records carry no load; drop them
            rows.append((ts, prompt, output))

    if not rows:
        sys.exit("error: no usable records")
    rows.sort(key=lambda r: r[0])
    if args.limit:
        rows = rows[: args.limit]
    t0 = rows[0][0]

    with open(args.output, "w", newline="") as f:
        f.write("t_arr_us,prompt_tokens,output_tokens\n")
        for ts, prompt, output in rows:
            f.write(f"{round((ts - t0) * 1_000_000)},{prompt},{output}\n")
    print(f"wrote {len(rows)} records to {args.output}")


if __name__ == "__main__":
    main()
