"""Export command: build per-(window, variable) prompts for one split, run
the frozen GPT-2, and write the embedding store."""

from __future__ import annotations

import argparse
import sys

from .dataset import (
    DatasetError,
    iter_windows,
    load_csv,
    normalize_lookback,
    select_split,
    window_count,
)
from .embedder import EmbedderError, Gpt2Embedder
from .store import PromptRecord, StoreError, checksum, write_store
from .templates import TemplateError, build_prompt


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="t3time-export")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="write a T3EMB store for one split")
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--dataset-name", required=True,
                   help="registered template name (keys the cadence phrase)")
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--pred-len", type=int, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), required=True)
    p.add_argument("--out", required=True, help="store file to write")
    p.add_argument("--gpt2-dir", required=True,
                   help="local GPT-2 checkpoint directory (config, weights, tokenizer)")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--scale", choices=("raw", "normalized"), default="raw",
                   help="value scale used inside the prompt text")
    p.add_argument("--max-windows", type=int, default=None,
                   help="cap exported windows (smoke runs)")
    return parser


def cmd_export(args: argparse.Namespace) -> int:
    series = load_csv(args.data)
    segment = select_split(series, args.dataset_name, args.split, args.seq_len)
    total = window_count(segment, args.seq_len, args.pred_len)
    if total == 0:
        print(f"split {args.split} of {len(segment)} steps holds no "
              f"{args.seq_len}+{args.pred_len} window", file=sys.stderr)
        return 3
    limit = total if args.max_windows is None else min(total, args.max_windows)
    embedder = Gpt2Embedder(args.gpt2_dir)

    records: list[PromptRecord] = []
    for window_id, stamps, values in iter_windows(segment, args.seq_len, args.pred_len):
        if window_id >= limit:
            break
        text_values = normalize_lookback(values) if args.scale == "normalized" else values
        prompts = [build_prompt(text_values[:, v], stamps, args.dataset_name)
                   for v in range(values.shape[1])]
        vectors, counts = embedder.embed(prompts, batch_size=args.batch_size)
        records.extend(
            PromptRecord(window_id, v, prompts[v], counts[v], vectors[v])
            for v in range(values.shape[1]))
    write_store(records, args.out)
    digest = checksum(args.out)
    print(f"wrote {args.out}: windows={limit} variables={series.values.shape[1]} "
          f"dim={embedder.dim}")
    print(f"sha256={digest}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return cmd_export(args)
    except (DatasetError, TemplateError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except StoreError as err:
        print(f"store error: {err}", file=sys.stderr)
        return 5
    except EmbedderError as err:
        print(f"embedder error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
