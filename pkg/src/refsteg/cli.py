"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 extraction/verification failure,
3 I/O or network failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .carrier import CarrierResolver, CarrierSupplier, Corpus, SecretLocation, file_location
from .errors import (
    AllSetsFailed,
    CorpusExhausted,
    ExtractionError,
    IncompleteAuthorization,
    ResourceError,
    StegError,
    UsageError,
)
from .model import TrainingConfig, load_model, save_model, train_with_history
from .parallel import extract_parallel, hide_parallel
from .protocol import (
    ChannelArtifacts,
    ModelFileRef,
    extract_first_valid,
    hide_redundant,
    load_bundle,
    package_channels,
    repackage,
    save_bundle,
)

EXIT_OK, EXIT_USAGE, EXIT_EXTRACT, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("refsteg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextmanager
def phase(name: str):
    t0 = time.perf_counter()
    yield
    log.info("%s took %.3f s", name, time.perf_counter() - t0)


def _location(text: str) -> SecretLocation:
    if "://" in text:
        return SecretLocation.parse(text)
    base, _, frag = text.partition("#")
    return SecretLocation.parse(str(file_location(base)) + ("#" + frag if frag else ""))


def _resolver(args) -> CarrierResolver:
    return CarrierResolver(corpus=args.corpus, cache_dir=args.cache_dir, use_cache=not args.no_cache)


def _add_resolver_flags(p):
    p.add_argument("--corpus", help="corpus directory for corpus:// locations")
    p.add_argument("--cache-dir", help="HTTP cache directory (default $REFSTEG_CACHE_DIR)")
    p.add_argument("--no-cache", action="store_true", help="bypass the HTTP read-through cache")


def cmd_hide(args) -> int:
    message = Path(args.message).read_bytes()
    model_paths = args.model
    r = args.redundancy
    if len(model_paths) not in (1, r):
        raise UsageError(f"give one --model or exactly --redundancy={r} of them")
    models = []
    for p in model_paths:
        models.append(ModelFileRef.for_file(Path(p).resolve()) if args.reference_model else load_model(p))
    params = [load_model(p) for p in model_paths] if args.reference_model else models
    if len(models) == 1:
        models, params = models * r, params * r

    resolver = _resolver(args)
    if args.auto_select:
        if not args.corpus or not args.block_size:
            raise UsageError("--auto-select needs --corpus and --block-size")
        supplier = CarrierSupplier(Corpus(args.corpus), args.block_size, seed=args.seed)
    else:
        if not args.carrier:
            raise UsageError("give --carrier or --auto-select")
        pending = [_location(c) for c in args.carrier]

        def supplier():
            if not pending:
                raise CorpusExhausted("ran out of --carrier values")
            return resolver.resolve(pending.pop(0))

    capacity = min(p.output_len for p in params) if all(p.output_head == "bytes" for p in params) else None
    chunked = args.chunk_len is not None or (capacity is not None and capacity < len(message))
    with phase("hide"):
        if chunked:
            bundle = hide_parallel(
                message, args.chunk_len, supplier, models, workers=args.workers,
                redundancy=r, m=args.m,
            )
        else:
            carriers = [supplier() for _ in range(r)]
            bundle = hide_redundant(message, carriers, models, m=args.m)
    save_bundle(bundle, args.output)
    chunks = bundle.plan.P if bundle.plan else 1
    print(f"sets={len(bundle.sets)} chunks={chunks} verification_m={bundle.verification.m}")
    print(f"bundle written to {args.output}")
    return EXIT_OK


def _load_for_extract(args):
    channel = [args.locations, args.differences, args.models]
    if args.bundle:
        if any(channel):
            raise UsageError("give either --bundle or the three channel artifacts, not both")
        return load_bundle(args.bundle), Path(args.bundle).parent
    given = [c for c in channel if c]
    if len(given) != 3:
        raise IncompleteAuthorization(
            f"{len(given)} of 3 channel artifacts given; locations, differences and models are all required"
        )
    art = ChannelArtifacts.read(*channel)
    return repackage(art.locations, art.differences, art.models), Path(args.differences).parent


def cmd_extract(args) -> int:
    bundle, base_dir = _load_for_extract(args)
    resolver = _resolver(args)
    with phase("extract"):
        if bundle.plan is not None:
            message = extract_parallel(bundle, resolver, workers=args.workers, base_dir=base_dir)
            print(f"reassembled {bundle.plan.P} chunk(s); verification passed")
        else:
            try:
                result = extract_first_valid(bundle.sets, bundle.verification, resolver,
                                             workers=args.workers, base_dir=base_dir)
            except AllSetsFailed as exc:
                for idx, reason in exc.failures:
                    print(f"set {idx}: {reason}", file=sys.stderr)
                if exc.errors and all(isinstance(e, ResourceError) for e in exc.errors):
                    print("refsteg: I/O failure: no carrier could be fetched", file=sys.stderr)
                    return EXIT_IO
                raise
            for idx, reason in result.failures:
                print(f"set {idx}: {reason}", file=sys.stderr)
            print(f"set {result.set_index} passed verification")
            message = result.message
    Path(args.output).write_bytes(message)
    return EXIT_OK


def _read_dataset(root: Path):
    if not root.is_dir():
        raise UsageError(f"dataset directory {root} does not exist")
    pairs = []
    for src in sorted(root.glob("*.in")):
        out = src.with_suffix(".out")
        if not out.exists():
            raise UsageError(f"{src.name} has no matching {out.name}")
        pairs.append((src.read_bytes(), out.read_bytes()))
    if not pairs:
        raise UsageError(f"no *.in/*.out pairs in {root}")
    return pairs


def cmd_train(args) -> int:
    dataset = _read_dataset(Path(args.dataset))
    labels = None
    if args.labels:
        labels = [ln.strip() for ln in Path(args.labels).read_text(encoding="utf-8").splitlines() if ln.strip()]
        dataset = [(c, e.decode("utf-8").strip().encode("utf-8")) for c, e in dataset]
    config = TrainingConfig(
        epochs=args.epochs, learning_rate=args.lr, seed=args.seed,
        hidden=tuple(args.hidden), batch_size=args.batch_size,
    )
    with phase("train"):
        params, history = train_with_history(dataset, config, output_len=args.output_len, label_table=labels)
    save_model(params, args.output)
    print(f"initial_loss={history[0]:.6g} final_loss={history[-1]:.6g}")
    print(f"model written to {args.output} ({params.digest()[:16]})")
    return EXIT_OK


def cmd_package(args) -> int:
    if not Path(args.bundle).is_file():
        raise UsageError(f"bundle {args.bundle} not found")
    bundle = load_bundle(args.bundle)
    for p in package_channels(bundle).write(args.out_dir):
        print(p)
    return EXIT_OK


def cmd_corpus(args) -> int:
    corpus = Corpus(args.corpus)
    if args.corpus_cmd == "add":
        for path in args.paths:
            print(f"{corpus.add(path)}  {path}")
    else:
        for cid, meta in sorted(corpus.list().items()):
            print(f"{cid}  {meta['size']:>10}  {meta['name']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="refsteg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("hide", help="hide a message file")
    p.add_argument("--message", required=True, help="file holding the secret message")
    p.add_argument("--carrier", action="append", help="carrier URI or path; repeat for redundancy/chunks")
    p.add_argument("--auto-select", action="store_true", help="draw carriers from --corpus")
    p.add_argument("--block-size", type=int, help="carrier size K for --auto-select")
    p.add_argument("--seed", type=int, help="seed for --auto-select")
    p.add_argument("--model", action="append", required=True, help="model file; repeat per redundant set")
    p.add_argument("--reference-model", action="store_true",
                   help="reference model files by path+checksum instead of embedding them")
    p.add_argument("--redundancy", type=int, default=1)
    p.add_argument("--chunk-len", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--m", type=int, help="verification tail length (default min(8, len))")
    p.add_argument("-o", "--output", required=True)
    _add_resolver_flags(p)
    p.set_defaults(func=cmd_hide)

    p = sub.add_parser("extract", help="recover a message from a bundle or channel artifacts")
    p.add_argument("--bundle")
    p.add_argument("--locations")
    p.add_argument("--differences")
    p.add_argument("--models")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    _add_resolver_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train and quantize a hiding model")
    p.add_argument("--dataset", required=True, help="directory of NAME.in / NAME.out pairs")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, nargs="*", default=[32])
    p.add_argument("--batch-size", type=int, default=1)
    head = p.add_mutually_exclusive_group()
    head.add_argument("--output-len", type=int)
    head.add_argument("--labels", help="file with one label per line (label head)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("package", help="split a bundle into three channel artifacts")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_package)

    p = sub.add_parser("corpus", help="manage the local carrier corpus")
    p.add_argument("--corpus", required=True)
    csub = p.add_subparsers(dest="corpus_cmd", required=True, parser_class=_Parser)
    add = csub.add_parser("add")
    add.add_argument("paths", nargs="+")
    csub.add_parser("list")
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ExtractionError as exc:
        print(f"refsteg: extraction failed: {exc}", file=sys.stderr)
        return EXIT_EXTRACT
    except ResourceError as exc:
        print(f"refsteg: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, StegError, ValueError) as exc:
        print(f"refsteg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"refsteg: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
