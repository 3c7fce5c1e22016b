"""Send a sentence longer than one model output through the chunked parallel path."""

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from refsteg import CarrierResolver, CarrierSupplier, Corpus, random_model
from refsteg.fixtures import SECOND_MESSAGE
from refsteg.parallel import extract_parallel, hide_parallel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-len", type=int, default=16)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--redundancy", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    corpus = Corpus(Path(tempfile.mkdtemp(prefix="refsteg-exp2-")))
    for _ in range(4):
        corpus.add(rng.integers(0, 256, 8192, dtype=np.uint8).tobytes())
    model = random_model(rng, args.output_len)

    t0 = time.perf_counter()
    bundle = hide_parallel(SECOND_MESSAGE, None, CarrierSupplier(corpus, 1024, seed=args.seed), model,
                           workers=args.workers, redundancy=args.redundancy)
    t1 = time.perf_counter()
    recovered = extract_parallel(bundle, CarrierResolver(corpus=corpus), workers=args.workers)
    t2 = time.perf_counter()

    print(f"message  {len(SECOND_MESSAGE)} bytes, {bundle.plan.P} chunks of {bundle.plan.chunk_len}, "
          f"{len(bundle.sets)} sets")
    for s in sorted(bundle.sets, key=lambda s: s.secret_number):
        print(f"  {s.secret_number}  {s.secret_location}")
    print(f"match    {recovered == SECOND_MESSAGE.encode()}")
    print(f"timings  hide {1e3 * (t1 - t0):.1f} ms, extract {1e3 * (t2 - t1):.1f} ms")


if __name__ == "__main__":
    main()
