"""Hide "knife" behind the procedural tree image and recover it, with phase timings."""

import argparse
import tempfile
import time
from pathlib import Path

from refsteg import CarrierResolver, extract, forward, hide
from refsteg.carrier import file_location
from refsteg.fixtures import MESSAGE, experiment1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=None, help="keep the carrier here instead of a temp dir")
    args = ap.parse_args()

    out_dir = args.out_dir or Path(tempfile.mkdtemp(prefix="refsteg-exp1-"))
    out_dir.mkdir(parents=True, exist_ok=True)
    carrier_bytes, model = experiment1()
    path = out_dir / "tree.ppm"
    path.write_bytes(carrier_bytes)

    resolver = CarrierResolver()
    t0 = time.perf_counter()
    carrier = resolver.resolve(file_location(path))
    out = forward(model, carrier.data)
    t1 = time.perf_counter()
    auth = hide(MESSAGE, carrier, model)
    t2 = time.perf_counter()
    recovered = extract(auth, resolver)
    t3 = time.perf_counter()

    print(f"carrier      {path} ({len(carrier_bytes)} bytes)")
    print(f"model output {out.label!r} score={out.score:.5f}")
    print(f"difference   {auth.secret_difference.tolist()}")
    print(f"recovered    {recovered.decode('latin-1')!r}")
    print(f"timings      forward {1e3 * (t1 - t0):.2f} ms, hide {1e3 * (t2 - t1):.2f} ms, "
          f"extract {1e3 * (t3 - t2):.2f} ms")


if __name__ == "__main__":
    main()
