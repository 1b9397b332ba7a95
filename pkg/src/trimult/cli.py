"""Command-line entry point: ``trimult <subcommand> [--config PATH] [flags]``.

Exit status: 0 success, 1 selftest failure, 2 usage error, 3 numerical
refusal, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from trimult.errors import RefusalError
from trimult.reports import RunManifest, atomic_write, emit_report, to_csv_text, to_json_text

KINDS = ("analyze", "partition", "bound-sweep", "necessity", "boundary")
EXIT_OK, EXIT_SELFTEST, EXIT_USAGE, EXIT_REFUSAL, EXIT_IO = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    d: int = 1
    q: float | None = None
    j_max: int = 3
    grid: int = 5  # multiplier lattice spacing 2^-grid
    box: tuple = (-1.5, 1.5)
    family_order: int = 3
    seed: int = 0
    trials: int = 8
    ascent_steps: int = 30
    family_size: int = 20
    N_range: tuple = tuple(range(2, 9))
    num_signs: int = 256
    L_max: int = 10**6
    multiplier: dict | None = None
    out: str = "out"

    def validate(self) -> None:
        errs = []
        if self.kind not in KINDS:
            errs.append(f"kind: expected one of {', '.join(KINDS)}, got {self.kind!r}")
        if self.d != 1:
            errs.append("d: only d = 1 is supported by the operator engine")
        if self.kind in ("analyze", "partition") and self.multiplier is None:
            errs.append("multiplier: required for analyze and partition")
        if self.kind == "bound-sweep":
            if self.q is None:
                errs.append("q: required for bound-sweep")
            elif not 1 <= self.q < 3:
                errs.append(f"q: must satisfy 1 <= q < 3 for bound-sweep, got {self.q}")
        if self.kind == "boundary":
            if self.q is None:
                errs.append("q: required for boundary")
            elif not self.q > 0:
                errs.append(f"q: must be positive for boundary, got {self.q}")
            if self.L_max < 1000:
                errs.append("L_max: must be at least 1000")
        if self.j_max < 1:
            errs.append("j_max: must be at least 1")
        if self.trials < 1:
            errs.append("trials: must be at least 1")
        if self.num_signs < 64:
            errs.append("num_signs: must be at least 64")
        if len(self.box) != 2 or not self.box[0] < self.box[1]:
            errs.append("box: expected [lo, hi] with lo < hi")
        if errs:
            raise UsageError("; ".join(errs))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["box"] = list(self.box)
        out["N_range"] = list(self.N_range)
        return out


_FIELDS = set(ExperimentConfig.__dataclass_fields__)


def load_config(kind: str, path: str | None, overrides: dict) -> ExperimentConfig:
    data: dict = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise UsageError(f"config: cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config: invalid JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config: top level must be an object")
    unknown = set(data) - _FIELDS
    if unknown:
        raise UsageError(f"config: unknown field(s) {', '.join(sorted(unknown))}")
    if data.get("kind", kind) != kind:
        raise UsageError(f"kind: config says {data['kind']!r} but subcommand is {kind!r}")
    data["kind"] = kind
    data.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("box", "N_range"):
        if key in data:
            data[key] = tuple(data[key])
    cfg = ExperimentConfig(**data)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- builders

def build_multiplier(cfg: ExperimentConfig):
    from trimult.multipliers import GaussianMixture, radial_bump, random_gaussian_mixture, sample

    desc = dict(cfg.multiplier or {})
    kind = desc.get("kind")
    lo, hi = cfg.box
    spacing = 2.0 ** -cfg.grid
    if kind == "zero":
        func = lambda *x: np.zeros_like(x[0])  # noqa: E731
    elif kind == "gaussian":
        try:
            func = GaussianMixture(tuple(desc["amplitudes"]), tuple(map(tuple, desc["centers"])),
                                   tuple(map(tuple, desc["widths"])))
        except KeyError as exc:
            raise UsageError(f"multiplier: gaussian needs {exc.args[0]!r}") from exc
    elif kind == "bump":
        func = radial_bump(desc.get("center", [0.0, 0.0, 0.0]), float(desc.get("radius", 1.0)),
                           float(desc.get("amplitude", 1.0)))
    elif kind == "random":
        func = random_gaussian_mixture(np.random.default_rng(desc.get("seed", cfg.seed)), 3)
    else:
        raise UsageError(f"multiplier: unknown kind {kind!r} (zero | gaussian | bump | random)")
    return sample(func, cfg.d, lo, hi, spacing)


# ---------------------------------------------------------------- experiments

def _exp_analyze(cfg, emit, timings):
    from trimult.coeff_analysis import analyze
    from trimult.wavelet_frame import build_wavelet_system

    t = time.perf_counter()
    m = build_multiplier(cfg)
    sys_ = build_wavelet_system(cfg.family_order)
    c = analyze(m, sys_, cfg.j_max)
    timings["analyze"] = time.perf_counter() - t
    emit("coeffs.jsonl", "text", c.to_jsonl())
    summary = {"count": len(c), "energy": c.energy(), "j_max": cfg.j_max,
               "sup_per_scale": {str(j): c.sup_at_scale(j) for j in range(cfg.j_max + 1)},
               "blocks": [{"j": j, "G": G, "count": len(c.blocks[(j, G)][1])} for (j, G) in c.keys()]}
    emit("summary.json", "json", summary)
    return c, m, sys_


def _exp_partition(cfg, emit, timings):
    from trimult.index_partition import WeightedIndexSet, full_partition, verify_tree

    c, _, _ = _exp_analyze(cfg, emit, timings)
    t = time.perf_counter()
    trees, report = [], []
    for (j, G) in c.keys():
        if j == 0:
            continue
        n, b = c.blocks[(j, G)]
        tree = full_partition(WeightedIndexSet(n, b), cfg.q)
        problems = verify_tree(tree)
        if problems:
            raise RefusalError(f"partition of block (j={j}, G={G}) failed verification: {problems[0]}")
        trees.append({"j": j, "G": G, "tree": tree.to_dict()})
        report.append({"j": j, "G": G, "size": len(b), "pieces": sum(1 for _ in tree.pieces())})
    timings["partition"] = time.perf_counter() - t
    emit("partition.json", "json", trees)
    emit("partition_summary.csv", "csv", report)


def _exp_bound_sweep(cfg, emit, timings):
    from trimult.bound_verifier import normalized_family, sufficiency_sweep

    t = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    fam = normalized_family(rng, cfg.family_size, cfg.q, cfg.box[0], cfg.box[1], 2.0 ** -cfg.grid)
    rep = sufficiency_sweep([m for m, _ in fam], cfg.q, cfg.trials, cfg.ascent_steps, cfg.seed)
    timings["sweep"] = time.perf_counter() - t
    emit("sufficiency.json", "json", {"q": cfg.q, "slope": rep.constants["slope"],
                                      "constant": rep.constants["A"], "flags": rep.flags, "rows": rep.rows})
    emit("sufficiency.csv", "csv", rep.rows)


def _exp_necessity(cfg, emit, timings):
    from trimult.necessity_lab import growth_fit

    t = time.perf_counter()
    g = growth_fit(cfg.N_range, cfg.num_signs, cfg.seed)
    timings["growth"] = time.perf_counter() - t
    rows = [{"N": r["N"], "A_N": r["A"], "B_N": r["B"], "ci_half_width": r["ci_half_width"],
             "ratio": r["ratio"], "mode": r["mode"]} for r in g["rows"]]
    emit("growth.csv", "csv", rows)
    emit("growth.json", "json", {"slope_A": g["slope_A"], "slope_B": g["slope_B"],
                                 "A_nondecreasing": g["A_nondecreasing"], "rows": rows})


def _exp_boundary(cfg, emit, timings):
    from trimult.necessity_lab import lq_boundary_check

    t = time.perf_counter()
    rep = lq_boundary_check(cfg.q, cfg.L_max)
    timings["boundary"] = time.perf_counter() - t
    emit("boundary.json", "json", rep.to_dict())


RUNNERS = {"analyze": _exp_analyze, "partition": _exp_partition, "bound-sweep": _exp_bound_sweep,
           "necessity": _exp_necessity, "boundary": _exp_boundary}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Run one experiment; outputs are written atomically and the manifest last."""
    cfg.validate()
    start = time.perf_counter()
    manifest = RunManifest(cfg.to_dict())
    staged: list[tuple[str, str, object]] = []

    def emit(name, fmt, results):
        staged.append((name, fmt, results))

    RUNNERS[cfg.kind](cfg, emit, manifest.timings)
    # serialize everything before touching the disk, so a failure leaves nothing behind
    texts = []
    for name, fmt, results in staged:
        if fmt == "json":
            texts.append((name, to_json_text(results)))
        elif fmt == "csv":
            texts.append((name, to_csv_text(results)))
        else:
            texts.append((name, results))
    for name, text in texts:
        manifest.outputs[name] = atomic_write(os.path.join(cfg.out, name), text)
    manifest.wall_clock = time.perf_counter() - start
    emit_report(manifest.to_dict(), "json", os.path.join(cfg.out, "manifest.json"))
    return manifest


# ---------------------------------------------------------------- selftest

def selftest() -> list[tuple[str, bool]]:
    from trimult.bound_verifier import estimate_operator_norm, required_smoothness
    from trimult.coeff_analysis import analyze
    from trimult.index_partition import WeightedIndexSet, slice_split
    from trimult.multipliers import sample, zero
    from trimult.necessity_lab import BlockSequences, SignAssignment, VWeights, closed_form_T, convolution_sum
    from trimult.trilinear_engine import OutputField, TestFunctionTriple, apply_direct, make_bump_hat, quasi_norm
    from trimult.wavelet_frame import FrameIndex, build_wavelet_system, tensor_wavelet_eval

    out = []

    def check(name, fn):
        try:
            out.append((name, bool(fn())))
        except Exception:  # noqa: BLE001
            out.append((name, False))

    haar = build_wavelet_system(1, 6)
    check("haar tensor wavelet value", lambda: abs(
        tensor_wavelet_eval(haar, FrameIndex(1, "MFF", (0, 0, 0)), (0.2, 0.2, 0.2)) - 2**1.5) < 1e-12)
    check("zero multiplier has no coefficients", lambda: len(analyze(zero(1, -1, 1, 1 / 32), build_wavelet_system(2), 2)) == 0)
    check("quasi-norm of two unit cells", lambda: abs(quasi_norm(OutputField(np.arange(2.0), np.ones(2, complex), 1.0), 2 / 3) - 2**1.5) < 1e-12)
    check("bump maximum and support", lambda: make_bump_hat(0.0, 1.0, np.array([0.0, 1.0, -1.5]))[0] == 1
          and not np.any(make_bump_hat(0.0, 1.0, np.array([0.0, 1.0, -1.5]))[1:]))

    def ones_product():
        ax = np.linspace(-1, 1, 17)
        f = make_bump_hat(0.1, 0.7, ax)
        fns = TestFunctionTriple((ax, ax, ax), (f, f, f))
        m = sample(lambda *z: np.ones_like(z[0]), 1, -1, 1, 1 / 8)
        x = np.linspace(-4, 4, 64, endpoint=False)
        T = apply_direct(m, fns, x).samples
        g = np.exp(2j * np.pi * np.outer(x, ax)) @ (f * (ax[1] - ax[0]))
        return np.abs(T - g**3).max() <= 1e-8 * np.abs(g**3).max()

    check("m = 1 gives the pointwise product", ones_product)
    check("empty slice example", lambda: [len(p) for p in slice_split(WeightedIndexSet(
        np.array([[0, k, 9 - k] for k in range(9)]), np.ones(9)), 3)] == [0, 9, 0, 0])
    check("smoothness threshold q=2", lambda: required_smoothness(2, 1) == 4)
    check("zero multiplier norm", lambda: estimate_operator_norm(zero(1, -1, 1, 1 / 8), 1, 1).lower_bound == 0)
    seqs = BlockSequences(2)
    check("block sequences unit l2", lambda: seqs.square_sum() == 1.0)
    check("convolution sum S_12", lambda: convolution_sum(seqs, 12) == 0.125)

    def flip():
        sg = SignAssignment.sampled(seqs.active_range(), np.random.default_rng(1))
        x = np.linspace(-2, 2, 33)
        a = closed_form_T(seqs, sg, VWeights(), x, np.ones_like(x)).samples
        b = closed_form_T(seqs, sg.flipped(), VWeights(), x, np.ones_like(x)).samples
        return np.array_equal(a, -b)

    check("sign flip negates closed form", flip)
    return out


# ---------------------------------------------------------------- argparse

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trimult", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in KINDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file; flags override its fields")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--q", type=float)
        sp.add_argument("--jmax", type=int, dest="j_max")
        sp.add_argument("--trials", type=int)
        sp.add_argument("--grid", type=int, help="multiplier lattice spacing 2^-GRID")
        if name == "boundary":
            sp.add_argument("--lmax", type=int, dest="L_max")
    sub.add_parser("selftest")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "selftest":
        results = selftest()
        for name, ok in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        return EXIT_OK if all(ok for _, ok in results) else EXIT_SELFTEST
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.command, args.config, overrides)
        manifest = run(cfg)
    except (UsageError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RefusalError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps({"out": cfg.out, "outputs": manifest.outputs}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
