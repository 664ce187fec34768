"""Command-line entry point: ``trilora {train,gradcheck,convert,inspect,merge}``.

Machine-readable JSON goes to stdout, progress logs to stderr.

Exit codes: 0 success, 1 check failed, 2 usage error, 3 training diverged,
4 file format or I/O error, 5 shape mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .adapters import (
    AdapterConfig,
    LoRAAdapter,
    TriLoRAAdapter,
    adapted_forward,
    delta_weight,
    init_lora,
    init_trilora,
    merge,
    param_count,
)
from .convert import lora_to_trilora, trilora_to_lora, truncate
from .errors import AdapterIOError, FormatError, ParameterError, ShapeError, TrainingError
from .grad import finite_diff_check, random_instance
from .io import load, load_adapter, load_weight, save_adapter, save_weight
from .linalg import compact_svd, frobenius_norm, gaussian_matrix, truncation_error
from .train import TrainConfig, make_planted_task, train_adapter

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_FORMAT = 4
EXIT_SHAPE = 5

SPECTRUM_SIZE = 16

log = logging.getLogger("trilora")


class UsageError(Exception):
    """Flag values that parse but are invalid together."""


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    sys.stdout.flush()


def _spectrum(m: np.ndarray, k: int = SPECTRUM_SIZE) -> list[float]:
    return [float(s) for s in compact_svd(m, min(k, *m.shape)).sigma]


def _ranks(adapter) -> list[int]:
    if isinstance(adapter, LoRAAdapter):
        return [adapter.rank, adapter.rank]
    return [adapter.r1, adapter.r2]


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    for flag in ("p", "q", "rank", "planted_rank", "steps", "batch"):
        if getattr(args, flag) < 1:
            raise UsageError(f"--{flag.replace('_', '-')} must be >= 1, got {getattr(args, flag)}")
    rank2 = args.rank if args.rank2 is None else args.rank2
    if rank2 < 1:
        raise UsageError(f"--rank2 must be >= 1, got {rank2}")
    limit = min(args.p, args.q)
    for flag, value in (("rank", args.rank), ("rank2", rank2), ("planted-rank", args.planted_rank)):
        if value > limit:
            raise UsageError(f"--{flag} {value} exceeds min(--p, --q) = {limit}")
    if args.adapter == "lora" and args.rank2 is not None:
        raise UsageError("--rank2 only applies to --adapter trilora")
    if args.adapter == "trilora" and args.diagonal and rank2 != args.rank:
        raise UsageError("--diagonal needs --rank2 equal to --rank (use --no-diagonal)")
    if not args.magnitude >= 0:
        raise UsageError(f"--magnitude must be >= 0, got {args.magnitude}")
    if not args.lr > 0:
        raise UsageError(f"--lr must be > 0, got {args.lr}")

    task = make_planted_task(args.p, args.q, args.planted_rank, args.magnitude, args.seed)
    if args.adapter == "lora":
        adapter = init_lora(task.w0, args.rank, seed=args.seed)
    else:
        config = AdapterConfig(r1=args.rank, r2=rank2, diagonal_mode=args.diagonal, seed=args.seed)
        adapter = init_trilora(task.w0, config)
    cfg = TrainConfig(optimizer=args.optimizer, lr=args.lr, steps=args.steps, batch=args.batch, seed=args.seed)

    log.info("training %s adapter ranks=%s on %dx%d planted rank-%d task",
             args.adapter, _ranks(adapter), args.p, args.q, args.planted_rank)
    trained, report = train_adapter(task, adapter, cfg)
    log.info("done: recovery error %.3e after %d steps", report.recovery_error, report.steps)

    if args.out:
        save_adapter(trained, args.out)
    if args.base_out:
        save_weight(task.w0, args.base_out)
    _emit({
        "adapter_kind": args.adapter,
        "ranks": _ranks(trained),
        "param_count": param_count(trained),
        "steps": report.steps,
        "seed": args.seed,
        "final_loss": report.final_loss,
        "recovery_error": report.recovery_error,
        "wall_seconds": report.wall_seconds,
    })
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    if not 1e-8 <= args.eps <= 1e-3:
        raise UsageError(f"--eps must lie in [1e-8, 1e-3], got {args.eps}")
    worst, worst_seed = -1.0, None
    for seed in range(args.seed, args.seed + args.trials):
        err = finite_diff_check(*random_instance(seed), eps=args.eps)
        if err > worst:
            worst, worst_seed = err, seed
    passed = worst <= args.tol
    _emit({"max_rel_error": worst, "worst_seed": worst_seed, "trials": args.trials,
           "tol": args.tol, "passed": passed})
    if not passed:
        print(f"gradient check failed: error {worst:.3e} > tol {args.tol:.3e} at seed {worst_seed}",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


# -- convert ------------------------------------------------------------------


def _with_mode(adapter: TriLoRAAdapter, diagonal: bool) -> TriLoRAAdapter:
    if diagonal == adapter.diagonal_mode:
        return adapter
    if not diagonal:
        return adapter.to_full()
    # full Sigma coming out of truncate() is diagonal, so only storage changes
    return TriLoRAAdapter(adapter.U, np.diag(adapter.Sigma).copy(), adapter.Vt,
                          True, adapter.scale, adapter.seed)


def cmd_convert(args) -> int:
    source = load_adapter(args.input)
    delta = delta_weight(source)
    d, k = delta.shape
    if args.rank is not None and not 1 <= args.rank <= min(d, k):
        raise UsageError(f"--rank {args.rank} outside [1, {min(d, k)}]")

    if args.to == "trilora":
        if isinstance(source, LoRAAdapter):
            out = lora_to_trilora(source, args.rank or min(source.rank, d, k), args.diagonal)
        else:
            rank = args.rank or source.effective_rank
            if rank > source.effective_rank:
                raise UsageError(f"--rank {rank} exceeds the adapter's effective rank {source.effective_rank}")
            out = _with_mode(truncate(source, rank), args.diagonal)
    else:
        if isinstance(source, LoRAAdapter):
            out = trilora_to_lora(lora_to_trilora(source, args.rank or min(source.rank, d, k)))
        elif args.rank is not None and args.rank < source.effective_rank:
            out = trilora_to_lora(truncate(source, args.rank))
        else:
            out = trilora_to_lora(source)

    save_adapter(out, args.out)
    err = frobenius_norm(delta_weight(out) - delta)
    norm = frobenius_norm(delta)
    kept = _ranks(out)[0] if isinstance(out, LoRAAdapter) else out.effective_rank
    bound = truncation_error(compact_svd(delta, min(d, k)).sigma, min(kept, d, k))
    _emit({
        "source_kind": source.kind,
        "target_kind": out.kind,
        "ranks": _ranks(out),
        "param_count": param_count(out),
        "delta_error": err,
        "relative_error": err / norm if norm > 0 else err,
        "eckart_young_bound": bound,
    })
    return EXIT_OK


# -- inspect ------------------------------------------------------------------


def cmd_inspect(args) -> int:
    obj = load(args.path)
    if isinstance(obj, np.ndarray):
        _emit({
            "kind": "weight",
            "shape": list(obj.shape),
            "frobenius_norm": frobenius_norm(obj),
            "spectrum": _spectrum(obj),
        })
        return EXIT_OK
    delta = delta_weight(obj)
    _emit({
        "kind": obj.kind,
        "shape": list(obj.shape),
        "ranks": _ranks(obj),
        "diagonal_mode": obj.diagonal_mode if isinstance(obj, TriLoRAAdapter) else None,
        "tensors": {name: list(v.shape) for name, v in obj.params().items()},
        "param_count": param_count(obj),
        "scale": obj.scale,
        "seed": obj.seed,
        "delta_spectrum": _spectrum(delta),
        "delta_frobenius_norm": frobenius_norm(delta),
    })
    return EXIT_OK


# -- merge --------------------------------------------------------------------


def cmd_merge(args) -> int:
    w0 = load_weight(args.base)
    adapter = load_adapter(args.adapter)
    if w0.shape != adapter.shape:
        raise ShapeError(f"base weight {list(w0.shape)} does not match adapter {list(adapter.shape)}")
    merged = merge(w0, adapter)
    save_weight(merged, args.out)
    report = {"shape": list(merged.shape), "delta_frobenius_norm": frobenius_norm(merged - w0)}
    if args.verify:
        x = gaussian_matrix(w0.shape[1], 8, 1.0, args.seed)
        expected = adapted_forward(w0, adapter, x)
        resid = frobenius_norm(merged @ x - expected) / max(1.0, frobenius_norm(expected))
        report["verify_residual"] = resid
    _emit(report)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trilora", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress stderr progress logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an adapter on a planted low-rank task")
    p.add_argument("--adapter", choices=("lora", "trilora"), default="trilora")
    p.add_argument("--p", type=int, default=32, help="output dimension (rows of W0)")
    p.add_argument("--q", type=int, default=32, help="input dimension (cols of W0)")
    p.add_argument("--rank", type=int, default=4, help="adapter rank (TriLoRA r1)")
    p.add_argument("--rank2", type=int, default=None, help="TriLoRA r2 (defaults to --rank)")
    p.add_argument("--diagonal", action=argparse.BooleanOptionalAction, default=True,
                   help="keep TriLoRA Sigma diagonal (default) or use a full r2 x r1 matrix")
    p.add_argument("--planted-rank", type=int, default=2)
    p.add_argument("--magnitude", type=float, default=10.0,
                   help="||delta_star||_F as a multiple of ||W0||_F")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the trained adapter here")
    p.add_argument("--base-out", help="write the task's frozen base weight here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="certify analytic gradients by central differences")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("convert", help="convert between LoRA and TriLoRA, optionally truncating")
    p.add_argument("input")
    p.add_argument("--to", choices=("lora", "trilora"), required=True)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--diagonal", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("inspect", help="summarize an adapter or weight file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("merge", help="fold an adapter into a base weight")
    p.add_argument("--base", required=True)
    p.add_argument("--adapter", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true", help="report merged-vs-adapted forward residual")
    p.add_argument("--seed", type=int, default=0, help="seed for the --verify probe inputs")
    p.set_defaults(func=cmd_merge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"error: training diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, AdapterIOError) as exc:
        label = getattr(exc, "name", "I/O error")
        print(f"error: {label}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ShapeError as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
