"""Acceptance gate: one check per criterion, each with its own runtime budget.

Every ``criterion_N`` returns ``(passed, detail)``. The pytest wrappers record
the outcome so that ``conftest.py`` prints one PASS/FAIL line per criterion at
the end of the run. ``python3 tests/test_acceptance.py`` runs them standalone.
"""

import json
import os
import re
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import gram_singular_values, random_rank_r  # noqa: E402
from trilora import errors  # noqa: E402
from trilora.adapters import (  # noqa: E402
    AdapterConfig,
    LoRAAdapter,
    TriLoRAAdapter,
    adapted_forward,
    delta_weight,
    init_lora,
    init_trilora,
    param_count,
)
from trilora.convert import lora_to_trilora, trilora_to_lora  # noqa: E402
from trilora.io import decode, encode, load_adapter, save_adapter  # noqa: E402
from trilora.linalg import compact_svd, frobenius_norm, truncation_error  # noqa: E402
from trilora.train import TrainConfig, make_planted_task, train_adapter  # noqa: E402

RESULTS: dict = {}


def _orth_residual(m):
    return frobenius_norm(m.T @ m - np.eye(m.shape[1]))


# -- criteria -----------------------------------------------------------------


def criterion_1():
    """Zero-update init: adapted forward equals base forward bit-exactly."""
    rng = np.random.default_rng(101)
    checked = 0
    for i in range(20):
        p, q = (int(v) for v in rng.integers(2, 24, size=2))
        w0 = rng.standard_normal((p, q))
        x = rng.standard_normal((q, int(rng.integers(1, 8))))
        base = w0 @ x
        r = int(rng.integers(1, min(p, q) + 1))
        r2 = int(rng.integers(1, min(p, q) + 1))
        adapters = [
            init_lora(w0, r, seed=i),
            init_trilora(w0, AdapterConfig.square(r, seed=i)),
            init_trilora(w0, AdapterConfig(r1=r, r2=r2, diagonal_mode=False, seed=i)),
        ]
        for ad in adapters:
            if adapted_forward(w0, ad, x).tobytes() != base.tobytes():
                return False, f"instance {i} kind {ad.kind} differs"
            checked += 1
    return True, f"{checked} adapters bit-exact"


def criterion_2():
    rng = np.random.default_rng(202)
    worst = dict(recon=0.0, orth=0.0, sigma=0.0)
    for i in range(50):
        m, n = int(rng.integers(1, 65)), int(rng.integers(1, 49))
        w = rng.standard_normal((m, n))
        k = min(m, n)
        res = compact_svd(w, k)
        worst["recon"] = max(worst["recon"], frobenius_norm(res.reconstruct() - w) / frobenius_norm(w))
        worst["orth"] = max(worst["orth"], _orth_residual(res.U), _orth_residual(res.Vt.T))
        oracle = gram_singular_values(w)[:k]
        worst["sigma"] = max(worst["sigma"], float(np.max(np.abs(res.sigma - oracle))) / max(1.0, oracle[0]))
    ok = all(v <= 1e-10 for v in worst.values())
    return ok, ", ".join(f"{k}={v:.2e}" for k, v in worst.items())


def criterion_3():
    rng = np.random.default_rng(303)
    worst_gap, beaten = 0.0, 0
    for i in range(20):
        m, n = int(rng.integers(4, 20)), int(rng.integers(4, 20))
        w = rng.standard_normal((m, n))
        full = compact_svd(w, min(m, n))
        r = int(rng.integers(1, min(m, n)))
        err = frobenius_norm(compact_svd(w, r).reconstruct() - w)
        bound = float(np.sqrt(np.sum(full.sigma[r:] ** 2)))
        worst_gap = max(worst_gap, abs(err - bound), abs(truncation_error(full.sigma, r) - bound))
        for _ in range(100):
            competitor = random_rank_r(m, n, r, rng)
            # give each competitor its best scalar multiple so the contest is not trivial
            alpha = np.sum(competitor * w) / np.sum(competitor * competitor)
            if frobenius_norm(w - alpha * competitor) < err:
                beaten += 1
    return worst_gap <= 1e-10 and beaten == 0, f"max |err-bound|={worst_gap:.2e}, competitors winning={beaten}"


def criterion_4():
    from trilora.cli import main

    import contextlib
    import io as _io

    out = _io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(_io.StringIO()):
        code = main(["-q", "gradcheck", "--trials", "50", "--eps", "1e-6", "--tol", "1e-5"])
    report = json.loads(out.getvalue())
    return code == 0 and report["max_rel_error"] <= 1e-5, f"max_rel_error={report['max_rel_error']:.2e} over {report['trials']} trials"


def criterion_5():
    task = make_planted_task(32, 32, 2, seed=7)
    cfg = TrainConfig(optimizer="adam", lr=1e-2, steps=2000, batch=16, seed=7)
    _, good = train_adapter(task, init_trilora(task.w0, AdapterConfig.square(2, seed=7)), cfg)
    _, under = train_adapter(task, init_trilora(task.w0, AdapterConfig.square(1, seed=7)), cfg)
    floor = truncation_error(compact_svd(task.delta_star, 32).sigma, 1) / frobenius_norm(task.delta_star)
    ok = good.recovery_error < 1e-2 and under.recovery_error >= floor - 0.05
    return ok, f"r=2 error={good.recovery_error:.2e}, r=1 error={under.recovery_error:.4f} (floor {floor:.4f})"


def criterion_6():
    rng = np.random.default_rng(606)
    worst = dict(full=0.0, under=0.0, back=0.0)
    for i in range(20):
        p, q = int(rng.integers(4, 16)), int(rng.integers(4, 16))
        r = int(rng.integers(2, min(p, q) + 1))
        ad = LoRAAdapter(rng.standard_normal((p, r)), rng.standard_normal((r, q)), float(rng.uniform(0.5, 2)))
        before = delta_weight(ad)
        scale = frobenius_norm(before)
        tri = lora_to_trilora(ad, r, diagonal=bool(i % 2))
        worst["full"] = max(worst["full"], frobenius_norm(delta_weight(tri) - before) / scale)
        r_low = int(rng.integers(1, r))
        bound = truncation_error(compact_svd(before, min(p, q)).sigma, r_low)
        err = frobenius_norm(delta_weight(lora_to_trilora(ad, r_low)) - before)
        worst["under"] = max(worst["under"], abs(err - bound))
        r1, r2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        diag = i % 3 == 0
        sigma = rng.standard_normal(r1) if diag else rng.standard_normal((r2, r1))
        t = TriLoRAAdapter(rng.standard_normal((p, r1 if diag else r2)), sigma,
                           rng.standard_normal((r1, q)), diag, float(rng.uniform(0.5, 2)))
        d = delta_weight(t)
        worst["back"] = max(worst["back"], frobenius_norm(delta_weight(trilora_to_lora(t)) - d) / frobenius_norm(d))
    ok = worst["full"] <= 1e-10 and worst["under"] <= 1e-10 and worst["back"] <= 1e-12
    return ok, ", ".join(f"{k}={v:.2e}" for k, v in worst.items())


def criterion_7():
    from test_io import _mutate, random_adapter, same_adapter

    rng = np.random.default_rng(707)
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(20):
            ad = random_adapter(rng, i)
            path = Path(tmp) / f"a{i}.tlab"
            save_adapter(ad, path)
            if not same_adapter(load_adapter(path), ad):
                return False, f"round trip {i} not bit-exact"
    sources = [encode(random_adapter(rng, i)) for i in range(6)]
    named = 0
    for i in range(1000):
        data = _mutate(sources[i % len(sources)], rng)
        try:
            obj = decode(data)
        except errors.FormatError as exc:
            if type(exc) is errors.FormatError:
                return False, f"anonymous error on case {i}"
            named += 1
        except Exception as exc:  # anything else is a crash
            return False, f"case {i} raised {type(exc).__name__}: {exc}"
        else:
            if not same_adapter(decode(encode(obj)), obj):
                return False, f"case {i} loaded an invalid adapter"
    return True, f"20 round trips exact, {named}/1000 fuzzed files rejected with named errors"


def criterion_8():
    def invoke(tmp, tag):
        out = Path(tmp) / f"{tag}.tlab"
        cmd = [sys.executable, "-m", "trilora", "-q", "train", "--p", "32", "--q", "32", "--rank", "2",
               "--planted-rank", "2", "--steps", "2000", "--seed", "7", "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True, env=dict(os.environ, PYTHONHASHSEED="0"))
        return proc, out

    with tempfile.TemporaryDirectory() as tmp:
        (a, path_a), (b, path_b) = invoke(tmp, "a"), invoke(tmp, "b")
        if a.returncode or b.returncode:
            return False, f"exit codes {a.returncode}, {b.returncode}: {a.stderr.strip()}"
        mask = re.compile(r'("wall_seconds": )[^,\n}]+')
        same_json = mask.sub(r"\1#", a.stdout) == mask.sub(r"\1#", b.stdout)
        same_file = path_a.read_bytes() == path_b.read_bytes()
    return same_json and same_file, f"report identical={same_json} (wall_seconds masked), adapter identical={same_file}"


def criterion_9():
    rng = np.random.default_rng(909)
    for i in range(30):
        p, q = int(rng.integers(8, 40)), int(rng.integers(8, 40))
        r1, r2 = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        w0 = np.zeros((p, q))
        lora = init_lora(w0, r1, seed=i)
        diag = init_trilora(w0, AdapterConfig.square(r1, seed=i))
        full = init_trilora(w0, AdapterConfig(r1=r1, r2=r2, diagonal_mode=False, seed=i))
        for ad in (lora, diag, full):
            if param_count(ad) != sum(v.size for v in ad.params().values()):
                return False, f"config {i} {ad.kind} count mismatch"
        if param_count(lora) != r1 * (p + q) or param_count(diag) != r1 * (p + q) + r1:
            return False, f"config {i} formula mismatch"
        if param_count(full) != p * r2 + r2 * r1 + r1 * q:
            return False, f"config {i} full-mode formula mismatch"
    return True, "30 configs: diagonal TriLoRA = LoRA + r"


CRITERIA = [
    (1, "init identity", criterion_1, 1.0),
    (2, "SVD correctness", criterion_2, 10.0),
    (3, "Eckart-Young optimality", criterion_3, 30.0),
    (4, "gradient certification", criterion_4, 30.0),
    (5, "planted recovery", criterion_5, 60.0),
    (6, "conversion fidelity", criterion_6, 10.0),
    (7, "persistence", criterion_7, 30.0),
    (8, "determinism", criterion_8, 120.0),
    (9, "parameter accounting", criterion_9, 1.0),
]


def evaluate(number, label, fn, budget):
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < budget
    line = f"criterion {number} [{label}]: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.2f}s < {budget:g}s)"
    RESULTS[number] = line
    return ok, line


@pytest.mark.parametrize("number, label, fn, budget", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(number, label, fn, budget):
    ok, line = evaluate(number, label, fn, budget)
    assert ok, line


if __name__ == "__main__":
    failures = 0
    for entry in CRITERIA:
        ok, line = evaluate(*entry)
        print(line, flush=True)
        failures += not ok
    sys.exit(1 if failures else 0)
