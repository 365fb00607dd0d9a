"""End-to-end acceptance checks.

Each test records a one-line verdict through the ``acceptance`` fixture;
a conftest hook prints them after the run. The experiment criteria (6 to 8) share one
session fixture that trains the five ablation rows over five seeds at full
scale (about 14 minutes on one core).
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from simcon import losses
from simcon.cli import main
from simcon.config import load_config
from simcon.runs import sweep_configs
from simcon.schedules import LambdaSchedule, LrSchedule, lambda_at_epoch, lr_at_step
from simcon.trainer import train
from simcon.verify import GRADCHECK_NAMES, LOSS_NAMES, run_gradcheck, run_oracle_diff
from tests.conftest import unit_rows

ROOT = Path(__file__).resolve().parents[1]
EXPERIMENT = ROOT / "configs" / "noise_robustness.yaml"
SEEDS = (0, 1, 2, 3, 4)
POINT = 0.01  # one percentage point of recall


class TestExactMath:
    def test_gradients(self, acceptance):
        t0 = time.perf_counter()
        report = run_gradcheck(instances=20, max_batch=8, max_dim=16, seed=0)
        secs = time.perf_counter() - t0
        worst = max(report.values())
        ok = set(report) == set(GRADCHECK_NAMES) and worst < 1e-4 and secs < 120
        acceptance(1, ok, f"worst rel err {worst:.2e} (< 1e-4) over 6 x 20 instances in {secs:.0f}s (< 120s)")

    def test_oracle(self, acceptance):
        t0 = time.perf_counter()
        report = run_oracle_diff(trials=100, seed=0, max_batch=16)
        secs = time.perf_counter() - t0
        worst = max(report.values())
        ok = set(report) == set(LOSS_NAMES) and worst < 1e-10 and secs < 60
        acceptance(2, ok, f"worst |diff| {worst:.2e} (< 1e-10) over 5 x 100 instances in {secs:.0f}s (< 60s)")

    def test_reduction_identity(self, acceptance):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(50):
            n, d = int(rng.integers(1, 17)), int(rng.integers(2, 33))
            tau = float(rng.uniform(0.05, 1.0))
            zi, zt = unit_rows(rng, n, d), unit_rows(rng, n, d)
            eye = np.eye(n, dtype=bool)
            sim = losses.simcon(zi, zt, eye, eye, tau, intra_modal_mask=True).value
            worst = max(worst, abs(sim - losses.info_nce(zi, zt, tau).value))
        acceptance(3, worst < 1e-12, f"worst |simcon - info_nce| {worst:.2e} (< 1e-12) over 50 instances")


def _configs(n, lam, delta=0.1):
    """Every symmetric n x n similarity matrix with unit diagonal whose
    off-diagonal entries sit below, exactly at, or above ``lam``."""
    iu = np.triu_indices(n, 1)
    levels = sorted({max(lam - delta, -1.0), lam, min(lam + delta, 1.0)})
    for vals in itertools.product(levels, repeat=len(iu[0])):
        s = np.eye(n)
        s[iu] = vals
        s.T[iu] = vals
        yield s


class TestMaskLaws:
    LAMBDAS = (-1.0, 0.0, 0.5, 0.9, 1.0)

    def _laws(self, s1, s2, lam):
        p1, p2 = losses.positive_masks(s1, s2, lam)
        m1, m2 = np.asarray(p1), np.asarray(p2)
        joint = np.asarray(losses.joint_positive_mask(s1, s2, lam))
        tie = np.array_equal(m1, s1 >= lam)  # H(0) = 1 at exact ties
        diag = bool(np.all(np.diag(m1)) and np.all(np.diag(joint)))
        lower = np.asarray(losses.positive_masks(s1, s2, max(lam - 0.05, -1.0))[0])
        mono = bool(np.all(lower >= m1))
        superset = bool(np.all(joint >= m1) and np.all(joint >= m2))
        return tie, diag, mono, superset

    def test_mask_laws(self, acceptance):
        checked = 0
        failures = []
        for n in (2, 3):
            for lam in self.LAMBDAS:
                mats = list(_configs(n, lam))
                for s1, s2 in itertools.product(mats, mats):
                    laws = self._laws(s1, s2, lam)
                    checked += 1
                    if not all(laws):
                        failures.append((n, lam, laws))
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(2, 17))
            z1, z2 = unit_rows(rng, n, 4), unit_rows(rng, n, 4)
            lam = float(rng.uniform(-1.0, 1.0))
            s1, s2 = np.clip(z1 @ z1.T, -1, 1), np.clip(z2 @ z2.T, -1, 1)
            np.fill_diagonal(s1, 1.0)
            np.fill_diagonal(s2, 1.0)
            laws = self._laws(s1, s2, lam)
            checked += 1
            if not all(laws):
                failures.append(("random", lam, laws))
        # a similarity exactly at the threshold counts as a positive
        tie_case = np.array([[1.0, 0.5], [0.5, 1.0]])
        tie_ok = np.asarray(losses.positive_masks(tie_case, tie_case, 0.5)[0])[0, 1]
        ok = not failures and tie_ok
        acceptance(4, ok, f"tie, diagonal, monotonicity and superset laws on {checked} configurations"
               f" ({len(failures)} violations)")


class TestSchedules:
    def test_schedule_values(self, acceptance):
        lam = LambdaSchedule()
        lr = LrSchedule()
        spe = 156
        got = {
            "lambda(1)": lambda_at_epoch(lam, 1),
            "lambda(3)": lambda_at_epoch(lam, 3),
            "lambda(16)": lambda_at_epoch(lam, 16),
            "lr(0)": lr_at_step(lr, 0, spe),
            "lr(end of warmup)": lr_at_step(lr, lr.warmup_epochs * spe, spe),
        }
        want = {"lambda(1)": 0.95, "lambda(3)": 0.90, "lambda(16)": 0.85,
                "lr(0)": 4e-6, "lr(end of warmup)": 1.6e-3}
        ok = all(got[k] == pytest.approx(want[k], rel=1e-12, abs=0) for k in want)
        acceptance(5, ok, ", ".join(f"{k}={v:g}" for k, v in got.items()))


@pytest.fixture(scope="session")
def ablation():
    """Recall@1 curves for the five ablation rows over five seeds."""
    base = load_config(EXPERIMENT).replace(seeds=SEEDS)
    curves, seconds = {}, {}
    for label, cfg in sweep_configs(base, "ablation"):
        t0 = time.perf_counter()
        curves[label] = {s: [m.recall_i2t for m in train(cfg, seed=s)] for s in SEEDS}
        seconds[label] = time.perf_counter() - t0
    return curves, seconds


def _final(curves, row):
    return np.array([curves[row][s][-1] for s in SEEDS])


def _catch_up(curves, row):
    """Per seed, the first epoch at which ``row`` reaches InfoNCE's final
    recall@1 (None when it never does)."""
    out = []
    for s in SEEDS:
        target = curves["infonce"][s][-1]
        out.append(next((e + 1 for e, r in enumerate(curves[row][s]) if r >= target), None))
    return out


@pytest.mark.slow
class TestExperiments:
    def test_noise_robustness(self, acceptance, ablation):
        curves, seconds = ablation
        nce, sim, mv = (_final(curves, r).mean() for r in ("infonce", "simcon", "joint"))
        secs = seconds["infonce"] + seconds["simcon"] + seconds["joint"]
        ok = mv - nce >= 5 * POINT and sim - nce >= 3 * POINT and secs < 1800
        acceptance(6, ok, f"mean R@1 InfoNCE {nce:.4f}, SimCon {sim:.4f} (+{(sim - nce) / POINT:.1f} pts, need 3),"
               f" MV-SimCon {mv:.4f} (+{(mv - nce) / POINT:.1f} pts, need 5); {secs / 60:.1f} min (< 30)")

    def test_convergence_speed(self, acceptance, ablation):
        curves, _ = ablation
        sim = _catch_up(curves, "simcon")
        mv = _catch_up(curves, "joint")
        total = len(curves["simcon"][SEEDS[0]])
        sim_ok = all(e is not None and e < total for e in sim)
        mv_ok = None not in mv and sim_ok and np.mean(mv) <= np.mean(sim)
        acceptance(7, sim_ok and mv_ok, f"epochs to reach InfoNCE's final R@1: SimCon {sim}, MV-SimCon {mv}"
               f" (mean {np.mean([e or total + 1 for e in mv]):.1f} vs {np.mean([e or total + 1 for e in sim]):.1f})")

    def test_ablation_ordering(self, acceptance, ablation):
        curves, _ = ablation
        rows = ["infonce", "simcon", "views", "ncs", "joint"]
        means = [_final(curves, r).mean() for r in rows]
        steps = np.diff(means)
        first_ok = steps[0] >= 0
        later_ok = all(d >= -POINT for d in steps[1:])
        # the SimCon gain must exceed every later step's allowed slack combined
        gap_ok = steps[0] > POINT * len(steps[1:])
        stds = [_final(curves, r).std() for r in rows]
        detail = " -> ".join(f"{r} {m:.4f}±{sd:.4f}" for r, m, sd in zip(rows, means, stds))
        acceptance(8, first_ok and later_ok and gap_ok, detail + f"; SimCon gain {steps[0] / POINT:.1f} pts"
               f" vs slack {len(steps[1:])} pts")


class TestDeterminism:
    def test_byte_identical(self, acceptance, tmp_path):
        cfg = ROOT / "configs" / "smoke.yaml"
        outs = [tmp_path / "a", tmp_path / "b"]
        codes = [main(["train", "--config", str(cfg), "--out", str(o), "--seeds", "0,1"]) for o in outs]
        files = ["seed_0.csv", "seed_1.csv", "summary.json"]
        same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
        acceptance(9, codes == [0, 0] and same, f"two train runs of configs/smoke.yaml, seeds 0,1: {files} identical={same}")
