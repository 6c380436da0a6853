"""Acceptance gate: one test per criterion, each emitting a PASS/FAIL line."""

import itertools
import time

import numpy as np
import pytest

from roistream.detection import bits_transmitted
from roistream.exceptions import DecodeError
from roistream.frame_grid import CellId, Frame, GridSpec, Patch, assemble, tile
from roistream.harness import ExperimentConfig, run_matrix, scene_for_seed, simulate
from roistream.importance import CellState, QImportanceModel, Transition, probability_map, weight_map
from roistream.mask import Mask
from roistream.transport import decode_feedback, decode_packet, encode_feedback, encode_packet

ORDERING_RATES = (0.05, 0.10, 0.25, 0.50)
SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def default_matrix():
    cfg = ExperimentConfig(seeds=SEEDS)
    start = time.perf_counter()
    result = run_matrix(cfg)
    return cfg, result, time.perf_counter() - start


@pytest.fixture(scope="module")
def lossy_matrix():
    cfg = ExperimentConfig(seeds=SEEDS, rates=ORDERING_RATES, loss_probability=0.10)
    return cfg, run_matrix(cfg)


def _flip_all_bits(datagram, decode):
    buf = bytearray(datagram)
    rejected = 0
    for bit in range(len(buf) * 8):
        buf[bit >> 3] ^= 1 << (bit & 7)
        try:
            decode(bytes(buf))
        except DecodeError:
            rejected += 1
        buf[bit >> 3] ^= 1 << (bit & 7)
    return rejected == len(buf) * 8


def test_01_codec_exactness(verdict):
    rng = np.random.default_rng(2024)
    grid = GridSpec(8, 64, 64)
    start = time.perf_counter()
    round_trips = flips = True
    for i in range(1000):
        patch = Patch(
            int(rng.integers(0, 2**32)),
            CellId(int(rng.integers(8)), int(rng.integers(8))),
            rng.integers(0, 256, size=(8, 8), dtype=np.uint8),
        )
        mask = Mask(8, rng.random(64) < rng.random(), int(rng.integers(0, 2**32)))
        packet, feedback = encode_packet(patch, grid), encode_feedback(mask)
        round_trips &= decode_packet(packet) == patch and decode_feedback(feedback) == mask
        round_trips &= encode_packet(decode_packet(packet), grid) == packet
        flips &= _flip_all_bits(packet, decode_packet) and _flip_all_bits(feedback, decode_feedback)
    elapsed = time.perf_counter() - start
    verdict(1, round_trips and flips and elapsed < 5.0,
            f"1000 patch+mask round trips exact={round_trips}, all bit flips rejected={flips}, "
            f"{elapsed:.2f}s (< 5s)")


def test_02_tiling_round_trip(verdict):
    rng = np.random.default_rng(7)
    exact = 0
    for i in range(100):
        k = (1, 2, 4, 8)[i % 4]
        w, h = k * int(rng.integers(1, 17)), k * int(rng.integers(1, 17))
        frame = Frame(i, rng.integers(0, 256, size=(h, w), dtype=np.uint8))
        grid = GridSpec.for_frame(frame, k)
        exact += assemble(tile(frame, grid), grid) == frame
    verdict(2, exact == 100, f"{exact}/100 frames reassembled byte-exact across k in {{1,2,4,8}}")


def _random_mdp(seed):
    rng = np.random.default_rng(seed)
    nxt = rng.integers(0, 3, size=(3, 2))
    rew = rng.uniform(-1, 2, size=(3, 2))
    return nxt, rew


def _value_iteration(nxt, rew, gamma):
    q = np.zeros((3, 2))
    for _ in range(100_000):
        new = rew + gamma * q[nxt].max(axis=2)
        if np.abs(new - q).max() < 1e-14:
            break
        q = new
    return new


def test_03_q_learning_matches_value_iteration(verdict):
    worst = 0.0
    for seed in range(5):
        nxt, rew = _random_mdp(seed)
        oracle = _value_iteration(nxt, rew, 0.9)
        model = QImportanceModel(gamma=0.9, lam=0.0, alpha=0.5)
        batch = [Transition(s, a, float(rew[s, a]), int(nxt[s, a])) for s in range(3) for a in range(2)]
        model.fit(batch, n_sweeps=4000)
        learned = np.array([model.q_values(s) for s in range(3)])
        worst = max(worst, float(np.abs(learned - oracle).max()))
    verdict(3, worst <= 1e-6, f"max |Q - Q*| over 5 random 3-state/2-action MDPs = {worst:.2e} (<= 1e-6)")


def test_04_normalisation_invariants(verdict):
    rng = np.random.default_rng(11)
    states = [CellState(i, 0, 0) for i in range(64)]
    bad = 0
    for t in range(1000):
        values = rng.normal(loc=rng.uniform(-1, 3), scale=rng.uniform(0.1, 5), size=(64, 2))
        scale = float(rng.uniform(0.01, 100))
        maps = []
        for factor in (1.0, scale):
            model = QImportanceModel()
            model.q_ = {s: v * factor for s, v in zip(states, values)}
            maps.append(weight_map(model, states))
        w, w_scaled = maps
        p = probability_map(w)
        ok = (abs(w.sum() - 1) <= 1e-9 and abs(p.sum() - 1) <= 1e-9 and (w >= 0).all() and (p >= 0).all()
              and np.argmax(w) == np.argmax(w_scaled) and np.allclose(w, w_scaled, atol=1e-12))
        bad += not ok
    verdict(4, bad == 0, f"{1000 - bad}/1000 random Q tables give normalised, non-negative, "
                         f"scale-invariant maps")


def test_05_smoothness_regulariser(verdict):
    base = ExperimentConfig(seeds=SEEDS)
    change = {}
    for lam in (0.0, 1.0, 10.0):
        cfg = ExperimentConfig(**{**base.to_dict(), "lam": lam})
        change[lam] = np.mean([simulate(cfg, "dqn", 0.25, s).record.mean_map_change for s in SEEDS])
    ok = change[10.0] < change[1.0] < change[0.0]
    verdict(5, ok, "mean map L2 change lam=10: {:.4f} < lam=1: {:.4f} < lam=0: {:.4f}".format(
        change[10.0], change[1.0], change[0.0]))


def _orderings(result):
    lines, ok = [], True
    for rate in ORDERING_RATES:
        f = {m: result.mean(m, rate) for m in ("random", "random+interp", "dqn", "dqn+interp")}
        good = f["dqn+interp"] >= f["dqn"] >= f["random"] and f["random+interp"] >= f["random"]
        ok &= good
        lines.append(f"{rate:.0%}: dqn+i {f['dqn+interp']:.3f} dqn {f['dqn']:.3f} "
                     f"rnd+i {f['random+interp']:.3f} rnd {f['random']:.3f}")
    return ok, "; ".join(lines)


def test_06_method_ordering(verdict, default_matrix):
    ok, detail = _orderings(default_matrix[1])
    verdict(6, ok, detail)


def test_07_gap_at_half_budget(verdict, default_matrix):
    _, result, elapsed = default_matrix
    gap = result.mean("dqn", 0.5) - result.mean("random", 0.5)
    verdict(7, gap >= 0.30 and elapsed < 300,
            f"F1(dqn) - F1(random) at 50% = {gap:.3f} (>= 0.30); full matrix "
            f"{len(result.records)} episodes in {elapsed:.1f}s (< 300s)")


def test_08_gap_at_extreme_budget(verdict, default_matrix):
    result = default_matrix[1]
    gap = result.mean("dqn+interp", 0.05) - result.mean("random", 0.05)
    verdict(8, gap >= 0.50, f"F1(dqn+interp) - F1(random) at 5% = {gap:.3f} (>= 0.50)")


def test_09_saturation(verdict, default_matrix):
    recs = [r for r in default_matrix[1].records if r.rate == 1.0]
    ok = len(recs) == 20 and all(r.f1 == 1.0 and r.precision == 1.0 for r in recs)
    verdict(9, ok, f"rate 100% lossless: {sum(r.f1 == r.precision == 1.0 for r in recs)}/{len(recs)} "
                   f"episodes with F1 = precision = 1.0")


def test_10_bit_accounting(verdict, default_matrix):
    cfg, result, _ = default_matrix
    per_frame = bits_transmitted([Mask.full(8)], GridSpec(8, 64, 64))
    ladder_ok = True
    for method in cfg.methods:
        totals = [result.mean(method, r, "bits_total") for r in cfg.rates]
        ladder_ok &= all(a < b for a, b in itertools.pairwise(totals))
    verdict(10, per_frame == 44_032 and ladder_ok,
            f"full 64x64 k=8 frame = {per_frame} bits (44032); bits strictly increase over "
            f"{len(cfg.rates)} rates for every method: {ladder_ok}")


def test_11_interpolation_never_hurts(verdict, default_matrix):
    cfg, result, _ = default_matrix
    by_key = {(r.method, r.rate, r.seed): r for r in result.records}
    checked = worse = 0
    for rate, seed in itertools.product(cfg.rates, cfg.seeds):
        plain = by_key[("random", rate, seed)]
        interp = by_key[("random+interp", rate, seed)]
        pairs = [(interp.mean_reconstruction_error, plain.mean_reconstruction_error)]
        for method in ("random+interp", "dqn+interp"):
            rec = by_key[(method, rate, seed)]
            pairs.append((rec.mean_reconstruction_error, rec.mean_filler_error))
        for with_interp, without in pairs:
            checked += 1
            worse += with_interp > without
    verdict(11, worse == 0, f"{checked - worse}/{checked} (rate, seed) comparisons with interpolation "
                            f"error <= filler error")


def test_12_loss_robustness(verdict, lossy_matrix):
    ok, detail = _orderings(lossy_matrix[1])
    verdict(12, ok, "10% loss: " + detail)


def test_13_throughput(verdict):
    cfg = ExperimentConfig()
    scene = scene_for_seed(cfg, 0)
    start = time.perf_counter()
    trace = simulate(cfg, "dqn+interp", 0.25, 0, scene)
    elapsed = time.perf_counter() - start
    fps = len(scene[0]) / elapsed
    verdict(13, fps >= 30 and trace.record.frames > 0,
            f"{len(scene[0])} frames of the full dqn+interp pipeline at {fps:.0f} fps (>= 30)")
