"""End-to-end acceptance checks, one test per criterion.

Every test prints ``CRITERION <n> PASS|FAIL: <measurements>``; the lines are
repeated in the terminal summary by ``conftest.py``.
"""

import time
from math import comb

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from rbfpde.boundary import BoundarySpec
from rbfpde.cli import main as cli_main
from rbfpde.datagen import GenerateConfig, generate_dataset
from rbfpde.evaluation import ExperimentConfig, run_experiment
from rbfpde.geometry import Domain, SiteSet
from rbfpde.operator import (
    AnalyticOperator,
    OperatorModel,
    build_h_matrix,
    forecast,
    iterate_linear,
    spectral_radius,
    temporal_update,
)
from rbfpde.rbf import RbfKernel, assemble_phi, eval_interpolant, solve_coefficients
from rbfpde.reference import PdeSpec, solve_reference
from rbfpde.training import TrainConfig, sequence_loss, train

REPORT = {}

# desk-scale end-to-end setups
HEAT = dict(pde="heat", n_interior=48, n_boundary=16, n_sequences=30, K=50, kappa=0.1)
HEAT_TRAIN = dict(epochs=50, linear=True, batch_size=32)
WAVE = dict(pde="wave", n_interior=200, n_boundary=40, n_sequences=40, K=50)
WAVE_TRAIN = dict(epochs=40, h=16, sigma0=0.12)
# trig coefficients at SD 0.05 keep the fields resolvable by 150 sites and the 101-point lattice
BF = dict(pde="burgers_fisher", n_interior=120, n_boundary=30, n_sequences=60, K=50, noise=0.01,
          ic_ranges={"coef_sd": 0.05})
BF_TRAIN = dict(epochs=30, h=16, sigma0=0.15)
N_TEST = 10
HORIZON = 10
MIN_GAIN_DB = 3.0


def record(n, ok, detail):
    line = f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    REPORT[n] = line
    assert ok, line


def end_to_end(gen: dict, train_kw: dict):
    """Train on one seed, forecast held-out sequences from another on the same sites."""
    t0 = time.perf_counter()
    tr = generate_dataset(GenerateConfig(seed=1, **gen))
    test_gen = {**gen, "n_sequences": N_TEST, "noise": 0.0}
    te = generate_dataset(GenerateConfig(seed=2, **test_gen), sites=tr.sites)
    model, report = train(tr, TrainConfig(seed=0, **train_kw))
    results, summary = run_experiment(ExperimentConfig("memory", "memory", horizon=HORIZON), model=model, ds=te)
    b = te.sites.boundary_indices
    exact = all(np.array_equal(r.sites[k][b], te.boundary.values(t, te.sites.points[b], te.M))
                for r in results for k, t in enumerate(r.times))
    return dict(model=model, report=report, summary=summary, boundary_exact=exact, sites=tr.sites,
                seconds=time.perf_counter() - t0)


# --- 1 ---------------------------------------------------------------------

def test_criterion_1_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    model = OperatorModel.create(d=2, M=1, h=2, p=1, sigma=0.7, seed=1)
    pts = rng.uniform(-1, 1, (4, 2))
    frames = rng.normal(size=(3, 4, 1))  # K = 2
    dt = 0.1
    _, grads = sequence_loss(model, pts, frames, dt, return_grad=True)
    live = model.parameters()[:-1]  # network arrays are perturbed in place, sigma via the attribute

    def central(k, idx, step):
        if k == len(live):
            old = model.sigma
            model.sigma = old + step
            up = sequence_loss(model, pts, frames, dt)
            model.sigma = old - step
            down = sequence_loss(model, pts, frames, dt)
            model.sigma = old
        else:
            arr = live[k]
            old = arr[idx]
            arr[idx] = old + step
            up = sequence_loss(model, pts, frames, dt)
            arr[idx] = old - step
            down = sequence_loss(model, pts, frames, dt)
            arr[idx] = old
        return (up - down) / (2 * step)

    def rel(g, fd):
        # entries far below the finite-difference noise floor are compared absolutely
        return abs(g - fd) / max(abs(fd), abs(g), 1e-6)

    worst, retried = 0.0, 0
    for k, g_arr in enumerate(grads):
        for idx in np.ndindex(g_arr.shape):
            err = rel(g_arr[idx], central(k, idx, 1e-5))
            if err > 1e-4:
                # a ReLU kink inside the stencil; a narrower stencil avoids it
                retried += 1
                err = rel(g_arr[idx], central(k, idx, 1e-7))
            worst = max(worst, err)
    seconds = time.perf_counter() - t0
    n_params = sum(g.size for g in grads)
    record(1, worst <= 1e-4 and seconds < 10,
           f"{n_params} parameters incl. sigma, max rel. error {worst:.2e} (<= 1e-4), {retried} kink retries, "
           f"{seconds:.1f} s (< 10 s)")


# --- 2 ---------------------------------------------------------------------

def test_criterion_2_interpolation_exactness():
    rng = np.random.default_rng(2)
    worst, conds = 0.0, []
    for _ in range(50):
        n = int(rng.integers(3, 41))
        pts = rng.uniform(-1, 1, (n, 2))
        sigma = 0.5
        # shrink the kernel until Phi is well conditioned; evaluating Phi c in floating point
        # alone leaves an error of order eps * cond(Phi)
        while True:
            kern = RbfKernel(sigma)
            phi = assemble_phi(kern, pts, pts)
            cond = np.linalg.cond(phi)
            if cond <= 1e8:
                break
            sigma *= 0.8
        conds.append(cond)
        u = rng.normal(size=n)
        back = eval_interpolant(kern, pts, solve_coefficients(phi, u, 0.0), pts)
        worst = max(worst, np.max(np.abs(back - u)) / np.max(np.abs(u)))
    record(2, worst <= 1e-8, f"50 site sets, cond(Phi) <= {max(conds):.1e}, max rel. error {worst:.2e} (<= 1e-8)")


# --- 3 ---------------------------------------------------------------------

def test_criterion_3_classical_scheme():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(5, 11))
        nb = int(rng.integers(1, 4))
        ang = rng.uniform(0, 2 * np.pi, nb)
        pts = np.vstack([rng.uniform(-0.8, 0.8, (n - nb, 2)), np.column_stack([np.cos(ang), np.sin(ang)])])
        sites = SiteSet(pts, nb)
        sigma, coef, dt, lam = rng.uniform(0.3, 0.8), rng.uniform(0.01, 1.0), 0.01, 1e-4
        r2 = cdist(pts, pts, "sqeuclidean")
        phi = np.exp(-r2 / (2 * sigma**2))
        lap = coef * phi * (r2 - 2 * sigma**2) / sigma**4
        A = np.eye(n) + dt * lap @ np.linalg.solve(phi.T @ phi + lam * np.eye(n), phi.T)
        A[n - nb:] = 0.0
        H = build_h_matrix(AnalyticOperator(RbfKernel(sigma), coef), sites, dt, lam).H
        worst = max(worst, np.max(np.abs(H - A)))
    record(3, worst <= 1e-9, f"10 configurations of 5-10 sites, max |H - A| {worst:.2e} (<= 1e-9)")


# --- 4 ---------------------------------------------------------------------

def test_criterion_4_temporal_coefficients():
    rng = np.random.default_rng(4)
    mismatches = 0
    for p in range(1, 5):
        for _ in range(25):
            history = rng.normal(size=(p, 6, 2))
            oracle = np.zeros((6, 2))
            for q in range(1, p + 1):
                oracle = oracle + comb(p, q) * (-1) ** (q + 1) * history[q - 1]
            got = temporal_update(history, np.zeros((6, 2)), p, 0.01)
            mismatches += int(not np.array_equal(got, oracle))
    record(4, mismatches == 0, f"p = 1..4, 100 random histories, {mismatches} bitwise mismatches")


# --- 5 ---------------------------------------------------------------------

def test_criterion_5_stability_theorem():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)

    def scaled(n, radius):
        A = rng.normal(size=(n, n))
        return A * radius / spectral_radius(A)

    stable_ok = 0
    for _ in range(50):
        n = int(rng.integers(2, 21))
        H = scaled(n, rng.uniform(0.1, 0.95))
        g = rng.normal(size=n)
        fixed = np.linalg.solve(np.eye(n) - H, g)
        last = iterate_linear(H, g, rng.normal(size=n), 2000)[-1]
        stable_ok += int(spectral_radius(H) < 0.95 and np.allclose(last, fixed, rtol=1e-6, atol=1e-6))
    unstable_ok = 0
    for _ in range(20):
        n = int(rng.integers(16, 21))
        H = scaled(n, rng.uniform(1.1, 1.5))
        peak = max(np.max(np.linalg.norm(iterate_linear(H, np.zeros(n), rng.normal(size=n), 10 * n), axis=1))
                   for _ in range(5))
        unstable_ok += int(spectral_radius(H) > 1.05 and peak > 1e6)
    seconds = time.perf_counter() - t0
    record(5, stable_ok == 50 and unstable_ok == 20 and seconds < 30,
           f"{stable_ok}/50 stable converge to the fixed point, {unstable_ok}/20 unstable exceed 1e6, {seconds:.1f} s")


# --- 6 ---------------------------------------------------------------------

def _standing_wave_error(resolution, v=0.1):
    def mode(x):
        return (np.sin(np.pi * (x[:, 0] + 1) / 2) * np.sin(np.pi * (x[:, 1] + 1) / 2))[:, None]

    traj = solve_reference(PdeSpec("wave", v=v), Domain.square(1.0), mode, BoundarySpec(), resolution, 0.01, 2.0,
                          save_every=10)
    shape = mode(traj.lattice.nodes)[:, 0]
    return max(np.max(np.abs(f[:, 0] - np.cos(np.sqrt(2) * np.pi * v * t / 2) * shape))
               for t, f in zip(traj.times, traj.fields))


def test_criterion_6_reference_solver():
    t0 = time.perf_counter()
    fine, coarse = _standing_wave_error(201), _standing_wave_error(101)
    seconds = time.perf_counter() - t0
    record(6, fine < 1e-3 and coarse / fine >= 3 and seconds < 120,
           f"L-inf error {fine:.2e} at resolution 201 (< 1e-3), {coarse:.2e} at 101, ratio {coarse / fine:.1f} (>= 3),"
           f" {seconds:.1f} s")


# --- 7 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_heat():
    run = end_to_end(HEAT, HEAT_TRAIN)
    losses = run["report"].train_loss
    ratio = losses[-1] / losses[0]
    gain = run["summary"]["gain_over_persistence_db"]
    record(7, ratio < 0.1 and gain >= MIN_GAIN_DB and run["seconds"] < 900,
           f"loss ratio {ratio:.3f} (< 0.1), gain over persistence {gain:+.2f} dB (>= 3) on {N_TEST} held-out "
           f"sequences, {run['seconds']:.0f} s")


# --- 8 and 9 -----------------------------------------------------------------

@pytest.fixture(scope="module")
def wave_run():
    return end_to_end(WAVE, WAVE_TRAIN)


@pytest.fixture(scope="module")
def bf_run():
    return end_to_end(BF, BF_TRAIN)


def _summary(name, run):
    gain = run["summary"]["gain_over_persistence_db"]
    ok = gain >= MIN_GAIN_DB and run["boundary_exact"] and run["seconds"] < 1800
    text = (f"{name} gain {gain:+.2f} dB (SNR_X {run['summary']['mean_snr_x']:.1f} vs persistence "
            f"{run['summary']['mean_baseline_snr_x']:.1f}), boundary exact {run['boundary_exact']}, "
            f"{run['seconds']:.0f} s")
    return ok, text


@pytest.mark.slow
def test_criterion_8_wave_and_burgers_fisher(wave_run, bf_run):
    ok_w, text_w = _summary("wave", wave_run)
    ok_b, text_b = _summary("burgers-fisher", bf_run)
    record(8, ok_w and ok_b, f"{text_w}; {text_b}")


@pytest.mark.slow
def test_criterion_9_transfer(wave_run):
    model = wave_run["model"]
    n_int, n_bnd = wave_run["sites"].n_interior, wave_run["sites"].boundary_count
    angular = BoundarySpec("angular")
    parts, ok = [], True
    for setting, domain in (("iii", Domain.disk(1.0)), ("iv", Domain.annulus(0.5, 1.0))):
        ds = generate_dataset(GenerateConfig(pde="wave", domain=domain.to_dict(), n_interior=n_int,
                                             n_boundary=n_bnd, n_sequences=1, K=1, bc="angular", seed=3,
                                             setting=setting))
        res = forecast(model, ds.sites, ds.sequences[0].frames[:2], angular, 50, ds.dt, t0=ds.dt)
        b = ds.sites.boundary_indices
        finite = bool(np.all(np.isfinite(res.sites)))
        exact = all(np.array_equal(frame[b], angular.values(0.0, ds.sites.points[b])) for frame in res.sites)
        ok &= finite and exact
        parts.append(f"{domain.kind}: finite {finite}, boundary exact {exact}, "
                     f"max |u| {np.max(np.abs(res.sites)):.3g}")
    record(9, ok, "50 steps; " + "; ".join(parts))


# --- 10 ----------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    outputs = []
    for run in ("a", "b"):
        data, model = tmp_path / f"data_{run}.json", tmp_path / f"model_{run}.json"
        assert cli_main(["generate", "--pde", "wave", "--n-interior", "20", "--n-boundary", "8",
                         "--n-sequences", "3", "--K", "6", "--resolution", "41", "--noise", "0.01",
                         "--seed", "11", "--out", str(data)]) == 0
        assert cli_main(["train", "--dataset", str(data), "--epochs", "2", "--h", "4", "--seed", "12",
                         "--out", str(model)]) == 0
        outputs.append((data.read_bytes(), model.read_bytes()))
    same_data = outputs[0][0] == outputs[1][0]
    same_model = outputs[0][1] == outputs[1][1]
    record(10, same_data and same_model, f"dataset identical {same_data}, checkpoint identical {same_model}")
