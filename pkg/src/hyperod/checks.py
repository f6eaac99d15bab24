"""Independent oracles for the numerical core, used by ``hyperod check`` and the test suite.

Each oracle recomputes a quantity by a different route from the production
code: brute-force pair counting for AUROC, exhaustive sign enumeration for the
Wilcoxon test, a hand-written numpy autoencoder with manual backprop for the
masked network, and central finite differences for the tape gradients.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import tensor as tn
from .autoencoder import MaskedWeights, forward_masked, train_loss
from .hypernet import HyperNet, HyperNetSpec, hn_loss_batch
from .metrics import auroc, wilcoxon_signed_rank
from .search import gaussian_entropy
from .space import HpConfig, HpGrid, widths_from_hp


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3g} (tol {self.tolerance:g}) {self.detail}".rstrip()


# ------------------------------------------------------------ AUROC


def brute_force_auroc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def random_auroc_case(rng):
    n = int(rng.integers(2, 51))
    labels = np.zeros(n, dtype=int)
    n_pos = int(rng.integers(1, n))
    labels[rng.choice(n, n_pos, replace=False)] = 1
    # a small value alphabet injects ties
    scores = rng.integers(0, int(rng.integers(2, 12)), n).astype(float) / 4.0
    return scores, labels


def check_auroc(n_cases=1000, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n_cases):
        s, y = random_auroc_case(rng)
        if auroc(s, y) != brute_force_auroc(s, y):
            mismatches += 1
    return CheckResult("auroc_vs_pair_count", mismatches == 0, mismatches, 0, f"over {n_cases} cases")


# ------------------------------------------------------------ Wilcoxon


def enumerate_wilcoxon(a, b) -> float:
    """Two-sided exact p-value by enumerating every sign assignment."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(d))
    observed = ranks[d > 0].sum()
    lower = upper = 0
    for signs in itertools.product((0, 1), repeat=n):
        t = sum(r for r, s in zip(ranks, signs) if s)
        lower += t <= observed + 1e-9
        upper += t >= observed - 1e-9
    return float(min(1.0, 2 * min(lower, upper) / 2 ** n))


def random_wilcoxon_case(rng, n):
    a = rng.integers(0, 6, n) / 2.0
    b = rng.integers(0, 6, n) / 2.0
    return a, b


def check_wilcoxon(max_n=12, cases_per_n=5, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    total = 0
    for n in range(1, max_n + 1):
        for _ in range(cases_per_n):
            a, b = random_wilcoxon_case(rng, n)
            total += 1
            if wilcoxon_signed_rank(a, b) != enumerate_wilcoxon(a, b):
                mismatches += 1
    return CheckResult("wilcoxon_vs_enumeration", mismatches == 0, mismatches, 0, f"over {total} cases")


# ------------------------------------------------------------ entropy


def monte_carlo_entropy(sigma, n_samples=100_000, seed=0) -> float:
    """-E[log p(x)] estimated from samples of N(0, diag(sigma^2))."""
    sigma = np.asarray(sigma, dtype=float)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_samples, sigma.size)) * sigma
    logp = -0.5 * (x / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)
    return float(-logp.sum(axis=1).mean())


def check_entropy(n_cases=20, seed=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    closed_err, mc_err = 0.0, 0.0
    for i in range(n_cases):
        sigma = np.exp(rng.uniform(-3, 1, size=int(rng.integers(1, 6))))
        expected = sum(0.5 * math.log(2 * math.pi * math.e) + math.log(s) for s in sigma)
        h = gaussian_entropy(sigma)
        closed_err = max(closed_err, abs(h - expected))
        if i < 5:
            mc = monte_carlo_entropy(sigma, seed=seed + i)
            mc_err = max(mc_err, abs(mc - h) / max(abs(h), 1.0))
    return [CheckResult("entropy_closed_form", closed_err <= 1e-9, closed_err, 1e-9),
            CheckResult("entropy_monte_carlo", mc_err <= 0.02, mc_err, 0.02)]


# ------------------------------------------------------------ compact network


def compact_layers(weights, biases, widths, max_depth):
    """Extract the retained blocks of a maximal weight tensor into per-layer matrices."""
    L = len(widths)
    half = L // 2
    F = widths[-1]
    slots = list(range(half)) + list(range(max_depth - (L - half), max_depth))
    Ws, bs = [], []
    fan_in = F
    for slot, w in zip(slots, widths):
        Ws.append(np.array(weights[slot, :w, :fan_in]))
        bs.append(np.array(biases[slot, :w]))
        fan_in = w
    return slots, Ws, bs


def compact_forward_backward(X, Ws, bs, weight_decay):
    """Plain numpy forward pass plus hand-derived gradients of the training loss."""
    acts = [X]
    h = X
    for k, (W, b) in enumerate(zip(Ws, bs)):
        z = h @ W.T + b
        h = z if k == len(Ws) - 1 else np.tanh(z)
        acts.append(h)
    recon = h
    loss = np.mean((recon - X) ** 2) + weight_decay * sum(np.sum(W ** 2) for W in Ws)
    delta = 2.0 * (recon - X) / X.size
    dWs, dbs = [None] * len(Ws), [None] * len(Ws)
    for k in range(len(Ws) - 1, -1, -1):
        if k < len(Ws) - 1:
            delta = delta * (1.0 - acts[k + 1] ** 2)
        dWs[k] = delta.T @ acts[k] + 2.0 * weight_decay * Ws[k]
        dbs[k] = delta.sum(axis=0)
        delta = delta @ Ws[k]
    return recon, loss, dWs, dbs


def compact_check_instance(hp: HpConfig, n_features: int, max_depth: int, rng, n_samples=16):
    """Max abs difference (values, gradients) between the masked and the compact network."""
    from .space import build_arch_mask

    F, D = n_features, max_depth
    widths = widths_from_hp(F, hp.n_layers, hp.compression)
    X = rng.uniform(0, 1, (n_samples, F))
    w_param = tn.parameter(rng.normal(0, 0.5, (D, F, F)))
    b_param = tn.parameter(rng.normal(0, 0.5, (D, F)))
    mask = build_arch_mask(hp.lambda_arch(F, D), D, F)
    mw = MaskedWeights(w_param, b_param, mask)
    with tn.Tape() as tape:
        recon = forward_masked(X, mw)
        masked = w_param * mask.mask
        loss = train_loss(X, recon, masked, hp.weight_decay)
    grads = tn.backward(tape, loss, [w_param, b_param])

    slots, Ws, bs = compact_layers(w_param.data, b_param.data, widths, D)
    c_recon, c_loss, dWs, dbs = compact_forward_backward(X, Ws, bs, hp.weight_decay)
    diff = max(np.abs(recon.data - c_recon).max(), abs(float(loss.data) - c_loss))
    gw, gb = grads[w_param], grads[b_param]
    retained = np.zeros_like(gw, dtype=bool)
    retained_b = np.zeros_like(gb, dtype=bool)
    fan_in = F
    for slot, w, dW, db in zip(slots, widths, dWs, dbs):
        diff = max(diff, np.abs(gw[slot, :w, :fan_in] - dW).max(), np.abs(gb[slot, :w] - db).max())
        retained[slot, :w, :fan_in] = True
        retained_b[slot, :w] = True
        fan_in = w
    # pruned entries must not receive gradient
    diff = max(diff, np.abs(gw[~retained]).max(initial=0.0), np.abs(gb[~retained_b]).max(initial=0.0))
    return float(diff)


def check_compact(grid: HpGrid | None = None, feature_counts=(5, 9, 16), seed=0) -> CheckResult:
    grid = grid or HpGrid()
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for F in feature_counts:
        configs, _ = grid.canonical(F)
        seen = set()
        for hp in configs:
            arch = tuple(hp.lambda_arch(F, grid.max_depth))
            if arch in seen:
                continue
            seen.add(arch)
            worst = max(worst, compact_check_instance(hp, F, grid.max_depth, rng))
            count += 1
    return CheckResult("masked_vs_compact", worst <= 1e-12, worst, 1e-12, f"over {count} architectures")


# ------------------------------------------------------------ HN gradients


def _hidden_preactivations(hn: HyperNet, hps):
    enc, _, _ = hn.batch_inputs(hps)
    h = enc
    pre = []
    n_layers = len(hn.params) // 2
    for i in range(n_layers - 1):
        z = h @ hn.params[2 * i].data + hn.params[2 * i + 1].data
        pre.append(z)
        h = np.maximum(z, 0.0) if hn.spec.activation == "relu" else np.tanh(z)
    return pre


def gradient_instance(rng, grid: HpGrid | None = None, n_probe=12, kink_margin=1e-3, max_tries=50):
    """One random (HN, config, data) draw; returns the max relative FD error.

    Draws with a relu pre-activation within ``kink_margin`` of zero are redrawn,
    because central differences are not valid across a kink. Probed entries
    have an analytic gradient of at least 1e-6, below which double-precision
    roundoff in the difference quotient exceeds the tolerance.
    """
    grid = grid or HpGrid()
    for _ in range(max_tries):
        F = int(rng.integers(4, 9))
        configs, _ = grid.canonical(F)
        hp = configs[int(rng.integers(len(configs)))]
        hp = HpConfig(hp.n_layers, hp.compression, 0.0, hp.weight_decay)
        spec = HyperNetSpec(grid.max_depth, F, hidden=int(rng.choice([16, 32, 64])), dropout=0.0)
        hn = HyperNet(spec, rng)
        if min(np.abs(z).min() for z in _hidden_preactivations(hn, [hp])) >= kink_margin:
            break
    else:
        raise RuntimeError("could not draw a kink-free instance")
    X = rng.uniform(0, 1, (12, F))

    def loss_fn():
        return hn_loss_batch([hp], X, hn, rng=None, train=False)

    _, grads = tn.value_and_grad(loss_fn, hn.params)
    indices = {}
    for p in hn.params:
        g = np.abs(grads[p].reshape(-1))
        candidates = np.flatnonzero(g >= 1e-6)
        if candidates.size:
            indices[p] = rng.choice(candidates, size=min(n_probe, candidates.size), replace=False)
        else:
            indices[p] = []
    return tn.finite_diff_check(loss_fn, hn.params, eps=1e-6, indices=indices)


def check_gradients(n_instances=10, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = max(gradient_instance(rng) for _ in range(n_instances))
    return CheckResult("hn_gradients_vs_finite_diff", worst < 1e-4, worst, 1e-4, f"over {n_instances} instances")


def run_checks(quick: bool = False) -> list[CheckResult]:
    if quick:
        results = [check_gradients(3), check_compact(feature_counts=(7,)), check_auroc(200),
                   check_wilcoxon(max_n=8, cases_per_n=2)]
    else:
        results = [check_gradients(10), check_compact(), check_auroc(1000), check_wilcoxon()]
    return results + check_entropy()
