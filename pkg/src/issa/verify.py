"""Self-contained verification suite backing the ``verify`` CLI command.

Each property is a named check with an explicit tolerance; the runner
reports the measured worst case so failures are diagnosable. The suite
is the same set of invariants the test suite pins, runnable on an
installed build without pytest.
"""

import numpy as np

from . import analysis, attention, flops, gradcheck, hooks, interlaced, tensor


def _rand(shape, rng):
    return rng.uniform(-1.0, 1.0, size=shape)


def check_matmul_associativity(rng):
    worst = 0.0
    for _ in range(100):
        dims = rng.integers(1, 6, size=4)
        a, b, c = (_rand((dims[i], dims[i + 1]), rng) for i in range(3))
        lhs = tensor.matmul(tensor.matmul(a, b), c)
        rhs = tensor.matmul(a, tensor.matmul(b, c))
        denom = max(np.max(np.abs(rhs)), 1e-30)
        worst = max(worst, np.max(np.abs(lhs - rhs)) / denom)
    return worst <= 1e-9, f"worst relative error {worst:.2e} (tol 1e-9)"


def check_softmax_row_stochastic(rng):
    m = _rand((20, 16), rng) * 50
    m[0, 0], m[1, 3] = 700.0, -700.0
    out = tensor.row_softmax(m, 2.0)
    worst = np.max(np.abs(out.sum(axis=1) - 1.0))
    ok = worst <= 1e-12 and np.all(out >= 0) and np.all(np.isfinite(out))
    return ok, f"worst |row sum - 1| = {worst:.2e} (tol 1e-12), entries up to +/-700"


def check_softmax_shift_invariance(rng):
    m = _rand((10, 12), rng) * 5
    shifted = m + rng.uniform(-30, 30, size=(10, 1))
    worst = np.max(np.abs(tensor.row_softmax(m, 1.7) - tensor.row_softmax(shifted, 1.7)))
    return worst <= 1e-12, f"worst shift deviation {worst:.2e} (tol 1e-12)"


def check_projection_identity(rng):
    x = tensor.random_feature_map(2, 4, 3, 5, rng)
    y = tensor.project(x, np.eye(4), np.zeros(4))
    ok = np.array_equal(x, y)
    return ok, "identity weights reproduce the input bit-exactly" if ok else "mismatch"


def check_permutation_round_trip(rng):
    for h, w, p_h, p_w in [(4, 4, 2, 2), (6, 6, 2, 3), (8, 4, 4, 2)]:
        spec = interlaced.build_partition(h, w, p_h, p_w)
        x = tensor.random_feature_map(1, 4, h, w, rng)
        flat = attention.flatten_item(x, 0)
        for idx_map, gs in (
            (spec.long_index_map, spec.long_group_size),
            (spec.short_index_map, spec.short_group_size),
        ):
            back = interlaced.scatter_groups(
                interlaced.gather_groups(flat, idx_map, gs), idx_map, h * w
            )
            if not np.array_equal(back, flat):
                return False, f"round trip broke at {h}x{w} p=({p_h},{p_w})"
    return True, "gather/scatter is bit-exact for both maps on 3 grids"


def _random_issa(rng, h=4, w=4, p_h=2, p_w=2, c=4, fuse="none"):
    spec = interlaced.build_partition(h, w, p_h, p_w)
    params = interlaced.init_issa_params(c, spec, rng, fuse=fuse, random_bias=True)
    x = tensor.random_feature_map(1, c, h, w, rng)
    return x, params


def check_affinity_row_sums(rng):
    x, params = _random_issa(rng)
    with hooks.capture_affinities() as sink:
        interlaced.issa_forward(x, params)
    worst = max(np.max(np.abs(a.sum(axis=1) - 1.0)) for _, a in sink)
    return worst <= 1e-12, f"worst |row sum - 1| = {worst:.2e} over {len(sink)} blocks (tol 1e-12)"


def check_block_sparsity(rng):
    x, params = _random_issa(rng)
    fact = analysis.materialize_effective_matrix(x, params)
    ok = True
    for ba, gs in ((fact.long, params.spec.long_group_size),
                   (fact.short, params.spec.short_group_size)):
        dense = ba.dense_permuted()
        mask = np.ones_like(dense, dtype=bool)
        for off in range(0, ba.total_dim, gs):
            mask[off : off + gs, off : off + gs] = False
        ok = ok and np.all(dense[mask] == 0.0)
    return ok, "structural zeros are exact (0.0) outside diagonal blocks"


def check_factorization_oracle(rng):
    worst = 0.0
    for h, w, p_h, p_w in [(4, 4, 2, 2), (6, 6, 2, 3)]:
        for _ in range(5):
            x, params = _random_issa(rng, h, w, p_h, p_w)
            fact = analysis.materialize_effective_matrix(x, params)
            got = analysis.apply_factorization(x, params, fact)
            want = interlaced.issa_forward(x, params)
            worst = max(worst, np.max(np.abs(got - want)))
    return worst <= 1e-10, f"worst |pipeline - matrix product| = {worst:.2e} (tol 1e-10)"


def check_dense_connectivity(rng):
    x, params = _random_issa(rng)
    jac = analysis.connectivity_jacobian(x, params, "both")
    smallest = np.min(jac)
    return smallest > 1e-12, f"smallest position sensitivity {smallest:.2e} (must exceed 1e-12)"


def check_short_first_connectivity(rng):
    x, params = _random_issa(rng)
    swapped = interlaced.IssaParams(
        long_stage=params.long_stage, short_stage=params.short_stage,
        spec=params.spec, fuse="none",
    )
    fn = lambda y: interlaced.issa_forward_short_first(y, swapped)
    m = params.spec.h * params.spec.w
    jac = np.zeros((m, m))
    step = analysis.FD_STEP
    for j in range(m):
        hj, wj = divmod(j, params.spec.w)
        for ci in range(x.shape[1]):
            bumped = x.copy()
            bumped[:, ci, hj, wj] += step
            plus = fn(bumped)
            bumped[:, ci, hj, wj] -= 2 * step
            minus = fn(bumped)
            jac[:, j] += np.abs((plus - minus) / (2 * step)).sum(axis=(0, 1)).reshape(m)
    smallest = np.min(jac)
    return smallest > 1e-12, f"smallest sensitivity {smallest:.2e} (short-first order)"


def check_long_only_support(rng):
    x, params = _random_issa(rng)
    spec = params.spec
    jac = analysis.connectivity_jacobian(x, params, "long-only")
    m = spec.h * spec.w
    member = np.empty(m, dtype=int)
    for grp in range(spec.long_groups):
        for k in range(spec.long_group_size):
            member[spec.long_index_map[grp * spec.long_group_size + k]] = grp
    same = member[:, None] == member[None, :]
    off_max = np.max(jac[~same]) if np.any(~same) else 0.0
    on_min = np.min(jac[same])
    ok = off_max <= 1e-14 and on_min > 1e-12
    return ok, f"outside-group max {off_max:.2e} (tol 1e-14), inside-group min {on_min:.2e}"


def check_gradient_dense(rng):
    worst = 0.0
    for _ in range(5):
        c = int(rng.choice([2, 4]))
        h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        params = attention.init_attention_params(c, rng, random_bias=True)
        x = tensor.random_feature_map(1, c, h, w, rng)
        u = tensor.random_feature_map(1, c, h, w, rng)
        worst = max(worst, gradcheck.dense_sa_grad_error(x, params, u, fuse="residual"))
    return worst <= 1e-5, f"worst relative max-norm error {worst:.2e} (tol 1e-5)"


def check_gradient_issa(rng):
    worst = 0.0
    for h, w, p_h, p_w in [(4, 4, 2, 2), (4, 2, 2, 2), (2, 4, 1, 2)]:
        x, params = _random_issa(rng, h, w, p_h, p_w, fuse="residual")
        u = tensor.random_feature_map(1, 4, h, w, rng)
        worst = max(worst, gradcheck.issa_grad_error(x, params, u))
    return worst <= 1e-5, f"worst relative max-norm error {worst:.2e} (tol 1e-5)"


def check_counter_model_identity(rng):
    for h, w in [(4, 4), (8, 8), (4, 8)]:
        for c in (4, 8):
            x = tensor.random_feature_map(1, c, h, w, rng)
            runs = [
                (lambda: attention.dense_sa_forward(
                    x, attention.init_attention_params(c, rng)),
                 analysis.sa_flops_model(h, w, c)),
                (lambda: attention.downsampled_sa_forward(
                    x, attention.init_attention_params(c, rng), factor=2),
                 analysis.downsampled_sa_flops_model(h, w, c)),
            ]
            spec = interlaced.build_partition(h, w, 2, 2)
            params = interlaced.init_issa_params(c, spec, rng)
            runs.append((lambda: interlaced.issa_forward(x, params),
                         analysis.issa_flops_model(h, w, c, 2, 2)))
            for run, model in runs:
                with flops.counting() as read:
                    run()
                    counted = read()
                if counted != model:
                    return False, f"counted {counted} != model {model} at {h}x{w} c={c}"
    return True, "counted FLOPs equal model FLOPs exactly on the full grid"


def check_minimizer(rng):
    for s in (16, 64, 128):
        p_h, p_w = analysis.optimal_partition(s, s)
        if p_h * p_w != s:
            return False, f"optimum product {p_h * p_w} != sqrt({s * s}) = {s}"
    return True, "exhaustive search minimum sits at P_h*P_w = sqrt(HW) for 16/64/128"


def check_degenerate_equivalence(rng):
    x, params = _random_issa(rng, 3, 3, 1, 1, c=4)
    got = interlaced.issa_forward(x, params)
    dense = attention.dense_sa_forward(x, params.long_stage, fuse="none")
    want = tensor.project(dense, params.short_stage.g_w, params.short_stage.g_b)
    worst = np.max(np.abs(got - want))
    return worst <= 1e-12, f"p=1 pipeline vs dense SA + g2: worst {worst:.2e} (tol 1e-12)"


CHECKS = [
    ("matmul-associativity", check_matmul_associativity),
    ("softmax-row-stochastic", check_softmax_row_stochastic),
    ("softmax-shift-invariance", check_softmax_shift_invariance),
    ("projection-identity", check_projection_identity),
    ("permutation-round-trip", check_permutation_round_trip),
    ("affinity-row-sums", check_affinity_row_sums),
    ("block-sparsity", check_block_sparsity),
    ("factorization-oracle", check_factorization_oracle),
    ("dense-connectivity", check_dense_connectivity),
    ("short-first-connectivity", check_short_first_connectivity),
    ("long-only-support", check_long_only_support),
    ("gradient-dense-sa", check_gradient_dense),
    ("gradient-issa", check_gradient_issa),
    ("counter-model-identity", check_counter_model_identity),
    ("minimizer-property", check_minimizer),
    ("degenerate-equivalence", check_degenerate_equivalence),
]


def run_all(seed=0, out=print):
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        rng = tensor.make_rng(seed)
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} properties passed")
    return failures
