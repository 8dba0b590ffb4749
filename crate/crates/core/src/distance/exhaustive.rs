//! Exhaustive enumeration of all diagonal-augmented matchings between two
//! small diagrams. Quadratic-factorial, so only usable for a handful of
//! points; the test suites use it as the independent oracle for the
//! assignment solver and the bottleneck search.

fn linf(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

fn gap(p: (f64, f64)) -> f64 {
    (p.1 - p.0) / 2.0
}

/// Minimum of `sum cost^q` over all augmented matchings, reported as the
/// q-th root.
pub fn min_cost_wasserstein(xs: &[(f64, f64)], ys: &[(f64, f64)], q: f64) -> f64 {
    let mut used = vec![false; ys.len()];
    let mut best = f64::INFINITY;
    recurse_sum(xs, ys, q, 0, &mut used, 0.0, &mut best);
    if best == 0.0 {
        0.0
    } else {
        best.powf(1.0 / q)
    }
}

fn recurse_sum(
    xs: &[(f64, f64)],
    ys: &[(f64, f64)],
    q: f64,
    i: usize,
    used: &mut [bool],
    acc: f64,
    best: &mut f64,
) {
    if acc >= *best {
        return;
    }
    if i == xs.len() {
        let mut total = acc;
        for (j, &u) in used.iter().enumerate() {
            if !u {
                total += gap(ys[j]).powf(q);
            }
        }
        if total < *best {
            *best = total;
        }
        return;
    }
    recurse_sum(xs, ys, q, i + 1, used, acc + gap(xs[i]).powf(q), best);
    for j in 0..ys.len() {
        if !used[j] {
            used[j] = true;
            recurse_sum(xs, ys, q, i + 1, used, acc + linf(xs[i], ys[j]).powf(q), best);
            used[j] = false;
        }
    }
}

/// Minimum over all augmented matchings of the maximum per-pair cost.
pub fn min_cost_bottleneck(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> f64 {
    let mut used = vec![false; ys.len()];
    let mut best = f64::INFINITY;
    recurse_max(xs, ys, 0, &mut used, 0.0, &mut best);
    best
}

fn recurse_max(
    xs: &[(f64, f64)],
    ys: &[(f64, f64)],
    i: usize,
    used: &mut [bool],
    acc: f64,
    best: &mut f64,
) {
    if acc >= *best {
        return;
    }
    if i == xs.len() {
        let mut total = acc;
        for (j, &u) in used.iter().enumerate() {
            if !u {
                total = total.max(gap(ys[j]));
            }
        }
        if total < *best {
            *best = total;
        }
        return;
    }
    recurse_max(xs, ys, i + 1, used, acc.max(gap(xs[i])), best);
    for j in 0..ys.len() {
        if !used[j] {
            used[j] = true;
            recurse_max(xs, ys, i + 1, used, acc.max(linf(xs[i], ys[j])), best);
            used[j] = false;
        }
    }
}
