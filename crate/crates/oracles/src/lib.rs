//! Slow, direct reference computations for tests.
//!
//! Nothing in here shares code with `wave-core`: each routine reaches its
//! answer by a different route (primal cycle exchanges instead of dual scaling,
//! permutation enumeration instead of transport, dense linear solves instead
//! of fixed-point iteration, straight-line loops instead of the tape).

use nalgebra::{DMatrix, DVector};

/// Central difference `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Squared-cost entropic optimal transport between two uniform empirical
/// measures of equal size, `min Σ π c − ε H(π)`, solved in the primal by
/// exact minimization along 2×2 exchange cycles.
///
/// Moving mass `δ` onto `(i,j), (k,l)` and off `(i,l), (k,j)` keeps both
/// marginals fixed; stationarity along that line reads
/// `(π_ij + δ)(π_kl + δ) = ρ (π_il − δ)(π_kj − δ)` with
/// `ρ = exp(−(c_ij + c_kl − c_il − c_kj)/ε)`, a quadratic with exactly one
/// root in the feasible interval. Sweeping all cycles until nothing moves is
/// block coordinate descent on a strictly convex objective whose cycle
/// directions span the feasible slice. Intended for `n ≤ 4`; returns
/// `(objective, plan)`.
pub fn entropic_ot_primal(xs: &[f64], ys: &[f64], epsilon: f64) -> (f64, Vec<f64>) {
    let n = xs.len();
    assert_eq!(n, ys.len());
    assert!(n >= 1 && epsilon > 0.0);
    let cost: Vec<f64> = (0..n * n)
        .map(|k| {
            let d = xs[k / n] - ys[k % n];
            d * d
        })
        .collect();
    let mut plan = vec![1.0 / (n * n) as f64; n * n];
    for _sweep in 0..200_000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            for k in i + 1..n {
                for j in 0..n {
                    for l in j + 1..n {
                        let (ij, kl, il, kj) = (i * n + j, k * n + l, i * n + l, k * n + j);
                        let dc = cost[ij] + cost[kl] - cost[il] - cost[kj];
                        // Orient the cycle so that ρ ≤ 1.
                        let (pos, neg) = if dc >= 0.0 { ((ij, kl), (il, kj)) } else { ((il, kj), (ij, kl)) };
                        let rho = (-dc.abs() / epsilon).exp();
                        let (a, b) = (plan[pos.0], plan[pos.1]);
                        let (c, d) = (plan[neg.0], plan[neg.1]);
                        let delta = cycle_root(a, b, c, d, rho);
                        if delta != 0.0 {
                            plan[pos.0] = (a + delta).max(0.0);
                            plan[pos.1] = (b + delta).max(0.0);
                            plan[neg.0] = (c - delta).max(0.0);
                            plan[neg.1] = (d - delta).max(0.0);
                            moved = moved.max(delta.abs());
                        }
                    }
                }
            }
        }
        if moved < 1e-16 {
            break;
        }
    }
    let value = plan
        .iter()
        .zip(&cost)
        .map(|(&p, &c)| if p > 0.0 { p * c + epsilon * p * p.ln() } else { 0.0 })
        .sum();
    (value, plan)
}

/// Root of `h(δ) = (a+δ)(b+δ) − ρ(c−δ)(d−δ)` on `[−min(a,b), min(c,d)]`,
/// where `h` is nondecreasing. Bisection bracketed Newton.
fn cycle_root(a: f64, b: f64, c: f64, d: f64, rho: f64) -> f64 {
    let h = |x: f64| (a + x) * (b + x) - rho * (c - x) * (d - x);
    let dh = |x: f64| (a + x) + (b + x) + rho * ((c - x) + (d - x));
    let (mut lo, mut hi) = (-a.min(b), c.min(d));
    if hi - lo <= 0.0 {
        return 0.0;
    }
    if h(lo) >= 0.0 {
        return lo;
    }
    if h(hi) <= 0.0 {
        return hi;
    }
    let mut x = 0.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let hx = h(x);
        if hx == 0.0 {
            return x;
        }
        if hx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = dh(x);
        let newton = x - hx / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-300_f64.max(1e-17 * x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Exact squared-cost optimal transport between uniform empirical measures of
/// equal size by enumerating every permutation (the optimum of the
/// assignment LP is a vertex). Returns `(1/n) min_σ Σ (x_i − y_σ(i))²`.
pub fn exact_ot_squared_by_permutations(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    assert_eq!(n, ys.len());
    assert!(n <= 9, "permutation enumeration is factorial");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let eval = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| (xs[i] - ys[j]).powi(2)).sum::<f64>() };
    best = best.min(eval(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

/// Exact 1-Wasserstein distance by enumerating pairings (absolute cost).
pub fn exact_w1_by_permutations(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..n).collect();
    permute_all(&mut perm, 0, &mut |p| {
        let v: f64 = p.iter().enumerate().map(|(i, &j)| (xs[i] - ys[j]).abs()).sum();
        best = best.min(v);
    });
    best / n as f64
}

fn permute_all(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute_all(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Row-major dense layer stack evaluated with explicit loops: for each
/// `(weight[in×out], bias[out])` pair, `y = x·W + b`, then `act` on all but
/// the last layer.
pub fn dense_chain(input: &[f64], layers: &[(Vec<f64>, Vec<f64>)], act: fn(f64) -> f64) -> Vec<f64> {
    let mut x = input.to_vec();
    for (li, (w, b)) in layers.iter().enumerate() {
        let out = b.len();
        let inp = x.len();
        assert_eq!(w.len(), inp * out);
        let mut y = b.clone();
        for j in 0..out {
            for i in 0..inp {
                y[j] += x[i] * w[i * out + j];
            }
        }
        if li + 1 < layers.len() {
            y.iter_mut().for_each(|v| *v = act(*v));
        }
        x = y;
    }
    x
}

/// Layer norm of one row in the textbook form, accumulating in `f64` with
/// compensated (Kahan) sums.
pub fn layer_norm_row(x: &[f64], gain: &[f64], offset: &[f64], stabilizer: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let kahan = |it: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for v in it {
            let y = v - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    };
    let mean = kahan(&mut x.iter().copied()) / n;
    let var = kahan(&mut x.iter().map(|v| (v - mean) * (v - mean))) / n;
    let denom = (var + stabilizer).sqrt();
    x.iter()
        .zip(gain.iter().zip(offset))
        .map(|(v, (g, b))| (v - mean) / denom * g + b)
        .collect()
}

/// Policy evaluation for a tabular MDP by solving `(I − γ P^π) q = r`
/// directly. `p[s][a][s']`, `pi[s][a]`, `r[s][a]`; returns `q[s][a]`.
pub fn policy_evaluation_linear_solve(
    p: &[Vec<Vec<f64>>],
    pi: &[Vec<f64>],
    r: &[Vec<f64>],
    gamma: f64,
) -> Vec<Vec<f64>> {
    let ns = p.len();
    let na = p[0].len();
    let dim = ns * na;
    let mut a = DMatrix::<f64>::identity(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for s in 0..ns {
        for act in 0..na {
            let row = s * na + act;
            rhs[row] = r[s][act];
            for s2 in 0..ns {
                for a2 in 0..na {
                    a[(row, s2 * na + a2)] -= gamma * p[s][act][s2] * pi[s2][a2];
                }
            }
        }
    }
    let q = a.lu().solve(&rhs).expect("I − γP^π is invertible for γ < 1");
    (0..ns).map(|s| (0..na).map(|act| q[s * na + act]).collect()).collect()
}

/// Iterates `ψ_{k+1} = (1 − 2am/k) ψ_k + a²G²/k²` from `ψ_{k0} = start` and
/// returns `ψ_k` for `k = k0 ..= k_end`.
pub fn sgd_recursion_bound(a: f64, m: f64, g: f64, k0: usize, start: f64, k_end: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_end + 1 - k0);
    let mut psi = start;
    out.push(psi);
    for k in k0..k_end {
        let kf = k as f64;
        psi = (1.0 - 2.0 * a * m / kf) * psi + a * a * g * g / (kf * kf);
        out.push(psi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primal_newton_marginals_and_trivial_cases() {
        let (v, plan) = entropic_ot_primal(&[0.0], &[1.0], 0.01);
        assert_eq!((v, plan), (1.0, vec![1.0]));
        let (_, plan) = entropic_ot_primal(&[0.0, 1.0, 3.0], &[0.5, 2.0, -1.0], 0.05);
        for i in 0..3 {
            let row: f64 = plan[i * 3..i * 3 + 3].iter().sum();
            let col: f64 = (0..3).map(|r| plan[r * 3 + i]).sum();
            assert!((row - 1.0 / 3.0).abs() < 1e-12 && (col - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn primal_newton_large_epsilon_approaches_independent_coupling() {
        // With ε huge the entropy dominates and the plan tends to 1/n².
        let (_, plan) = entropic_ot_primal(&[0.0, 1.0], &[0.0, 1.0], 1e6);
        for p in plan {
            assert!((p - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn permutation_ot() {
        assert_eq!(exact_ot_squared_by_permutations(&[0.0, 2.0], &[1.0, 3.0]), 1.0);
        assert_eq!(exact_w1_by_permutations(&[0.0, 2.0], &[1.0, 5.0]), 2.0);
    }

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(&[1.0, -2.0], 1e-4, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] - 3.0).abs() < 1e-9);
    }
}

/// Two-link arm accelerations from the Euler–Lagrange equations
/// `M(q) q̈ + c(q, q̇) + ∂V/∂q = (0, τ)`, with `q = 0` hanging down and
/// `V = −(m1 lc1 + m2 l1) g cos q1 − m2 lc2 g cos(q1 + q2)`. The 2×2 system is
/// solved by Cramer's rule. `link = (m1, m2, l1, lc1, lc2, i1, i2)`.
pub fn two_link_accelerations(q: [f64; 4], torque: f64, link: [f64; 7], g: f64) -> (f64, f64) {
    let [q1, q2, v1, v2] = q;
    let [m1, m2, l1, lc1, lc2, i1, i2] = link;
    let m11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * q2.cos()) + i1 + i2;
    let m12 = m2 * (lc2 * lc2 + l1 * lc2 * q2.cos()) + i2;
    let m22 = m2 * lc2 * lc2 + i2;
    let h = m2 * l1 * lc2 * q2.sin();
    let c1 = -h * (2.0 * v1 * v2 + v2 * v2);
    let c2 = h * v1 * v1;
    let g1 = (m1 * lc1 + m2 * l1) * g * q1.sin() + m2 * lc2 * g * (q1 + q2).sin();
    let g2 = m2 * lc2 * g * (q1 + q2).sin();
    let (b1, b2) = (-c1 - g1, torque - c2 - g2);
    let det = m11 * m22 - m12 * m12;
    ((b1 * m22 - m12 * b2) / det, (m11 * b2 - m12 * b1) / det)
}
