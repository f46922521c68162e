//! Desk-scale numerical checks of the stability and rate claims.
//!
//! Three experiments: the sup-norm contraction factor of the (regularized)
//! policy-evaluation Bellman operator on small random MDPs, the `O(1/k)` rate
//! of projected SGD with step `a/k` on a strongly convex quadratic, and the
//! spread of critic update norms with and without the Wasserstein penalty.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

use crate::agent::{train, AgentError, Td3Config, TrainOptions, WaveConfig};
use crate::envs::Env;
use crate::par;
use crate::sinkhorn::{exact_wasserstein1_1d, sinkhorn_distance, sinkhorn_gradient, EmpiricalDistribution, OtError, SinkhornConfig};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("iterate became non-finite at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, TheoryError> {
    Err(TheoryError::Invalid(msg.into()))
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Finite MDP with a fixed stochastic policy. Tensors are flat and row-major:
/// `p[(s·A + a)·S + s′]`, `r[s·A + a]`, `pi[s·A + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    p: Vec<f64>,
    r: Vec<f64>,
    pi: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        pi: Vec<f64>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self, TheoryError> {
        let (s, a) = (n_states, n_actions);
        if s == 0 || a == 0 {
            return invalid("an MDP needs at least one state and one action");
        }
        if p.len() != s * a * s || r.len() != s * a || pi.len() != s * a {
            return invalid(format!(
                "expected P of {}, r and π of {} entries; got {}, {}, {}",
                s * a * s,
                s * a,
                p.len(),
                r.len(),
                pi.len()
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return invalid(format!("gamma must lie in [0, 1), got {gamma}"));
        }
        let stochastic = |rows: &[f64], width: usize| {
            rows.chunks(width)
                .all(|row| row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12)
        };
        if !stochastic(&p, s) {
            return invalid("every P[s][a] must be a probability vector");
        }
        if !stochastic(&pi, a) {
            return invalid("every π[s] must be a probability vector");
        }
        if r.iter().any(|v| !(v.abs() <= r_max)) {
            return invalid(format!("rewards must be finite and within ±{r_max}"));
        }
        Ok(Self { n_states, n_actions, p, r, pi, gamma, r_max })
    }

    /// Dirichlet(1) rows for `P` and `π`, rewards uniform in [−1, 1].
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<Self, TheoryError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut simplex = |n: usize| {
            let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = e.iter().sum();
            let mut row: Vec<f64> = e.iter().map(|v| v / total).collect();
            // put the rounding residue on the largest entry
            let resid = 1.0 - row.iter().sum::<f64>();
            let k = (0..n).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
            row[k] += resid;
            row
        };
        let p: Vec<f64> = (0..n_states * n_actions).flat_map(|_| simplex(n_states)).collect();
        let pi: Vec<f64> = (0..n_states).flat_map(|_| simplex(n_actions)).collect();
        let r: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::new(n_states, n_actions, p, r, pi, gamma, 1.0)
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn pi(&self, s: usize, a: usize) -> f64 {
        self.pi[s * self.n_actions + a]
    }

    /// Largest `|Q|` any policy can have: `R_max / (1 − γ)`.
    pub fn value_bound(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }
}

/// `Q[s][a]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    data: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self, TheoryError> {
        if data.len() != n_states * n_actions {
            return invalid(format!("Q table of {n_states}×{n_actions} given {} values", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("Q table entries must be finite");
        }
        Ok(Self { n_states, n_actions, data })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, data: vec![0.0; n_states * n_actions] }
    }

    /// Entries uniform in `[−bound, bound]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..n_states * n_actions).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { n_states, n_actions, data }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn check_shape(&self, mdp: &TabularMdp) -> Result<(), TheoryError> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return invalid(format!(
                "Q table is {}×{}, MDP is {}×{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            ));
        }
        Ok(())
    }
}

/// `T Q(s,a) = r(s,a) + γ Σ_{s′} P(s′|s,a) Σ_{a′} π(a′|s′) Q(s′,a′)`, exactly.
pub fn bellman_operator(mdp: &TabularMdp, q: &QTable) -> Result<QTable, TheoryError> {
    q.check_shape(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let v: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| mdp.pi(s, a) * q.get(s, a)).sum()).collect();
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = (0..ns).map(|s2| mdp.p(s, a, s2) * v[s2]).sum();
            out.push(mdp.r(s, a) + mdp.gamma * ev);
        }
    }
    Ok(QTable { n_states: ns, n_actions: na, data: out })
}

/// `T Q − λ ∂W_ε(Q̂, Q̂_prev)/∂Q` with both tables flattened into empirical
/// distributions. A Sinkhorn run that misses its tolerance is an error here.
pub fn regularized_bellman_operator(
    mdp: &TabularMdp,
    q: &QTable,
    q_prev: &QTable,
    lambda: f64,
    cfg: &SinkhornConfig,
) -> Result<QTable, TheoryError> {
    q_prev.check_shape(mdp)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be a non-negative number, got {lambda}"));
    }
    let mut t = bellman_operator(mdp, q)?;
    let xs = EmpiricalDistribution::new(q.data.clone())?;
    let ys = EmpiricalDistribution::new(q_prev.data.clone())?;
    let result = sinkhorn_distance(&xs, &ys, cfg)?;
    let grad = sinkhorn_gradient(&result, &xs, &ys)?;
    for (v, g) in t.data.iter_mut().zip(grad) {
        *v -= lambda * g;
    }
    Ok(t)
}

/// Repeated application of `T` from zero until successive iterates agree to
/// `tol` in sup norm.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<QTable, TheoryError> {
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for _ in 0..max_iter {
        let next = bellman_operator(mdp, &q)?;
        let gap = next.sup_distance(&q);
        q = next;
        if gap <= tol {
            return Ok(q);
        }
    }
    invalid(format!("value iteration did not reach {tol:e} in {max_iter} sweeps"))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    Standard,
    Regularized { lambda: f64, sinkhorn: SinkhornConfig },
}

impl Operator {
    pub fn lambda(&self) -> f64 {
        match self {
            Operator::Standard => 0.0,
            Operator::Regularized { lambda, .. } => *lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionReport {
    pub operator: Operator,
    pub gamma: f64,
    pub trials: usize,
    /// Largest `‖T q1 − T q2‖∞ / ‖q1 − q2‖∞` seen.
    pub measured_factor: f64,
    /// Same ratio with exact `W_1` between the flattened tables.
    pub measured_factor_w1: f64,
}

pub const MIN_TRIALS: usize = 100;

/// Samples `trials` pairs with entries in `±R_max/(1−γ)` and reports the
/// worst ratio. For the regularized operator each trial draws its own
/// `q_prev`, shared by both applications.
pub fn measure_contraction(
    mdp: &TabularMdp,
    operator: &Operator,
    trials: usize,
    seed: u64,
) -> Result<ContractionReport, TheoryError> {
    if trials < MIN_TRIALS {
        return invalid(format!("need at least {MIN_TRIALS} trials, got {trials}"));
    }
    let bound = mdp.value_bound();
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let ids: Vec<u64> = (0..trials as u64).collect();
    let ratios = par::try_map(&ids, |&t| -> Result<(f64, f64), TheoryError> {
        let mut rng = trial_rng(seed, t);
        let q1 = QTable::random(ns, na, bound, &mut rng);
        let q2 = QTable::random(ns, na, bound, &mut rng);
        let (t1, t2) = match operator {
            Operator::Standard => (bellman_operator(mdp, &q1)?, bellman_operator(mdp, &q2)?),
            Operator::Regularized { lambda, sinkhorn } => {
                let prev = QTable::random(ns, na, bound, &mut rng);
                (
                    regularized_bellman_operator(mdp, &q1, &prev, *lambda, sinkhorn)?,
                    regularized_bellman_operator(mdp, &q2, &prev, *lambda, sinkhorn)?,
                )
            }
        };
        let sup = t1.sup_distance(&t2) / q1.sup_distance(&q2);
        let w = |a: &QTable, b: &QTable| -> Result<f64, TheoryError> {
            Ok(exact_wasserstein1_1d(
                &EmpiricalDistribution::new(a.data.clone())?,
                &EmpiricalDistribution::new(b.data.clone())?,
            )?)
        };
        let before = w(&q1, &q2)?;
        let w1 = if before > 0.0 { w(&t1, &t2)? / before } else { 0.0 };
        Ok((sup, w1))
    })?;
    Ok(ContractionReport {
        operator: operator.clone(),
        gamma: mdp.gamma,
        trials,
        measured_factor: ratios.iter().map(|r| r.0).fold(0.0, f64::max),
        measured_factor_w1: ratios.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// Least-squares `c` in `factor ≈ γ(1 − cλ)` over `(λ, factor)` points with
/// `λ > 0`; `None` without any.
pub fn fit_contraction_constant(gamma: f64, points: &[(f64, f64)]) -> Option<f64> {
    let (num, den) = points
        .iter()
        .filter(|(l, _)| *l > 0.0)
        .fold((0.0, 0.0), |(n, d), (l, f)| (n + l * (gamma - f), d + gamma * l * l));
    (den > 0.0 && gamma > 0.0).then(|| num / den)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionSweep {
    pub standard: ContractionReport,
    /// One report per requested λ, in order.
    pub regularized: Vec<ContractionReport>,
    pub fitted_c: Option<f64>,
}

pub fn contraction_sweep(
    mdp: &TabularMdp,
    lambdas: &[f64],
    trials: usize,
    seed: u64,
    sinkhorn: &SinkhornConfig,
) -> Result<ContractionSweep, TheoryError> {
    let standard = measure_contraction(mdp, &Operator::Standard, trials, seed)?;
    let regularized = lambdas
        .iter()
        .map(|&lambda| {
            let op = Operator::Regularized { lambda, sinkhorn: sinkhorn.clone() };
            measure_contraction(mdp, &op, trials, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<(f64, f64)> = regularized.iter().map(|r| (r.operator.lambda(), r.measured_factor)).collect();
    Ok(ContractionSweep {
        fitted_c: fit_contraction_constant(mdp.gamma, &points),
        standard,
        regularized,
    })
}

pub const CONTRACTION_CSV_HEADER: &str = "lambda,measured_factor_sup,measured_factor_w1";

pub fn write_contraction_csv<W: Write>(sweep: &ContractionSweep, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CONTRACTION_CSV_HEADER}")?;
    for r in &sweep.regularized {
        writeln!(w, "{},{},{}", r.operator.lambda(), r.measured_factor, r.measured_factor_w1)?;
    }
    Ok(())
}

/// Projected SGD `θ_{k+1} = Π(θ_k − (a/k)(m θ_k + ξ_k))` on `f(θ) = m‖θ‖²/2`.
/// The projection is onto the ball of `radius` and `‖ξ_k‖ = noise` with a
/// uniform direction, so every stochastic gradient has norm at most
/// `G = m·radius + noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateConfig {
    pub a: f64,
    pub m: f64,
    pub radius: f64,
    pub noise: f64,
    pub dim: usize,
    pub k_max: usize,
    pub seeds: usize,
    pub seed: u64,
    /// Roughly this many geometrically spaced `k` are logged.
    pub log_points: usize,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            m: 1.0,
            radius: 0.5,
            noise: 0.5,
            dim: 10,
            k_max: 100_000,
            seeds: 20,
            seed: 0,
            log_points: 60,
        }
    }
}

impl RateConfig {
    pub fn g(&self) -> f64 {
        self.m * self.radius + self.noise
    }

    /// First step at which `1 − 2am/k ≥ 0`.
    pub fn k0(&self) -> usize {
        ((2.0 * self.a * self.m).ceil() as usize).max(1)
    }

    fn validate(&self) -> Result<(), TheoryError> {
        if !(self.a * self.m > 0.5) {
            return invalid(format!("need a·m > 1/2, got {}", self.a * self.m));
        }
        if !(self.radius > 0.0) || !(self.noise >= 0.0) {
            return invalid("radius must be positive and noise non-negative");
        }
        if self.dim == 0 || self.seeds == 0 || self.log_points < 2 {
            return invalid("dim, seeds must be ≥ 1 and log_points ≥ 2");
        }
        if self.k_max < 10_000 {
            return invalid(format!("k_max must be at least 10^4, got {}", self.k_max));
        }
        Ok(())
    }
}

/// Geometrically spaced distinct steps from 1 to `k_max`, both included.
pub fn log_spaced_steps(k_max: usize, points: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            ((k_max as f64).powf(t)).round() as usize
        })
        .collect();
    ks.dedup();
    ks
}

/// `ψ_{k+1} = (1 − 2am/k) ψ_k + a²G²/k²` from `ψ_{k0} = start`, returned at
/// the requested steps `≥ k0`.
pub fn recursion_bound(a: f64, m: f64, g: f64, k0: usize, start: f64, at: &[usize]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut psi = start;
    let mut k = k0;
    for &target in at.iter().filter(|&&k| k >= k0) {
        while k < target {
            let kf = k as f64;
            psi = (1.0 - 2.0 * a * m / kf) * psi + a * a * g * g / (kf * kf);
            k += 1;
        }
        out.push((k, psi));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// `(k, mean over seeds of ‖θ_k − θ*‖²)`.
    pub mse_curve: Vec<(usize, f64)>,
    /// The recursion bound at the logged steps from `k0` on, started at
    /// `radius²`, which no iterate can exceed.
    pub bound: Vec<(usize, f64)>,
    /// Log-log slope over `k ≥ 100`; `None` when fewer than two positive points.
    pub fitted_slope: Option<f64>,
    /// `exp` of the intercept of that fit, so `mse ≈ C k^slope`.
    pub fitted_c: Option<f64>,
    pub a: f64,
    pub m: f64,
    pub g: f64,
}

impl ConvergenceReport {
    /// Logged steps where the measured curve exceeds the bound.
    pub fn bound_violations(&self) -> Vec<usize> {
        self.bound
            .iter()
            .filter_map(|&(k, b)| {
                let mse = self.mse_curve.iter().find(|(kk, _)| *kk == k)?.1;
                (mse > b).then_some(k)
            })
            .collect()
    }
}

pub const FIT_FROM: usize = 100;

/// Ordinary least squares `y = intercept + slope·x`.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn convergence_rate_experiment(cfg: &RateConfig) -> Result<ConvergenceReport, TheoryError> {
    cfg.validate()?;
    let steps = log_spaced_steps(cfg.k_max, cfg.log_points);
    let seeds: Vec<u64> = (0..cfg.seeds as u64).collect();
    let curves = par::try_map(&seeds, |&s| run_projected_sgd(cfg, &steps, trial_rng(cfg.seed, s)))?;
    let mse_curve: Vec<(usize, f64)> = steps
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, curves.iter().map(|c| c[i]).sum::<f64>() / cfg.seeds as f64))
        .collect();
    let fit_points: Vec<(f64, f64)> = mse_curve
        .iter()
        .filter(|&&(k, v)| k >= FIT_FROM && v > 0.0)
        .map(|&(k, v)| ((k as f64).ln(), v.ln()))
        .collect();
    let fit = linear_fit(&fit_points);
    Ok(ConvergenceReport {
        bound: recursion_bound(cfg.a, cfg.m, cfg.g(), cfg.k0(), cfg.radius * cfg.radius, &steps),
        mse_curve,
        fitted_slope: fit.map(|f| f.0),
        fitted_c: fit.map(|f| f.1.exp()),
        a: cfg.a,
        m: cfg.m,
        g: cfg.g(),
    })
}

/// Squared error at each logged step for one seed.
fn run_projected_sgd(cfg: &RateConfig, steps: &[usize], mut rng: ChaCha8Rng) -> Result<Vec<f64>, TheoryError> {
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let mut theta: Vec<f64> = unit(&mut rng).into_iter().map(|x| x * cfg.radius).collect();
    let mut out = Vec::with_capacity(steps.len());
    let mut next = steps.iter().peekable();
    for k in 1..=cfg.k_max {
        let sq: f64 = theta.iter().map(|x| x * x).sum();
        if !sq.is_finite() {
            return Err(TheoryError::Diverged(k));
        }
        if next.peek() == Some(&&k) {
            out.push(sq);
            next.next();
        }
        let alpha = cfg.a / k as f64;
        let xi = if cfg.noise > 0.0 { unit(&mut rng) } else { vec![0.0; cfg.dim] };
        for (t, z) in theta.iter_mut().zip(&xi) {
            *t -= alpha * (cfg.m * *t + cfg.noise * z);
        }
        let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > cfg.radius {
            let s = cfg.radius / norm;
            theta.iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(out)
}

pub const RATE_CSV_HEADER: &str = "k,mse";

pub fn write_rate_csv<W: Write>(report: &ConvergenceReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{RATE_CSV_HEADER}")?;
    for (k, v) in &report.mse_curve {
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}

/// Population variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Middle value, or the mean of the two middle values.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariancePair {
    pub seed: u64,
    pub var_on: f64,
    pub var_off: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    /// Critic updates `[start, end)` that enter the variance.
    pub window: (usize, usize),
    pub pairs: Vec<VariancePair>,
}

impl VarianceReport {
    /// Median over seeds of `var_on / var_off`.
    pub fn median_ratio(&self) -> Option<f64> {
        let ratios: Vec<f64> = self.pairs.iter().map(|p| p.var_on / p.var_off).collect();
        median(&ratios)
    }
}

pub const MIN_VARIANCE_SEEDS: usize = 5;

/// Arm settings for [`variance_experiment`]; `None` is plain TD3.
#[derive(Clone, Debug)]
pub struct VarianceArms<'a> {
    pub on: Option<&'a WaveConfig>,
    pub off: Option<&'a WaveConfig>,
}

/// Trains both arms on every seed until `window.1` critic updates and
/// compares the variance of `‖Δθ^Q‖` over the window.
pub fn variance_experiment(
    env: &Env,
    td3: &Td3Config,
    arms: VarianceArms<'_>,
    seeds: &[u64],
    window: (usize, usize),
) -> Result<VarianceReport, TheoryError> {
    if seeds.len() < MIN_VARIANCE_SEEDS {
        return invalid(format!("need at least {MIN_VARIANCE_SEEDS} seeds, got {}", seeds.len()));
    }
    if window.0 >= window.1 {
        return invalid(format!("empty update window {window:?}"));
    }
    // Enough episodes to reach the window end; training stops there.
    let steps = window.1 + td3.warmup_steps.max(td3.batch_size);
    let episodes = steps.div_ceil(env.spec().max_episode_steps.max(1)) + 1;
    let run = |wave: Option<&WaveConfig>, seed: u64| -> Result<f64, TheoryError> {
        let opts = TrainOptions {
            stop_after_updates: Some(window.1 as u64),
            ..TrainOptions::new(episodes, seed)
        };
        let out = train(env, td3, wave, &opts)?;
        if out.update_norms.len() < window.1 {
            return invalid(format!(
                "seed {seed} made {} critic updates, window ends at {}",
                out.update_norms.len(),
                window.1
            ));
        }
        Ok(variance(&out.update_norms[window.0..window.1]))
    };
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, true), (s, false)]).collect();
    let vars = par::try_map(&jobs, |&(seed, on)| run(if on { arms.on } else { arms.off }, seed))?;
    let pairs = seeds
        .iter()
        .zip(vars.chunks(2))
        .map(|(&seed, v)| VariancePair { seed, var_on: v[0], var_off: v[1] })
        .collect();
    Ok(VarianceReport { window, pairs })
}

pub const VARIANCE_CSV_HEADER: &str = "seed,var_on,var_off";

pub fn write_variance_csv<W: Write>(report: &VarianceReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{VARIANCE_CSV_HEADER}")?;
    for p in &report.pairs {
        writeln!(w, "{},{},{}", p.seed, p.var_on, p.var_off)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_steps_cover_both_ends() {
        let ks = log_spaced_steps(100_000, 60);
        assert_eq!(ks[0], 1);
        assert_eq!(*ks.last().unwrap(), 100_000);
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fit_recovers_a_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        let (s, c) = linear_fit(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-12 && (c - 3.0).abs() < 1e-12);
        assert_eq!(linear_fit(&pts[..1]), None);
    }

    #[test]
    fn contraction_constant_fit() {
        let pts = [(0.0, 0.9), (0.1, 0.9 * (1.0 - 0.3)), (0.2, 0.9 * (1.0 - 0.6))];
        assert!((fit_contraction_constant(0.9, &pts).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(fit_contraction_constant(0.9, &[(0.0, 0.9)]), None);
    }

    #[test]
    fn median_and_variance() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(variance(&[1.0, 3.0]), 1.0);
    }
}
