//! Two-regime hidden Markov model with linear-trend Gaussian emissions.
//!
//! In regime `i` the deviation at 1-based window position `t` is
//! `alpha_i * t + beta_i + eps`, `eps ~ N(0, sigma_i^2)`. Regime persistence
//! follows a constant 2x2 transition matrix. Parameters are estimated by
//! Baum-Welch EM; the probabilities handed to the index are the causal
//! (filtered) ones from the Hamilton recursion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, log_add_exp, std_dev};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Relative factor applied to `std(y)` to obtain the sigma floor.
pub const SIGMA_FLOOR_FACTOR: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Prosperous,
    Recessionary,
}

impl Regime {
    pub const fn index(self) -> usize {
        match self {
            Regime::Prosperous => 0,
            Regime::Recessionary => 1,
        }
    }

    pub const fn from_index(i: usize) -> Self {
        if i == 0 {
            Regime::Prosperous
        } else {
            Regime::Recessionary
        }
    }
}

/// Emission parameters of one regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl RegimeParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64) -> Self {
        Self { alpha, beta, sigma }
    }

    /// Emission mean at 1-based position `t`.
    pub fn mean_at(&self, t: usize) -> f64 {
        self.alpha * t as f64 + self.beta
    }
}

/// Full parameter set. Index 0 is the prosperous regime and index 1 the
/// recessionary one once the model has passed through [`label_regimes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeModel {
    pub q: [[f64; 2]; 2],
    pub params: [RegimeParams; 2],
    pub pi0: [f64; 2],
}

impl RegimeModel {
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.q.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidModel(format!("q row {i} has entries outside [0,1]")));
            }
            if (row[0] + row[1] - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidModel(format!("q row {i} does not sum to 1")));
            }
        }
        if self.pi0.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.pi0[0] + self.pi0[1] - 1.0).abs() > STOCHASTIC_TOL
        {
            return Err(Error::InvalidModel("pi0 is not a probability vector".into()));
        }
        for p in &self.params {
            if !(p.sigma > 0.0) || !p.alpha.is_finite() || !p.beta.is_finite() || !p.sigma.is_finite() {
                return Err(Error::InvalidModel(format!("bad regime parameters {p:?}")));
            }
        }
        Ok(())
    }

    /// Same model with the two state indices exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            q: [[self.q[1][1], self.q[1][0]], [self.q[0][1], self.q[0][0]]],
            params: [self.params[1], self.params[0]],
            pi0: [self.pi0[1], self.pi0[0]],
        }
    }

    pub fn regime(&self, r: Regime) -> &RegimeParams {
        &self.params[r.index()]
    }
}

/// Log of the Gaussian density of `y_t` around `alpha * t + beta`.
pub fn emission_logdensity(y_t: f64, t: usize, params: &RegimeParams) -> f64 {
    let z = (y_t - params.mean_at(t)) / params.sigma;
    -LN_SQRT_2PI - params.sigma.ln() - 0.5 * z * z
}

/// One step of the state-probability recursion: `prob * Q`.
pub fn propagate(prob: [f64; 2], q: &[[f64; 2]; 2]) -> [f64; 2] {
    [
        prob[0] * q[0][0] + prob[1] * q[1][0],
        prob[0] * q[0][1] + prob[1] * q[1][1],
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// `P(S_t = i | y_1..y_t)`.
    pub filtered: Vec<[f64; 2]>,
    /// `P(S_t = i | y_1..y_{t-1})`; the first entry is `pi0`.
    pub predicted: Vec<[f64; 2]>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn mu(&self, r: Regime) -> Vec<f64> {
        self.filtered.iter().map(|p| p[r.index()]).collect()
    }
}

fn ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Hamilton filter: predicted probabilities are updated by the emission
/// densities and renormalised at every step, in log space.
pub fn forward_filter(y: &[f64], model: &RegimeModel) -> Result<FilterOutput> {
    if y.is_empty() {
        return Err(Error::EmptySeries);
    }
    model.validate()?;
    let mut filtered = Vec::with_capacity(y.len());
    let mut predicted = Vec::with_capacity(y.len());
    let mut pred = model.pi0;
    let mut terms = Vec::with_capacity(y.len());
    for (i, &yt) in y.iter().enumerate() {
        let t = i + 1;
        let lw = [
            ln(pred[0]) + emission_logdensity(yt, t, &model.params[0]),
            ln(pred[1]) + emission_logdensity(yt, t, &model.params[1]),
        ];
        let m = lw[0].max(lw[1]);
        if !m.is_finite() {
            return Err(Error::FilterDegeneracy(i));
        }
        let w = [(lw[0] - m).exp(), (lw[1] - m).exp()];
        let s = w[0] + w[1];
        terms.push(m + s.ln());
        let post = [w[0] / s, w[1] / s];
        predicted.push(pred);
        filtered.push(post);
        pred = propagate(post, &model.q);
    }
    let loglik = compensated_sum(terms);
    if !loglik.is_finite() {
        return Err(Error::FilterDegeneracy(y.len() - 1));
    }
    Ok(FilterOutput {
        filtered,
        predicted,
        loglik,
    })
}

/// Smoothed posteriors from one E-step.
struct Posteriors {
    loglik: f64,
    gamma: Vec<[f64; 2]>,
    /// Expected transition counts summed over `t = 1..T-1`.
    xi: [[f64; 2]; 2],
}

fn forward_backward(y: &[f64], model: &RegimeModel) -> Posteriors {
    let n = y.len();
    let lq = [
        [ln(model.q[0][0]), ln(model.q[0][1])],
        [ln(model.q[1][0]), ln(model.q[1][1])],
    ];
    let logd: Vec<[f64; 2]> = y
        .iter()
        .enumerate()
        .map(|(i, &yt)| {
            [
                emission_logdensity(yt, i + 1, &model.params[0]),
                emission_logdensity(yt, i + 1, &model.params[1]),
            ]
        })
        .collect();

    let mut la = vec![[0.0; 2]; n];
    la[0] = [ln(model.pi0[0]) + logd[0][0], ln(model.pi0[1]) + logd[0][1]];
    for t in 1..n {
        for j in 0..2 {
            la[t][j] = log_add_exp(la[t - 1][0] + lq[0][j], la[t - 1][1] + lq[1][j]) + logd[t][j];
        }
    }
    let mut lb = vec![[0.0; 2]; n];
    for t in (0..n - 1).rev() {
        for i in 0..2 {
            lb[t][i] = log_add_exp(
                lq[i][0] + logd[t + 1][0] + lb[t + 1][0],
                lq[i][1] + logd[t + 1][1] + lb[t + 1][1],
            );
        }
    }
    let loglik = log_add_exp(la[n - 1][0], la[n - 1][1]);

    let gamma = (0..n)
        .map(|t| {
            let g0 = (la[t][0] + lb[t][0] - loglik).exp();
            let g1 = (la[t][1] + lb[t][1] - loglik).exp();
            let s = g0 + g1;
            [g0 / s, g1 / s]
        })
        .collect();
    let mut xi = [[0.0; 2]; 2];
    for t in 0..n.saturating_sub(1) {
        let mut step = [[0.0; 2]; 2];
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let v = (la[t][i] + lq[i][j] + logd[t + 1][j] + lb[t + 1][j] - loglik).exp();
                step[i][j] = v;
                total += v;
            }
        }
        if total > 0.0 {
            for i in 0..2 {
                for j in 0..2 {
                    xi[i][j] += step[i][j] / total;
                }
            }
        }
    }
    Posteriors { loglik, gamma, xi }
}

/// Weighted least squares of `y` on `(t, 1)` followed by the weighted residual
/// standard deviation. Returns `None` when the weights carry no mass.
fn weighted_fit(ts: &[f64], y: &[f64], weights: &[f64], sigma_floor: f64) -> Option<RegimeParams> {
    let s0 = compensated_sum(weights.iter().copied());
    if !(s0 > 0.0) {
        return None;
    }
    let wsum = |f: &dyn Fn(usize) -> f64| compensated_sum((0..y.len()).map(|k| weights[k] * f(k)));
    let tbar = wsum(&|k| ts[k]) / s0;
    let ybar = wsum(&|k| y[k]) / s0;
    let stt = wsum(&|k| (ts[k] - tbar).powi(2));
    let sty = wsum(&|k| (ts[k] - tbar) * (y[k] - ybar));
    let alpha = if stt > 0.0 { sty / stt } else { 0.0 };
    let beta = ybar - alpha * tbar;
    let ss = wsum(&|k| (y[k] - alpha * ts[k] - beta).powi(2));
    let sigma = (ss / s0).sqrt().max(sigma_floor);
    Some(RegimeParams { alpha, beta, sigma })
}

fn positions(n: usize) -> Vec<f64> {
    (1..=n).map(|t| t as f64).collect()
}

fn m_step(y: &[f64], post: &Posteriors, prev: &RegimeModel, sigma_floor: f64) -> RegimeModel {
    let mut next = *prev;
    let ts = positions(y.len());
    for i in 0..2 {
        let w: Vec<f64> = post.gamma.iter().map(|g| g[i]).collect();
        if let Some(p) = weighted_fit(&ts, y, &w, sigma_floor) {
            next.params[i] = p;
        }
        let row = post.xi[i][0] + post.xi[i][1];
        if row > 0.0 {
            let stay = (post.xi[i][i] / row).clamp(0.0, 1.0);
            next.q[i][i] = stay;
            next.q[i][1 - i] = 1.0 - stay;
        }
    }
    let g = post.gamma[0];
    next.pi0 = [g[0], 1.0 - g[0]];
    next
}

/// Lower bound on any regime's sigma for series `y`.
pub fn sigma_floor(y: &[f64]) -> f64 {
    match std_dev(y) {
        Some(s) if s > 0.0 => SIGMA_FLOOR_FACTOR * s,
        _ => SIGMA_FLOOR_FACTOR,
    }
}

fn ols(points: &[(f64, f64)], sigma_floor: f64) -> RegimeParams {
    let ts: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    weighted_fit(&ts, &y, &vec![1.0; points.len()], sigma_floor).unwrap_or(RegimeParams {
        alpha: 0.0,
        beta: 0.0,
        sigma: sigma_floor,
    })
}

/// Deterministic starting point: the lower half of the sorted deviations
/// seeds the recessionary regime, the upper half the prosperous one.
pub fn init_params(y: &[f64]) -> Result<RegimeModel> {
    if y.is_empty() {
        return Err(Error::EmptySeries);
    }
    let floor = sigma_floor(y);
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let half = (y.len() / 2).max(1).min(y.len());
    let to_points = |ids: &[usize]| -> Vec<(f64, f64)> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter().map(|i| ((i + 1) as f64, y[i])).collect()
    };
    let lower = to_points(&idx[..half]);
    let upper = if half < y.len() {
        to_points(&idx[half..])
    } else {
        lower.clone()
    };
    Ok(RegimeModel {
        q: [[0.95, 0.05], [0.05, 0.95]],
        params: [ols(&upper, floor), ols(&lower, floor)],
        pi0: [0.5, 0.5],
    })
}

fn ties(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale
}

/// Orders the states so index 1 is recessionary: lower intercept first,
/// then larger sigma, then lower slope. The flag is set when intercept and
/// sigma both tie, i.e. the regimes cannot be told apart.
pub fn label_regimes(model: &RegimeModel) -> (RegimeModel, bool) {
    label_regimes_at(model, [0.0, 0.0])
}

/// As [`label_regimes`], but compares each regime's mean at position
/// `anchors[i]` instead of the intercept at `t = 0`.
pub fn label_regimes_at(model: &RegimeModel, anchors: [f64; 2]) -> (RegimeModel, bool) {
    let [a, b] = model.params;
    let level_a = a.alpha * anchors[0] + a.beta;
    let level_b = b.alpha * anchors[1] + b.beta;
    let scale = a.sigma.max(b.sigma);
    let level_tie = ties(level_a, level_b, scale);
    let sigma_tie = ties(a.sigma, b.sigma, scale);
    // true when state 0 should be the recessionary one
    let zero_is_recession = if !level_tie {
        level_a < level_b
    } else if !sigma_tie {
        a.sigma > b.sigma
    } else {
        a.alpha < b.alpha
    };
    let labeled = if zero_is_recession {
        model.swapped()
    } else {
        *model
    };
    (labeled, level_tie && sigma_tie)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Extra random restarts on top of the deterministic start. The best
    /// final log-likelihood wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            restarts: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: RegimeModel,
    /// Number of M-steps taken.
    pub iterations: usize,
    /// Log-likelihood before the first M-step and after every one.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Regimes indistinguishable or a sigma pinned at the floor.
    pub degenerate: bool,
}

impl FitReport {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

/// EM with default options from the deterministic median-split start.
pub fn em_fit(y: &[f64], init: &RegimeModel, tol: f64, max_iter: usize) -> Result<FitReport> {
    if y.is_empty() {
        return Err(Error::EmptySeries);
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    init.validate()?;
    let floor = sigma_floor(y);
    let mut model = *init;
    for p in &mut model.params {
        p.sigma = p.sigma.max(floor);
    }
    let mut post = forward_backward(y, &model);
    if !post.loglik.is_finite() {
        return Err(Error::NonFiniteLoglik(0));
    }
    let mut trace = vec![post.loglik];
    let mut converged = false;
    for iter in 1..=max_iter {
        model = m_step(y, &post, &model, floor);
        post = forward_backward(y, &model);
        if !post.loglik.is_finite() {
            return Err(Error::NonFiniteLoglik(iter));
        }
        let prev = *trace.last().unwrap_or(&post.loglik);
        trace.push(post.loglik);
        if (post.loglik - prev).abs() < tol {
            converged = true;
            break;
        }
    }
    let mid = (y.len() + 1) as f64 / 2.0;
    let (labeled, tie) = label_regimes_at(&model, [mid, mid]);
    let collapsed = labeled.params.iter().any(|p| p.sigma <= floor * (1.0 + 1e-12));
    Ok(FitReport {
        model: labeled,
        iterations: trace.len() - 1,
        loglik_trace: trace,
        converged,
        degenerate: tie || collapsed,
    })
}

fn random_init(y: &[f64], rng: &mut ChaCha8Rng) -> RegimeModel {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pick = |u: f64| sorted[((u * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let spread = std_dev(y).filter(|s| *s > 0.0).unwrap_or(1.0);
    let lo = pick(rng.random_range(0.0..0.5));
    let hi = pick(rng.random_range(0.5..1.0));
    let stay_p = rng.random_range(0.7..0.99);
    let stay_r = rng.random_range(0.7..0.99);
    RegimeModel {
        q: [[stay_p, 1.0 - stay_p], [1.0 - stay_r, stay_r]],
        params: [
            RegimeParams::new(0.0, hi, spread * rng.random_range(0.2..1.0)),
            RegimeParams::new(0.0, lo, spread * rng.random_range(0.2..1.0)),
        ],
        pi0: [0.5, 0.5],
    }
}

/// Fits from the median-split start plus `options.restarts` random starts.
pub fn fit(y: &[f64], options: &FitOptions) -> Result<FitReport> {
    let init = init_params(y)?;
    let mut best = em_fit(y, &init, options.tol, options.max_iter)?;
    if options.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        for _ in 0..options.restarts {
            let start = random_init(y, &mut rng);
            if let Ok(candidate) = em_fit(y, &start, options.tol, options.max_iter) {
                if candidate.loglik() > best.loglik() {
                    best = candidate;
                }
            }
        }
    }
    Ok(best)
}

/// Draws a state path and observations from `model`.
pub fn sample_path(model: &RegimeModel, len: usize, seed: u64) -> Result<(Vec<Regime>, Vec<f64>)> {
    model.validate()?;
    if len == 0 {
        return Err(Error::param("len", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(len);
    let mut obs = Vec::with_capacity(len);
    let mut s = if rng.random::<f64>() < model.pi0[0] { 0 } else { 1 };
    for t in 1..=len {
        if t > 1 {
            s = if rng.random::<f64>() < model.q[s][0] { 0 } else { 1 };
        }
        let p = &model.params[s];
        let z: f64 = StandardNormal.sample(&mut rng);
        states.push(Regime::from_index(s));
        obs.push(p.mean_at(t) + p.sigma * z);
    }
    Ok((states, obs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(q: [[f64; 2]; 2], p: RegimeParams, r: RegimeParams) -> RegimeModel {
        RegimeModel {
            q,
            params: [p, r],
            pi0: [0.5, 0.5],
        }
    }

    /// Exhaustive sum over all 2^T state paths.
    fn enumerate_paths(y: &[f64], m: &RegimeModel) -> (f64, [f64; 2]) {
        let n = y.len();
        let dens = |yt: f64, t: usize, p: &RegimeParams| {
            let r = yt - p.alpha * t as f64 - p.beta;
            (-(r * r) / (2.0 * p.sigma * p.sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * p.sigma)
        };
        let mut total = 0.0;
        let mut last = [0.0; 2];
        for mask in 0u32..(1 << n) {
            let s = |t: usize| ((mask >> t) & 1) as usize;
            let mut p = m.pi0[s(0)] * dens(y[0], 1, &m.params[s(0)]);
            for t in 1..n {
                p *= m.q[s(t - 1)][s(t)] * dens(y[t], t + 1, &m.params[s(t)]);
            }
            total += p;
            last[s(n - 1)] += p;
        }
        (total.ln(), [last[0] / total, last[1] / total])
    }

    #[test]
    fn logdensity_at_zero_residual() {
        let p = RegimeParams::new(0.3, -2.0, 1.0);
        let y = 0.3 * 7.0 - 2.0;
        let expected = -(2.0 * std::f64::consts::PI).sqrt().ln();
        assert!((emission_logdensity(y, 7, &p) - expected).abs() < 1e-12);
        assert!((expected + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn logdensity_symmetry_and_unit_residual() {
        let p = RegimeParams::new(0.0, 10.0, 1.0);
        assert_eq!(emission_logdensity(13.0, 1, &p), emission_logdensity(7.0, 1, &p));
        let diff = emission_logdensity(11.0, 1, &p) - emission_logdensity(10.0, 1, &p);
        assert!((diff + 0.5).abs() < 1e-15);
    }

    #[test]
    fn propagate_examples() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(propagate([0.3, 0.7], &id), [0.3, 0.7]);
        let q = [[0.9, 0.1], [0.3, 0.7]];
        assert_eq!(propagate([1.0, 0.0], &q), [0.9, 0.1]);
        let u = [[0.5, 0.5], [0.5, 0.5]];
        assert_eq!(propagate([0.2, 0.8], &u), [0.5, 0.5]);
    }

    #[test]
    fn identical_regimes_leave_prior_unchanged() {
        let p = RegimeParams::new(0.1, 1.0, 2.0);
        let mut m = model([[0.8, 0.2], [0.4, 0.6]], p, p);
        m.pi0 = [0.3, 0.7];
        let y: Vec<f64> = (0..20).map(|i| (i as f64).sin() * 3.0).collect();
        let out = forward_filter(&y, &m).unwrap();
        for (f, p) in out.filtered.iter().zip(&out.predicted) {
            assert!((f[0] - p[0]).abs() < 1e-12 && (f[1] - p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_filter_by_hand() {
        let p = RegimeParams::new(0.0, 0.0, 1.0);
        let r = RegimeParams::new(0.0, -3.0, 2.0);
        let m = model([[0.9, 0.1], [0.1, 0.9]], p, r);
        let y = [-1.2];
        let norm = |x: f64, mu: f64, s: f64| {
            (-(x - mu).powi(2) / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s)
        };
        let (dp, dr) = (norm(-1.2, 0.0, 1.0), norm(-1.2, -3.0, 2.0));
        let out = forward_filter(&y, &m).unwrap();
        assert!((out.filtered[0][0] - dp / (dp + dr)).abs() < 1e-14);
        assert!((out.loglik - (0.5 * dp + 0.5 * dr).ln()).abs() < 1e-14);
    }

    #[test]
    fn filter_matches_path_enumeration() {
        let m = RegimeModel {
            q: [[0.85, 0.15], [0.25, 0.75]],
            params: [RegimeParams::new(0.2, 1.0, 1.5), RegimeParams::new(-0.1, -2.0, 2.5)],
            pi0: [0.6, 0.4],
        };
        let (_, y) = sample_path(&m, 10, 7).unwrap();
        let (ll, last) = enumerate_paths(&y, &m);
        let out = forward_filter(&y, &m).unwrap();
        assert!((out.loglik - ll).abs() < 1e-9);
        assert!((out.filtered[9][0] - last[0]).abs() < 1e-9);
        // E-step likelihood agrees with the filter
        assert!((forward_backward(&y, &m).loglik - ll).abs() < 1e-9);
    }

    #[test]
    fn filter_rejects_bad_inputs() {
        let p = RegimeParams::new(0.0, 0.0, 1.0);
        let m = model([[0.9, 0.1], [0.1, 0.9]], p, p);
        assert!(forward_filter(&[], &m).is_err());
        let mut bad = m;
        bad.q[0] = [0.9, 0.2];
        assert!(matches!(forward_filter(&[1.0], &bad), Err(Error::InvalidModel(_))));
        assert!(matches!(
            forward_filter(&[f64::NAN], &m),
            Err(Error::FilterDegeneracy(0))
        ));
    }

    #[test]
    fn filter_survives_extreme_residuals() {
        let m = RegimeModel {
            q: [[1.0, 0.0], [0.0, 1.0]],
            params: [RegimeParams::new(0.0, 0.0, 1.0), RegimeParams::new(0.0, -1e6, 1.0)],
            pi0: [1.0, 0.0],
        };
        // the state with all the prior mass explains nothing, but stays finite
        let out = forward_filter(&[-1e6, -1e6], &m).unwrap();
        assert_eq!(out.filtered[1], [1.0, 0.0]);
        assert!(out.loglik.is_finite());
    }

    #[test]
    fn labeling_rules() {
        let m = model(
            [[0.9, 0.1], [0.2, 0.8]],
            RegimeParams::new(0.0, -50.0, 5.0),
            RegimeParams::new(0.0, 0.1, 5.0),
        );
        let (l, deg) = label_regimes(&m);
        assert_eq!(l.params[1].beta, -50.0);
        assert_eq!(l.q, [[0.8, 0.2], [0.1, 0.9]]);
        assert!(!deg);

        let m = model(
            [[0.9, 0.1], [0.2, 0.8]],
            RegimeParams::new(0.0, 2.0, 3.0),
            RegimeParams::new(0.0, 2.0, 10.0),
        );
        let (l, deg) = label_regimes(&m);
        assert_eq!(l.params[1].sigma, 10.0);
        assert!(!deg);

        let p = RegimeParams::new(0.0, 2.0, 3.0);
        assert!(label_regimes(&model([[0.9, 0.1], [0.2, 0.8]], p, p)).1);
    }

    #[test]
    fn anchored_labeling_uses_level_where_regime_lives() {
        // a steep falling line occupying the late window has the larger
        // intercept but by far the lower level where it is occupied
        let m = model(
            [[0.9, 0.1], [0.2, 0.8]],
            RegimeParams::new(-11.36, 681.2, 512.6),
            RegimeParams::new(-0.05, -26.3, 62.96),
        );
        assert_eq!(label_regimes(&m).0.params[1].beta, -26.3);
        let (l, deg) = label_regimes_at(&m, [135.0, 70.0]);
        assert_eq!(l.params[1].beta, 681.2);
        assert!(!deg);
        assert_eq!(label_regimes_at(&m.swapped(), [70.0, 135.0]), (l, deg));
    }

    #[test]
    fn fit_labels_a_falling_shock_segment_recessionary() {
        let y: Vec<f64> = (1..=191)
            .map(|t| {
                let wiggle = ((t * 37) % 11) as f64 - 5.0;
                if (120..150).contains(&t) {
                    -600.0 + 12.0 * (t - 120) as f64 + 20.0 * wiggle
                } else {
                    -25.0 + 8.0 * wiggle
                }
            })
            .collect();
        let r = fit(&y, &FitOptions::default()).unwrap();
        let filt = forward_filter(&y, &r.model).unwrap();
        let mu = filt.mu(Regime::Recessionary);
        assert!(mu[130] > 0.9, "{}", mu[130]);
        assert!(mu[50] < 0.1, "{}", mu[50]);
    }

    #[test]
    fn init_examples() {
        let zeros = vec![0.0; 191];
        let m = init_params(&zeros).unwrap();
        assert_eq!(m.params[0], m.params[1]);
        assert_eq!(m.params[0].sigma, SIGMA_FLOOR_FACTOR);

        let step: Vec<f64> = (1..=191).map(|t| if t <= 95 { 0.0 } else { -50.0 }).collect();
        let m = init_params(&step).unwrap();
        assert!((m.params[1].beta + 50.0).abs() < 1e-9);
        assert_eq!(m.q, [[0.95, 0.05], [0.05, 0.95]]);
        assert_eq!(init_params(&step).unwrap(), m);
        assert!(init_params(&[]).is_err());
        // a single point seeds both regimes
        let one = init_params(&[3.0]).unwrap();
        assert_eq!(one.params[0].beta, 3.0);
    }

    #[test]
    fn zero_series_fit_is_degenerate() {
        let y = vec![0.0; 191];
        let fit = em_fit(&y, &init_params(&y).unwrap(), 1e-6, 500).unwrap();
        assert!(fit.degenerate);
        assert!(fit.converged);
    }

    #[test]
    fn step_series_fit_separates_regimes() {
        let y: Vec<f64> = (1..=191)
            .map(|t| if t <= 95 { 0.0 } else { -50.0 } + ((t * 37 % 11) as f64 - 5.0))
            .collect();
        let fit = em_fit(&y, &init_params(&y).unwrap(), 1e-6, 500).unwrap();
        assert!(!fit.degenerate);
        let r = fit.model.regime(Regime::Recessionary);
        assert!((r.beta + 50.0).abs() < 5.0, "{r:?}");
        let mu = forward_filter(&y, &fit.model).unwrap().mu(Regime::Recessionary);
        assert!(mu[150] > 0.99 && mu[20] < 0.01);
        let ll = forward_filter(&y, &fit.model).unwrap().loglik;
        assert!((ll - fit.loglik()).abs() < 1e-8);
    }

    #[test]
    fn em_rejects_bad_tolerance() {
        let y = vec![1.0, 2.0, 3.0];
        let init = init_params(&y).unwrap();
        assert!(em_fit(&y, &init, 0.0, 10).is_err());
    }

    #[test]
    fn max_iter_is_respected() {
        let m = RegimeModel {
            q: [[0.97, 0.03], [0.05, 0.95]],
            params: [RegimeParams::new(0.0, 0.0, 5.0), RegimeParams::new(0.3, -40.0, 8.0)],
            pi0: [0.5, 0.5],
        };
        let (_, y) = sample_path(&m, 191, 3).unwrap();
        let fit = em_fit(&y, &init_params(&y).unwrap(), 1e-300, 3).unwrap();
        assert_eq!(fit.iterations, 3);
        assert_eq!(fit.loglik_trace.len(), 4);
        assert!(!fit.converged);
        let ll = forward_filter(&y, &fit.model).unwrap().loglik;
        assert!((ll - fit.loglik()).abs() < 1e-8);
    }

    #[test]
    fn restarts_never_lower_the_likelihood() {
        let m = RegimeModel {
            q: [[0.97, 0.03], [0.05, 0.95]],
            params: [RegimeParams::new(0.0, 0.0, 5.0), RegimeParams::new(0.3, -40.0, 8.0)],
            pi0: [0.5, 0.5],
        };
        let (_, y) = sample_path(&m, 191, 11).unwrap();
        let single = fit(&y, &FitOptions::default()).unwrap();
        let multi = fit(&y, &FitOptions { restarts: 5, seed: 9, ..Default::default() }).unwrap();
        assert!(multi.loglik() >= single.loglik());
    }

    #[test]
    fn sampling_examples() {
        let m = RegimeModel {
            q: [[1.0, 0.0], [0.0, 1.0]],
            params: [RegimeParams::new(0.0, 0.0, 1.0), RegimeParams::new(0.0, -5.0, 1.0)],
            pi0: [1.0, 0.0],
        };
        let (s, _) = sample_path(&m, 50, 1).unwrap();
        assert!(s.iter().all(|r| *r == Regime::Prosperous));
        assert_eq!(sample_path(&m, 50, 1).unwrap(), sample_path(&m, 50, 1).unwrap());
        assert!(sample_path(&m, 0, 1).is_err());
    }

    #[test]
    fn symmetric_chain_visits_states_equally() {
        let m = RegimeModel {
            q: [[0.9, 0.1], [0.1, 0.9]],
            params: [RegimeParams::new(0.0, 0.0, 1.0), RegimeParams::new(0.0, -5.0, 1.0)],
            pi0: [0.5, 0.5],
        };
        let (s, _) = sample_path(&m, 100_000, 2024).unwrap();
        let frac = s.iter().filter(|r| **r == Regime::Prosperous).count() as f64 / s.len() as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    fn arb_model() -> impl Strategy<Value = RegimeModel> {
        (
            0.05f64..0.95,
            0.05f64..0.95,
            0.05f64..0.95,
            (-1.0f64..1.0, -10.0f64..10.0, 0.5f64..5.0),
            (-1.0f64..1.0, -10.0f64..10.0, 0.5f64..5.0),
        )
            .prop_map(|(a, b, p, (a0, b0, s0), (a1, b1, s1))| RegimeModel {
                q: [[a, 1.0 - a], [1.0 - b, b]],
                params: [RegimeParams::new(a0, b0, s0), RegimeParams::new(a1, b1, s1)],
                pi0: [p, 1.0 - p],
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn filter_pairs_are_normalised(m in arb_model(), seed in 0u64..1000) {
            let (_, y) = sample_path(&m, 60, seed).unwrap();
            let out = forward_filter(&y, &m).unwrap();
            for p in out.filtered.iter().chain(&out.predicted) {
                prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn em_ascends(m in arb_model(), seed in 0u64..1000) {
            let (_, y) = sample_path(&m, 80, seed).unwrap();
            let fit = em_fit(&y, &init_params(&y).unwrap(), 1e-6, 200).unwrap();
            for w in fit.loglik_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
        }

        #[test]
        fn labeling_is_permutation_invariant(m in arb_model()) {
            prop_assert_eq!(label_regimes(&m), label_regimes(&m.swapped()));
        }

        #[test]
        fn filter_is_affine_equivariant(m in arb_model(), seed in 0u64..1000, lambda in 0.1f64..20.0) {
            let (_, y) = sample_path(&m, 40, seed).unwrap();
            let mut scaled = m;
            for p in &mut scaled.params {
                p.alpha *= lambda;
                p.beta *= lambda;
                p.sigma *= lambda;
            }
            let ys: Vec<f64> = y.iter().map(|v| v * lambda).collect();
            let a = forward_filter(&y, &m).unwrap();
            let b = forward_filter(&ys, &scaled).unwrap();
            for (x, z) in a.filtered.iter().zip(&b.filtered) {
                prop_assert!((x[0] - z[0]).abs() < 1e-9);
            }
        }
    }
}
