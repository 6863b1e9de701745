//! Scalar linear-Gaussian estimation algebra.
//!
//! The source is the Gauss-Markov process `X[i+1] = a X[i] + V[i]` observed by
//! `K` observers through `Y[i]^k = X[i] + W[i]^k`. This module computes the
//! one-shot MMSE identities, the scalar Kalman/Riccati recursion and its steady
//! state, and the two competing values of the joint causal MMSE: the exact
//! joint-filter Riccati fixed point and the precision-additive fusion of the
//! per-observer filters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative change at which verification iterations stop.
pub const ITERATION_REL_TOL: f64 = 1e-13;
/// Iteration cap for verification iterations.
pub const ITERATION_MAX: usize = 100_000;

/// Gauss-Markov source parameters `(a, σ_V²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    a: f64,
    sigma_v2: f64,
}

impl SourceModel {
    pub fn new(a: f64, sigma_v2: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::invalid("a", format!("must be finite, got {a}")));
        }
        if !(sigma_v2.is_finite() && sigma_v2 > 0.0) {
            return Err(Error::invalid(
                "sigma_v2",
                format!("process-noise variance must be finite and > 0, got {sigma_v2}"),
            ));
        }
        Ok(Self { a, sigma_v2 })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn sigma_v2(&self) -> f64 {
        self.sigma_v2
    }

    pub fn is_stable(&self) -> bool {
        self.a.abs() < 1.0
    }

    /// One-step prediction variance `a² p + σ_V²` of a filtered variance `p`.
    pub fn predict(&self, p: f64) -> f64 {
        self.a * self.a * p + self.sigma_v2
    }
}

/// Observation-noise variances of the `K` observers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    sigma_w2: Vec<f64>,
}

impl ChannelSet {
    pub fn new(sigma_w2: Vec<f64>) -> Result<Self> {
        if sigma_w2.is_empty() {
            return Err(Error::invalid("sigma_w2", "at least one observer is required"));
        }
        if let Some(bad) = sigma_w2.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(
                "sigma_w2",
                format!("noise variances must be finite and > 0, got {bad}"),
            ));
        }
        Ok(Self { sigma_w2 })
    }

    /// `k` copies of the same channel.
    pub fn symmetric(sigma_w2: f64, k: usize) -> Result<Self> {
        Self::new(vec![sigma_w2; k])
    }

    pub fn len(&self) -> usize {
        self.sigma_w2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_w2.is_empty()
    }

    pub fn sigma_w2(&self) -> &[f64] {
        &self.sigma_w2
    }

    /// Observation precisions `1/σ_{W_k}²`.
    pub fn precisions(&self) -> impl Iterator<Item = f64> + '_ {
        self.sigma_w2.iter().map(|v| 1.0 / v)
    }

    pub fn total_precision(&self) -> f64 {
        self.precisions().sum()
    }
}

/// A nonnegative variance that may be infinite.
///
/// Both the variance and its reciprocal are kept; whichever one the value was
/// built from is stored verbatim, so `from_variance(v).variance() == v` and
/// `from_precision(p).precision() == p` hold bit-for-bit. Infinite variance is
/// precision zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtVariance {
    variance: f64,
    precision: f64,
}

impl ExtVariance {
    pub const INFINITE: Self = Self { variance: f64::INFINITY, precision: 0.0 };

    pub fn from_variance(variance: f64) -> Result<Self> {
        if variance.is_nan() || variance <= 0.0 {
            return Err(Error::invalid("variance", format!("must be > 0, got {variance}")));
        }
        if variance.is_infinite() {
            return Ok(Self::INFINITE);
        }
        Ok(Self { variance, precision: 1.0 / variance })
    }

    pub fn from_precision(precision: f64) -> Result<Self> {
        if !(precision.is_finite() && precision >= 0.0) {
            return Err(Error::invalid("precision", format!("must be finite and >= 0, got {precision}")));
        }
        if precision == 0.0 {
            return Ok(Self::INFINITE);
        }
        Ok(Self { variance: 1.0 / precision, precision })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn is_finite(&self) -> bool {
        self.precision > 0.0
    }
}

impl fmt::Display for ExtVariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_finite() {
            write!(f, "{}", self.variance)
        } else {
            f.write_str("inf")
        }
    }
}

/// Stationary variance `σ_V²/(1 − a²)`; infinite when `|a| ≥ 1`.
pub fn stationary_variance(m: &SourceModel) -> ExtVariance {
    if m.is_stable() {
        let one_minus = 1.0 - m.a * m.a;
        ExtVariance { variance: m.sigma_v2 / one_minus, precision: one_minus / m.sigma_v2 }
    } else {
        ExtVariance::INFINITE
    }
}

/// MMSE and linear-combination weights of a one-shot Gaussian estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimate {
    pub mmse: f64,
    pub weights: Vec<f64>,
}

/// MMSE of `X ~ N(0, σ_X²)` from `Y_k = X + W_k`, with the weights on `Y_k`.
pub fn one_shot_joint_mmse(sigma_x2: ExtVariance, channels: &ChannelSet) -> LinearEstimate {
    let mmse = 1.0 / (sigma_x2.precision() + channels.total_precision());
    let weights = channels.sigma_w2().iter().map(|w| mmse / w).collect();
    LinearEstimate { mmse, weights }
}

/// Conditional variance `σ_X² (1 − σ_X²/σ_Y²)` of `X` given `Y = X + W`.
pub fn lemma_back(sigma_x2: f64, sigma_y2: f64) -> Result<f64> {
    if !(sigma_x2.is_finite() && sigma_x2 > 0.0) {
        return Err(Error::invalid("sigma_x2", format!("must be finite and > 0, got {sigma_x2}")));
    }
    if sigma_y2.is_nan() || sigma_y2 < sigma_x2 {
        return Err(Error::invalid(
            "sigma_y2",
            format!("Y = X + W with W independent of X needs σ_Y² ≥ σ_X², got {sigma_y2} < {sigma_x2}"),
        ));
    }
    Ok(sigma_x2 * (1.0 - sigma_x2 / sigma_y2))
}

/// Fuses estimates `X̄_k` with independent backward errors of variance `err[k]`.
///
/// The fused precision is `Σ 1/err_k − (K−1)/σ_X²`; weights are `σ²_{W'}/err_k`.
pub fn lemma_combo(sigma_x2: ExtVariance, err: &[f64]) -> Result<LinearEstimate> {
    if err.is_empty() {
        return Err(Error::invalid("err", "at least one estimate is required"));
    }
    if let Some(bad) = err.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::invalid("err", format!("error variances must be finite and > 0, got {bad}")));
    }
    let k = err.len() as f64;
    let precision: f64 = err.iter().map(|e| 1.0 / e).sum::<f64>() - (k - 1.0) * sigma_x2.precision();
    if precision.is_nan() || precision <= 0.0 {
        return Err(Error::invalid(
            "err",
            format!("fused precision {precision} is not positive; errors inconsistent with σ_X²"),
        ));
    }
    let mmse = 1.0 / precision;
    Ok(LinearEstimate { mmse, weights: err.iter().map(|e| mmse / e).collect() })
}

/// Predicted and filtered error variances of one Kalman step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorVariances {
    /// One-step predicted MMSE `q`.
    pub predicted: f64,
    /// Filtered MMSE `p`.
    pub filtered: f64,
}

/// One scalar Riccati step: `q = a² p_prev + σ_V²`, `1/p = 1/q + c`.
pub fn riccati_step(p_prev: f64, m: &SourceModel, obs_precision: f64) -> ErrorVariances {
    let q = m.predict(p_prev);
    ErrorVariances { predicted: q, filtered: q / (1.0 + obs_precision * q) }
}

/// Steady-state fixed point of [`riccati_step`], in closed form.
///
/// The predicted variance is the positive root of
/// `c q² + (1 − a² − σ_V² c) q − σ_V² = 0`.
pub fn steady_state_mmse(m: &SourceModel, obs_precision: f64) -> Result<ErrorVariances> {
    let c = obs_precision;
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::invalid("obs_precision", format!("must be finite and >= 0, got {c}")));
    }
    if c == 0.0 && !m.is_stable() {
        return Err(Error::NoSteadyState(format!(
            "unobserved source with |a| = {} >= 1 has unbounded error variance",
            m.a.abs()
        )));
    }
    let sv = m.sigma_v2;
    let b = 1.0 - m.a * m.a - sv * c;
    let root = (b * b + 4.0 * c * sv).sqrt();
    // pick the cancellation-free form of the positive root
    let q = if b > 0.0 { 2.0 * sv / (b + root) } else { (root - b) / (2.0 * c) };
    Ok(ErrorVariances { predicted: q, filtered: q / (1.0 + c * q) })
}

/// Result of iterating the Riccati map from an initial value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOutcome {
    pub variances: ErrorVariances,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates [`riccati_step`] from `p0` until the relative change in `p` drops
/// below `rel_tol` or `max_iter` steps have run.
pub fn iterate_riccati(
    m: &SourceModel,
    obs_precision: f64,
    p0: f64,
    max_iter: usize,
    rel_tol: f64,
) -> IterationOutcome {
    let mut p = p0;
    let mut last = riccati_step(p, m, obs_precision);
    for it in 1..=max_iter {
        last = riccati_step(p, m, obs_precision);
        let change = (last.filtered - p).abs();
        p = last.filtered;
        if change <= rel_tol * p.abs() {
            return IterationOutcome { variances: last, iterations: it, converged: true };
        }
    }
    IterationOutcome { variances: last, iterations: max_iter, converged: false }
}

/// Which value of the joint causal MMSE `σ²_{X‖Y^[K]}` downstream formulas use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointMode {
    /// Fixed point of the joint Kalman filter over all observers.
    #[default]
    Riccati,
    /// Precision-additive fusion of the per-observer steady-state filters.
    Fusion,
}

impl JointMode {
    pub const ALL: [JointMode; 2] = [JointMode::Riccati, JointMode::Fusion];

    pub fn as_str(&self) -> &'static str {
        match self {
            JointMode::Riccati => "riccati",
            JointMode::Fusion => "fusion",
        }
    }
}

impl fmt::Display for JointMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JointMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "riccati" => Ok(JointMode::Riccati),
            "fusion" => Ok(JointMode::Fusion),
            other => Err(Error::invalid("mode", format!("expected `riccati` or `fusion`, got `{other}`"))),
        }
    }
}

/// Steady-state quantities of the source observed by every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub model: SourceModel,
    pub sigma_x2: ExtVariance,
    /// Per-observer steady causal MMSE `σ²_{X‖Y^k}`.
    pub s: Vec<f64>,
    /// Per-observer predicted MMSE `a² s_k + σ_V²`.
    pub q: Vec<f64>,
    /// Steady Kalman gains `q_k / (q_k + σ_{W_k}²)`.
    pub gains: Vec<f64>,
    pub s_joint_riccati: f64,
    pub s_joint_fusion: f64,
    /// Innovation variances `q_k − s_k` of the estimate processes `X̄^k`.
    pub bar_v: Vec<f64>,
}

impl SteadyState {
    pub fn k(&self) -> usize {
        self.s.len()
    }

    pub fn joint_mmse(&self, mode: JointMode) -> f64 {
        match mode {
            JointMode::Riccati => self.s_joint_riccati,
            JointMode::Fusion => self.s_joint_fusion,
        }
    }

    /// True when every per-observer MMSE equals the first within `rel_tol`.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let s0 = self.s[0];
        self.s.iter().all(|s| (s - s0).abs() <= rel_tol * s0)
    }
}

pub fn steady_state(m: &SourceModel, ch: &ChannelSet) -> Result<SteadyState> {
    let sigma_x2 = stationary_variance(m);
    let k = ch.len();
    let mut s = Vec::with_capacity(k);
    let mut q = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    for (c, w) in ch.precisions().zip(ch.sigma_w2()) {
        let ev = steady_state_mmse(m, c)?;
        s.push(ev.filtered);
        q.push(ev.predicted);
        gains.push(ev.predicted / (ev.predicted + w));
    }
    let s_joint_riccati = steady_state_mmse(m, ch.total_precision())?.filtered;
    let s_joint_fusion = if k == 1 {
        s[0]
    } else {
        lemma_combo(sigma_x2, &s)?.mmse
    };
    let bar_v = q.iter().zip(&s).map(|(q, s)| q - s).collect();
    Ok(SteadyState { model: *m, sigma_x2, s, q, gains, s_joint_riccati, s_joint_fusion, bar_v })
}

pub fn joint_mmse(ss: &SteadyState, mode: JointMode) -> f64 {
    ss.joint_mmse(mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: f64, v: f64) -> SourceModel {
        SourceModel::new(a, v).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn constructors_reject_degenerate_parameters() {
        assert!(SourceModel::new(0.5, 0.0).is_err());
        assert!(SourceModel::new(f64::NAN, 1.0).is_err());
        assert!(SourceModel::new(1.5, 1.0).is_ok());
        assert!(ChannelSet::new(vec![]).is_err());
        assert!(ChannelSet::new(vec![1.0, -1.0]).is_err());
        assert!(ChannelSet::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn stationary_variance_cases() {
        assert_eq!(stationary_variance(&model(0.0, 1.0)).variance(), 1.0);
        assert!(close(stationary_variance(&model(0.5, 1.0)).variance(), 4.0 / 3.0, 1e-15));
        let unstable = stationary_variance(&model(1.0, 1.0));
        assert_eq!(unstable.precision(), 0.0);
        assert!(unstable.variance().is_infinite());
        assert!(!stationary_variance(&model(-1.3, 2.0)).is_finite());
    }

    #[test]
    fn ext_variance_round_trips() {
        for v in [49.0, 0.1, 3.0, 1e-7, 12345.678] {
            assert_eq!(ExtVariance::from_variance(v).unwrap().variance(), v);
            assert_eq!(ExtVariance::from_precision(v).unwrap().precision(), v);
        }
        assert_eq!(ExtVariance::from_variance(f64::INFINITY).unwrap(), ExtVariance::INFINITE);
        assert!(ExtVariance::from_variance(0.0).is_err());
        assert!(ExtVariance::from_precision(-1.0).is_err());
    }

    #[test]
    fn one_shot_examples() {
        let one = ExtVariance::from_variance(1.0).unwrap();
        let e = one_shot_joint_mmse(one, &ChannelSet::new(vec![1.0]).unwrap());
        assert_eq!((e.mmse, e.weights[0]), (0.5, 0.5));

        let e = one_shot_joint_mmse(one, &ChannelSet::new(vec![1.0, 1.0]).unwrap());
        assert!(close(e.mmse, 1.0 / 3.0, 1e-15));
        assert!(e.weights.iter().all(|w| close(*w, 1.0 / 3.0, 1e-15)));

        let e = one_shot_joint_mmse(ExtVariance::INFINITE, &ChannelSet::new(vec![2.0]).unwrap());
        assert_eq!((e.mmse, e.weights[0]), (2.0, 1.0));
    }

    #[test]
    fn lemma_back_examples() {
        assert_eq!(lemma_back(1.0, 2.0).unwrap(), 0.5);
        assert_eq!(lemma_back(1.0, 1.0).unwrap(), 0.0);
        assert!(close(lemma_back(0.5, 2.0).unwrap(), 0.375, 1e-15));
        assert!(lemma_back(2.0, 1.0).is_err());
        // agrees with the forward form: σ_Y² = 2 means σ_W² = 1
        let one = ExtVariance::from_variance(1.0).unwrap();
        let fwd = one_shot_joint_mmse(one, &ChannelSet::new(vec![1.0]).unwrap()).mmse;
        assert_eq!(lemma_back(1.0, 2.0).unwrap(), fwd);
    }

    #[test]
    fn lemma_combo_examples() {
        let one = ExtVariance::from_variance(1.0).unwrap();
        assert!(close(lemma_combo(one, &[0.5, 0.5]).unwrap().mmse, 1.0 / 3.0, 1e-15));
        let (e1, e2) = (0.7, 1.9);
        let f = lemma_combo(ExtVariance::INFINITE, &[e1, e2]).unwrap();
        assert!(close(f.mmse, 1.0 / (1.0 / e1 + 1.0 / e2), 1e-15));
        assert_eq!(lemma_combo(one, &[0.3]).unwrap().mmse, 0.3);
        // errors larger than the prior itself cannot come from real observations
        assert!(lemma_combo(one, &[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn riccati_step_examples() {
        let r = riccati_step(1.0, &model(1.0, 1.0), 1.0);
        assert_eq!(r.predicted, 2.0);
        assert!(close(r.filtered, 2.0 / 3.0, 1e-15));
        let r = riccati_step(0.7, &model(0.9, 1.3), 0.0);
        assert_eq!(r.filtered, r.predicted);
        let r = riccati_step(1.0, &model(0.0, 1.0), 1.0);
        assert_eq!((r.predicted, r.filtered), (1.0, 0.5));
    }

    #[test]
    fn steady_state_mmse_examples() {
        let p = steady_state_mmse(&model(0.5, 1.0), 1.0).unwrap().filtered;
        assert!(close(p, (-7.0 + 65f64.sqrt()) / 2.0, 1e-12));
        // frozen from iterating riccati_step to convergence
        let p2 = steady_state_mmse(&model(0.5, 1.0), 2.0).unwrap().filtered;
        let it = iterate_riccati(&model(0.5, 1.0), 2.0, 0.0, ITERATION_MAX, ITERATION_REL_TOL);
        assert!(it.converged);
        assert!(close(p2, it.variances.filtered, 1e-12));
        assert!((p2 - 0.342330).abs() < 1e-5);
        assert!((p2 - 0.342_329_219_213_245).abs() < 1e-12);
        assert_eq!(steady_state_mmse(&model(0.0, 1.0), 1.0).unwrap().filtered, 0.5);
    }

    #[test]
    fn steady_state_mmse_unobserved() {
        let ev = steady_state_mmse(&model(0.5, 1.0), 0.0).unwrap();
        assert!(close(ev.filtered, 4.0 / 3.0, 1e-15));
        assert_eq!(ev.filtered, ev.predicted);
        assert!(matches!(steady_state_mmse(&model(1.0, 1.0), 0.0), Err(Error::NoSteadyState(_))));
    }

    #[test]
    fn steady_state_examples() {
        let ss = steady_state(&model(0.0, 1.0), &ChannelSet::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(ss.s, vec![0.5, 0.5]);
        assert!(close(ss.s_joint_riccati, 1.0 / 3.0, 1e-15));
        assert!(close(ss.s_joint_fusion, 1.0 / 3.0, 1e-15));

        let ss = steady_state(&model(0.5, 1.0), &ChannelSet::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert!((ss.joint_mmse(JointMode::Riccati) - 0.342330).abs() < 1e-6);
        assert!((ss.joint_mmse(JointMode::Fusion) - 0.331612).abs() < 1e-6);
        assert!(ss.s_joint_riccati <= ss.s[0]);
        for k in 0..2 {
            assert!(ss.bar_v[k] > 0.0);
            assert!(close(ss.gains[k], 1.0 - ss.s[k] / ss.q[k], 1e-12));
        }

        let ss = steady_state(&model(1.3, 0.4), &ChannelSet::new(vec![0.8]).unwrap()).unwrap();
        assert_eq!(ss.s_joint_riccati, ss.s[0]);
        assert_eq!(ss.s_joint_fusion, ss.s[0]);
        assert_eq!(joint_mmse(&ss, JointMode::Fusion), joint_mmse(&ss, JointMode::Riccati));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Fusion".parse::<JointMode>().unwrap(), JointMode::Fusion);
        assert_eq!("riccati".parse::<JointMode>().unwrap(), JointMode::Riccati);
        assert!("both".parse::<JointMode>().is_err());
        assert_eq!(JointMode::default(), JointMode::Riccati);
    }
}
