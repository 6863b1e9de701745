//! Gaussian test-channel scheme: K steady-state Kalman observers whose
//! estimates `X̄^k` are described as `B^k = X̄^k + Z^k`, decoded by the exact
//! Kalman filter of the joint state `(X, X̄^1, …, X̄^K)`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{steady_state, ChannelSet, ExtVariance, JointMode, SourceModel, SteadyState};
use crate::rdf::{ceo_rdf, feasibility_window, remote_rdf, Allocation, RdfQuery};

pub const DECODER_REL_TOL: f64 = 1e-12;
pub const DECODER_MAX_ITER: usize = 1_000_000;
pub const MIN_BURN_IN: usize = 100;

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    n: usize,
    a: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul(&self, o: &Mat) -> Mat {
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let v = self[(i, k)];
                if v != 0.0 {
                    for j in 0..n {
                        out.a[i * n + j] += v * o.a[k * n + j];
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// `A P Aᵀ`.
    pub fn congruence(&self, p: &Mat) -> Mat {
        self.mul(p).mul(&self.transpose())
    }

    pub fn add(&self, o: &Mat) -> Mat {
        Mat { n: self.n, a: self.a.iter().zip(&o.a).map(|(x, y)| x + y).collect() }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum()).collect()
    }

    fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn frobenius(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * self.n + j]
    }
}

/// Test-channel noise variance that makes observer `k` (0-based) reach `d_k`.
///
/// `d_k − s_k` is the steady MMSE of `X̄^k` from `B^k`; inverting the scalar
/// Riccati equation of `X̄^k` gives `1/σ_Z² = 1/m − 1/(a² m + v̄)`. A `d_k`
/// at (or numerically just below) `σ_X²` needs no description and returns
/// infinite variance.
pub fn sigma_z_from_dk(ss: &SteadyState, k: usize, d_k: f64) -> Result<ExtVariance> {
    if k >= ss.k() {
        return Err(Error::invalid("k", format!("observer {k} out of range for K = {}", ss.k())));
    }
    let s = ss.s[k];
    let upper = ss.sigma_x2.variance();
    if d_k.is_nan() {
        return Err(Error::invalid("d_k", "NaN"));
    }
    if d_k >= upper * (1.0 - 1e-12) {
        return Ok(ExtVariance::INFINITE);
    }
    let m = d_k - s;
    if m.is_nan() || m <= 0.0 {
        return Err(Error::Infeasible { d: d_k, lower: s, upper });
    }
    let a = ss.model.a();
    let precision = 1.0 / m - 1.0 / (a * a * m + ss.bar_v[k]);
    if precision.is_nan() || precision <= 0.0 {
        return Err(Error::Infeasible { d: d_k, lower: s, upper });
    }
    ExtVariance::from_precision(precision)
}

/// Linear system of `ξ = (X, X̄^1, …, X̄^K)` observed through `B^k = X̄^k + Z^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSystem {
    pub k: usize,
    /// `ξ_{i+1} = F ξ_i + G n_i` with `n_i = (V_i, W^1_{i+1}, …, W^K_{i+1})`.
    pub f: Mat,
    /// `G diag(σ_V², σ_W²) Gᵀ`.
    pub q: Mat,
    /// Per-channel `σ_Z²`; infinite means the channel is not observed.
    pub sigma_z2: Vec<ExtVariance>,
    pub gains: Vec<f64>,
    pub a: f64,
    pub sigma_v2: f64,
    pub sigma_w2: Vec<f64>,
}

/// Assembles the joint dynamics from steady observer gains `κ_k`.
pub fn build_augmented(ss: &SteadyState, sigma_w2: &[f64], sigma_z2: &[ExtVariance]) -> Result<AugmentedSystem> {
    let k = ss.k();
    if sigma_z2.len() != k || sigma_w2.len() != k {
        return Err(Error::invalid("sigma_z2", format!("expected {k} channels, got {}", sigma_z2.len())));
    }
    let a = ss.model.a();
    let sv = ss.model.sigma_v2();
    let n = k + 1;
    let mut f = Mat::zeros(n);
    let mut q = Mat::zeros(n);
    f[(0, 0)] = a;
    q[(0, 0)] = sv;
    for j in 0..k {
        let kj = ss.gains[j];
        f[(j + 1, 0)] = kj * a;
        f[(j + 1, j + 1)] = a * (1.0 - kj);
        q[(0, j + 1)] = kj * sv;
        q[(j + 1, 0)] = kj * sv;
        for l in 0..k {
            let kl = ss.gains[l];
            q[(j + 1, l + 1)] = kj * kl * sv + if j == l { kj * kj * sigma_w2[j] } else { 0.0 };
        }
    }
    Ok(AugmentedSystem {
        k,
        f,
        q,
        sigma_z2: sigma_z2.to_vec(),
        gains: ss.gains.clone(),
        a,
        sigma_v2: sv,
        sigma_w2: sigma_w2.to_vec(),
    })
}

impl AugmentedSystem {
    /// Copy observing only the listed channels.
    pub fn restricted(&self, keep: &[usize]) -> AugmentedSystem {
        let mut s = self.clone();
        for (j, z) in s.sigma_z2.iter_mut().enumerate() {
            if !keep.contains(&j) {
                *z = ExtVariance::INFINITE;
            }
        }
        s
    }

    fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.sigma_z2.iter().enumerate().filter(|(_, z)| z.is_finite()).map(|(j, z)| (j, z.variance()))
    }

    /// Sequential scalar Joseph-form updates; returns the gain of each observed channel.
    fn update(&self, p: &mut Mat) -> Vec<(usize, Vec<f64>)> {
        let n = self.k + 1;
        let mut gains = Vec::new();
        for (j, r) in self.observed() {
            let c = j + 1;
            let s = p[(c, c)] + r;
            if s.is_nan() || s <= 0.0 {
                continue;
            }
            let g: Vec<f64> = (0..n).map(|i| p[(i, c)] / s).collect();
            // (I − g hᵀ) P (I − g hᵀ)ᵀ + g r gᵀ
            let mut a = Mat::identity(n);
            for (i, gi) in g.iter().enumerate() {
                a[(i, c)] -= gi;
            }
            let mut next = a.congruence(p);
            for i in 0..n {
                for l in 0..n {
                    next[(i, l)] += g[i] * r * g[l];
                }
            }
            next.symmetrize();
            *p = next;
            gains.push((j, g));
        }
        gains
    }
}

/// Stationary covariance `Σ = F Σ Fᵀ + Q` by doubling; requires `|a| < 1`.
pub fn lyapunov(sys: &AugmentedSystem) -> Result<Mat> {
    if sys.a.abs() >= 1.0 {
        return Err(Error::NoSteadyState(format!("|a| = {} ≥ 1 has no stationary covariance", sys.a.abs())));
    }
    let mut a = sys.f.clone();
    let mut s = sys.q.clone();
    for _ in 0..200 {
        let add = a.congruence(&s);
        let scale = s.max_abs();
        s = s.add(&add);
        if add.max_abs() <= 1e-17 * scale {
            s.symmetrize();
            return Ok(s);
        }
        a = a.mul(&a);
    }
    Err(Error::NonConvergence { iterations: 200, residual: f64::NAN })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSolution {
    /// Steady MMSE of `X_i` given `B_[i]`.
    pub filtered: f64,
    /// Steady MMSE of `X_i` given `B_[i−1]`.
    pub predicted: f64,
    pub filtered_cov: Mat,
    pub predicted_cov: Mat,
    /// Per observed channel: gain vector of its scalar update.
    pub gains: Vec<(usize, Vec<f64>)>,
    pub iterations: usize,
}

/// Runs the joint Riccati recursion to its fixed point.
pub fn exact_decoder(sys: &AugmentedSystem) -> Result<DecoderSolution> {
    if sys.a.abs() >= 1.0 && sys.observed().next().is_none() {
        return Err(Error::NoSteadyState("an unstable source with no described channel has unbounded error".into()));
    }
    let mut pred = sys.q.clone();
    let mut prev = f64::NAN;
    for it in 1..=DECODER_MAX_ITER {
        let mut filt = pred.clone();
        let gains = sys.update(&mut filt);
        let next = sys.f.congruence(&filt).add(&sys.q);
        let delta = next.a.iter().zip(&pred.a).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let x = filt[(0, 0)];
        if delta <= DECODER_REL_TOL * next.max_abs() && (x - prev).abs() <= DECODER_REL_TOL * x {
            return Ok(DecoderSolution {
                filtered: x,
                predicted: pred[(0, 0)],
                filtered_cov: filt,
                predicted_cov: pred,
                gains,
                iterations: it,
            });
        }
        if !next.a.iter().all(|v| v.is_finite()) {
            return Err(Error::NoSteadyState("decoder covariance diverged".into()));
        }
        prev = x;
        pred = next;
    }
    Err(Error::NonConvergence { iterations: DECODER_MAX_ITER, residual: f64::NAN })
}

/// Steady MMSE of `X` under the exact joint decoder.
pub fn exact_decoder_mmse(sys: &AugmentedSystem) -> Result<f64> {
    exact_decoder(sys).map(|d| d.filtered)
}

/// Rate of the scheme split into its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRate {
    /// `½ log(d̄/d)`.
    pub base: f64,
    /// `½ log(ρ̄_k/ρ_k)`.
    pub per_channel: Vec<f64>,
    pub total: f64,
}

/// Rate of an allocation recomputed from its distortions.
pub fn scheme_rate(alloc: &Allocation, model: &SourceModel) -> Result<SchemeRate> {
    if alloc.rho_k.iter().any(|r| *r <= 0.0) {
        return Err(Error::invalid("rho_k", "an observer with ρ_k = 0 needs an infinite rate"));
    }
    let dbar = if alloc.memoryless {
        crate::model::stationary_variance(model).variance()
    } else {
        model.predict(alloc.d)
    };
    let base = if dbar <= alloc.d { 0.0 } else { 0.5 * (dbar / alloc.d).ln() };
    let per_channel: Vec<f64> =
        alloc.rho_bar_k.iter().zip(&alloc.rho_k).map(|(rb, r)| (0.5 * (rb / r).ln()).max(0.0)).collect();
    Ok(SchemeRate { base, total: base + per_channel.iter().sum::<f64>(), per_channel })
}

/// Joint MMSE under both definitions and what the difference does to the rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub s_joint_riccati: f64,
    pub s_joint_fusion: f64,
    /// `riccati − fusion`.
    pub gap: f64,
    pub relative_gap: f64,
    pub d_ref: f64,
    /// Rates at `d_ref` (nats); `None` where `d_ref` is infeasible for that mode.
    pub remote_riccati: Option<f64>,
    pub remote_fusion: Option<f64>,
    pub ceo_riccati: Option<f64>,
    pub ceo_fusion: Option<f64>,
}

/// Compares the joint MMSEs; `d_ref` defaults to a point feasible for both.
pub fn fusion_discrepancy_report(m: &SourceModel, ch: &ChannelSet, d_ref: Option<f64>) -> Result<FusionReport> {
    let ss = steady_state(m, ch)?;
    let (r, f) = (ss.s_joint_riccati, ss.s_joint_fusion);
    let d = d_ref.unwrap_or_else(|| {
        let lo = r.max(f);
        if ss.sigma_x2.is_finite() {
            0.5 * (lo + ss.sigma_x2.variance())
        } else {
            2.0 * lo
        }
    });
    let q = RdfQuery::new(*m, ch.clone(), d);
    let rate = |mode: JointMode, ceo: bool| {
        let qm = q.clone().with_mode(mode);
        let (lo, _) = feasibility_window(&ss, mode);
        if d <= lo {
            return None;
        }
        if ceo {
            ceo_rdf(&qm).ok().map(|(v, _)| v)
        } else {
            remote_rdf(&qm).ok()
        }
    };
    Ok(FusionReport {
        s_joint_riccati: r,
        s_joint_fusion: f,
        gap: r - f,
        relative_gap: (r - f) / r,
        d_ref: d,
        remote_riccati: rate(JointMode::Riccati, false),
        remote_fusion: rate(JointMode::Fusion, false),
        ceo_riccati: rate(JointMode::Riccati, true),
        ceo_fusion: rate(JointMode::Fusion, true),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub model: SourceModel,
    pub channels: ChannelSet,
    pub allocation: Allocation,
    /// Steps averaged per trial after burn-in.
    pub horizon: usize,
    pub seed: u64,
    pub trials: usize,
    pub exact_covariance: bool,
    pub monte_carlo: bool,
}

impl SchemeConfig {
    pub fn new(model: SourceModel, channels: ChannelSet, allocation: Allocation) -> Self {
        Self {
            model,
            channels,
            allocation,
            horizon: 10_000,
            seed: 0,
            trials: 10,
            exact_covariance: true,
            monte_carlo: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be >= 1"));
        }
        if self.allocation.d_k.len() != self.channels.len() {
            return Err(Error::invalid(
                "allocation",
                format!("{} decoder MMSEs for {} channels", self.allocation.d_k.len(), self.channels.len()),
            ));
        }
        if self.allocation.memoryless && self.model.a() != 0.0 {
            return Err(Error::invalid("allocation", "a memoryless allocation does not drive the causal scheme"));
        }
        Ok(())
    }
}

/// How trajectories are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Raw state and decoder estimate.
    State,
    /// Error coordinates only; used when `|a| ≥ 1`.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub target_d: f64,
    pub sigma_z2: Vec<f64>,
    pub achieved_mse_exact: Option<f64>,
    /// `achieved_mse_exact − target_d`.
    pub exact_gap: Option<f64>,
    pub achieved_mse_empirical: Option<f64>,
    pub std_error: Option<f64>,
    /// `|empirical − exact| ≤ 4·SE`.
    pub within_4se: Option<bool>,
    pub d_k_target: Vec<f64>,
    /// Exact MMSE of `X` from `B^k` alone.
    pub d_k_check: Vec<f64>,
    pub rho_k_target: Vec<f64>,
    pub rho_k_check: Vec<f64>,
    /// `σ_X² − s_k`, the stationary variance of `X̄^k` (stable sources).
    pub xbar_var_exact: Option<Vec<f64>>,
    pub xbar_var_empirical: Option<Vec<f64>>,
    pub s_joint_riccati: f64,
    pub s_joint_fusion: f64,
    pub fusion_gap: f64,
    pub mode: SimMode,
    pub burn_in: usize,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Everything a trial needs, fixed before any sampling.
struct Plan {
    sys: AugmentedSystem,
    gains: Vec<(usize, Vec<f64>)>,
    mode: SimMode,
    burn_in: usize,
    batch: usize,
}

fn spectral_radius_estimate(a: &Mat) -> f64 {
    // ‖A^(2^10)‖^(1/2^10), rescaling to stay in range
    let mut m = a.clone();
    let mut log_scale = 0.0;
    for _ in 0..10 {
        let nrm = m.frobenius();
        if nrm == 0.0 || !nrm.is_finite() {
            return 0.0;
        }
        m = Mat { n: m.n, a: m.a.iter().map(|v| v / nrm).collect() };
        log_scale = 2.0 * (log_scale + nrm.ln());
        m = m.mul(&m);
    }
    let nrm = m.frobenius();
    if nrm == 0.0 {
        return 0.0;
    }
    ((log_scale + nrm.ln()) / 1024.0).exp()
}

impl Plan {
    fn new(cfg: &SchemeConfig, ss: &SteadyState, dec: Option<&DecoderSolution>) -> Result<Self> {
        let sz: Vec<ExtVariance> =
            (0..ss.k()).map(|k| sigma_z_from_dk(ss, k, cfg.allocation.d_k[k])).collect::<Result<_>>()?;
        let sys = build_augmented(ss, cfg.channels.sigma_w2(), &sz)?;
        let dec = match dec {
            Some(d) => d.clone(),
            None => exact_decoder(&sys)?,
        };
        let n = sys.k + 1;
        let mut m = Mat::identity(n);
        for (j, g) in &dec.gains {
            let mut u = Mat::identity(n);
            for (i, gi) in g.iter().enumerate() {
                u[(i, j + 1)] -= gi;
            }
            m = u.mul(&m);
        }
        let closed = m.mul(&sys.f);
        let a = ss.model.a();
        let mode = if a.abs() < 1.0 { SimMode::State } else { SimMode::Error };
        let kmin = ss.gains.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut rho = (a * (1.0 - kmin)).abs().max(spectral_radius_estimate(&closed));
        if mode == SimMode::State {
            rho = rho.max(a.abs());
        }
        let scale = 1.0 / (1.0 - rho.min(1.0 - 1e-9));
        let burn_in = ((10.0 * scale).ceil() as usize).max(MIN_BURN_IN);
        let batch = ((10.0 * scale).ceil() as usize).clamp(1, cfg.horizon);
        Ok(Self { sys, gains: dec.gains, mode, burn_in, batch })
    }
}

#[derive(Default)]
struct TrialStats {
    sum_sq: f64,
    batches: Vec<f64>,
    xbar_sq: Vec<f64>,
}

fn streams(seed: u64, trial: usize, k: usize) -> Vec<ChaCha8Rng> {
    // V, then W^1..W^K, then Z^1..Z^K
    (0..2 * k + 1)
        .map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream((trial * (2 * k + 1) + s) as u64);
            r
        })
        .collect()
}

fn run_trial(cfg: &SchemeConfig, plan: &Plan, trial: usize, mut trace: Option<&mut dyn Write>) -> Result<TrialStats> {
    let sys = &plan.sys;
    let k = sys.k;
    let n = k + 1;
    let mut rngs = streams(cfg.seed, trial, k);
    let sv = sys.sigma_v2.sqrt();
    let sw: Vec<f64> = sys.sigma_w2.iter().map(|w| w.sqrt()).collect();
    let sz: Vec<f64> = sys.sigma_z2.iter().map(|z| if z.is_finite() { z.variance().sqrt() } else { 0.0 }).collect();
    // state mode: x = ξ, xh = ξ̂; error mode: x = ξ − ξ̂, xh unused
    let mut x = vec![0.0; n];
    let mut xh = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut z = vec![0.0; k];
    let mut stats = TrialStats { xbar_sq: vec![0.0; k], ..Default::default() };
    let mut batch_sum = 0.0;
    let mut in_batch = 0;
    let total = plan.burn_in + cfg.horizon;
    if let Some(w) = trace.as_deref_mut() {
        let mut head = match plan.mode {
            SimMode::State => String::from("step,x,xhat,sq_err"),
            SimMode::Error => String::from("step,x_err,sq_err"),
        };
        for j in 1..=k {
            match plan.mode {
                SimMode::State => head.push_str(&format!(",xbar_{j}")),
                SimMode::Error => head.push_str(&format!(",xbar_err_{j}")),
            }
        }
        if plan.mode == SimMode::State {
            for j in 1..=k {
                head.push_str(&format!(",b_{j}"));
            }
        }
        writeln!(w, "{head}").map_err(|e| Error::invalid("trace", e.to_string()))?;
    }
    for step in 0..total {
        for (j, zj) in z.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rngs[k + 1 + j]);
            *zj = sz[j] * e;
        }
        // decoder update at time i
        let err_x = match plan.mode {
            SimMode::State => {
                for (j, g) in &plan.gains {
                    let innov = x[j + 1] + z[*j] - xh[j + 1];
                    for i in 0..n {
                        xh[i] += g[i] * innov;
                    }
                }
                x[0] - xh[0]
            }
            SimMode::Error => {
                for (j, g) in &plan.gains {
                    let innov = x[j + 1] + z[*j];
                    for i in 0..n {
                        x[i] -= g[i] * innov;
                    }
                }
                x[0]
            }
        };
        if step >= plan.burn_in {
            let sq = err_x * err_x;
            stats.sum_sq += sq;
            batch_sum += sq;
            in_batch += 1;
            if in_batch == plan.batch {
                stats.batches.push(batch_sum / plan.batch as f64);
                batch_sum = 0.0;
                in_batch = 0;
            }
            if plan.mode == SimMode::State {
                for j in 0..k {
                    stats.xbar_sq[j] += x[j + 1] * x[j + 1];
                }
            }
            if let Some(w) = trace.as_deref_mut() {
                let mut line = format!("{}", step - plan.burn_in + 1);
                match plan.mode {
                    SimMode::State => {
                        line.push_str(&format!(",{:.15e},{:.15e},{:.15e}", x[0], xh[0], sq));
                        for j in 0..k {
                            line.push_str(&format!(",{:.15e}", x[j + 1]));
                        }
                        for j in 0..k {
                            if sys.sigma_z2[j].is_finite() {
                                line.push_str(&format!(",{:.15e}", x[j + 1] + z[j]));
                            } else {
                                line.push_str(",nan");
                            }
                        }
                    }
                    SimMode::Error => {
                        line.push_str(&format!(",{:.15e},{:.15e}", err_x, sq));
                        for j in 0..k {
                            line.push_str(&format!(",{:.15e}", x[j + 1]));
                        }
                    }
                }
                writeln!(w, "{line}").map_err(|e| Error::invalid("trace", e.to_string()))?;
            }
        }
        // propagate to time i + 1
        let v: f64 = StandardNormal.sample(&mut rngs[0]);
        noise[0] = sv * v;
        for j in 0..k {
            let w: f64 = StandardNormal.sample(&mut rngs[1 + j]);
            noise[j + 1] = sys.gains[j] * (noise[0] + sw[j] * w);
        }
        x = sys.f.apply(&x);
        for i in 0..n {
            x[i] += noise[i];
        }
        if plan.mode == SimMode::State {
            xh = sys.f.apply(&xh);
        }
    }
    Ok(stats)
}

fn single_channel_checks(sys: &AugmentedSystem, ss: &SteadyState) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut d = Vec::with_capacity(sys.k);
    let mut rho = Vec::with_capacity(sys.k);
    for j in 0..sys.k {
        let dk = if sys.sigma_z2[j].is_finite() {
            exact_decoder_mmse(&sys.restricted(&[j]))?
        } else {
            ss.sigma_x2.variance()
        };
        let s = ss.s[j];
        d.push(dk);
        rho.push(s * (1.0 - s / dk));
    }
    Ok((d, rho))
}

/// Exact covariance analysis and Monte Carlo of the scheme.
pub fn simulate(cfg: &SchemeConfig) -> Result<SimReport> {
    cfg.validate()?;
    let ss = steady_state(&cfg.model, &cfg.channels)?;
    let sz: Vec<ExtVariance> =
        (0..ss.k()).map(|k| sigma_z_from_dk(&ss, k, cfg.allocation.d_k[k])).collect::<Result<_>>()?;
    let sys = build_augmented(&ss, cfg.channels.sigma_w2(), &sz)?;
    let dec = exact_decoder(&sys)?;
    let plan = Plan::new(cfg, &ss, Some(&dec))?;
    let (d_k_check, rho_k_check) = single_channel_checks(&sys, &ss)?;
    let xbar_var_exact =
        ss.sigma_x2.is_finite().then(|| ss.s.iter().map(|s| ss.sigma_x2.variance() - s).collect::<Vec<_>>());
    let exact = cfg.exact_covariance.then_some(dec.filtered);

    let (mut empirical, mut se, mut xbar_emp) = (None, None, None);
    if cfg.monte_carlo {
        let trials: Vec<TrialStats> =
            (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, &plan, t, None)).collect::<Result<_>>()?;
        let count = (cfg.trials * cfg.horizon) as f64;
        let mean = trials.iter().map(|t| t.sum_sq).sum::<f64>() / count;
        let batches: Vec<f64> = trials.iter().flat_map(|t| t.batches.iter().copied()).collect();
        let nb = batches.len() as f64;
        let se_v = if batches.len() >= 2 {
            let bm = batches.iter().sum::<f64>() / nb;
            (batches.iter().map(|b| (b - bm).powi(2)).sum::<f64>() / (nb - 1.0) / nb).sqrt()
        } else {
            f64::NAN
        };
        empirical = Some(mean);
        se = Some(se_v);
        if plan.mode == SimMode::State {
            let k = ss.k();
            xbar_emp = Some((0..k).map(|j| trials.iter().map(|t| t.xbar_sq[j]).sum::<f64>() / count).collect());
        }
    }
    let within_4se = match (exact, empirical, se) {
        (Some(x), Some(e), Some(s)) if s.is_finite() => Some((x - e).abs() <= 4.0 * s),
        _ => None,
    };
    Ok(SimReport {
        target_d: cfg.allocation.d,
        sigma_z2: sz.iter().map(|z| z.variance()).collect(),
        achieved_mse_exact: exact,
        exact_gap: exact.map(|x| x - cfg.allocation.d),
        achieved_mse_empirical: empirical,
        std_error: se,
        within_4se,
        d_k_target: cfg.allocation.d_k.clone(),
        d_k_check,
        rho_k_target: cfg.allocation.rho_k.clone(),
        rho_k_check,
        xbar_var_exact,
        xbar_var_empirical: xbar_emp,
        s_joint_riccati: ss.s_joint_riccati,
        s_joint_fusion: ss.s_joint_fusion,
        fusion_gap: ss.s_joint_riccati - ss.s_joint_fusion,
        mode: plan.mode,
        burn_in: plan.burn_in,
        horizon: cfg.horizon,
        trials: cfg.trials,
        seed: cfg.seed,
    })
}

/// Writes the per-step trace of one trial as CSV.
pub fn write_trace(cfg: &SchemeConfig, trial: usize, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let ss = steady_state(&cfg.model, &cfg.channels)?;
    let plan = Plan::new(cfg, &ss, None)?;
    run_trial(cfg, &plan, trial, Some(out)).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ss(a: f64, w: &[f64]) -> SteadyState {
        steady_state(&SourceModel::new(a, 1.0).unwrap(), &ChannelSet::new(w.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn sigma_z_example() {
        let s = ss(0.0, &[1.0]);
        let z = sigma_z_from_dk(&s, 0, 2.0 / 3.0).unwrap();
        assert!((z.variance() - 0.25).abs() < 1e-14);
        assert!(!sigma_z_from_dk(&s, 0, 1.0).unwrap().is_finite());
        assert!(sigma_z_from_dk(&s, 0, 0.5).is_err());
        assert!(sigma_z_from_dk(&s, 0, 0.5 + 1e-9).unwrap().variance() < 1e-7);
    }

    #[test]
    fn two_channel_decoder() {
        let s = ss(0.0, &[1.0, 1.0]);
        let z = ExtVariance::from_variance(0.25).unwrap();
        let sys = build_augmented(&s, &[1.0, 1.0], &[z, z]).unwrap();
        assert!((exact_decoder_mmse(&sys).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn xbar_marginals() {
        let s = ss(0.7, &[1.0, 2.0]);
        let z = ExtVariance::from_variance(1.0).unwrap();
        let sys = build_augmented(&s, &[1.0, 2.0], &[z, z]).unwrap();
        let cov = lyapunov(&sys).unwrap();
        let sx = s.sigma_x2.variance();
        assert!((cov[(0, 0)] - sx).abs() < 1e-12);
        for k in 0..2 {
            assert!((cov[(k + 1, k + 1)] - (sx - s.s[k])).abs() < 1e-12);
        }
        assert!(cov[(1, 2)] > 0.0);
    }

    #[test]
    fn fusion_gap_example() {
        let r = fusion_discrepancy_report(&SourceModel::new(0.5, 1.0).unwrap(), &ChannelSet::symmetric(1.0, 2).unwrap(), None)
            .unwrap();
        assert!((r.gap - 0.010718).abs() < 1e-5);
        let r = fusion_discrepancy_report(&SourceModel::new(0.0, 1.0).unwrap(), &ChannelSet::symmetric(1.0, 2).unwrap(), None)
            .unwrap();
        assert!(r.gap.abs() < 1e-15);
    }
}
