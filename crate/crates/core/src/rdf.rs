//! Rate-distortion functions of the causal Gaussian CEO problem.
//!
//! Every rate is computed in nats; [`Unit`] converts at the boundary. The sum
//! rate is a separable convex program in the per-observer decoder MMSEs
//! `d_k`. It is solved in the precision-loss coordinates
//! `x_k = 1/s_k − 1/d_k ∈ [0, 1/s_k − 1/σ_X²]`, where the distortion
//! constraint reads `Σ x_k ≤ 1/s_J − 1/d` and each rate term is convex.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{steady_state, ChannelSet, ExtVariance, JointMode, SourceModel, SteadyState};

/// Relative margin defining "strictly inside" the feasibility window.
pub const FEASIBILITY_MARGIN: f64 = 1e-12;
/// Relative tolerance at which channels count as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Slack allowed in the loss bound.
pub const LOSS_SLACK: f64 = 1e-9;

const MAX_OUTER_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Nats,
    Bits,
}

impl Unit {
    /// Converts a value in nats to this unit.
    pub fn from_nats(&self, nats: f64) -> f64 {
        match self {
            Unit::Nats => nats,
            Unit::Bits => nats / LN_2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Unit::Nats => "nats",
            Unit::Bits => "bits",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nats" => Ok(Unit::Nats),
            "bits" => Ok(Unit::Bits),
            other => Err(Error::invalid("unit", format!("expected `nats` or `bits`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdfQuery {
    pub model: SourceModel,
    pub channels: ChannelSet,
    /// Target distortion.
    pub d: f64,
    pub mode: JointMode,
    pub unit: Unit,
}

impl RdfQuery {
    pub fn new(model: SourceModel, channels: ChannelSet, d: f64) -> Self {
        Self { model, channels, d, mode: JointMode::default(), unit: Unit::default() }
    }

    pub fn with_mode(mut self, mode: JointMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_unit(mut self, unit: Unit) -> Self {
        self.unit = unit;
        self
    }

    pub fn with_d(mut self, d: f64) -> Self {
        self.d = d;
        self
    }

    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn steady_state(&self) -> Result<SteadyState> {
        steady_state(&self.model, &self.channels)
    }

    fn check_d(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::invalid("d", format!("target distortion must be finite and > 0, got {}", self.d)));
        }
        Ok(())
    }
}

/// Open feasibility window `(lower, upper)` for the target distortion.
pub fn feasibility_window(ss: &SteadyState, mode: JointMode) -> (f64, f64) {
    (ss.joint_mmse(mode), ss.sigma_x2.variance())
}

fn check_window(d: f64, lower: f64, upper: ExtVariance) -> Result<()> {
    let ok_low = d >= lower * (1.0 + FEASIBILITY_MARGIN);
    let ok_high = !upper.is_finite() || d <= upper.variance() * (1.0 - FEASIBILITY_MARGIN);
    if ok_low && ok_high {
        Ok(())
    } else {
        Err(Error::Infeasible { d, lower, upper: upper.variance() })
    }
}

/// An operating point of the sum-rate program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub d: f64,
    /// Per-observer MMSE the allocation is built on (causal or one-shot).
    pub s_k: Vec<f64>,
    /// Per-observer decoder MMSEs; `inf` for an idle observer of an unstable source.
    pub d_k: Vec<f64>,
    pub rho_k: Vec<f64>,
    pub rho_bar_k: Vec<f64>,
    /// Largest auxiliary MMSE `s_k (1 − s_k/σ_X²)`.
    pub rho_max_k: Vec<f64>,
    /// Observers that send a nonzero rate (`d_k < σ_X²`).
    pub active: Vec<bool>,
    /// Waterfilling level; only set by [`waterfilling`].
    pub lambda: Option<f64>,
    /// Lagrange multiplier of the distortion constraint; only set by the convex solver.
    pub multiplier: Option<f64>,
    /// Per-observer rate terms in nats.
    pub rate_terms: Vec<f64>,
    /// `½ log(d̄/d)` in nats.
    pub base_rate: f64,
    /// `base_rate + Σ rate_terms` in nats.
    pub total_rate: f64,
    /// True when predicted variances are the stationary variance (no memory).
    pub memoryless: bool,
}

impl Allocation {
    /// Slack `1/s_J − Σ(1/s_k − 1/d_k) − 1/d` of the distortion constraint.
    pub fn constraint_slack(&self, s_joint: f64) -> f64 {
        let used: f64 = self.s_k.iter().zip(&self.d_k).map(|(s, d)| 1.0 / s - 1.0 / d).sum();
        1.0 / s_joint - used - 1.0 / self.d
    }

    /// Observers whose description rate is unbounded (`d_k = s_k`).
    pub fn unbounded(&self) -> Vec<bool> {
        self.rho_k.iter().map(|r| *r == 0.0).collect()
    }
}

/// How predicted variances `d̄ = α d + β` are formed.
#[derive(Debug, Clone, Copy)]
struct Memory {
    alpha: f64,
    beta: f64,
    memoryless: bool,
}

impl Memory {
    fn causal(m: &SourceModel) -> Self {
        Self { alpha: m.a() * m.a(), beta: m.sigma_v2(), memoryless: false }
    }

    fn memoryless(sigma_x2: f64) -> Self {
        Self { alpha: 0.0, beta: sigma_x2, memoryless: true }
    }

    fn bar(&self, d: f64) -> f64 {
        if self.alpha == 0.0 {
            self.beta
        } else {
            self.alpha * d + self.beta
        }
    }
}

/// One observer's slice of the program in precision-loss coordinates.
#[derive(Debug, Clone, Copy)]
struct Channel {
    s: f64,
    x_max: f64,
    sigma_x2: ExtVariance,
    mem: Memory,
}

impl Channel {
    fn new(s: f64, sigma_x2: ExtVariance, mem: Memory) -> Self {
        Self { s, x_max: 1.0 / s - sigma_x2.precision(), sigma_x2, mem }
    }

    fn d_of(&self, x: f64) -> f64 {
        if x >= self.x_max {
            self.sigma_x2.variance()
        } else {
            1.0 / (1.0 / self.s - x)
        }
    }

    /// `½ log[(d̄_k − s_k)/(d_k − s_k) · d_k/d̄_k]` written as `½ log(1 − s/d̄) − ½ log(x s)`.
    fn rate(&self, x: f64) -> f64 {
        if x >= self.x_max {
            return 0.0;
        }
        if x <= 0.0 {
            return f64::INFINITY;
        }
        let dbar = self.mem.bar(self.d_of(x));
        let r = 0.5 * ((-self.s / dbar).ln_1p() - (x * self.s).ln());
        r.max(0.0)
    }

    /// Derivative of [`Channel::rate`] in `x`.
    fn slope(&self, x: f64) -> f64 {
        let Memory { alpha, beta, .. } = self.mem;
        let curvature = if alpha == 0.0 {
            0.0
        } else {
            // α d² s / ((d̄ − s) d̄), divided through by d² so d = ∞ is harmless
            let inv_d = 1.0 / self.d_of(x);
            alpha * self.s / ((alpha + (beta - self.s) * inv_d) * (alpha + beta * inv_d))
        };
        0.5 * (curvature - 1.0 / x)
    }

    /// Minimizer of `rate(x) + μ x` over `(0, x_max]`.
    fn respond(&self, mu: f64) -> f64 {
        if self.slope(self.x_max) <= -mu {
            return self.x_max;
        }
        // rate' ≥ −1/(2x) bounds the root from above
        let mut hi = if mu > 0.0 { self.x_max.min(0.5 / mu) } else { self.x_max };
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.slope(mid) < -mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

struct Program {
    channels: Vec<Channel>,
    budget: f64,
}

impl Program {
    fn new(s: &[f64], s_joint: f64, d: f64, sigma_x2: ExtVariance, mem: Memory) -> Self {
        Self {
            channels: s.iter().map(|s| Channel::new(*s, sigma_x2, mem)).collect(),
            budget: 1.0 / s_joint - 1.0 / d,
        }
    }

    fn respond(&self, mu: f64) -> Vec<f64> {
        self.channels.iter().map(|c| c.respond(mu)).collect()
    }

    /// Dual bisection on the multiplier of `Σ x_k ≤ B`.
    fn solve(&self) -> Result<(Vec<f64>, f64)> {
        let b = self.budget;
        let total = |x: &[f64]| x.iter().sum::<f64>();
        let free = self.respond(0.0);
        if total(&free) <= b {
            return Ok((free, 0.0));
        }
        let mut lo = 0.0;
        let mut hi = self.channels.len() as f64 / (2.0 * b);
        let mut x_hi = self.respond(hi);
        for _ in 0..MAX_OUTER_ITERATIONS {
            let residual = b - total(&x_hi);
            if residual <= 1e-13 * b || hi - lo <= 1e-15 * hi {
                return Ok((x_hi, hi));
            }
            let mid = 0.5 * (lo + hi);
            let x_mid = self.respond(mid);
            if total(&x_mid) > b {
                lo = mid;
            } else {
                hi = mid;
                x_hi = x_mid;
            }
        }
        Err(Error::NonConvergence { iterations: MAX_OUTER_ITERATIONS, residual: b - total(&x_hi) })
    }

    fn allocation(&self, d: f64, x: &[f64], base_rate: f64) -> Allocation {
        let mut alloc = Allocation {
            d,
            s_k: self.channels.iter().map(|c| c.s).collect(),
            d_k: Vec::new(),
            rho_k: Vec::new(),
            rho_bar_k: Vec::new(),
            rho_max_k: Vec::new(),
            active: Vec::new(),
            lambda: None,
            multiplier: None,
            rate_terms: Vec::new(),
            base_rate,
            total_rate: 0.0,
            memoryless: self.channels[0].mem.memoryless,
        };
        for (c, x) in self.channels.iter().zip(x) {
            alloc.d_k.push(c.d_of(*x));
            alloc.active.push(*x < c.x_max);
            alloc.rate_terms.push(c.rate(*x));
        }
        fill_rho(&mut alloc, &self.channels);
        alloc.total_rate = alloc.base_rate + alloc.rate_terms.iter().sum::<f64>();
        alloc
    }
}

fn fill_rho(alloc: &mut Allocation, channels: &[Channel]) {
    alloc.rho_k.clear();
    alloc.rho_bar_k.clear();
    alloc.rho_max_k.clear();
    for (c, d) in channels.iter().zip(&alloc.d_k) {
        let s = c.s;
        alloc.rho_k.push(s * (1.0 - s / d));
        alloc.rho_bar_k.push(s * (1.0 - s / c.mem.bar(*d)));
        alloc.rho_max_k.push(s * (1.0 - s * c.sigma_x2.precision()));
    }
}

fn base_rate(mem: Memory, d: f64) -> f64 {
    0.5 * (mem.bar(d) / d).ln()
}

/// Causal rate-distortion function of the source seen without noise, `½ log(d̄/d)`.
pub fn direct_rdf(q: &RdfQuery) -> Result<f64> {
    q.check_d()?;
    let sx = crate::model::stationary_variance(&q.model);
    if sx.is_finite() && q.d >= sx.variance() {
        return Ok(0.0);
    }
    Ok(q.unit.from_nats(base_rate(Memory::causal(&q.model), q.d)))
}

fn remote_nats(q: &RdfQuery, ss: &SteadyState) -> Result<f64> {
    q.check_d()?;
    if ss.sigma_x2.is_finite() && q.d >= ss.sigma_x2.variance() {
        return Ok(0.0);
    }
    let sj = ss.joint_mmse(q.mode);
    check_window(q.d, sj, ss.sigma_x2)?;
    let dbar = Memory::causal(&q.model).bar(q.d);
    Ok(0.5 * ((dbar - sj) / (q.d - sj)).ln())
}

/// Remote rate-distortion function: one encoder sees every observation.
pub fn remote_rdf(q: &RdfQuery) -> Result<f64> {
    let ss = q.steady_state()?;
    Ok(q.unit.from_nats(remote_nats(q, &ss)?))
}

/// Remote rate-distortion function as `½ log(a² + (s̄_J − s_J)/(d − s_J))`.
pub fn remote_rdf_alt(q: &RdfQuery) -> Result<f64> {
    q.check_d()?;
    let ss = q.steady_state()?;
    if ss.sigma_x2.is_finite() && q.d >= ss.sigma_x2.variance() {
        return Ok(0.0);
    }
    let sj = ss.joint_mmse(q.mode);
    check_window(q.d, sj, ss.sigma_x2)?;
    let a2 = q.model.a() * q.model.a();
    let sj_bar = q.model.predict(sj);
    Ok(q.unit.from_nats(0.5 * (a2 + (sj_bar - sj) / (q.d - sj)).ln()))
}

fn ceo_with(q: &RdfQuery, ss: &SteadyState) -> Result<Allocation> {
    q.check_d()?;
    let sj = ss.joint_mmse(q.mode);
    check_window(q.d, sj, ss.sigma_x2)?;
    let mem = Memory::causal(&q.model);
    let prog = Program::new(&ss.s, sj, q.d, ss.sigma_x2, mem);
    let (x, mu) = prog.solve()?;
    let mut alloc = prog.allocation(q.d, &x, base_rate(mem, q.d));
    alloc.multiplier = Some(mu);
    Ok(alloc)
}

/// Causal CEO sum rate: minimum over `{d_k}` of the separable convex program.
///
/// Returns the rate in the query unit and the minimizing allocation (rates in nats).
pub fn ceo_rdf(q: &RdfQuery) -> Result<(f64, Allocation)> {
    let ss = q.steady_state()?;
    let alloc = ceo_with(q, &ss)?;
    Ok((q.unit.from_nats(alloc.total_rate), alloc))
}

fn symmetric_with(q: &RdfQuery, ss: &SteadyState) -> Result<Allocation> {
    q.check_d()?;
    if !ss.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::invalid("sigma_w2", "symmetric formula needs equal per-observer MMSEs"));
    }
    let sj = ss.joint_mmse(q.mode);
    check_window(q.d, sj, ss.sigma_x2)?;
    let mem = Memory::causal(&q.model);
    let k = ss.k() as f64;
    let c = Channel::new(ss.s[0], ss.sigma_x2, mem);
    let x = ((1.0 / sj - 1.0 / q.d) / k).min(c.x_max);
    let prog = Program { channels: vec![c; ss.k()], budget: k * x };
    Ok(prog.allocation(q.d, &vec![x; ss.k()], base_rate(mem, q.d)))
}

/// Closed form for observers with equal per-observer MMSE.
pub fn ceo_rdf_symmetric(q: &RdfQuery) -> Result<(f64, Allocation)> {
    let ss = q.steady_state()?;
    let alloc = symmetric_with(q, &ss)?;
    Ok((q.unit.from_nats(alloc.total_rate), alloc))
}

/// One-shot MMSEs `(σ²_{X|Y^k}, σ²_{X|Y^[K]})` of the stationary source.
pub fn one_shot_mmses(sigma_x2: ExtVariance, ch: &ChannelSet) -> (Vec<f64>, f64) {
    let px = sigma_x2.precision();
    let s = ch.precisions().map(|c| 1.0 / (px + c)).collect();
    (s, 1.0 / (px + ch.total_precision()))
}

/// Classical CEO sum rate of encoders and decoder that keep no memory.
pub fn memoryless_ceo_rdf(q: &RdfQuery) -> Result<(f64, Allocation)> {
    q.check_d()?;
    let sx = crate::model::stationary_variance(&q.model);
    if !sx.is_finite() {
        return Err(Error::invalid(
            "a",
            format!("|a| = {} >= 1: without memory the unstable source cannot be tracked at finite rate", q.model.a().abs()),
        ));
    }
    let (s, sj) = one_shot_mmses(sx, &q.channels);
    check_window(q.d, sj, sx)?;
    let mem = Memory::memoryless(sx.variance());
    let prog = Program::new(&s, sj, q.d, sx, mem);
    let (x, mu) = prog.solve()?;
    let mut alloc = prog.allocation(q.d, &x, base_rate(mem, q.d));
    alloc.multiplier = Some(mu);
    Ok((q.unit.from_nats(alloc.total_rate), alloc))
}

fn waterfilling_with(q: &RdfQuery, ss: &SteadyState) -> Result<Allocation> {
    q.check_d()?;
    let sj = ss.joint_mmse(q.mode);
    check_window(q.d, sj, ss.sigma_x2)?;
    let mem = Memory::causal(&q.model);
    let prog = Program::new(&ss.s, sj, q.d, ss.sigma_x2, mem);
    // Σ min(y, x_max_k) = B is piecewise linear in the level y = 1/λ
    let mut caps: Vec<f64> = prog.channels.iter().map(|c| c.x_max).collect();
    caps.sort_by(f64::total_cmp);
    let k = caps.len();
    let mut level = caps[k - 1];
    let mut filled = 0.0;
    for (j, cap) in caps.iter().enumerate() {
        let y = (prog.budget - filled) / (k - j) as f64;
        if y <= *cap {
            level = y;
            break;
        }
        filled += cap;
    }
    let x: Vec<f64> = prog.channels.iter().map(|c| level.min(c.x_max)).collect();
    let mut alloc = prog.allocation(q.d, &x, base_rate(mem, q.d));
    alloc.lambda = Some(1.0 / level);
    Ok(alloc)
}

/// Upper bound from the waterfilling allocation `1/s_k − 1/d_k = min(1/λ, 1/s_k − 1/σ_X²)`.
pub fn waterfilling(q: &RdfQuery) -> Result<(f64, Allocation)> {
    let ss = q.steady_state()?;
    let alloc = waterfilling_with(q, &ss)?;
    Ok((q.unit.from_nats(alloc.total_rate), alloc))
}

fn symmetric_s1(q: &RdfQuery, ss: &SteadyState) -> Result<f64> {
    q.check_d()?;
    if !ss.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::invalid("sigma_w2", "many-observer limit needs equal per-observer MMSEs"));
    }
    if ss.sigma_x2.is_finite() && q.d >= ss.sigma_x2.variance() {
        return Err(Error::Infeasible { d: q.d, lower: 0.0, upper: ss.sigma_x2.variance() });
    }
    Ok(ss.s[0])
}

/// Closed-form many-observer limit `½ log(d̄/d) + ½ (1/d − 1/d̄)/(1/s_1 − 1/σ_X²)`.
pub fn large_k_limit(q: &RdfQuery) -> Result<f64> {
    let ss = q.steady_state()?;
    let s1 = symmetric_s1(q, &ss)?;
    let mem = Memory::causal(&q.model);
    let dbar = mem.bar(q.d);
    let extra = 0.5 * (1.0 / q.d - 1.0 / dbar) / (1.0 / s1 - ss.sigma_x2.precision());
    Ok(q.unit.from_nats(base_rate(mem, q.d) + extra))
}

/// Limit of the fusion-mode symmetric sequence obtained by linearizing the
/// rate term at `d_k = σ_X²`: `½ log(d̄/d) − g'(x_max) (1/d − 1/σ_X²)`.
///
/// Coincides with [`large_k_limit`] when `a = 0`.
pub fn large_k_sequence_limit(q: &RdfQuery) -> Result<f64> {
    let ss = q.steady_state()?;
    let s1 = symmetric_s1(q, &ss)?;
    let mem = Memory::causal(&q.model);
    let c = Channel::new(s1, ss.sigma_x2, mem);
    let extra = -c.slope(c.x_max) * (1.0 / q.d - ss.sigma_x2.precision());
    Ok(q.unit.from_nats(base_rate(mem, q.d) + extra))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeKReport {
    pub limit: f64,
    pub sequence_limit: f64,
    pub ks: Vec<usize>,
    pub rates: Vec<f64>,
    /// `|R_K − limit|`.
    pub errors: Vec<f64>,
    /// `max_K K |R_K − limit|`.
    pub fitted_c: f64,
    pub decreasing: bool,
}

/// Fusion-mode symmetric rates for `K = 2, 4, …, k_max` against [`large_k_limit`].
pub fn large_k_report(model: SourceModel, sigma_w2: f64, d: f64, k_max: usize, unit: Unit) -> Result<LargeKReport> {
    let base = RdfQuery::new(model, ChannelSet::symmetric(sigma_w2, 1)?, d).with_unit(unit);
    let limit = large_k_limit(&base)?;
    let sequence_limit = large_k_sequence_limit(&base)?;
    let mut ks = Vec::new();
    let mut k = 2;
    while k <= k_max {
        ks.push(k);
        k *= 2;
    }
    let mut rates = Vec::with_capacity(ks.len());
    for &k in &ks {
        let q = RdfQuery::new(model, ChannelSet::symmetric(sigma_w2, k)?, d)
            .with_mode(JointMode::Fusion)
            .with_unit(unit);
        rates.push(ceo_rdf_symmetric(&q)?.0);
    }
    let errors: Vec<f64> = rates.iter().map(|r| (r - limit).abs()).collect();
    let fitted_c = ks.iter().zip(&errors).map(|(k, e)| *k as f64 * e).fold(0.0, f64::max);
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    Ok(LargeKReport { limit, sequence_limit, ks, rates, errors, fitted_c, decreasing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `R_CEO − R_rm`.
    pub lhs: f64,
    /// `(K − 1)(R_rm − R)`.
    pub rhs: f64,
    /// Whether the distortion is small enough for the bound to be claimed.
    pub condition_holds: bool,
    /// Whether `lhs ≤ rhs + 1e−9`.
    pub bound_holds: bool,
    /// All per-observer MMSEs equal, so equality is expected.
    pub equality: bool,
}

fn loss_with(q: &RdfQuery, ss: &SteadyState, ceo_nats: f64) -> Result<LossReport> {
    let remote = remote_nats(q, ss)?;
    let direct = base_rate(Memory::causal(&q.model), q.d);
    let k = ss.k() as f64;
    let sj = ss.joint_mmse(q.mode);
    let s_max = ss.s.iter().copied().fold(0.0, f64::max);
    let condition_holds = 1.0 / q.d >= 1.0 / sj + k * ss.sigma_x2.precision() - k / s_max;
    let lhs = ceo_nats - remote;
    let rhs = (k - 1.0) * (remote - direct);
    Ok(LossReport {
        lhs: q.unit.from_nats(lhs),
        rhs: q.unit.from_nats(rhs),
        condition_holds,
        bound_holds: lhs <= rhs + LOSS_SLACK,
        equality: ss.is_symmetric(SYMMETRY_TOL),
    })
}

/// Rate loss of isolated observers against `(K − 1)` times the remote-vs-direct gap.
pub fn loss_bound(q: &RdfQuery) -> Result<LossReport> {
    let ss = q.steady_state()?;
    let alloc = ceo_with(q, &ss)?;
    loss_with(q, &ss, alloc.total_rate)
}

/// Recomputes the auxiliary MMSEs of `alloc` and checks that every rate term
/// equals `½ log(ρ̄_k/ρ_k)`.
pub fn allocation_conversions(alloc: &Allocation, ss: &SteadyState) -> Result<Allocation> {
    let (s, mem) = if alloc.memoryless {
        (alloc.s_k.clone(), Memory::memoryless(ss.sigma_x2.variance()))
    } else {
        (ss.s.clone(), Memory::causal(&ss.model))
    };
    if s.len() != alloc.d_k.len() {
        return Err(Error::invalid("alloc", format!("{} decoder MMSEs for {} observers", alloc.d_k.len(), s.len())));
    }
    let channels: Vec<Channel> = s.iter().map(|s| Channel::new(*s, ss.sigma_x2, mem)).collect();
    for (c, d) in channels.iter().zip(&alloc.d_k) {
        let upper = ss.sigma_x2.variance();
        if !(*d >= c.s * (1.0 - 1e-12) && *d <= upper * (1.0 + 1e-12)) {
            return Err(Error::invalid("d_k", format!("{d} lies outside [{}, {upper}]", c.s)));
        }
    }
    let mut out = alloc.clone();
    out.s_k = s;
    fill_rho(&mut out, &channels);
    for (k, (rb, r)) in out.rho_bar_k.iter().zip(&out.rho_k).enumerate() {
        let from_rho = if *r == 0.0 { f64::INFINITY } else { 0.5 * (rb / r).ln() };
        let term = alloc.rate_terms[k];
        let agree = if from_rho.is_infinite() || term.is_infinite() {
            from_rho == term
        } else {
            (from_rho - term).abs() <= 1e-10 * term.abs().max(1.0)
        };
        if !agree {
            return Err(Error::invalid(
                "rate_terms",
                format!("observer {}: rate term {term} differs from ½ log(ρ̄/ρ) = {from_rho}", k + 1),
            ));
        }
    }
    Ok(out)
}

/// Flat record of every rate at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdfRecord {
    pub a: f64,
    pub sigma_v2: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma_w2: Vec<f64>,
    pub d: f64,
    pub mode: JointMode,
    pub unit: Unit,
    #[serde(rename = "R_direct")]
    pub r_direct: f64,
    #[serde(rename = "R_remote")]
    pub r_remote: f64,
    #[serde(rename = "R_ceo")]
    pub r_ceo: f64,
    #[serde(rename = "R_wf")]
    pub r_wf: f64,
    pub d_k: Vec<f64>,
    pub rho_k: Vec<f64>,
    pub lambda: f64,
    pub condition_holds: bool,
    pub loss_lhs: f64,
    pub loss_rhs: f64,
}

/// Evaluates every rate of the query in one pass.
pub fn rdf_record(q: &RdfQuery) -> Result<RdfRecord> {
    let ss = q.steady_state()?;
    let ceo = ceo_with(q, &ss)?;
    let wf = waterfilling_with(q, &ss)?;
    let loss = loss_with(q, &ss, ceo.total_rate)?;
    let u = q.unit;
    Ok(RdfRecord {
        a: q.model.a(),
        sigma_v2: q.model.sigma_v2(),
        k: q.k(),
        sigma_w2: q.channels.sigma_w2().to_vec(),
        d: q.d,
        mode: q.mode,
        unit: u,
        r_direct: direct_rdf(q)?,
        r_remote: u.from_nats(remote_nats(q, &ss)?),
        r_ceo: u.from_nats(ceo.total_rate),
        r_wf: u.from_nats(wf.total_rate),
        d_k: ceo.d_k,
        rho_k: ceo.rho_k,
        lambda: wf.lambda.unwrap_or(f64::NAN),
        condition_holds: loss.condition_holds,
        loss_lhs: loss.lhs,
        loss_rhs: loss.rhs,
    })
}
