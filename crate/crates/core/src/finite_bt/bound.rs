//! Nonasymptotic Berger-Tung bound with inter-block memory, evaluated exactly.
//!
//! For `n > 1` the code acts on `n` i.i.d. copies of the single-letter joint:
//! information densities add over components and the distortion of a block
//! is the per-letter average.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::info::{check_permutation, BtLayout};
use super::pmf::{outcome_count, FinitePmf, ENUMERATION_CAP};
use crate::error::{Error, Result};

const CHUNK: usize = 1 << 12;
/// Monte Carlo samples drawn per generator stream.
pub const MC_BLOCK: u64 = 1 << 16;

/// Parameters of a code: sizes, slacks, decoding order, thresholds and distortion.
///
/// Sizes are stored as natural logs so large block lengths do not overflow;
/// all per-observer arrays are indexed `[time][observer]` (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeParams {
    pub n: usize,
    pub log_l: Vec<Vec<f64>>,
    pub log_m: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// Decoding order: `pi[k]` is the (0-based) observer at position `k`.
    pub pi: Vec<usize>,
    /// Distortion threshold per time.
    pub d: Vec<f64>,
    /// Distortion measure `sd[x][xhat]`.
    pub distortion: Vec<Vec<f64>>,
}

fn grid<T: Clone>(t: usize, k: usize, v: T) -> Vec<Vec<T>> {
    vec![vec![v; k]; t]
}

impl CodeParams {
    /// Same sizes and slacks at every `(i, k)`; identity order.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(t: usize, k: usize, l: u64, m: u64, alpha: f64, beta: f64, d: Vec<f64>, distortion: Vec<Vec<f64>>) -> Self {
        Self {
            n: 1,
            log_l: grid(t, k, (l as f64).ln()),
            log_m: grid(t, k, (m as f64).ln()),
            alpha: grid(t, k, alpha),
            beta: grid(t, k, beta),
            pi: (0..k).collect(),
            d,
            distortion,
        }
    }

    /// Integer code sizes `L[i][k] ≥ M[i][k] ≥ 1`.
    pub fn set_sizes(&mut self, l: &[Vec<u64>], m: &[Vec<u64>]) -> Result<()> {
        for (li, mi) in l.iter().zip(m) {
            for (a, b) in li.iter().zip(mi) {
                if !(*a >= *b && *b >= 1) {
                    return Err(Error::invalid("sizes", format!("need L ≥ M ≥ 1, got L = {a}, M = {b}")));
                }
            }
        }
        self.log_l = l.iter().map(|r| r.iter().map(|v| (*v as f64).ln()).collect()).collect();
        self.log_m = m.iter().map(|r| r.iter().map(|v| (*v as f64).ln()).collect()).collect();
        Ok(())
    }

    pub fn validate(&self, layout: &BtLayout) -> Result<()> {
        let (t, k) = (layout.t, layout.k);
        if self.n == 0 {
            return Err(Error::invalid("n", "block length must be >= 1"));
        }
        for (name, g) in [("log_l", &self.log_l), ("log_m", &self.log_m), ("alpha", &self.alpha), ("beta", &self.beta)] {
            if g.len() != t || g.iter().any(|r| r.len() != k) {
                return Err(Error::invalid(name, format!("expected a {t}×{k} array")));
            }
            if g.iter().flatten().any(|v| v.is_nan()) {
                return Err(Error::invalid(name, "NaN entry"));
            }
        }
        for (li, mi) in self.log_l.iter().zip(&self.log_m) {
            for (a, b) in li.iter().zip(mi) {
                if !(*b >= 0.0 && *a >= *b) {
                    return Err(Error::invalid("sizes", format!("need L ≥ M ≥ 1, got log L = {a}, log M = {b}")));
                }
            }
        }
        check_permutation(&self.pi, k)?;
        if self.d.len() != t {
            return Err(Error::invalid("d", format!("expected {t} thresholds, got {}", self.d.len())));
        }
        let (x, xhat) = match (&layout.x, &layout.xhat) {
            (Some(x), Some(xh)) => (x, xh),
            _ => return Err(Error::AxisMismatch("the bound needs `X` and `Xhat` axes at every time".into())),
        };
        let _ = (x, xhat);
        Ok(())
    }
}

/// Precomputed per-letter quantities for the outcomes of positive probability.
struct Letters {
    probs: Vec<f64>,
    /// `[letter][i*K + k]`
    iota: Vec<f64>,
    /// `[letter][i*K + pos]`
    jota: Vec<f64>,
    /// `[letter][i]`
    dist: Vec<f64>,
    t: usize,
    k: usize,
}

impl Letters {
    fn build(pmf: &FinitePmf, p: &CodeParams) -> Result<Self> {
        let layout = BtLayout::detect(pmf)?;
        p.validate(&layout)?;
        let (t, k) = (layout.t, layout.k);
        let (xs, xhs) = (layout.x.clone().unwrap_or_default(), layout.xhat.clone().unwrap_or_default());
        for (&x, &xh) in xs.iter().zip(&xhs) {
            let (nx, nxh) = (pmf.axes()[x].size, pmf.axes()[xh].size);
            if p.distortion.len() != nx || p.distortion.iter().any(|r| r.len() != nxh) {
                return Err(Error::invalid(
                    "distortion",
                    format!("expected a {nx}×{nxh} table for axes {} and {}", pmf.axes()[x].label, pmf.axes()[xh].label),
                ));
            }
        }
        let iotas: Vec<_> = (0..t).flat_map(|i| (0..k).map(move |kk| (i, kk))).map(|(i, kk)| layout.iota(pmf, i, kk)).collect();
        let jotas: Vec<_> = (0..t)
            .flat_map(|i| (0..k).map(move |pos| (i, pos)))
            .map(|(i, pos)| layout.jota(pmf, i, pos, &p.pi))
            .collect();
        let mut out = Letters { probs: Vec::new(), iota: Vec::new(), jota: Vec::new(), dist: Vec::new(), t, k };
        let mut digits = vec![0; pmf.axes().len()];
        for (idx, &q) in pmf.probs().iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            pmf.digits(idx, &mut digits);
            out.probs.push(q);
            out.iota.extend(iotas.iter().map(|r| r.eval(&digits)));
            out.jota.extend(jotas.iter().map(|r| r.eval(&digits)));
            out.dist.extend(xs.iter().zip(&xhs).map(|(&x, &xh)| p.distortion[digits[x]][digits[xh]]));
        }
        Ok(out)
    }

    fn len(&self) -> usize {
        self.probs.len()
    }

    fn tuples(&self, n: usize) -> Result<usize> {
        let total = outcome_count(std::iter::repeat(self.len()).take(n));
        if total > ENUMERATION_CAP {
            return Err(Error::TooLarge { outcomes: total, cap: ENUMERATION_CAP });
        }
        Ok(total as usize)
    }
}

/// Sums of per-letter quantities over the components of one block.
struct Block {
    prob: f64,
    iota: Vec<f64>,
    jota: Vec<f64>,
    dist: Vec<f64>,
}

impl Block {
    fn new(l: &Letters) -> Self {
        let tk = l.t * l.k;
        Self { prob: 1.0, iota: vec![0.0; tk], jota: vec![0.0; tk], dist: vec![0.0; l.t] }
    }

    fn load(&mut self, l: &Letters, components: impl Iterator<Item = usize>, n: usize) {
        let tk = l.t * l.k;
        self.prob = 1.0;
        self.iota.iter_mut().for_each(|v| *v = 0.0);
        self.jota.iter_mut().for_each(|v| *v = 0.0);
        self.dist.iter_mut().for_each(|v| *v = 0.0);
        for c in components {
            self.prob *= l.probs[c];
            for j in 0..tk {
                self.iota[j] += l.iota[c * tk + j];
                self.jota[j] += l.jota[c * tk + j];
            }
            for i in 0..l.t {
                self.dist[i] += l.dist[c * l.t + i];
            }
        }
        self.dist.iter_mut().for_each(|v| *v /= n as f64);
    }
}

/// Which families of the error event occur in one block.
#[derive(Default, Clone, Copy)]
struct Events {
    distortion: bool,
    iota: bool,
    jota: bool,
}

impl Events {
    fn any(&self) -> bool {
        self.distortion || self.iota || self.jota
    }
}

fn classify(b: &Block, p: &CodeParams, t: usize, k: usize) -> Events {
    let mut e = Events::default();
    for i in 0..t {
        if b.dist[i] > p.d[i] {
            e.distortion = true;
        }
        for kk in 0..k {
            if b.iota[i * k + kk] > p.log_l[i][kk] - p.alpha[i][kk] {
                e.iota = true;
            }
        }
        for pos in 0..k {
            let j = p.pi[pos];
            if b.jota[i * k + pos] < p.log_l[i][j] - p.log_m[i][j] + p.beta[i][j] {
                e.jota = true;
            }
        }
    }
    e
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln Σ_{𝒦⊆[K]} exp(−Σ_{k∈𝒦} β_k)`, which factors as `Σ_k ln(1 + e^{−β_k})`.
fn log_subset_sum(beta: &[f64]) -> f64 {
    beta.iter().map(|b| softplus(-b)).sum()
}

/// The constant `γ` of the bound.
pub fn gamma(p: &CodeParams) -> f64 {
    let log_denominator: f64 = p
        .alpha
        .iter()
        .zip(&p.beta)
        .map(|(a, b)| log_subset_sum(b) + a.iter().map(|a| softplus(-a)).sum::<f64>())
        .sum();
    -(-log_denominator).exp_m1()
}

fn sharp_weight(b: &Block, p: &CodeParams, t: usize, k: usize) -> f64 {
    let mut log_w = 0.0;
    for i in 0..t {
        if b.dist[i] > p.d[i] {
            return 0.0;
        }
        for pos in 0..k {
            let j = p.pi[pos];
            if b.jota[i * k + pos] < p.log_l[i][j] - p.log_m[i][j] + p.beta[i][j] {
                return 0.0;
            }
        }
        for kk in 0..k {
            let ll = p.log_l[i][kk];
            // 1 / (e^ı / L + 1 − 1/L)
            let denom = (b.iota[i * k + kk] - ll).exp() - (-ll).exp_m1();
            log_w -= denom.ln();
        }
        log_w -= log_subset_sum(&p.beta[i]);
    }
    log_w.exp()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BtBound {
    /// `Pr[𝓔]`.
    pub prob_e: f64,
    /// Probability of some distortion excess.
    pub prob_distortion: f64,
    /// Probability of some `ı` threshold crossing.
    pub prob_iota: f64,
    /// Probability of some `ȷ` threshold failure.
    pub prob_jota: f64,
    pub gamma: f64,
    /// `min(1, Pr[𝓔] + γ)`.
    pub epsilon_bound: f64,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    e: f64,
    distortion: f64,
    iota: f64,
    jota: f64,
    sharp: f64,
}

impl std::ops::Add for Sums {
    type Output = Sums;
    fn add(self, o: Sums) -> Sums {
        Sums {
            e: self.e + o.e,
            distortion: self.distortion + o.distortion,
            iota: self.iota + o.iota,
            jota: self.jota + o.jota,
            sharp: self.sharp + o.sharp,
        }
    }
}

fn enumerate(pmf: &FinitePmf, p: &CodeParams) -> Result<Sums> {
    let letters = Letters::build(pmf, p)?;
    let total = letters.tuples(p.n)?;
    let s = letters.len();
    let (t, k, n) = (letters.t, letters.k, p.n);
    let chunks: Vec<Sums> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Sums::default();
            let mut block = Block::new(&letters);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let comps = (0..n).scan(idx, |rest, _| {
                    let d = *rest % s;
                    *rest /= s;
                    Some(d)
                });
                block.load(&letters, comps, n);
                let ev = classify(&block, p, t, k);
                let q = block.prob;
                if ev.any() {
                    acc.e += q;
                }
                if ev.distortion {
                    acc.distortion += q;
                }
                if ev.iota {
                    acc.iota += q;
                }
                if ev.jota {
                    acc.jota += q;
                }
                acc.sharp += q * sharp_weight(&block, p, t, k);
            }
            acc
        })
        .collect();
    Ok(chunks.into_iter().fold(Sums::default(), |a, b| a + b))
}

/// Upper bound `ε ≤ Pr[𝓔] + γ` on the excess-distortion probability.
pub fn evaluate_bt_bound(pmf: &FinitePmf, p: &CodeParams) -> Result<BtBound> {
    let s = enumerate(pmf, p)?;
    let g = gamma(p);
    let prob_e = s.e.min(1.0);
    Ok(BtBound {
        prob_e,
        prob_distortion: s.distortion.min(1.0),
        prob_iota: s.iota.min(1.0),
        prob_jota: s.jota.min(1.0),
        gamma: g,
        epsilon_bound: (prob_e + g).min(1.0),
    })
}

/// Lower bound on the probability of success `1 − ε` before weakening.
pub fn evaluate_bt_sharp(pmf: &FinitePmf, p: &CodeParams) -> Result<f64> {
    Ok(enumerate(pmf, p)?.sharp)
}

/// Both bounds from a single enumeration.
pub fn evaluate_bt_both(pmf: &FinitePmf, p: &CodeParams) -> Result<(BtBound, f64)> {
    let s = enumerate(pmf, p)?;
    let g = gamma(p);
    let prob_e = s.e.min(1.0);
    let bound = BtBound {
        prob_e,
        prob_distortion: s.distortion.min(1.0),
        prob_iota: s.iota.min(1.0),
        prob_jota: s.jota.min(1.0),
        gamma: g,
        epsilon_bound: (prob_e + g).min(1.0),
    };
    Ok((bound, s.sharp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Binomial standard error `√(p̂(1 − p̂)/N)`.
    pub std_error: f64,
    pub samples: u64,
}

/// Monte Carlo estimate of `Pr[𝓔]`.
///
/// Samples are drawn in blocks of [`MC_BLOCK`]; block `b` uses stream `b` of a
/// ChaCha8 generator keyed by `seed`, so the result does not depend on the
/// number of worker threads.
pub fn estimate_event_probability(pmf: &FinitePmf, p: &CodeParams, samples: u64, seed: u64) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    let letters = Letters::build(pmf, p)?;
    let mut cdf = Vec::with_capacity(letters.len());
    let mut acc = 0.0;
    for q in &letters.probs {
        acc += q;
        cdf.push(acc);
    }
    let (t, k, n) = (letters.t, letters.k, p.n);
    let blocks = samples.div_ceil(MC_BLOCK);
    let hits: Vec<u64> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut block = Block::new(&letters);
            let mut comps = vec![0usize; n];
            let mut hits = 0;
            for _ in 0..count {
                for c in comps.iter_mut() {
                    let u: f64 = rng.random::<f64>() * acc;
                    *c = cdf.partition_point(|v| *v <= u).min(cdf.len() - 1);
                }
                block.load(&letters, comps.iter().copied(), n);
                if classify(&block, p, t, k).any() {
                    hits += 1;
                }
            }
            hits
        })
        .collect();
    let hits: u64 = hits.iter().sum();
    let estimate = hits as f64 / samples as f64;
    Ok(McEstimate { estimate, std_error: (estimate * (1.0 - estimate) / samples as f64).sqrt(), samples })
}
