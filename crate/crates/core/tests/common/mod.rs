#![allow(dead_code)]

use causal_ceo::finite_bt::{assemble, Axis, AxisRef, CausalKernel, Factor, FinitePmf, KernelRole};
use causal_ceo::model::{ChannelSet, SourceModel};
use causal_ceo::rdf::RdfQuery;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Filtered MMSE by plain fixed-point iteration, independent of the closed form.
pub fn riccati_oracle(a: f64, sigma_v2: f64, precision: f64, steps: usize) -> (f64, f64) {
    let mut p = sigma_v2 / (1.0 + sigma_v2 * precision);
    let mut q = sigma_v2;
    for _ in 0..steps {
        q = a * a * p + sigma_v2;
        p = 1.0 / (1.0 / q + precision);
    }
    (p, q)
}

/// Sum-rate program minimized by brute force over a grid of per-observer
/// precisions, with the distortion constraint active.
pub fn ceo_grid_oracle(a: f64, sigma_v2: f64, w: &[f64], d: f64) -> f64 {
    let sx2 = if a.abs() < 1.0 { sigma_v2 / (1.0 - a * a) } else { f64::INFINITY };
    let s: Vec<f64> = w.iter().map(|w| riccati_oracle(a, sigma_v2, 1.0 / w, 20_000).0).collect();
    let s_joint = riccati_oracle(a, sigma_v2, w.iter().map(|w| 1.0 / w).sum(), 20_000).0;
    let budget = 1.0 / s_joint - 1.0 / d;
    let xmax: Vec<f64> = s.iter().map(|s| 1.0 / s - 1.0 / sx2).collect();
    let term = |k: usize, x: f64| -> f64 {
        if x >= xmax[k] {
            return 0.0;
        }
        if x <= 0.0 {
            return f64::INFINITY;
        }
        let dk = 1.0 / (1.0 / s[k] - x);
        let dbar = a * a * dk + sigma_v2;
        0.5 * ((dbar - s[k]) / (dk - s[k]) * dk / dbar).ln()
    };
    let base = 0.5 * ((a * a * d + sigma_v2) / d).ln();
    let k = w.len();
    // last coordinate takes what is left of the budget
    let total = |x: &[f64]| -> f64 {
        let used: f64 = x.iter().sum();
        let last = budget - used;
        if last < 0.0 {
            return f64::INFINITY;
        }
        x.iter().enumerate().map(|(j, v)| term(j, *v)).sum::<f64>() + term(k - 1, last.min(xmax[k - 1]))
    };
    if k == 1 {
        return base + total(&[]);
    }
    let hi: Vec<f64> = (0..k - 1).map(|j| budget.min(xmax[j])).collect();
    let coarse = if k == 2 { 2000 } else { 300 };
    let mut lo_b = vec![0.0; k - 1];
    let mut hi_b = hi.clone();
    let mut best = (f64::INFINITY, vec![0.0; k - 1]);
    for level in 0..6 {
        let n = if level == 0 { coarse } else { 60 };
        let step: Vec<f64> = (0..k - 1).map(|j| (hi_b[j] - lo_b[j]) / n as f64).collect();
        let mut idx = vec![0usize; k - 1];
        loop {
            let x: Vec<f64> = (0..k - 1).map(|j| lo_b[j] + step[j] * idx[j] as f64).collect();
            let v = total(&x);
            if v < best.0 {
                best = (v, x);
            }
            let mut j = 0;
            loop {
                if j == k - 1 {
                    break;
                }
                idx[j] += 1;
                if idx[j] <= n {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == k - 1 {
                break;
            }
        }
        for j in 0..k - 1 {
            lo_b[j] = (best.1[j] - 2.0 * step[j]).max(0.0);
            hi_b[j] = (best.1[j] + 2.0 * step[j]).min(hi[j]);
        }
    }
    base + best.0
}

/// A random feasible Gaussian instance.
pub fn random_query(r: &mut ChaCha8Rng, max_k: usize) -> RdfQuery {
    let a = if r.random::<f64>() < 0.1 {
        if r.random::<bool>() {
            1.1
        } else {
            -1.1
        }
    } else {
        r.random_range(-0.95..0.95)
    };
    let sv = r.random_range(0.2..3.0);
    let k = r.random_range(1..=max_k);
    let w: Vec<f64> = (0..k).map(|_| r.random_range(0.1..4.0)).collect();
    let model = SourceModel::new(a, sv).unwrap();
    let ch = ChannelSet::new(w).unwrap();
    let q = RdfQuery::new(model, ch, 1.0);
    let ss = q.steady_state().unwrap();
    let lo = ss.s_joint_riccati;
    let hi = if ss.sigma_x2.is_finite() { ss.sigma_x2.variance() } else { 10.0 * lo };
    let t = r.random_range(0.02..0.98);
    q.with_d(lo + t * (hi - lo))
}

fn random_rows(r: &mut ChaCha8Rng, rows: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        let row: Vec<f64> = (0..width).map(|_| r.random::<f64>().powi(3) + 0.01).collect();
        let s: f64 = row.iter().sum();
        out.extend(row.iter().map(|v| v / s));
    }
    out
}

/// Dense random pmf over the given axes.
pub fn random_pmf(r: &mut ChaCha8Rng, axes: Vec<Axis>) -> FinitePmf {
    let n: usize = axes.iter().map(|a| a.size).product();
    let probs = random_rows(r, 1, n);
    FinitePmf::new(axes, probs).unwrap()
}

/// Three random processes `A`, `B`, `C` of length `t` over small alphabets.
pub fn random_triple(r: &mut ChaCha8Rng, t: usize) -> FinitePmf {
    let mut axes = Vec::new();
    for name in ["A", "B", "C"] {
        let size = r.random_range(2..=3);
        for i in 1..=t {
            axes.push(Axis::new(name, i, 0, size));
        }
    }
    // keep the dense table small
    while axes.iter().map(|a| a.size).product::<usize>() > 20_000 {
        let j = axes.iter().position(|a| a.size == 3).unwrap();
        axes[j].size = 2;
    }
    random_pmf(r, axes)
}

fn random_factor(r: &mut ChaCha8Rng, pmf: &FinitePmf, target: Axis, given: Vec<AxisRef>) -> Factor {
    let rows: usize = given.iter().map(|g| pmf.axes()[pmf.index_of(g).unwrap()].size).product();
    let width = target.size;
    Factor::new(vec![target], given, random_rows(r, rows, width)).unwrap()
}

pub struct ToySpec {
    pub t: usize,
    pub k: usize,
    pub x: usize,
    pub y: usize,
    pub u: usize,
    pub with_decoder: bool,
}

/// Source, memoryless observation channels, random causal separate encoders
/// and (optionally) a random causal decoder.
pub fn random_ceo_toy(r: &mut ChaCha8Rng, s: &ToySpec) -> FinitePmf {
    let xs: Vec<Axis> = (1..=s.t).map(|i| Axis::new("X", i, 0, s.x)).collect();
    let mut pmf = random_pmf(r, xs);
    for i in 1..=s.t {
        for k in 1..=s.k {
            let f = random_factor(r, &pmf, Axis::new("Y", i, k, s.y), vec![AxisRef::new("X", i, 0)]);
            pmf = pmf.extend(&f).unwrap();
        }
    }
    let mut kernels = Vec::new();
    for k in 1..=s.k {
        let mut factors = Vec::new();
        for i in 1..=s.t {
            let mut given: Vec<AxisRef> = (1..=i).map(|j| AxisRef::new("Y", j, k)).collect();
            given.extend((1..i).map(|j| AxisRef::new("U", j, k)));
            // sizes are needed before the U axes exist
            let rows: usize = given.iter().map(|g| if g.name == "Y" { s.y } else { s.u }).product();
            factors.push(Factor::new(vec![Axis::new("U", i, k, s.u)], given, random_rows(r, rows, s.u)).unwrap());
        }
        kernels.push(CausalKernel::new(KernelRole::Encoder(k), factors).unwrap());
    }
    if s.with_decoder {
        let mut factors = Vec::new();
        for i in 1..=s.t {
            let given: Vec<AxisRef> = (1..=s.k).map(|k| AxisRef::new("U", i, k)).collect();
            let rows = s.u.pow(s.k as u32);
            factors.push(Factor::new(vec![Axis::new("Xhat", i, 0, s.x)], given, random_rows(r, rows, s.x)).unwrap());
        }
        kernels.push(CausalKernel::new(KernelRole::Decoder, factors).unwrap());
    }
    assemble(&pmf, &kernels).unwrap()
}

/// One-shot toy with correlated observations and no source axes.
pub fn random_region_toy(r: &mut ChaCha8Rng, k: usize) -> FinitePmf {
    let ys: Vec<Axis> = (1..=k).map(|o| Axis::new("Y", 1, o, 2)).collect();
    let mut pmf = random_pmf(r, ys);
    for o in 1..=k {
        let f = random_factor(r, &pmf, Axis::new("U", 1, o, 2), vec![AxisRef::new("Y", 1, o)]);
        pmf = pmf.extend(&f).unwrap();
    }
    pmf
}

pub fn hamming(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|x| (0..n).map(|y| if x == y { 0.0 } else { 1.0 }).collect()).collect()
}
