//! Achievable per-observer rates and the matching code sizes.

use serde::{Deserialize, Serialize};

use super::bound::CodeParams;
use super::info::{causally_conditioned_di, check_permutation, directed_information, BtLayout};
use super::pmf::{names, FinitePmf};
use crate::error::{Error, Result};

/// Tolerance on conditional mutual informations that must vanish.
pub const MARKOV_TOL: f64 = 1e-12;

/// Checks that each `U_i^k` depends on the rest of the joint only through
/// `(Y_[i]^k, U_[i−1]^k)`, i.e. that observers encode separately and causally.
pub fn check_separate_encoding(pmf: &FinitePmf) -> Result<()> {
    let layout = BtLayout::detect(pmf)?;
    for k in 0..layout.k {
        for i in 0..layout.t {
            let mut cond = layout.y[k][..=i].to_vec();
            cond.extend_from_slice(&layout.u[k][..i]);
            let rest: Vec<usize> = (0..pmf.axes().len())
                .filter(|a| !cond.contains(a))
                .filter(|&a| {
                    let l = &pmf.axes()[a].label;
                    l.name != names::ESTIMATE && !(l.name == names::AUXILIARY && l.observer == k + 1 && l.time > i)
                })
                .collect();
            let mi = pmf.mutual_information(&[layout.u[k][i]], &rest, &cond);
            if mi > MARKOV_TOL {
                return Err(Error::Factorization(format!(
                    "U at time {} of observer {} carries {mi:e} nats about other axes beyond its own inputs",
                    i + 1,
                    k + 1
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Decoding order (0-based observers).
    pub pi: Vec<usize>,
    /// Rate bound of each observer, indexed by observer.
    pub per_observer: Vec<f64>,
    pub sum: f64,
    /// `I(Y^{[K]} → U^{[K]})`, which the sum must reproduce.
    pub total_di: f64,
}

/// Rate bounds for decoding order `pi`: observer `π(k)` needs
/// `I(Y^{π(k)} → U^{π(k)} ‖ U^{π([k−1])}, 𝒟U^{[K]})`.
pub fn achievable_rates(pmf: &FinitePmf, pi: &[usize]) -> Result<Rates> {
    check_separate_encoding(pmf)?;
    let layout = BtLayout::detect(pmf)?;
    check_permutation(pi, layout.k)?;
    let delayed = layout.u_joint(&layout.all_observers()).delayed();
    let mut per_observer = vec![0.0; layout.k];
    for (pos, &j) in pi.iter().enumerate() {
        let given = layout.u_joint(&pi[..pos]).concat(&delayed)?;
        per_observer[j] = causally_conditioned_di(pmf, &layout.y_process(j), &layout.u_process(j), &given)?;
    }
    let all = layout.all_observers();
    let total_di = directed_information(pmf, &layout.y_joint(&all), &layout.u_joint(&all))?;
    Ok(Rates { pi: pi.to_vec(), sum: per_observer.iter().sum(), per_observer, total_di })
}

/// Code sizes for block length `n` and slack `δ`, indexed `[time][observer]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSizes {
    pub n: usize,
    pub delta: f64,
    pub pi: Vec<usize>,
    /// `I(Y_[i]^k; U_i^k | U_[i−1]^k)`.
    pub info: Vec<Vec<f64>>,
    /// `E[ȷ^k]` at the position of `k` in `pi`.
    pub divergence: Vec<Vec<f64>>,
    pub log_l_target: Vec<Vec<f64>>,
    pub log_m_target: Vec<Vec<f64>>,
    pub l: Vec<Vec<u64>>,
    pub m: Vec<Vec<u64>>,
    pub alpha: f64,
    pub beta: f64,
}

// e^x rounded up, forgiving the last few ulps so exact integers stay put
fn ceil_exp(x: f64) -> Result<u64> {
    let v = (x.exp() * (1.0 - 1e-12)).ceil().max(1.0);
    if v.is_nan() || v >= u64::MAX as f64 {
        return Err(Error::invalid("n", format!("code size e^{x} does not fit in 64 bits")));
    }
    Ok(v as u64)
}

/// `log L ≥ n·I + 2nδ`, `log M ≥ log L − n·D + 2nδ`, `α = β = nδ`, with `1 ≤ M ≤ L`.
pub fn select_code_sizes(pmf: &FinitePmf, pi: &[usize], delta: f64, n: usize) -> Result<CodeSizes> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "block length must be >= 1"));
    }
    let layout = BtLayout::detect(pmf)?;
    check_permutation(pi, layout.k)?;
    let nf = n as f64;
    let expect = |r: &super::info::LogRatio| {
        let mut digits = vec![0; pmf.axes().len()];
        pmf.probs()
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(idx, p)| {
                pmf.digits(idx, &mut digits);
                p * r.eval(&digits)
            })
            .sum::<f64>()
    };
    let (t, k) = (layout.t, layout.k);
    let mut out = CodeSizes {
        n,
        delta,
        pi: pi.to_vec(),
        info: vec![vec![0.0; k]; t],
        divergence: vec![vec![0.0; k]; t],
        log_l_target: vec![vec![0.0; k]; t],
        log_m_target: vec![vec![0.0; k]; t],
        l: vec![vec![1; k]; t],
        m: vec![vec![1; k]; t],
        alpha: nf * delta,
        beta: nf * delta,
    };
    for i in 0..t {
        for kk in 0..k {
            out.info[i][kk] = expect(&layout.iota(pmf, i, kk)).max(0.0);
        }
        for pos in 0..k {
            out.divergence[i][pi[pos]] = expect(&layout.jota(pmf, i, pos, pi)).max(0.0);
        }
        for kk in 0..k {
            let lt = nf * out.info[i][kk] + 2.0 * nf * delta;
            let l = ceil_exp(lt)?;
            let mt = (l as f64).ln() - nf * out.divergence[i][kk] + 2.0 * nf * delta;
            out.log_l_target[i][kk] = lt;
            out.log_m_target[i][kk] = mt;
            out.l[i][kk] = l;
            out.m[i][kk] = ceil_exp(mt)?.min(l);
        }
    }
    Ok(out)
}

impl CodeSizes {
    /// Code parameters with these sizes and slacks.
    pub fn params(&self, d: Vec<f64>, distortion: Vec<Vec<f64>>) -> Result<CodeParams> {
        let (t, k) = (self.l.len(), self.pi.len());
        let mut p = CodeParams::uniform(t, k, 1, 1, self.alpha, self.beta, d, distortion);
        p.n = self.n;
        p.pi = self.pi.clone();
        p.set_sizes(&self.l, &self.m)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::super::pmf::{Axis, AxisRef, Factor};
    use super::*;

    fn lossless(k: usize) -> FinitePmf {
        let y = FinitePmf::new(vec![Axis::new("Y", 1, 1, k)], vec![1.0 / k as f64; k]).unwrap();
        let f = Factor::deterministic(Axis::new("U", 1, 1, k), vec![AxisRef::new("Y", 1, 1)], &[k], |d| d[0]).unwrap();
        y.extend(&f).unwrap()
    }

    #[test]
    fn single_observer_rate() {
        let r = achievable_rates(&lossless(3), &[0]).unwrap();
        assert!((r.per_observer[0] - 3f64.ln()).abs() < 1e-14);
        assert!((r.sum - r.total_di).abs() < 1e-14);
    }

    #[test]
    fn lossless_sizes() {
        let s = select_code_sizes(&lossless(3), &[0], 1e-15, 1).unwrap();
        assert_eq!(s.l, vec![vec![3]]);
        assert_eq!(s.m, vec![vec![3]]);
        assert!(select_code_sizes(&lossless(3), &[0], 0.0, 1).is_err());
        assert!(select_code_sizes(&lossless(3), &[0], 1.0, 100).is_err());
    }

    #[test]
    fn rejects_cross_observer_encoder() {
        // U^1 copies Y^2
        let axes = vec![Axis::new("Y", 1, 1, 2), Axis::new("Y", 1, 2, 2), Axis::new("U", 1, 1, 2), Axis::new("U", 1, 2, 2)];
        let p = FinitePmf::from_fn(axes, |d| if d[2] == d[1] && d[3] == d[1] { 1.0 } else { 0.0 }).unwrap();
        assert!(matches!(achievable_rates(&p, &[0, 1]), Err(Error::Factorization(_))));
    }
}
