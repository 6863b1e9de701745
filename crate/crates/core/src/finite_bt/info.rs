//! Directed information and information densities.

use serde::{Deserialize, Serialize};

use super::pmf::{names, FinitePmf, Marginal, Process};
use crate::error::{Error, Result};

/// `Σ_i I(X_[i]; Y_i | Y_[i−1])`.
pub fn directed_information(pmf: &FinitePmf, from: &Process, to: &Process) -> Result<f64> {
    causally_conditioned_di(pmf, from, to, &Process::empty(to.len()))
}

/// `Σ_i I(X_[i]; Y_i | Y_[i−1], Z_[i])`.
pub fn causally_conditioned_di(pmf: &FinitePmf, from: &Process, to: &Process, given: &Process) -> Result<f64> {
    if from.len() != to.len() || given.len() != to.len() {
        return Err(Error::AxisMismatch(format!(
            "processes have lengths {}, {}, {}; all must match",
            from.len(),
            to.len(),
            given.len()
        )));
    }
    if to.is_empty() {
        return Err(Error::AxisMismatch("processes must have at least one step".into()));
    }
    let mut total = 0.0;
    for i in 0..to.len() {
        let past = if i == 0 { None } else { Some(i - 1) };
        let mut cond = to.upto(past);
        cond.extend(given.upto(Some(i)));
        total += pmf.mutual_information(&from.upto(Some(i)), to.step(i), &cond);
    }
    Ok(total)
}

/// Checks that `pi` is a permutation of `0..k`.
pub fn check_permutation(pi: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if pi.len() != k {
        return Err(Error::invalid("pi", format!("permutation of {k} observers has {} entries", pi.len())));
    }
    for &p in pi {
        if p >= k || seen[p] {
            return Err(Error::invalid("pi", format!("{pi:?} is not a permutation of 0..{k}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Positions of the CEO roles inside a joint pmf.
///
/// Axes are `X` (observer 0), `Y` and `U` (observers `1..=K`) and `Xhat`
/// (observer 0), at times `1..=t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BtLayout {
    pub t: usize,
    pub k: usize,
    /// `x[i]`, present when the pmf carries the source.
    pub x: Option<Vec<usize>>,
    pub xhat: Option<Vec<usize>>,
    /// `y[k][i]` for observer `k` (0-based) at time `i` (0-based).
    pub y: Vec<Vec<usize>>,
    pub u: Vec<Vec<usize>>,
}

impl BtLayout {
    pub fn detect(pmf: &FinitePmf) -> Result<Self> {
        let u_axes: Vec<_> = pmf.axes().iter().filter(|a| a.label.name == names::AUXILIARY).collect();
        if u_axes.is_empty() {
            return Err(Error::AxisMismatch("no auxiliary `U` axes".into()));
        }
        let t = u_axes.iter().map(|a| a.label.time).max().unwrap_or(0);
        let k = u_axes.iter().map(|a| a.label.observer).max().unwrap_or(0);
        if t == 0 || k == 0 || u_axes.iter().any(|a| a.label.time == 0 || a.label.observer == 0) {
            return Err(Error::AxisMismatch("`U` axes need times and observers starting at 1".into()));
        }
        let observers: Vec<usize> = (1..=k).collect();
        let per = |name: &str| -> Result<Vec<Vec<usize>>> {
            observers
                .iter()
                .map(|&o| Ok(Process::select(pmf, name, &[o], t)?.upto(Some(t - 1))))
                .collect()
        };
        let y = per(names::OBSERVATION)?;
        let u = per(names::AUXILIARY)?;
        let opt = |name: &str| -> Result<Option<Vec<usize>>> {
            if pmf.axes().iter().any(|a| a.label.name == name) {
                Ok(Some(Process::select(pmf, name, &[0], t)?.upto(Some(t - 1))))
            } else {
                Ok(None)
            }
        };
        Ok(Self { t, k, x: opt(names::SOURCE)?, xhat: opt(names::ESTIMATE)?, y, u })
    }

    pub fn y_process(&self, k: usize) -> Process {
        Process::new(self.y[k].iter().map(|a| vec![*a]).collect())
    }

    pub fn u_process(&self, k: usize) -> Process {
        Process::new(self.u[k].iter().map(|a| vec![*a]).collect())
    }

    fn joint(&self, of: &[Vec<usize>], observers: &[usize]) -> Process {
        Process::new((0..self.t).map(|i| observers.iter().map(|&k| of[k][i]).collect()).collect())
    }

    pub fn u_joint(&self, observers: &[usize]) -> Process {
        self.joint(&self.u, observers)
    }

    pub fn y_joint(&self, observers: &[usize]) -> Process {
        self.joint(&self.y, observers)
    }

    pub fn all_observers(&self) -> Vec<usize> {
        (0..self.k).collect()
    }

    fn u_past(&self, k: usize, i: usize) -> Vec<usize> {
        self.u[k][..i].to_vec()
    }

    /// `ı(y_[i]^k; u_i^k | u_[i−1]^k)` as a ratio of conditionals.
    pub(crate) fn iota(&self, pmf: &FinitePmf, i: usize, k: usize) -> LogRatio {
        let mut c1 = self.y[k][..=i].to_vec();
        c1.extend(self.u_past(k, i));
        LogRatio::new(pmf, &[self.u[k][i]], &c1, &self.u_past(k, i))
    }

    /// `ȷ^{π(pos)}(u_[i])` for the observer at position `pos` of `pi`.
    pub(crate) fn jota(&self, pmf: &FinitePmf, i: usize, pos: usize, pi: &[usize]) -> LogRatio {
        let j = pi[pos];
        let mut c1: Vec<usize> = pi[..pos].iter().map(|&o| self.u[o][i]).collect();
        for o in 0..self.k {
            c1.extend(self.u_past(o, i));
        }
        LogRatio::new(pmf, &[self.u[j][i]], &c1, &self.u_past(j, i))
    }
}

/// `log P(T | C1) / P(T | C2)` evaluated from four marginal tables.
#[derive(Debug, Clone)]
pub(crate) struct LogRatio {
    tc1: Marginal,
    c1: Marginal,
    tc2: Marginal,
    c2: Marginal,
}

impl LogRatio {
    fn new(pmf: &FinitePmf, target: &[usize], c1: &[usize], c2: &[usize]) -> Self {
        let with = |c: &[usize]| {
            let mut v = target.to_vec();
            v.extend_from_slice(c);
            pmf.marginal(&v)
        };
        Self { tc1: with(c1), c1: pmf.marginal(c1), tc2: with(c2), c2: pmf.marginal(c2) }
    }

    /// Value at an outcome of positive probability.
    pub(crate) fn eval(&self, digits: &[usize]) -> f64 {
        (self.tc1.at(digits) / self.c1.at(digits)).ln() - (self.tc2.at(digits) / self.c2.at(digits)).ln()
    }
}

/// Per-outcome values of one information density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    /// 1-based time.
    pub time: usize,
    /// 1-based observer.
    pub observer: usize,
    /// One value per outcome of the pmf; 0 on outcomes of probability 0.
    pub values: Vec<f64>,
}

impl DensityTable {
    pub fn expectation(&self, pmf: &FinitePmf) -> f64 {
        pmf.probs().iter().zip(&self.values).map(|(p, v)| p * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoDensities {
    /// `ı` for every `(i, k)`, time-major.
    pub iota: Vec<DensityTable>,
    /// `ȷ^{π(k)}` for every `(i, k)`, time-major, labeled by observer `π(k)`.
    pub jota: Vec<DensityTable>,
}

impl InfoDensities {
    pub fn iota_at(&self, time: usize, observer: usize) -> Option<&DensityTable> {
        self.iota.iter().find(|d| d.time == time && d.observer == observer)
    }

    pub fn jota_at(&self, time: usize, observer: usize) -> Option<&DensityTable> {
        self.jota.iter().find(|d| d.time == time && d.observer == observer)
    }
}

fn tabulate(pmf: &FinitePmf, ratio: &LogRatio) -> Vec<f64> {
    let mut digits = vec![0; pmf.axes().len()];
    pmf.probs()
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            if *p > 0.0 {
                pmf.digits(idx, &mut digits);
                ratio.eval(&digits)
            } else {
                0.0
            }
        })
        .collect()
}

/// Tables of `ı` and `ȷ` over every outcome of the joint pmf, for the order `pi` (0-based).
pub fn info_density_tables(pmf: &FinitePmf, pi: &[usize]) -> Result<InfoDensities> {
    let layout = BtLayout::detect(pmf)?;
    check_permutation(pi, layout.k)?;
    let mut iota = Vec::new();
    let mut jota = Vec::new();
    for i in 0..layout.t {
        for k in 0..layout.k {
            iota.push(DensityTable { time: i + 1, observer: k + 1, values: tabulate(pmf, &layout.iota(pmf, i, k)) });
        }
        for pos in 0..layout.k {
            let r = layout.jota(pmf, i, pos, pi);
            jota.push(DensityTable { time: i + 1, observer: pi[pos] + 1, values: tabulate(pmf, &r) });
        }
    }
    Ok(InfoDensities { iota, jota })
}

#[cfg(test)]
mod tests {
    use super::super::pmf::Axis;
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn copy_of_uniform_bits() {
        // X_i i.i.d. uniform bits, Y_i = X_i
        let axes = vec![Axis::new("A", 1, 0, 2), Axis::new("A", 2, 0, 2), Axis::new("B", 1, 0, 2), Axis::new("B", 2, 0, 2)];
        let p = FinitePmf::from_fn(axes, |d| if d[0] == d[2] && d[1] == d[3] { 1.0 } else { 0.0 }).unwrap();
        let a = Process::select(&p, "A", &[0], 2).unwrap();
        let b = Process::select(&p, "B", &[0], 2).unwrap();
        assert!((directed_information(&p, &a, &b).unwrap() - 2.0 * LN_2).abs() < 1e-14);
        assert!(directed_information(&p, &a, &Process::empty(3)).is_err());
    }

    #[test]
    fn deterministic_density() {
        let axes = vec![Axis::new("Y", 1, 1, 3), Axis::new("U", 1, 1, 3)];
        let p = FinitePmf::from_fn(axes, |d| if d[0] == d[1] { 1.0 } else { 0.0 }).unwrap();
        let dens = info_density_tables(&p, &[0]).unwrap();
        let t = dens.iota_at(1, 1).unwrap();
        for (v, q) in t.values.iter().zip(p.probs()) {
            if *q > 0.0 {
                assert!((v - 3f64.ln()).abs() < 1e-14);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        // with one observer ȷ compares the same conditionals
        assert!(dens.jota_at(1, 1).unwrap().values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn permutation_check() {
        assert!(check_permutation(&[1, 0, 2], 3).is_ok());
        assert!(check_permutation(&[1, 1], 2).is_err());
        assert!(check_permutation(&[0], 2).is_err());
    }
}
