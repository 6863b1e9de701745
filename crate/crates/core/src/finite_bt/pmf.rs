//! Dense joint pmfs over labeled finite axes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of the total mass from 1.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Largest number of outcomes enumerated exactly.
pub const ENUMERATION_CAP: u128 = 1 << 26;

/// Names used for the roles of the CEO problem.
pub mod names {
    pub const SOURCE: &str = "X";
    pub const OBSERVATION: &str = "Y";
    pub const AUXILIARY: &str = "U";
    pub const ESTIMATE: &str = "Xhat";
}

/// Identifies an axis by `(name, time, observer)`; times and observers start at 1,
/// observer 0 is used for quantities that belong to no observer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AxisRef {
    pub name: String,
    pub time: usize,
    pub observer: usize,
}

impl AxisRef {
    pub fn new(name: impl Into<String>, time: usize, observer: usize) -> Self {
        Self { name: name.into(), time, observer }
    }
}

impl fmt::Display for AxisRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.name, self.time, self.observer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Axis {
    pub label: AxisRef,
    /// Alphabet size.
    pub size: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, time: usize, observer: usize, size: usize) -> Self {
        Self { label: AxisRef::new(name, time, observer), size }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.label;
        write!(f, "({},{},{},{})", l.name, l.time, l.observer, self.size)
    }
}

/// Joint pmf stored row-major over its axes (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePmf {
    axes: Vec<Axis>,
    probs: Vec<f64>,
}

pub(crate) fn outcome_count(sizes: impl IntoIterator<Item = usize>) -> u128 {
    sizes.into_iter().fold(1u128, |acc, s| acc.saturating_mul(s as u128))
}

impl FinitePmf {
    pub fn new(axes: Vec<Axis>, probs: Vec<f64>) -> Result<Self> {
        if let Some(a) = axes.iter().find(|a| a.size == 0) {
            return Err(Error::invalid("axes", format!("axis {a} has an empty alphabet")));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::AxisMismatch(format!("axis {} declared twice", a.label)));
            }
        }
        let n = outcome_count(axes.iter().map(|a| a.size));
        if n > ENUMERATION_CAP {
            return Err(Error::TooLarge { outcomes: n, cap: ENUMERATION_CAP });
        }
        if probs.len() as u128 != n {
            return Err(Error::invalid("probs", format!("expected {n} entries, got {}", probs.len())));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::invalid("probs", format!("entries must be finite and >= 0, got {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid("probs", format!("total mass {total} differs from 1")));
        }
        Ok(Self { axes, probs })
    }

    /// Builds a pmf from a function of the outcome digits; the result is normalized.
    pub fn from_fn(axes: Vec<Axis>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = outcome_count(axes.iter().map(|a| a.size));
        if n > ENUMERATION_CAP {
            return Err(Error::TooLarge { outcomes: n, cap: ENUMERATION_CAP });
        }
        let sizes: Vec<usize> = axes.iter().map(|a| a.size).collect();
        let mut digits = vec![0; axes.len()];
        let mut probs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            probs.push(f(&digits));
            advance(&mut digits, &sizes);
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("probs", "weights must have a positive finite total"));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(axes, probs)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.size).collect()
    }

    /// Largest time index among the axes.
    pub fn horizon(&self) -> usize {
        self.axes.iter().map(|a| a.label.time).max().unwrap_or(0)
    }

    pub fn find(&self, name: &str, time: usize, observer: usize) -> Option<usize> {
        self.axes
            .iter()
            .position(|a| a.label.name == name && a.label.time == time && a.label.observer == observer)
    }

    pub fn index_of(&self, r: &AxisRef) -> Result<usize> {
        self.find(&r.name, r.time, r.observer)
            .ok_or_else(|| Error::AxisMismatch(format!("no axis {r}")))
    }

    /// Writes the digits of outcome `idx` into `out`.
    pub fn digits(&self, mut idx: usize, out: &mut [usize]) {
        for (d, a) in out.iter_mut().zip(&self.axes).rev() {
            *d = idx % a.size;
            idx /= a.size;
        }
    }

    pub fn marginal(&self, axes: &[usize]) -> Marginal {
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let mut strides = vec![0; self.axes.len()];
        let mut stride = 1;
        for &a in axes.iter().rev() {
            strides[a] = stride;
            stride *= self.axes[a].size;
        }
        let mut probs = vec![0.0; stride];
        let sizes = self.sizes();
        let mut digits = vec![0; sizes.len()];
        for p in &self.probs {
            if *p > 0.0 {
                let j: usize = digits.iter().zip(&strides).map(|(d, s)| d * s).sum();
                probs[j] += p;
            }
            advance(&mut digits, &sizes);
        }
        Marginal { axes, strides, probs }
    }

    /// Entropy in nats of the listed axes.
    pub fn entropy(&self, axes: &[usize]) -> f64 {
        if axes.is_empty() {
            return 0.0;
        }
        self.marginal(axes).probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
    }

    /// Conditional mutual information `I(A; B | C)` in nats, clamped at 0.
    pub fn mutual_information(&self, a: &[usize], b: &[usize], c: &[usize]) -> f64 {
        let union = |sets: &[&[usize]]| {
            let mut v: Vec<usize> = sets.iter().flat_map(|s| s.iter().copied()).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let ac = union(&[a, c]);
        let bc = union(&[b, c]);
        let abc = union(&[a, b, c]);
        let c = union(&[c]);
        let v = self.entropy(&ac) + self.entropy(&bc) - self.entropy(&abc) - self.entropy(&c);
        v.max(0.0)
    }

    /// Appends the axes produced by a conditional distribution.
    pub fn extend(&self, factor: &Factor) -> Result<FinitePmf> {
        let given: Vec<usize> = factor.given.iter().map(|r| self.index_of(r)).collect::<Result<_>>()?;
        for t in &factor.target {
            if self.find(&t.label.name, t.label.time, t.label.observer).is_some() {
                return Err(Error::AxisMismatch(format!("axis {} already present", t.label)));
            }
        }
        let given_sizes: Vec<usize> = given.iter().map(|&g| self.axes[g].size).collect();
        factor.check_shape(&given_sizes)?;
        let width = factor.target_size();
        let n = outcome_count(self.axes.iter().chain(&factor.target).map(|a| a.size));
        if n > ENUMERATION_CAP {
            return Err(Error::TooLarge { outcomes: n, cap: ENUMERATION_CAP });
        }
        let mut probs = Vec::with_capacity(n as usize);
        let sizes = self.sizes();
        let mut digits = vec![0; sizes.len()];
        for p in &self.probs {
            let row = given.iter().fold(0, |acc, &g| acc * self.axes[g].size + digits[g]);
            let cond = &factor.table[row * width..(row + 1) * width];
            probs.extend(cond.iter().map(|c| p * c));
            advance(&mut digits, &sizes);
        }
        let mut axes = self.axes.clone();
        axes.extend(factor.target.iter().cloned());
        // products of normalized rows keep the mass within rounding of 1
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        FinitePmf::new(axes, probs)
    }

    /// Joint pmf of two independent pmfs with disjoint axes.
    pub fn independent(&self, other: &FinitePmf) -> Result<FinitePmf> {
        let mut axes = self.axes.clone();
        axes.extend(other.axes.iter().cloned());
        let mut probs = Vec::with_capacity(self.len() * other.len());
        for p in &self.probs {
            probs.extend(other.probs.iter().map(|q| p * q));
        }
        FinitePmf::new(axes, probs)
    }
}

/// Odometer increment of row-major digits.
pub(crate) fn advance(digits: &mut [usize], sizes: &[usize]) {
    for (d, s) in digits.iter_mut().zip(sizes).rev() {
        *d += 1;
        if *d < *s {
            return;
        }
        *d = 0;
    }
}

/// Marginal table of a subset of axes, addressable by full outcome digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    axes: Vec<usize>,
    strides: Vec<usize>,
    probs: Vec<f64>,
}

impl Marginal {
    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of the sub-outcome selected by the full digits of an outcome.
    pub fn at(&self, digits: &[usize]) -> f64 {
        let j: usize = self.axes.iter().map(|&a| digits[a] * self.strides[a]).sum();
        self.probs[j]
    }
}

/// A conditional pmf `P(target | given)` with rows indexed row-major by the given axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub target: Vec<Axis>,
    pub given: Vec<AxisRef>,
    /// `rows × ∏ target sizes` entries, each row a distribution.
    pub table: Vec<f64>,
}

impl Factor {
    pub fn new(target: Vec<Axis>, given: Vec<AxisRef>, table: Vec<f64>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::invalid("target", "a factor needs at least one target axis"));
        }
        let f = Self { target, given, table };
        let width = f.target_size();
        if f.table.is_empty() || f.table.len() % width != 0 {
            return Err(Error::invalid("table", format!("length {} is not a multiple of {width}", f.table.len())));
        }
        for (r, row) in f.table.chunks(width).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::invalid("table", format!("row {r} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("table", format!("row {r} sums to {s}, not 1")));
            }
        }
        Ok(f)
    }

    /// Deterministic factor `target = f(given)`.
    pub fn deterministic(
        target: Axis,
        given: Vec<AxisRef>,
        given_sizes: &[usize],
        f: impl Fn(&[usize]) -> usize,
    ) -> Result<Self> {
        let rows: usize = given_sizes.iter().product();
        let mut table = vec![0.0; rows * target.size];
        let mut digits = vec![0; given_sizes.len()];
        for r in 0..rows {
            let v = f(&digits);
            if v >= target.size {
                return Err(Error::invalid("f", format!("value {v} outside alphabet of {}", target.label)));
            }
            table[r * target.size + v] = 1.0;
            advance(&mut digits, given_sizes);
        }
        Self::new(vec![target], given, table)
    }

    pub fn target_size(&self) -> usize {
        self.target.iter().map(|a| a.size).product()
    }

    fn check_shape(&self, given_sizes: &[usize]) -> Result<()> {
        let rows: usize = given_sizes.iter().product();
        if rows * self.target_size() != self.table.len() {
            return Err(Error::AxisMismatch(format!(
                "factor table has {} entries, expected {} rows × {}",
                self.table.len(),
                rows,
                self.target_size()
            )));
        }
        Ok(())
    }
}

/// Per-time-step selection of axes forming a (possibly vector) process.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Process {
    steps: Vec<Vec<usize>>,
}

impl Process {
    pub fn new(steps: Vec<Vec<usize>>) -> Self {
        Self { steps }
    }

    /// Axes named `name` for the listed observers, one step per time `1..=horizon`.
    pub fn select(pmf: &FinitePmf, name: &str, observers: &[usize], horizon: usize) -> Result<Self> {
        let mut steps = Vec::with_capacity(horizon);
        for i in 1..=horizon {
            let mut step = Vec::with_capacity(observers.len());
            for &k in observers {
                step.push(
                    pmf.find(name, i, k)
                        .ok_or_else(|| Error::AxisMismatch(format!("no axis ({name},{i},{k})")))?,
                );
            }
            steps.push(step);
        }
        Ok(Self { steps })
    }

    /// A process with `horizon` empty steps.
    pub fn empty(horizon: usize) -> Self {
        Self { steps: vec![Vec::new(); horizon] }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, i: usize) -> &[usize] {
        &self.steps[i]
    }

    /// Union of the steps `0..=i` (0-based); empty for `i = None`.
    pub fn upto(&self, i: Option<usize>) -> Vec<usize> {
        match i {
            None => Vec::new(),
            Some(i) => self.steps[..=i].iter().flatten().copied().collect(),
        }
    }

    /// Stepwise union of two processes of equal length.
    pub fn concat(&self, other: &Process) -> Result<Process> {
        if self.len() != other.len() {
            return Err(Error::AxisMismatch(format!(
                "processes of lengths {} and {} cannot be joined",
                self.len(),
                other.len()
            )));
        }
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(a, b)| {
                let mut s = a.clone();
                s.extend(b.iter().filter(|x| !a.contains(x)));
                s
            })
            .collect();
        Ok(Process { steps })
    }

    /// The process delayed by one step: step `i` holds the axes of step `i − 1`.
    pub fn delayed(&self) -> Process {
        let mut steps = vec![Vec::new()];
        steps.extend(self.steps.iter().take(self.len().saturating_sub(1)).cloned());
        steps.truncate(self.len());
        Process { steps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(n: usize) -> Vec<Axis> {
        (0..n).map(|i| Axis::new("B", i + 1, 0, 2)).collect()
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(FinitePmf::new(bits(1), vec![0.5, 0.6]).is_err());
        assert!(FinitePmf::new(bits(1), vec![1.0]).is_err());
        assert!(FinitePmf::new(bits(1), vec![1.5, -0.5]).is_err());
        assert!(FinitePmf::new(vec![Axis::new("B", 1, 0, 2); 2], vec![0.25; 4]).is_err());
    }

    #[test]
    fn marginals_and_entropy() {
        let p = FinitePmf::new(bits(2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(p.marginal(&[1]).probs(), &[0.5, 0.5]);
        assert!((p.entropy(&[0, 1]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((p.mutual_information(&[0], &[1], &[]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(p.mutual_information(&[0], &[1], &[1]), 0.0);
        let mut d = [0; 2];
        p.digits(2, &mut d);
        assert_eq!(d, [1, 0]);
        assert_eq!(p.marginal(&[0]).at(&d), 0.5);
    }

    #[test]
    fn extend_with_factor() {
        let p = FinitePmf::new(bits(1), vec![0.25, 0.75]).unwrap();
        let f = Factor::new(vec![Axis::new("C", 1, 0, 2)], vec![AxisRef::new("B", 1, 0)], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let q = p.extend(&f).unwrap();
        assert_eq!(q.len(), 4);
        assert!((q.probs()[1] - 0.025).abs() < 1e-15);
        assert!((q.probs()[3] - 0.6).abs() < 1e-15);
        assert!(Factor::new(vec![Axis::new("C", 1, 0, 2)], vec![], vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn processes() {
        let p = FinitePmf::from_fn(bits(3), |_| 1.0).unwrap();
        let b = Process::select(&p, "B", &[0], 3).unwrap();
        assert_eq!(b.upto(Some(1)), vec![0, 1]);
        let d = b.delayed();
        assert_eq!(d.step(0), &[] as &[usize]);
        assert_eq!(d.step(2), &[1]);
        assert!(Process::select(&p, "B", &[0], 4).is_err());
        assert!(b.concat(&Process::empty(2)).is_err());
    }
}
