//! Subset-inequality region versus the region generated by decoding orders.
//!
//! `f(𝒜) = I(Y^𝒜; U^𝒜 | U^{𝒜ᶜ})` is supermodular, so the subset region is
//! the convex hull of the chain points of all orders plus the positive
//! orthant. Membership in that hull is an LP over time-sharing weights.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::info::BtLayout;
use super::pmf::FinitePmf;
use super::rates::achievable_rates;
use crate::error::{Error, Result};

/// Points closer than this to either boundary are not compared.
pub const BOUNDARY_MARGIN: f64 = 1e-9;
pub const MAX_OBSERVERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub k: usize,
    pub samples: usize,
    /// Points near a boundary, left out of the comparison.
    pub excluded: usize,
    pub compared: usize,
    pub agree: usize,
    /// Compared points inside the subset region.
    pub inside: usize,
    /// Disagreements if orders are read as a plain union of boxes, without time sharing.
    pub disagree_union: usize,
    /// Disagreements if every order is required at once.
    pub disagree_all_orders: usize,
    /// The sum-rate corner plus a small margin lies in both regions.
    pub vertex_in_both: bool,
    /// Corner points of every order, observer-indexed.
    pub corners: Vec<Vec<f64>>,
    /// `f` on every nonempty subset (bitmask index).
    pub subset_bounds: Vec<f64>,
}

impl RegionReport {
    pub fn agreement(&self) -> f64 {
        if self.compared == 0 {
            1.0
        } else {
            self.agree as f64 / self.compared as f64
        }
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

struct Regions {
    k: usize,
    f: Vec<f64>,
    corners: Vec<Vec<f64>>,
}

impl Regions {
    fn build(pmf: &FinitePmf) -> Result<Self> {
        let layout = BtLayout::detect(pmf)?;
        if layout.t != 1 {
            return Err(Error::invalid("t", format!("region comparison needs t = 1, got {}", layout.t)));
        }
        let k = layout.k;
        if k > MAX_OBSERVERS {
            return Err(Error::invalid("K", format!("at most {MAX_OBSERVERS} observers, got {k}")));
        }
        let mut f = vec![0.0; 1 << k];
        for (mask, v) in f.iter_mut().enumerate().skip(1) {
            let (mut ys, mut us, mut rest) = (Vec::new(), Vec::new(), Vec::new());
            for o in 0..k {
                if mask >> o & 1 == 1 {
                    ys.push(layout.y[o][0]);
                    us.push(layout.u[o][0]);
                } else {
                    rest.push(layout.u[o][0]);
                }
            }
            *v = pmf.mutual_information(&ys, &us, &rest);
        }
        let corners = permutations(k)
            .iter()
            .map(|pi| achievable_rates(pmf, pi).map(|r| r.per_observer))
            .collect::<Result<_>>()?;
        Ok(Self { k, f, corners })
    }

    /// `min_𝒜 Σ_{k∈𝒜} R_k − f(𝒜)`; positive inside.
    fn subset_slack(&self, r: &[f64]) -> f64 {
        (1..1usize << self.k)
            .map(|mask| (0..self.k).filter(|o| mask >> o & 1 == 1).map(|o| r[o]).sum::<f64>() - self.f[mask])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `s` with `R − s·1` in the hull of the corners plus the orthant.
    fn hull_slack(&self, r: &[f64]) -> Result<f64> {
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let lambdas: Vec<_> = self.corners.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
        let span = r.iter().chain(self.corners.iter().flatten()).fold(1.0f64, |m, v| m.max(v.abs()));
        let s = lp.add_var(1.0, (-4.0 * span, 4.0 * span));
        lp.add_constraint(lambdas.iter().map(|&l| (l, 1.0)), ComparisonOp::Eq, 1.0);
        for (o, &ro) in r.iter().enumerate() {
            let mut expr: Vec<_> = lambdas.iter().zip(&self.corners).map(|(&l, c)| (l, c[o])).collect();
            expr.push((s, 1.0));
            lp.add_constraint(expr, ComparisonOp::Le, ro);
        }
        let sol = lp
            .solve()
            .map_err(|e| Error::Solver(format!("{e:?}")))?
            .into_solution()
            .map_err(|e| Error::Solver(format!("{:?}", e.termination_reason())))?;
        Ok(sol.objective())
    }

    fn in_some_box(&self, r: &[f64]) -> bool {
        self.corners.iter().any(|c| c.iter().zip(r).all(|(c, r)| r > c))
    }

    fn in_every_box(&self, r: &[f64]) -> bool {
        self.corners.iter().all(|c| c.iter().zip(r).all(|(c, r)| r > c))
    }
}

/// Compares both regions on `samples` random rate points drawn uniformly
/// from a box reaching 1.5 times the largest single-observer rate.
pub fn region_equivalence(pmf: &FinitePmf, samples: usize, seed: u64) -> Result<RegionReport> {
    let reg = Regions::build(pmf)?;
    let k = reg.k;
    let hi: Vec<f64> = (0..k)
        .map(|o| reg.corners.iter().map(|c| c[o]).fold(0.0, f64::max) * 1.5)
        .map(|v| v.max(1e-3))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = RegionReport {
        k,
        samples,
        excluded: 0,
        compared: 0,
        agree: 0,
        inside: 0,
        disagree_union: 0,
        disagree_all_orders: 0,
        vertex_in_both: false,
        corners: reg.corners.clone(),
        subset_bounds: reg.f[1..].to_vec(),
    };
    let mut r = vec![0.0; k];
    for _ in 0..samples {
        for (v, h) in r.iter_mut().zip(&hi) {
            *v = rng.random::<f64>() * h;
        }
        let a = reg.subset_slack(&r);
        let b = reg.hull_slack(&r)?;
        if a.abs() <= BOUNDARY_MARGIN || b.abs() <= BOUNDARY_MARGIN {
            rep.excluded += 1;
            continue;
        }
        rep.compared += 1;
        let in_r = a > 0.0;
        rep.inside += in_r as usize;
        rep.agree += (in_r == (b > 0.0)) as usize;
        rep.disagree_union += (in_r != reg.in_some_box(&r)) as usize;
        rep.disagree_all_orders += (in_r != reg.in_every_box(&r)) as usize;
    }
    let margin = 1e-6;
    let vertex: Vec<f64> = reg.corners[0].iter().map(|c| c + margin / k as f64).collect();
    rep.vertex_in_both = reg.subset_slack(&vertex) > 0.0 && reg.hull_slack(&vertex)? > 0.0;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_enumeration() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[0], vec![0, 1, 2]);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}
