//! Causally conditioned kernels built from per-step factors.

use serde::{Deserialize, Serialize};

use super::pmf::{names, AxisRef, Factor, FinitePmf};
use crate::error::{Error, Result};

/// What a kernel produces, which fixes the axes it may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelRole {
    /// Any causal channel: step `i` reads axes at times `≤ i`, its own name only at times `< i`.
    Channel,
    /// Separate encoder of observer `k` (1-based): `U_i^k` reads only `Y_[i]^k` and `U_[i−1]^k`.
    Encoder(usize),
    /// Decoder: `Xhat_i` reads `U_[i]^{[K]}` and `Xhat_[i−1]`.
    Decoder,
}

/// `∏_i P(target_i | given_i)` with factors in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalKernel {
    role: KernelRole,
    factors: Vec<Factor>,
}

fn reads_ok(role: KernelRole, target: &AxisRef, g: &AxisRef) -> bool {
    let time = target.time;
    match role {
        KernelRole::Channel => g.time < time || (g.time == time && g.name != target.name),
        KernelRole::Encoder(k) => {
            g.observer == k
                && ((g.name == names::OBSERVATION && g.time <= time) || (g.name == names::AUXILIARY && g.time < time))
        }
        KernelRole::Decoder => {
            (g.name == names::AUXILIARY && g.observer >= 1 && g.time <= time)
                || (g.name == names::ESTIMATE && g.observer == 0 && g.time < time)
        }
    }
}

impl CausalKernel {
    pub fn new(role: KernelRole, factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("factors", "a kernel needs at least one factor"));
        }
        let mut last = 0;
        for f in &factors {
            if f.target.len() != 1 {
                return Err(Error::invalid("factors", "each step produces exactly one axis"));
            }
            let target = &f.target[0].label;
            if target.time == 0 {
                return Err(Error::AxisMismatch(format!("{target}: kernel targets need a time ≥ 1")));
            }
            if target.time < last {
                return Err(Error::AxisMismatch(format!("{target}: factors must be listed in time order")));
            }
            last = target.time;
            match role {
                KernelRole::Encoder(k) if !(target.name == names::AUXILIARY && target.observer == k) => {
                    return Err(Error::Factorization(format!("encoder {k} cannot produce {target}")));
                }
                KernelRole::Decoder if !(target.name == names::ESTIMATE && target.observer == 0) => {
                    return Err(Error::Factorization(format!("the decoder cannot produce {target}")));
                }
                _ => {}
            }
            if let Some(g) = f.given.iter().find(|g| !reads_ok(role, target, g)) {
                return Err(Error::Factorization(format!("{target} may not depend on {g}")));
            }
        }
        Ok(Self { role, factors })
    }

    pub fn role(&self) -> KernelRole {
        self.role
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Joint pmf of `pmf` followed by this kernel.
    pub fn apply(&self, pmf: &FinitePmf) -> Result<FinitePmf> {
        self.factors.iter().try_fold(pmf.clone(), |p, f| p.extend(f))
    }
}

/// Applies kernels in order: typically encoders `1..=K`, then the decoder.
pub fn assemble(source: &FinitePmf, kernels: &[CausalKernel]) -> Result<FinitePmf> {
    kernels.iter().try_fold(source.clone(), |p, k| k.apply(&p))
}

#[cfg(test)]
mod tests {
    use super::super::pmf::Axis;
    use super::*;

    fn copy(target: Axis, from: AxisRef) -> Factor {
        Factor::deterministic(target, vec![from], &[2], |d| d[0]).unwrap()
    }

    #[test]
    fn encoder_reads_only_its_observer() {
        let ok = copy(Axis::new("U", 1, 1, 2), AxisRef::new("Y", 1, 1));
        assert!(CausalKernel::new(KernelRole::Encoder(1), vec![ok.clone()]).is_ok());
        let cross = copy(Axis::new("U", 1, 1, 2), AxisRef::new("Y", 1, 2));
        assert!(matches!(CausalKernel::new(KernelRole::Encoder(1), vec![cross]), Err(Error::Factorization(_))));
        let ahead = copy(Axis::new("U", 1, 1, 2), AxisRef::new("Y", 2, 1));
        assert!(CausalKernel::new(KernelRole::Encoder(1), vec![ahead]).is_err());
        assert!(CausalKernel::new(KernelRole::Encoder(2), vec![ok]).is_err());
    }

    #[test]
    fn time_order_and_self_reference() {
        let a = copy(Axis::new("U", 2, 1, 2), AxisRef::new("Y", 2, 1));
        let b = copy(Axis::new("U", 1, 1, 2), AxisRef::new("Y", 1, 1));
        assert!(CausalKernel::new(KernelRole::Channel, vec![a, b]).is_err());
        let own = copy(Axis::new("U", 1, 1, 2), AxisRef::new("U", 1, 2));
        assert!(CausalKernel::new(KernelRole::Channel, vec![own]).is_err());
    }

    #[test]
    fn apply_extends_the_joint() {
        let y = FinitePmf::new(vec![Axis::new("Y", 1, 1, 2)], vec![0.3, 0.7]).unwrap();
        let k = CausalKernel::new(
            KernelRole::Encoder(1),
            vec![copy(Axis::new("U", 1, 1, 2), AxisRef::new("Y", 1, 1))],
        )
        .unwrap();
        let d = CausalKernel::new(
            KernelRole::Decoder,
            vec![copy(Axis::new("Xhat", 1, 0, 2), AxisRef::new("U", 1, 1))],
        )
        .unwrap();
        let p = assemble(&y, &[k, d]).unwrap();
        assert_eq!(p.axes().len(), 3);
        assert!((p.probs()[0b111] - 0.7).abs() < 1e-15);
    }
}
