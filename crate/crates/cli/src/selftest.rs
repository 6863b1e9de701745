use std::f64::consts::LN_2;

use causal_ceo::finite_bt::{
    achievable_rates, assemble, causally_conditioned_di, directed_information, evaluate_bt_both, gamma,
    region_equivalence, Axis, AxisRef, CausalKernel, CodeParams, Factor, FinitePmf, KernelRole, Process,
};
use causal_ceo::model::{steady_state, steady_state_mmse};
use causal_ceo::rdf::{
    ceo_rdf, direct_rdf, large_k_limit, loss_bound, remote_rdf, remote_rdf_alt, waterfilling,
};
use causal_ceo::tracking_sim::{simulate, SchemeConfig};
use causal_ceo::{ChannelSet, RdfQuery, SourceModel};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, Common, Format, Overlay};
use crate::output::{emit, json, Table};
use crate::CliError;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SelftestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Run only this suite.
    #[arg(long)]
    pub suite: Option<String>,
}

impl Overlay for SelftestArgs {
    fn overlay(self, file: Self) -> Self {
        Self { common: self.common.overlay(file.common), suite: self.suite.or(file.suite) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub passed: usize,
    pub total: usize,
    pub first_failure: Option<String>,
}

#[derive(Default)]
struct Tally {
    passed: usize,
    total: usize,
    first_failure: Option<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.first_failure.is_none() {
            self.first_failure = Some(what());
        }
    }

    fn result<E: std::fmt::Display>(&mut self, r: Result<bool, E>, what: impl FnOnce() -> String) {
        match r {
            Ok(ok) => self.check(ok, what),
            Err(e) => self.check(false, || format!("{}: {e}", what())),
        }
    }
}

type Suite = fn(&mut ChaCha8Rng, &mut Tally);

const SUITES: [(&str, Suite); 9] = [
    ("riccati", riccati),
    ("reference-points", reference_points),
    ("rdf-ordering", rdf_ordering),
    ("remote-forms", remote_forms),
    ("symmetric-waterfilling", symmetric_waterfilling),
    ("di-identities", di_identities),
    ("bt-bound", bt_bound),
    ("region", region),
    ("simulator", simulator),
];

fn random_query(r: &mut ChaCha8Rng, max_k: usize) -> RdfQuery {
    let a = if r.random::<f64>() < 0.1 { if r.random::<bool>() { 1.1 } else { -1.1 } } else { r.random_range(-0.95..0.95) };
    let model = SourceModel::new(a, r.random_range(0.2..3.0)).expect("valid model");
    let k = r.random_range(1..=max_k);
    let ch = ChannelSet::new((0..k).map(|_| r.random_range(0.1..4.0)).collect()).expect("valid channels");
    let q = RdfQuery::new(model, ch, 1.0);
    let ss = q.steady_state().expect("steady state");
    let lo = ss.s_joint_riccati;
    let hi = if ss.sigma_x2.is_finite() { ss.sigma_x2.variance() } else { 10.0 * lo };
    let t = r.random_range(0.02..0.98);
    q.with_d(lo + t * (hi - lo))
}

fn riccati(r: &mut ChaCha8Rng, t: &mut Tally) {
    for _ in 0..100 {
        let (a, v, c) = (r.random_range(-1.5..1.5), r.random_range(0.05..5.0), r.random_range(0.01..10.0));
        let mut p = v / (1.0 + v * c);
        for _ in 0..10_000 {
            p = 1.0 / (1.0 / (a * a * p + v) + c);
        }
        let got = SourceModel::new(a, v).and_then(|m| steady_state_mmse(&m, c));
        t.result(got.map(|e| (e.filtered - p).abs() <= 1e-10 * p), || format!("a={a} v={v} c={c}"));
    }
}

fn reference_points(_: &mut ChaCha8Rng, t: &mut Tally) {
    let m0 = SourceModel::new(0.0, 1.0).expect("valid model");
    let sym = RdfQuery::new(m0, ChannelSet::symmetric(1.0, 2).expect("valid channels"), 0.5);
    t.result(ceo_rdf(&sym).map(|(r, _)| (r - 1.5 * LN_2).abs() <= 1e-8), || "symmetric CEO point".into());
    t.result(
        loss_bound(&sym).map(|l| l.condition_holds && (l.lhs - 0.5 * LN_2).abs() <= 1e-9 && (l.rhs - 0.5 * LN_2).abs() <= 1e-9),
        || "loss-bound equality".into(),
    );
    let half = SourceModel::new(0.5, 1.0).expect("valid model");
    t.result(
        steady_state(&half, &ChannelSet::symmetric(1.0, 2).expect("valid channels"))
            .map(|s| (s.s_joint_riccati - 0.342330).abs() <= 1e-5 && (s.s_joint_fusion - 0.331612).abs() <= 1e-5),
        || "fusion gap".into(),
    );
    t.result(
        steady_state_mmse(&half, 1.0).map(|e| (e.filtered - (65f64.sqrt() - 7.0) / 2.0).abs() <= 1e-12),
        || "Riccati worked value".into(),
    );
    let one = RdfQuery::new(m0, ChannelSet::symmetric(1.0, 1).expect("valid channels"), 0.5);
    t.result(large_k_limit(&one).map(|l| (l - 0.846574).abs() <= 1e-6), || "large-K limit".into());
}

fn rdf_ordering(r: &mut ChaCha8Rng, t: &mut Tally) {
    for _ in 0..200 {
        let q = random_query(r, 4);
        let ordered = (|| -> causal_ceo::Result<bool> {
            let d = direct_rdf(&q)?;
            let rm = remote_rdf(&q)?;
            let c = ceo_rdf(&q)?.0;
            let w = waterfilling(&q)?.0;
            Ok(d <= rm + 1e-9 && rm <= c + 1e-9 && c <= w + 1e-9)
        })();
        t.result(ordered, || format!("{q:?}"));
    }
}

fn remote_forms(r: &mut ChaCha8Rng, t: &mut Tally) {
    for _ in 0..100 {
        let q = random_query(r, 4);
        let same = remote_rdf(&q).and_then(|a| remote_rdf_alt(&q).map(|b| (a - b).abs() <= 1e-12 * a.abs().max(1e-300) + 1e-15));
        t.result(same, || format!("{q:?}"));
    }
}

fn symmetric_waterfilling(r: &mut ChaCha8Rng, t: &mut Tally) {
    for _ in 0..50 {
        let mut q = random_query(r, 4);
        let w = q.channels.sigma_w2()[0];
        q.channels = ChannelSet::symmetric(w, q.k()).expect("valid channels");
        let Ok(ss) = q.steady_state() else { continue };
        let hi = if ss.sigma_x2.is_finite() { ss.sigma_x2.variance() } else { 10.0 * ss.s_joint_riccati };
        let q = q.with_d(ss.s_joint_riccati + r.random_range(0.02..0.98) * (hi - ss.s_joint_riccati));
        let same = ceo_rdf(&q).and_then(|(c, _)| waterfilling(&q).map(|(w, _)| (c - w).abs() <= 1e-6));
        t.result(same, || format!("{q:?}"));
    }
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

fn random_triple(r: &mut ChaCha8Rng, t: usize) -> causal_ceo::Result<FinitePmf> {
    let mut axes = Vec::new();
    for name in ["A", "B", "C"] {
        let size = r.random_range(2..=3);
        axes.extend((1..=t).map(|i| Axis::new(name, i, 0, size)));
    }
    while axes.iter().map(|a| a.size).product::<usize>() > 20_000 {
        let j = axes.iter().position(|a| a.size == 3).expect("some ternary axis");
        axes[j].size = 2;
    }
    let n = axes.iter().map(|a| a.size).product();
    FinitePmf::new(axes, random_rows(r, 1, n))
}

/// Binary source, observations, separate causal encoders and a causal decoder.
fn random_toy(r: &mut ChaCha8Rng, t: usize, k: usize, decoder: bool) -> causal_ceo::Result<FinitePmf> {
    let mut pmf = FinitePmf::new((1..=t).map(|i| Axis::new("X", i, 0, 2)).collect(), random_rows(r, 1, 1 << t))?;
    for i in 1..=t {
        for o in 1..=k {
            let f = Factor::new(vec![Axis::new("Y", i, o, 2)], vec![AxisRef::new("X", i, 0)], random_rows(r, 2, 2))?;
            pmf = pmf.extend(&f)?;
        }
    }
    let mut kernels = Vec::new();
    for o in 1..=k {
        let mut factors = Vec::new();
        for i in 1..=t {
            let mut given: Vec<AxisRef> = (1..=i).map(|j| AxisRef::new("Y", j, o)).collect();
            given.extend((1..i).map(|j| AxisRef::new("U", j, o)));
            let rows = 1 << given.len();
            factors.push(Factor::new(vec![Axis::new("U", i, o, 2)], given, random_rows(r, rows, 2))?);
        }
        kernels.push(CausalKernel::new(KernelRole::Encoder(o), factors)?);
    }
    if decoder {
        let factors = (1..=t)
            .map(|i| {
                let given: Vec<AxisRef> = (1..=k).map(|o| AxisRef::new("U", i, o)).collect();
                Factor::new(vec![Axis::new("Xhat", i, 0, 2)], given, random_rows(r, 1 << k, 2))
            })
            .collect::<causal_ceo::Result<Vec<_>>>()?;
        kernels.push(CausalKernel::new(KernelRole::Decoder, factors)?);
    }
    assemble(&pmf, &kernels)
}

fn di_identities(r: &mut ChaCha8Rng, t: &mut Tally) {
    for n in 0..50 {
        let steps = 1 + n % 3;
        let check = (|| -> causal_ceo::Result<bool> {
            let p = random_triple(r, steps)?;
            let x = Process::select(&p, "A", &[0], steps)?;
            let y = Process::select(&p, "B", &[0], steps)?;
            let z = Process::select(&p, "C", &[0], steps)?;
            let l1 = directed_information(&p, &x.concat(&y)?, &z)?;
            let r1 = directed_information(&p, &x, &z)? + causally_conditioned_di(&p, &y, &z, &x)?;
            let l2 = directed_information(&p, &x, &y.concat(&z)?)?;
            let r2 = causally_conditioned_di(&p, &x, &y, &z.delayed())? + causally_conditioned_di(&p, &x, &z, &y)?;
            let k = 1 + n % 2;
            let toy = random_toy(r, 1 + n % 2, k, false)?;
            let rates = achievable_rates(&toy, &(0..k).rev().collect::<Vec<_>>())?;
            Ok((l1 - r1).abs() <= 1e-10 && (l2 - r2).abs() <= 1e-10 && (rates.sum - rates.total_di).abs() <= 1e-10)
        })();
        t.result(check, || format!("instance {n}"));
    }
}

fn hamming() -> Vec<Vec<f64>> {
    vec![vec![0.0, 1.0], vec![1.0, 0.0]]
}

fn bt_bound(r: &mut ChaCha8Rng, t: &mut Tally) {
    let g = gamma(&CodeParams::uniform(1, 1, 1, 1, 0.0, 0.0, vec![0.5], hamming()));
    t.check(g == 0.75, || format!("γ = {g}"));
    for n in 0..20 {
        let (steps, k) = [(1, 1), (1, 2), (2, 1), (2, 2)][n % 4];
        let check = (|| -> causal_ceo::Result<bool> {
            let pmf = random_toy(r, steps, k, true)?;
            let mut p = CodeParams::uniform(steps, k, 1, 1, 0.0, 0.0, (0..steps).map(|_| r.random_range(0.0..1.0)).collect(), hamming());
            let l: Vec<Vec<u64>> = (0..steps).map(|_| (0..k).map(|_| r.random_range(1..6)).collect()).collect();
            let m: Vec<Vec<u64>> = l.iter().map(|row| row.iter().map(|l| r.random_range(1..=*l)).collect()).collect();
            p.set_sizes(&l, &m)?;
            for row in p.alpha.iter_mut().chain(p.beta.iter_mut()) {
                for v in row.iter_mut() {
                    *v = r.random_range(-1.0..4.0);
                }
            }
            let (b, sharp) = evaluate_bt_both(&pmf, &p)?;
            Ok(sharp >= 1.0 - b.epsilon_bound - 1e-12)
        })();
        t.result(check, || format!("toy {n}"));
    }
}

fn region(r: &mut ChaCha8Rng, t: &mut Tally) {
    for k in [2, 3] {
        let check = (|| -> causal_ceo::Result<bool> {
            let ys: Vec<Axis> = (1..=k).map(|o| Axis::new("Y", 1, o, 2)).collect();
            let mut pmf = FinitePmf::new(ys, random_rows(r, 1, 1 << k))?;
            for o in 1..=k {
                let f = Factor::new(vec![Axis::new("U", 1, o, 2)], vec![AxisRef::new("Y", 1, o)], random_rows(r, 2, 2))?;
                pmf = pmf.extend(&f)?;
            }
            let rep = region_equivalence(&pmf, 300, r.random())?;
            Ok(rep.agree == rep.compared && rep.vertex_in_both)
        })();
        t.result(check, || format!("K = {k}"));
    }
}

fn simulator(r: &mut ChaCha8Rng, t: &mut Tally) {
    for _ in 0..10 {
        let mut q = random_query(r, 3);
        q.model = SourceModel::new(0.0, q.model.sigma_v2()).expect("valid model");
        let check = (|| -> causal_ceo::Result<bool> {
            let ss = q.steady_state()?;
            let d = ss.s_joint_riccati + 0.5 * (ss.sigma_x2.variance() - ss.s_joint_riccati);
            let (_, alloc) = ceo_rdf(&q.clone().with_d(d))?;
            let mut cfg = SchemeConfig::new(q.model, q.channels.clone(), alloc);
            cfg.monte_carlo = false;
            let rep = simulate(&cfg)?;
            Ok(rep.achieved_mse_exact.is_some_and(|m| (m - d).abs() <= 1e-9 * d.max(1.0)))
        })();
        t.result(check, || format!("{q:?}"));
    }
}

pub fn run_suites(only: Option<&str>, seed: u64) -> Result<Vec<SuiteResult>, CliError> {
    let chosen: Vec<_> = SUITES.iter().filter(|(name, _)| only.map_or(true, |o| o == *name)).collect();
    if chosen.is_empty() {
        let names: Vec<&str> = SUITES.iter().map(|(n, _)| *n).collect();
        return Err(CliError::Usage(format!("unknown suite; choose one of {}", names.join(", "))));
    }
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            let mut tally = Tally::default();
            f(&mut r, &mut tally);
            SuiteResult { suite: name, passed: tally.passed, total: tally.total, first_failure: tally.first_failure }
        })
        .collect())
}

pub fn selftest(args: SelftestArgs) -> Result<i32, CliError> {
    let args = resolve(args.common.config.clone().as_deref(), args)?;
    let results = run_suites(args.suite.as_deref(), args.common.seed())?;
    let text = match args.common.format(Format::Csv) {
        Format::Json => json(&results)?,
        Format::Csv => {
            let mut t = Table::new(["suite", "passed", "total", "status", "first_failure"].map(String::from).to_vec());
            for s in &results {
                let status = if s.passed == s.total { "pass" } else { "fail" };
                t.push(vec![
                    s.suite.into(),
                    s.passed.to_string(),
                    s.total.to_string(),
                    status.into(),
                    s.first_failure.clone().unwrap_or_default(),
                ]);
            }
            t.render()
        }
    };
    emit(args.common.out.as_deref(), &text)?;
    Ok(if results.iter().all(|s| s.passed == s.total) { 0 } else { 1 })
}
