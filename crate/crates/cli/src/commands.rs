use std::path::PathBuf;

use causal_ceo::finite_bt::{
    achievable_rates, estimate_event_probability, evaluate_bt_both, parse_bt_spec, select_code_sizes, BtBound,
    BtLayout, CodeParams, McEstimate, Rates,
};
use causal_ceo::rdf::{ceo_rdf, feasibility_window, rdf_record, waterfilling, RdfRecord, FEASIBILITY_MARGIN};
use causal_ceo::tracking_sim::{sigma_z_from_dk, simulate, write_trace, SchemeConfig, SimReport};
use causal_ceo::{JointMode, RdfQuery, Unit};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, Common, Format, Overlay};
use crate::output::{emit, json, num, opt_num, record_csv, Table};
use crate::CliError;

/// Relative distance from the window edges that clamped grid points keep.
const CLAMP_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

impl Overlay for CurveArgs {
    fn overlay(self, file: Self) -> Self {
        Self { common: self.common.overlay(file.common) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub status: String,
    pub d_requested: f64,
    #[serde(flatten)]
    pub record: Option<RdfRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Status and evaluation point for a requested distortion.
fn place(d: f64, lower: f64, upper: f64) -> (&'static str, f64) {
    if d <= lower * (1.0 + FEASIBILITY_MARGIN) {
        ("clamped", lower * (1.0 + CLAMP_MARGIN))
    } else if upper.is_finite() && d >= upper * (1.0 - FEASIBILITY_MARGIN) {
        ("clamped", upper * (1.0 - CLAMP_MARGIN))
    } else {
        ("ok", d)
    }
}

pub fn curve_rows(c: &Common) -> Result<Vec<CurveRow>, CliError> {
    let model = c.model()?;
    let channels = c.channels()?;
    let grid = c.grid()?;
    let mut rows = Vec::new();
    for mode in c.mode().modes() {
        let base = RdfQuery::new(model, channels.clone(), 1.0).with_mode(mode).with_unit(c.unit());
        let ss = base.steady_state()?;
        let (lower, upper) = feasibility_window(&ss, mode);
        for &d in &grid {
            let (status, at) = place(d, lower, upper);
            if status != "ok" {
                eprintln!("warning: d = {d} outside ({lower}, {upper}) in {mode} mode, evaluated at {at}");
            }
            let row = match rdf_record(&base.clone().with_d(at)) {
                Ok(r) => CurveRow { status: status.into(), d_requested: d, record: Some(r), error: None },
                Err(e) => CurveRow { status: "error".into(), d_requested: d, record: None, error: Some(e.to_string()) },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn curve_csv(rows: &[CurveRow], k: usize) -> String {
    let mut header: Vec<String> = [
        "mode", "unit", "status", "d_requested", "d", "R_direct", "R_remote", "R_ceo", "R_wf", "loss_lhs", "loss_rhs",
        "condition_holds", "lambda",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=k).map(|j| format!("d_k_{j}")));
    header.extend((1..=k).map(|j| format!("rho_k_{j}")));
    let width = header.len();
    let mut t = Table::new(header);
    for row in rows {
        let mut cells = match &row.record {
            Some(r) => {
                let mut v = vec![
                    r.mode.to_string(),
                    r.unit.to_string(),
                    row.status.clone(),
                    num(row.d_requested),
                    num(r.d),
                    num(r.r_direct),
                    num(r.r_remote),
                    num(r.r_ceo),
                    num(r.r_wf),
                    num(r.loss_lhs),
                    num(r.loss_rhs),
                    r.condition_holds.to_string(),
                    num(r.lambda),
                ];
                v.extend(r.d_k.iter().map(|x| num(*x)));
                v.extend(r.rho_k.iter().map(|x| num(*x)));
                v
            }
            None => vec![String::new(), String::new(), row.status.clone(), num(row.d_requested)],
        };
        cells.resize(width, String::new());
        t.push(cells);
    }
    t.render()
}

pub fn curve(args: CurveArgs) -> Result<i32, CliError> {
    let args = resolve(args.common.config.clone().as_deref(), args)?;
    let c = &args.common;
    let rows = curve_rows(c)?;
    let text = match c.format(Format::Csv) {
        Format::Csv => curve_csv(&rows, c.channels()?.len()),
        Format::Json => json(&rows)?,
    };
    emit(c.out.as_deref(), &text)?;
    Ok(if rows.iter().any(|r| r.status == "error") { 1 } else { 0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelReport {
    pub k: usize,
    pub sigma_w2: f64,
    pub s_k: f64,
    pub d_k: f64,
    pub rho_k: f64,
    pub rho_bar_k: f64,
    /// Test-channel noise variance; infinite for an unused observer.
    pub sigma_z2: f64,
    pub active: bool,
    pub rate_term: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AllocationReport {
    pub mode: JointMode,
    pub unit: Unit,
    pub d: f64,
    #[serde(rename = "R_ceo")]
    pub r_ceo: f64,
    #[serde(rename = "R_wf")]
    pub r_wf: f64,
    pub base_rate: f64,
    pub lambda: Option<f64>,
    pub channels: Vec<ChannelReport>,
}

pub fn allocation_report(c: &Common, mode: JointMode) -> Result<AllocationReport, CliError> {
    let q = RdfQuery::new(c.model()?, c.channels()?, c.target()?).with_mode(mode).with_unit(c.unit());
    let ss = q.steady_state()?;
    let (r_ceo, alloc) = ceo_rdf(&q)?;
    let (r_wf, wf) = waterfilling(&q)?;
    let u = q.unit;
    let mut channels = Vec::with_capacity(q.k());
    for k in 0..q.k() {
        channels.push(ChannelReport {
            k: k + 1,
            sigma_w2: q.channels.sigma_w2()[k],
            s_k: alloc.s_k[k],
            d_k: alloc.d_k[k],
            rho_k: alloc.rho_k[k],
            rho_bar_k: alloc.rho_bar_k[k],
            sigma_z2: sigma_z_from_dk(&ss, k, alloc.d_k[k])?.variance(),
            active: alloc.active[k],
            rate_term: u.from_nats(alloc.rate_terms[k]),
        });
    }
    Ok(AllocationReport {
        mode,
        unit: u,
        d: q.d,
        r_ceo,
        r_wf,
        base_rate: u.from_nats(alloc.base_rate),
        lambda: wf.lambda,
        channels,
    })
}

pub fn allocate(args: CurveArgs) -> Result<i32, CliError> {
    let args = resolve(args.common.config.clone().as_deref(), args)?;
    let c = &args.common;
    let reports: Vec<AllocationReport> =
        c.mode().modes().into_iter().map(|m| allocation_report(c, m)).collect::<Result<_, _>>()?;
    let text = match c.format(Format::Csv) {
        Format::Json => json(&reports)?,
        Format::Csv => {
            let header = [
                "mode", "unit", "d", "R_ceo", "R_wf", "base_rate", "lambda", "k", "sigma_w2", "s_k", "d_k", "rho_k",
                "rho_bar_k", "sigma_z2", "active", "rate_term",
            ];
            let mut t = Table::new(header.iter().map(|s| s.to_string()).collect());
            for r in &reports {
                for ch in &r.channels {
                    t.push(vec![
                        r.mode.to_string(),
                        r.unit.to_string(),
                        num(r.d),
                        num(r.r_ceo),
                        num(r.r_wf),
                        num(r.base_rate),
                        opt_num(r.lambda),
                        ch.k.to_string(),
                        num(ch.sigma_w2),
                        num(ch.s_k),
                        num(ch.d_k),
                        num(ch.rho_k),
                        num(ch.rho_bar_k),
                        num(ch.sigma_z2),
                        ch.active.to_string(),
                        num(ch.rate_term),
                    ]);
                }
            }
            t.render()
        }
    };
    emit(c.out.as_deref(), &text)?;
    Ok(0)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Steps per trial after burn-in.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Write the per-step trace of trial 0 to this CSV file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Skip the Monte Carlo run and report the covariance analysis only.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub exact_only: Option<bool>,
}

impl Overlay for SimulateArgs {
    fn overlay(self, file: Self) -> Self {
        Self {
            common: self.common.overlay(file.common),
            horizon: self.horizon.or(file.horizon),
            trials: self.trials.or(file.trials),
            trace: self.trace.or(file.trace),
            exact_only: self.exact_only.or(file.exact_only),
        }
    }
}

pub fn scheme_config(args: &SimulateArgs) -> Result<SchemeConfig, CliError> {
    let c = &args.common;
    let q = RdfQuery::new(c.model()?, c.channels()?, c.target()?).with_mode(c.single_mode()?);
    let (_, alloc) = ceo_rdf(&q)?;
    let mut cfg = SchemeConfig::new(q.model, q.channels, alloc);
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    cfg.seed = c.seed();
    cfg.monte_carlo = !args.exact_only.unwrap_or(false);
    Ok(cfg)
}

pub fn simulate_cmd(args: SimulateArgs) -> Result<i32, CliError> {
    let args = resolve(args.common.config.clone().as_deref(), args)?;
    let cfg = scheme_config(&args)?;
    let report: SimReport = simulate(&cfg)?;
    if let Some(path) = &args.trace {
        let mut buf = Vec::new();
        write_trace(&cfg, 0, &mut buf)?;
        std::fs::write(path, buf).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
    }
    let text = match args.common.format(Format::Json) {
        Format::Json => json(&report)?,
        Format::Csv => record_csv(&report)?,
    };
    emit(args.common.out.as_deref(), &text)?;
    if report.within_4se == Some(false) {
        eprintln!("empirical MSE differs from the exact decoder MSE by more than 4 standard errors");
        return Ok(2);
    }
    Ok(0)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct BtArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Pmf and kernel table.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Slack on every `ı` threshold.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Slack on every `ȷ` threshold.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Decoding order as 1-based observer indices, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub perm: Option<Vec<usize>>,
    /// Block length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Monte Carlo samples for an independent estimate of Pr[E].
    #[arg(long)]
    pub samples: Option<u64>,
    /// Uniform list size L when the table declares none.
    #[arg(long)]
    pub l: Option<u64>,
    /// Uniform bin count M when the table declares none.
    #[arg(long)]
    pub m: Option<u64>,
    /// Choose L, M and the slacks from the information rates with this margin.
    #[arg(long)]
    pub delta: Option<f64>,
}

impl Overlay for BtArgs {
    fn overlay(self, file: Self) -> Self {
        Self {
            common: self.common.overlay(file.common),
            spec: self.spec.or(file.spec),
            alpha: self.alpha.or(file.alpha),
            beta: self.beta.or(file.beta),
            perm: self.perm.or(file.perm),
            n: self.n.or(file.n),
            samples: self.samples.or(file.samples),
            l: self.l.or(file.l),
            m: self.m.or(file.m),
            delta: self.delta.or(file.delta),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BtReport {
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    /// 1-based decoding order.
    pub perm: Vec<usize>,
    pub log_l: Vec<Vec<f64>>,
    pub log_m: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    #[serde(flatten)]
    pub bound: BtBound,
    /// Sharp form of the success lower bound.
    pub sharp: f64,
    pub monte_carlo: Option<McEstimate>,
    /// Directed-information rates for `perm`; absent unless encoders are separate.
    pub rates: Option<RateSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateSummary {
    pub per_observer: Vec<f64>,
    pub sum: f64,
    pub total_di: f64,
}

impl From<Rates> for RateSummary {
    fn from(r: Rates) -> Self {
        Self { per_observer: r.per_observer, sum: r.sum, total_di: r.total_di }
    }
}

pub fn bt_report(args: &BtArgs) -> Result<BtReport, CliError> {
    let path = args.spec.as_ref().ok_or_else(|| CliError::Usage("missing --spec".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
    let spec = parse_bt_spec(&text).map_err(|e| CliError::Spec { path: path.clone(), source: e })?;
    let layout = BtLayout::detect(&spec.pmf)?;
    let (t, k) = (layout.t, layout.k);
    let pi: Vec<usize> = match &args.perm {
        Some(p) => p.iter().map(|i| i.checked_sub(1).ok_or_else(|| CliError::Usage("--perm is 1-based".into()))).collect::<Result<_, _>>()?,
        None => (0..k).collect(),
    };
    let n = args.n.unwrap_or(1);
    let distortion = spec.distortion.clone().ok_or_else(|| CliError::Usage("the table declares no @distortion section".into()))?;
    let d = match (&spec.thresholds, args.common.d) {
        (_, Some(d)) => vec![d; t],
        (Some(th), None) => th.clone(),
        (None, None) => return Err(CliError::Usage("no @thresholds section; pass --d".into())),
    };
    let mut p = if let Some(delta) = args.delta {
        select_code_sizes(&spec.pmf, &pi, delta, n)?.params(d, distortion)?
    } else {
        let mut p = CodeParams::uniform(t, k, 1, 1, 0.0, 0.0, d, distortion);
        match (&spec.sizes, args.l, args.m) {
            (_, Some(l), Some(m)) => p.set_sizes(&vec![vec![l; k]; t], &vec![vec![m; k]; t])?,
            (Some((l, m)), None, None) => p.set_sizes(l, m)?,
            _ => return Err(CliError::Usage("sizes need an @sizes section, both --l and --m, or --delta".into())),
        }
        p.n = n;
        p.pi = pi.clone();
        p
    };
    if let Some(a) = args.alpha {
        p.alpha = vec![vec![a; k]; t];
    }
    if let Some(b) = args.beta {
        p.beta = vec![vec![b; k]; t];
    }
    let (bound, sharp) = evaluate_bt_both(&spec.pmf, &p)?;
    let monte_carlo = match args.samples {
        Some(s) => Some(estimate_event_probability(&spec.pmf, &p, s, args.common.seed())?),
        None => None,
    };
    let rates = achievable_rates(&spec.pmf, &pi).ok().map(RateSummary::from);
    Ok(BtReport {
        t,
        k,
        n: p.n,
        perm: p.pi.iter().map(|i| i + 1).collect(),
        log_l: p.log_l,
        log_m: p.log_m,
        alpha: p.alpha,
        beta: p.beta,
        d: p.d,
        bound,
        sharp,
        monte_carlo,
        rates,
    })
}

pub fn bt_eval(args: BtArgs) -> Result<i32, CliError> {
    let args = resolve(args.common.config.clone().as_deref(), args)?;
    let report = bt_report(&args)?;
    let text = match args.common.format(Format::Json) {
        Format::Json => json(&report)?,
        Format::Csv => record_csv(&report)?,
    };
    emit(args.common.out.as_deref(), &text)?;
    Ok(0)
}
