//! Text table format for joint pmfs, kernels and code parameters.
//!
//! ```text
//! # comment
//! @pmf
//! axes (X,1,0,2) (Y,1,1,2)
//! 0,0;0.45
//! 0,1;0.05
//! @kernel
//! target (U,1,1,2)
//! given (Y,1,1)
//! 0,0;1            # given values, then target value; probability
//! 1,1;1
//! @distortion X Xhat
//! 0,1;1            # x,xhat;value (missing pairs are 0)
//! @thresholds
//! 1;0.5            # time;d
//! @sizes
//! 1,1;4,2          # time,observer;L,M
//! ```
//!
//! Outcomes not listed have probability 0. Kernels are applied in the order
//! they appear.

use super::pmf::{Axis, AxisRef, Factor, FinitePmf};
use crate::error::{Error, Result};

/// Per-time, per-observer table of `u64` values.
pub type SizeGrid = Vec<Vec<u64>>;
type DistortionEntries = (usize, String, String, Vec<(usize, usize, usize, f64)>);
type SizeEntries = Vec<(usize, usize, usize, u64, u64)>;

/// Everything a table file can declare.
#[derive(Debug, Clone, PartialEq)]
pub struct BtSpec {
    pub pmf: FinitePmf,
    /// `sd[x][xhat]`, when declared.
    pub distortion: Option<Vec<Vec<f64>>>,
    pub thresholds: Option<Vec<f64>>,
    /// `(L, M)` indexed `[time][observer]`.
    pub sizes: Option<(SizeGrid, SizeGrid)>,
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Splits `(a,b,c) (d,e,f)` into comma-separated groups.
fn tuples(line: usize, s: &str) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let open = rest.strip_prefix('(').ok_or_else(|| perr(line, format!("expected `(` at `{rest}`")))?;
        let close = open.find(')').ok_or_else(|| perr(line, "unclosed `(`"))?;
        out.push(open[..close].split(',').map(|p| p.trim().to_string()).collect());
        rest = open[close + 1..].trim_start();
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| perr(line, format!("invalid {what} `{}`", s.trim())))
}

fn axis_ref(line: usize, t: &[String]) -> Result<AxisRef> {
    if t.len() < 3 {
        return Err(perr(line, format!("axis `({})` needs name, time, observer", t.join(","))));
    }
    Ok(AxisRef::new(t[0].clone(), num(line, &t[1], "time")?, num(line, &t[2], "observer")?))
}

fn axis(line: usize, t: &[String]) -> Result<Axis> {
    if t.len() != 4 {
        return Err(perr(line, format!("axis `({})` needs name, time, observer, alphabet size", t.join(","))));
    }
    let r = axis_ref(line, t)?;
    let size: usize = num(line, &t[3], "alphabet size")?;
    if size == 0 {
        return Err(perr(line, "alphabet size must be positive"));
    }
    Ok(Axis { label: r, size })
}

/// `v,v,...;p,...` → (left values, right values).
fn row(line: usize, s: &str) -> Result<(Vec<String>, Vec<String>)> {
    let (l, r) = s.split_once(';').ok_or_else(|| perr(line, "expected `values;value`"))?;
    let split = |x: &str| x.split(',').map(|v| v.trim().to_string()).collect::<Vec<_>>();
    Ok((split(l), split(r)))
}

fn index(line: usize, values: &[String], sizes: &[usize]) -> Result<usize> {
    if values.len() != sizes.len() {
        return Err(perr(line, format!("expected {} values, got {}", sizes.len(), values.len())));
    }
    let mut idx = 0;
    for (v, &s) in values.iter().zip(sizes) {
        let v: usize = num(line, v, "value")?;
        if v >= s {
            return Err(perr(line, format!("value {v} outside alphabet of size {s}")));
        }
        idx = idx * s + v;
    }
    Ok(idx)
}

fn prob(line: usize, s: &str) -> Result<f64> {
    let p: f64 = num(line, s, "probability")?;
    if !(p.is_finite() && p >= 0.0) {
        return Err(perr(line, format!("probability {p} must be finite and non-negative")));
    }
    Ok(p)
}

enum Section {
    None,
    Pmf { axes: Option<(usize, Vec<Axis>)>, probs: Vec<f64> },
    Kernel { target: Option<(usize, Vec<Axis>)>, given: Option<Vec<AxisRef>>, rows: Vec<(usize, Vec<String>, f64)> },
    Distortion { names: (String, String), rows: Vec<(usize, usize, usize, f64)> },
    Thresholds(Vec<(usize, usize, f64)>),
    Sizes(SizeEntries),
}

#[derive(Default)]
struct Builder {
    pmf: Option<FinitePmf>,
    distortion: Option<DistortionEntries>,
    thresholds: Option<Vec<(usize, usize, f64)>>,
    sizes: Option<SizeEntries>,
}

impl Builder {
    fn close(&mut self, line: usize, sec: Section) -> Result<()> {
        match sec {
            Section::None => {}
            Section::Pmf { axes, probs } => {
                let (l, axes) = axes.ok_or_else(|| perr(line, "@pmf section without an `axes` line"))?;
                if self.pmf.is_some() {
                    return Err(perr(l, "only one @pmf section is allowed"));
                }
                self.pmf = Some(FinitePmf::new(axes, probs).map_err(|e| perr(l, e.to_string()))?);
            }
            Section::Kernel { target, given, rows } => {
                let (l, target) = target.ok_or_else(|| perr(line, "@kernel section without a `target` line"))?;
                let given = given.unwrap_or_default();
                let pmf = self.pmf.as_ref().ok_or_else(|| perr(l, "@kernel before @pmf"))?;
                let gsizes: Vec<usize> =
                    given.iter().map(|g| pmf.index_of(g).map(|a| pmf.axes()[a].size)).collect::<Result<_>>().map_err(|e| perr(l, e.to_string()))?;
                let tsizes: Vec<usize> = target.iter().map(|a| a.size).collect();
                let width: usize = tsizes.iter().product();
                let mut table = vec![0.0; gsizes.iter().product::<usize>() * width];
                for (rl, values, p) in rows {
                    if values.len() != gsizes.len() + tsizes.len() {
                        return Err(perr(rl, format!("expected {} values, got {}", gsizes.len() + tsizes.len(), values.len())));
                    }
                    let g = index(rl, &values[..gsizes.len()], &gsizes)?;
                    let t = index(rl, &values[gsizes.len()..], &tsizes)?;
                    table[g * width + t] = p;
                }
                let f = Factor::new(target, given, table).map_err(|e| perr(l, e.to_string()))?;
                self.pmf = Some(pmf.extend(&f).map_err(|e| perr(l, e.to_string()))?);
            }
            Section::Distortion { names, rows } => {
                self.distortion = Some((line, names.0, names.1, rows));
            }
            Section::Thresholds(v) => self.thresholds = Some(v),
            Section::Sizes(v) => self.sizes = Some(v),
        }
        Ok(())
    }

    fn finish(self) -> Result<BtSpec> {
        let pmf = self.pmf.ok_or_else(|| perr(0, "no @pmf section"))?;
        let distortion = match self.distortion {
            None => None,
            Some((l, a, b, rows)) => {
                let size = |name: &str| {
                    let sizes: Vec<usize> = pmf.axes().iter().filter(|x| x.label.name == name).map(|x| x.size).collect();
                    match sizes.first() {
                        Some(&s) if sizes.iter().all(|&v| v == s) => Ok(s),
                        Some(_) => Err(perr(l, format!("axes `{name}` have differing alphabets"))),
                        None => Err(perr(l, format!("no axis named `{name}`"))),
                    }
                };
                let (na, nb) = (size(&a)?, size(&b)?);
                let mut t = vec![vec![0.0; nb]; na];
                for (rl, x, y, v) in rows {
                    if x >= na || y >= nb {
                        return Err(perr(rl, format!("pair ({x},{y}) outside {na}×{nb}")));
                    }
                    t[x][y] = v;
                }
                Some(t)
            }
        };
        let thresholds = match self.thresholds {
            None => None,
            Some(rows) => {
                let t = rows.iter().map(|r| r.1).max().unwrap_or(0);
                let mut d = vec![None; t];
                for (rl, i, v) in rows {
                    if i == 0 {
                        return Err(perr(rl, "times start at 1"));
                    }
                    d[i - 1] = Some(v);
                }
                Some(d.into_iter().enumerate().map(|(i, v)| v.ok_or_else(|| perr(0, format!("no threshold for time {}", i + 1)))).collect::<Result<_>>()?)
            }
        };
        let sizes = match self.sizes {
            None => None,
            Some(rows) => {
                let t = rows.iter().map(|r| r.1).max().unwrap_or(0);
                let k = rows.iter().map(|r| r.2).max().unwrap_or(0);
                let mut l = vec![vec![0u64; k]; t];
                let mut m = vec![vec![0u64; k]; t];
                for (rl, i, kk, lv, mv) in rows {
                    if i == 0 || kk == 0 {
                        return Err(perr(rl, "times and observers start at 1"));
                    }
                    if !(lv >= mv && mv >= 1) {
                        return Err(perr(rl, format!("need L ≥ M ≥ 1, got {lv},{mv}")));
                    }
                    l[i - 1][kk - 1] = lv;
                    m[i - 1][kk - 1] = mv;
                }
                if m.iter().flatten().any(|v| *v == 0) {
                    return Err(perr(0, "@sizes must list every (time, observer) pair"));
                }
                Some((l, m))
            }
        };
        Ok(BtSpec { pmf, distortion, thresholds, sizes })
    }
}

/// Parses a table file.
pub fn parse_bt_spec(text: &str) -> Result<BtSpec> {
    let mut b = Builder::default();
    let mut sec = Section::None;
    let mut last = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        last = line;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(h) = s.strip_prefix('@') {
            let prev = std::mem::replace(&mut sec, Section::None);
            b.close(line, prev)?;
            let mut words = h.split_whitespace();
            sec = match words.next() {
                Some("pmf") => Section::Pmf { axes: None, probs: Vec::new() },
                Some("kernel") => Section::Kernel { target: None, given: None, rows: Vec::new() },
                Some("distortion") => {
                    let a = words.next().unwrap_or("X").to_string();
                    let c = words.next().unwrap_or("Xhat").to_string();
                    Section::Distortion { names: (a, c), rows: Vec::new() }
                }
                Some("thresholds") => Section::Thresholds(Vec::new()),
                Some("sizes") => Section::Sizes(Vec::new()),
                other => return Err(perr(line, format!("unknown section `@{}`", other.unwrap_or("")))),
            };
            continue;
        }
        match &mut sec {
            Section::None => return Err(perr(line, "content before the first section")),
            Section::Pmf { axes, probs } => {
                if let Some(rest) = s.strip_prefix("axes") {
                    let parsed: Vec<Axis> = tuples(line, rest)?.iter().map(|t| axis(line, t)).collect::<Result<_>>()?;
                    let total: usize = parsed.iter().map(|a| a.size).product();
                    if total > super::pmf::ENUMERATION_CAP as usize {
                        return Err(perr(line, "product alphabet exceeds the enumeration cap"));
                    }
                    *probs = vec![0.0; total];
                    *axes = Some((line, parsed));
                } else {
                    let (_, ax) = axes.as_ref().ok_or_else(|| perr(line, "outcome before `axes`"))?;
                    let (l, r) = row(line, s)?;
                    let sizes: Vec<usize> = ax.iter().map(|a| a.size).collect();
                    let idx = index(line, &l, &sizes)?;
                    probs[idx] = prob(line, &r[0])?;
                }
            }
            Section::Kernel { target, given, rows } => {
                if let Some(rest) = s.strip_prefix("target") {
                    *target = Some((line, tuples(line, rest)?.iter().map(|t| axis(line, t)).collect::<Result<_>>()?));
                } else if let Some(rest) = s.strip_prefix("given") {
                    *given = Some(tuples(line, rest)?.iter().map(|t| axis_ref(line, t)).collect::<Result<_>>()?);
                } else {
                    let (l, r) = row(line, s)?;
                    rows.push((line, l, prob(line, &r[0])?));
                }
            }
            Section::Distortion { rows, .. } => {
                let (l, r) = row(line, s)?;
                if l.len() != 2 {
                    return Err(perr(line, "expected `x,xhat;value`"));
                }
                let v: f64 = num(line, &r[0], "distortion")?;
                if !v.is_finite() {
                    return Err(perr(line, "distortion must be finite"));
                }
                rows.push((line, num(line, &l[0], "value")?, num(line, &l[1], "value")?, v));
            }
            Section::Thresholds(rows) => {
                let (l, r) = row(line, s)?;
                rows.push((line, num(line, &l[0], "time")?, num(line, &r[0], "threshold")?));
            }
            Section::Sizes(rows) => {
                let (l, r) = row(line, s)?;
                if l.len() != 2 || r.len() != 2 {
                    return Err(perr(line, "expected `time,observer;L,M`"));
                }
                rows.push((
                    line,
                    num(line, &l[0], "time")?,
                    num(line, &l[1], "observer")?,
                    num(line, &r[0], "L")?,
                    num(line, &r[1], "M")?,
                ));
            }
        }
    }
    b.close(last, sec)?;
    b.finish()
}
