//! Degree-2 polynomial meta-model of TET over exit width `W`, heterogeneity
//! `H` and exit type `E`, with leave-one-out coefficient of prognosis and
//! total-effect Sobol indices computed on the fitted polynomial.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual norm (relative to a unit column) below which a column counts as
/// a linear combination of the columns kept before it.
pub const COLLINEARITY_TOL: f64 = 1e-8;

/// A variable is excluded when dropping it lowers the CoP by less than this.
pub const SIGNIFICANCE_CUTOFF: f64 = 0.01;

pub const DEFAULT_SOBOL_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    W,
    H,
    E,
}

impl Var {
    pub const ALL: [Var; 3] = [Var::W, Var::H, Var::E];

    fn idx(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Var::W => "W",
            Var::H => "H",
            Var::E => "E",
        })
    }
}

/// One observation. `e` is 0 platform, 1 stairs, 2 jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    #[serde(rename = "W_m")]
    pub w: f64,
    #[serde(rename = "H_pct")]
    pub h: f64,
    #[serde(rename = "E_code")]
    pub e: u8,
    #[serde(rename = "TET_s")]
    pub tet: f64,
}

impl DesignPoint {
    pub fn new(w: f64, h: f64, e: u8, tet: f64) -> Self {
        DesignPoint { w, h, e, tet }
    }

    pub fn inputs(&self) -> [f64; 3] {
        [self.w, self.h, self.e as f64]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0) || !(0.0..=100.0).contains(&self.h) || self.e > 2 || !self.tet.is_finite() {
            return Err(Error::Schema(format!("invalid design point {self:?}")));
        }
        Ok(())
    }
}

pub fn read_design_csv(r: impl std::io::Read) -> Result<Vec<DesignPoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let want = ["W_m", "H_pct", "E_code", "TET_s"];
    let hdr = rd.headers()?.clone();
    if hdr.iter().collect::<Vec<_>>() != want {
        return Err(Error::Schema(format!(
            "expected columns {}, got {}",
            want.join(","),
            hdr.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let p: DesignPoint = row.map_err(|e| Error::Schema(e.to_string()))?;
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_design_csv(points: &[DesignPoint], w: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("design csv", e))?;
    Ok(())
}

/// Monomial `W^a H^b E^c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub name: &'static str,
    pub powers: [u8; 3],
}

impl Term {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .map(|(&p, &v)| v.powi(p as i32))
            .product()
    }

    pub fn involves(&self, v: Var) -> bool {
        self.powers[v.idx()] > 0
    }
}

const fn term(name: &'static str, w: u8, h: u8, e: u8) -> Term {
    Term {
        name,
        powers: [w, h, e],
    }
}

/// The ten terms `alpha_0 .. alpha_9` in order.
pub const TERMS: [Term; 10] = [
    term("1", 0, 0, 0),
    term("W", 1, 0, 0),
    term("H", 0, 1, 0),
    term("E", 0, 0, 1),
    term("W^2", 2, 0, 0),
    term("H^2", 0, 2, 0),
    term("E^2", 0, 0, 2),
    term("WH", 1, 1, 0),
    term("HE", 0, 1, 1),
    term("WE", 1, 0, 1),
];

/// Evaluates the full polynomial; `None` coefficients count as zero.
pub fn eval_poly(alpha: &[Option<f64>; 10], x: &[f64; 3]) -> f64 {
    TERMS
        .iter()
        .zip(alpha)
        .map(|(t, a)| a.unwrap_or(0.0) * t.eval(x))
        .sum()
}

pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let sst: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::DegenerateModel("constant response".into()));
    }
    let sse: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    Ok(1.0 - sse / sst)
}

/// Fitted polynomial meta-model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    /// `alpha_0 .. alpha_9`; `None` for a term that was not fitted.
    pub alpha: [Option<f64>; 10],
    /// Terms removed because their column was collinear.
    pub collinear: Vec<String>,
    /// Variables removed by the significance filter.
    pub excluded: Vec<Var>,
    pub r2: f64,
    pub cop: f64,
    /// Total-effect indices of the retained inputs that vary.
    pub s_t: BTreeMap<Var, f64>,
    pub cop_i: BTreeMap<Var, f64>,
    pub n: usize,
}

impl PolyModel {
    pub fn predict(&self, x: &[f64; 3]) -> f64 {
        eval_poly(&self.alpha, x)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        TERMS
            .iter()
            .position(|t| t.name == name)
            .and_then(|k| self.alpha[k])
    }

    /// `CoP(X_i)`, `None` if the variable was excluded or absent.
    pub fn cop_of(&self, v: Var) -> Option<f64> {
        self.cop_i.get(&v).copied()
    }
}

/// Least-squares fit on a fixed candidate term set.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Indices into [`TERMS`] of the fitted columns.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub coef: Vec<f64>,
    pub r2: f64,
    /// Leave-one-out coefficient of prognosis, clamped to [0, 1].
    pub cop: f64,
    pub residuals: Vec<f64>,
}

fn check_response(points: &[DesignPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::DegenerateModel("no design points".into()));
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.tet).sum::<f64>() / n;
    let sst: f64 = points.iter().map(|p| (p.tet - mean).powi(2)).sum();
    if !(sst > 1e-12 * (1.0 + mean * mean) * n) {
        return Err(Error::DegenerateModel("all-constant response".into()));
    }
    Ok(sst)
}

/// OLS on `candidates` (indices into [`TERMS`]), dropping collinear columns
/// in candidate order.
pub fn fit_terms(points: &[DesignPoint], candidates: &[usize]) -> Result<OlsFit> {
    let sst = check_response(points)?;
    let n = points.len();
    let xs: Vec<[f64; 3]> = points.iter().map(|p| p.inputs()).collect();
    let y = DVector::from_iterator(n, points.iter().map(|p| p.tet));

    // Sequential Gram-Schmidt on unit-normalized columns.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut cols = Vec::new();
    let mut scales = Vec::new();
    for &k in candidates {
        let c = DVector::from_iterator(n, xs.iter().map(|x| TERMS[k].eval(x)));
        let norm = c.norm();
        if !(norm > 0.0) {
            dropped.push(k);
            continue;
        }
        let u = &c / norm;
        let mut r = u.clone();
        for b in &basis {
            let d = r.dot(b);
            r.axpy(-d, b, 1.0);
        }
        let rn = r.norm();
        if rn < COLLINEARITY_TOL {
            dropped.push(k);
            continue;
        }
        basis.push(r / rn);
        kept.push(k);
        cols.push(u);
        scales.push(norm);
    }
    let p = kept.len();
    if p == 0 {
        return Err(Error::DegenerateModel("no usable regressors".into()));
    }
    if n < p {
        return Err(Error::DegenerateModel(format!("{n} points for {p} terms")));
    }
    let x = DMatrix::from_columns(&cols);
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::DegenerateModel("singular design".into()))?;
    let fitted = &x * &beta;
    let resid = &y - &fitted;
    let sse = resid.norm_squared();
    let mut press = 0.0;
    for i in 0..n {
        let h = q.row(i).norm_squared();
        let denom = 1.0 - h;
        if denom <= 1e-10 {
            press = f64::INFINITY;
            break;
        }
        press += (resid[i] / denom).powi(2);
    }
    let cop = (1.0 - press / sst).clamp(0.0, 1.0);
    let coef = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    Ok(OlsFit {
        kept,
        dropped,
        coef,
        r2: (1.0 - sse / sst).clamp(0.0, 1.0),
        cop: if cop.is_finite() { cop } else { 0.0 },
        residuals: resid.iter().copied().collect(),
    })
}

fn candidates(vars: &[Var]) -> Vec<usize> {
    (0..TERMS.len())
        .filter(|&k| Var::ALL.iter().all(|&v| !TERMS[k].involves(v) || vars.contains(&v)))
        .collect()
}

fn levels(points: &[DesignPoint], v: Var) -> Vec<f64> {
    let mut l: Vec<f64> = points.iter().map(|p| p.inputs()[v.idx()]).collect();
    l.sort_by(f64::total_cmp);
    l.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    l
}

/// Design levels per input, for the discrete-uniform Sobol measure.
pub fn design_levels(points: &[DesignPoint]) -> [Vec<f64>; 3] {
    Var::ALL.map(|v| levels(points, v))
}

/// Plain OLS over all ten terms; collinear columns dropped, no variable
/// filter.
pub fn fit_poly2(points: &[DesignPoint]) -> Result<PolyModel> {
    let vars: Vec<Var> = Var::ALL.to_vec();
    build_model(points, &vars, &[])
}

/// Leave-one-out CoP of the full term set restricted to `vars`.
pub fn cop_crossval(points: &[DesignPoint], vars: &[Var]) -> Result<f64> {
    Ok(fit_terms(points, &candidates(vars))?.cop)
}

fn build_model(points: &[DesignPoint], vars: &[Var], excluded: &[Var]) -> Result<PolyModel> {
    let fit = fit_terms(points, &candidates(vars))?;
    let mut alpha = [None; 10];
    for (k, c) in fit.kept.iter().zip(&fit.coef) {
        alpha[*k] = Some(*c);
    }
    let lv = design_levels(points);
    let present: Vec<Var> = vars.iter().copied().filter(|v| lv[v.idx()].len() > 1).collect();
    let s_t = if present.is_empty() {
        BTreeMap::new()
    } else {
        match total_indices(&alpha, &lv) {
            Ok(s) => present.iter().map(|&v| (v, s[v.idx()])).collect(),
            Err(_) => present.iter().map(|&v| (v, 0.0)).collect(),
        }
    };
    let cop_i = s_t.iter().map(|(&v, &s)| (v, fit.cop * s)).collect();
    Ok(PolyModel {
        alpha,
        collinear: fit.dropped.iter().map(|&k| TERMS[k].name.to_string()).collect(),
        excluded: excluded.to_vec(),
        r2: fit.r2,
        cop: fit.cop,
        s_t,
        cop_i,
        n: points.len(),
    })
}

/// Fit with the significance filter over `vars`: a varying input is
/// excluded when removing all its terms costs less than one CoP point.
pub fn fit_filtered(points: &[DesignPoint], vars: &[Var]) -> Result<PolyModel> {
    let lv = design_levels(points);
    let varying: Vec<Var> = vars.iter().copied().filter(|v| lv[v.idx()].len() > 1).collect();
    let constant: Vec<Var> = vars.iter().copied().filter(|v| !varying.contains(v)).collect();
    let full = cop_crossval(points, &varying)?;
    let mut excluded = constant;
    let mut keep = Vec::new();
    for &v in &varying {
        let rest: Vec<Var> = varying.iter().copied().filter(|&u| u != v).collect();
        let without = if rest.is_empty() {
            0.0
        } else {
            cop_crossval(points, &rest)?
        };
        if full - without < SIGNIFICANCE_CUTOFF {
            excluded.push(v);
        } else {
            keep.push(v);
        }
    }
    if keep.is_empty() {
        return Err(Error::DegenerateModel("every input failed the significance filter".into()));
    }
    excluded.sort();
    build_model(points, &keep, &excluded)
}

/// Exact total-effect indices of the polynomial under independent
/// discrete-uniform inputs over `levels`, by enumeration of the grid.
pub fn total_indices(alpha: &[Option<f64>; 10], levels: &[Vec<f64>; 3]) -> Result<[f64; 3]> {
    if levels.iter().any(|l| l.is_empty()) {
        return Err(Error::DegenerateModel("empty input level set".into()));
    }
    let f = |i: usize, j: usize, k: usize| eval_poly(alpha, &[levels[0][i], levels[1][j], levels[2][k]]);
    let dims = [levels[0].len(), levels[1].len(), levels[2].len()];
    let mut vals = Vec::with_capacity(dims.iter().product());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                vals.push(f(i, j, k));
            }
        }
    }
    let at = |i: usize, j: usize, k: usize| vals[(i * dims[1] + j) * dims[2] + k];
    let var = variance(&vals);
    if !(var > 1e-14 * (1.0 + mean(&vals).powi(2))) {
        return Err(Error::DegenerateModel("meta-model has zero variance".into()));
    }
    let mut st = [0.0; 3];
    for (v, s) in st.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut count = 0usize;
        let others: Vec<usize> = (0..3).filter(|&u| u != v).collect();
        for a in 0..dims[others[0]] {
            for b in 0..dims[others[1]] {
                let line: Vec<f64> = (0..dims[v])
                    .map(|x| {
                        let mut idx = [0usize; 3];
                        idx[v] = x;
                        idx[others[0]] = a;
                        idx[others[1]] = b;
                        at(idx[0], idx[1], idx[2])
                    })
                    .collect();
                acc += variance(&line);
                count += 1;
            }
        }
        *s = (acc / count as f64 / var).max(0.0);
    }
    Ok(st)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

const HALTON_PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];

/// Total-effect indices by Jansen's pick/freeze estimator on a Halton
/// sequence mapped onto the discrete levels.
pub fn sampled_total_indices(
    alpha: &[Option<f64>; 10],
    levels: &[Vec<f64>; 3],
    n: usize,
) -> Result<[f64; 3]> {
    if n < 2 || levels.iter().any(|l| l.is_empty()) {
        return Err(Error::DegenerateModel("sampling needs points and levels".into()));
    }
    let pick = |u: f64, l: &Vec<f64>| l[((u * l.len() as f64) as usize).min(l.len() - 1)];
    let mut fa = Vec::with_capacity(n);
    let mut fb = Vec::with_capacity(n);
    let mut sq = [0.0; 3];
    for s in 0..n {
        // Skip the origin of the sequence.
        let idx = s as u64 + 1;
        let u: Vec<f64> = HALTON_PRIMES.iter().map(|&p| radical_inverse(idx, p)).collect();
        let a = [pick(u[0], &levels[0]), pick(u[1], &levels[1]), pick(u[2], &levels[2])];
        let b = [pick(u[3], &levels[0]), pick(u[4], &levels[1]), pick(u[5], &levels[2])];
        let ya = eval_poly(alpha, &a);
        fa.push(ya);
        fb.push(eval_poly(alpha, &b));
        for (v, acc) in sq.iter_mut().enumerate() {
            let mut ab = a;
            ab[v] = b[v];
            *acc += (ya - eval_poly(alpha, &ab)).powi(2);
        }
    }
    let mut all = fa;
    all.extend(fb);
    let var = variance(&all);
    if !(var > 0.0) {
        return Err(Error::DegenerateModel("meta-model has zero variance".into()));
    }
    Ok(sq.map(|s| (s / (2.0 * n as f64) / var).max(0.0)))
}

/// Full-grid model plus one model per exit type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub mode: String,
    pub all: PolyModel,
    /// Keyed by exit code.
    pub per_exit: BTreeMap<u8, PolyModel>,
}

pub fn per_exit_analysis(points: &[DesignPoint]) -> Result<BTreeMap<u8, PolyModel>> {
    let mut codes: Vec<u8> = points.iter().map(|p| p.e).collect();
    codes.sort();
    codes.dedup();
    codes
        .into_iter()
        .map(|e| {
            let slice: Vec<DesignPoint> = points.iter().copied().filter(|p| p.e == e).collect();
            fit_filtered(&slice, &[Var::W, Var::H]).map(|m| (e, m))
        })
        .collect()
}

pub fn analyze(points: &[DesignPoint], mode: &str) -> Result<SensitivityReport> {
    for p in points {
        p.validate()?;
    }
    Ok(SensitivityReport {
        mode: mode.to_string(),
        all: fit_filtered(points, &Var::ALL)?,
        per_exit: per_exit_analysis(points)?,
    })
}

pub fn exit_label(code: u8) -> &'static str {
    match code {
        0 => "platform",
        1 => "stairs",
        2 => "jump",
        _ => "unknown",
    }
}

impl SensitivityReport {
    /// CoP table in percent; `excluded` for filtered inputs, `--` for
    /// inputs not in the model.
    pub fn write_cop_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["slice", "CoP", "CoP_W", "CoP_H", "CoP_E"])?;
        let cell = |m: &PolyModel, v: Var, in_model: bool| {
            if !in_model {
                "--".to_string()
            } else if m.excluded.contains(&v) {
                "excluded".to_string()
            } else {
                m.cop_of(v).map_or("--".into(), |c| format!("{:.1}", 100.0 * c))
            }
        };
        let mut row = |name: String, m: &PolyModel, with_e: bool| -> Result<()> {
            w.write_record([
                name,
                format!("{:.1}", 100.0 * m.cop),
                cell(m, Var::W, true),
                cell(m, Var::H, true),
                cell(m, Var::E, with_e),
            ])?;
            Ok(())
        };
        row("all".into(), &self.all, true)?;
        for (e, m) in &self.per_exit {
            row(format!("{}_E{}", exit_label(*e), e), m, false)?;
        }
        w.flush().map_err(|e| Error::io("cop csv", e))?;
        Ok(())
    }

    /// Coefficient table: one row per model, columns alpha_0..alpha_9, R2.
    pub fn write_coefficients_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut hdr = vec!["model".to_string()];
        hdr.extend((0..10).map(|k| format!("alpha_{k}")));
        hdr.push("R2".into());
        w.write_record(&hdr)?;
        let mut put = |name: String, m: &PolyModel| -> Result<()> {
            let mut rec = vec![name];
            rec.extend(m.alpha.iter().map(|a| a.map_or(String::new(), |a| format!("{a:.6}"))));
            rec.push(format!("{:.4}", m.r2));
            w.write_record(&rec)?;
            Ok(())
        };
        put(self.mode.clone(), &self.all)?;
        for (e, m) in &self.per_exit {
            put(format!("{}_{}", self.mode, exit_label(*e)), m)?;
        }
        w.flush().map_err(|e| Error::io("coefficient csv", e))?;
        Ok(())
    }
}
