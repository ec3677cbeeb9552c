//! Conditional-logit fit of the sampled partial likelihood, with AIC-based
//! node-type sub-model comparison and leave-one-effect-out contributions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::event_model::NodeType;
use crate::riskset::{DesignError, DesignMatrix};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("non-finite statistic in stratum {stratum}, column {column}")]
    NonFinite { stratum: usize, column: String },
    #[error("beta has length {got}, design has {expected} columns")]
    Dimension { got: usize, expected: usize },
    #[error("no stratum with at least two rows")]
    NoUsableStrata,
    #[error("beta must be finite")]
    NonFiniteBeta,
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Negative log partial likelihood with its exact derivatives.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Strata flattened row-major for the selected columns.
struct Prepared {
    k: usize,
    x: Vec<f64>,
    /// (first row, row count, case row offset)
    strata: Vec<(usize, usize, usize)>,
    n_obs: usize,
}

const CHUNK: usize = 512;

impl Prepared {
    fn new(design: &DesignMatrix, keep_singletons: bool) -> Result<Self, FitError> {
        let k = design.columns.len();
        let mut x = Vec::with_capacity(design.n_rows() * k);
        let mut strata = Vec::with_capacity(design.strata.len());
        let mut row = 0;
        for s in &design.strata {
            if s.rows.len() < 2 && !keep_singletons {
                continue;
            }
            let Some(case) = s.rows.iter().position(|r| r.is_case) else {
                continue;
            };
            for r in &s.rows {
                for (j, &v) in r.values.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(FitError::NonFinite { stratum: s.event, column: design.columns[j].clone() });
                    }
                }
                x.extend_from_slice(&r.values);
            }
            strata.push((row, s.rows.len(), case));
            row += s.rows.len();
        }
        Ok(Prepared { k, x, strata, n_obs: row })
    }

    /// Accumulates value, and optionally gradient and Hessian (upper triangle,
    /// packed) over a range of strata.
    fn partial(&self, strata: &[(usize, usize, usize)], beta: &[f64], order: u8) -> Partial {
        let k = self.k;
        let mut part = Partial::new(k, order);
        let mut eta = Vec::new();
        let mut mean = vec![0.0; k];
        for &(first, n, case) in strata {
            let rows = &self.x[first * k..(first + n) * k];
            eta.clear();
            eta.extend(rows.chunks_exact(k).map(|r| dot(r, beta)));
            let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in eta.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            part.value.add(max + sum.ln() - dot(&rows[case * k..(case + 1) * k], beta));
            if order == 0 {
                continue;
            }
            mean.iter_mut().for_each(|m| *m = 0.0);
            for (r, &w) in rows.chunks_exact(k).zip(eta.iter()) {
                let p = w / sum;
                for (m, &v) in mean.iter_mut().zip(r) {
                    *m += p * v;
                }
            }
            let case_row = &rows[case * k..(case + 1) * k];
            for j in 0..k {
                part.gradient[j] += mean[j] - case_row[j];
            }
            if order < 2 {
                continue;
            }
            for (r, &w) in rows.chunks_exact(k).zip(eta.iter()) {
                let p = w / sum;
                let mut idx = 0;
                for a in 0..k {
                    let da = p * (r[a] - mean[a]);
                    for b in a..k {
                        part.hessian[idx] += da * (r[b] - mean[b]);
                        idx += 1;
                    }
                }
            }
        }
        part
    }

    fn evaluate(&self, beta: &[f64], order: u8) -> Partial {
        let parts: Vec<Partial> = self
            .strata
            .par_chunks(CHUNK)
            .map(|chunk| self.partial(chunk, beta, order))
            .collect();
        let mut total = Partial::new(self.k, order);
        for p in parts {
            total.merge(&p);
        }
        total
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Partial {
    value: Compensated,
    gradient: Vec<f64>,
    hessian: Vec<f64>,
}

impl Partial {
    fn new(k: usize, order: u8) -> Self {
        Partial {
            value: Compensated::default(),
            gradient: if order >= 1 { vec![0.0; k] } else { Vec::new() },
            hessian: if order >= 2 { vec![0.0; k * (k + 1) / 2] } else { Vec::new() },
        }
    }

    fn merge(&mut self, other: &Partial) {
        self.value.add(other.value.sum);
        self.value.add(other.value.comp);
        for (a, b) in self.gradient.iter_mut().zip(&other.gradient) {
            *a += b;
        }
        for (a, b) in self.hessian.iter_mut().zip(&other.hessian) {
            *a += b;
        }
    }

    fn hessian_matrix(&self, k: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(k, k);
        let mut idx = 0;
        for a in 0..k {
            for b in a..k {
                h[(a, b)] = self.hessian[idx];
                h[(b, a)] = self.hessian[idx];
                idx += 1;
            }
        }
        h
    }
}

/// `−Σ_strata [βᵀx_case − log Σ_rows exp(βᵀx_row)]` with exact gradient and
/// Hessian. Every stratum of the design is included.
pub fn neg_log_partial_likelihood(design: &DesignMatrix, beta: &[f64]) -> Result<LikelihoodEval, FitError> {
    if beta.len() != design.columns.len() {
        return Err(FitError::Dimension { got: beta.len(), expected: design.columns.len() });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(FitError::NonFiniteBeta);
    }
    let prep = Prepared::new(design, true)?;
    let p = prep.evaluate(beta, 2);
    Ok(LikelihoodEval { value: p.value.value(), gradient: p.gradient.clone(), hessian: p.hessian_matrix(prep.k) })
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Convergence threshold on the gradient max-norm.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Diagonal ridge used when the information matrix is not positive definite.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tolerance: 1e-8, max_iterations: 100, max_halvings: 20, ridge: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub effects: Vec<String>,
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub log_lik: f64,
    pub aic: f64,
    pub n_events: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// The ridge had to be added to the information matrix.
    pub ridge_used: bool,
}

impl FitResult {
    pub fn z(&self, i: usize) -> f64 {
        self.beta[i] / self.std_errors[i]
    }

    /// Two-sided Wald p-value.
    pub fn p_value(&self, i: usize) -> f64 {
        statrs::function::erf::erfc(self.z(i).abs() / std::f64::consts::SQRT_2)
    }

    pub fn position(&self, effect: &str) -> Option<usize> {
        self.effects.iter().position(|e| e == effect)
    }
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64, ridge_used: &mut bool) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(rhs);
    }
    *ridge_used = true;
    let n = h.nrows();
    let mut r = ridge;
    loop {
        let reg = h + DMatrix::identity(n, n) * r;
        if let Some(ch) = reg.cholesky() {
            return ch.solve(rhs);
        }
        r *= 10.0;
        if !r.is_finite() {
            return DVector::zeros(n);
        }
    }
}

fn inverse_diagonal(h: &DMatrix<f64>, ridge: f64, ridge_used: &mut bool) -> Vec<f64> {
    let n = h.nrows();
    let inv = match h.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            *ridge_used = true;
            let mut r = ridge;
            loop {
                if let Some(ch) = (h + DMatrix::identity(n, n) * r).cholesky() {
                    break ch.inverse();
                }
                r *= 10.0;
                if !r.is_finite() {
                    return vec![f64::INFINITY; n];
                }
            }
        }
    };
    (0..n).map(|i| inv[(i, i)].max(0.0).sqrt()).collect()
}

/// Fits the model restricted to `effect_subset` (all columns when empty).
pub fn fit<S: AsRef<str>>(design: &DesignMatrix, effect_subset: &[S]) -> Result<FitResult, FitError> {
    fit_with(design, effect_subset, &FitOptions::default())
}

pub fn fit_with<S: AsRef<str>>(design: &DesignMatrix, effect_subset: &[S], opts: &FitOptions) -> Result<FitResult, FitError> {
    let selected;
    let design = if effect_subset.is_empty() {
        design
    } else {
        selected = design.select_columns(effect_subset)?;
        &selected
    };
    let prep = Prepared::new(design, false)?;
    if prep.strata.is_empty() {
        return Err(FitError::NoUsableStrata);
    }
    let k = prep.k;
    let mut beta = vec![0.0; k];
    let mut ridge_used = false;
    let mut current = prep.evaluate(&beta, 2);
    let mut iterations = 0;
    let grad_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while iterations < opts.max_iterations && grad_norm(&current.gradient) > opts.tolerance {
        let h = current.hessian_matrix(k);
        let g = DVector::from_vec(current.gradient.clone());
        let step = solve_spd(&h, &(-g), opts.ridge, &mut ridge_used);
        let old = current.value.value();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let v = prep.evaluate(&trial, 0).value.value();
            if v.is_finite() && v <= old + 1e-12 * old.abs().max(1.0) {
                accepted = Some(trial);
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some(b) => {
                beta = b;
                current = prep.evaluate(&beta, 2);
            }
            None => break,
        }
    }
    let gradient_norm = grad_norm(&current.gradient);
    let converged = gradient_norm <= opts.tolerance;
    let std_errors = inverse_diagonal(&current.hessian_matrix(k), opts.ridge, &mut ridge_used);
    let log_lik = -current.value.value();
    Ok(FitResult {
        effects: design.columns.clone(),
        beta,
        std_errors,
        log_lik,
        aic: 2.0 * k as f64 - 2.0 * log_lik,
        n_events: prep.strata.len(),
        n_obs: prep.n_obs,
        converged,
        iterations,
        gradient_norm,
        ridge_used,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub fit: FitResult,
    /// `AIC(model) − AIC(full)`.
    pub delta_aic: f64,
}

/// Column names remaining after dropping every effect that mentions `ty`.
pub fn columns_without<'a>(columns: &'a [String], ty: NodeType) -> Vec<&'a str> {
    columns
        .iter()
        .filter(|c| !c.split('.').any(|tok| tok == ty.token()))
        .map(String::as_str)
        .collect()
}

/// Full model and the three sub-models without one node type.
pub fn compare_node_type_submodels(design: &DesignMatrix) -> Result<Vec<ComparisonRow>, FitError> {
    let specs: Vec<(String, Vec<&str>)> = std::iter::once(("full".to_string(), design.columns.iter().map(String::as_str).collect()))
        .chain([
            ("without_authors", NodeType::Author),
            ("without_references", NodeType::Reference),
            ("without_keywords", NodeType::Keyword),
        ]
        .map(|(label, ty)| (label.to_string(), columns_without(&design.columns, ty))))
        .collect();
    let fits = specs
        .par_iter()
        .map(|(_, cols)| fit(design, cols))
        .collect::<Result<Vec<_>, _>>()?;
    let full_aic = fits[0].aic;
    Ok(specs
        .into_iter()
        .zip(fits)
        .map(|((model, _), fit)| ComparisonRow { model, delta_aic: fit.aic - full_aic, fit })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ContributionRow {
    pub excluded: String,
    pub aic: f64,
    /// `AIC(without effect) − AIC(full)`.
    pub delta_aic: f64,
    pub log_lik: f64,
    /// `logLik(without effect) − logLik(full)`; never positive beyond solver tolerance.
    pub delta_log_lik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContributionTable {
    pub full: FitResult,
    pub rows: Vec<ContributionRow>,
}

/// Refits without each effect in turn; rows sorted by ΔAIC, largest first.
pub fn effect_contributions(design: &DesignMatrix) -> Result<ContributionTable, FitError> {
    let none: [&str; 0] = [];
    let full = fit(design, &none)?;
    let mut rows = design
        .columns
        .par_iter()
        .map(|excluded| {
            let keep: Vec<&str> = design.columns.iter().filter(|c| *c != excluded).map(String::as_str).collect();
            let sub = fit(design, &keep)?;
            Ok(ContributionRow {
                excluded: excluded.clone(),
                aic: sub.aic,
                delta_aic: sub.aic - full.aic,
                log_lik: sub.log_lik,
                delta_log_lik: sub.log_lik - full.log_lik,
                converged: sub.converged,
            })
        })
        .collect::<Result<Vec<_>, FitError>>()?;
    rows.sort_by(|a, b| b.delta_aic.total_cmp(&a.delta_aic));
    Ok(ContributionTable { full, rows })
}

/// Tab-separated `effect, beta, se, z, p`.
pub fn write_estimates_tsv<W: Write>(fit: &FitResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "effect\tbeta\tse\tz\tp")?;
    for (i, name) in fit.effects.iter().enumerate() {
        writeln!(w, "{}\t{}\t{}\t{}\t{}", name, fit.beta[i], fit.std_errors[i], fit.z(i), fit.p_value(i))?;
    }
    Ok(())
}

/// One row per model: fit summary and ΔAIC against the full model.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,n_effects,n_events,n_obs,log_lik,aic,delta_aic,converged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.4},{:.4},{:.4},{}",
            r.model,
            r.fit.effects.len(),
            r.fit.n_events,
            r.fit.n_obs,
            r.fit.log_lik,
            r.fit.aic,
            r.delta_aic,
            r.fit.converged
        )?;
    }
    Ok(())
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Effect-by-model coefficient table, cells `beta (se)` with Wald stars;
/// empty where a sub-model lacks the effect.
pub fn write_coefficients_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    write!(w, "effect")?;
    for r in rows {
        write!(w, ",{}", r.model)?;
    }
    writeln!(w)?;
    let Some(full) = rows.first() else { return Ok(()) };
    for effect in &full.fit.effects {
        write!(w, "{effect}")?;
        for r in rows {
            match r.fit.position(effect) {
                Some(i) => write!(w, ",{:.2} ({:.2}){}", r.fit.beta[i], r.fit.std_errors[i], stars(r.fit.p_value(i)))?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_contributions_csv<W: Write>(table: &ContributionTable, mut w: W) -> std::io::Result<()> {
    writeln!(w, "excluded_effect,aic,delta_aic,log_lik,delta_log_lik")?;
    for r in &table.rows {
        writeln!(w, "{},{:.2},{:.2},{:.2},{:.2}", r.excluded, r.aic, r.delta_aic, r.log_lik, r.delta_log_lik)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riskset::{Row, Stratum};

    fn design(rows: Vec<Vec<(Vec<f64>, bool)>>, columns: &[&str]) -> DesignMatrix {
        let strata = rows
            .into_iter()
            .enumerate()
            .map(|(i, rs)| Stratum {
                event: i,
                rows: rs.into_iter().map(|(values, is_case)| Row { values, is_case, duplicate: false }).collect(),
            })
            .collect();
        DesignMatrix::new(columns.iter().map(|s| s.to_string()).collect(), strata, 0, 0, String::new())
    }

    #[test]
    fn zero_beta_value_is_n_log_rows() {
        let strata: Vec<_> = (0..50)
            .map(|i| (0..11).map(|r| (vec![(i * r) as f64 * 0.1, r as f64], r == 0)).collect())
            .collect();
        let d = design(strata, &["a", "b"]);
        let ev = neg_log_partial_likelihood(&d, &[0.0, 0.0]).unwrap();
        assert!((ev.value - 50.0 * 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_zero_gradient() {
        let d = design(vec![vec![(vec![1.0, 2.0], true), (vec![1.0, 0.5], false), (vec![1.0, 3.0], false)]], &["a", "b"]);
        let ev = neg_log_partial_likelihood(&d, &[0.3, -0.2]).unwrap();
        assert_eq!(ev.gradient[0], 0.0);
        assert!(ev.gradient[1].abs() > 0.0);
    }

    #[test]
    fn non_finite_value_names_stratum_and_column() {
        let d = design(vec![vec![(vec![1.0, f64::NAN], true), (vec![0.0, 0.0], false)]], &["a", "b"]);
        match neg_log_partial_likelihood(&d, &[0.0, 0.0]) {
            Err(FitError::NonFinite { stratum, column }) => assert_eq!((stratum, column.as_str()), (0, "b")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(neg_log_partial_likelihood(&d, &[0.0]), Err(FitError::Dimension { .. })));
    }

    #[test]
    fn separating_column_is_reported_honestly() {
        // the case always has the largest value: the MLE runs off to infinity
        let strata: Vec<_> = (0..20)
            .map(|i| vec![(vec![2.0 + i as f64 * 0.01], true), (vec![1.0], false), (vec![0.0], false)])
            .collect();
        let d = design(strata, &["sep"]);
        let f = fit(&d, &["sep"]).unwrap();
        let opts = FitOptions::default();
        assert!(!f.converged || f.ridge_used || f.beta[0] > 10.0);
        assert!(f.beta[0] > 5.0);
        assert!(f.iterations <= opts.max_iterations);
    }

    #[test]
    fn case_only_strata_are_dropped_by_fit() {
        let d = design(
            vec![
                vec![(vec![1.0], true)],
                vec![(vec![1.0], true), (vec![0.0], false)],
                vec![(vec![0.0], true), (vec![1.0], false), (vec![0.5], false)],
            ],
            &["a"],
        );
        let f = fit(&d, &["a"]).unwrap();
        assert_eq!(f.n_events, 2);
        assert_eq!(f.n_obs, 5);
        assert!(f.converged);
        assert!((f.aic - (2.0 - 2.0 * f.log_lik)).abs() < 1e-12);
    }

    #[test]
    fn drop_rule_keeps_nine_of_standard() {
        let cols: Vec<String> = crate::statistics::STANDARD_EFFECTS.iter().map(|s| s.to_string()).collect();
        for ty in NodeType::ALL {
            assert_eq!(columns_without(&cols, ty).len(), 9);
        }
    }
}
