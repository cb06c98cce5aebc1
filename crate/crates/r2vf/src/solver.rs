//! Penalized GLM fitting by cyclic coordinate descent.
//!
//! Gaussian models minimize `(1/2N)·RSS + lambda·P(coef)` directly; binomial
//! models wrap the same weighted coordinate-descent core in an IRLS outer
//! loop on `(1/N)·negative log-likelihood + lambda·P(coef)`. Penalties are
//! per-column: L1 columns get exact soft-thresholding (and therefore exact
//! zeros), L2 columns a ridge shrink, unpenalized columns a plain update.

use serde::{Deserialize, Serialize};

use crate::encoding::{EncodedDesign, FeatureBlock};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const MAX_SWEEPS_GAUSSIAN: usize = 10_000;
pub const MAX_IRLS_ITER: usize = 100;
pub const MAX_SWEEPS_IRLS: usize = 1_000;
const MIN_IRLS_WEIGHT: f64 = 1e-8;
/// active-set sweeps tolerated before falling back to a direct solve
const ACTIVE_SOLVE_AFTER: usize = 50;
const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    L1,
    L2,
    None,
}

/// Per-column penalty layout plus the global regularization strength.
/// The intercept is handled separately and is never penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub kinds: Vec<PenaltyKind>,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn uniform(n_cols: usize, kind: PenaltyKind, lambda: f64) -> Self {
        PenaltySpec {
            kinds: vec![kind; n_cols],
            lambda,
        }
    }

    /// alpha = 1 gives L1 on every column, alpha = 2 gives L2.
    pub fn from_alpha(n_cols: usize, alpha: u8, lambda: f64) -> Result<Self> {
        let kind = match alpha {
            1 => PenaltyKind::L1,
            2 => PenaltyKind::L2,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "alpha must be 1 or 2, got {other}"
                )))
            }
        };
        Ok(PenaltySpec::uniform(n_cols, kind, lambda))
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        PenaltySpec {
            kinds: self.kinds.clone(),
            lambda,
        }
    }

    fn validate(&self, n_cols: usize) -> Result<()> {
        if self.kinds.len() != n_cols {
            return Err(Error::DesignMismatch(format!(
                "penalty covers {} columns, design has {n_cols}",
                self.kinds.len()
            )));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn term(&self, coefficients: &[f64]) -> f64 {
        coefficients
            .iter()
            .zip(&self.kinds)
            .map(|(&c, kind)| match kind {
                PenaltyKind::L1 => c.abs(),
                PenaltyKind::L2 => 0.5 * c * c,
                PenaltyKind::None => 0.0,
            })
            .sum::<f64>()
            * self.lambda
    }
}

/// A fitted penalized GLM. Coefficients align with the design columns the
/// model was fitted on; `blocks` carries the feature/level metadata needed
/// to interpret them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmModel {
    pub family: Family,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub blocks: Vec<FeatureBlock>,
    pub lambda: f64,
}

impl GlmModel {
    pub fn nonzero_count(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0.0).count()
    }

    pub fn block(&self, feature: &str) -> Option<&FeatureBlock> {
        self.blocks.iter().find(|b| b.feature == feature)
    }
}

/// Lambda path diagnostics from a validation-set search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda_grid: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub chosen_lambda: f64,
    pub nonzero_count: usize,
    pub train_loss: f64,
    pub validation_loss_at_chosen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: &'static str,
    pub value: f64,
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One weighted coordinate-descent sweep over the given columns.
/// `residual` is maintained as `working_response - intercept - X·coef`.
/// Returns the largest absolute coefficient change seen.
#[allow(clippy::too_many_arguments)]
fn sweep(
    design: &EncodedDesign,
    penalty: &PenaltySpec,
    weights: Option<&[f64]>,
    col_indices: &[usize],
    coefficients: &mut [f64],
    intercept: &mut f64,
    residual: &mut [f64],
    weight_sum: f64,
) -> f64 {
    let n = design.n_rows as f64;
    let lambda = penalty.lambda;
    let mut max_change = 0.0f64;

    for &j in col_indices {
        let col = &design.cols[j];
        if col.is_empty() {
            continue;
        }
        let old = coefficients[j];
        let (dot, norm) = match weights {
            None => {
                let mut s = 0.0;
                for &i in col {
                    s += residual[i as usize];
                }
                (s, col.len() as f64)
            }
            Some(w) => {
                let mut s = 0.0;
                let mut nw = 0.0;
                for &i in col {
                    let wi = w[i as usize];
                    s += wi * residual[i as usize];
                    nw += wi;
                }
                (s, nw)
            }
        };
        if norm <= 0.0 {
            continue;
        }
        let z = dot / n + (norm / n) * old;
        let denom = norm / n;
        let new = match penalty.kinds[j] {
            PenaltyKind::L1 => soft_threshold(z, lambda) / denom,
            PenaltyKind::L2 => z / (denom + lambda),
            PenaltyKind::None => z / denom,
        };
        if new != old {
            let delta = old - new;
            for &i in col {
                residual[i as usize] += delta;
            }
            coefficients[j] = new;
            max_change = max_change.max((new - old).abs());
        }
    }

    // Intercept: unpenalized weighted mean of the residual.
    if weight_sum > 0.0 {
        let shift = match weights {
            None => residual.iter().sum::<f64>() / weight_sum,
            Some(w) => residual
                .iter()
                .zip(w)
                .map(|(&r, &wi)| r * wi)
                .sum::<f64>()
                / weight_sum,
        };
        if shift != 0.0 {
            *intercept += shift;
            for r in residual.iter_mut() {
                *r -= shift;
            }
            max_change = max_change.max(shift.abs());
        }
    }
    max_change
}

/// Iterate coordinate descent to convergence on a quadratic problem
/// (Gaussian loss or one IRLS working response). Uses the glmnet active-set
/// scheme: full sweeps bracket passes restricted to nonzero coefficients.
#[allow(clippy::too_many_arguments)]
fn cd_converge(
    design: &EncodedDesign,
    penalty: &PenaltySpec,
    weights: Option<&[f64]>,
    coefficients: &mut [f64],
    intercept: &mut f64,
    residual: &mut [f64],
    tol: f64,
    max_sweeps: usize,
    fit_intercept: bool,
) -> Result<()> {
    let all: Vec<usize> = (0..design.n_cols()).collect();
    // weight_sum = 0 disables the intercept update inside `sweep`.
    let weight_sum = if !fit_intercept {
        0.0
    } else {
        match weights {
            None => design.n_rows as f64,
            Some(w) => w.iter().sum(),
        }
    };
    let mut sweeps = 0usize;
    let mut last_change = f64::INFINITY;
    while sweeps < max_sweeps {
        let change = sweep(
            design, penalty, weights, &all, coefficients, intercept, residual, weight_sum,
        );
        sweeps += 1;
        last_change = change;
        if change < tol {
            return Ok(());
        }
        let active: Vec<usize> = (0..design.n_cols())
            .filter(|&j| coefficients[j] != 0.0)
            .collect();
        while sweeps < max_sweeps {
            let change = sweep(
                design, penalty, weights, &active, coefficients, intercept, residual, weight_sum,
            );
            sweeps += 1;
            if change < tol {
                break;
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: sweeps,
        last_change,
    })
}

/// Precomputed Gram-matrix workspace for Gaussian fits (glmnet's
/// "covariance updates"): coordinate steps cost O(p) instead of O(nnz),
/// and the workspace is shared across a whole lambda path.
pub struct CovWorkspace {
    n: f64,
    p: usize,
    /// row-major p*p Gram matrix X'X
    gram: Vec<f64>,
    /// X'1 per column
    col_sums: Vec<f64>,
    /// X'y per column
    xty: Vec<f64>,
    y_sum: f64,
    yty: f64,
}

impl CovWorkspace {
    pub fn new(design: &EncodedDesign, target: &[f64]) -> Self {
        let p = design.n_cols();
        let n_rows = design.n_rows;
        let mut gram = vec![0.0f64; p * p];
        // accumulate row-wise: columns active in a row are few
        let mut row_active: Vec<Vec<u32>> = vec![Vec::new(); n_rows];
        for (j, col) in design.cols.iter().enumerate() {
            for &i in col {
                row_active[i as usize].push(j as u32);
            }
        }
        for active in &row_active {
            for (a, &ja) in active.iter().enumerate() {
                let ja = ja as usize;
                for &jb in &active[a..] {
                    gram[ja * p + jb as usize] += 1.0;
                }
            }
        }
        for ja in 0..p {
            for jb in 0..ja {
                gram[ja * p + jb] = gram[jb * p + ja];
            }
        }
        let col_sums: Vec<f64> = design.cols.iter().map(|c| c.len() as f64).collect();
        let xty: Vec<f64> = design
            .cols
            .iter()
            .map(|c| c.iter().map(|&i| target[i as usize]).sum())
            .collect();
        CovWorkspace {
            n: n_rows as f64,
            p,
            gram,
            col_sums,
            xty,
            y_sum: target.iter().sum(),
            yty: target.iter().map(|v| v * v).sum(),
        }
    }

    /// X'r and 1'r for the residual r = y - b0 - X c.
    fn gradient_state(&self, intercept: f64, coefficients: &[f64]) -> (Vec<f64>, f64) {
        let mut g = self.xty.clone();
        let mut resid_sum = self.y_sum - self.n * intercept;
        for j in 0..self.p {
            g[j] -= intercept * self.col_sums[j];
        }
        for (k, &c) in coefficients.iter().enumerate() {
            if c != 0.0 {
                let row = &self.gram[k * self.p..(k + 1) * self.p];
                for j in 0..self.p {
                    g[j] -= c * row[j];
                }
                resid_sum -= c * self.col_sums[k];
            }
        }
        (g, resid_sum)
    }

    /// Penalized objective evaluated from the maintained gradient state,
    /// using c'Gc = c . (X'y - b0 X'1 - g).
    fn objective_from_state(
        &self,
        penalty: &PenaltySpec,
        intercept: f64,
        coefficients: &[f64],
        g: &[f64],
    ) -> f64 {
        let mut cxty = 0.0;
        let mut ccols = 0.0;
        let mut cgc = 0.0;
        for (j, &c) in coefficients.iter().enumerate() {
            if c != 0.0 {
                cxty += c * self.xty[j];
                ccols += c * self.col_sums[j];
                cgc += c * (self.xty[j] - intercept * self.col_sums[j] - g[j]);
            }
        }
        let rss = self.yty - 2.0 * intercept * self.y_sum + self.n * intercept * intercept
            - 2.0 * cxty
            + 2.0 * intercept * ccols
            + cgc;
        rss / (2.0 * self.n) + penalty.term(coefficients)
    }
}

/// Direct solve of the penalized normal equations restricted to the current
/// active set, with L1 signs frozen at their current values. Coordinate
/// descent crawls when nested split columns make the Gram matrix
/// ill-conditioned; once the active set and signs have settled this jumps
/// straight to the stationary point. The candidate is accepted only if it
/// lowers the objective, so a wrong sign guess or a singular subsystem just
/// means another round of ordinary sweeps.
fn try_active_set_solve(
    ws: &CovWorkspace,
    penalty: &PenaltySpec,
    coefficients: &mut [f64],
    intercept: &mut f64,
    g: &mut Vec<f64>,
    resid_sum: &mut f64,
    fit_intercept: bool,
) -> bool {
    let active: Vec<usize> = (0..ws.p).filter(|&j| coefficients[j] != 0.0).collect();
    if active.is_empty() {
        return false;
    }
    let off = usize::from(fit_intercept);
    let dim = active.len() + off;
    let mut m = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
    if fit_intercept {
        m[(0, 0)] = ws.n;
        rhs[0] = ws.y_sum;
        for (a, &ja) in active.iter().enumerate() {
            m[(0, a + 1)] = ws.col_sums[ja];
            m[(a + 1, 0)] = ws.col_sums[ja];
        }
    }
    let nlam = ws.n * penalty.lambda;
    for (a, &ja) in active.iter().enumerate() {
        for (b, &jb) in active.iter().enumerate() {
            m[(a + off, b + off)] = ws.gram[ja * ws.p + jb];
        }
        rhs[a + off] = ws.xty[ja];
        match penalty.kinds[ja] {
            PenaltyKind::L1 => rhs[a + off] -= nlam * coefficients[ja].signum(),
            PenaltyKind::L2 => m[(a + off, a + off)] += nlam,
            PenaltyKind::None => {}
        }
    }
    let Some(sol) = m.lu().solve(&rhs) else {
        return false;
    };
    // a sign flip on an L1 coordinate means the frozen-sign system does not
    // describe the objective there; clamp those coordinates to zero and let
    // later sweeps reintroduce them with the right sign
    let mut target_point = coefficients.to_vec();
    for (a, &ja) in active.iter().enumerate() {
        target_point[ja] =
            if matches!(penalty.kinds[ja], PenaltyKind::L1) && sol[a + off] * coefficients[ja] < 0.0
            {
                0.0
            } else {
                sol[a + off]
            };
    }
    let target_b0 = if fit_intercept { sol[0] } else { *intercept };
    let before = ws.objective_from_state(penalty, *intercept, coefficients, g);

    // backtrack toward the solved point; no coordinate crosses zero along the
    // segment, so the frozen-sign objective stays exact
    let mut t = 1.0;
    for _ in 0..4 {
        let candidate: Vec<f64> = coefficients
            .iter()
            .zip(&target_point)
            .map(|(&c, &s)| c + t * (s - c))
            .collect();
        let candidate_b0 = *intercept + t * (target_b0 - *intercept);
        let (candidate_g, candidate_rs) = ws.gradient_state(candidate_b0, &candidate);
        let after = ws.objective_from_state(penalty, candidate_b0, &candidate, &candidate_g);
        if after.is_finite() && after < before {
            coefficients.copy_from_slice(&candidate);
            *intercept = candidate_b0;
            *g = candidate_g;
            *resid_sum = candidate_rs;
            return true;
        }
        t *= 0.5;
    }
    false
}

/// One coordinate-descent sweep on the Gram workspace. `g` is maintained
/// as X'(y - b0 - Xc) and `resid_sum` as 1'(y - b0 - Xc).
fn sweep_cov(
    ws: &CovWorkspace,
    penalty: &PenaltySpec,
    col_indices: &[usize],
    coefficients: &mut [f64],
    intercept: &mut f64,
    g: &mut [f64],
    resid_sum: &mut f64,
    fit_intercept: bool,
) -> f64 {
    let n = ws.n;
    let lambda = penalty.lambda;
    let mut max_change = 0.0f64;
    for &j in col_indices {
        let norm = ws.gram[j * ws.p + j];
        if norm <= 0.0 {
            continue;
        }
        let old = coefficients[j];
        let z = g[j] / n + (norm / n) * old;
        let denom = norm / n;
        let new = match penalty.kinds[j] {
            PenaltyKind::L1 => soft_threshold(z, lambda) / denom,
            PenaltyKind::L2 => z / (denom + lambda),
            PenaltyKind::None => z / denom,
        };
        if new != old {
            let d = new - old;
            let row = &ws.gram[j * ws.p..(j + 1) * ws.p];
            for (gk, &gram_jk) in g.iter_mut().zip(row) {
                *gk -= d * gram_jk;
            }
            *resid_sum -= d * ws.col_sums[j];
            coefficients[j] = new;
            max_change = max_change.max(d.abs());
        }
    }
    if fit_intercept {
        let shift = *resid_sum / n;
        if shift != 0.0 {
            *intercept += shift;
            for (gk, &s) in g.iter_mut().zip(&ws.col_sums) {
                *gk -= shift * s;
            }
            *resid_sum = 0.0;
            max_change = max_change.max(shift.abs());
        }
    }
    max_change
}

/// Gaussian fit on a prebuilt workspace; used directly by path searches.
pub fn fit_gaussian_cov(
    ws: &CovWorkspace,
    blocks: &[FeatureBlock],
    penalty: &PenaltySpec,
    warm_start: Option<&[f64]>,
    options: FitOptions,
) -> Result<GlmModel> {
    if let Some(w) = warm_start {
        if w.len() != ws.p {
            return Err(Error::DesignMismatch(format!(
                "warm start has {} coefficients, design has {} columns",
                w.len(),
                ws.p
            )));
        }
    }
    if ws.n == 0.0 {
        return Err(Error::InvalidArgument("empty design".into()));
    }
    if penalty.kinds.len() != ws.p {
        return Err(Error::DesignMismatch(format!(
            "penalty covers {} columns, design has {}",
            penalty.kinds.len(),
            ws.p
        )));
    }
    if penalty.lambda < 0.0 || !penalty.lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {}",
            penalty.lambda
        )));
    }
    let mut coefficients = warm_start.map_or_else(|| vec![0.0; ws.p], <[f64]>::to_vec);
    let mut intercept = 0.0;
    let (mut g, mut resid_sum) = ws.gradient_state(intercept, &coefficients);

    let all: Vec<usize> = (0..ws.p).collect();
    let mut sweeps = 0usize;
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    'outer: while sweeps < MAX_SWEEPS_GAUSSIAN {
        let change = sweep_cov(
            ws, penalty, &all, &mut coefficients, &mut intercept, &mut g, &mut resid_sum,
            options.fit_intercept,
        );
        sweeps += 1;
        last_change = change;
        if change < options.tol {
            converged = true;
            break;
        }
        let active: Vec<usize> = (0..ws.p).filter(|&j| coefficients[j] != 0.0).collect();
        let mut inner = 0usize;
        while sweeps < MAX_SWEEPS_GAUSSIAN {
            let change = sweep_cov(
                ws, penalty, &active, &mut coefficients, &mut intercept, &mut g,
                &mut resid_sum, options.fit_intercept,
            );
            sweeps += 1;
            inner += 1;
            last_change = change;
            if change < options.tol {
                continue 'outer;
            }
            // when sweeps crawl on the stabilized active set, jump to its
            // stationary point directly; the next full sweep verifies KKT
            if inner >= ACTIVE_SOLVE_AFTER {
                try_active_set_solve(
                    ws, penalty, &mut coefficients, &mut intercept, &mut g, &mut resid_sum,
                    options.fit_intercept,
                );
                continue 'outer;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: sweeps,
            last_change,
        });
    }
    Ok(GlmModel {
        family: Family::Gaussian,
        intercept,
        coefficients,
        blocks: blocks.to_vec(),
        lambda: penalty.lambda,
    })
}

/// Options for the low-level fit entry point. `fit` uses the defaults.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub tol: f64,
    pub fit_intercept: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: DEFAULT_TOL,
            fit_intercept: true,
        }
    }
}

pub fn fit(
    design: &EncodedDesign,
    target: &[f64],
    family: Family,
    penalty: &PenaltySpec,
    warm_start: Option<&[f64]>,
) -> Result<GlmModel> {
    fit_with_options(design, target, family, penalty, warm_start, FitOptions::default())
}

pub fn fit_with_options(
    design: &EncodedDesign,
    target: &[f64],
    family: Family,
    penalty: &PenaltySpec,
    warm_start: Option<&[f64]>,
    options: FitOptions,
) -> Result<GlmModel> {
    let n = design.n_rows;
    if target.len() != n {
        return Err(Error::DesignMismatch(format!(
            "design has {n} rows, target has {}",
            target.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty design".into()));
    }
    penalty.validate(design.n_cols())?;
    if family == Family::Binomial {
        if let Some(&bad) = target.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::NonBinaryTarget(bad));
        }
    }

    let mut coefficients = match warm_start {
        Some(w) => {
            if w.len() != design.n_cols() {
                return Err(Error::DesignMismatch(format!(
                    "warm start has {} coefficients, design has {} columns",
                    w.len(),
                    design.n_cols()
                )));
            }
            w.to_vec()
        }
        None => vec![0.0; design.n_cols()],
    };
    let mut intercept = 0.0;

    match family {
        Family::Gaussian => {
            let ws = CovWorkspace::new(design, target);
            let model = fit_gaussian_cov(&ws, &design.blocks, penalty, Some(&coefficients), options)?;
            intercept = model.intercept;
            coefficients = model.coefficients;
        }
        Family::Binomial => {
            let mut weights = vec![0.0; n];
            let mut working = vec![0.0; n];
            let mut converged = false;
            for _ in 0..MAX_IRLS_ITER {
                let eta = linear_predictor(design, intercept, &coefficients);
                for i in 0..n {
                    let p = sigmoid(eta[i]);
                    let w = (p * (1.0 - p)).max(MIN_IRLS_WEIGHT);
                    weights[i] = w;
                    working[i] = eta[i] + (target[i] - p) / w;
                }
                let before = (intercept, coefficients.clone());
                let mut residual: Vec<f64> = working
                    .iter()
                    .zip(&eta)
                    .map(|(&z, &e)| z - e)
                    .collect();
                cd_converge(
                    design, penalty, Some(&weights), &mut coefficients, &mut intercept,
                    &mut residual, options.tol, MAX_SWEEPS_IRLS, options.fit_intercept,
                )?;
                let outer_change = coefficients
                    .iter()
                    .zip(&before.1)
                    .map(|(a, b)| (a - b).abs())
                    .fold((intercept - before.0).abs(), f64::max);
                if outer_change < options.tol.max(1e-8) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoConvergence {
                    iterations: MAX_IRLS_ITER,
                    last_change: f64::NAN,
                });
            }
        }
    }

    Ok(GlmModel {
        family,
        intercept,
        coefficients,
        blocks: design.blocks.clone(),
        lambda: penalty.lambda,
    })
}

pub fn linear_predictor(design: &EncodedDesign, intercept: f64, coefficients: &[f64]) -> Vec<f64> {
    let mut eta = vec![intercept; design.n_rows];
    for (j, col) in design.cols.iter().enumerate() {
        let c = coefficients[j];
        if c != 0.0 {
            for &i in col {
                eta[i as usize] += c;
            }
        }
    }
    eta
}

/// Penalized objective value at the given model:
/// `(1/2N)·RSS + lambda·P` for Gaussian, `(1/N)·NLL + lambda·P` for binomial.
pub fn objective(
    design: &EncodedDesign,
    target: &[f64],
    model: &GlmModel,
    penalty: &PenaltySpec,
) -> f64 {
    let n = design.n_rows as f64;
    let eta = linear_predictor(design, model.intercept, &model.coefficients);
    let loss = match model.family {
        Family::Gaussian => {
            eta.iter()
                .zip(target)
                .map(|(&e, &y)| (y - e) * (y - e))
                .sum::<f64>()
                / (2.0 * n)
        }
        Family::Binomial => {
            eta.iter()
                .zip(target)
                .map(|(&e, &y)| {
                    // log(1 + exp(eta)) - y*eta, computed stably
                    let log1pexp = if e > 30.0 { e } else { (1.0 + e.exp()).ln() };
                    log1pexp - y * e
                })
                .sum::<f64>()
                / n
        }
    };
    loss + penalty.term(&model.coefficients)
}

/// Gradient of the smooth loss part with respect to each column coefficient:
/// `-(1/N)·x_j'(y - mu)`. Used by the KKT and finite-difference oracles.
pub fn smooth_gradient(
    design: &EncodedDesign,
    target: &[f64],
    family: Family,
    intercept: f64,
    coefficients: &[f64],
) -> Vec<f64> {
    let n = design.n_rows as f64;
    let eta = linear_predictor(design, intercept, coefficients);
    let errs: Vec<f64> = match family {
        Family::Gaussian => eta.iter().zip(target).map(|(&e, &y)| y - e).collect(),
        Family::Binomial => eta
            .iter()
            .zip(target)
            .map(|(&e, &y)| y - sigmoid(e))
            .collect(),
    };
    design
        .cols
        .iter()
        .map(|col| -col.iter().map(|&i| errs[i as usize]).sum::<f64>() / n)
        .collect()
}

/// Smallest lambda that zeroes every penalized L1 coefficient, from the
/// intercept-only residual. Also used as a heuristic cap for pure-L2 grids.
pub fn lambda_max(
    design: &EncodedDesign,
    target: &[f64],
    family: Family,
    penalty: &PenaltySpec,
) -> Result<f64> {
    penalty.validate(design.n_cols())?;
    let n = design.n_rows as f64;
    let mean = target.iter().sum::<f64>() / n;
    if target.iter().all(|&y| y == target[0]) {
        return Err(Error::DegenerateGrid("target is constant".into()));
    }
    let resid: Vec<f64> = match family {
        Family::Gaussian => target.iter().map(|&y| y - mean).collect(),
        Family::Binomial => target.iter().map(|&y| y - mean).collect(),
    };
    let mut best = 0.0f64;
    for (j, col) in design.cols.iter().enumerate() {
        if penalty.kinds[j] == PenaltyKind::None {
            continue;
        }
        let g = col.iter().map(|&i| resid[i as usize]).sum::<f64>().abs() / n;
        best = best.max(g);
    }
    if best <= 0.0 {
        return Err(Error::DegenerateGrid(
            "every penalized column is orthogonal to the centered target".into(),
        ));
    }
    Ok(best)
}

/// Log-spaced grid from lambda_max down to lambda_max·ratio, descending.
pub fn lambda_grid(
    design: &EncodedDesign,
    target: &[f64],
    family: Family,
    penalty: &PenaltySpec,
    grid_size: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid_size must be >= 2, got {grid_size}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let top = lambda_max(design, target, family, penalty)?;
    let log_top = top.ln();
    let log_bot = (top * ratio).ln();
    let step = (log_bot - log_top) / (grid_size - 1) as f64;
    Ok((0..grid_size)
        .map(|k| (log_top + step * k as f64).exp())
        .collect())
}

pub fn predict(model: &GlmModel, design: &EncodedDesign) -> Result<Vec<f64>> {
    if design.n_cols() != model.coefficients.len() {
        return Err(Error::DesignMismatch(format!(
            "model has {} coefficients, design has {} columns",
            model.coefficients.len(),
            design.n_cols()
        )));
    }
    let eta = linear_predictor(design, model.intercept, &model.coefficients);
    Ok(match model.family {
        Family::Gaussian => eta,
        Family::Binomial => eta
            .iter()
            .map(|&e| sigmoid(e).clamp(PROB_CLIP, 1.0 - PROB_CLIP))
            .collect(),
    })
}

/// RMSE for Gaussian models, log-loss for binomial ones.
pub fn metrics(predictions: &[f64], target: &[f64], family: Family) -> Result<Metric> {
    if predictions.is_empty() || predictions.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "metrics need equal nonempty inputs, got {} predictions and {} targets",
            predictions.len(),
            target.len()
        )));
    }
    let n = predictions.len() as f64;
    Ok(match family {
        Family::Gaussian => {
            let mse = predictions
                .iter()
                .zip(target)
                .map(|(&p, &y)| (p - y) * (p - y))
                .sum::<f64>()
                / n;
            Metric {
                name: "rmse",
                value: mse.sqrt(),
            }
        }
        Family::Binomial => {
            let loss = predictions
                .iter()
                .zip(target)
                .map(|(&p, &y)| {
                    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n;
            Metric {
                name: "log_loss",
                value: loss,
            }
        }
    })
}

/// Warm-started path fit over a descending grid, scored on a validation set.
/// Ties in validation loss go to the larger lambda.
pub fn lambda_search(
    train: &EncodedDesign,
    train_target: &[f64],
    valid: &EncodedDesign,
    valid_target: &[f64],
    family: Family,
    penalty: &PenaltySpec,
    grid: &[f64],
) -> Result<(GlmModel, FitReport)> {
    if valid.n_rows == 0 || valid_target.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let ws = match family {
        Family::Gaussian => Some(CovWorkspace::new(train, train_target)),
        Family::Binomial => None,
    };
    let mut losses = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<f64>> = None;
    let mut best: Option<(GlmModel, f64)> = None;
    for &lambda in &grid {
        let model = match &ws {
            Some(ws) => fit_gaussian_cov(
                ws,
                &train.blocks,
                &penalty.with_lambda(lambda),
                warm.as_deref(),
                FitOptions::default(),
            )?,
            None => fit(
                train,
                train_target,
                family,
                &penalty.with_lambda(lambda),
                warm.as_deref(),
            )?,
        };
        let preds = predict(&model, valid)?;
        let loss = metrics(&preds, valid_target, family)?.value;
        losses.push(loss);
        warm = Some(model.coefficients.clone());
        // strict `<` keeps the earlier (larger) lambda on ties
        if best.as_ref().map_or(true, |(_, b)| loss < *b) {
            best = Some((model, loss));
        }
    }
    let (model, best_loss) = best.unwrap();
    let train_preds = predict(&model, train)?;
    let train_loss = metrics(&train_preds, train_target, family)?.value;
    let report = FitReport {
        lambda_grid: grid,
        validation_loss: losses,
        chosen_lambda: model.lambda,
        nonzero_count: model.nonzero_count(),
        train_loss,
        validation_loss_at_chosen: best_loss,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{Coding, FeatureBlock};

    /// Build a design from dense 0/1 columns.
    pub(crate) fn design_from_dense(cols: &[Vec<u8>]) -> EncodedDesign {
        let n_rows = cols.first().map_or(0, |c| c.len());
        let sparse = cols
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect::<Vec<_>>();
        let blocks = vec![FeatureBlock {
            feature: "f".into(),
            coding: Coding::OneHot,
            levels: (0..cols.len()).map(|i| format!("l{i}")).collect(),
            reference: "ref".into(),
            start: 0,
        }];
        EncodedDesign {
            n_rows,
            cols: sparse,
            blocks,
        }
    }

    #[test]
    fn lambda_zero_matches_ols_univariate() {
        // y = 2*x + 1 exactly; one binary column.
        let design = design_from_dense(&[vec![1, 0, 1, 0, 1, 1]]);
        let y = vec![3.0, 1.0, 3.0, 1.0, 3.0, 3.0];
        let penalty = PenaltySpec::uniform(1, PenaltyKind::L1, 0.0);
        let m = fit(&design, &y, Family::Gaussian, &penalty, None).unwrap();
        assert!((m.intercept - 1.0).abs() < 1e-6);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn univariate_soft_threshold() {
        // Single binary column, no intercept: coef = S(x'y/N, lambda)/(x'x/N).
        let x = vec![1u8, 0, 1, 0, 1, 0, 1, 0];
        let design = design_from_dense(&[x.clone()]);
        let y = vec![2.0, 0.0, 4.0, 0.0, 2.0, 0.0, 4.0, 0.0];
        let n = y.len() as f64;
        let xty: f64 = x
            .iter()
            .zip(&y)
            .map(|(&xi, &yi)| f64::from(xi) * yi)
            .sum::<f64>()
            / n;
        let xtx: f64 = x.iter().map(|&xi| f64::from(xi * xi)).sum::<f64>() / n;
        for lambda in [0.0, 0.1, 0.5, 1.0, 2.0] {
            let penalty = PenaltySpec::uniform(1, PenaltyKind::L1, lambda);
            let m = fit_with_options(
                &design,
                &y,
                Family::Gaussian,
                &penalty,
                None,
                FitOptions {
                    fit_intercept: false,
                    ..FitOptions::default()
                },
            )
            .unwrap();
            let expect = soft_threshold(xty, lambda) / xtx;
            assert!(
                (m.coefficients[0] - expect).abs() < 1e-9,
                "lambda={lambda}: got {} want {expect}",
                m.coefficients[0]
            );
        }
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let design = design_from_dense(&[
            vec![1, 0, 0, 1, 0, 1],
            vec![0, 1, 0, 1, 1, 0],
            vec![0, 0, 1, 0, 1, 1],
        ]);
        let y = vec![3.0, -1.0, 2.0, 5.0, 0.0, -2.0];
        let penalty = PenaltySpec::uniform(3, PenaltyKind::L1, 0.0);
        let lmax = lambda_max(&design, &y, Family::Gaussian, &penalty).unwrap();
        let m = fit(
            &design,
            &y,
            Family::Gaussian,
            &penalty.with_lambda(lmax),
            None,
        )
        .unwrap();
        assert!(m.coefficients.iter().all(|&c| c == 0.0), "{:?}", m.coefficients);
        // KKT at lambda_max: every penalized gradient within lambda.
        let g = smooth_gradient(&design, &y, Family::Gaussian, m.intercept, &m.coefficients);
        assert!(g.iter().all(|gj| gj.abs() <= lmax + 1e-9));
    }

    #[test]
    fn grid_is_log_spaced() {
        let design = design_from_dense(&[vec![1, 0, 1, 0]]);
        let y = vec![2.0, 0.0, 2.0, 0.0];
        let penalty = PenaltySpec::uniform(1, PenaltyKind::L1, 0.0);
        let grid = lambda_grid(&design, &y, Family::Gaussian, &penalty, 5, 1e-4).unwrap();
        assert_eq!(grid.len(), 5);
        let steps: Vec<f64> = grid.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        for s in &steps {
            assert!((s - steps[0]).abs() < 1e-12);
        }
        assert!((grid[4] / grid[0] - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn grid_ratio_one_rejected() {
        let design = design_from_dense(&[vec![1, 0, 1, 0]]);
        let y = vec![2.0, 0.0, 2.0, 0.0];
        let penalty = PenaltySpec::uniform(1, PenaltyKind::L1, 0.0);
        assert!(lambda_grid(&design, &y, Family::Gaussian, &penalty, 5, 1.0).is_err());
    }

    #[test]
    fn constant_target_degenerate_grid() {
        let design = design_from_dense(&[vec![1, 0, 1, 0]]);
        let y = vec![1.0; 4];
        let penalty = PenaltySpec::uniform(1, PenaltyKind::L1, 0.0);
        assert!(matches!(
            lambda_grid(&design, &y, Family::Gaussian, &penalty, 5, 0.01),
            Err(Error::DegenerateGrid(_))
        ));
    }

    #[test]
    fn binomial_rejects_non_binary_target() {
        let design = design_from_dense(&[vec![1, 0, 1, 0]]);
        let y = vec![0.0, 1.0, 0.5, 1.0];
        let penalty = PenaltySpec::uniform(1, PenaltyKind::L1, 0.1);
        assert!(matches!(
            fit(&design, &y, Family::Binomial, &penalty, None),
            Err(Error::NonBinaryTarget(_))
        ));
    }

    #[test]
    fn predict_identities() {
        let design = design_from_dense(&[vec![0, 1]]);
        let model = GlmModel {
            family: Family::Gaussian,
            intercept: 1.5,
            coefficients: vec![2.0],
            blocks: design.blocks.clone(),
            lambda: 0.0,
        };
        let p = predict(&model, &design).unwrap();
        assert_eq!(p, vec![1.5, 3.5]);

        let logistic = GlmModel {
            family: Family::Binomial,
            ..model
        };
        let p = predict(&logistic, &design).unwrap();
        assert!((p[0] - sigmoid(1.5)).abs() < 1e-15);
        // all-zero eta would give exactly 0.5
        let zero = GlmModel {
            family: Family::Binomial,
            intercept: 0.0,
            coefficients: vec![0.0],
            blocks: design.blocks.clone(),
            lambda: 0.0,
        };
        assert_eq!(predict(&zero, &design).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn metric_values() {
        let m = metrics(&[0.0, 2.0], &[0.0, 0.0], Family::Gaussian).unwrap();
        assert!((m.value - 2.0f64.sqrt()).abs() < 1e-15);
        let m = metrics(&[1.0, 1.0], &[1.0, 1.0], Family::Gaussian).unwrap();
        assert_eq!(m.value, 0.0);
        let m = metrics(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0], Family::Binomial).unwrap();
        assert!((m.value - 2.0f64.ln()).abs() < 1e-12);
        assert!(metrics(&[], &[], Family::Gaussian).is_err());
    }

    #[test]
    fn tie_breaks_to_larger_lambda() {
        // Orthogonal useless column: validation loss flat across the grid tail.
        let train = design_from_dense(&[vec![1, 0, 1, 0, 1, 0, 1, 0]]);
        let y = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let valid = design_from_dense(&[vec![0, 0]]);
        let vy = vec![0.0, 0.0];
        let penalty = PenaltySpec::uniform(1, PenaltyKind::L1, 0.0);
        let grid = vec![10.0, 1.0, 0.1];
        let (model, report) =
            lambda_search(&train, &y, &valid, &vy, Family::Gaussian, &penalty, &grid).unwrap();
        // validation rows are all-zero: predictions = intercept = 0 at every
        // lambda, a three-way tie, so the largest lambda must win.
        assert_eq!(model.lambda, 10.0);
        assert_eq!(report.chosen_lambda, 10.0);
    }
}
