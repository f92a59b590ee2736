//! Maximum marginal-likelihood fitting.
//!
//! Predictors are centred and scaled internally so one optimizer tolerance
//! suits raw columns of very different magnitude (VMC counts vs. light levels);
//! estimates and standard errors are mapped back to the raw scale. The
//! variance is optimized as `ln σ²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::{evaluate, GroupedData, Rule};
use super::{icc, information_criteria};
use crate::corr::Stars;
use crate::error::{Error, Result};
use crate::special::normal_two_sided;

/// Below this `ln σ²` the variance is treated as sitting on the zero boundary.
pub const LOG_SIGMA2_BOUNDARY: f64 = -10.0;

const INTERCEPT: &str = "Constant";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Quadrature nodes per group.
    pub nodes: usize,
    /// Convergence threshold on the max-norm of the log-likelihood gradient
    /// (internal scaled coordinates).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            nodes: 15,
            tol: 1e-5,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    /// Log-odds units on the raw predictor scale.
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub stars: Stars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Intercept (`"Constant"`) first, then predictors in model order.
    pub coefficients: Vec<Coefficient>,
    pub sigma_u2: f64,
    /// Delta-method standard error; `None` on the boundary.
    pub sigma_u2_se: Option<f64>,
    pub loglik: f64,
    /// Parameter count: fixed effects, intercept and the variance.
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    pub icc: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    pub converged: bool,
    pub at_boundary: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn intercept(&self) -> &Coefficient {
        &self.coefficients[0]
    }

    /// Population-averaged probability for a predictor row (intercept
    /// excluded): `∫ logistic(η + u) N(u; 0, σ²) du`.
    pub fn marginal_probability(&self, x: &[f64]) -> f64 {
        let beta = self.beta();
        let eta = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        if self.sigma_u2 == 0.0 {
            return logistic(eta);
        }
        let (z, w) = super::quadrature::gauss_hermite(31);
        let s = (2.0 * self.sigma_u2).sqrt();
        z.iter()
            .zip(&w)
            .map(|(z, w)| w * logistic(eta + s * z))
            .sum::<f64>()
            / std::f64::consts::PI.sqrt()
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Column centring and scaling applied before optimization.
struct Scaling {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaling {
    fn of(data: &GroupedData) -> Result<Scaling> {
        let p = data.n_predictors();
        let n = data.n_obs() as f64;
        let mut center = vec![0.0; p];
        for g in &data.groups {
            for i in 0..g.len() {
                for (c, x) in center.iter_mut().zip(g.row(i)) {
                    *c += x;
                }
            }
        }
        center.iter_mut().for_each(|c| *c /= n);
        let mut scale = vec![0.0; p];
        for g in &data.groups {
            for i in 0..g.len() {
                for ((s, x), c) in scale.iter_mut().zip(g.row(i)).zip(&center) {
                    *s += (x - c) * (x - c);
                }
            }
        }
        for (j, s) in scale.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "predictor {} is constant or non-finite",
                    data.predictors[j]
                )));
            }
        }
        Ok(Scaling { center, scale })
    }

    fn apply(&self, data: &GroupedData) -> GroupedData {
        let mut out = data.clone();
        let p = self.center.len();
        for g in &mut out.groups {
            for row in g.x_mut().chunks_mut(p.max(1)) {
                for ((x, c), s) in row.iter_mut().zip(&self.center).zip(&self.scale) {
                    *x = (*x - c) / s;
                }
            }
        }
        out
    }

    /// Linear map from scaled to raw coefficients (intercept first).
    fn to_raw(&self) -> DMatrix<f64> {
        let p = self.center.len();
        let mut a = DMatrix::zeros(p + 1, p + 1);
        a[(0, 0)] = 1.0;
        for j in 0..p {
            a[(0, j + 1)] = -self.center[j] / self.scale[j];
            a[(j + 1, j + 1)] = 1.0 / self.scale[j];
        }
        a
    }
}

/// Negative log-likelihood over `θ = (β, ln σ²)` or, on the boundary,
/// `θ = β` with σ² fixed at zero.
struct Objective<'a> {
    data: &'a GroupedData,
    rule: Rule,
    boundary: bool,
}

impl Objective<'_> {
    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], f64) {
        if self.boundary {
            (theta, 0.0)
        } else {
            let p1 = theta.len() - 1;
            (&theta[..p1], theta[p1].exp())
        }
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        let (beta, s2) = self.split(theta);
        evaluate(self.data, beta, s2, &self.rule, false)
            .ok()
            .map(|e| -e.loglik)
            .filter(|v| v.is_finite())
    }

    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (beta, s2) = self.split(theta);
        let e = evaluate(self.data, beta, s2, &self.rule, true)?;
        let mut g: Vec<f64> = e.grad_beta.iter().map(|v| -v).collect();
        if !self.boundary {
            g.push(-e.grad_sigma2 * s2);
        }
        Ok((-e.loglik, g))
    }

    /// Central-difference Hessian of the analytic gradient, symmetrized.
    fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let k = theta.len();
        let mut h = DMatrix::zeros(k, k);
        let mut t = theta.to_vec();
        for i in 0..k {
            let step = 1e-4 * theta[i].abs().max(1.0);
            t[i] = theta[i] + step;
            let (_, gp) = self.value_grad(&t)?;
            t[i] = theta[i] - step;
            let (_, gm) = self.value_grad(&t)?;
            t[i] = theta[i];
            for j in 0..k {
                h[(j, i)] = (gp[j] - gm[j]) / (2.0 * step);
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn spd_inverse(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    h.clone().cholesky().map(|c| c.inverse())
}

struct Optimum {
    theta: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// BFGS with Armijo backtracking. The initial inverse Hessian comes from a
/// finite-difference Hessian when that is positive definite.
fn bfgs(obj: &Objective, start: Vec<f64>, config: &FitConfig) -> Result<Optimum> {
    let k = start.len();
    let mut theta = start;
    let (mut f, mut g) = obj.value_grad(&theta)?;
    let reset = |theta: &[f64]| -> Result<DMatrix<f64>> {
        let h = obj.hessian(theta)?;
        Ok(spd_inverse(&h).unwrap_or_else(|| {
            let scale = h.diagonal().iter().fold(1.0_f64, |m, d| m.max(d.abs()));
            DMatrix::identity(k, k) / scale
        }))
    };
    let mut hinv = reset(&theta)?;
    let mut iterations = 0;
    let mut fresh = true;

    while max_norm(&g) >= config.tol && iterations < config.max_iter {
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&hinv * &gv);
        let mut slope = dir.dot(&gv);
        if !(slope < 0.0) {
            dir = -gv.clone();
            slope = -gv.dot(&gv);
        }
        // Keep ln σ² moves bounded; exp() makes large jumps meaningless.
        if !obj.boundary {
            let last = dir[k - 1].abs();
            if last > 3.0 {
                dir *= 3.0 / last;
                slope = dir.dot(&gv);
            }
        }
        // Near the optimum the expected decrease can fall below the rounding
        // error of a sum over many rows. Inside that band a step is judged
        // by the gradient instead.
        let noise = 64.0 * f64::EPSILON * f.abs().max(1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + alpha * d).collect();
            if let Some(fc) = obj.value(&cand) {
                if fc <= f + 1e-4 * alpha * slope {
                    accepted = Some((cand, None));
                    break;
                }
                if fc <= f + noise {
                    let (fg, gc) = obj.value_grad(&cand)?;
                    if max_norm(&gc) < max_norm(&g) {
                        accepted = Some((cand, Some((fg, gc))));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((next, evaluated)) = accepted else {
            if fresh {
                break;
            }
            hinv = reset(&theta)?;
            fresh = true;
            continue;
        };
        let (fn_, gn) = match evaluated {
            Some(e) => e,
            None => obj.value_grad(&next)?,
        };
        let s = DVector::from_iterator(k, next.iter().zip(&theta).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(k, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - rho * &s * yv.transpose();
            let right = &i - rho * &yv * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        fresh = false;
        theta = next;
        f = fn_;
        g = gn;
        if !obj.boundary && theta[k - 1] < LOG_SIGMA2_BOUNDARY {
            break;
        }
    }
    let converged = max_norm(&g) < config.tol;
    Ok(Optimum {
        theta,
        value: f,
        grad: g,
        iterations,
        converged,
    })
}

/// Fits the random-intercept logit model to grouped data.
pub fn fit_grouped(data: &GroupedData, config: &FitConfig) -> Result<FitResult> {
    if data.n_groups() < 2 {
        return Err(Error::InvalidInput(format!(
            "a random-intercept model needs at least 2 groups, got {}",
            data.n_groups()
        )));
    }
    if data.groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidInput("empty group".into()));
    }
    if config.nodes == 0 || config.max_iter == 0 || !(config.tol > 0.0) {
        return Err(Error::Config(
            "fit needs nodes >= 1, max_iter >= 1 and tol > 0".into(),
        ));
    }
    let p = data.n_predictors();
    let scaling = Scaling::of(data)?;
    let scaled = scaling.apply(data);
    let mut warnings = Vec::new();

    // Pooled logistic start.
    let pooled = Objective {
        data: &scaled,
        rule: Rule::new(config.nodes),
        boundary: true,
    };
    let rate = data.outcome_rate().clamp(1e-6, 1.0 - 1e-6);
    let mut start = vec![0.0; p + 1];
    start[0] = (rate / (1.0 - rate)).ln();
    let pooled_fit = bfgs(&pooled, start, config)?;

    let full = Objective {
        data: &scaled,
        rule: Rule::new(config.nodes),
        boundary: false,
    };
    let mut theta0 = pooled_fit.theta.clone();
    theta0.push(0.0);
    let mut opt = bfgs(&full, theta0, config)?;
    let mut iterations = pooled_fit.iterations + opt.iterations;

    let at_boundary = opt.theta[p + 1] < LOG_SIGMA2_BOUNDARY;
    let (beta_scaled, sigma2, obj) = if at_boundary {
        let fit = bfgs(&pooled, opt.theta[..=p].to_vec(), config)?;
        iterations += fit.iterations;
        opt = fit;
        (opt.theta.clone(), 0.0, &pooled)
    } else {
        let s2 = opt.theta[p + 1].exp();
        (opt.theta[..=p].to_vec(), s2, &full)
    };
    let converged = opt.converged;
    if !converged {
        warnings.push(format!(
            "did not converge in {} iterations (gradient max-norm {:.3e})",
            config.max_iter,
            max_norm(&opt.grad)
        ));
    }

    let hess = obj.hessian(&opt.theta)?;
    let cov = spd_inverse(&hess);
    if cov.is_none() {
        warnings.push("observed information is not positive definite; standard errors unavailable".into());
    }
    let a = scaling.to_raw();
    let beta_raw = &a * DVector::from_column_slice(&beta_scaled);
    let (se_raw, sigma_se) = match &cov {
        Some(c) => {
            let cb = c.view((0, 0), (p + 1, p + 1)).into_owned();
            let craw = &a * cb * a.transpose();
            let se: Vec<f64> = (0..=p).map(|i| craw[(i, i)].max(0.0).sqrt()).collect();
            let s2se = (!at_boundary).then(|| sigma2 * c[(p + 1, p + 1)].max(0.0).sqrt());
            (se, s2se)
        }
        None => (vec![f64::NAN; p + 1], None),
    };

    if beta_scaled[1..].iter().any(|b| b.abs() > 10.0) || beta_scaled[0].abs() > 15.0 {
        warnings.push("very large coefficients: possible quasi-complete separation".into());
    }

    let names = std::iter::once(INTERCEPT.to_string()).chain(data.predictors.iter().cloned());
    let coefficients = names
        .zip(beta_raw.iter().zip(&se_raw))
        .map(|(name, (&estimate, &se))| {
            let z = estimate / se;
            let pval = if z.is_finite() { normal_two_sided(z) } else { f64::NAN };
            Coefficient {
                name,
                estimate,
                se,
                z,
                p: pval,
                stars: if pval.is_finite() {
                    Stars::from_p(pval)
                } else {
                    Stars::None
                },
            }
        })
        .collect();

    let loglik = -opt.value;
    let k = p + 2;
    let n_obs = data.n_obs();
    let (aic, bic) = information_criteria(loglik, k, n_obs);
    Ok(FitResult {
        coefficients,
        sigma_u2: sigma2,
        sigma_u2_se: sigma_se,
        loglik,
        k,
        aic,
        bic,
        icc: icc(sigma2),
        n_obs,
        n_groups: data.n_groups(),
        converged,
        at_boundary,
        iterations,
        gradient_norm: max_norm(&opt.grad),
        warnings,
    })
}
