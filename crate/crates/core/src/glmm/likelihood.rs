//! Marginal likelihood of the random-intercept logit model.
//!
//! For group `g` with rows `j` the contribution is
//!
//! ```text
//! L_g = ∫ Π_j Bernoulli(y_j | logistic(η_j + u)) · N(u; 0, σ²) du
//! ```
//!
//! evaluated by adaptive Gauss–Hermite quadrature: nodes are centred on the
//! mode `û` of the integrand and scaled by its curvature, found per group by
//! damped Newton iteration. The gradient is exact for this approximation: the
//! weighted complete-data score at fixed nodes plus the terms from the nodes
//! moving with the mode and curvature.

use rayon::prelude::*;

use super::quadrature::gauss_hermite;
use crate::error::{Error, Result};

/// One level-2 unit (participant) with its level-1 rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: String,
    n_predictors: usize,
    /// Row-major predictor matrix, intercept excluded.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Group {
    pub fn new(id: impl Into<String>, n_predictors: usize, x: Vec<f64>, y: Vec<bool>) -> Result<Self> {
        if x.len() != n_predictors * y.len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: n_predictors * y.len(),
            });
        }
        Ok(Group {
            id: id.into(),
            n_predictors,
            x,
            y: y.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_predictors..(i + 1) * self.n_predictors]
    }

    pub fn outcome(&self, i: usize) -> bool {
        self.y[i] > 0.5
    }

    pub(crate) fn x_mut(&mut self) -> &mut [f64] {
        &mut self.x
    }
}

/// Rows grouped by participant, with named predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedData {
    pub predictors: Vec<String>,
    pub groups: Vec<Group>,
}

impl GroupedData {
    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.len()
    }

    /// Fraction of rows with outcome 1.
    pub fn outcome_rate(&self) -> f64 {
        let ones: f64 = self.groups.iter().flat_map(|g| g.y.iter()).sum();
        ones / self.n_obs() as f64
    }
}

/// Precomputed Gauss–Hermite rule in the form the adaptive sum needs.
#[derive(Debug, Clone)]
pub struct Rule {
    z: Vec<f64>,
    /// `ln w_k + z_k²`.
    log_scale: Vec<f64>,
}

impl Rule {
    pub fn new(nodes: usize) -> Rule {
        let (z, w) = gauss_hermite(nodes);
        let log_scale = z.iter().zip(&w).map(|(z, w)| w.ln() + z * z).collect();
        Rule { z, log_scale }
    }
}

/// Log-likelihood value and its gradient with respect to `(β, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loglik: f64,
    /// Intercept first, then predictors in data order.
    pub grad_beta: Vec<f64>,
    pub grad_sigma2: f64,
}

#[inline]
fn softplus_and_prob(eta: f64) -> (f64, f64) {
    let e = (-eta.abs()).exp();
    let sp = eta.max(0.0) + e.ln_1p();
    let p = if eta >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, p)
}

/// `Σ_j ln p(y_j | η_j + u)`, `Σ_j (y_j - p_j)` and `Σ_j p_j (1 - p_j)`.
#[inline]
fn conditional(eta: &[f64], y: &[f64], u: f64) -> (f64, f64, f64) {
    let mut ll = 0.0;
    let mut score = 0.0;
    let mut info = 0.0;
    for (&e, &yy) in eta.iter().zip(y) {
        let t = e + u;
        let (sp, p) = softplus_and_prob(t);
        // y t - ln(1 + e^t)
        ll += yy * t - sp;
        score += yy - p;
        info += p * (1.0 - p);
    }
    (ll, score, info)
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn linear_predictor(group: &Group, beta: &[f64]) -> Result<Vec<f64>> {
    let p = group.n_predictors;
    (0..group.len())
        .map(|i| {
            let row = group.row(i);
            let eta = beta[0] + row.iter().zip(&beta[1..=p]).map(|(x, b)| x * b).sum::<f64>();
            if eta.is_finite() {
                Ok(eta)
            } else {
                Err(Error::NonFiniteLinearPredictor {
                    group: group.id.clone(),
                    row: i,
                })
            }
        })
        .collect()
}

/// Mode of `h(u) = Σ ln p(y | η + u) - u² / (2σ²)` and the curvature there.
fn group_mode(eta: &[f64], y: &[f64], sigma2: f64) -> (f64, f64) {
    let mut u = 0.0;
    let (mut ll, mut score, mut info) = conditional(eta, y, u);
    for _ in 0..200 {
        let grad = score - u / sigma2;
        let curv = info + 1.0 / sigma2;
        let mut step = grad / curv;
        let current = ll - 0.5 * u * u / sigma2;
        // h is strictly concave; halve until the step does not overshoot.
        let mut halvings = 0;
        let mut next = conditional(eta, y, u + step);
        while next.0 - 0.5 * (u + step).powi(2) / sigma2 < current - 1e-12 * current.abs().max(1.0)
            && halvings < 60
        {
            step *= 0.5;
            next = conditional(eta, y, u + step);
            halvings += 1;
        }
        u += step;
        (ll, score, info) = next;
        if step.abs() <= 1e-11 * (1.0 + u.abs()) {
            break;
        }
    }
    (u, info + 1.0 / sigma2)
}

struct GroupTerm {
    loglik: f64,
    grad_beta: Vec<f64>,
    grad_sigma2: f64,
}

fn group_term(
    group: &Group,
    beta: &[f64],
    sigma2: f64,
    rule: &Rule,
    want_grad: bool,
) -> Result<GroupTerm> {
    let p = group.n_predictors;
    let eta = linear_predictor(group, beta)?;
    let y = &group.y;
    let mut grad_beta = vec![0.0; if want_grad { p + 1 } else { 0 }];

    if sigma2 == 0.0 {
        let (ll, score, info) = conditional(&eta, y, 0.0);
        if want_grad {
            for (i, &e) in eta.iter().enumerate() {
                let r = y[i] - softplus_and_prob(e).1;
                grad_beta[0] += r;
                for (g, x) in grad_beta[1..].iter_mut().zip(group.row(i)) {
                    *g += r * x;
                }
            }
        }
        return Ok(GroupTerm {
            loglik: ll,
            grad_beta,
            // One-sided derivative at the boundary.
            grad_sigma2: 0.5 * (score * score - info),
        });
    }

    let (mode, curvature) = group_mode(&eta, y, sigma2);
    let tau = curvature.sqrt().recip();
    let spread = std::f64::consts::SQRT_2 * tau;
    let nodes: Vec<f64> = rule.z.iter().map(|z| mode + spread * z).collect();
    let mut slopes = Vec::with_capacity(if want_grad { nodes.len() } else { 0 });
    // Residuals y - p at every node, kept for the gradient pass.
    let mut resid = Vec::with_capacity(if want_grad { nodes.len() * eta.len() } else { 0 });
    let log_terms: Vec<f64> = nodes
        .iter()
        .zip(&rule.log_scale)
        .map(|(&u, ls)| {
            let ll = if want_grad {
                let mut ll = 0.0;
                let mut score = 0.0;
                for (&e, &yy) in eta.iter().zip(y) {
                    let (sp, q) = softplus_and_prob(e + u);
                    ll += yy * (e + u) - sp;
                    score += yy - q;
                    resid.push(yy - q);
                }
                slopes.push(score - u / sigma2);
                ll
            } else {
                conditional(&eta, y, u).0
            };
            ls + ll - 0.5 * u * u / sigma2
        })
        .collect();
    let lse = log_sum_exp(&log_terms);
    let loglik = spread.ln() - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() + lse;

    let mut grad_sigma2 = 0.0;
    if want_grad {
        // Terms at fixed nodes: the weighted complete-data score.
        let mut h1 = 0.0;
        let mut h2 = 0.0;
        for (k, (&u, lt)) in nodes.iter().zip(&log_terms).enumerate() {
            let omega = (lt - lse).exp();
            h1 += omega * slopes[k];
            h2 += omega * slopes[k] * rule.z[k];
            if omega < 1e-300 {
                continue;
            }
            grad_sigma2 += omega * (0.5 * u * u / (sigma2 * sigma2) - 0.5 / sigma2);
            let n = eta.len();
            for (i, res) in resid[k * n..(k + 1) * n].iter().enumerate() {
                let r = omega * res;
                grad_beta[0] += r;
                for (g, x) in grad_beta[1..].iter_mut().zip(group.row(i)) {
                    *g += r * x;
                }
            }
        }
        // The nodes move with the parameters through the mode m and the
        // curvature C. Implicit differentiation of h'(m) = 0 gives dm, and
        // the node spread is proportional to C^(-1/2).
        let mut wx = vec![0.0; p + 1];
        let mut vx = vec![0.0; p + 1];
        for (i, &e) in eta.iter().enumerate() {
            let q = softplus_and_prob(e + mode).1;
            let w = q * (1.0 - q);
            let v = w * (1.0 - 2.0 * q);
            wx[0] += w;
            vx[0] += v;
            for (j, x) in group.row(i).iter().enumerate() {
                wx[j + 1] += w * x;
                vx[j + 1] += v * x;
            }
        }
        let spread_factor = 1.0 + spread * h2;
        for j in 0..=p {
            let dm = -wx[j] / curvature;
            let dc = vx[j] + vx[0] * dm;
            grad_beta[j] += dm * h1 - 0.5 * dc / curvature * spread_factor;
        }
        let s4 = sigma2 * sigma2;
        let dm = mode / s4 / curvature;
        let dc = vx[0] * dm - 1.0 / s4;
        grad_sigma2 += dm * h1 - 0.5 * dc / curvature * spread_factor;
    }
    Ok(GroupTerm {
        loglik,
        grad_beta,
        grad_sigma2,
    })
}

fn check_params(data: &GroupedData, beta: &[f64], sigma2: f64) -> Result<()> {
    if beta.len() != data.n_predictors() + 1 {
        return Err(Error::LengthMismatch {
            left: beta.len(),
            right: data.n_predictors() + 1,
        });
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "random-intercept variance {sigma2} must be finite and non-negative"
        )));
    }
    Ok(())
}

fn evaluate_with(
    data: &GroupedData,
    beta: &[f64],
    sigma2: f64,
    rule: &Rule,
    want_grad: bool,
) -> Result<Evaluation> {
    check_params(data, beta, sigma2)?;
    let terms: Vec<GroupTerm> = data
        .groups
        .par_iter()
        .map(|g| group_term(g, beta, sigma2, rule, want_grad))
        .collect::<Result<_>>()?;
    // Sequential reduction keeps the sum independent of scheduling.
    let mut out = Evaluation {
        loglik: 0.0,
        grad_beta: vec![0.0; if want_grad { beta.len() } else { 0 }],
        grad_sigma2: 0.0,
    };
    for t in terms {
        out.loglik += t.loglik;
        out.grad_sigma2 += t.grad_sigma2;
        for (a, b) in out.grad_beta.iter_mut().zip(&t.grad_beta) {
            *a += b;
        }
    }
    Ok(out)
}

/// Marginal log-likelihood with `nodes`-point adaptive quadrature.
/// `beta` is intercept first. At `sigma2 == 0` this is the ordinary logistic
/// log-likelihood.
pub fn marginal_loglik(data: &GroupedData, beta: &[f64], sigma2: f64, nodes: usize) -> Result<f64> {
    evaluate_with(data, beta, sigma2, &Rule::new(nodes), false).map(|e| e.loglik)
}

/// Value and analytic gradient. At `sigma2 == 0` the σ² component is the
/// one-sided derivative from the right.
pub fn marginal_loglik_with_gradient(
    data: &GroupedData,
    beta: &[f64],
    sigma2: f64,
    nodes: usize,
) -> Result<Evaluation> {
    evaluate_with(data, beta, sigma2, &Rule::new(nodes), true)
}

pub(crate) fn evaluate(
    data: &GroupedData,
    beta: &[f64],
    sigma2: f64,
    rule: &Rule,
    want_grad: bool,
) -> Result<Evaluation> {
    evaluate_with(data, beta, sigma2, rule, want_grad)
}
