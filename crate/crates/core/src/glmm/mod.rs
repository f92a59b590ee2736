//! Random-intercept logistic regression: repeated polls (level 1) nested in
//! participants (level 2).

mod fit;
mod likelihood;
pub mod quadrature;
mod suite;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use fit::{fit_grouped, Coefficient, FitConfig, FitResult, LOG_SIGMA2_BOUNDARY};
pub use likelihood::{
    marginal_loglik, marginal_loglik_with_gradient, Evaluation, Group, GroupedData,
};
pub use suite::{model_suite, SuiteEntry};

use crate::error::{Error, Result};
use crate::model::{FeatureRow, Outcome, Variable};

/// Variance of the standard logistic distribution, the level-1 residual
/// variance on the latent scale.
pub const LOGISTIC_VARIANCE: f64 = std::f64::consts::PI * std::f64::consts::PI / 3.0;

/// Share of latent variance between participants: `σ² / (σ² + π²/3)`.
pub fn icc(sigma_u2: f64) -> f64 {
    sigma_u2 / (sigma_u2 + LOGISTIC_VARIANCE)
}

/// `(AIC, BIC)` for a maximized log-likelihood with `k` parameters and `n`
/// observations.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> (f64, f64) {
    let dev = -2.0 * loglik;
    (dev + 2.0 * k as f64, dev + k as f64 * (n as f64).ln())
}

/// Outcome and fixed-effect predictors of one model. Random effects are
/// always a single participant intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: Outcome,
    pub predictors: Vec<Variable>,
}

impl ModelSpec {
    pub fn new(outcome: Outcome, predictors: Vec<Variable>) -> Result<Self> {
        let spec = ModelSpec { outcome, predictors };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcome == Outcome::MoodState {
            return Err(Error::InvalidInput(
                "multilevel logit models need a binary outcome".into(),
            ));
        }
        if self.predictors.contains(&Variable::Neuroticism)
            && self.predictors.contains(&Variable::Openness)
        {
            return Err(Error::InvalidInput(
                "neuroticism and openness are collinear and may not share a model".into(),
            ));
        }
        for v in &self.predictors {
            let allowed = Variable::SENSORS.contains(v)
                || Variable::CONTROLS.contains(v)
                || Variable::FACTORS.contains(v);
            if !allowed {
                return Err(Error::InvalidInput(format!(
                    "{} cannot be a linear predictor",
                    v.key()
                )));
            }
        }
        for (i, v) in self.predictors.iter().enumerate() {
            if self.predictors[..i].contains(v) {
                return Err(Error::InvalidInput(format!("{} listed twice", v.key())));
            }
        }
        Ok(())
    }
}

/// Groups rows by participant (sorted by id). Rows missing any predictor are
/// left out.
pub fn grouped_data(rows: &[FeatureRow], spec: &ModelSpec) -> Result<GroupedData> {
    spec.validate()?;
    let p = spec.predictors.len();
    let mut by_group: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    let mut dropped = 0usize;
    for r in rows {
        let values: Option<Vec<f64>> = spec.predictors.iter().map(|v| r.value(*v)).collect();
        let Some(values) = values else {
            dropped += 1;
            continue;
        };
        let e = by_group.entry(r.participant_id.as_str()).or_default();
        e.0.extend(values);
        e.1.push(spec.outcome.class_of(r) == 1);
    }
    if dropped > 0 {
        log::info!("{dropped} rows lack a predictor and were left out of the model");
    }
    let groups = by_group
        .into_iter()
        .map(|(id, (x, y))| Group::new(id, p, x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupedData {
        predictors: spec.predictors.iter().map(|v| v.key().to_string()).collect(),
        groups,
    })
}

/// Builds the grouped design for `spec` and fits it.
pub fn fit_model(rows: &[FeatureRow], spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
    fit_grouped(&grouped_data(rows, spec)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icc_values() {
        assert_eq!(icc(0.0), 0.0);
        assert!((icc(LOGISTIC_VARIANCE) - 0.5).abs() < 1e-15);
        assert!((icc(0.8483) - 0.205).abs() < 1e-3);
        let mut prev = -1.0;
        for s in [0.0, 0.1, 1.0, 10.0, 1e6] {
            let v = icc(s);
            assert!(v > prev && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn information_criteria_values() {
        let (aic, bic) = information_criteria(-100.0, 3, 100);
        assert!((aic - 206.0).abs() < 1e-12);
        assert!((bic - 213.815_510_557_964_3).abs() < 1e-9);
        let (aic2, bic2) = information_criteria(-90.0, 3, 100);
        assert!(aic2 < aic && bic2 < bic);
    }

    #[test]
    fn spec_rules() {
        assert!(ModelSpec::new(
            Outcome::Happiness,
            vec![Variable::Neuroticism, Variable::Openness]
        )
        .is_err());
        assert!(ModelSpec::new(Outcome::MoodState, vec![]).is_err());
        assert!(ModelSpec::new(Outcome::Activation, vec![Variable::Latitude]).is_err());
        assert!(ModelSpec::new(Outcome::Activation, vec![Variable::AvgBpm]).is_ok());
    }
}
