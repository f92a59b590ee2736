use rayon::prelude::*;

use super::{fit_model, FitConfig, FitResult, ModelSpec};
use crate::error::{Error, Result};
use crate::model::{FeatureRow, Outcome, Variable};

/// A ladder model must reach this Wald p-value to enter the combined model.
pub const SELECTION_ALPHA: f64 = 0.05;

#[derive(Debug)]
pub struct SuiteEntry {
    /// `"Model 1"` … `"Model 6"`.
    pub name: String,
    pub spec: ModelSpec,
    pub result: Result<FitResult>,
}

fn ladder(outcome: Outcome) -> Vec<ModelSpec> {
    use Variable::*;
    [
        vec![],
        Variable::CONTROLS.to_vec(),
        vec![Neuroticism, Extraversion],
        vec![Openness, Agreeableness, Conscientiousness],
        Variable::SENSORS.to_vec(),
    ]
    .into_iter()
    .map(|predictors| ModelSpec { outcome, predictors })
    .collect()
}

/// Predictors significant in their own ladder model, in canonical order. If
/// both neuroticism and openness qualify, only the one with the smaller
/// p-value is kept.
fn select_significant(entries: &[SuiteEntry]) -> Vec<Variable> {
    let mut picked: Vec<(Variable, f64)> = Vec::new();
    for e in entries {
        let Ok(fit) = &e.result else { continue };
        for v in &e.spec.predictors {
            if let Some(c) = fit.coefficient(v.key()) {
                if c.p < SELECTION_ALPHA {
                    picked.push((*v, c.p));
                }
            }
        }
    }
    let p_of = |v: Variable| picked.iter().find(|(w, _)| *w == v).map(|(_, p)| *p);
    if let (Some(pn), Some(po)) = (p_of(Variable::Neuroticism), p_of(Variable::Openness)) {
        let drop = if po < pn {
            Variable::Neuroticism
        } else {
            Variable::Openness
        };
        picked.retain(|(v, _)| *v != drop);
    }
    let mut out: Vec<Variable> = picked.into_iter().map(|(v, _)| v).collect();
    out.sort();
    out.dedup();
    out
}

/// Fits the six-model ladder for one outcome: empty model, controls, two
/// personality subsets, sensors, and the combination of predictors that were
/// significant in models 2–5.
///
/// All six models use the same rows (those complete on every ladder
/// predictor) so their AIC and BIC are comparable.
pub fn model_suite(rows: &[FeatureRow], outcome: Outcome, config: &FitConfig) -> Result<Vec<SuiteEntry>> {
    if outcome == Outcome::MoodState {
        return Err(Error::InvalidInput(
            "the model ladder is defined for happiness and activation".into(),
        ));
    }
    let every: Vec<Variable> = Variable::SENSORS
        .iter()
        .chain(&Variable::CONTROLS)
        .chain(&Variable::FACTORS)
        .copied()
        .collect();
    let common: Vec<FeatureRow> = rows
        .iter()
        .filter(|r| every.iter().all(|v| r.value(*v).is_some()))
        .cloned()
        .collect();
    if common.is_empty() {
        return Err(Error::NoAnalyzableRows);
    }

    let mut entries: Vec<SuiteEntry> = ladder(outcome)
        .into_par_iter()
        .enumerate()
        .map(|(i, spec)| SuiteEntry {
            name: format!("Model {}", i + 1),
            result: fit_model(&common, &spec, config),
            spec,
        })
        .collect();

    let combined = ModelSpec {
        outcome,
        predictors: select_significant(&entries[1..]),
    };
    entries.push(SuiteEntry {
        name: "Model 6".into(),
        result: fit_model(&common, &combined, config),
        spec: combined,
    });
    Ok(entries)
}
