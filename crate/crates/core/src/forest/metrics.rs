use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gini impurity `1 - Σ p_k²` of (weighted) class counts.
pub fn gini_impurity(counts: &[u32]) -> Result<f64> {
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::InvalidInput("gini impurity of an empty node".into()));
    }
    Ok(gini(counts))
}

fn gini(counts: &[u32]) -> f64 {
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let q = c as f64 / n;
            q * q
        })
        .sum::<f64>()
}

/// Size-weighted impurity of a two-way split,
/// `(n_L G(L) + n_R G(R)) / (n_L + n_R)`.
///
/// It is evaluated as `1 - (n_R Σ L_c² + n_L Σ R_c²) / (n_L n_R n)`, whose
/// numerator and denominator are exact integers, so the result is a single
/// rounding of the exact value and orders splits the same way exact
/// arithmetic does.
pub fn split_impurity(left: &[u32], right: &[u32]) -> f64 {
    let sums = |c: &[u32]| {
        c.iter()
            .fold((0u64, 0u64), |(n, sq), &k| (n + k as u64, sq + k as u64 * k as u64))
    };
    let (nl, sql) = sums(left);
    let (nr, sqr) = sums(right);
    let n = nl + nr;
    if n == 0 {
        return 0.0;
    }
    if nl == 0 || nr == 0 {
        return 1.0 - (sql + sqr) as f64 / (n as f64 * n as f64);
    }
    let (num, den) = split_score(nl, sql, nr, sqr);
    impurity_from_score(num, den, n)
}

/// The split score `Σ L_c² / n_L + Σ R_c² / n_R` as an exact fraction, for
/// non-empty children.
#[inline]
pub(crate) fn split_score(nl: u64, sql: u64, nr: u64, sqr: u64) -> (u128, u128) {
    (
        sql as u128 * nr as u128 + sqr as u128 * nl as u128,
        nl as u128 * nr as u128,
    )
}

#[inline]
pub(crate) fn impurity_from_score(num: u128, den: u128, n: u64) -> f64 {
    // Direct u64 conversions are much cheaper than u128 ones.
    let float = |v: u128| u64::try_from(v).map_or(v as f64, |v| v as f64);
    1.0 - float(num) / (float(den) * n as f64)
}

/// Square confusion matrix; `counts[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<u32>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_pairs(classes: Vec<u32>, actual: &[u32], predicted: &[u32]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::LengthMismatch {
                left: actual.len(),
                right: predicted.len(),
            });
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&a, &p) in actual.iter().zip(predicted) {
            m.record(a, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, actual: u32, predicted: u32) -> Result<()> {
        let pos = |c: u32| {
            self.classes
                .iter()
                .position(|&k| k == c)
                .ok_or_else(|| Error::InvalidInput(format!("class {c} is not in the confusion matrix")))
        };
        let (a, p) = (pos(actual)?, pos(predicted)?);
        self.counts[a][p] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::EmptyConfusion);
        }
        let diag: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        Ok(diag as f64 / n as f64)
    }

    pub fn kappa(&self) -> Result<Kappa> {
        cohen_kappa(&self.counts)
    }
}

/// Cohen's kappa with a flag for the degenerate `p_e = 1` case, where the
/// value is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    pub observed: f64,
    pub expected: f64,
    pub degenerate: bool,
}

/// `κ = (p_o - p_e) / (1 - p_e)` from a square confusion matrix of counts.
pub fn cohen_kappa(counts: &[Vec<u64>]) -> Result<Kappa> {
    let k = counts.len();
    if counts.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput("confusion matrix must be square".into()));
    }
    let n: u64 = counts.iter().flatten().sum();
    if n == 0 {
        return Err(Error::EmptyConfusion);
    }
    let n = n as f64;
    let observed = (0..k).map(|i| counts[i][i] as f64).sum::<f64>() / n;
    let expected = (0..k)
        .map(|i| {
            let row: u64 = counts[i].iter().sum();
            let col: u64 = counts.iter().map(|r| r[i]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum::<f64>();
    if (1.0 - expected).abs() < 1e-12 {
        return Ok(Kappa {
            value: 0.0,
            observed,
            expected,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (observed - expected) / (1.0 - expected),
        observed,
        expected,
        degenerate: false,
    })
}
