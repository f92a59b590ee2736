//! Pearson correlations with two-sided t-test significance.
//!
//! Binary columns enter as 0/1 numerics, so a correlation against a label is
//! the point-biserial coefficient. Missing values are handled by pairwise
//! deletion.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureRow, Variable};
use crate::special::student_t_two_sided;

/// Minimum pairwise-complete count for an entry to be reported.
pub const MIN_PAIR_COUNT: usize = 3;

/// Compensated (Neumaier) sum.
fn neumaier<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Product-moment correlation of two equally long series.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < MIN_PAIR_COUNT {
        return Err(Error::InvalidInput(format!(
            "correlation needs at least {MIN_PAIR_COUNT} pairs, got {n}"
        )));
    }
    let mx = neumaier(x.iter().copied()) / n as f64;
    let my = neumaier(y.iter().copied()) / n as f64;
    let sxx = neumaier(x.iter().map(|v| (v - mx) * (v - mx)));
    let syy = neumaier(y.iter().map(|v| (v - my) * (v - my)));
    if sxx <= 0.0 {
        return Err(Error::UndefinedCorrelation("x"));
    }
    if syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("y"));
    }
    let sxy = neumaier(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under the null of zero correlation, from
/// `t = r sqrt(n-2) / sqrt(1-r^2)` on `n-2` degrees of freedom.
pub fn significance_p(r: f64, n: usize) -> Result<f64> {
    if n < MIN_PAIR_COUNT {
        return Err(Error::InvalidInput(format!(
            "significance needs n >= {MIN_PAIR_COUNT}, got {n}"
        )));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::InvalidInput(format!("|r| = {} exceeds 1", r.abs())));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * df.sqrt() / (1.0 - r * r).sqrt();
    Ok(student_t_two_sided(t, df))
}

/// Significance marker: `*` for p < .05, `**` for p < .01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stars {
    None,
    One,
    Two,
}

impl Stars {
    pub fn from_p(p: f64) -> Stars {
        if p < 0.01 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::None
        }
    }
}

impl fmt::Display for Stars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
        })
    }
}

/// One cell of a correlation table; `None` when fewer than three complete
/// pairs exist or a column is constant on them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub r: f64,
    pub p: f64,
    pub stars: Stars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub variables: Vec<Variable>,
    pub entries: Vec<Vec<Option<Entry>>>,
    /// Pairwise-complete counts.
    pub n: Vec<Vec<usize>>,
}

impl CorrelationTable {
    pub fn get(&self, i: usize, j: usize) -> Option<Entry> {
        self.entries[i][j]
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }
}

/// Extracts the pairwise-complete columns of two variables.
pub fn complete_pairs(rows: &[FeatureRow], a: Variable, b: Variable) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter_map(|r| Some((r.value(a)?, r.value(b)?)))
        .unzip()
}

pub fn correlation_table(rows: &[FeatureRow], variables: &[Variable]) -> CorrelationTable {
    let k = variables.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let cells: Vec<(usize, Option<Entry>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = complete_pairs(rows, variables[i], variables[j]);
            let n = x.len();
            let entry = pearson_r(&x, &y).ok().and_then(|r| {
                let p = significance_p(r, n).ok()?;
                Some(Entry {
                    r,
                    p,
                    stars: Stars::from_p(p),
                })
            });
            if entry.is_none() {
                log::warn!(
                    "correlation {} x {} left missing (n = {n})",
                    variables[i].key(),
                    variables[j].key()
                );
            }
            (n, entry)
        })
        .collect();

    let mut entries = vec![vec![None; k]; k];
    let mut counts = vec![vec![0usize; k]; k];
    for (i, var) in variables.iter().enumerate() {
        let n = rows.iter().filter(|r| r.value(*var).is_some()).count();
        counts[i][i] = n;
        entries[i][i] = Some(Entry {
            r: 1.0,
            p: 0.0,
            stars: Stars::None,
        });
    }
    for (&(i, j), (n, e)) in pairs.iter().zip(cells) {
        entries[i][j] = e;
        entries[j][i] = e;
        counts[i][j] = n;
        counts[j][i] = n;
    }
    CorrelationTable {
        variables: variables.to_vec(),
        entries,
        n: counts,
    }
}
