//! Plain-text and CSV renderings of the three analyses. Output depends only
//! on the inputs, so identical results produce byte-identical reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corr::CorrelationTable;
use crate::forest::AblationReport;
use crate::glmm::SuiteEntry;
use crate::model::{Outcome, Variable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

fn coef(x: f64) -> String {
    if x != 0.0 && x.abs() < 0.001 {
        format!("{x:.2e}")
    } else {
        format!("{x:.3}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Lower-triangular table with numbered columns, plus long-form CSV.
pub fn render_correlations(table: &CorrelationTable, n_rows: usize) -> Report {
    let k = table.len();
    let labels: Vec<String> = table
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{:>2}. {}", i + 1, v.label()))
        .collect();
    let lw = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0) + 2;
    let cw = 9;

    let mut text = String::new();
    writeln!(text, "Pearson's correlation coefficients (N = {n_rows})").unwrap();
    writeln!(text).unwrap();
    write!(text, "{:lw$}", "").unwrap();
    for j in 0..k {
        write!(text, "{:>cw$}", j + 1).unwrap();
    }
    writeln!(text).unwrap();
    for i in 0..k {
        write!(text, "{:<lw$}", labels[i]).unwrap();
        for j in 0..=i {
            let cell = match table.get(i, j) {
                Some(e) if i == j => format!("{:.3}", e.r),
                Some(e) => format!("{:.3}{}", e.r, e.stars),
                None => "--".to_string(),
            };
            // Left-align stars after a right-aligned number.
            let pad = cw.saturating_sub(2);
            let (num, stars) = cell.split_at(cell.find('*').unwrap_or(cell.len()));
            write!(text, "{:>pad$}{:<2}", num, stars).unwrap();
        }
        writeln!(text).unwrap();
    }
    writeln!(text).unwrap();
    writeln!(text, "* p < .05, ** p < .01 (two-sided). Pairwise deletion; -- marks an undefined coefficient.").unwrap();

    let mut csv = String::from("variable_1,variable_2,n,r,p,stars\n");
    for i in 0..k {
        for j in 0..i {
            let (a, b) = (table.variables[i].key(), table.variables[j].key());
            match table.get(i, j) {
                Some(e) => writeln!(csv, "{a},{b},{},{},{},{}", table.n[i][j], e.r, e.p, e.stars).unwrap(),
                None => writeln!(csv, "{a},{b},{},,,", table.n[i][j]).unwrap(),
            }
        }
    }
    Report { text, csv }
}

fn term_label(key: &str) -> String {
    key.parse::<Variable>()
        .map(|v| v.label().to_string())
        .unwrap_or_else(|_| key.to_string())
}

fn render_suite(outcome: Outcome, suite: &[SuiteEntry], text: &mut String, csv: &mut String) {
    let title = match outcome {
        Outcome::Activation => "activation",
        _ => "happiness",
    };
    writeln!(text, "Predicting {title}: multilevel logit models (random intercept per participant)").unwrap();
    writeln!(text).unwrap();

    // Fixed-effect rows in canonical variable order.
    let mut terms: Vec<Variable> = suite.iter().flat_map(|e| e.spec.predictors.iter().copied()).collect();
    terms.sort();
    terms.dedup();
    let mut rows: Vec<(String, String)> = vec![("Constant".into(), "Constant".into())];
    rows.extend(terms.iter().map(|v| (v.key().to_string(), v.label().to_string())));

    let lw = rows
        .iter()
        .map(|(_, l)| l.chars().count())
        .chain(["Participant variance".len()])
        .max()
        .unwrap_or(0)
        + 2;
    let cw = 13;
    write!(text, "{:lw$}", "").unwrap();
    for e in suite {
        write!(text, "{:>cw$}", e.name).unwrap();
    }
    writeln!(text).unwrap();

    for (key, label) in &rows {
        write!(text, "{label:<lw$}").unwrap();
        let mut se_line = format!("{:lw$}", "");
        for e in suite {
            match e.result.as_ref().ok().and_then(|f| f.coefficient(key)) {
                Some(c) => {
                    write!(text, "{:>cw$}", format!("{}{:<2}", coef(c.estimate), c.stars.to_string())).unwrap();
                    write!(se_line, "{:>cw$}", format!("({})  ", coef(c.se))).unwrap();
                }
                None => {
                    write!(text, "{:>cw$}", "").unwrap();
                    write!(se_line, "{:>cw$}", "").unwrap();
                }
            }
        }
        writeln!(text).unwrap();
        writeln!(text, "{}", se_line.trim_end()).unwrap();
    }

    type Stat = fn(&crate::glmm::FitResult) -> String;
    let stats: [(&str, Stat); 7] = [
        ("Participant variance", |f| format!("{:.3}", f.sigma_u2)),
        ("ICC", |f| format!("{:.3}", f.icc)),
        ("Log likelihood", |f| format!("{:.1}", f.loglik)),
        ("AIC", |f| format!("{:.1}", f.aic)),
        ("BIC", |f| format!("{:.1}", f.bic)),
        ("Observations", |f| f.n_obs.to_string()),
        ("Participants", |f| f.n_groups.to_string()),
    ];
    for (label, get) in stats {
        write!(text, "{label:<lw$}").unwrap();
        for e in suite {
            let cell = e.result.as_ref().map(get).unwrap_or_else(|_| "failed".into());
            write!(text, "{cell:>cw$}").unwrap();
        }
        writeln!(text).unwrap();
    }
    writeln!(text).unwrap();
    writeln!(text, "Standard errors in parentheses. * p < .05, ** p < .01 (Wald).").unwrap();
    for e in suite {
        match &e.result {
            Err(err) => writeln!(text, "{}: not estimated ({err})", e.name).unwrap(),
            Ok(f) => {
                if !f.converged {
                    writeln!(text, "{}: optimizer stopped before convergence", e.name).unwrap();
                }
                if f.at_boundary {
                    writeln!(text, "{}: participant variance estimated at 0", e.name).unwrap();
                }
                for w in &f.warnings {
                    writeln!(text, "{}: {w}", e.name).unwrap();
                }
            }
        }
    }
    writeln!(text).unwrap();

    let key = outcome.key();
    for e in suite {
        let model = csv_field(&e.name);
        match &e.result {
            Ok(f) => {
                for c in &f.coefficients {
                    writeln!(
                        csv,
                        "{key},{model},{},{},{},{},{},{}",
                        csv_field(&term_label(&c.name)),
                        c.estimate,
                        c.se,
                        c.z,
                        c.p,
                        c.stars
                    )
                    .unwrap();
                }
                let se = f.sigma_u2_se.map(|s| s.to_string()).unwrap_or_default();
                writeln!(csv, "{key},{model},sigma_u2,{},{se},,,", f.sigma_u2).unwrap();
                for (name, v) in [("icc", f.icc), ("loglik", f.loglik), ("aic", f.aic), ("bic", f.bic)] {
                    writeln!(csv, "{key},{model},{name},{v},,,,").unwrap();
                }
                writeln!(csv, "{key},{model},n_obs,{},,,,", f.n_obs).unwrap();
                writeln!(csv, "{key},{model},n_groups,{},,,,", f.n_groups).unwrap();
            }
            Err(err) => writeln!(csv, "{key},{model},error,{},,,,", csv_field(&err.to_string())).unwrap(),
        }
    }
}

/// Side-by-side model ladders per outcome.
pub fn render_glmm(suites: &[(Outcome, Vec<SuiteEntry>)]) -> Report {
    let mut text = String::new();
    let mut csv = String::from("outcome,model,term,estimate,se,z,p,stars\n");
    for (outcome, suite) in suites {
        render_suite(*outcome, suite, &mut text, &mut csv);
    }
    Report { text, csv }
}

/// Outcomes across, GPS condition down, accuracy and kappa per outcome.
pub fn render_forest(report: &AblationReport) -> Report {
    let replicates = report
        .entries
        .first()
        .map_or(0, |e| e.with_gps.accuracies.len());
    let mut text = String::new();
    writeln!(
        text,
        "Accuracy of random forest classifications ({replicates} replicates, random 30% test sets, N = {})",
        report.n_rows
    )
    .unwrap();
    writeln!(text).unwrap();
    let lw = 22;
    let cw = 11;
    write!(text, "{:lw$}", "").unwrap();
    for e in &report.entries {
        write!(text, "{:<w$}", e.outcome.label(), w = 2 * cw).unwrap();
    }
    writeln!(text).unwrap();
    write!(text, "{:lw$}", "").unwrap();
    for _ in &report.entries {
        write!(text, "{:<cw$}{:<cw$}", "Accuracy", "Kappa").unwrap();
    }
    writeln!(text).unwrap();
    for (label, with) in [("Including GPS Data", true), ("Excluding GPS Data", false)] {
        write!(text, "{label:<lw$}").unwrap();
        for e in &report.entries {
            let r = if with { &e.with_gps } else { &e.without_gps };
            let acc = format!("{:.2}%", 100.0 * r.mean_accuracy);
            let kappa = format!("{:.2}", r.mean_kappa);
            write!(text, "{acc:<cw$}{kappa:<cw$}").unwrap();
        }
        writeln!(text).unwrap();
    }
    writeln!(text).unwrap();
    writeln!(text, "Means over replicates. Both conditions use the same rows and test splits.").unwrap();

    let mut csv = String::from("outcome,condition,mean_accuracy,mean_kappa,replicates,n_rows,redraws\n");
    for e in &report.entries {
        for (cond, r) in [("with_gps", &e.with_gps), ("without_gps", &e.without_gps)] {
            writeln!(
                csv,
                "{},{cond},{},{},{},{},{}",
                e.outcome.key(),
                r.mean_accuracy,
                r.mean_kappa,
                r.accuracies.len(),
                r.n_rows,
                r.redraws
            )
            .unwrap();
        }
    }
    Report { text, csv }
}
