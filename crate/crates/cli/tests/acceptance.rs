//! End-to-end acceptance checks. Each check prints one PASS or FAIL line;
//! the process exits non-zero if any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{DateTime, FixedOffset, NaiveDate, TimeZone, Utc};
use moodsense::corr::{correlation_table, pearson_r, significance_p, Stars};
use moodsense::forest::{
    cohen_kappa, dataset_from_rows, evaluate_dataset, gini_impurity, gps_ablation, Dataset, EvaluationConfig,
};
use moodsense::glmm::{
    fit_grouped, icc, information_criteria, marginal_loglik, marginal_loglik_with_gradient, FitConfig, Group,
    GroupedData, LOGISTIC_VARIANCE,
};
use moodsense::ingest::{ingest_file, RecordKind};
use moodsense::model::{assemble_feature_rows, clean_observations, GpsFix, DEFAULT_MIN_BPM};
use moodsense::sampling::{
    expire_stale_polls, plan_daily_polls, record_response, Poll, PollConfig, PollStatus, MAX_DAILY_POLLS,
    MIN_DAILY_POLLS,
};
use moodsense::simulator::{generate_cohort, simulate_panel, CohortConfig, LabelMode, PanelConfig};
use moodsense::store::Store;
use moodsense::{
    encode_mood_state, BigFive, FeatureRow, Gender, MoodResponse, Observation, Outcome, Participant, Quadrant,
    Variable,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type CheckResult = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn cohort_rows(config: &CohortConfig) -> Vec<FeatureRow> {
    let cohort = generate_cohort(config).expect("valid cohort config");
    let cleaned = clean_observations(cohort.observations, DEFAULT_MIN_BPM);
    assemble_feature_rows(
        &cohort.responses,
        &cleaned.kept,
        &cohort.participants,
        &config.holidays,
        chrono::Duration::minutes(30),
    )
    .rows
}

// ---------------------------------------------------------------- GLMM

fn random_instance(rng: &mut ChaCha8Rng, groups: usize, per_group: usize, p: usize) -> GroupedData {
    GroupedData {
        predictors: (0..p).map(|j| format!("x{j}")).collect(),
        groups: (0..groups)
            .map(|g| {
                let x = (0..per_group * p).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y = (0..per_group).map(|_| rng.random_bool(0.5)).collect();
                Group::new(format!("g{g}"), p, x, y).unwrap()
            })
            .collect(),
    }
}

/// Composite trapezoid rule on u in [-10σ, 10σ], per group in log space.
fn trapezoid_loglik(data: &GroupedData, beta: &[f64], sigma2: f64) -> f64 {
    let sigma = sigma2.sqrt();
    let m = 200_000;
    let (a, b) = (-10.0 * sigma, 10.0 * sigma);
    let h = (b - a) / m as f64;
    data.groups
        .iter()
        .map(|g| {
            let log_f = |u: f64| {
                let mut s = -0.5 * u * u / sigma2 - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
                for i in 0..g.len() {
                    let eta = beta[0] + g.row(i).iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>() + u;
                    s += if g.outcome(i) {
                        -(-eta).exp().ln_1p()
                    } else {
                        -eta.exp().ln_1p()
                    };
                }
                s
            };
            let vals: Vec<f64> = (0..=m).map(|k| log_f(a + k as f64 * h)).collect();
            let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = vals
                .iter()
                .enumerate()
                .map(|(k, v)| if k == 0 || k == m { 0.5 } else { 1.0 } * (v - top).exp())
                .sum();
            top + (sum * h).ln()
        })
        .sum()
}

fn glmm_oracle() -> CheckResult {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let data = random_instance(&mut rng, 2, 3, 2);
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma2 = rng.random_range(0.2..3.0);
        let fast = marginal_loglik(&data, &beta, sigma2, FitConfig::default().nodes).map_err(|e| e.to_string())?;
        let slow = trapezoid_loglik(&data, &beta, sigma2);
        worst = worst.max(((fast - slow) / slow).abs());
    }
    let elapsed = t.elapsed();
    let detail = format!("max relative error {worst:.2e} (limit 1e-6), {}", secs(elapsed));
    ensure(worst <= 1e-6 && elapsed < Duration::from_secs(1), || detail.clone())?;
    Ok(detail)
}

fn glmm_recovery() -> CheckResult {
    let t = Instant::now();
    let config = PanelConfig::default();
    let z = 1.959_963_984_540_054;
    let mut good_runs = 0;
    let mut unconverged = 0;
    for seed in 0..100u64 {
        let (data, _) = simulate_panel(&config, seed).map_err(|e| e.to_string())?;
        let fit = fit_grouped(&data, &FitConfig::default()).map_err(|e| e.to_string())?;
        unconverged += usize::from(!fit.converged);
        let ok = config.beta.iter().zip(&fit.coefficients[1..]).all(|(&truth, c)| {
            (c.estimate - truth).abs() <= 0.1 * truth.abs() || (c.estimate - truth).abs() <= z * c.se
        });
        good_runs += usize::from(ok);
    }

    let empty = PanelConfig {
        beta: vec![],
        ..config.clone()
    };
    let target = icc(config.sigma_u2);
    let mut worst_icc = 0.0f64;
    let mut mean_icc = 0.0;
    for seed in 0..100u64 {
        let (data, _) = simulate_panel(&empty, seed).map_err(|e| e.to_string())?;
        let fit = fit_grouped(&data, &FitConfig::default()).map_err(|e| e.to_string())?;
        worst_icc = worst_icc.max((fit.icc - target).abs());
        mean_icc += fit.icc / 100.0;
    }
    let elapsed = t.elapsed();
    let detail = format!(
        "{good_runs}/100 runs recover all slopes ({unconverged} unconverged); empty-model ICC mean {mean_icc:.4} vs {target:.4}, worst deviation {worst_icc:.4}; {}",
        secs(elapsed)
    );
    ensure(
        good_runs >= 90 && worst_icc <= 0.05 && elapsed < Duration::from_secs(120),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn gradient_check() -> CheckResult {
    let (data, _) = simulate_panel(
        &PanelConfig {
            groups: 6,
            per_group: 25,
            ..PanelConfig::default()
        },
        7,
    )
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let nodes = FitConfig::default().nodes;
    let h = 1e-5;
    let f = |b: &[f64], s: f64| marginal_loglik(&data, b, s, nodes).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let beta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let sigma2 = rng.random_range(0.1..3.0);
        let ev = marginal_loglik_with_gradient(&data, &beta, sigma2, nodes).map_err(|e| e.to_string())?;
        let mut analytic = ev.grad_beta.clone();
        analytic.push(ev.grad_sigma2);
        for (j, a) in analytic.iter().enumerate() {
            let fd = if j < beta.len() {
                let (mut up, mut dn) = (beta.clone(), beta.clone());
                up[j] += h;
                dn[j] -= h;
                (f(&up, sigma2) - f(&dn, sigma2)) / (2.0 * h)
            } else {
                (f(&beta, sigma2 + h) - f(&beta, sigma2 - h)) / (2.0 * h)
            };
            let scale = a.abs().max(fd.abs());
            if scale > 1e-10 {
                worst = worst.max((a - fd).abs() / scale);
            }
        }
    }
    let detail = format!("max relative deviation {worst:.2e} over 50 draws (limit 1e-4)");
    ensure(worst <= 1e-4, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- correlations

/// Double-double arithmetic: an unevaluated sum `hi + lo` with about 106
/// bits of significand.
#[derive(Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd {
            hi: s,
            lo: (a - (s - bb)) + (b - bb),
        }
    }

    fn quick(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        Dd::quick(s.hi, s.lo + self.lo + o.lo)
    }

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::quick(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Dd::from(q1)).neg());
        let q2 = r.hi / o.hi;
        let r = r.add(o.mul(Dd::from(q2)).neg());
        let q3 = r.hi / o.hi;
        Dd::quick(q1, q2).add(Dd::from(q3))
    }

    fn sqrt(self) -> Dd {
        let x = self.hi.sqrt();
        let r = self.add(Dd::from(x).mul(Dd::from(x)).neg());
        Dd::quick(x, r.hi / (2.0 * x))
    }
}

fn pearson_dd(x: &[f64], y: &[f64]) -> f64 {
    let n = Dd::from(x.len() as f64);
    let mean = |v: &[f64]| v.iter().fold(Dd::from(0.0), |s, &a| s.add(Dd::from(a))).div(n);
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (Dd::from(0.0), Dd::from(0.0), Dd::from(0.0));
    for (&a, &b) in x.iter().zip(y) {
        let dx = Dd::from(a).add(mx.neg());
        let dy = Dd::from(b).add(my.neg());
        sxx = sxx.add(dx.mul(dx));
        syy = syy.add(dy.mul(dy));
        sxy = sxy.add(dx.mul(dy));
    }
    sxy.div(sxx.sqrt().mul(syy.sqrt())).hi
}

/// Log of Γ(k/2) for a positive integer k, by the half-integer recursion.
fn ln_gamma_half(k: u64) -> f64 {
    let mut acc = if k % 2 == 0 { 0.0 } else { 0.5 * std::f64::consts::PI.ln() };
    let mut m = if k % 2 == 0 { 2 } else { 1 };
    while m < k {
        acc += (m as f64 / 2.0).ln();
        m += 2;
    }
    acc
}

/// Two-sided Student-t tail probability by composite Simpson quadrature of
/// the density on [0, |t|].
fn t_two_sided_quadrature(t: f64, df: u64) -> f64 {
    let nu = df as f64;
    let log_c = ln_gamma_half(df + 1) - ln_gamma_half(df) - 0.5 * (nu * std::f64::consts::PI).ln();
    let density = |x: f64| (log_c - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp();
    let b = t.abs();
    let m = 200_000;
    let h = b / m as f64;
    let mut s = density(0.0) + density(b);
    for k in 1..m {
        s += density(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    (1.0 - 2.0 * s * h / 3.0).max(0.0)
}

fn p_oracle(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    t_two_sided_quadrature(r * df.sqrt() / (1.0 - r * r).sqrt(), n as u64 - 2)
}

fn fixture_row(x: f64, y: f64) -> FeatureRow {
    FeatureRow {
        participant_id: "P01".into(),
        timestamp: Utc.with_ymd_and_hms(2017, 1, 10, 12, 0, 0).unwrap(),
        label_happiness: true,
        label_activation: false,
        label_mood_state: encode_mood_state(true, false),
        avg_bpm: x,
        light_level: y,
        acceleration: 0.3,
        vmc: 100.0,
        weekend_holiday: false,
        gender_male: false,
        age: 30.0,
        weight: 60.0,
        sportiness: 2.0,
        factors: None,
        gps: None,
    }
}

/// Rows whose (avg_bpm, light_level) columns have sample correlation `r`.
fn rows_with_correlation(r: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureRow> {
    let center = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|a| *a -= m);
    };
    let norm = |v: &mut Vec<f64>| {
        let s = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= s);
    };
    let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    center(&mut a);
    norm(&mut a);
    center(&mut b);
    let proj: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    b.iter_mut().zip(&a).for_each(|(q, p)| *q -= proj * p);
    norm(&mut b);
    let s = (1.0 - r * r).sqrt();
    a.iter()
        .zip(&b)
        .map(|(p, q)| fixture_row(70.0 + 10.0 * p, 2.5 + r * p + s * q))
        .collect()
}

/// The correlation at which the two-sided p-value equals `target`.
fn r_for_p(target: f64, n: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 0.999);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if p_oracle(mid, n) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn correlation_oracle() -> CheckResult {
    let rows = cohort_rows(&CohortConfig {
        seed: 3,
        factors_missing_rate: 0.2,
        ..CohortConfig::default()
    });
    let vars = Variable::CORRELATION_TABLE;
    let table = correlation_table(&rows, &vars);
    let mut worst_r = 0.0f64;
    let mut worst_p = 0.0f64;
    let mut cells = 0;
    for i in 0..vars.len() {
        for j in 0..i {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| Some((r.value(vars[i])?, r.value(vars[j])?)))
                .unzip();
            ensure(table.n[i][j] == x.len(), || format!("n mismatch at ({i},{j})"))?;
            let e = table
                .get(i, j)
                .ok_or_else(|| format!("missing cell {} x {}", vars[i].key(), vars[j].key()))?;
            let r = pearson_dd(&x, &y);
            worst_r = worst_r.max((e.r - r).abs());
            worst_p = worst_p.max((e.p - p_oracle(r, x.len())).abs());
            ensure(e.stars == Stars::from_p(e.p), || format!("stars disagree with p at ({i},{j})"))?;
            cells += 1;
        }
    }
    ensure(worst_r <= 1e-12, || format!("max |r - oracle| = {worst_r:.2e} (limit 1e-12)"))?;
    ensure(worst_p <= 1e-9, || format!("max |p - oracle| = {worst_p:.2e}"))?;

    let r = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
    ensure((r - 0.98198).abs() <= 1e-5, || format!("r([1,2,3],[1,2,4]) = {r}"))?;
    let p = significance_p(0.5, 20).map_err(|e| e.to_string())?;
    ensure((p - 0.0249).abs() <= 5e-4, || format!("p(r=0.5, n=20) = {p}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let n = 40;
    let boundary = [(0.049, Stars::One), (0.051, Stars::None), (0.0099, Stars::Two), (0.0101, Stars::One)];
    for (target, want) in boundary {
        let rows = rows_with_correlation(r_for_p(target, n), n, &mut rng);
        let table = correlation_table(&rows, &[Variable::AvgBpm, Variable::LightLevel]);
        let e = table.get(1, 0).ok_or("boundary fixture has no cell")?;
        ensure((e.p - target).abs() < 1e-9, || format!("fixture p {} missed {target}", e.p))?;
        ensure(e.stars == want, || format!("p = {} gets {:?}, want {want:?}", e.p, e.stars))?;
    }
    ensure(
        Stars::from_p(0.05) == Stars::None && Stars::from_p(0.01) == Stars::One,
        || "threshold values themselves must not be starred at the stronger level".into(),
    )?;
    Ok(format!(
        "{cells} cells, max |Δr| {worst_r:.1e}, max |Δp| {worst_p:.1e}; stars exact at p = .049/.051 and .0099/.0101"
    ))
}

// ---------------------------------------------------------------- forest

fn shuffled(data: &Dataset, seed: u64) -> Dataset {
    let mut labels = data.labels().to_vec();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let columns = (0..data.n_features()).map(|f| data.column(f).to_vec()).collect();
    Dataset::new(data.feature_names().to_vec(), columns, labels).expect("same shape")
}

fn forest_sanity() -> CheckResult {
    let rows = cohort_rows(&CohortConfig {
        n_participants: 69,
        seed: 5,
        labels: LabelMode::Threshold {
            light_cut: 2.5,
            acceleration_cut: 0.7,
        },
        ..CohortConfig::default()
    });
    let config = EvaluationConfig::default();
    let (data, _) =
        dataset_from_rows(&rows, Outcome::MoodState, &config.features.variables()).map_err(|e| e.to_string())?;
    ensure(data.n_rows() >= 15_000, || format!("only {} rows", data.n_rows()))?;

    let t = Instant::now();
    let det = evaluate_dataset(&data, &config, 1).map_err(|e| e.to_string())?;
    let det_time = t.elapsed();
    let accuracy = det.accuracies.iter().sum::<f64>() / det.accuracies.len() as f64;

    let t = Instant::now();
    let null = evaluate_dataset(&shuffled(&data, 9), &config, 1).map_err(|e| e.to_string())?;
    let null_time = t.elapsed();
    let kappa = null.kappas.iter().sum::<f64>() / null.kappas.len() as f64;

    let limit = Duration::from_secs(180);
    let detail = format!(
        "{} rows, {} replicates: deterministic accuracy {accuracy:.4} in {}; shuffled kappa {kappa:+.4} in {}",
        data.n_rows(),
        det.accuracies.len(),
        secs(det_time),
        secs(null_time)
    );
    ensure(
        det.accuracies.len() == 100
            && accuracy > 0.99
            && (-0.05..=0.05).contains(&kappa)
            && det_time < limit
            && null_time < limit,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn ablation_cohort(shift_sd: f64) -> Vec<FeatureRow> {
    let mut config = CohortConfig {
        n_participants: 17,
        days: 20,
        seed: 5,
        ..CohortConfig::default()
    };
    config.location.shift_sd_happiness = shift_sd;
    config.location.shift_sd_activation = shift_sd;
    cohort_rows(&config)
}

fn ablation_direction() -> CheckResult {
    let t = Instant::now();
    let config = EvaluationConfig::default();
    let strong = gps_ablation(&ablation_cohort(4.0), &config, 1).map_err(|e| e.to_string())?;
    let zero = gps_ablation(&ablation_cohort(0.0), &config, 1).map_err(|e| e.to_string())?;
    let gaps = |r: &moodsense::forest::AblationReport| r.entries.iter().map(|e| e.accuracy_gap()).collect::<Vec<_>>();
    let (gs, gz) = (gaps(&strong), gaps(&zero));
    let fmt = |g: &[f64]| g.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join("/");
    let detail = format!(
        "strong clusters gaps {} ({} rows), zero effect gaps {} ({} rows), happiness/activation/mood state; {}",
        fmt(&gs),
        strong.n_rows,
        fmt(&gz),
        zero.n_rows,
        secs(t.elapsed())
    );
    ensure(
        gs.len() == 3 && gs.iter().all(|&g| g >= 0.10) && gz.iter().all(|&g| g.abs() <= 0.03),
        || detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- unit oracles

fn unit_oracles() -> CheckResult {
    let close = |a: f64, b: f64, tol: f64, what: &str| ensure((a - b).abs() <= tol, || format!("{what} = {a}, want {b}"));
    let kappa = |m: Vec<Vec<u64>>| cohen_kappa(&m).map(|k| k.value).map_err(|e| e.to_string());
    close(kappa(vec![vec![45, 5], vec![5, 45]])?, 0.8, 1e-12, "kappa([[45,5],[5,45]])")?;
    close(kappa(vec![vec![25, 25], vec![25, 25]])?, 0.0, 1e-12, "kappa([[25,25],[25,25]])")?;
    close(kappa(vec![vec![7, 0, 0], vec![0, 3, 0], vec![0, 0, 5]])?, 1.0, 1e-12, "kappa(diagonal)")?;
    ensure(cohen_kappa(&[vec![0, 0], vec![0, 0]]).is_err(), || "empty confusion accepted".into())?;

    let gini = |c: &[u32]| gini_impurity(c).map_err(|e| e.to_string());
    close(gini(&[3, 1])?, 0.375, 1e-12, "gini([3,1])")?;
    close(gini(&[10, 0])?, 0.0, 1e-12, "gini([10,0])")?;
    close(gini(&[5, 5])?, 0.5, 1e-12, "gini([5,5])")?;
    ensure(gini_impurity(&[0, 0]).is_err(), || "all-zero counts accepted".into())?;

    close(icc(LOGISTIC_VARIANCE), 0.5, 1e-12, "icc(pi^2/3)")?;
    close(icc(0.0), 0.0, 0.0, "icc(0)")?;
    close(icc(0.8483), 0.205, 1e-3, "icc(0.8483)")?;

    let (aic, bic) = information_criteria(-100.0, 3, 100);
    close(aic, 206.0, 1e-12, "aic(-100, 3)")?;
    close(bic, 213.8155, 1e-3, "bic(-100, 3, 100)")?;
    let (aic2, bic2) = information_criteria(-90.0, 3, 100);
    ensure(aic2 < aic && bic2 < bic, || "higher loglik must lower aic and bic".into())?;
    Ok(format!("kappa 0.8, gini 0.375, icc 0.5, aic {aic}, bic {bic:.4}"))
}

// ---------------------------------------------------------------- scheduler

fn scheduler_protocol() -> CheckResult {
    let config = PollConfig::default();
    let start = NaiveDate::from_ymd_opt(2016, 12, 19).unwrap();
    let offsets = [-300, 0, 60, 330, -480];
    let mut counts = [0usize; MAX_DAILY_POLLS + 1];
    for day in 0..1000u64 {
        let participant = format!("P{:02}", day % 10);
        let date = start + chrono::Days::new(day / 10);
        let tz = FixedOffset::east_opt(offsets[(day % 5) as usize] * 60).unwrap();
        let plan = plan_daily_polls(&participant, date, tz, 17, &config).map_err(|e| e.to_string())?;
        let k = plan.poll_instants.len();
        ensure((MIN_DAILY_POLLS..=MAX_DAILY_POLLS).contains(&k), || format!("{k} polls on day {day}"))?;
        counts[k] += 1;
        for (i, at) in plan.poll_instants.iter().enumerate() {
            let local = at.with_timezone(&tz);
            ensure(local.date_naive() == date, || format!("poll {at} leaves {date}"))?;
            let time = local.time();
            ensure(config.window_start <= time && time <= config.window_end, || {
                format!("poll at local {time} outside the waking window")
            })?;
            if i > 0 {
                let gap = *at - plan.poll_instants[i - 1];
                ensure(gap >= config.min_gap(), || format!("gap of {} min on day {day}", gap.num_minutes()))?;
            }
        }
        let again = plan_daily_polls(&participant, date, tz, 17, &config).map_err(|e| e.to_string())?;
        ensure(again == plan, || "plans are not reproducible".into())?;
    }
    ensure(counts[MIN_DAILY_POLLS..].iter().all(|&c| c > 0), || {
        format!("not every count from {MIN_DAILY_POLLS} to {MAX_DAILY_POLLS} occurs: {counts:?}")
    })?;

    let issued = Utc.with_ymd_and_hms(2017, 1, 10, 14, 0, 0).unwrap();
    let ttl = config.ttl();
    let pending = Poll::issue("poll-1", "P01", issued);
    let answered = record_response(&pending, Quadrant::HappyActivated, issued + chrono::Duration::minutes(5))
        .map_err(|e| e.to_string())?;
    let expired = pending.expire().map_err(|e| e.to_string())?;
    ensure(answered.status() == PollStatus::Answered, || "answer does not answer".into())?;
    ensure(answered.response().map(|r| r.mood_state().code()) == Some(1), || {
        "happy-activated must record mood state 1".into()
    })?;
    ensure(expired.status() == PollStatus::Expired && expired.response().is_none(), || {
        "expire does not expire".into()
    })?;
    let later = issued + chrono::Duration::minutes(30);
    let past_ttl = issued + ttl + chrono::Duration::seconds(1);
    let mut transitions = 0;
    for (state, poll) in [("pending", &pending), ("answered", &answered), ("expired", &expired)] {
        let is_pending = poll.status() == PollStatus::Pending;
        for q in Quadrant::ALL {
            ensure(record_response(poll, q, later).is_ok() == is_pending, || format!("answer from {state}"))?;
            transitions += 1;
        }
        ensure(poll.expire().is_ok() == is_pending, || format!("expire from {state}"))?;
        let swept = expire_stale_polls(std::slice::from_ref(poll), past_ttl, ttl);
        let want = if is_pending { PollStatus::Expired } else { poll.status() };
        ensure(swept[0].status() == want, || format!("sweep past ttl from {state}"))?;
        let kept = expire_stale_polls(std::slice::from_ref(poll), issued + ttl, ttl);
        ensure(kept[0] == *poll, || format!("sweep at exactly ttl from {state}"))?;
        transitions += 3;
    }
    ensure(
        record_response(&pending, Quadrant::HappyCalm, issued - chrono::Duration::seconds(1)).is_err(),
        || "answer before issue accepted".into(),
    )?;
    Ok(format!(
        "1000 days, counts 4..7 = {:?}; {transitions} state transitions checked",
        &counts[MIN_DAILY_POLLS..]
    ))
}

// ---------------------------------------------------------------- CLI determinism

fn run_cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_moodsense"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline_determinism() -> CheckResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(
        d.join("moodsense.toml"),
        "[simulate]\nn_participants = 17\ndays = 12\n[analysis.forest]\nreplicates = 10\n",
    )
    .map_err(|e| e.to_string())?;
    let common = ["--config", "moodsense.toml", "--seed", "11"];
    run_cli(d, &[&common[..], &["simulate", "--ingest"]].concat())?;
    let mut compared = 0;
    for analysis in ["correlations", "glmm", "forest"] {
        for run in ["a", "b"] {
            run_cli(d, &[&common[..], &["--out-dir", run, "analyze", analysis]].concat())?;
        }
        for ext in ["txt", "csv"] {
            let read = |run: &str| std::fs::read(d.join(run).join(format!("{analysis}.{ext}")));
            let (a, b) = (read("a").map_err(|e| e.to_string())?, read("b").map_err(|e| e.to_string())?);
            ensure(!a.is_empty(), || format!("{analysis}.{ext} is empty"))?;
            ensure(a == b, || format!("{analysis}.{ext} differs between runs"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} report files byte-identical across two runs"))
}

// ---------------------------------------------------------------- ingestion

fn sample_participant(id: &str) -> Participant {
    Participant {
        id: id.into(),
        age: 29,
        gender: Gender::Female,
        weight: 61.5,
        sportiness: 2,
        factors: Some(BigFive {
            neuroticism: 41.0,
            extraversion: 55.5,
            openness: 62.0,
            agreeableness: 70.25,
            conscientiousness: 48.0,
        }),
        utc_offset_minutes: -300,
    }
}

fn sample_observation(id: &str, minute: i64, rng: &mut ChaCha8Rng) -> Observation {
    Observation {
        participant_id: id.into(),
        timestamp: Utc.with_ymd_and_hms(2017, 1, 10, 12, 0, 0).unwrap() + chrono::Duration::minutes(minute),
        bpm: rng.random_range(50.0..120.0),
        light_level: rng.random_range(0.0..5.0),
        acceleration: rng.random_range(0.0..2.0),
        vmc: rng.random_range(0.0..900.0),
        gps: rng.random_bool(0.8).then(|| GpsFix {
            latitude: 42.36 + rng.random_range(-0.01..0.01),
            longitude: -71.09 + rng.random_range(-0.01..0.01),
            altitude: rng.random_range(0.0..30.0),
        }),
    }
}

#[derive(PartialEq, Debug)]
struct Contents {
    participants: Vec<Participant>,
    observations: Vec<Observation>,
    responses: Vec<MoodResponse>,
    polls: Vec<Poll>,
}

fn contents(store: &Store) -> Contents {
    let s = store.snapshot();
    Contents {
        participants: s.participants,
        observations: s.observations,
        responses: s.responses,
        polls: s.polls,
    }
}

fn is_prefix<T: PartialEq>(short: &[T], long: &[T]) -> bool {
    short.len() <= long.len() && long[..short.len()] == *short
}

fn ingestion_robustness() -> CheckResult {
    let err = |e: moodsense::Error| e.to_string();
    let io = |e: std::io::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let original = tempfile::tempdir().map_err(io)?;
    let full = {
        let mut store = Store::open(original.path()).map_err(err)?;
        for id in ["P01", "P02", "P03"] {
            store.append_participant(sample_participant(id)).map_err(err)?;
        }
        for b in 0..6 {
            let batch = (0..8).map(|k| sample_observation("P01", b * 8 + k, &mut rng)).collect();
            store.append_observations(batch).map_err(err)?;
        }
        let t0 = Utc.with_ymd_and_hms(2017, 1, 10, 12, 0, 0).unwrap();
        for k in 0..10 {
            let t: DateTime<Utc> = t0 + chrono::Duration::minutes(7 * k);
            store
                .append_response(MoodResponse::from_quadrant("P02", t, Quadrant::ALL[k as usize % 4]))
                .map_err(err)?;
            let poll = Poll::issue(format!("poll-{k}"), "P02", t);
            store.put_poll(poll.clone()).map_err(err)?;
            store.put_poll(record_response(&poll, Quadrant::UnhappyCalm, t).map_err(err)?).map_err(err)?;
        }
        contents(&store)
    };

    let logs = ["participants.jsonl", "observations.jsonl", "responses.jsonl", "polls.jsonl"];
    let mut trials = 0;
    for log in logs {
        let len = std::fs::metadata(original.path().join(log)).map_err(io)?.len();
        let mut cuts: Vec<u64> = (0..60).map(|_| rng.random_range(0..len)).collect();
        cuts.extend([0, 1, len - 1]);
        for cut in cuts {
            let copy = tempfile::tempdir().map_err(io)?;
            for f in logs.iter().chain(&["manifest.json"]) {
                std::fs::copy(original.path().join(f), copy.path().join(f)).map_err(io)?;
            }
            let path = copy.path().join(log);
            std::fs::OpenOptions::new().write(true).open(&path).map_err(io)?.set_len(cut).map_err(io)?;
            let got = contents(&Store::open(copy.path()).map_err(|e| format!("{log} cut at {cut}: {e}"))?);
            let ok = is_prefix(&got.participants, &full.participants)
                && is_prefix(&got.observations, &full.observations)
                && is_prefix(&got.responses, &full.responses)
                && got.polls.iter().all(|p| full.polls.contains(p) || p.is_pending());
            ensure(ok, || format!("{log} cut at byte {cut} produced records that were never written"))?;
            let text = std::fs::read_to_string(&path).map_err(io)?;
            ensure(text.is_empty() || text.ends_with('\n'), || format!("{log} keeps a torn tail after reopening"))?;
            // Appending after the repair must not glue onto a cut record.
            let mut store = Store::open(copy.path()).map_err(err)?;
            if log == "observations.jsonl" {
                let extra = sample_observation("P09", 10_000, &mut rng);
                store.append_observations(vec![extra.clone()]).map_err(err)?;
                let reopened = Store::open(copy.path()).map_err(err)?;
                ensure(reopened.observations().last() == Some(&extra), || "append after repair lost".into())?;
            }
            trials += 1;
        }
    }

    let dir = tempfile::tempdir().map_err(io)?;
    let csv = dir.path().join("obs.csv");
    std::fs::write(
        &csv,
        "participant_id,timestamp,bpm,light_level,acceleration,vmc,latitude,longitude,altitude\n\
         P01,2017-01-10T15:00:00Z,70,1.0,0.2,50,,,\n\
         P01,2017-01-10T15:01:00Z,70,7.0,0.2,50,,,\n\
         P01,2017-01-10T15:02:00Z,-4,1.0,0.2,50,,,\n\
         P01,2017-01-10T15:03:00Z,71,5.0,0.2,50,42.3,-71.1,4\n",
    )
    .map_err(io)?;
    let mut store = Store::open(dir.path().join("store")).map_err(err)?;
    let report = ingest_file(&mut store, &csv, RecordKind::Observations).map_err(err)?;
    ensure(report.accepted == 2, || format!("{} rows accepted, want 2", report.accepted))?;
    let lines: Vec<u64> = report.rejected.iter().map(|r| r.line).collect();
    ensure(lines == [3, 4], || format!("rejected lines {lines:?}, want [3, 4]"))?;
    ensure(
        report.rejected[0].message.contains("light") && report.rejected[1].message.contains("bpm"),
        || format!("diagnostics do not name the field: {:?}", report.rejected),
    )?;
    ensure(store.observations().len() == 2, || "rejected rows reached the store".into())?;
    Ok(format!(
        "{trials} truncations left only whole records; rejected {}",
        report.rejected.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; ")
    ))
}

// ----------------------------------------------------------------

fn main() {
    let checks: [(&str, fn() -> CheckResult); 10] = [
        ("glmm oracle equivalence", glmm_oracle),
        ("glmm recovery", glmm_recovery),
        ("gradient check", gradient_check),
        ("correlation oracle", correlation_oracle),
        ("forest sanity", forest_sanity),
        ("ablation direction", ablation_direction),
        ("kappa/gini/icc/aic/bic unit oracles", unit_oracles),
        ("scheduler protocol", scheduler_protocol),
        ("pipeline determinism", pipeline_determinism),
        ("ingestion robustness", ingestion_robustness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance check(s) failed");
        std::process::exit(1);
    }
}
