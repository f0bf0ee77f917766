//! Acceptance checks. Prints one `criterion N PASS|FAIL` line per criterion
//! and exits non-zero if any fails.
//!
//! `ACCEPTANCE_CRITERIA=1,4` runs a subset.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use bidscreen::coalitions::{build_feature_table, enumerate_coalitions, FeatureConfig, FeatureTable};
use bidscreen::data::{BidRow, Dataset, Provenance};
use bidscreen::index::build_index;
use bidscreen::learners::lasso::{lambda_grid, LassoProblem};
use bidscreen::learners::nnet::{gradient_check, Layout};
use bidscreen::learners::simplex::squared_error;
use bidscreen::learners::superlearner::out_of_fold_panel;
use bidscreen::learners::{
    fit_forest, fit_superlearner, gini_importance, ForestSpec, LearnerSettings, Matrix, Model, ModelKind,
    Standardizer, SuperLearnerSpec, TrainMatrix,
};
use bidscreen::pipeline::{
    balance, class_medians_report, feature_subset, run_experiment, shuffle_labels, training_data,
    ExperimentConfig, ScreenSubset,
};
use bidscreen::rng::{derive_seed, rng_from_seed, Rng};
use bidscreen::screens::{screen_vector, Screen, ScreenVector};
use bidscreen::synthgen::{gen_market, preset};
use bidscreen::StatisticSet;
use rand::seq::SliceRandom;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let checks: [(usize, &str, Check); 8] = [
        (1, "count identities", count_identities),
        (2, "oracle equivalence", oracle_equivalence),
        (3, "screen invariants", screen_invariants),
        (4, "feature arity", feature_arity),
        (5, "protocol fidelity", protocol_fidelity),
        (6, "synthetic end-to-end", synthetic_end_to_end),
        (7, "learner numerics", learner_numerics),
        (8, "importance contract", importance_contract),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {n} {} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn dataset(rows: Vec<BidRow>) -> Dataset {
    Dataset::from_rows(rows, None, Provenance::default()).expect("valid rows")
}

fn row(tender: String, firm: String, bid: f64) -> BidRow {
    BidRow { tender_id: tender, firm_id: firm, bid, rigged: false }
}

// ---------------------------------------------------------------- 1

fn binomial(n: u64, k: u64) -> u64 {
    // each partial product is itself a binomial coefficient, so the division is exact
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn count_identities() -> Outcome {
    let mut rows = Vec::new();
    for t in 0..3 {
        for f in 0..75 {
            rows.push(row(format!("T{t}"), format!("F{f:02}"), 1000.0 + (f * 13 + t * 7) as f64));
        }
    }
    let index = build_index(&dataset(rows));
    let triplets = enumerate_coalitions(&index, 3, 3).unwrap();
    let start = Instant::now();
    let quads = enumerate_coalitions(&index, 4, 3).unwrap();
    let quad_secs = start.elapsed().as_secs_f64();
    let all_joint = triplets.iter().chain(&quads).all(|c| c.n_tenders() == 3);
    let pass = triplets.len() == 67_525
        && binomial(75, 3) == 67_525
        && quads.len() == 1_215_450
        && binomial(75, 4) == 1_215_450
        && all_joint
        && quad_secs < 60.0;
    outcome(
        pass,
        format!(
            "k=3: {} (C(75,3) = {}), k=4: {} (C(75,4) = {}) in {quad_secs:.2}s",
            triplets.len(),
            binomial(75, 3),
            quads.len(),
            binomial(75, 4)
        ),
    )
}

// ---------------------------------------------------------------- 2

type NamedCoalition = (Vec<String>, BTreeSet<String>);

fn naive_coalitions(rows: &[BidRow], k: usize, min_joint: usize) -> BTreeSet<NamedCoalition> {
    let mut tenders_of: HashMap<&str, HashSet<&str>> = HashMap::new();
    for r in rows {
        tenders_of.entry(&r.firm_id).or_default().insert(&r.tender_id);
    }
    let mut firms: Vec<&str> = tenders_of.keys().copied().collect();
    firms.sort_unstable();
    let mut out = BTreeSet::new();
    let mut pick = Vec::new();
    fn recurse<'a>(
        firms: &[&'a str],
        start: usize,
        k: usize,
        min_joint: usize,
        tenders_of: &HashMap<&str, HashSet<&'a str>>,
        pick: &mut Vec<&'a str>,
        out: &mut BTreeSet<NamedCoalition>,
    ) {
        if pick.len() == k {
            let mut joint: HashSet<&str> = tenders_of[pick[0]].clone();
            for f in &pick[1..] {
                joint = joint.intersection(&tenders_of[f]).copied().collect();
            }
            if joint.len() >= min_joint {
                out.insert((
                    pick.iter().map(|s| s.to_string()).collect(),
                    joint.into_iter().map(String::from).collect(),
                ));
            }
            return;
        }
        for i in start..firms.len() {
            pick.push(firms[i]);
            recurse(firms, i + 1, k, min_joint, tenders_of, pick, out);
            pick.pop();
        }
    }
    recurse(&firms, 0, k, min_joint, &tenders_of, &mut pick, &mut out);
    out
}

fn random_market(rng: &mut Rng) -> Vec<BidRow> {
    let n_firms = rng.random_range(3..=12);
    let n_tenders = rng.random_range(3..=30);
    let p = rng.random_range(0.3..0.95);
    let mut rows = Vec::new();
    for t in 0..n_tenders {
        for f in 0..n_firms {
            if rng.random_bool(p) {
                rows.push(row(format!("T{t:02}"), format!("F{f:02}"), rng.random_range(50.0..150.0)));
            }
        }
    }
    // tender ids are shuffled so ordinals and names disagree
    rows.shuffle(rng);
    rows
}

/// Straightforward transcription of the screen definitions.
fn naive_screens(bids: &[f64]) -> ([f64; 9], [bool; 9]) {
    let mut b = bids.to_vec();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = b.len();
    let nf = n as f64;
    let all_equal = |x: &[f64]| x.iter().all(|&v| v == x[0]);
    let mean = |x: &[f64]| x.iter().rev().sum::<f64>() / x.len() as f64;
    let sd = |x: &[f64]| {
        let m = mean(x);
        (x.iter().rev().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
    };
    let gap = b[1] - b[0];
    let range = b[n - 1] - b[0];
    let s = if all_equal(&b) { 0.0 } else { sd(&b) };
    let s_losing = if all_equal(&b[1..]) { 0.0 } else { sd(&b[1..]) };
    let ratio = |num: f64, den: f64| if den == 0.0 { (0.0, true) } else { (num / den, false) };

    let skew = if s == 0.0 {
        (0.0, true)
    } else {
        let m = mean(&b);
        let sum: f64 = b.iter().map(|v| ((v - m) / s).powi(3)).sum();
        (nf / ((nf - 1.0) * (nf - 2.0)) * sum, false)
    };
    let ks = if range == 0.0 {
        (1.0, true)
    } else {
        let mut d = 0.0f64;
        for (i, &v) in b.iter().enumerate() {
            let f = (v - b[0]) / range;
            let i = (i + 1) as f64;
            d = d.max((i / nf - f).abs()).max(((i - 1.0) / nf - f).abs());
        }
        (d, false)
    };
    let rd = ratio(gap, s_losing);
    let altrd = ratio(gap, s);
    let normd = ratio(gap, range);
    (
        [100.0 * s / mean(&b), range / b[0], gap / b[0], gap, skew.0, rd.0, altrd.0, normd.0, ks.0],
        [false, false, false, false, skew.1, rd.1, altrd.1, normd.1, ks.1],
    )
}

fn random_bids(rng: &mut Rng) -> Vec<f64> {
    let n = rng.random_range(3..=8);
    match rng.random_range(0..10) {
        // all equal
        0 => vec![rng.random_range(1.0..1e4); n],
        // integer bids on a narrow range: frequent ties
        1..=3 => (0..n).map(|_| rng.random_range(95..=105) as f64).collect(),
        _ => {
            let scale = 10f64.powf(rng.random_range(-2.0..6.0));
            (0..n).map(|_| scale * rng.random_range(0.5..1.5)).collect()
        }
    }
}

/// Relative closeness; skew is a dimensionless value that can cancel to
/// nearly zero, so it is compared relative to max(|a|, |b|, 1).
fn close(screen: Screen, a: f64, b: f64, tol: f64) -> bool {
    let floor = if screen == Screen::Skew { 1.0 } else { 0.0 };
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

fn matches_naive(v: &ScreenVector, bids: &[f64]) -> bool {
    let (values, flags) = naive_screens(bids);
    Screen::ALL
        .iter()
        .enumerate()
        .all(|(i, &s)| close(s, v.get(s), values[i], 1e-12) && v.is_degenerate(s) == flags[i])
}

fn oracle_equivalence() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut mismatched = 0;
    let mut total = 0;
    for _ in 0..200 {
        let rows = random_market(&mut rng);
        let k = rng.random_range(3..=4);
        let min_joint = rng.random_range(3..=5);
        let data = dataset(rows.clone());
        let index = build_index(&data);
        let indexed = enumerate_coalitions(&index, k, min_joint).unwrap();
        let named: Vec<NamedCoalition> = indexed
            .iter()
            .map(|c| {
                (
                    c.member_ids(data.firms()).into_iter().map(String::from).collect(),
                    c.tenders().map(|t| data.tenders()[t].id().to_string()).collect(),
                )
            })
            .collect();
        let as_set: BTreeSet<NamedCoalition> = named.iter().cloned().collect();
        total += named.len();
        if as_set.len() != named.len() || as_set != naive_coalitions(&rows, k, min_joint) {
            mismatched += 1;
        }
    }
    let mut screen_mismatch = 0;
    for _ in 0..10_000 {
        let bids = random_bids(&mut rng);
        if !matches_naive(&screen_vector(&bids).unwrap(), &bids) {
            screen_mismatch += 1;
        }
    }
    outcome(
        mismatched == 0 && screen_mismatch == 0,
        format!(
            "{mismatched}/200 enumeration mismatches ({total} coalitions), \
             {screen_mismatch}/10000 screen mismatches at rel. tol 1e-12"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn screen_invariants() -> Outcome {
    let mut rng = rng_from_seed(3);
    let cases = 2_000;
    let mut perm_fail = 0;
    let mut scale_fail = 0;
    for _ in 0..cases {
        let bids = random_bids(&mut rng);
        let base = screen_vector(&bids).unwrap();
        let mut shuffled = bids.clone();
        shuffled.shuffle(&mut rng);
        if screen_vector(&shuffled).unwrap() != base {
            perm_fail += 1;
        }
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = bids.iter().map(|b| b * c).collect();
        let sv = screen_vector(&scaled).unwrap();
        let ok = Screen::ALL.iter().all(|&s| {
            let expected = if s == Screen::Absdiff { c * base.get(s) } else { base.get(s) };
            close(s, sv.get(s), expected, 1e-12) && sv.is_degenerate(s) == base.is_degenerate(s)
        });
        if !ok {
            scale_fail += 1;
        }
    }
    outcome(
        perm_fail == 0 && scale_fail == 0,
        format!("{perm_fail}/{cases} permutation failures, {scale_fail}/{cases} scaling failures"),
    )
}

// ---------------------------------------------------------------- 4

fn feature_arity() -> Outcome {
    let data = gen_market(&preset("default").unwrap()).unwrap();
    let width = |t: &FeatureTable| t.rows.iter().all(|r| r.values.len() == t.n_features());
    let base = build_feature_table(&data, &FeatureConfig::default()).unwrap();
    let extended =
        build_feature_table(&data, &FeatureConfig { stats: StatisticSet::Extended, ..FeatureConfig::default() })
            .unwrap();
    let reduced = feature_subset(&base, &ScreenSubset::AsymmetryReduced).unwrap();
    let reduced_screens: BTreeSet<&str> =
        reduced.names.iter().map(|n| n.split_once('_').unwrap().0).collect();
    let pass = base.n_features() == 36
        && extended.n_features() == 90
        && reduced.n_features() == 16
        && reduced_screens == BTreeSet::from(["altrd", "normd", "rd", "skew"])
        && width(&base)
        && width(&extended)
        && width(&reduced)
        && !base.is_empty();
    outcome(
        pass,
        format!(
            "base {}, extended {}, asymmetry without diffp/absdiff {} ({} coalitions)",
            base.n_features(),
            extended.n_features(),
            reduced.n_features(),
            base.len()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn acceptance_table(seed: u64) -> FeatureTable {
    let data = gen_market(&preset("acceptance").unwrap().with_seed(seed)).unwrap();
    build_feature_table(&data, &FeatureConfig::default()).unwrap()
}

fn protocol_fidelity() -> Outcome {
    // balance
    let mut rng = rng_from_seed(5);
    let mut unbalanced = 0;
    for _ in 0..1_000 {
        let n = rng.random_range(2..300);
        let p = rng.random_range(0.01..0.99);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(p))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let b = balance(&labels, &mut rng).unwrap();
        let pos = b.indices.iter().filter(|&&i| labels[i] == 1).count();
        let minority = labels.iter().filter(|&&l| l == 1).count().min(n - labels.iter().filter(|&&l| l == 1).count());
        let distinct: HashSet<usize> = b.indices.iter().copied().collect();
        if pos * 2 != b.indices.len() || pos != minority || distinct.len() != b.indices.len() {
            unbalanced += 1;
        }
    }

    // reproducibility and worker invariance
    let data = gen_market(&preset("incomplete").unwrap()).unwrap();
    let small = build_feature_table(&data, &FeatureConfig::default()).unwrap();
    let run = |workers| {
        let config = ExperimentConfig {
            algorithms: ModelKind::ALL.to_vec(),
            reps: 100,
            seed: 11,
            workers: Some(workers),
            ..ExperimentConfig::default()
        };
        serde_json::to_string(&run_experiment(&small, &config).unwrap()).unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(3));
    let reproducible = a == b && a == c;

    // shuffled labels
    let shuffled = shuffle_labels(&acceptance_table(0), 1);
    let mut learners = LearnerSettings::default();
    learners.superlearner.folds = 5;
    learners.superlearner.forest.n_trees = 200;
    let config = ExperimentConfig {
        algorithms: ModelKind::ALL.to_vec(),
        reps: 50,
        seed: 1,
        learners,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&shuffled, &config).unwrap();
    let null_ok = report.summaries.iter().all(|s| (0.45..=0.55).contains(&s.ccr.mean));
    let null: Vec<String> =
        report.summaries.iter().map(|s| format!("{} {:.3}", s.algorithm.name(), s.ccr.mean)).collect();

    outcome(
        unbalanced == 0 && reproducible && null_ok,
        format!(
            "{unbalanced}/1000 unbalanced samples; 100-rep reports identical across runs and \
             1 vs 3 workers: {reproducible}; shuffled-label mean CCR over 50 reps: {}",
            null.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 6

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let table = acceptance_table(0);
    let config = ExperimentConfig {
        algorithms: vec![ModelKind::Forest, ModelKind::Super],
        reps: 100,
        seed: 6,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&table, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ccr: Vec<f64> = report.summaries.iter().map(|s| s.ccr.mean).collect();

    let seeds = 40;
    let mut directed = 0;
    for seed in 0..seeds {
        let data = gen_market(&preset("default").unwrap().with_seed(seed)).unwrap();
        let table = build_feature_table(&data, &FeatureConfig::default()).unwrap();
        let medians = class_medians_report(&table.trainable()).unwrap();
        // collusive minus competitive class mean
        let gap = |f: &str| {
            let r = medians.get(f).unwrap();
            r.collusive.mean - r.competitive.mean
        };
        if gap("cv_median") < 0.0 && gap("spread_median") < 0.0 && gap("ks_median") > 0.0 {
            directed += 1;
        }
    }
    let pass = ccr.iter().all(|&c| c >= 0.85) && secs <= 600.0 && directed * 100 >= 95 * seeds;
    outcome(
        pass,
        format!(
            "forest CCR {:.4}, super learner CCR {:.4} over 100 reps in {secs:.0}s; \
             median directions on {directed}/{seeds} seeds",
            ccr[0], ccr[1]
        ),
    )
}

// ---------------------------------------------------------------- 7

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn balanced_train(table: &FeatureTable, seed: u64) -> TrainMatrix {
    let all = training_data(table).unwrap();
    let b = balance(all.y(), &mut rng_from_seed(seed)).unwrap();
    all.subset(&b.indices)
}

fn learner_numerics() -> Outcome {
    let mut rng = rng_from_seed(7);

    let mut nnet_err = 0.0f64;
    for _ in 0..20 {
        let layout = Layout { p: rng.random_range(2..8), hidden: rng.random_range(1..6) };
        let n = rng.random_range(10..60);
        let z = random_matrix(&mut rng, n, layout.p);
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let theta: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        nnet_err = nnet_err.max(gradient_check(layout, &theta, &z, &y, 1e-3));
    }

    let mut lasso_err = 0.0f64;
    for _ in 0..20 {
        let (n, p) = (rng.random_range(10..80), rng.random_range(1..10));
        let z = random_matrix(&mut rng, n, p);
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let problem = LassoProblem::new(&z, &y);
        let b0 = rng.random_range(-1.0..1.0);
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g0, g) = problem.smooth_loss_and_gradient(b0, &beta);
        let h = 1e-6;
        let f = |b0: f64, beta: &[f64]| problem.smooth_loss_and_gradient(b0, beta).0;
        let mut numeric = vec![(f(b0 + h, &beta) - f(b0 - h, &beta)) / (2.0 * h)];
        for j in 0..p {
            let (mut up, mut down) = (beta.clone(), beta.clone());
            up[j] += h;
            down[j] -= h;
            numeric.push((f(b0, &up) - f(b0, &down)) / (2.0 * h));
        }
        let analytic: Vec<f64> = std::iter::once(g0).chain(g).collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        lasso_err = lasso_err.max(diff / norm);
    }

    // KKT along full paths, on random data and on screen features
    let features = balanced_train(&acceptance_table(0), 70);
    let mut kkt = 0.0f64;
    let mut designs = vec![(random_matrix(&mut rng, 120, 12), (0..120).map(|i| (i % 2) as u8).collect())];
    designs.push((Standardizer::fit(features.x()).transform(features.x()), features.y().to_vec()));
    for (z, y) in &designs {
        let problem = LassoProblem::new(z, y);
        let grid = lambda_grid(problem.lambda_max(), 40, 1e-3);
        for (lambda, fit) in grid.iter().zip(problem.path(&grid, 1e-7, 200).unwrap()) {
            kkt = kkt.max(problem.kkt_violation(*lambda, fit.intercept, &fit.coef));
        }
    }

    let spec = SuperLearnerSpec::default();
    let Model::Super(sl) = fit_superlearner(&features, &spec, 77).unwrap() else { unreachable!() };
    let panel = out_of_fold_panel(&features, &spec, 77).unwrap();
    let y: Vec<f64> = features.y().iter().map(|&v| f64::from(v)).collect();
    let n = y.len() as f64;
    let ensemble = squared_error(&panel, &sl.weights, &y) / n;
    let best_base = (0..sl.weights.len())
        .map(|k| {
            let mut e = vec![0.0; sl.weights.len()];
            e[k] = 1.0;
            squared_error(&panel, &e, &y) / n
        })
        .fold(f64::INFINITY, f64::min);
    let weights_ok = sl.weights.iter().all(|&w| w >= 0.0) && (sl.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12;
    let risk_ok = ensemble <= best_base && (ensemble - sl.ensemble_risk).abs() <= 1e-15;

    let pass = nnet_err <= 1e-5 && lasso_err <= 1e-5 && kkt <= 1e-6 && weights_ok && risk_ok;
    outcome(
        pass,
        format!(
            "nnet gradient rel. error {nnet_err:.2e}, lasso gradient rel. error {lasso_err:.2e}, \
             max KKT violation {kkt:.2e}; super learner weights {:?}, out-of-fold MSE {ensemble:.5} \
             vs best base {best_base:.5}",
            sl.weights.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn importance_contract() -> Outcome {
    let mut rng = rng_from_seed(8);
    let (n, p, signal) = (400, 10, 3);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let class = (i % 2) as u8;
        let mut r: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        r[signal] = if class == 1 { 1.0 + rng.random::<f64>() } else { -rng.random::<f64>() };
        rows.push(r);
        y.push(class);
    }
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let train = TrainMatrix::new(Matrix::from_rows(&rows), y, names.clone()).unwrap();
    let Model::Forest(forest) = fit_forest(&train, &ForestSpec::default(), 8).unwrap() else { unreachable!() };
    let ranked = gini_importance(&forest, &names);
    let top = &ranked[0];
    let worst_noise = ranked[1..].iter().map(|f| f.importance).fold(0.0, f64::max);
    let single_ok = top.index == signal && top.importance == 100.0 && worst_noise < 20.0;

    let expected: BTreeSet<&str> = BTreeSet::from(["cv_median", "ks_median", "spread_median"]);
    let seeds = 40;
    let mut hits = 0;
    let mut misses = Vec::new();
    let mut ks_ranks = Vec::new();
    for seed in 0..seeds {
        let table = acceptance_table(seed);
        let config = ExperimentConfig {
            algorithms: vec![ModelKind::Forest],
            reps: 10,
            seed: derive_seed(8, seed),
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&table, &config).unwrap();
        let ranked = report.importance.expect("forest importance");
        let top3: BTreeSet<&str> = ranked[..3].iter().map(|f| f.feature.as_str()).collect();
        ks_ranks.push(ranked.iter().position(|f| f.feature == "ks_median").unwrap() + 1);
        if top3 == expected {
            hits += 1;
        } else if misses.len() < 3 {
            misses.push(format!("seed {seed}: {}", top3.into_iter().collect::<Vec<_>>().join("/")));
        }
    }
    let pass = single_ok && hits * 100 >= 90 * seeds;
    ks_ranks.sort_unstable();
    outcome(
        pass,
        format!(
            "single signal: x{} at {:.0}, largest noise importance {worst_noise:.1}; \
             cv/spread/ks medians are the top 3 on {hits}/{seeds} seeds, \
             ks_median rank min {} median {} max {}{}",
            top.index,
            top.importance,
            ks_ranks[0],
            ks_ranks[ks_ranks.len() / 2],
            ks_ranks[ks_ranks.len() - 1],
            if misses.is_empty() { String::new() } else { format!(" (e.g. {})", misses.join("; ")) }
        ),
    )
}
