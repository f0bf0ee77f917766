use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bidscreen::coalitions::{build_feature_table, CoalitionLabel, FeatureTable};
use bidscreen::learners::SavedModel;
use bidscreen::pipeline::{
    class_medians_report, fit_final_model, run_experiment, score_table, with_workers, PipelineError,
};
use bidscreen::synthgen::{gen_market, gen_scenario_suite, preset, MarketParams, SynthError};
use bidscreen::{parse_dataset, validate, ColumnMap, Dataset};

use crate::config::RunConfig;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Writes to `path`, or to standard output when `None`.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_config_echo(dir: &Path, config: &RunConfig) -> Result<()> {
    let mut w = create(&dir.join("run_config.json"))?;
    serde_json::to_writer_pretty(&mut w, config)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_dataset(path: &Path, columns: &ColumnMap) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_dataset(file, columns, Some(path.display().to_string()))
        .with_context(|| format!("reading {}", path.display()))
}

fn load_features(path: &Path) -> Result<FeatureTable> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    FeatureTable::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

pub fn validate_cmd(config: &RunConfig) -> Result<()> {
    let dataset = load_dataset(config.input()?, &config.columns)?;
    let report = validate(&dataset);
    let rigged = dataset.rows().filter(|r| r.rigged).count();
    println!("rows: {}", report.n_rows);
    println!("tenders: {}", report.n_tenders);
    println!("firms: {}", report.n_firms);
    println!("rigged rows: {rigged}");
    println!("tenders with fewer than 3 bids: {}", report.small_tenders.len());
    println!("tenders mixing rigged and clean bids: {}", report.mixed_flag_tenders);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

pub fn features_cmd(config: &RunConfig) -> Result<PathBuf> {
    let dataset = load_dataset(config.input()?, &config.columns)?;
    let fc = config.feature_config();
    let table = with_workers(config.experiment.workers, || build_feature_table(&dataset, &fc))??;
    let dir = config.output_dir();
    prepare_dir(&dir)?;
    let path = dir.join("features.csv");
    let mut w = create(&path)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    write_config_echo(&dir, config)?;
    println!(
        "{} coalitions of {} firms ({} collusive, {} competitive, {} mixed), {} features -> {}",
        table.len(),
        fc.k,
        table.count(CoalitionLabel::Collusive),
        table.count(CoalitionLabel::Competitive),
        table.count(CoalitionLabel::Mixed),
        table.n_features(),
        path.display()
    );
    Ok(path)
}

pub fn evaluate_cmd(config: &RunConfig, save_models: bool) -> Result<()> {
    let table = load_features(config.input()?)?;
    let exp = &config.experiment;
    let report = run_experiment(&table, exp)?;
    let dir = config.output_dir();
    prepare_dir(&dir)?;

    let mut w = create(&dir.join("report.json"))?;
    report.write_json(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("ccr.csv"))?;
    report.write_ccr_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("reps.csv"))?;
    report.write_reps_csv(&mut w)?;
    w.flush()?;
    if report.importance.is_some() {
        let mut w = create(&dir.join("importance.csv"))?;
        report.write_importance_csv(&mut w)?;
        w.flush()?;
    }
    match class_medians_report(&table.trainable()) {
        Ok(medians) => {
            let mut w = create(&dir.join("medians.csv"))?;
            medians.write_csv(&mut w)?;
            w.flush()?;
        }
        // no `_median` columns or a missing class: nothing to tabulate
        Err(PipelineError::ClassAbsent(_)) => {}
        Err(e) => return Err(e.into()),
    }
    write_config_echo(&dir, config)?;

    if save_models {
        let models = dir.join("models");
        prepare_dir(&models)?;
        for &kind in &exp.algorithms {
            let saved = fit_final_model(&table, kind, exp)?;
            let mut w = create(&models.join(format!("{kind}.json")))?;
            saved.save(&mut w)?;
            w.flush()?;
        }
    }

    println!("{:<12} {:>8} {:>10} {:>12}", "algorithm", "ccr", "collusion", "competition");
    for s in &report.summaries {
        println!(
            "{:<12} {:>8.4} {:>10.4} {:>12.4}",
            s.algorithm.name(),
            s.ccr.mean,
            s.ccr_collusion.mean,
            s.ccr_competition.mean
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("reports written to {}", dir.display());
    Ok(())
}

pub struct SynthArgs {
    pub preset: String,
    pub params: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub list: bool,
}

pub fn synth_cmd(args: &SynthArgs, columns: &ColumnMap) -> Result<()> {
    if args.list {
        for s in gen_scenario_suite() {
            println!("{:<12} {}", s.name, s.description);
        }
        return Ok(());
    }
    let mut params: MarketParams = match &args.params {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing market parameters {}", path.display()))?
        }
        None => preset(&args.preset)?,
    };
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    let dataset = gen_market(&params)?;
    let mut w = sink(args.output.as_deref())?;
    dataset.write_csv(&mut w, columns)?;
    w.flush()?;
    Ok(())
}

pub fn score_cmd(features: &Path, model: &Path, output: Option<&Path>) -> Result<()> {
    let table = load_features(features)?;
    let file = File::open(model).with_context(|| format!("opening {}", model.display()))?;
    let saved = SavedModel::load(file).with_context(|| format!("loading {}", model.display()))?;
    let prediction = match score_table(&table, &saved) {
        Err(PipelineError::UnknownColumn(c)) => {
            bail!("feature table lacks column `{c}` that the model was trained on")
        }
        other => other?,
    };
    let mut w = csv::Writer::from_writer(sink(output)?);
    let k = table.rows.first().map_or(0, |r| r.members.len());
    let mut header = vec!["coalition_id".to_string()];
    header.extend((1..=k).map(|i| format!("member_{i}")));
    header.extend(["probability".into(), "predicted".into()]);
    w.write_record(&header)?;
    for ((row, p), label) in table.rows.iter().zip(&prediction.probability).zip(&prediction.label) {
        let mut rec = vec![row.coalition_id.clone()];
        rec.extend(row.members.iter().cloned());
        rec.push(format!("{p:?}"));
        rec.push(if *label == 1 { "collusive" } else { "competitive" }.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// 1 for problems with the user's input or configuration, 2 for failures
/// inside the library.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use bidscreen::coalitions::CoalitionError;
    use bidscreen::learners::LearnError;
    let learn_internal = |e: &LearnError| {
        matches!(
            e,
            LearnError::LassoNoConvergence { .. } | LearnError::SvmNoConvergence(_) | LearnError::NnetDiverged { .. }
        )
    };
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::ThreadPool(_) => 2,
                PipelineError::Learn(l) | PipelineError::Rep { source: l, .. } if learn_internal(l) => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<LearnError>() {
            return if learn_internal(e) { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<CoalitionError>() {
            return match e {
                CoalitionError::MissingBid { .. } | CoalitionError::EmptyAggregate => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<SynthError>().is_some() {
            return 1;
        }
    }
    1
}
