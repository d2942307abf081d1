//! Subcommand implementations. Each returns its process exit code:
//! 0 success, 1 domain-level failure, 2 configuration/environment failure
//! (the latter usually via `Err`, mapped in main).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use trajforge_core::audit::{audit_round, run_fidelity_eval, AuditError, TrajectoryPair};
use trajforge_core::backends::RealExecutor;
use trajforge_core::corpus::{
    self, assemble, thinking_depth_stats, AssemblePolicy, CorpusError, CorpusRecord, Provenance,
};
use trajforge_core::envstore::{load_bundle, validate_bundle, BundleIndex};
use trajforge_core::generator::{GeneratorFactory, RemoteFactory, ScriptedPolicy};
use trajforge_core::icwm::{
    extract_single_turn_pairs, make_world_model_env, train_traced, TrainError, TrainingTurn,
};
use trajforge_core::traj_loop::{run_campaign, LoopConfig, TerminalStatus, Trajectory};
use trajforge_core::{TrainConfig, WorldModel};

use crate::config::RunConfig;
use crate::fsio::{
    export_records_atomic, load_seeds, save_params_atomic, seed_bundle_map, write_atomic,
    SeedEntry,
};

/// `bundle validate`: print violations per bundle; 0 iff none, 2 on load
/// failure.
pub fn bundle_validate(paths: &[PathBuf]) -> i32 {
    let registry = trajforge_core::backends::BackendRegistry::builtin();
    let mut worst = 0;
    for path in paths {
        match load_bundle(path) {
            Err(e) => {
                eprintln!("{}: load failed: {e}", path.display());
                worst = worst.max(2);
            }
            Ok(bundle) => {
                let violations = validate_bundle(&bundle, &registry);
                if violations.is_empty() {
                    println!("{}: ok ({})", path.display(), bundle.bundle_id);
                } else {
                    for violation in &violations {
                        println!("{}: violation: {violation}", path.display());
                    }
                    worst = worst.max(1);
                }
            }
        }
    }
    worst
}

fn loop_config(config: &RunConfig) -> LoopConfig {
    LoopConfig {
        max_correction_rounds: config.k,
        campaign_nonce: config.seed,
        ..LoopConfig::default()
    }
}

fn generator_factory(config: &RunConfig) -> Result<Arc<dyn GeneratorFactory>> {
    match (&config.policy, &config.generator_url) {
        (Some(_), Some(_)) => bail!("config sets both `policy` and `generator.url`; pick one"),
        (Some(path), None) => {
            let policy = ScriptedPolicy::from_file(path)
                .with_context(|| format!("cannot load policy {}", path.display()))?;
            Ok(Arc::new(policy))
        }
        (None, Some(url)) => Ok(Arc::new(RemoteFactory::new(
            url.clone(),
            config.resolved_generator_token(),
        ))),
        (None, None) => bail!("config needs either `policy` or `generator.url`"),
    }
}

fn campaign_inputs(
    config: &RunConfig,
) -> Result<(Vec<SeedEntry>, BundleIndex, BTreeMap<String, Arc<trajforge_core::envstore::EnvironmentBundle>>)> {
    let seeds_path = config
        .seeds
        .as_ref()
        .context("config needs `seeds` (a JSON-lines seeds file)")?;
    let bundles_path = config
        .bundles
        .as_ref()
        .context("config needs `bundles` (a directory of bundle subdirectories)")?;
    let entries = load_seeds(seeds_path)?;
    let index = BundleIndex::load_dir(bundles_path)
        .with_context(|| format!("cannot load bundles from {}", bundles_path.display()))?;
    let map = seed_bundle_map(&entries, &index)?;
    Ok((entries, index, map))
}

fn terminal_counts(trajectories: &[Trajectory]) -> BTreeMap<&'static str, usize> {
    let mut counts = BTreeMap::new();
    for status in [
        TerminalStatus::Solved,
        TerminalStatus::Exhausted,
        TerminalStatus::Aborted,
    ] {
        counts.insert(
            status.as_str(),
            trajectories.iter().filter(|t| t.terminal == status).count(),
        );
    }
    counts
}

/// `run`: execute a real campaign and write RealExecution corpus records.
pub fn run(config: &RunConfig) -> Result<i32> {
    let (entries, index, bundle_map) = campaign_inputs(config)?;
    let factory = generator_factory(config)?;
    let seeds: Vec<_> = entries.iter().map(|e| e.seed.clone()).collect();
    let executor = RealExecutor::builtin();

    let trajectories = run_campaign(
        &seeds,
        &bundle_map,
        factory.as_ref(),
        &executor,
        &loop_config(config),
        config.parallelism,
    )?;
    let records = assemble(&trajectories, &[], &index, &executor, AssemblePolicy::default())?;

    let corpus_path = config.corpus_path();
    let written = export_records_atomic(&records, &corpus_path, false)?;

    let counts = terminal_counts(&trajectories);
    let mut summary = String::new();
    let _ = writeln!(summary, "campaign: {} trajectories", trajectories.len());
    for (status, count) in &counts {
        let _ = writeln!(summary, "  {status}: {count}");
    }
    let _ = writeln!(summary, "records written: {written}");
    print!("{summary}");
    println!("corpus: {}", corpus_path.display());
    write_atomic(&config.out.join("run_summary.txt"), &summary)?;

    Ok(if counts["Aborted"] > 0 { 1 } else { 0 })
}

fn training_turns_from_corpus(
    corpus_path: &Path,
    index: &BundleIndex,
) -> Result<Vec<TrainingTurn>> {
    let records = corpus::import(corpus_path)
        .with_context(|| format!("cannot import corpus {}", corpus_path.display()))?;
    let real: Vec<Trajectory> = records
        .iter()
        .filter(|r| r.provenance == Provenance::RealExecution)
        .map(|r| r.trajectory.clone())
        .collect();
    Ok(extract_single_turn_pairs(&real, index)?)
}

fn train_hyper(config: &RunConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: config.wm_learning_rate,
        epochs: config.wm_epochs,
        l2: config.wm_l2,
        seed: config.wm_seed,
    }
}

/// `train-wm`: fit the proxy on every real execution turn in the corpus.
pub fn train_wm(config: &RunConfig) -> Result<i32> {
    let bundles_path = config
        .bundles
        .as_ref()
        .context("config needs `bundles` to recover bundle features")?;
    let index = BundleIndex::load_dir(bundles_path)?;
    let turns = training_turns_from_corpus(&config.corpus_path(), &index)?;

    let (params, losses) = match train_traced(&turns, &train_hyper(config)) {
        Ok(result) => result,
        Err(TrainError::EmptyTrainingSet) => {
            eprintln!("train-wm: corpus holds no real execution turns");
            return Ok(1);
        }
        Err(e) => return Err(e.into()),
    };

    let params_path = config.wm_params_path();
    save_params_atomic(&params, &params_path)?;

    let mut label_counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for turn in &turns {
        *label_counts
            .entry(turn.true_observation.label.as_str())
            .or_default() += 1;
    }
    println!("trained on {} turns ({} features)", turns.len(), params.weights.feature_count);
    println!("final loss: {:.6}", losses.last().copied().unwrap_or(f64::NAN));
    println!("label distribution:");
    for (label, count) in &label_counts {
        println!("  {label}: {count}");
    }
    println!("params: {}", params_path.display());
    Ok(0)
}

/// `amplify`: synthesize world-model trajectories with interleaved audit
/// rounds, retrain on corrections, and persist verified records.
pub fn amplify(config: &RunConfig) -> Result<i32> {
    let (entries, index, bundle_map) = campaign_inputs(config)?;
    let factory = generator_factory(config)?;
    let seeds: Vec<_> = entries.iter().map(|e| e.seed.clone()).collect();
    let executor = RealExecutor::builtin();

    let params_path = config.wm_params_path();
    let mut params = WorldModel::load(&params_path)
        .with_context(|| format!("cannot load params {}", params_path.display()))?;
    let base_turns = training_turns_from_corpus(&config.corpus_path(), &index)
        .context("amplify needs the real corpus (`corpus`) as the retraining base")?;

    let hyper = train_hyper(config);
    let mut amplified: Vec<Trajectory> = Vec::new();
    let mut corrected: Vec<TrainingTurn> = Vec::new();
    let mut findings_tsv = String::new();
    let mut retrains = 0usize;
    let mut findings_total = 0usize;

    for chunk in seeds.chunks(config.audit_every) {
        let env = make_world_model_env(Arc::new(params.clone()));
        let chunk_trajectories = run_campaign(
            chunk,
            &bundle_map,
            factory.as_ref(),
            &env,
            &loop_config(config),
            config.parallelism,
        )?;
        let round = audit_round(
            &chunk_trajectories,
            &index,
            &executor,
            config.audit_sample_fraction,
            config.seed,
        )?;
        for finding in &round.findings {
            let _ = writeln!(
                findings_tsv,
                "{}\t{}\t{}\t{}",
                finding.turn.trajectory_id,
                finding.turn.turn_index,
                finding.predicted_label,
                finding.true_label
            );
        }
        findings_total += round.findings.len();
        if !round.findings.is_empty() {
            corrected.extend(round.corrected_turns.clone());
            let mut augmented = base_turns.clone();
            augmented.extend(corrected.iter().cloned());
            params = params.retrained(&augmented, &hyper)?;
            retrains += 1;
        }
        amplified.extend(chunk_trajectories);
    }

    let records = assemble(
        &[],
        &amplified,
        &index,
        &executor,
        AssemblePolicy {
            verify_final: config.verify_final,
            verify_full: false,
        },
    )?;
    let corpus_path = config.sim_corpus_path();
    let written = export_records_atomic(&records, &corpus_path, true)?;
    write_atomic(&config.out.join("findings.tsv"), &findings_tsv)?;
    if retrains > 0 {
        save_params_atomic(&params, &config.out.join("icwm_recalibrated.params"))?;
    }

    let mut provenance_counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for record in &records {
        *provenance_counts.entry(record.provenance.as_str()).or_default() += 1;
    }
    let mut summary = String::new();
    let _ = writeln!(summary, "amplified: {} trajectories", amplified.len());
    for (provenance, count) in &provenance_counts {
        let _ = writeln!(summary, "  {provenance}: {count}");
    }
    let _ = writeln!(summary, "audit findings: {findings_total}");
    let _ = writeln!(summary, "retrains: {retrains}");
    let _ = writeln!(summary, "records written: {written}");
    print!("{summary}");
    write_atomic(&config.out.join("amplify_summary.txt"), &summary)?;

    // Records left unverified because the backend was unavailable (as
    // opposed to a verdict disagreement, which carries a verification).
    if config.verify_final && !records.is_empty() {
        let unavailable = records
            .iter()
            .filter(|r| {
                r.provenance == Provenance::WorldModelUnverified
                    && r.verification.is_none()
                    && !r.trajectory.turns.is_empty()
            })
            .count();
        if unavailable as f64 > 0.1 * records.len() as f64 {
            eprintln!(
                "amplify: backend unavailable for {unavailable} of {} records",
                records.len()
            );
            return Ok(1);
        }
    }
    Ok(0)
}

/// `audit`: fidelity report over a held-out corpus plus paired trajectories.
pub fn audit(config: &RunConfig) -> Result<i32> {
    let bundles_path = config
        .bundles
        .as_ref()
        .context("config needs `bundles` to recover bundle features")?;
    let index = BundleIndex::load_dir(bundles_path)?;
    let params_path = config.wm_params_path();
    let params = WorldModel::load(&params_path)
        .with_context(|| format!("cannot load params {}", params_path.display()))?;

    let held_out = training_turns_from_corpus(&config.corpus_path(), &index)?;

    let sim_records = corpus::import(&config.sim_corpus_path())
        .with_context(|| format!("cannot import corpus {}", config.sim_corpus_path().display()))?;
    let real_records = corpus::import(&config.corpus_path())?;
    let mut simulated: BTreeMap<(String, String), Trajectory> = BTreeMap::new();
    for record in sim_records
        .iter()
        .filter(|r| r.provenance != Provenance::RealExecution)
    {
        simulated.insert(
            (
                record.trajectory.seed_id.clone(),
                record.trajectory.bundle_digest.clone(),
            ),
            record.trajectory.clone(),
        );
    }
    let mut pairs = Vec::new();
    for record in real_records
        .iter()
        .filter(|r| r.provenance == Provenance::RealExecution)
    {
        let key = (
            record.trajectory.seed_id.clone(),
            record.trajectory.bundle_digest.clone(),
        );
        if let Some(sim) = simulated.get(&key) {
            let domain = index
                .by_digest(&record.trajectory.bundle_digest)
                .map(|b| b.domain)
                .context("paired trajectory references an unknown bundle")?;
            pairs.push(TrajectoryPair {
                domain,
                real: record.trajectory.clone(),
                simulated: sim.clone(),
            });
        }
    }

    let report = match run_fidelity_eval(&held_out, &params, &pairs) {
        Ok(report) => report,
        Err(e @ AuditError::ContaminationError { .. }) => {
            eprintln!("audit: {e}");
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };

    print!("{}", report.table());
    write_atomic(&config.out.join("fidelity.txt"), &report.table())?;
    write_atomic(&config.out.join("fidelity.tsv"), &report.tsv())?;
    Ok(0)
}

/// `stats`: thinking-depth table over the named corpus.
pub fn stats(config: &RunConfig) -> Result<i32> {
    let records = corpus::import(&config.corpus_path())
        .with_context(|| format!("cannot import corpus {}", config.corpus_path().display()))?;
    let stats = match thinking_depth_stats(&records, &config.stats_multi_turn) {
        Ok(stats) => stats,
        Err(CorpusError::EmptyCorpus) => {
            eprintln!("stats: corpus is empty");
            return Ok(1);
        }
        Err(e) => return Err(e.into()),
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# category\trecords\tmedian_think\tp25_think\tp75_think\tmedian_answer"
    );
    for row in &stats.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            row.category,
            row.record_count,
            row.median_think_chars,
            row.p25_think,
            row.p75_think,
            row.median_answer_chars
        );
    }
    let _ = writeln!(out, "# range_ratio {:.6}", stats.range_ratio);
    print!("{out}");
    write_atomic(&config.out.join("depth_stats.tsv"), &out)?;
    Ok(0)
}

/// `export`: write the default (sound) corpus file.
pub fn export(config: &RunConfig) -> Result<i32> {
    let records: Vec<CorpusRecord> = corpus::import(&config.corpus_path())
        .with_context(|| format!("cannot import corpus {}", config.corpus_path().display()))?;
    let path = config.out.join("corpus_export.records");
    let written = export_records_atomic(&records, &path, false)?;
    println!(
        "exported {written} of {} records to {}",
        records.len(),
        path.display()
    );
    Ok(0)
}
