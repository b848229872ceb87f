use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use biascorpus_core::annotation::{agreement_from_records, AgreementMode, AnnotationService, Overlap, SessionSpec};
use biascorpus_core::classifiers::{classify_batch, AdapterRequest, Prediction};
use biascorpus_core::corpus::{fetch_documents, ingest, SourceConfig};
use biascorpus_core::dataset::{
    dataset_stats, extract_candidates, resolve_labels, sample_batch, write_csv, DisagreementPolicy, ResolutionPolicy,
    SamplingStrategy,
};
use biascorpus_core::evaluation::{build_report, evaluate, AbstainPolicy, EvalRun};
use biascorpus_core::explain::{explain_instance, render_html, ExplainConfig};
use biascorpus_core::manifest::manifest_path;
use biascorpus_core::splits::{holdout_rare_terms, resample, split_dataset, HoldoutMode, RegimeSplits, SplitManifest};
use biascorpus_core::{
    AnnotationRecord, CandidateItem, ContextSentence, DateWindow, Error, LabeledInstance, Regime, ResampleConfig,
    ResampleStrategy, SplitConfig,
};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::context::{
    finish, load_dataset, parse_proportions, read_json, read_jsonl, write_json, write_jsonl, CliError, CliResult, Ctx,
};
use crate::{
    Cli, Command, DatasetCommand, IaaMode, PolicyArg, RegimeArg, ResampleStrategyArg, SessionCommand, StrategyArg,
};

pub fn run(cli: Cli) -> CliResult<()> {
    let mut ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&mut ctx, a),
        Command::Extract(a) => cmd_extract(&mut ctx, a),
        Command::Sample(a) => cmd_sample(&mut ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a),
        Command::Session(SessionCommand::Open(a)) => cmd_session_open(&ctx, a),
        Command::Session(SessionCommand::Export(a)) => cmd_session_export(&ctx, a),
        Command::Iaa(a) => cmd_iaa(&ctx, a),
        Command::Dataset(DatasetCommand::Build(a)) => cmd_dataset_build(&ctx, a),
        Command::Stats(a) => cmd_stats(&mut ctx, a),
        Command::Split(a) => cmd_split(&mut ctx, a),
        Command::Holdout(a) => cmd_holdout(&mut ctx, a),
        Command::Resample(a) => cmd_resample(&mut ctx, a),
        Command::Classify(a) => cmd_classify(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Explain(a) => cmd_explain(&mut ctx, a),
        Command::Report(a) => cmd_report(&mut ctx, a),
    }
}

fn parse_date(flag: &str, value: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| CliError::Usage(format!("{flag} expects YYYY-MM-DD, got '{value}'")))
}

fn cmd_ingest(ctx: &mut Ctx, a: crate::IngestArgs) -> CliResult<()> {
    let out = ctx.out_or("sentences.jsonl");
    ctx.check_drift(&manifest_path(&out))?;
    let lexicon = ctx.lexicon()?.clone();
    let mut config = match &a.source {
        Some(s) if s.starts_with("http://") || s.starts_with("https://") => SourceConfig::remote(s.clone()),
        Some(s) => SourceConfig::local(s),
        None => SourceConfig::from_kv(&ctx.config, Path::new("."))?,
    };
    if a.source.is_some() {
        // transport tuning keys still apply when the source comes from a flag
        if let Ok(from_cfg) = SourceConfig::from_kv(&ctx.config, Path::new(".")) {
            let source = config.source.clone();
            config = SourceConfig { source, ..from_cfg };
        }
    }
    let from = match a.from.as_deref().or(ctx.config.get("from")) {
        Some(v) => parse_date("--from", v)?,
        None => NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
    };
    let to = match a.to.as_deref().or(ctx.config.get("to")) {
        Some(v) => parse_date("--to", v)?,
        None => chrono::Local::now().date_naive(),
    };
    let window = DateWindow::new(from, to)?;
    let fetched = fetch_documents(&lexicon, window, &config)?;
    let sentences = ingest(&fetched.documents);
    write_jsonl(&out, &sentences)?;

    let mut m = ctx.new_manifest("ingest");
    ctx.describe_lexicon(&mut m)?;
    m.set("from", from).set("to", to);
    match &config.source {
        biascorpus_core::corpus::DocumentSource::LocalDir(dir) => {
            m.set("source", dir.display());
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(Error::from)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                m.add_input(f)?;
            }
        }
        biascorpus_core::corpus::DocumentSource::Remote(url) => {
            m.set("source", url);
        }
    }
    m.set("documents", fetched.documents.len())
        .set("outside_window", fetched.outside_window)
        .set("without_match", fetched.without_match)
        .set("malformed", fetched.malformed);
    finish(m, &out, &[&out])?;
    ctx.say(format!(
        "{} documents kept ({} outside window, {} without a term, {} malformed); {} sentences -> {}",
        fetched.documents.len(),
        fetched.outside_window,
        fetched.without_match,
        fetched.malformed,
        sentences.len(),
        out.display()
    ));
    Ok(())
}

fn cmd_extract(ctx: &mut Ctx, a: crate::ExtractArgs) -> CliResult<()> {
    let out = ctx.out_or("candidates.jsonl");
    ctx.check_drift(&manifest_path(&out))?;
    let lexicon = ctx.lexicon()?.clone();
    let sentences: Vec<ContextSentence> = read_jsonl(&a.sentences)?;
    let candidates = extract_candidates(&sentences, &lexicon);
    write_jsonl(&out, &candidates)?;
    let mut m = ctx.new_manifest("extract");
    ctx.describe_lexicon(&mut m)?;
    m.add_input(&a.sentences)?;
    m.set("candidates", candidates.len());
    finish(m, &out, &[&out])?;
    ctx.say(format!(
        "{} of {} sentences are candidates -> {}",
        candidates.len(),
        sentences.len(),
        out.display()
    ));
    Ok(())
}

fn cmd_sample(ctx: &mut Ctx, a: crate::SampleArgs) -> CliResult<()> {
    let out = ctx.out_or("batch.jsonl");
    ctx.check_drift(&manifest_path(&out))?;
    let candidates: Vec<CandidateItem> = read_jsonl(&a.candidates)?;
    let mut m = ctx.new_manifest("sample");
    m.add_input(&a.candidates)?;
    let (labeled, seen_terms) = match &a.exclude {
        Some(p) => {
            m.add_input(p)?;
            let records: Vec<AnnotationRecord> = read_jsonl(p)?;
            let labeled: HashSet<String> = records.into_iter().map(|r| r.item_id).collect();
            let seen: HashSet<String> = candidates
                .iter()
                .filter(|c| labeled.contains(&c.item_id))
                .flat_map(|c| c.matches.iter().map(|mm| mm.term.clone()))
                .collect();
            (labeled, seen)
        }
        None => (HashSet::new(), HashSet::new()),
    };
    let strategy = match a.strategy {
        StrategyArg::Random => SamplingStrategy::Random,
        StrategyArg::TermDiversity => SamplingStrategy::TermDiversity,
    };
    let seed = m.stage_seed("sample");
    let batch = sample_batch(&candidates, strategy, a.size, seed, &labeled, &seen_terms)?;
    write_jsonl(&out, &batch)?;
    m.set("n", a.size).set("strategy", format!("{strategy:?}"));
    finish(m, &out, &[&out])?;
    ctx.say(format!("{} items sampled -> {}", batch.len(), out.display()));
    Ok(())
}

fn cmd_serve(ctx: &Ctx, a: crate::ServeArgs) -> CliResult<()> {
    let addr: std::net::SocketAddr = a
        .addr
        .parse()
        .map_err(|_| CliError::Usage(format!("--addr expects host:port, got '{}'", a.addr)))?;
    let service = Arc::new(AnnotationService::open(&a.data)?);
    ctx.say(format!(
        "serving {} sessions from {} on http://{addr}",
        service.session_ids().len(),
        a.data.display()
    ));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Error::from)?;
    rt.block_on(biascorpus_core::annotation::http::serve(service, addr))
        .map_err(Error::from)?;
    Ok(())
}

fn cmd_session_open(ctx: &Ctx, a: crate::SessionOpenArgs) -> CliResult<()> {
    let batch: Vec<CandidateItem> = read_jsonl(&a.batch)?;
    let overlap = match (a.overlap, a.overlap_count) {
        (Some(f), None) => Overlap::Fraction(f),
        (None, Some(c)) => Overlap::Count(c),
        (None, None) => Overlap::Fraction(0.2),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    let mut m = ctx.new_manifest("session open");
    m.add_input(&a.batch)?;
    let spec = SessionSpec {
        session_id: a.session_id.clone(),
        annotators: a.annotators.clone(),
        overlap,
        seed: m.stage_seed(&format!("session:{}", a.session_id)),
        round: a.round,
    };
    let service = AnnotationService::open(&a.data)?;
    let session = service.open_session(batch, &spec)?;
    service.snapshot()?;
    let summary = a.data.join(format!("session-{}.json", a.session_id));
    write_json(
        &summary,
        &serde_json::json!({
            "session_id": session.session_id,
            "round": session.round,
            "items": session.batch.len(),
            "annotators": session.annotators,
            "overlap_items": session.overlap_items,
        }),
    )?;
    m.set("session", &a.session_id)
        .set("annotators", a.annotators.join(","));
    finish(m, &summary, &[&summary])?;
    ctx.say(format!(
        "session '{}' opened: {} items, {} on the shared panel",
        session.session_id,
        session.batch.len(),
        session.overlap_items.len()
    ));
    Ok(())
}

fn cmd_session_export(ctx: &Ctx, a: crate::SessionExportArgs) -> CliResult<()> {
    let out = ctx.out_or("annotations.jsonl");
    let service = AnnotationService::open(&a.data)?;
    let mut records = match &a.session_id {
        Some(id) => service.records(id)?,
        None => service.all_records(),
    };
    records.sort_by(|x, y| {
        (&x.session_id, x.round, &x.item_id, &x.annotator_id).cmp(&(
            &y.session_id,
            y.round,
            &y.item_id,
            &y.annotator_id,
        ))
    });
    write_jsonl(&out, &records)?;
    let mut m = ctx.new_manifest("session export");
    m.set("data", a.data.display());
    if let Some(id) = &a.session_id {
        m.set("session", id);
    }
    finish(m, &out, &[&out])?;
    ctx.say(format!("{} records -> {}", records.len(), out.display()));
    Ok(())
}

fn cmd_iaa(ctx: &Ctx, a: crate::IaaArgs) -> CliResult<()> {
    let out = ctx.out_or("iaa.json");
    ctx.check_drift(&manifest_path(&out))?;
    let mut records: Vec<AnnotationRecord> = read_jsonl(&a.annotations)?;
    if let Some(round) = a.round {
        records.retain(|r| r.round == round);
    }
    let mode = match a.mode {
        IaaMode::FourWay => AgreementMode::FourWay,
        IaaMode::Binary => AgreementMode::Binary,
    };
    let report = agreement_from_records(&records, mode)?;
    write_json(&out, &report)?;
    let mut m = ctx.new_manifest("iaa");
    m.add_input(&a.annotations)?;
    m.set("mode", format!("{mode:?}"));
    finish(m, &out, &[&out])?;
    ctx.say(format!(
        "kappa = {:.4} over {} items x {} raters -> {}",
        report.kappa,
        report.n_items,
        report.n_raters,
        out.display()
    ));
    Ok(())
}

fn cmd_dataset_build(ctx: &Ctx, a: crate::DatasetBuildArgs) -> CliResult<()> {
    let out = ctx.out_or("dataset.jsonl");
    ctx.check_drift(&manifest_path(&out))?;
    let candidates: Vec<CandidateItem> = read_jsonl(&a.candidates)?;
    let records: Vec<AnnotationRecord> = read_jsonl(&a.annotations)?;
    let policy = ResolutionPolicy {
        disagreement: match a.policy {
            PolicyArg::ExpertQueue => DisagreementPolicy::ExpertQueue,
            PolicyArg::Majority => DisagreementPolicy::Majority,
        },
        expert_id: a.expert.clone(),
        max_requeue_rounds: a.max_rounds,
    };
    let outcome = resolve_labels(&candidates, &records, &policy)?;
    let pending_path = PathBuf::from(format!("{}.pending.json", out.display()));
    write_json(
        &pending_path,
        &serde_json::json!({
            "requeue": outcome.requeue,
            "expert_queue": outcome.expert_queue,
            "dropped": outcome.dropped,
        }),
    )?;
    let instances = if a.allow_pending {
        &outcome.instances[..]
    } else {
        outcome.export()?
    };
    write_jsonl(&out, instances)?;
    let mut outputs: Vec<&Path> = vec![&out, &pending_path];
    if let Some(csv_path) = &a.csv {
        let file = std::fs::File::create(csv_path).map_err(Error::from)?;
        write_csv(file, instances)?;
        outputs.push(csv_path);
    }
    let mut m = ctx.new_manifest("dataset build");
    m.add_input(&a.candidates)?;
    m.add_input(&a.annotations)?;
    m.set("policy", format!("{:?}", policy.disagreement))
        .set("expert", policy.expert_id.as_deref().unwrap_or(""))
        .set("max_requeue_rounds", policy.max_requeue_rounds);
    finish(m, &out, &outputs)?;
    ctx.say(format!(
        "{} instances -> {} ({} requeued, {} awaiting expert, {} dropped)",
        instances.len(),
        out.display(),
        outcome.requeue.len(),
        outcome.expert_queue.len(),
        outcome.dropped.len()
    ));
    Ok(())
}

fn cmd_stats(ctx: &mut Ctx, a: crate::StatsArgs) -> CliResult<()> {
    let lexicon = ctx.lexicon()?.clone();
    let dataset = load_dataset(&a.dataset, &lexicon)?;
    let stats = dataset_stats(&dataset, &lexicon);
    ctx.say(stats.render_table());
    if let Some(out) = &ctx.out {
        write_json(out, &stats)?;
        let mut m = ctx.new_manifest("stats");
        ctx.describe_lexicon(&mut m)?;
        m.add_input(&a.dataset)?;
        finish(m, out, &[out])?;
    }
    Ok(())
}

fn split_config(ctx: &Ctx, proportions: &str, stratify: bool, seed: u64) -> CliResult<SplitConfig> {
    let _ = ctx;
    let (train, val, test) = parse_proportions(proportions)?;
    SplitConfig::new(train, val, test, seed, stratify).map_err(|e| CliError::Usage(format!("--proportions: {e}")))
}

/// Writes train/val/test JSONL, the split manifest and the run manifest.
fn write_splits(
    ctx: &Ctx,
    dir: &Path,
    splits: &RegimeSplits,
    config: &SplitConfig,
    mut m: biascorpus_core::RunManifest,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    let train = dir.join("train.jsonl");
    let val = dir.join("val.jsonl");
    let test = dir.join("test.jsonl");
    let split_manifest = dir.join("split_manifest.json");
    write_jsonl(&train, &splits.train)?;
    write_jsonl(&val, &splits.val)?;
    write_jsonl(&test, &splits.test)?;
    write_json(&split_manifest, &SplitManifest::from_splits(splits, config))?;
    m.set("train", splits.train.len())
        .set("val", splits.val.len())
        .set("test", splits.test.len());
    finish(m, &split_manifest, &[&train, &val, &test, &split_manifest])?;
    ctx.say(format!(
        "train {} / val {} / test {} -> {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        dir.display()
    ));
    Ok(())
}

fn cmd_split(ctx: &mut Ctx, a: crate::SplitArgs) -> CliResult<()> {
    let dir = ctx.out_or("splits");
    ctx.check_drift(&manifest_path(dir.join("split_manifest.json")))?;
    let lexicon = ctx.lexicon()?.clone();
    let dataset = load_dataset(&a.dataset, &lexicon)?;
    let mut m = ctx.new_manifest("split");
    m.add_input(&a.dataset)?;
    let seed = m.stage_seed("split");
    let config = split_config(ctx, &a.proportions, a.stratify, seed)?;
    m.set("proportions", &a.proportions).set("stratify", a.stratify);
    let splits = split_dataset(&dataset, &config)?;
    write_splits(ctx, &dir, &splits, &config, m)
}

fn cmd_holdout(ctx: &mut Ctx, a: crate::HoldoutArgs) -> CliResult<()> {
    let dir = ctx.out_or("holdout");
    ctx.check_drift(&manifest_path(dir.join("split_manifest.json")))?;
    let lexicon = ctx.lexicon()?.clone();
    let dataset = load_dataset(&a.dataset, &lexicon)?;
    let mut m = ctx.new_manifest("holdout");
    ctx.describe_lexicon(&mut m)?;
    m.add_input(&a.dataset)?;
    let seed = m.stage_seed("holdout");
    let config = split_config(ctx, &a.proportions, a.stratify, seed)?;
    let mode = if a.append_to_test {
        HoldoutMode::AppendToTest
    } else {
        HoldoutMode::MoveToTest
    };
    let splits = holdout_rare_terms(&dataset, &lexicon, a.threshold, &config, mode)?;
    m.set("threshold", a.threshold)
        .set("mode", format!("{mode:?}"))
        .set("held_out_terms", splits.held_out_terms.len())
        .set("excluded_instances", splits.excluded_instances);
    if splits.nothing_held_out {
        log::warn!("NothingHeldOut: no term occurs {} times or fewer", a.threshold);
    }
    ctx.say(format!(
        "{} held-out terms, {} instances moved to test{}",
        splits.held_out_terms.len(),
        splits.excluded_instances,
        if splits.nothing_held_out {
            " (NothingHeldOut)"
        } else {
            ""
        }
    ));
    write_splits(ctx, &dir, &splits, &config, m)
}

fn strategy_of(s: ResampleStrategyArg) -> ResampleStrategy {
    match s {
        ResampleStrategyArg::None => ResampleStrategy::None,
        ResampleStrategyArg::Undersample => ResampleStrategy::Undersample,
        ResampleStrategyArg::Oversample => ResampleStrategy::Oversample,
        ResampleStrategyArg::Balanced => ResampleStrategy::Balanced,
    }
}

fn cmd_resample(ctx: &mut Ctx, a: crate::ResampleArgs) -> CliResult<()> {
    let out = ctx.out_or("train_resampled.jsonl");
    ctx.check_drift(&manifest_path(&out))?;
    let train: Vec<LabeledInstance> = read_jsonl(&a.train)?;
    let mut m = ctx.new_manifest("resample");
    m.add_input(&a.train)?;
    let seed = m.stage_seed("resample");
    let config = match (&a.preset, a.strategy) {
        (Some(name), _) => ResampleConfig::preset(name, seed).ok_or_else(|| {
            CliError::Usage(format!(
                "--preset must be undersample, oversample or balanced, got '{name}'"
            ))
        })?,
        (None, Some(s)) => ResampleConfig {
            strategy: strategy_of(s),
            target_biased_ratio: a.ratio.expect("clap requires --ratio"),
            target_size: a.size.expect("clap requires --size"),
            seed,
        },
        (None, None) => return Err(CliError::Usage("either --preset or --strategy is required".into())),
    };
    let resampled = resample(&train, &config)?;
    write_jsonl(&out, &resampled)?;
    let biased = resampled.iter().filter(|i| i.label.is_biased()).count();
    m.set("strategy", format!("{:?}", config.strategy))
        .set("target_biased_ratio", config.target_biased_ratio)
        .set("target_size", config.target_size);
    finish(m, &out, &[&out])?;
    ctx.say(format!(
        "{} instances ({} biased, {} not) -> {}",
        resampled.len(),
        biased,
        resampled.len() - biased,
        out.display()
    ));
    Ok(())
}

#[derive(Debug, Serialize)]
struct ItemFailure {
    item_id: String,
    error: String,
}

fn cmd_classify(ctx: &mut Ctx, a: crate::ClassifyArgs) -> CliResult<()> {
    let out = ctx.out_or("predictions.jsonl");
    ctx.check_drift(&manifest_path(&out))?;
    let lexicon = ctx.lexicon()?.clone();
    let items = load_dataset(&a.input, &lexicon)?;
    let classifier = a.adapter.build(&lexicon)?;
    let options = a.adapter.batch_options()?;
    let requests: Vec<AdapterRequest> = items.iter().map(AdapterRequest::from).collect();
    let results = classify_batch(classifier.as_ref(), &requests, &options)?;
    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    for (req, r) in requests.iter().zip(results) {
        match r {
            Ok(p) => predictions.push(p),
            Err(e) => failures.push(ItemFailure {
                item_id: req.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    write_jsonl(&out, &predictions)?;
    let mut outputs = vec![out.clone()];
    if !failures.is_empty() {
        let errors = PathBuf::from(format!("{}.errors.jsonl", out.display()));
        write_jsonl(&errors, &failures)?;
        outputs.push(errors);
    }
    let mut m = ctx.new_manifest("classify");
    m.add_input(&a.input)?;
    m.set("adapter", &a.adapter.adapter)
        .set("model_id", classifier.model_id())
        .set("threshold", options.threshold);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    finish(m, &out, &refs)?;
    let abstained = predictions.iter().filter(|p| p.abstained).count();
    ctx.say(format!(
        "{} predictions ({} abstained, {} failed) -> {}",
        predictions.len(),
        abstained,
        failures.len(),
        out.display()
    ));
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::failed(
            "InferenceError",
            format!(
                "{} of {} items failed; see {}",
                failures.len(),
                requests.len(),
                outputs[1].display()
            ),
        ))
    }
}

fn regime_of(r: RegimeArg) -> Regime {
    match r {
        RegimeArg::InDomain => Regime::InDomain,
        RegimeArg::OutOfDomain => Regime::OutOfDomain,
    }
}

fn cmd_eval(ctx: &mut Ctx, a: crate::EvalArgs) -> CliResult<()> {
    let out = ctx.out_or("eval.json");
    ctx.check_drift(&manifest_path(&out))?;
    let lexicon = ctx.lexicon()?.clone();
    let predictions: Vec<Prediction> = read_jsonl(&a.predictions)?;
    let gold = load_dataset(&a.gold, &lexicon)?;
    let policy = if a.drop_abstain {
        AbstainPolicy::Drop
    } else {
        AbstainPolicy::AsNotBiased
    };
    let run = EvalRun {
        model_id: a
            .model_id
            .clone()
            .or_else(|| predictions.first().map(|p| p.model_id.clone()))
            .unwrap_or_default(),
        regime: regime_of(a.regime),
        strategy: strategy_of(a.strategy),
        predictions,
        gold,
    };
    let report = evaluate(&run, &lexicon, policy)?;
    write_json(&out, &report)?;
    let mut m = ctx.new_manifest("eval");
    ctx.describe_lexicon(&mut m)?;
    m.add_input(&a.predictions)?;
    m.add_input(&a.gold)?;
    m.set("abstain_policy", format!("{policy:?}"));
    finish(m, &out, &[&out])?;
    let c = report.confusion;
    ctx.say(format!(
        "{}: f1_positive {:.4}  f1_macro {:.4}  f1_micro {:.4}  accuracy {:.4}  (tp {} fp {} fn {} tn {}, {} abstained)",
        report.model_id,
        report.f1_positive,
        report.f1_macro,
        report.f1_micro,
        report.accuracy,
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        report.abstain_count
    ));
    Ok(())
}

fn cmd_explain(ctx: &mut Ctx, a: crate::ExplainArgs) -> CliResult<()> {
    let out = ctx.out_or("explanations.jsonl");
    ctx.check_drift(&manifest_path(&out))?;
    let lexicon = ctx.lexicon()?.clone();
    let items = load_dataset(&a.input, &lexicon)?;
    let wanted: HashSet<&str> = a.items.iter().map(String::as_str).collect();
    let selected: Vec<&LabeledInstance> = items
        .iter()
        .filter(|i| wanted.is_empty() || wanted.contains(i.item_id.as_str()))
        .collect();
    if let Some(missing) = a.items.iter().find(|id| !items.iter().any(|i| &i.item_id == *id)) {
        return Err(CliError::failed(
            "UnknownItem",
            format!("no item '{missing}' in {}", a.input.display()),
        ));
    }
    let classifier = a.adapter.build(&lexicon)?;
    let mut m = ctx.new_manifest("explain");
    m.add_input(&a.input)?;
    let config = ExplainConfig {
        n_samples: a.samples,
        kernel_width: a.kernel_width,
        top_k: a.top_k,
        seed: m.stage_seed("explain"),
        batch_size: a.adapter.chunk_size.max(1),
    };
    let explanations = selected
        .iter()
        .map(|i| explain_instance(&i.item_id, &i.text, classifier.as_ref(), &config))
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl(&out, &explanations)?;
    let mut outputs: Vec<&Path> = vec![&out];
    if let Some(html) = &a.html {
        std::fs::write(html, render_html(&explanations)).map_err(Error::from)?;
        outputs.push(html);
    }
    m.set("adapter", &a.adapter.adapter)
        .set("n_samples", config.n_samples)
        .set("top_k", config.top_k);
    finish(m, &out, &outputs)?;
    ctx.say(format!("{} explanations -> {}", explanations.len(), out.display()));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RunSpec {
    model_id: String,
    regime: Regime,
    #[serde(default = "no_strategy")]
    strategy: ResampleStrategy,
    predictions: PathBuf,
    gold: PathBuf,
}

fn no_strategy() -> ResampleStrategy {
    ResampleStrategy::None
}

fn cmd_report(ctx: &mut Ctx, a: crate::ReportArgs) -> CliResult<()> {
    let out = ctx.out_or("report.json");
    ctx.check_drift(&manifest_path(&out))?;
    let lexicon = ctx.lexicon()?.clone();
    let specs: Vec<RunSpec> = read_json(&a.runs)?;
    let base = a.runs.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut m = ctx.new_manifest("report");
    ctx.describe_lexicon(&mut m)?;
    m.add_input(&a.runs)?;
    let mut runs = Vec::new();
    let mut seen = BTreeMap::new();
    for s in specs {
        let p = base.join(&s.predictions);
        let g = base.join(&s.gold);
        for path in [&p, &g] {
            if seen.insert(path.clone(), ()).is_none() {
                m.add_input(path)?;
            }
        }
        runs.push(EvalRun {
            model_id: s.model_id,
            regime: s.regime,
            strategy: s.strategy,
            predictions: read_jsonl(&p)?,
            gold: load_dataset(&g, &lexicon)?,
        });
    }
    let policy = if a.drop_abstain {
        AbstainPolicy::Drop
    } else {
        AbstainPolicy::AsNotBiased
    };
    let bundle = build_report(&runs, &lexicon, policy);
    write_json(&out, &bundle)?;
    let stem = out.with_extension("");
    let models_csv = PathBuf::from(format!("{}_models.csv", stem.display()));
    let strategies_csv = PathBuf::from(format!("{}_strategies.csv", stem.display()));
    std::fs::write(&models_csv, bundle.models_by_regime.to_csv()).map_err(Error::from)?;
    std::fs::write(&strategies_csv, bundle.strategies_by_regime.to_csv()).map_err(Error::from)?;
    m.set("runs", runs.len()).set("failed", bundle.failures.len());
    finish(m, &out, &[&out, &models_csv, &strategies_csv])?;
    ctx.say(bundle.models_by_regime.to_text());
    ctx.say(bundle.strategies_by_regime.to_text());
    for f in &bundle.failures {
        eprintln!(
            "run {} ({:?}, {:?}) failed: {}",
            f.model_id, f.regime, f.strategy, f.error
        );
    }
    if bundle.ok() {
        Ok(())
    } else {
        Err(CliError::failed(
            "RunFailed",
            format!("{} of {} runs failed", bundle.failures.len(), runs.len()),
        ))
    }
}
