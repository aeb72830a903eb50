//! `tribind` command-line interface.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config or input),
//! 2 runtime failure (I/O, non-finite training, failed selfcheck).

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use tribind::data::{
    generate_demographics, generate_ecg_report, generate_synthetic, label_text, load_dataset, make_prompt,
    save_dataset, class_prompt_pool, DemographicFields, Dataset, LabelOutcome, LabelRuleSet, SyntheticConfig,
    ECG_PROMPT_TEMPLATE,
};
use tribind::downstream::{fusion_samples, fit_fusion, FusionConfig, FusionMode, OutcomeTarget};
use tribind::eval::{
    self, cross_modal_accuracy, cross_modal_retrieval, few_shot_probe, modality_to_text, zero_shot_classify,
    CrossModalMode, EvalReport, ZeroShotSpec,
};
use tribind::manifest::{manifest_path_for, sha256_file, RunManifest};
use tribind::model::{Modality, Model};
use tribind::train::{self, TrainConfig, TrainOutputs};
use tribind::Error;

#[derive(Parser)]
#[command(name = "tribind", version, about = "Tri-modality contrastive binding lab")]
struct Cli {
    /// Worker threads (also TRIBIND_THREADS); defaults to all cores.
    #[arg(long, global = true, env = "TRIBIND_THREADS")]
    threads: Option<usize>,
    /// Manifest path; defaults to a location next to the primary output.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tri-modal dataset.
    GenData(GenDataArgs),
    /// Train encoders with TMCL (and EMCL unless disabled).
    Train(TrainArgs),
    /// Modality-to-text and cross-modal retrieval recall.
    EvalRetrieval(EvalRetrievalArgs),
    /// Zero-shot classification against class prompts.
    EvalZeroshot(EvalZeroshotArgs),
    /// Few-shot linear probing over random support sets.
    EvalFewshot(EvalFewshotArgs),
    /// Classify one modality using labeled support of the other.
    EvalCrossmodal(EvalCrossmodalArgs),
    /// Frozen-embedding fusion classifier for a binary outcome.
    Downstream(DownstreamArgs),
    /// Rule-based labeling of report text.
    LabelText(LabelTextArgs),
    /// Render prompts, reports or demographics from templates.
    MakePrompts(MakePromptsArgs),
    /// Write embeddings as CSV for external visualization.
    ExportEmbeddings(ExportArgs),
    /// Run the gradient and loss-identity suite.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    pairing_rate: Option<f64>,
    #[arg(long)]
    duplicate_rate: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Validation dataset for best-checkpoint selection.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, overrides_with = "no_emcl")]
    emcl: bool,
    #[arg(long, overrides_with = "emcl")]
    no_emcl: bool,
    #[arg(long)]
    augment_noise_sigma: Option<f64>,
    #[arg(long)]
    pair_cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelData {
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report file; metrics merge into it when it already exists.
    #[arg(long)]
    out: PathBuf,
    /// Dataset key in the report; defaults to the data file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct EvalRetrievalArgs {
    #[command(flatten)]
    io: ModelData,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 5, 10])]
    ks: Vec<usize>,
}

#[derive(Args)]
struct EvalZeroshotArgs {
    #[command(flatten)]
    io: ModelData,
    /// JSON file: array of per-class prompt arrays.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Prompts generated per class when no prompt file is given.
    #[arg(long, default_value_t = 20)]
    pool_size: usize,
    /// Sample this many prompts per class once per run.
    #[arg(long)]
    prompts_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalFewshotArgs {
    #[command(flatten)]
    io: ModelData,
    #[arg(long, default_value = "image")]
    modality: Modality,
    #[arg(long, value_delimiter = ',', default_values_t = eval::FEW_SHOT_KS.to_vec())]
    shots: Vec<usize>,
    #[arg(long, default_value_t = eval::FEW_SHOT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Permute labels first (chance-level control).
    #[arg(long)]
    shuffle_labels: bool,
}

#[derive(Args)]
struct EvalCrossmodalArgs {
    #[command(flatten)]
    io: ModelData,
    /// Labeled support set (the opposite modality is used as support).
    #[arg(long)]
    support_data: PathBuf,
    #[arg(long, default_value = "prototype")]
    mode: CrossModalMode,
}

#[derive(Args)]
struct DownstreamArgs {
    #[command(flatten)]
    io: ModelData,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this mode; both modes run by default.
    #[arg(long)]
    mode: Option<FusionMode>,
    #[arg(long)]
    target: Option<OutcomeTarget>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    proj_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shuffle_labels: bool,
}

#[derive(Args)]
struct LabelTextArgs {
    /// Text to label (repeatable).
    #[arg(long)]
    text: Vec<String>,
    /// File with one text per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Rule-set JSON; the bundled rules by default.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// JSON-lines output; stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MakePromptsArgs {
    /// Label to substitute into the template (repeatable).
    #[arg(long)]
    label: Vec<String>,
    #[arg(long, default_value = ECG_PROMPT_TEMPLATE)]
    template: String,
    /// Report findings, in order, rendered as one report (repeatable).
    #[arg(long)]
    report: Vec<String>,
    #[arg(long)]
    gender: Option<String>,
    #[arg(long)]
    age: Option<String>,
    #[arg(long)]
    admission_type: Option<String>,
    #[arg(long)]
    location: Option<String>,
    /// Output file, one line per rendered text; stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit code plus message.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_validation() { 1 } else { 2 }, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("input file not found: {}", path.display())))
    }
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    require_file(path)?;
    Ok(load_dataset(path)?)
}

fn read_model(path: &Path) -> CliResult<Model> {
    require_file(path)?;
    Ok(Model::load(path)?)
}

/// Defaults, overlaid by the config file's fields.
fn base_config<T: Default + Serialize + DeserializeOwned>(path: Option<&Path>) -> CliResult<T> {
    let Some(p) = path else { return Ok(T::default()) };
    require_file(p)?;
    let text = std::fs::read_to_string(p)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn dataset_name(io: &ModelData) -> String {
    io.name.clone().unwrap_or_else(|| {
        io.data.file_stem().map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned())
    })
}

struct Ctx {
    manifest: Option<PathBuf>,
}

impl Ctx {
    fn write(&self, m: RunManifest, default: Option<PathBuf>) -> CliResult {
        if let Some(p) = self.manifest.clone().or(default) {
            m.finish(&p)?;
        }
        Ok(())
    }
}

fn with_hash(mut m: RunManifest, data: &Path) -> CliResult<RunManifest> {
    m.dataset_hash = Some(sha256_file(data)?);
    Ok(m)
}

fn gen_data(ctx: &Ctx, a: GenDataArgs) -> CliResult {
    let mut cfg: SyntheticConfig = base_config(a.config.as_deref())?;
    set(&mut cfg.num_records, a.records);
    set(&mut cfg.num_classes, a.classes);
    set(&mut cfg.pairing_rate, a.pairing_rate);
    set(&mut cfg.duplicate_text_rate, a.duplicate_rate);
    set(&mut cfg.noise_sigma, a.noise_sigma);
    set(&mut cfg.seed, a.seed);
    let mut m = RunManifest::start("gen-data", json!(cfg), Some(cfg.seed));
    let ds = generate_synthetic(&cfg)?;
    save_dataset(&ds, &a.out)?;
    m.dataset_hash = Some(sha256_file(&a.out)?);
    m.outputs.push(a.out.clone());
    let pairable = ds.records.iter().filter(|r| r.has_both()).count();
    println!("wrote {} records ({pairable} with both payloads) to {}", ds.len(), a.out.display());
    ctx.write(m, Some(manifest_path_for(&a.out)))
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> CliResult {
    let mut cfg: TrainConfig = base_config(a.config.as_deref())?;
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.lr_max, a.lr_max);
    set(&mut cfg.lr_min, a.lr_min);
    set(&mut cfg.weight_decay, a.weight_decay);
    set(&mut cfg.tau, a.tau);
    set(&mut cfg.augment_noise_sigma, a.augment_noise_sigma);
    set(&mut cfg.seed, a.seed);
    if a.pair_cap.is_some() {
        cfg.pair_cap = a.pair_cap;
    }
    if a.emcl {
        cfg.emcl_enabled = true;
    }
    if a.no_emcl {
        cfg.emcl_enabled = false;
    }
    cfg.validate()?;
    let ds = read_dataset(&a.data)?;
    let val = a.val_data.as_deref().map(read_dataset).transpose()?;
    let m = with_hash(RunManifest::start("train", json!(cfg), Some(cfg.seed)), &a.data)?;
    let model = Model::for_dataset(&ds, cfg.seed)?;
    let out = train::train(&ds, val.as_ref(), model, &cfg, TrainOutputs { dir: Some(&a.out) })?;
    let last = out.state.history.last().expect("at least one step");
    println!(
        "trained {} steps; final loss {:.6}; best epoch {}",
        out.state.step, last.loss, out.best_epoch
    );
    let mut m = m;
    for f in [train::LAST_CHECKPOINT, train::BEST_CHECKPOINT, train::TRAIN_LOG] {
        m.outputs.push(a.out.join(f));
    }
    ctx.write(m, Some(a.out.join("manifest.json")))
}

fn modality_present(ds: &Dataset, m: Modality) -> bool {
    ds.records.iter().any(|r| match m {
        Modality::Image => r.image_payload.is_some(),
        Modality::Sequence => r.sequence_payload.is_some(),
        Modality::Text => true,
    })
}

fn finish_report(ctx: &Ctx, report: &EvalReport, mut m: RunManifest, out: &Path) -> CliResult {
    report.append_to(out)?;
    println!("{}", serde_json::to_string_pretty(report).map_err(Error::from)?);
    m.outputs.push(out.to_path_buf());
    ctx.write(m, Some(manifest_path_for(out)))
}

fn eval_retrieval(ctx: &Ctx, a: EvalRetrievalArgs) -> CliResult {
    let model = read_model(&a.io.model)?;
    let ds = read_dataset(&a.io.data)?;
    let m = with_hash(RunManifest::start("eval-retrieval", json!({"ks": a.ks, "model": a.io.model}), None), &a.io.data)?;
    let name = dataset_name(&a.io);
    let mut report = EvalReport::default();
    let mut total = 0.0;
    for (task, modality) in [("retrieval_image_to_text", Modality::Image), ("retrieval_sequence_to_text", Modality::Sequence)] {
        if modality_present(&ds, modality) {
            let r = modality_to_text(&model, &ds, modality, &a.ks)?;
            total += r.rsum;
            report.insert_retrieval(task, &name, &r);
        }
    }
    match cross_modal_retrieval(&model, &ds, &a.ks) {
        Ok((i2s, s2i)) => {
            total += i2s.rsum + s2i.rsum;
            report.insert_retrieval("retrieval_image_to_sequence", &name, &i2s);
            report.insert_retrieval("retrieval_sequence_to_image", &name, &s2i);
        }
        Err(Error::InvalidConfig(_)) => {}
        Err(e) => return Err(e.into()),
    }
    report.insert("retrieval_total", &name, "RSUM", total);
    finish_report(ctx, &report, m, &a.io.out)
}

fn eval_zeroshot(ctx: &Ctx, a: EvalZeroshotArgs) -> CliResult {
    let model = read_model(&a.io.model)?;
    let ds = read_dataset(&a.io.data)?;
    let prompts: Vec<Vec<String>> = match &a.prompts {
        Some(p) => {
            require_file(p)?;
            serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| invalid(format!("prompts: {e}")))?
        }
        None => (0..ds.meta.num_classes()).map(|c| class_prompt_pool(c, a.pool_size)).collect(),
    };
    let spec = ZeroShotSpec { prompts, prompts_per_class_used: a.prompts_per_class };
    spec.validate()?;
    if spec.prompts.len() != ds.meta.num_classes() {
        return Err(invalid(format!("{} prompt classes for {} dataset classes", spec.prompts.len(), ds.meta.num_classes())));
    }
    let m = with_hash(RunManifest::start("eval-zeroshot", json!({"spec": spec, "seed": a.seed}), Some(a.seed)), &a.io.data)?;
    let name = dataset_name(&a.io);
    let mut report = EvalReport::default();
    let records: Vec<_> = ds.records.iter().collect();
    for modality in [Modality::Image, Modality::Sequence] {
        let (idx, emb) = model.embed_records(&records, modality)?;
        if idx.is_empty() {
            continue;
        }
        let preds = zero_shot_classify(&emb, &spec, &model, a.seed)?;
        let labels: Vec<usize> = idx.iter().map(|&i| ds.records[i].class_id).collect();
        let acc = eval::balanced_accuracy(&preds, &labels)?;
        report.insert(&format!("zeroshot_{}", modality.as_str()), &name, "balanced_accuracy", acc);
    }
    finish_report(ctx, &report, m, &a.io.out)
}

fn eval_fewshot(ctx: &Ctx, a: EvalFewshotArgs) -> CliResult {
    use rand::seq::SliceRandom;
    let model = read_model(&a.io.model)?;
    let ds = read_dataset(&a.io.data)?;
    let config = json!({"modality": a.modality, "shots": a.shots, "repeats": a.repeats, "seed": a.seed, "shuffle_labels": a.shuffle_labels});
    let m = with_hash(RunManifest::start("eval-fewshot", config, Some(a.seed)), &a.io.data)?;
    let records: Vec<_> = ds.records.iter().collect();
    let (idx, emb) = model.embed_records(&records, a.modality)?;
    let mut labels: Vec<usize> = idx.iter().map(|&i| ds.records[i].class_id).collect();
    if a.shuffle_labels {
        labels.shuffle(&mut tribind::rng::stream(a.seed, "label-shuffle"));
    }
    let name = dataset_name(&a.io);
    let task = format!("fewshot_{}", a.modality.as_str());
    let mut report = EvalReport::default();
    for &k in &a.shots {
        let r = few_shot_probe(&emb, &labels, k, a.repeats, a.seed)?;
        report.insert(&task, &name, &format!("balanced_accuracy_k{k}"), r.mean);
        report.insert(&task, &name, &format!("std_k{k}"), r.std);
    }
    finish_report(ctx, &report, m, &a.io.out)
}

fn eval_crossmodal(ctx: &Ctx, a: EvalCrossmodalArgs) -> CliResult {
    let model = read_model(&a.io.model)?;
    let ds = read_dataset(&a.io.data)?;
    let support = read_dataset(&a.support_data)?;
    let m = with_hash(RunManifest::start("eval-crossmodal", json!({"mode": a.mode}), None), &a.io.data)?;
    let name = dataset_name(&a.io);
    let mut report = EvalReport::default();
    for q in [Modality::Image, Modality::Sequence] {
        if modality_present(&ds, q) {
            let acc = cross_modal_accuracy(&model, &support, &ds, q, a.mode)?;
            report.insert(&format!("crossmodal_{}_query", q.as_str()), &name, "balanced_accuracy", acc);
        }
    }
    finish_report(ctx, &report, m, &a.io.out)
}

fn downstream(ctx: &Ctx, a: DownstreamArgs) -> CliResult {
    use rand::seq::SliceRandom;
    let mut cfg: FusionConfig = base_config(a.config.as_deref())?;
    set(&mut cfg.target, a.target);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.hidden_dim, a.hidden_dim);
    set(&mut cfg.seed, a.seed);
    if a.proj_dim.is_some() {
        cfg.proj_dim = a.proj_dim;
    }
    cfg.validate()?;
    let model = read_model(&a.io.model)?;
    let ds = read_dataset(&a.io.data)?;
    let modes = match a.mode {
        Some(mode) => vec![mode],
        None => vec![FusionMode::TextOnly, FusionMode::TextPlusEmbeddings],
    };
    let config = json!({"fusion": cfg, "modes": modes, "shuffle_labels": a.shuffle_labels});
    let m = with_hash(RunManifest::start("downstream", config, Some(cfg.seed)), &a.io.data)?;
    let (samples, mut labels) = fusion_samples(&ds, &model, cfg.target)?;
    if a.shuffle_labels {
        labels.shuffle(&mut tribind::rng::stream(cfg.seed, "label-shuffle"));
    }
    let d = model.embed_dim();
    let name = format!("{}/{}", dataset_name(&a.io), cfg.target.as_str());
    let mut report = EvalReport::default();
    for mode in modes {
        let out = fit_fusion(&samples, &labels, d, d, &FusionConfig { mode, ..cfg.clone() })?;
        let key = match mode {
            FusionMode::TextOnly => "text_only",
            FusionMode::TextPlusEmbeddings => "text_plus_embeddings",
        };
        report.insert("downstream", &name, &format!("{key}_balanced_accuracy"), out.heldout_balanced_accuracy);
        report.insert("downstream", &name, "heldout_size", out.heldout_size as f64);
    }
    finish_report(ctx, &report, m, &a.io.out)
}

fn emit_lines(lines: &[String], out: Option<&Path>) -> CliResult {
    let mut text = lines.join("\n");
    text.push('\n');
    match out {
        Some(p) => tribind::io::write_atomic(p, text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn label_text_cmd(ctx: &Ctx, a: LabelTextArgs) -> CliResult {
    let rules = match &a.rules {
        Some(p) => {
            require_file(p)?;
            LabelRuleSet::load(p)?
        }
        None => LabelRuleSet::default(),
    };
    let mut texts = a.text.clone();
    if let Some(p) = &a.input {
        require_file(p)?;
        for line in std::io::BufReader::new(std::fs::File::open(p)?).lines() {
            texts.push(line?);
        }
    }
    if texts.is_empty() {
        return Err(invalid("no text given; use --text or --input"));
    }
    let m = RunManifest::start("label-text", json!({"rules": rules, "inputs": texts.len()}), None);
    let lines: Vec<String> = texts
        .iter()
        .map(|t| {
            let v: Value = match label_text(t, &rules) {
                LabelOutcome::Class(c) => json!({"text": t, "label": rules.class_name(c)}),
                LabelOutcome::Excluded(reason) => json!({"text": t, "excluded": reason}),
            };
            v.to_string()
        })
        .collect();
    emit_lines(&lines, a.out.as_deref())?;
    let mut m = m;
    m.outputs.extend(a.out.clone());
    ctx.write(m, a.out.as_deref().map(manifest_path_for))
}

fn make_prompts(ctx: &Ctx, a: MakePromptsArgs) -> CliResult {
    let mut lines = Vec::new();
    for label in &a.label {
        lines.push(make_prompt(&a.template, label)?);
    }
    if !a.report.is_empty() {
        lines.push(generate_ecg_report(&a.report)?);
    }
    let demo = [&a.gender, &a.age, &a.admission_type, &a.location];
    if demo.iter().any(|f| f.is_some()) {
        let field = |v: &Option<String>, name: &'static str| v.clone().ok_or(Error::MissingField(name));
        lines.push(generate_demographics(&DemographicFields {
            gender: field(&a.gender, "gender")?,
            anchor_age: field(&a.age, "anchor_age")?,
            admission_type: field(&a.admission_type, "admission_type")?,
            admission_location: field(&a.location, "admission_location")?,
        })?);
    }
    if lines.is_empty() {
        return Err(invalid("nothing to render; use --label, --report or the demographic flags"));
    }
    let config = json!({"template": a.template, "labels": a.label, "report": a.report,
        "demographics": {"gender": a.gender, "anchor_age": a.age, "admission_type": a.admission_type, "admission_location": a.location}});
    let mut m = RunManifest::start("make-prompts", config, None);
    emit_lines(&lines, a.out.as_deref())?;
    m.outputs.extend(a.out.clone());
    ctx.write(m, a.out.as_deref().map(manifest_path_for))
}

fn export(ctx: &Ctx, a: ExportArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let ds = read_dataset(&a.data)?;
    let mut m = with_hash(RunManifest::start("export-embeddings", json!({"model": a.model}), None), &a.data)?;
    let rows = eval::export_embeddings(&ds, &model, &a.out)?;
    println!("wrote {rows} embedding rows to {}", a.out.display());
    m.outputs.push(a.out.clone());
    ctx.write(m, Some(manifest_path_for(&a.out)))
}

fn selfcheck(ctx: &Ctx, a: SelfcheckArgs) -> CliResult {
    let mut m = RunManifest::start("selfcheck", json!({"seed": a.seed}), Some(a.seed));
    let results = tribind::selfcheck::run_all(a.seed);
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if let Some(p) = &a.out {
        let s = serde_json::to_string_pretty(&results).map_err(Error::from)?;
        tribind::io::write_atomic(p, s.as_bytes())?;
        m.outputs.push(p.clone());
    }
    ctx.write(m, a.out.as_deref().map(manifest_path_for))?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure { code: 2, message: format!("{failed} selfcheck(s) failed") });
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 2, message: e.to_string() })?;
    }
    let ctx = Ctx { manifest: cli.manifest };
    match cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::EvalRetrieval(a) => eval_retrieval(&ctx, a),
        Command::EvalZeroshot(a) => eval_zeroshot(&ctx, a),
        Command::EvalFewshot(a) => eval_fewshot(&ctx, a),
        Command::EvalCrossmodal(a) => eval_crossmodal(&ctx, a),
        Command::Downstream(a) => downstream(&ctx, a),
        Command::LabelText(a) => label_text_cmd(&ctx, a),
        Command::MakePrompts(a) => make_prompts(&ctx, a),
        Command::ExportEmbeddings(a) => export(&ctx, a),
        Command::Selfcheck(a) => selfcheck(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
