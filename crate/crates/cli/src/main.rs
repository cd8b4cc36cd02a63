//! `snls`: synthesize data, pre-train, evaluate and adapt sensor-language models.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use snls::datapipe::{load_csv, synth, synth_generate, write_csv, Dataset, DomainShiftSpec, SynthSpec};
use snls::encoders::EmbeddingTable;
use snls::harness::{
    fewshot_svg, load_checkpoint, per_class_svg, run_retrieval_eval, run_standard_eval, run_unseen_eval, save_checkpoint, self_gallery, split_by_users,
    supervised_baseline, text_gallery, unit_from_f1, EvalReport, ProtocolOptions, TextSource, TrainConfig, UnseenGroupPlan,
};
use snls::inference::{adapt_projections, fewshot_sweep, frozen_features, score_features, GalleryIndex};
use snls::prompts::{load_corpus, load_knowledge, KnowledgeMode, PromptSet};

#[derive(Parser)]
#[command(name = "snls", version, about = "Sensor-language contrastive learning for activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic accelerometer CSV (and optional knowledge JSON).
    Synth(SynthArgs),
    /// Pre-train on a CSV; writes `model.ckpt` and `curves.json` into `--out`.
    Pretrain(PretrainArgs),
    /// User-disjoint k-fold zero-shot evaluation.
    EvalStandard(EvalArgs),
    /// Held-out activity groups, classified zero-shot against group classes only.
    EvalUnseen(UnseenArgs),
    /// Adapt the projection heads of a checkpoint on target data.
    Adapt(AdaptArgs),
    /// Few-shot adaptation sweep over shot budgets.
    Fewshot(FewshotArgs),
    /// Sensor-to-gallery retrieval with recall@k.
    Retrieve(RetrieveArgs),
    /// Supervised convolutional classifier under the fold protocol.
    Baseline(BaselineArgs),
    /// Print a report JSON as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    users: usize,
    /// Windows per user and class.
    #[arg(long, default_value_t = 5)]
    windows_per_user: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gain applied to every channel.
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    /// Channel permutation such as `1,2,0`.
    #[arg(long, value_delimiter = ',')]
    permute: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    bias: Option<Vec<f64>>,
    #[arg(long, default_value = "u")]
    user_prefix: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write body-part and movement knowledge for the generated classes.
    #[arg(long)]
    knowledge_out: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    /// TrainConfig JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Template JSON replacing the shipped set.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Knowledge JSON; the config's `knowledge` mode applies (default both).
    #[arg(long)]
    knowledge: Option<PathBuf>,
    /// Corpus JSON of activity -> sentences.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Precomputed sentence table (SNLS-EMB) used instead of the hash encoder.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Share of users held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Pick the template with the best validation macro-F1 in each fold.
    #[arg(long)]
    select_template: bool,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-class F1 SVGs.
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct UnseenArgs {
    #[command(flatten)]
    common: Common,
    /// Plan JSON (`{"groups": [[...], ...]}`).
    #[arg(long, conflicts_with = "groups")]
    plan: Option<PathBuf>,
    /// Number of round-robin groups built from the dataset's activities.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    select_template: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct TargetArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Share of target users used for testing; the same share of the rest validates.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Output directory for `adapted.ckpt` and `report.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FewshotArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,25,50,100")]
    shots: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Query windows CSV.
    #[arg(long)]
    data: PathBuf,
    /// Gallery file (SNLS-GAL); omit to use `--gallery-kind`.
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Built-in gallery when no file is given: `self` or `text`.
    #[arg(long, default_value = "text")]
    gallery_kind: String,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.chain().any(|c| c.downcast_ref::<snls::Error>().is_some_and(snls::Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth_cmd(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::EvalStandard(a) => eval_standard_cmd(a),
        Command::EvalUnseen(a) => eval_unseen_cmd(a),
        Command::Adapt(a) => adapt_cmd(a),
        Command::Fewshot(a) => fewshot_cmd(a),
        Command::Retrieve(a) => retrieve_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::from_json(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let series = load_csv(path).with_context(|| format!("reading {}", path.display()))?;
    let ds = Dataset::from_series(&series)?;
    if ds.is_empty() {
        return Err(snls::Error::Argument(format!("{} yields no windows", path.display())).into());
    }
    Ok(ds)
}

fn load_prompts(common: &Common, config: &TrainConfig) -> Result<PromptSet> {
    let mut set = match &common.templates {
        Some(p) => PromptSet::load_templates(p).with_context(|| format!("templates {}", p.display()))?,
        None => PromptSet::shipped(),
    };
    if let Some(p) = &common.knowledge {
        let mode = config.knowledge.unwrap_or(KnowledgeMode::Both);
        set = set.with_knowledge(load_knowledge(p).with_context(|| format!("knowledge {}", p.display()))?, mode)?;
    }
    if let Some(p) = &common.corpus {
        set = set.with_corpus(load_corpus(p).with_context(|| format!("corpus {}", p.display()))?)?;
    }
    Ok(set)
}

fn load_table(common: &Common) -> Result<Option<EmbeddingTable>> {
    common.table.as_ref().map(|p| EmbeddingTable::load(p).map_err(Into::into)).transpose()
}

fn text_source(table: &Option<EmbeddingTable>) -> TextSource<'_> {
    table.as_ref().map_or(TextSource::Hash, TextSource::Table)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, report.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    println!("{}: mean macro-F1 {}", report.kind, fmt_opt(report.mean_macro_f1));
    Ok(())
}

fn write_unit_plots(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, u) in report.units.iter().enumerate() {
        if !u.per_class_f1.is_empty() {
            std::fs::write(dir.join(format!("{}_{i}_per_class.svg", report.kind)), per_class_svg(&u.per_class_f1, &format!("{} per-class F1", u.name)))?;
        }
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let permutation = match a.permute.as_deref() {
        Some(&[x, y, z]) => [x, y, z],
        Some(_) => bail!(snls::Error::Argument("--permute takes three channel indices".into())),
        None => [0, 1, 2],
    };
    let bias = match a.bias.as_deref() {
        Some(&[x, y, z]) => [x, y, z],
        Some(_) => bail!(snls::Error::Argument("--bias takes three values".into())),
        None => [0.0; 3],
    };
    let mut spec =
        SynthSpec::new(a.classes, a.users, a.windows_per_user, a.seed).with_noise(a.noise).with_shift(DomainShiftSpec { gain: a.gain, permutation, bias });
    spec.user_prefix = a.user_prefix;
    let series = synth_generate(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_csv(&series, std::io::BufWriter::new(file))?;
    if let Some(k) = a.knowledge_out {
        write_json(&k, &synth::synth_knowledge(a.classes))?;
    }
    println!("wrote {} recordings to {}", series.len(), a.out.display());
    Ok(())
}

fn pretrain_cmd(a: PretrainArgs) -> Result<()> {
    let config = load_config(a.common.config.as_deref())?;
    let ds = load_dataset(&a.common.data)?;
    let prompts = load_prompts(&a.common, &config)?;
    let table = load_table(&a.common)?;
    let (train, val) = split_by_users(&ds.windows, a.val_fraction, config.seed)?;
    let mut model = snls::harness::build_model(&config, text_source(&table), config.seed);
    let curves = snls::harness::pretrain(&config, &train, &val, &prompts, &mut model)?;
    std::fs::create_dir_all(&a.out)?;
    save_checkpoint(&model, Some(&config), a.out.join("model.ckpt"))?;
    write_json(&a.out.join("curves.json"), &curves)?;
    println!(
        "trained {} epochs, best validation loss {} at epoch {}",
        curves.train_loss.len(),
        fmt_opt(curves.best_val_loss),
        curves.best_epoch.map_or("-".into(), |e| e.to_string())
    );
    Ok(())
}

fn eval_standard_cmd(a: EvalArgs) -> Result<()> {
    let config = load_config(a.common.config.as_deref())?;
    let ds = load_dataset(&a.common.data)?;
    let prompts = load_prompts(&a.common, &config)?;
    let table = load_table(&a.common)?;
    let (report, _) = run_standard_eval(&ds, &prompts, text_source(&table), &config, ProtocolOptions { select_template: a.select_template })?;
    write_report(&a.out, &report)?;
    if let Some(dir) = &a.plots {
        write_unit_plots(dir, &report)?;
    }
    Ok(())
}

fn eval_unseen_cmd(a: UnseenArgs) -> Result<()> {
    let config = load_config(a.common.config.as_deref())?;
    let ds = load_dataset(&a.common.data)?;
    let prompts = load_prompts(&a.common, &config)?;
    let table = load_table(&a.common)?;
    let plan: UnseenGroupPlan = match (&a.plan, a.groups) {
        (Some(p), _) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(snls::Error::from)?,
        (None, Some(k)) => UnseenGroupPlan::round_robin(&ds.activities(), k, config.seed)?,
        (None, None) => bail!(snls::Error::Argument("pass --plan or --groups".into())),
    };
    let report = run_unseen_eval(&ds, &plan, &prompts, text_source(&table), &config, ProtocolOptions { select_template: a.select_template })?;
    write_report(&a.out, &report)?;
    if let Some(dir) = &a.plots {
        write_unit_plots(dir, &report)?;
    }
    Ok(())
}

struct Target {
    config: TrainConfig,
    prompts: PromptSet,
    model: snls::model::NlsModel<f32>,
    train: Vec<snls::datapipe::SensorWindow>,
    val: Vec<snls::datapipe::SensorWindow>,
    test: Vec<snls::datapipe::SensorWindow>,
    classes: Vec<String>,
    data_hash: String,
}

fn load_target(t: &TargetArgs) -> Result<Target> {
    let config = load_config(t.common.config.as_deref())?;
    let ds = load_dataset(&t.common.data)?;
    let prompts = load_prompts(&t.common, &config)?;
    if t.common.table.is_some() {
        bail!(snls::Error::Argument("--table is not used here; the checkpoint carries its text provider".into()));
    }
    let model = load_checkpoint(&t.checkpoint)?.model;
    let (rest, test) = split_by_users(&ds.windows, t.test_fraction, config.seed)?;
    let (train, val) = split_by_users(&rest, t.test_fraction / (1.0 - t.test_fraction).max(1e-9), config.seed ^ 1)?;
    Ok(Target { classes: ds.activities(), data_hash: ds.content_hash(), config, prompts, model, train, val, test })
}

fn adapt_cmd(a: AdaptArgs) -> Result<()> {
    let mut t = load_target(&a.target)?;
    let test = frozen_features(&t.model, &t.test)?;
    let before = score_features(&t.model, &test, &t.prompts, &t.classes, &t.config)?;
    let curves = adapt_projections(&mut t.model, &t.train, &t.val, &t.prompts, &t.config)?;
    let after = score_features(&t.model, &test, &t.prompts, &t.classes, &t.config)?;
    std::fs::create_dir_all(&a.out)?;
    save_checkpoint(&t.model, Some(&t.config), a.out.join("adapted.ckpt"))?;
    let hash = snls::harness::input_hash(&t.config, &t.data_hash, &["adapt", &checkpoint_hash(&a.target.checkpoint)?])?;
    let mut report = EvalReport::new("adapt", &t.config, hash, vec![unit_from_f1("zero-shot", before), unit_from_f1("adapted", after)]);
    report.notes.push(format!("heads adapted for {} epochs; best epoch {:?}", curves.train_loss.len(), curves.best_epoch));
    write_report(&a.out.join("report.json"), &report)
}

fn checkpoint_hash(path: &Path) -> Result<String> {
    Ok(snls::harness::git_style_hash(&std::fs::read(path)?))
}

fn fewshot_cmd(a: FewshotArgs) -> Result<()> {
    let t = load_target(&a.target)?;
    let sweep = fewshot_sweep(&t.model, &t.train, &t.val, &t.test, &t.prompts, &t.config, &a.shots, a.runs, t.config.seed)?;
    let shots: Vec<String> = a.shots.iter().map(usize::to_string).collect();
    let hash =
        snls::harness::input_hash(&t.config, &t.data_hash, &["fewshot", &checkpoint_hash(&a.target.checkpoint)?, &shots.join(","), &a.runs.to_string()])?;
    let mut report = EvalReport::new("fewshot", &t.config, hash, Vec::new());
    for l in &sweep.levels {
        match (l.mean, l.std) {
            (Some(m), Some(s)) => println!("{:>4} shots: {m:.4} ± {s:.4}", l.shots),
            _ => println!("{:>4} shots: skipped ({})", l.shots, l.warning.as_deref().unwrap_or("insufficient data")),
        }
    }
    if let Some(dir) = &a.plots {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("fewshot.svg"), fewshot_svg(&sweep, "few-shot adaptation"))?;
    }
    report.fewshot = Some(sweep);
    write_report(&a.out, &report)
}

fn retrieve_cmd(a: RetrieveArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let config = ckpt.train_config.clone().unwrap_or_default();
    let ds = load_dataset(&a.data)?;
    let gallery = match (&a.gallery, a.gallery_kind.as_str()) {
        (Some(p), _) => GalleryIndex::load(p)?,
        (None, "self") => self_gallery(&ckpt.model, &ds.windows)?,
        (None, "text") => {
            let prompts = match &a.templates {
                Some(p) => PromptSet::load_templates(p)?,
                None => PromptSet::shipped(),
            };
            text_gallery(&ckpt.model, &ds.windows, &prompts)?
        }
        (None, other) => bail!(snls::Error::Argument(format!("unknown gallery kind `{other}` (use self or text)"))),
    };
    let summary = run_retrieval_eval(&ckpt.model, &gallery, &ds.windows, a.k)?;
    let hash = snls::harness::input_hash(&config, &ds.content_hash(), &["retrieval", &checkpoint_hash(&a.checkpoint)?, &a.k.to_string()])?;
    let mut report = EvalReport::new("retrieval", &config, hash, Vec::new());
    for (k, r) in &summary.recall_at {
        println!("recall@{k}: {r:.4}");
    }
    report.retrieval = Some(summary);
    write_report(&a.out, &report)
}

fn baseline_cmd(a: BaselineArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let ds = load_dataset(&a.data)?;
    let report = supervised_baseline(&ds, &config)?;
    write_report(&a.out, &report)?;
    if let Some(dir) = &a.plots {
        write_unit_plots(dir, &report)?;
    }
    Ok(())
}

fn num(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), num)
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(snls::Error::from).with_context(|| format!("parsing {}", a.input.display()))?;
    if report.schema_version != snls::harness::SCHEMA_VERSION {
        return Err(anyhow!(snls::Error::Validation(format!("unsupported report schema version {}", report.schema_version))));
    }
    println!("kind        {}", report.kind);
    println!("input hash  {}", report.input_hash);
    println!("objective   {}", serde_json::to_string(&report.config.objective)?.trim_matches('"'));
    if !report.units.is_empty() {
        let width = report.units.iter().map(|u| u.name.len()).max().unwrap_or(4).max(4);
        println!();
        println!("{:<width$}  macro_f1", "unit");
        for u in &report.units {
            println!("{:<width$}  {}", u.name, num(u.macro_f1));
            for (c, f) in &u.per_class_f1 {
                println!("{:<width$}    {c}: {}", "", num(*f));
            }
            if !u.absent_classes.is_empty() {
                println!("{:<width$}    absent: {}", "", u.absent_classes.join(", "));
            }
        }
        println!();
        println!("mean macro_f1  {}", fmt_opt(report.mean_macro_f1));
        println!("std macro_f1   {}", fmt_opt(report.std_macro_f1));
    }
    if let Some(r) = &report.retrieval {
        println!();
        println!("retrieval: {} queries, gallery of {}", r.queries, r.gallery_size);
        for (k, v) in &r.recall_at {
            println!("  recall@{k}  {}", num(*v));
        }
    }
    if let Some(f) = &report.fewshot {
        println!();
        println!("zero-shot  {}", num(f.zero_shot));
        println!("shots  mean  std");
        for l in &f.levels {
            if l.skipped {
                println!("{}  skipped  {}", l.shots, l.warning.as_deref().unwrap_or(""));
            } else {
                println!("{}  {}  {}", l.shots, fmt_opt(l.mean), fmt_opt(l.std));
            }
        }
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    Ok(())
}
