//! `chronoret` command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chronoret::audio::{FeatureConfig, FrameFeatures, SoundBank, DEFAULT_SAMPLE_RATE};
use chronoret::audit::{
    aggregate, audit_batch, AuditVerdict, GroundedItem, HttpBackend, MockBackend, RetryPolicy, DEFAULT_TEMPLATE,
};
use chronoret::corpus::{load_manifest, save_manifest, DatasetManifest, LossConfig, Split};
use chronoret::cue::{histogram, CueLexicon};
use chronoret::data::{extract_features, write_audio};
use chronoret::eval::{evaluate, EvalConfig, EvalReport};
use chronoret::plot::histogram_chart;
use chronoret::syncaps::{generate, SynCapsConfig};
use chronoret::train::{run_seeds, Checkpoint, TrainConfig};
use chronoret::transform::{transform_manifest, uniformize, BatchTransform, RepMode};

#[derive(Parser, Debug)]
#[command(name = "chronoret", version, about = "Temporal-order analysis and retrieval experiments for audio captions")]
struct Cli {
    /// Plain `key=value` file; keys are long flag names and explicit flags win (default: none).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for data-parallel sections (synthesis, features, seeds).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-event corpus (manifest + WAVs).
    Synth(SynthArgs),
    /// Count temporal cues in a manifest's captions.
    Analyze(AnalyzeArgs),
    /// Rewrite captions: reverse clauses, replace cues, or rebalance cues.
    Transform(TransformArgs),
    /// Train dual encoders, one per seed.
    Train(TrainArgs),
    /// Evaluate checkpoints on the test split and its corrupted variants.
    Eval(EvalArgs),
    /// Judge caption quality against grounded sound events.
    Audit(AuditArgs),
    /// Render evaluation reports and cue histograms to CSV and SVG.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Atomic sound source: builtin, builtin:<labels>x<clips>, or esc50:<dir>.
    #[arg(long, default_value = "builtin")]
    bank: String,
    /// Record counts for train,val,test.
    #[arg(long, default_value = "4400,485,485")]
    sizes: String,
    /// Mean number of uses of each atomic clip.
    #[arg(long, default_value_t = 5.0)]
    reuse: f64,
    /// Sample rate of the rendered audio in Hz.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
    sample_rate: u32,
    /// Upper bound of the uniform overlap between the two sounds, in seconds.
    #[arg(long, default_value_t = 1.0)]
    max_overlap: f64,
    /// Write only the manifest; audio stays reproducible from its inline recipe.
    #[arg(long)]
    no_audio: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Input manifest (JSON Lines).
    #[arg(long = "in", value_name = "MANIFEST")]
    input: PathBuf,
    /// Histogram CSV (cue,class,count,percent).
    #[arg(long)]
    out: PathBuf,
    /// Which split's captions to count.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    /// Treat BEFORE as a past cue.
    #[arg(long)]
    before_as_past: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TransformMode {
    Rev,
    Rep,
    Uni,
}

#[derive(Args, Debug)]
struct TransformArgs {
    /// Rewrite to apply.
    #[arg(long, value_enum)]
    mode: TransformMode,
    /// Input manifest (JSON Lines).
    #[arg(long = "in", value_name = "MANIFEST")]
    input: PathBuf,
    /// Output manifest.
    #[arg(long)]
    out: PathBuf,
    /// Cue map for rep: paper_compat (then -> before) or corrected (then -> after).
    #[arg(long, default_value = "paper_compat")]
    rep_mode: String,
    /// Treat BEFORE as a past cue.
    #[arg(long)]
    before_as_past: bool,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Passes over the training split.
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// Pairs per optimizer step; the last batch may be smaller.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Softmax temperature of the audio-text loss.
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    /// Weight of the text-text loss; 0 trains with the audio-text loss only.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// Hinge margin of the text-text loss.
    #[arg(long, default_value_t = 0.2)]
    margin: f64,
    /// Disable frame positional embeddings in the audio encoder.
    #[arg(long)]
    no_positions: bool,
    /// Half-width of the uniform weight initialization.
    #[arg(long, default_value_t = 0.05)]
    init_scale: f64,
    /// Token / frame embedding width.
    #[arg(long, default_value_t = 32)]
    d_tok: usize,
    /// Hidden width of both towers.
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// Joint embedding width.
    #[arg(long, default_value_t = 64)]
    d_out: usize,
    /// Number of mel-spaced feature bands.
    #[arg(long, default_value_t = 8)]
    bands: usize,
    /// Feature frame length in seconds.
    #[arg(long, default_value_t = 0.5)]
    frame_s: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Input manifest (JSON Lines).
    #[arg(long = "in", value_name = "MANIFEST")]
    input: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// Number of runs; run i uses seed + i.
    #[arg(long, default_value_t = 3)]
    runs: u64,
    /// Directory WAV paths are relative to (default: the manifest's directory).
    #[arg(long)]
    audio_root: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Input manifest (JSON Lines).
    #[arg(long = "in", value_name = "MANIFEST")]
    input: PathBuf,
    /// Checkpoint file; repeat for several seeds.
    #[arg(long = "ckpt", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Output directory (report.csv, gaps.csv, report.txt, report.json, gaps.svg).
    #[arg(long)]
    out: PathBuf,
    /// Cue map for the rep subsets: paper_compat or corrected.
    #[arg(long, default_value = "paper_compat")]
    rep_mode: String,
    /// Name shown in the report.
    #[arg(long, default_value = "eval")]
    label: String,
    /// Comma-separated subsets to report (default: all).
    #[arg(long)]
    subsets: Option<String>,
    /// Directory WAV paths are relative to (default: the manifest's directory).
    #[arg(long)]
    audio_root: Option<PathBuf>,
    /// Treat BEFORE as a past cue.
    #[arg(long)]
    before_as_past: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Grounded items as JSON Lines: {"description", "components": [{"label","onset_s","offset_s"}]}.
    #[arg(long = "in", value_name = "JSONL")]
    input: PathBuf,
    /// Rule-based mock or a chat-completion endpoint.
    #[arg(long, value_enum, default_value_t = BackendArg::Mock)]
    backend: BackendArg,
    /// Verdicts as JSON Lines.
    #[arg(long)]
    out: PathBuf,
    /// Per-cue percentage table as CSV (default: not written).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Prompt template with {description} and {components} placeholders (default: built-in).
    #[arg(long)]
    template: Option<PathBuf>,
    /// Model name sent to the HTTP endpoint (AUDIT_API_URL, AUDIT_API_KEY).
    #[arg(long, default_value = "gpt-4")]
    model: String,
    /// Sampling temperature sent to the endpoint.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Attempts per item before giving up.
    #[arg(long, default_value_t = 5)]
    retries: u32,
    /// Minimum milliseconds between requests.
    #[arg(long, default_value_t = 0)]
    interval_ms: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// report.json written by `eval`; repeatable (default: none).
    #[arg(long = "eval", value_name = "JSON")]
    reports: Vec<PathBuf>,
    /// Manifest whose cue histogram to plot; repeatable (default: none).
    #[arg(long = "manifest", value_name = "MANIFEST")]
    manifests: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Treat BEFORE as a past cue.
    #[arg(long)]
    before_as_past: bool,
}

/// Append `--key value` for config entries whose flag is not already given.
fn merge_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let mut out = args.clone();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{path}:{}: expected key=value", n + 1);
        };
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        let flag = format!("--{k}");
        let given = args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given || k == "config" {
            continue;
        }
        match v {
            "true" => out.push(flag),
            "false" => {}
            _ => {
                out.push(flag);
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

fn lexicon(before_as_past: bool) -> CueLexicon {
    if before_as_past {
        CueLexicon::with_before_as_past()
    } else {
        CueLexicon::default()
    }
}

fn parse_sizes(s: &str) -> Result<(usize, usize, usize)> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad --sizes `{s}`"))?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("--sizes needs three comma-separated counts, got `{s}`"),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(d)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> chronoret::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn manifest_root(manifest: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn load_features(
    m: &DatasetManifest,
    splits: &[Split],
    root: &Path,
    cfg: FeatureConfig,
    jobs: usize,
) -> Result<BTreeMap<String, FrameFeatures>> {
    Ok(extract_features(m, splits, Some(root), cfg, jobs)?)
}

fn synth(a: &SynthArgs, seed: u64, jobs: usize) -> Result<()> {
    let bank = SoundBank::from_spec(&a.bank, a.sample_rate, seed)?;
    let cfg = SynCapsConfig {
        sizes: parse_sizes(&a.sizes)?,
        reuse_avg: a.reuse,
        seed,
        max_overlap_s: a.max_overlap,
        ..Default::default()
    };
    let mut m = generate(&bank, &cfg)?;
    create_dir(&a.out)?;
    if !a.no_audio {
        write_audio(&mut m, &a.out, jobs)?;
    }
    save_manifest(&m, a.out.join("manifest.jsonl"))?;
    log::info!("wrote {} records to {}", m.records.len(), a.out.display());
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let m = load_manifest(&a.input)?;
    let lex = lexicon(a.before_as_past);
    let rep = histogram(&m, &lex);
    let h = match a.split {
        SplitArg::All => rep.overall,
        SplitArg::Train => rep.per_split[&Split::Train].clone(),
        SplitArg::Val => rep.per_split[&Split::Val].clone(),
        SplitArg::Test => rep.per_split[&Split::Test].clone(),
    };
    write_file(&a.out, csv_bytes(|b| h.write_csv(&lex, b))?)
}

fn transform(a: &TransformArgs, seed: u64) -> Result<()> {
    let m = load_manifest(&a.input)?;
    let lex = lexicon(a.before_as_past);
    let out = match a.mode {
        TransformMode::Rev => transform_manifest(&m, BatchTransform::Rev, &lex),
        TransformMode::Rep => transform_manifest(&m, BatchTransform::Rep(a.rep_mode.parse()?), &lex),
        TransformMode::Uni => uniformize(&m, &lex, seed),
    };
    save_manifest(&out, &a.out)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: u64, jobs: usize) -> Result<()> {
    let m = load_manifest(&a.input)?;
    let lex = CueLexicon::default();
    let ma = &a.model;
    let mut cfg = TrainConfig {
        epochs: ma.epochs,
        batch_size: ma.batch_size,
        loss: LossConfig {
            tau: ma.tau,
            lambda: ma.lambda,
            margin: ma.margin,
        },
        use_positions: !ma.no_positions,
        ..Default::default()
    };
    cfg.adam.lr = ma.lr;
    cfg.model.init_scale = ma.init_scale;
    cfg.model.d_tok = ma.d_tok;
    cfg.model.hidden = ma.hidden;
    cfg.model.d_out = ma.d_out;
    let fc = FeatureConfig {
        frame_s: ma.frame_s,
        bands: ma.bands,
    };
    let feats = load_features(&m, &[Split::Train, Split::Val], &manifest_root(&a.input, &a.audio_root), fc, jobs)?;
    if a.runs == 0 {
        bail!("--runs must be >= 1");
    }
    let seeds: Vec<u64> = (0..a.runs).map(|i| seed + i).collect();
    let cks = run_seeds(&m, &feats, &cfg, &lex, &seeds, jobs)?;
    create_dir(&a.out)?;
    for ck in &cks {
        ck.save(a.out.join(format!("checkpoint_seed{}.json", ck.seed)))?;
        write_file(
            &a.out.join(format!("log_seed{}.csv", ck.seed)),
            csv_bytes(|b| ck.write_log_csv(b))?,
        )?;
        log::info!("seed {}: best epoch {}", ck.seed, ck.best_epoch);
    }
    write_file(&a.out.join("features.json"), serde_json_string(&fc)?)?;
    Ok(())
}

fn serde_json_string<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn eval_cmd(a: &EvalArgs, jobs: usize) -> Result<()> {
    let m = load_manifest(&a.input)?;
    let lex = lexicon(a.before_as_past);
    let cks: Vec<Checkpoint> = a
        .checkpoints
        .iter()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    // feature settings travel next to the checkpoints when written by `train`
    let fc = a.checkpoints[0]
        .parent()
        .map(|d| d.join("features.json"))
        .filter(|p| p.exists())
        .map(|p| -> Result<FeatureConfig> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) })
        .transpose()?
        .unwrap_or(FeatureConfig {
            bands: cks[0].model.bands,
            ..Default::default()
        });
    let feats = load_features(&m, &[Split::Test], &manifest_root(&a.input, &a.audio_root), fc, jobs)?;
    let cfg = EvalConfig {
        label: a.label.clone(),
        rep_mode: a.rep_mode.parse::<RepMode>()?,
        subsets: a.subsets.as_ref().map(|s| s.split(',').map(|x| x.trim().to_string()).collect()),
    };
    let report = evaluate(&cks, &m, &feats, &lex, &cfg)?;
    write_report(&report, &a.out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_file(&out.join("report.csv"), csv_bytes(|b| report.write_csv(b))?)?;
    write_file(&out.join("gaps.csv"), csv_bytes(|b| report.write_gaps_csv(b))?)?;
    write_file(&out.join("report.txt"), report.to_table())?;
    write_file(&out.join("report.json"), serde_json_string(report)?)?;
    write_file(&out.join("gaps.svg"), report.gaps_svg())
}

fn audit_cmd(a: &AuditArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let items: Vec<GroundedItem> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", a.input.display(), i + 1)))
        .collect::<Result<_>>()?;
    let template = match &a.template {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEFAULT_TEMPLATE.to_string(),
    };
    let policy = RetryPolicy {
        max_attempts: a.retries.max(1),
        min_interval: Duration::from_millis(a.interval_ms),
        ..Default::default()
    };
    let verdicts: Vec<AuditVerdict> = match a.backend {
        BackendArg::Mock => audit_batch(&items, &template, &mut MockBackend::default(), policy)?,
        BackendArg::Http => {
            let mut b = HttpBackend::from_env(&a.model, a.temperature)?;
            audit_batch(&items, &template, &mut b, policy)?
        }
    };
    let mut out = String::new();
    for v in &verdicts {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    write_file(&a.out, out)?;
    let agg = aggregate(&verdicts, &CueLexicon::default());
    if let Some(p) = &a.summary {
        write_file(p, csv_bytes(|b| agg.write_csv(b))?)?;
    }
    if agg.unparsed > 0 {
        eprintln!("{} response(s) had no parseable verdict", agg.unparsed);
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    if a.reports.is_empty() && a.manifests.is_empty() {
        bail!("nothing to render: pass --eval and/or --manifest");
    }
    create_dir(&a.out)?;
    for p in &a.reports {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        let dir = a.out.join(sanitize(&report.label));
        write_report(&report, &dir)?;
    }
    let lex = lexicon(a.before_as_past);
    for p in &a.manifests {
        let m = load_manifest(p)?;
        let h = histogram(&m, &lex);
        let stem = sanitize(&p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let mut csv = Vec::new();
        {
            let mut w = BufWriter::new(&mut csv);
            h.overall.write_csv(&lex, &mut w)?;
        }
        write_file(&a.out.join(format!("{stem}_cues.csv")), csv)?;
        write_file(
            &a.out.join(format!("{stem}_cues.svg")),
            histogram_chart(&format!("Temporal cues in {stem}"), &h).to_svg(),
        )?;
    }
    Ok(())
}

fn sanitize(s: &str) -> String {
    let s: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "report".into()
    } else {
        s
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed, cli.jobs),
        Command::Analyze(a) => analyze(a),
        Command::Transform(a) => transform(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed, cli.jobs),
        Command::Eval(a) => eval_cmd(a, cli.jobs),
        Command::Audit(a) => audit_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() {
    let args = match merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    };
    let cli = Cli::parse_from(args);
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
