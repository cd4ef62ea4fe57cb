//! The `galleryrank` command line.
//!
//! Exit codes: 0 success, 1 validation or evaluation failure, 2 usage error.
//! Failures print one `error[<kind>]: <message>` line on stderr. Every output
//! file is written atomically and gets a `<file>.meta.json` sidecar holding the
//! config fingerprint and seed.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::embstore::{load_set, write_atomic, write_set, DatasetManifest, EmbeddingSet, Format};
use crate::engine::{AblationAxis, AblationGrid, AblationSpec, AxisValue, EvalConfig, EvalMode, Evaluator, RunResult};
use crate::error::{Error, Result};
use crate::gallery::{split_reference_gallery, SplitConfig, Strategy};
use crate::report::{emit_csv, emit_markdown, emit_plotdata, rows_from_results, RowKey, Scale, Sidecar, TableSchema};
use crate::rng::fnv1a64;
use crate::synth::{generate_synthetic_dataset, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "galleryrank", version, about = "Gallery-based retrieval evaluation of identity preservation")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "GALLERYRANK_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate an embedding set.
    Validate(ValidateArgs),
    /// Split real images into reference and gallery lists.
    BuildGallery(BuildGalleryArgs),
    /// Run an oracle or generated-method evaluation.
    Evaluate(EvaluateArgs),
    /// Sweep gallery composition.
    Ablate(AblateArgs),
    /// Compare two variants (e.g. background removal) of the same images.
    CompareVariants(CompareArgs),
    /// Write a synthetic identity dataset.
    Synth(SynthArgs),
    /// Render an evaluate output as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub set: PathBuf,
    /// jsonl or binary; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Standalone manifest to check the set against.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildGalleryArgs {
    /// Pool files; repeat to merge several.
    #[arg(long = "set", required = true)]
    pub sets: Vec<PathBuf>,
    /// Split settings as JSON; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub reference_per_subject: Option<usize>,
    #[arg(long)]
    pub gallery_per_subject: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub curated_list: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap requests at what each subject has instead of failing.
    #[arg(long)]
    pub cap: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the mode in the config.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// images-per-subject, subject-count or sampling-strategy.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated counts, or strategies for the sampling axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub resample: bool,
    #[arg(long)]
    pub per_subject: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub plotdata: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synth settings as JSON; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub reference_per_id: Option<usize>,
    #[arg(long)]
    pub gallery_per_id: Option<usize>,
    #[arg(long)]
    pub generated_per_id: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "synth")]
    pub name: String,
    #[arg(long, default_value = "jsonl")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON written by `evaluate`.
    #[arg(long)]
    pub results: PathBuf,
    /// csv or markdown.
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long, default_value = "dataset")]
    pub row_key: String,
    #[arg(long, default_value = "fraction")]
    pub scale: String,
    #[arg(long)]
    pub decimals: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Document written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub tool: String,
    pub version: String,
    pub config_fingerprint: String,
    pub seed: u64,
    pub mode: EvalMode,
    pub results: Vec<RunResult>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes `text` to `out` (plus sidecar) or to stdout.
fn emit(out: Option<&Path>, text: &str, sidecar: &Sidecar) -> Result<()> {
    match out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            write_atomic(&sidecar_path(path), sidecar.to_json().as_bytes())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn note(sidecar: &Sidecar) {
    eprintln!("fingerprint={} seed={}", sidecar.config_fingerprint, sidecar.seed);
}

fn load_eval_config(path: &Path, mode: Option<&str>) -> Result<EvalConfig> {
    let mut config = EvalConfig::load(path)?;
    if let Some(m) = mode {
        config.mode = match m {
            "oracle" => EvalMode::Oracle,
            "generated" => EvalMode::Generated,
            _ => return Err(Error::InvalidArgument(format!("unknown mode {m:?}"))),
        };
    }
    Ok(config)
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let format = match &args.format {
        Some(f) => f.parse()?,
        None => Format::from_path(&args.set)?,
    };
    let set = load_set(&args.set, format)?;
    if let Some(path) = &args.manifest {
        set.check_manifest(&DatasetManifest::load(path)?)?;
    }
    println!(
        "ok: {} records, dimension {}, encoder {}, {} subjects, {} methods",
        set.len(),
        set.dimension(),
        set.encoder(),
        set.subjects().len(),
        set.methods().len()
    );
    Ok(())
}

fn cmd_build_gallery(args: &BuildGalleryArgs) -> Result<()> {
    let mut split: SplitConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SplitConfig::default(),
    };
    if let Some(n) = args.reference_per_subject {
        split.reference_per_subject = n;
    }
    if let Some(n) = args.gallery_per_subject {
        split.gallery_per_subject = n;
    }
    if args.subjects.is_some() {
        split.subject_limit = args.subjects;
    }
    if let Some(s) = &args.strategy {
        split.strategy = s.parse::<Strategy>()?;
    }
    if args.curated_list.is_some() {
        split.curated_list = args.curated_list.clone();
    }
    if let Some(seed) = args.seed {
        split.seed = seed;
    }
    split.cap_to_available |= args.cap;

    let sets = args
        .sets
        .iter()
        .map(|p| load_set(p, Format::from_path(p)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&EmbeddingSet> = sets.iter().collect();
    let pool = EmbeddingSet::merge("pool", &refs)?;
    let real = pool.filter(|r| r.role.is_real())?;
    let spec = split_reference_gallery(&real, &split)?;

    let sidecar = Sidecar::new(
        format!("{:016x}", fnv1a64(&serde_json::to_vec(&split)?)),
        split.seed,
    );
    note(&sidecar);
    write_atomic(&args.out, to_json(&spec)?.as_bytes())?;
    write_atomic(&sidecar_path(&args.out), sidecar.to_json().as_bytes())?;
    eprintln!(
        "gallery: {} subjects, {} gallery ids, fingerprint {:016x}",
        spec.subjects.len(),
        spec.gallery_len(),
        spec.fingerprint()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let config = load_eval_config(&args.config, args.mode.as_deref())?;
    let sidecar = Sidecar::new(config.fingerprint_hex(), config.seed);
    note(&sidecar);
    let evaluator = Evaluator::from_config(config.clone())?;
    let results = evaluator.run()?;
    let output = EvalOutput {
        tool: sidecar.tool.clone(),
        version: sidecar.version.clone(),
        config_fingerprint: sidecar.config_fingerprint.clone(),
        seed: config.seed,
        mode: config.mode,
        results,
    };
    emit(args.out.as_deref(), &to_json(&output)?, &sidecar)?;

    let mut schema = TableSchema::for_results(&output.results, RowKey::Method, config.metrics.scale);
    if let Some(d) = config.metrics.decimals {
        schema.decimals = d;
    }
    if args.csv.is_some() || args.markdown.is_some() {
        let rows = rows_from_results(&output.results, &schema)?;
        if let Some(path) = &args.csv {
            emit(Some(path), &emit_csv(&rows, &schema)?, &sidecar)?;
        }
        if let Some(path) = &args.markdown {
            emit(Some(path), &emit_markdown(&rows, &schema)?, &sidecar)?;
        }
    }
    Ok(())
}

fn parse_axis_values(axis: AblationAxis, raw: &[String]) -> Result<Vec<AxisValue>> {
    raw.iter()
        .map(|v| match axis {
            AblationAxis::SamplingStrategy => Ok(AxisValue::Strategy(v.parse()?)),
            _ => v
                .parse::<usize>()
                .map(AxisValue::Count)
                .map_err(|_| Error::InvalidArgument(format!("axis value {v:?} is not a count"))),
        })
        .collect()
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let config = load_eval_config(&args.config, args.mode.as_deref())?;
    let axis: AblationAxis = args.axis.parse()?;
    let seeds = if args.seeds.is_empty() {
        vec![config.seed]
    } else {
        args.seeds.clone()
    };
    let mut spec = AblationSpec::new(axis, parse_axis_values(axis, &args.values)?, seeds);
    spec.resample = args.resample;
    if let Some(n) = args.per_subject {
        spec.per_subject = n;
    }
    let sidecar = Sidecar::new(config.fingerprint_hex(), config.seed);
    note(&sidecar);
    let grid: AblationGrid = Evaluator::from_config(config)?.ablation(&spec)?;
    emit(args.out.as_deref(), &to_json(&grid)?, &sidecar)?;
    if let Some(path) = &args.plotdata {
        emit(Some(path), &emit_plotdata(&grid)?, &sidecar)?;
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let config = load_eval_config(&args.config, args.mode.as_deref())?;
    let sidecar = Sidecar::new(config.fingerprint_hex(), config.seed);
    note(&sidecar);
    let comparison = Evaluator::from_config(config)?.compare_variants(&args.a, &args.b)?;
    emit(args.out.as_deref(), &to_json(&comparison)?, &sidecar)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut config: SynthConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag.clone() { config.$field = v; })*
        };
    }
    apply!(
        identities => identities,
        reference_per_id => reference_per_id,
        gallery_per_id => gallery_per_id,
        generated_per_id => generated_per_id,
        dim => dimension,
        noise => noise,
        drift => drift,
        seed => seed,
        method => method,
        encoder => encoder,
    );
    let format: Format = args.format.parse()?;
    let set = generate_synthetic_dataset(&config)?;

    let ext = match format {
        Format::Jsonl => "jsonl",
        Format::Binary => "bin",
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let data_path = args.out_dir.join(format!("{}.{ext}", args.name));
    write_set(&set, &data_path, format)?;
    let mut manifest = set.manifest().clone();
    manifest.name = args.name.clone();
    manifest.write(&args.out_dir.join(format!("{}.manifest.json", args.name)))?;
    let config_json = to_json(&config)?;
    write_atomic(&args.out_dir.join(format!("{}.config.json", args.name)), config_json.as_bytes())?;

    let sidecar = Sidecar::new(format!("{:016x}", fnv1a64(config_json.as_bytes())), config.seed);
    write_atomic(&sidecar_path(&data_path), sidecar.to_json().as_bytes())?;
    note(&sidecar);
    eprintln!("wrote {} records to {}", set.len(), data_path.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let output: EvalOutput = read_json(&args.results)?;
    let row_key: RowKey = args.row_key.parse()?;
    let scale: Scale = args.scale.parse()?;
    let mut schema = TableSchema::for_results(&output.results, row_key, scale);
    if let Some(d) = args.decimals {
        schema.decimals = d;
    }
    let rows = rows_from_results(&output.results, &schema)?;
    let text = match args.format.as_str() {
        "csv" => emit_csv(&rows, &schema)?,
        "markdown" | "md" => emit_markdown(&rows, &schema)?,
        other => return Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
    };
    let sidecar = Sidecar::new(output.config_fingerprint.clone(), output.seed);
    emit(args.out.as_deref(), &text, &sidecar)
}

pub fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Validate(a) => cmd_validate(a),
        Command::BuildGallery(a) => cmd_build_gallery(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::CompareVariants(a) => cmd_compare(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli.command))),
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.kind());
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}
