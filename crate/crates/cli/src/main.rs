//! `attnmap`: batch entry points for ingesting, training, slicing and serving.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attnmap_core::attribution::{
    build_grid, epoch_comparison, select_events, tpartite_classes, Aggregation, AttributionError, GraphVariant,
    GridOptions, Mode, SliceSpec,
};
use attnmap_core::dataset::{
    load_dataset_with, read_schema_overrides, resolve_attributes, Dataset, DatasetError, FileFormat, Label, LoadOptions,
};
use attnmap_core::export::{epochs_json, grid_json, to_pretty, tpartite_json, EXPORT_VERSION};
use attnmap_core::rnn::{
    extract_attentions, list_checkpoints, load_checkpoint, save_checkpoint, train_with_observer,
    AttentionNormalization, ModelCheckpoint, RnnError, TrainConfig, TrainEvent,
};
use attnmap_core::svg::{grid_svg, tpartite_svg};
use attnmap_core::synth::{generate, PlantSpec};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Training(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AttributionError> for CliError {
    fn from(e: AttributionError) -> Self {
        match e {
            AttributionError::InvalidSlice(_)
            | AttributionError::UnknownAttribute(_)
            | AttributionError::SameAttribute(_)
            | AttributionError::NotEnoughCheckpoints(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RnnError> for CliError {
    fn from(e: RnnError) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attention-based attribution for binary-labelled event sequences.
#[derive(Debug, Parser)]
#[command(name = "attnmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a dataset and report its schema.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the attention LSTM and write checkpoints plus metrics.csv.
    Train(TrainArgs),
    /// Export the attribute-matrix grid for a slice.
    Grid(GridArgs),
    /// Export T-partite graphs for one attribute or an attribute pair.
    Tpartite(TpartiteArgs),
    /// Compare low- and high-attention bands across checkpoints.
    Epochs(EpochsArgs),
    /// Generate a synthetic dataset with one planted attribute level.
    Synth(SynthArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Long-format dataset (.csv, or .jsonl for JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Quantile bins for numerical attributes.
    #[arg(long, default_value_t = 5)]
    bins: usize,
    /// JSON schema overrides keyed by attribute name.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Reject instances longer than this.
    #[arg(long)]
    max_len: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        if self.bins == 0 {
            return Err(CliError::Usage("--bins must be at least 1".into()));
        }
        let overrides = match &self.schema {
            Some(path) => read_schema_overrides(path)?,
            None => Default::default(),
        };
        let options = LoadOptions {
            numeric_bins: self.bins,
            max_len: self.max_len,
            overrides,
        };
        Ok(load_dataset_with(
            &self.data,
            FileFormat::from_path(&self.data),
            &options,
        )?)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint directory; metrics.csv is written alongside.
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    /// Directory of checkpoint-NNNNNN.json files.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Checkpoint epoch; the latest when omitted.
    #[arg(long)]
    epoch: Option<usize>,
    /// Normalize attention by the dataset-wide maximum instead of per instance.
    #[arg(long)]
    global_max: bool,
}

#[derive(Debug, Args)]
struct SliceArgs {
    /// Normalized attention interval, closed.
    #[arg(long, value_name = "LO:HI", value_parser = parse_interval)]
    att: Option<(f64, f64)>,
    /// 1-based inclusive time range.
    #[arg(long, value_name = "T0:T1", value_parser = parse_range)]
    t: Option<(usize, usize)>,
    /// Comma-separated attribute names, in grid order.
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<String>>,
    /// pos, neg, both or diff.
    #[arg(long, value_parser = parse_mode, default_value = "diff")]
    mode: Mode,
}

impl SliceArgs {
    fn slice(&self, ds: &Dataset, epoch: Option<usize>) -> Result<SliceSpec> {
        let mut slice = SliceSpec::full(ds).with_mode(self.mode);
        if let Some((lo, hi)) = self.att {
            slice = slice.with_attention(lo, hi);
        }
        if let Some((t0, t1)) = self.t {
            slice = slice.with_time(t0, t1);
        }
        if let Some(names) = &self.attrs {
            slice = slice.with_attributes(attributes(ds, names)?);
        }
        slice.epoch = epoch;
        slice.validate(ds)?;
        Ok(slice)
    }
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: CheckpointArgs,
    #[command(flatten)]
    slice: SliceArgs,
    /// Average attention per cell instead of summing it.
    #[arg(long)]
    mean: bool,
    /// JSON output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG rendering.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TpartiteArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: CheckpointArgs,
    /// Attribute of the graph; the primary one when --attr2 is given.
    #[arg(long)]
    attr: String,
    /// Secondary attribute for the combined graph.
    #[arg(long)]
    attr2: Option<String>,
    /// pos, neg or both.
    #[arg(long, default_value = "both")]
    class: String,
    #[arg(long, value_name = "LO:HI", value_parser = parse_interval)]
    att: Option<(f64, f64)>,
    #[arg(long, value_name = "T0:T1", value_parser = parse_range)]
    t: Option<(usize, usize)>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EpochsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long)]
    global_max: bool,
    #[arg(long, value_name = "LO:HI", value_parser = parse_interval, default_value = "0:0.2")]
    low: (f64, f64),
    #[arg(long, value_name = "LO:HI", value_parser = parse_interval, default_value = "0.6:1")]
    high: (f64, f64),
    #[arg(long, value_name = "T0:T1", value_parser = parse_range)]
    t: Option<(usize, usize)>,
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON generator spec; the 1000-instance reference spec when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset path; .jsonl selects JSON lines, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Dataset to serve; the schema endpoints answer 409 without one.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory of static UI assets served outside /api.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long)]
    global_max: bool,
}

fn split_pair(raw: &str) -> Result<(&str, &str), String> {
    raw.split_once(':').ok_or_else(|| format!("expected A:B, got `{raw}`"))
}

fn parse_interval(raw: &str) -> Result<(f64, f64), String> {
    let (a, b) = split_pair(raw)?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_range(raw: &str) -> Result<(usize, usize), String> {
    let (a, b) = split_pair(raw)?;
    let num = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_mode(raw: &str) -> Result<Mode, String> {
    Mode::parse(raw).ok_or_else(|| format!("unknown mode `{raw}`; expected pos, neg, both or diff"))
}

fn normalization(global_max: bool) -> AttentionNormalization {
    if global_max {
        AttentionNormalization::GlobalMax
    } else {
        AttentionNormalization::PerInstanceMax
    }
}

fn attributes(ds: &Dataset, names: &[String]) -> Result<Vec<usize>> {
    let names: Vec<&str> = names.iter().map(|s| s.trim()).collect();
    resolve_attributes(ds, &names).map_err(|e| CliError::Usage(e.to_string()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
            }
            std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(ds: &Dataset, args: &CheckpointArgs) -> Result<ModelCheckpoint> {
    let available = list_checkpoints(&args.checkpoints)?;
    let path = match args.epoch {
        Some(epoch) => available.iter().find(|(e, _)| *e == epoch),
        None => available.last(),
    };
    let Some((_, path)) = path else {
        return Err(CliError::Data(match args.epoch {
            Some(e) => format!("no checkpoint for epoch {e} in {}", args.checkpoints.display()),
            None => format!("no checkpoints in {}", args.checkpoints.display()),
        }));
    };
    let checkpoint = load_checkpoint(path)?;
    if checkpoint.params.shape().input_dim != ds.input_dim() {
        return Err(CliError::Data(format!(
            "{} expects {} input features but the dataset encodes {}",
            path.display(),
            checkpoint.params.shape().input_dim,
            ds.input_dim()
        )));
    }
    Ok(checkpoint)
}

fn ingest(data: &DataArgs, out: Option<&Path>) -> Result<()> {
    let ds = data.load()?;
    let [pos, neg] = ds.class_counts();
    let report = serde_json::json!({
        "v": EXPORT_VERSION,
        "instances": ds.len(),
        "max_len": ds.max_len(),
        "input_dim": ds.input_dim(),
        "classes": {"pos": pos, "neg": neg},
        "attributes": ds.schema(),
    });
    write_output(out, &to_pretty(&report))
}

fn train(args: &TrainArgs) -> Result<()> {
    let ds = args.data.load()?;
    let mut config: TrainConfig = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch {
        config.batch_size = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.hidden {
        config.hidden = v;
    }
    if let Some(v) = args.checkpoint_every {
        config.checkpoint_every = v;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    for (_, stale) in list_checkpoints(&args.out)? {
        std::fs::remove_file(&stale).map_err(|e| CliError::Data(format!("{}: {e}", stale.display())))?;
    }

    let mut save_error = None;
    let result = train_with_observer(&ds, &config, &mut |event| match event {
        TrainEvent::Epoch(m) => log::debug!(
            "epoch {} loss {:.4} test acc {:.3}",
            m.epoch,
            m.train_loss,
            m.test_accuracy
        ),
        TrainEvent::Checkpoint(c) => {
            log::info!("checkpoint {} test accuracy {:.3}", c.epoch, c.test_accuracy());
            if let Err(e) = save_checkpoint(&args.out, c) {
                save_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = save_error {
        return Err(CliError::Data(e.to_string()));
    }
    let run = match result {
        Ok(run) => run,
        Err(RnnError::Diverged { epoch, last_good, run }) => {
            save_checkpoint(&args.out, &last_good)?;
            write_metrics(&args.out, &run.metrics)?;
            return Err(CliError::Training(format!(
                "training diverged at epoch {epoch}; kept checkpoint {}",
                last_good.epoch
            )));
        }
        Err(e @ (RnnError::SingleClass { .. } | RnnError::Shape(_) | RnnError::EmptySequence)) => {
            return Err(CliError::Data(e.to_string()));
        }
        Err(e) => return Err(CliError::Training(e.to_string())),
    };
    write_metrics(&args.out, &run.metrics)?;
    let last = run.final_checkpoint();
    eprintln!(
        "trained {} epochs; final train accuracy {:.3}, test accuracy {:.3}",
        config.epochs,
        last.train_accuracy(),
        last.test_accuracy()
    );
    Ok(())
}

fn write_metrics(dir: &Path, metrics: &[attnmap_core::rnn::EpochMetrics]) -> Result<()> {
    let mut csv = String::from("epoch,train_loss,train_accuracy,test_loss,test_accuracy\n");
    for m in metrics {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            m.epoch, m.train_loss, m.train_accuracy, m.test_loss, m.test_accuracy
        );
    }
    write_output(Some(&dir.join("metrics.csv")), &csv)
}

fn grid(args: &GridArgs) -> Result<()> {
    let ds = args.data.load()?;
    let checkpoint = load_model(&ds, &args.model)?;
    let slice = args.slice.slice(&ds, Some(checkpoint.epoch))?;
    let records = extract_attentions(&checkpoint.params, &ds, normalization(args.model.global_max))?;
    let aggregation = if args.mean { Aggregation::Mean } else { Aggregation::Sum };
    let grid = build_grid(&ds, &records, &slice, &GridOptions { aggregation })?;
    write_output(args.out.as_deref(), &to_pretty(&grid_json(&grid, &ds)))?;
    if let Some(svg) = &args.svg {
        write_output(Some(svg), &grid_svg(&grid, &ds))?;
    }
    Ok(())
}

fn tpartite(args: &TpartiteArgs) -> Result<()> {
    if args.attr2.as_deref() == Some(args.attr.as_str()) {
        return Err(CliError::Usage(format!(
            "--attr and --attr2 must differ (both are `{}`)",
            args.attr
        )));
    }
    let ds = args.data.load()?;
    let primary = attributes(&ds, std::slice::from_ref(&args.attr))?[0];
    let secondary = match &args.attr2 {
        Some(name) => Some(attributes(&ds, std::slice::from_ref(name))?[0]),
        None => None,
    };
    let classes = match args.class.as_str() {
        "both" => Label::ALL.to_vec(),
        other => vec![Label::parse(other)
            .ok_or_else(|| CliError::Usage(format!("unknown class `{other}`; expected pos, neg or both")))?],
    };
    let checkpoint = load_model(&ds, &args.model)?;
    let mut slice = SliceSpec::full(&ds).with_attributes(std::iter::once(primary).chain(secondary).collect());
    if let Some((lo, hi)) = args.att {
        slice = slice.with_attention(lo, hi);
    }
    if let Some((t0, t1)) = args.t {
        slice = slice.with_time(t0, t1);
    }
    slice.epoch = Some(checkpoint.epoch);
    slice.validate(&ds)?;
    let records = extract_attentions(&checkpoint.params, &ds, normalization(args.model.global_max))?;
    let selection = select_events(&ds, &records, &slice)?;
    let graphs = match secondary {
        None => classes
            .iter()
            .map(|c| tpartite_classes(&ds, &selection, GraphVariant::Single { attribute: primary }, &[*c]))
            .collect::<Result<Vec<_>, _>>()?,
        Some(secondary) => vec![tpartite_classes(
            &ds,
            &selection,
            GraphVariant::Combined { primary, secondary },
            &classes,
        )?],
    };
    write_output(args.out.as_deref(), &to_pretty(&tpartite_json(&graphs, &slice, &ds)))?;
    if let Some(svg) = &args.svg {
        write_output(Some(svg), &tpartite_svg(&graphs, &ds))?;
    }
    Ok(())
}

fn epochs(args: &EpochsArgs) -> Result<()> {
    let ds = args.data.load()?;
    let checkpoints = list_checkpoints(&args.checkpoints)?
        .into_iter()
        .map(|(_, path)| load_checkpoint(&path))
        .collect::<Result<Vec<_>, _>>()?;
    let mut slice = SliceSpec::full(&ds);
    if let Some((t0, t1)) = args.t {
        slice = slice.with_time(t0, t1);
    }
    if let Some(names) = &args.attrs {
        slice = slice.with_attributes(attributes(&ds, names)?);
    }
    slice.validate(&ds)?;
    let bands = [args.low, args.high];
    for (lo, hi) in bands {
        slice.clone().with_attention(lo, hi).validate(&ds)?;
    }
    let result = epoch_comparison(&checkpoints, &ds, &slice, bands, normalization(args.global_max))?;
    write_output(args.out.as_deref(), &to_pretty(&epochs_json(&result, &slice, &ds)))
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<PlantSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => PlantSpec::reference(),
    };
    let ds = generate(&spec, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    match FileFormat::from_path(&args.out) {
        FileFormat::Csv => ds.write_csv(&args.out)?,
        FileFormat::Jsonl => ds.write_jsonl(&args.out)?,
    }
    let [pos, neg] = ds.class_counts();
    eprintln!(
        "wrote {} instances ({pos} pos, {neg} neg) to {}",
        ds.len(),
        args.out.display()
    );
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let dataset = match &args.data {
        Some(path) => Some(
            DataArgs {
                data: path.clone(),
                bins: args.bins,
                schema: args.schema.clone(),
                max_len: None,
            }
            .load()?,
        ),
        None => None,
    };
    let state = attnmap_server::AppState::new(dataset, &args.checkpoints, normalization(args.global_max))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {}: {e}", args.addr)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?;
        eprintln!("listening on http://{addr}");
        let router = attnmap_server::router(state, args.static_dir.as_deref());
        attnmap_server::serve(listener, router, attnmap_server::ctrl_c())
            .await
            .map_err(|e| CliError::Data(e.to_string()))
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { data, out } => ingest(data, out.as_deref()),
        Command::Train(args) => train(args),
        Command::Grid(args) => grid(args),
        Command::Tpartite(args) => tpartite(args),
        Command::Epochs(args) => epochs(args),
        Command::Synth(args) => synth(args),
        Command::Serve(args) => serve(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
