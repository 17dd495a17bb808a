use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trustrec::backbone::{
    build_norm_adjacency, load_checkpoint, save_checkpoint, train, BackboneKind, EmbeddingModel, ModelShape, TrainConfig,
};
use trustrec::corpus::{
    ingest_interactions, load_features, save_features, split_dataset, synth_generate, FeatureTable, InteractionSet,
    SplitDataset, SplitRatios, SynthSpec,
};
use trustrec::corruptor::{corrupt_edges, permute_modality};
use trustrec::edge_editor::{apply_edit, complete_edges, prune_edges, EditOp, EditPlan, EditProvenance, EditTarget};
use trustrec::evaluator::{evaluate, FilterPolicy};
use trustrec::harness::{find_bundles, report, run_experiment, sweep, ExperimentConfig, SweepAxis};
use trustrec::rectifier::{
    anchors_from_model, rectify_with_anchors, AnchorTable, ProjectionConfig, RectifyConfig, RhoRule, SinkhornConfig,
};

/// Bad invocation or configuration (exit code 2).
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

#[derive(Parser)]
#[command(name = "trustrec", version, about = "Multimodal recommendation under controlled corruption")]
struct Cli {
    /// Caps worker threads.
    #[arg(long, env = "TRUSTREC_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Core a raw `user<TAB>item` file and assign dense indices.
    Ingest(IngestArgs),
    /// Per-user train/validation/test split.
    Split(SplitArgs),
    /// Generate the synthetic benchmark (split plus clean features).
    Synth(SynthArgs),
    /// Permute a random subset of feature rows.
    CorruptFeatures(CorruptFeaturesArgs),
    /// Add or delete random training edges.
    CorruptEdges(CorruptEdgesArgs),
    /// Rectify feature tables against collaborative anchors.
    Rectify(RectifyArgs),
    /// Build a prune or completion plan from a collaborative prior.
    EditEdges(EditEdgesArgs),
    /// Train a backbone with BPR and early stopping.
    Train(TrainArgs),
    /// Full-ranking Recall/NDCG of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Run one experiment from a config file.
    Run(RunArgs),
    /// Grid sweep over one axis.
    Sweep(SweepArgs),
    /// Long-format table from result bundles.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, default_value_t = 5)]
    min_core: usize,
    /// Output directory (interactions.tsv, dims.txt, mapping sidecars).
    #[arg(long)]
    out: PathBuf,
    /// Stem of the mapping sidecar files.
    #[arg(long, default_value = "data")]
    name: String,
    input: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Train, validation and test ratios.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    /// Directory written by `ingest`.
    input: PathBuf,
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 800)]
    num_users: usize,
    #[arg(long, default_value_t = 500)]
    num_items: usize,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    #[arg(long, default_value_t = 20)]
    edges_per_user: usize,
    #[arg(long, default_value_t = 0.1)]
    feature_noise_std: f64,
    /// `tag:dim` pairs.
    #[arg(long, default_value = "v:64,t:32")]
    modalities: String,
    out: PathBuf,
}

#[derive(Args)]
struct CorruptFeaturesArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long, default_value = "v")]
    modality: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Permutation audit TSV (defaults to `<output>.perm.tsv`).
    #[arg(long)]
    audit: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct CorruptEdgesArgs {
    #[arg(long, allow_hyphen_values = true)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Split directory.
    input: PathBuf,
    /// Split directory with the noisy training set and an `edge_noise.tsv` audit.
    output: PathBuf,
}

#[derive(Args)]
struct RectifyArgs {
    /// Fixed keep ratio; overrides `--rho-rule`.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value = "clean_fraction")]
    rho_rule: String,
    /// Assumed misalignment used by the keep-ratio rule.
    #[arg(long, default_value_t = 0.0)]
    eta_m: f64,
    #[arg(long, default_value_t = 20)]
    topk: usize,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 50)]
    sinkhorn_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    sinkhorn_eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    sinkhorn_tol: f64,
    /// Replace Sinkhorn balancing by row normalization.
    #[arg(long)]
    no_sinkhorn: bool,
    /// Train the projection on every item.
    #[arg(long)]
    no_small_loss: bool,
    #[arg(long, default_value_t = 100)]
    projection_epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Modality tags of the inputs, in order.
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("v"), String::from("t")])]
    modalities: Vec<String>,
    #[arg(long)]
    provenance: Option<PathBuf>,
    /// Anchor table (MMF1, written by `train --anchors`).
    anchors: PathBuf,
    /// Input tables followed by the same number of output paths.
    #[arg(num_args = 2..)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct EditEdgesArgs {
    #[arg(long)]
    op: String,
    #[arg(long, default_value_t = 0.05)]
    r: f64,
    #[arg(long, default_value = "both")]
    target: String,
    #[arg(long, default_value_t = 10)]
    k_user: usize,
    #[arg(long, default_value_t = 10)]
    k_item: usize,
    /// LightGCN checkpoint trained on the split's training edges.
    prior: PathBuf,
    split: PathBuf,
    out_plan: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "lightgcn")]
    backbone: String,
    /// `tag=path` feature tables (vbpr, modality_knn).
    #[arg(long = "features")]
    features: Vec<String>,
    #[arg(long, default_value_t = 10)]
    knn_k: usize,
    /// Edit plan applied before training / used for the current-positives filter.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 2048)]
    batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 30)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the normalized item anchors (MMF1) of a LightGCN model.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Output directory (model.ckpt, history.csv).
    #[arg(long)]
    out: PathBuf,
    split: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20])]
    ks: Vec<usize>,
    #[arg(long, default_value = "original_positives")]
    policy: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    checkpoint: PathBuf,
    split: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    config: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    axis: String,
    /// Axis values (defaults to the axis grid).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Vec<f64>,
    /// Seeds (defaults to the config's `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Long-format CSV output (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mean/sd per group.
    #[arg(long)]
    aggregate: Option<PathBuf>,
    /// Bundle directories or roots searched for bundles.
    #[arg(required = true)]
    bundles: Vec<PathBuf>,
}

fn parse<T: std::str::FromStr<Err = trustrec::Error>>(what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|e| config_error(format!("{what}: {e}")))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        trustrec::Error::Io { .. } => config_error(e.to_string()),
        other => other.into(),
    })
}

fn feature_tables(specs: &[String], num_items: usize) -> Result<Vec<FeatureTable>> {
    specs
        .iter()
        .map(|spec| {
            let (tag, path) = spec
                .split_once('=')
                .ok_or_else(|| config_error(format!("--features expects tag=path, got `{spec}`")))?;
            Ok(load_features(Path::new(path), tag, Some(num_items))?)
        })
        .collect()
}

fn read_plan(path: &Path) -> Result<EditPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(EditPlan::from_tsv(&text)?)
}

/// The split used for training/evaluation and the propagation edges after
/// an optional plan.
fn edited_split(split: &SplitDataset, plan: Option<&PathBuf>) -> Result<(SplitDataset, InteractionSet)> {
    let Some(path) = plan else {
        return Ok((split.clone(), split.train.clone()));
    };
    let plan = read_plan(path)?;
    let (supervision, propagation) = apply_edit(split, &plan)?;
    let mut edited = split.clone();
    edited.train = supervision;
    Ok((edited, propagation))
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let ingested = ingest_interactions(&a.input, a.min_core)?;
    let inter = &ingested.interactions;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    inter.write_tsv(&a.out.join("interactions.tsv"))?;
    write_text(&a.out.join("dims.txt"), &format!("{} {}\n", inter.num_users(), inter.num_items()))?;
    ingested.write_mappings(&a.out, &a.name)?;
    println!("users {} items {} interactions {}", inter.num_users(), inter.num_items(), inter.len());
    Ok(())
}

fn read_dims(dir: &Path) -> Result<(usize, usize)> {
    let path = dir.join("dims.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let v: Vec<usize> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    match v[..] {
        [m, n] => Ok((m, n)),
        _ => bail!("{}: expected `<users> <items>`", path.display()),
    }
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let [train, val, test] = a.ratios[..] else {
        return Err(config_error("--ratios needs three values"));
    };
    let (m, n) = read_dims(&a.input)?;
    let inter = InteractionSet::read_tsv(&a.input.join("interactions.tsv"), m, n)?;
    let split = split_dataset(&inter, SplitRatios { train, val, test }, a.seed).map_err(|e| config_error(e.to_string()))?;
    split.write_dir(&a.out)?;
    println!("train {} val {} test {}", split.train.len(), split.val.len(), split.test.len());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.set("data.synth.modalities", &a.modalities.clone().into())
        .map_err(|e| config_error(e.to_string()))?;
    let spec = SynthSpec {
        num_users: a.num_users,
        num_items: a.num_items,
        latent_dim: a.latent_dim,
        edges_per_user: a.edges_per_user,
        feature_noise_std: a.feature_noise_std,
        modality_dims: cfg.data.synth.modality_dims,
    };
    let data = synth_generate(&spec, a.seed).map_err(|e| config_error(e.to_string()))?;
    data.split.write_dir(&a.out)?;
    for table in &data.features {
        save_features(table, &a.out.join(format!("{}.mmf", table.modality())))?;
    }
    println!(
        "users {} items {} train {} val {} test {}",
        data.split.num_users(),
        data.split.num_items(),
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len()
    );
    Ok(())
}

fn cmd_corrupt_features(a: CorruptFeaturesArgs) -> Result<()> {
    let table = load_features(&a.input, &a.modality, None)?;
    let (corrupted, record) = permute_modality(&table, a.eta, a.seed).map_err(|e| config_error(e.to_string()))?;
    save_features(&corrupted, &a.output)?;
    let audit = a.audit.unwrap_or_else(|| {
        let mut p = a.output.clone().into_os_string();
        p.push(".perm.tsv");
        p.into()
    });
    write_text(&audit, &record.to_tsv())?;
    println!("permuted subset {} rows, moved {}", record.subset.len(), record.moved_rows().len());
    Ok(())
}

fn cmd_corrupt_edges(a: CorruptEdgesArgs) -> Result<()> {
    let split = SplitDataset::read_dir(&a.input)?;
    let noise = corrupt_edges(&split.train, a.eta, a.seed).map_err(|e| {
        if matches!(e, trustrec::Error::InvalidArgument(_)) {
            config_error(e.to_string())
        } else {
            e.into()
        }
    })?;
    let observed = split.with_observed_train(noise.edges.clone())?;
    observed.write_dir(&a.output)?;
    write_text(&a.output.join("edge_noise.tsv"), &noise.to_tsv())?;
    println!("added {} removed {} train {}", noise.added.len(), noise.removed.len(), observed.train.len());
    Ok(())
}

fn cmd_rectify(a: RectifyArgs) -> Result<()> {
    if !a.files.len().is_multiple_of(2) {
        return Err(config_error("rectify expects input tables followed by as many outputs"));
    }
    let half = a.files.len() / 2;
    if a.modalities.len() != half {
        return Err(config_error(format!(
            "{} input tables but {} modality tags",
            half,
            a.modalities.len()
        )));
    }
    let rho = match a.rho {
        Some(rho) => RhoRule::Fixed { rho },
        None => match a.rho_rule.as_str() {
            "clean_fraction" => RhoRule::CleanFraction,
            "literal" => RhoRule::Literal,
            other => return Err(config_error(format!("unknown --rho-rule `{other}`"))),
        },
    };
    let cfg = RectifyConfig {
        rho,
        topk: a.topk,
        tau: a.tau,
        lambda: a.lambda,
        sinkhorn: SinkhornConfig {
            eps: a.sinkhorn_eps,
            max_iter: a.sinkhorn_iters,
            tol: a.sinkhorn_tol,
        },
        use_sinkhorn: !a.no_sinkhorn,
        small_loss: !a.no_small_loss,
        projection: ProjectionConfig {
            epochs: a.projection_epochs,
            seed: a.seed,
            ..ProjectionConfig::default()
        },
    };
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    let anchor_table = load_features(&a.anchors, "anchors", None)?;
    let anchors = AnchorTable::from_feature_table(&anchor_table)?;
    let inputs = a.files[..half]
        .iter()
        .zip(&a.modalities)
        .map(|(p, tag)| load_features(p, tag, Some(anchors.num_rows())))
        .collect::<trustrec::Result<Vec<_>>>()?;
    let etas: Vec<(String, f64)> = a.modalities.iter().map(|t| (t.clone(), a.eta_m)).collect();
    let out = rectify_with_anchors(&anchors, &inputs, &etas, &cfg)?;
    for (table, path) in out.features.iter().zip(&a.files[half..]) {
        save_features(table, path)?;
    }
    let prov = serde_json::to_string_pretty(&out.provenance)?;
    match &a.provenance {
        Some(path) => write_text(path, &(prov + "\n"))?,
        None => println!("{prov}"),
    }
    Ok(())
}

fn cmd_edit_edges(a: EditEdgesArgs) -> Result<()> {
    let op: EditOp = parse("--op", &a.op)?;
    let target: EditTarget = parse("--target", &a.target)?;
    let split = SplitDataset::read_dir(&a.split)?;
    let mut prior = load_checkpoint(&a.prior, &[], ModelShape::default().knn_k)?;
    if prior.kind() != BackboneKind::Lightgcn {
        return Err(config_error(format!("the prior must be a lightgcn checkpoint, got {}", prior.kind())));
    }
    prior.propagate(&build_norm_adjacency(&split.train))?;
    let provenance = EditProvenance {
        prior: a.prior.display().to_string(),
        k_user: a.k_user,
        k_item: a.k_item,
    };
    let plan = match op {
        EditOp::Prune => prune_edges(&split.train, &prior, a.r, provenance),
        EditOp::Complete => complete_edges(&split.train, &prior, a.r, a.k_user, a.k_item, &split.holdout(), provenance),
    }
    .map_err(|e| config_error(e.to_string()))?
    .with_target(target);
    write_text(&a.out_plan, &plan.to_tsv())?;
    println!("{} plan: {} removals, {} additions", op, plan.removals.len(), plan.additions.len());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let kind: BackboneKind = parse("--backbone", &a.model.backbone)?;
    let split = SplitDataset::read_dir(&a.split)?;
    let features = feature_tables(&a.model.features, split.num_items())?;
    let (train_split, propagation) = edited_split(&split, a.model.plan.as_ref())?;
    let shape = ModelShape {
        dim: a.dim,
        layers: a.layers,
        knn_k: a.model.knn_k,
    };
    let config = TrainConfig {
        lr: a.lr,
        l2: a.l2,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| config_error(e.to_string()))?;
    let model = EmbeddingModel::new(kind, split.num_users(), split.num_items(), shape, &features, a.seed)
        .map_err(|e| config_error(e.to_string()))?;
    let (model, history) = train(model, &train_split, &config, Some(&propagation))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_checkpoint(&model, &a.out.join("model.ckpt"))?;
    write_text(&a.out.join("history.csv"), &history.to_csv(config.eval_k))?;
    if let Some(path) = &a.anchors {
        if kind != BackboneKind::Lightgcn {
            return Err(config_error("--anchors needs the lightgcn backbone"));
        }
        save_features(&anchors_from_model(&model)?.to_feature_table()?, path)?;
    }
    println!(
        "epochs {} best epoch {} best val recall@{} {:.6}",
        history.records.len(),
        history.best_epoch,
        config.eval_k,
        history.best_val_recall
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let policy: FilterPolicy = parse("--policy", &a.policy)?;
    let split = SplitDataset::read_dir(&a.split)?;
    let features = feature_tables(&a.model.features, split.num_items())?;
    let (eval_split, propagation) = edited_split(&split, a.model.plan.as_ref())?;
    let mut model = load_checkpoint(&a.checkpoint, &features, a.model.knn_k)?;
    model.propagate(&build_norm_adjacency(&propagation))?;
    let report = evaluate(&model.scoring_view()?, &eval_split, &a.ks, policy);
    let body = serde_json::to_string_pretty(&report.to_json())? + "\n";
    match &a.out {
        Some(path) => write_text(path, &body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if a.out.is_some() {
        cfg.output_dir = a.out;
    }
    let bundle = run_experiment(&cfg)?;
    print!("{}", bundle.metrics_json());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let axis: SweepAxis = a.axis.parse().map_err(|e: trustrec::Error| config_error(e.to_string()))?;
    let mut cfg = load_config(&a.config)?;
    if a.out.is_some() {
        cfg.output_dir = a.out;
    }
    let values = if a.values.is_empty() { axis.default_values() } else { a.values };
    let seeds = if a.seeds.is_empty() { cfg.seeds.clone() } else { a.seeds };
    let table = sweep(&cfg, axis, &values, &seeds)?;
    print!("{}", table.summary_csv());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut bundles = Vec::new();
    for root in &a.bundles {
        let found = find_bundles(root)?;
        if found.is_empty() {
            return Err(config_error(format!("no bundles (metrics.json) under {}", root.display())));
        }
        bundles.extend(found);
    }
    let table = report(&bundles)?;
    match &a.out {
        Some(path) => write_text(path, &table.to_csv())?,
        None => print!("{}", table.to_csv()),
    }
    if let Some(path) = &a.aggregate {
        write_text(path, &table.aggregate_csv())?;
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Split(a) => cmd_split(a),
        Command::Synth(a) => cmd_synth(a),
        Command::CorruptFeatures(a) => cmd_corrupt_features(a),
        Command::CorruptEdges(a) => cmd_corrupt_edges(a),
        Command::Rectify(a) => cmd_rectify(a),
        Command::EditEdges(a) => cmd_edit_edges(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<trustrec::Error>() {
            return if e.is_config() { 2 } else { 3 };
        }
    }
    3
}

/// Outer messages that already embed their cause are not repeated.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", render(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
