//! `kidforge` command line: flags, optional TOML config file, and one
//! function per subcommand. Exit status 0 on success, 2 on usage or
//! configuration errors, 1 on runtime errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cluster::{fit_make_centroids, MakeSet};
use crate::error::{Error, Result};
use crate::eval::synthetic::{generate_synthetic_federation, SyntheticSpec};
use crate::eval::{ablation_run, config_hash, held_out_eval, synthetic_ablation, AblationStage, EvalReport, LabelingConfig};
use crate::expert::TrainConfig;
use crate::features::{FeatureStore, CODEC_ID, DEFAULT_QUALITY_FACTORS};
use crate::kid::{build_kid, kid_stats, BuildMeta};
use crate::schema::{parse_manifest_unchecked, partition_by_annotation, validate_federation, AnnotationKind, Federation, GlobalSchema};
use crate::team::{build_team, decisions_to_jsonl, label_dataset, Team, ThresholdMode, VoteMode};

#[derive(Debug, Parser)]
#[command(name = "kidforge", version, about = "Label federated vehicle datasets into one knowledge-integrated dataset")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
    /// TOML file with defaults for any flag; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Check manifests against the schema and print the violation report.
    Validate,
    /// Train one team per categorical annotation and save it under --out.
    TrainTeam,
    /// Label every dataset that lacks an annotation.
    Label,
    /// Union all datasets and fill annotation gaps.
    BuildKid,
    /// Hold out each annotated dataset in turn and score its labels.
    EvalHeldout,
    /// Run the mitigation ladder.
    Ablate,
    /// Write a synthetic federation under --out.
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Md,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct Opts {
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Dataset manifest; repeat for each dataset.
    #[arg(long, global = true)]
    manifest: Vec<PathBuf>,
    /// Feature table for the manifest at the same position.
    #[arg(long, global = true)]
    features: Vec<PathBuf>,
    /// Annotations to process; defaults to all in the schema.
    #[arg(long, global = true, value_delimiter = ',')]
    annotation: Vec<String>,
    #[arg(long, global = true)]
    bag_count: Option<usize>,
    #[arg(long, global = true)]
    bootstrap: Option<bool>,
    #[arg(long, global = true)]
    early_stopping: Option<bool>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    finetune_lr_factor: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    min_delta: Option<f64>,
    /// JPEG quality factor of a compression view; repeatable.
    #[arg(long, global = true)]
    qf: Vec<u8>,
    #[arg(long, global = true, value_parser = ["weighted", "unweighted"])]
    vote: Option<String>,
    #[arg(long, global = true, value_parser = ["dynamic", "fixed", "off"])]
    threshold: Option<String>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of seeds, counting up from --seed; `ablate` defaults to 10.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// `all`, a count, or a comma-separated ladder prefix.
    #[arg(long, global = true)]
    stages: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Report format; both are written when unset.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Synthetic preset: `default`/`images`, `features` or `makes`.
    #[arg(long, global = true)]
    synthetic: Option<String>,
    /// Make cluster radius; defaults to the 95th percentile of intra-make distances.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Directory of teams saved by `train-team`; teams are trained when unset.
    #[arg(long, global = true)]
    teams: Option<PathBuf>,
    /// Also write per-sample decisions.
    #[arg(long, global = true)]
    dump_decisions: bool,
}

impl Opts {
    /// Flag values with `file` filling whatever the flags leave unset.
    fn merge(self, file: Opts) -> Opts {
        fn vec_or<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
            if a.is_empty() {
                b
            } else {
                a
            }
        }
        Opts {
            schema: self.schema.or(file.schema),
            manifest: vec_or(self.manifest, file.manifest),
            features: vec_or(self.features, file.features),
            annotation: vec_or(self.annotation, file.annotation),
            bag_count: self.bag_count.or(file.bag_count),
            bootstrap: self.bootstrap.or(file.bootstrap),
            early_stopping: self.early_stopping.or(file.early_stopping),
            max_epochs: self.max_epochs.or(file.max_epochs),
            learning_rate: self.learning_rate.or(file.learning_rate),
            finetune_lr_factor: self.finetune_lr_factor.or(file.finetune_lr_factor),
            batch_size: self.batch_size.or(file.batch_size),
            patience: self.patience.or(file.patience),
            min_delta: self.min_delta.or(file.min_delta),
            qf: vec_or(self.qf, file.qf),
            vote: self.vote.or(file.vote),
            threshold: self.threshold.or(file.threshold),
            beta: self.beta.or(file.beta),
            seed: self.seed.or(file.seed),
            seeds: self.seeds.or(file.seeds),
            stages: self.stages.or(file.stages),
            out: self.out.or(file.out),
            workers: self.workers.or(file.workers),
            format: self.format.or(file.format),
            synthetic: self.synthetic.or(file.synthetic),
            tau: self.tau.or(file.tau),
            teams: self.teams.or(file.teams),
            dump_decisions: self.dump_decisions || file.dump_decisions,
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn seed_list(&self, command: Command) -> Vec<u64> {
        let default = if command == Command::Ablate { 10 } else { 1 };
        let base = self.seed();
        (0..self.seeds.unwrap_or(default) as u64).map(|i| base + i).collect()
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("kidforge-out"))
    }

    fn quality_factors(&self) -> Vec<u8> {
        if self.qf.is_empty() {
            DEFAULT_QUALITY_FACTORS.to_vec()
        } else {
            self.qf.clone()
        }
    }

    fn labeling(&self) -> Result<LabelingConfig> {
        let d = TrainConfig::default();
        let train = TrainConfig {
            bag_count: self.bag_count.unwrap_or(d.bag_count),
            bootstrap: self.bootstrap.unwrap_or(d.bootstrap),
            early_stopping: self.early_stopping.unwrap_or(d.early_stopping),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            finetune_lr_factor: self.finetune_lr_factor.unwrap_or(d.finetune_lr_factor),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            patience: self.patience.unwrap_or(d.patience),
            min_delta: self.min_delta.unwrap_or(d.min_delta),
            seed: self.seed(),
        };
        train.validate()?;
        let base = LabelingConfig::default();
        let beta = self.beta.unwrap_or(base.beta);
        if !(beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        Ok(LabelingConfig {
            train,
            vote_mode: self.vote.as_deref().map(str::parse::<VoteMode>).transpose()?.unwrap_or(base.vote_mode),
            threshold_mode: self.threshold.as_deref().map(str::parse::<ThresholdMode>).transpose()?.unwrap_or(base.threshold_mode),
            max_compressed_views: None,
            beta,
        })
    }

    fn synthetic_spec(&self, name: &str) -> Result<SyntheticSpec> {
        let seed = self.seed();
        let mut spec = match name {
            "default" | "images" => SyntheticSpec::images_default(seed),
            "features" => SyntheticSpec::features_default(seed),
            "makes" => SyntheticSpec::makes_default(seed),
            other => return Err(Error::Config(format!("unknown synthetic preset `{other}`"))),
        };
        if !self.qf.is_empty() && !spec.quality_factors.is_empty() {
            spec.quality_factors = self.qf.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Machine-readable record of one invocation, written to `<out>/run.json`.
#[derive(Debug, Serialize)]
struct RunMeta<'a> {
    command: Command,
    config_hash: String,
    seed: u64,
    seeds: Vec<u64>,
    codec: &'a str,
    version: &'a str,
    timestamp_unix: u64,
    outputs: Vec<String>,
}

struct Ctx {
    command: Command,
    opts: Opts,
    out: PathBuf,
    outputs: Vec<String>,
}

impl Ctx {
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    /// Hash of everything that affects outputs; location and worker count do not.
    fn hash(&self) -> String {
        let opts = Opts { out: None, workers: None, ..self.opts.clone() };
        config_hash(&(self.command, &opts))
    }

    fn write_run_meta(&self) -> Result<()> {
        let meta = RunMeta {
            command: self.command,
            config_hash: self.hash(),
            seed: self.opts.seed(),
            seeds: self.opts.seed_list(self.command),
            codec: CODEC_ID,
            version: env!("CARGO_PKG_VERSION"),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            outputs: self.outputs.clone(),
        };
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(self.out.join("run.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    fn write_report(&mut self, stem: &str, report: &EvalReport) -> Result<()> {
        let report = EvalReport { config_hash: self.hash(), ..report.clone() };
        if self.opts.format != Some(Format::Md) {
            self.write(&format!("{stem}.csv"), &report.to_csv())?;
        }
        if self.opts.format != Some(Format::Csv) {
            self.write(&format!("{stem}.md"), &report.to_markdown())?;
        }
        Ok(())
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", path.display())))
    }
}

/// Schema and manifests from the flags, with `--features` tables assigned
/// to every sample of the manifest at the same position.
fn load_federation(opts: &Opts) -> Result<Federation> {
    let schema_path = opts.schema.as_ref().ok_or_else(|| Error::Config("--schema is required".into()))?;
    require_file(schema_path, "schema")?;
    if opts.manifest.is_empty() {
        return Err(Error::Config("at least one --manifest is required".into()));
    }
    if !opts.features.is_empty() && opts.features.len() != opts.manifest.len() {
        return Err(Error::Config(format!(
            "{} --features for {} --manifest; give one per manifest or none",
            opts.features.len(),
            opts.manifest.len()
        )));
    }
    let schema = GlobalSchema::load(schema_path)?;
    let mut datasets = Vec::with_capacity(opts.manifest.len());
    for (i, path) in opts.manifest.iter().enumerate() {
        require_file(path, "manifest")?;
        let mut d = parse_manifest_unchecked(path)?;
        if let Some(table) = opts.features.get(i) {
            require_file(table, "feature table")?;
            let abs = std::path::absolute(table)?.to_string_lossy().into_owned();
            for s in &mut d.samples {
                s.feature_ref = Some(abs.clone());
            }
        }
        datasets.push(d);
    }
    Federation::new(schema, datasets)
}

fn checked_federation(opts: &Opts) -> Result<(Federation, FeatureStore)> {
    let fed = load_federation(opts)?;
    let report = validate_federation(&fed);
    if !report.is_valid() {
        return Err(Error::Schema(report.render()));
    }
    let store = FeatureStore::from_federation(&fed, &opts.quality_factors())?;
    Ok((fed, store))
}

fn annotations_of(opts: &Opts, schema: &GlobalSchema, kind: Option<AnnotationKind>) -> Result<Vec<String>> {
    if opts.annotation.is_empty() {
        return Ok(schema.annotations().iter().filter(|a| kind.is_none_or(|k| a.kind == k)).map(|a| a.name.clone()).collect());
    }
    for k in &opts.annotation {
        if schema.get(k).is_none() {
            return Err(Error::Config(format!("annotation `{k}` is not in the schema")));
        }
    }
    Ok(opts.annotation.clone())
}

fn single_annotation(opts: &Opts, schema: &GlobalSchema) -> Result<String> {
    match annotations_of(opts, schema, Some(AnnotationKind::Categorical))?.as_slice() {
        [k] => Ok(k.clone()),
        [] => Err(Error::Config("no categorical annotation to evaluate".into())),
        _ => Err(Error::Config("pass exactly one --annotation".into())),
    }
}

fn obtain_team(opts: &Opts, cfg: &LabelingConfig, k: &str, fed: &Federation, store: &FeatureStore) -> Result<Team> {
    let mut team = match &opts.teams {
        Some(dir) => Team::load(&dir.join(k))?,
        None => build_team(k, fed, store, &cfg.train)?,
    };
    cfg.apply(&mut team);
    Ok(team)
}

fn run_validate(ctx: &mut Ctx) -> Result<bool> {
    let fed = load_federation(&ctx.opts)?;
    let report = validate_federation(&fed);
    let text = report.render();
    print!("{text}");
    ctx.write("validation.txt", &text)?;
    Ok(report.is_valid())
}

fn run_train_team(ctx: &mut Ctx) -> Result<bool> {
    let (fed, store) = checked_federation(&ctx.opts)?;
    let cfg = ctx.opts.labeling()?;
    for k in annotations_of(&ctx.opts, &fed.schema, Some(AnnotationKind::Categorical))? {
        let mut team = build_team(&k, &fed, &store, &cfg.train)?;
        cfg.apply(&mut team);
        for (rel, contents) in team.files() {
            ctx.write(&format!("teams/{k}/{rel}"), &contents)?;
        }
        println!("{k}: {} members, version {}", team.size(), team.version());
    }
    Ok(true)
}

fn run_label(ctx: &mut Ctx) -> Result<bool> {
    let (fed, store) = checked_federation(&ctx.opts)?;
    let cfg = ctx.opts.labeling()?;
    let hash = ctx.hash();
    for k in annotations_of(&ctx.opts, &fed.schema, Some(AnnotationKind::Categorical))? {
        let part = partition_by_annotation(&fed, &k)?;
        if part.unannotated.is_empty() {
            println!("{k}: every dataset already carries it");
            continue;
        }
        let team = obtain_team(&ctx.opts, &cfg, &k, &fed, &store)?;
        for d in &part.unannotated {
            let decisions = label_dataset(&team, d, &store)?;
            let assigned = decisions.iter().filter(|x| x.label().is_some()).count();
            let header = serde_json::json!({ "annotation": k, "dataset_id": d.dataset_id, "config_hash": hash, "seed": cfg.train.seed, "team_version": team.version() });
            ctx.write(&format!("labels/{k}/{}.jsonl", d.dataset_id), &format!("{header}\n{}", decisions_to_jsonl(&decisions)))?;
            println!("{k} -> {}: assigned {assigned}/{}", d.dataset_id, decisions.len());
        }
    }
    Ok(true)
}

fn run_build_kid(ctx: &mut Ctx) -> Result<bool> {
    let (fed, store) = checked_federation(&ctx.opts)?;
    let cfg = ctx.opts.labeling()?;
    if ctx.opts.tau.is_some_and(|t| !(t > 0.0)) {
        return Err(Error::Config("tau must be positive".into()));
    }
    let mut teams = BTreeMap::new();
    let mut cluster_model = None;
    for spec in fed.schema.annotations() {
        let k = spec.name.as_str();
        if fed.datasets.iter().all(|d| d.samples.iter().all(|s| s.label(k).is_some())) {
            continue;
        }
        let part = partition_by_annotation(&fed, k)?;
        match spec.kind {
            AnnotationKind::Categorical => {
                teams.insert(k.to_string(), obtain_team(&ctx.opts, &cfg, k, &fed, &store)?);
            }
            AnnotationKind::Cluster => {
                let sets: Vec<MakeSet<'_>> = part
                    .annotated
                    .iter()
                    .map(|d| {
                        let samples = d
                            .samples
                            .iter()
                            .filter_map(|s| s.label(k).map(|l| Ok((store.get(&d.dataset_id, &s.sample_id)?.original(), l))))
                            .collect::<Result<_>>()?;
                        Ok(MakeSet { dataset_id: d.dataset_id.clone(), samples })
                    })
                    .collect::<Result<_>>()?;
                cluster_model = Some(fit_make_centroids(&sets, ctx.opts.tau)?);
            }
        }
    }
    let meta = BuildMeta { seeds: vec![cfg.train.seed], config_hash: ctx.hash(), codec: CODEC_ID.to_string() };
    let kid = build_kid(&fed, &teams, cluster_model.as_ref(), &store, meta)?;
    ctx.write("kid.jsonl", &kid.to_jsonl())?;
    ctx.write("kid_summary.json", &kid.summary_json())?;
    let stats = kid_stats(&kid);
    for (k, c) in &stats.per_annotation {
        println!("{k}: original {} inferred {} abstained {} coverage {:.4}", c.original, c.inferred, c.abstained, c.coverage());
    }
    Ok(true)
}

fn run_eval_heldout(ctx: &mut Ctx) -> Result<bool> {
    let (fed, store) = checked_federation(&ctx.opts)?;
    let cfg = ctx.opts.labeling()?;
    let k = single_annotation(&ctx.opts, &fed.schema)?;
    let result = held_out_eval(&k, &fed, &store, &cfg)?;
    ctx.write_report("heldout", &result.report)?;
    ctx.write("heldout_rounds.json", &(serde_json::to_string_pretty(&result.rounds)? + "\n"))?;
    if ctx.opts.dump_decisions {
        let lines: String = result.decisions.iter().map(|d| serde_json::to_string(d).map(|s| s + "\n")).collect::<std::result::Result<_, _>>()?;
        ctx.write("heldout_decisions.jsonl", &lines)?;
    }
    print!("{}", result.report.to_markdown());
    Ok(true)
}

fn run_ablate(ctx: &mut Ctx) -> Result<bool> {
    let cfg = ctx.opts.labeling()?;
    let stages = AblationStage::parse_list(ctx.opts.stages.as_deref().unwrap_or("all"))?;
    let seeds = ctx.opts.seed_list(Command::Ablate);
    let result = match ctx.opts.synthetic.clone() {
        Some(name) => {
            let spec = ctx.opts.synthetic_spec(&name)?;
            synthetic_ablation(&spec, &stages, &seeds, &cfg)?
        }
        None => {
            let (fed, store) = checked_federation(&ctx.opts)?;
            let k = single_annotation(&ctx.opts, &fed.schema)?;
            ablation_run(&k, &fed, &store, &stages, &seeds, &cfg)?
        }
    };
    ctx.write_report("ablation", &result.report)?;
    if ctx.opts.dump_decisions {
        let lines: String = result.decisions.iter().map(|d| serde_json::to_string(d).map(|s| s + "\n")).collect::<std::result::Result<_, _>>()?;
        ctx.write("ablation_decisions.jsonl", &lines)?;
    }
    print!("{}", result.report.to_markdown());
    Ok(true)
}

fn run_synth(ctx: &mut Ctx) -> Result<bool> {
    let name = ctx.opts.synthetic.clone().unwrap_or_else(|| "features".into());
    let spec = ctx.opts.synthetic_spec(&name)?;
    let synth = generate_synthetic_federation(&spec)?;
    synth.export(&ctx.out)?;
    ctx.outputs.push("schema.json".into());
    let spec_json = serde_json::to_string_pretty(&spec)? + "\n";
    ctx.write("synthetic_spec.json", &spec_json)?;
    println!("wrote {} datasets, {} samples to {}", synth.federation.datasets.len(), synth.federation.total_samples(), ctx.out.display());
    Ok(true)
}

fn run(command: Command, opts: Opts) -> Result<bool> {
    let mut ctx = Ctx { command, out: opts.out(), opts, outputs: Vec::new() };
    let outcome = match command {
        Command::Validate => run_validate(&mut ctx),
        Command::TrainTeam => run_train_team(&mut ctx),
        Command::Label => run_label(&mut ctx),
        Command::BuildKid => run_build_kid(&mut ctx),
        Command::EvalHeldout => run_eval_heldout(&mut ctx),
        Command::Ablate => run_ablate(&mut ctx),
        Command::Synth => run_synth(&mut ctx),
    };
    ctx.write_run_meta()?;
    outcome
}

fn load_config_file(path: &Path) -> Result<Opts> {
    require_file(path, "config file")?;
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("KIDFORGE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        2
    } else {
        1
    }
}

/// Parse `args` (program name first), run the subcommand and return the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let opts = match cli.config.as_deref().map(load_config_file).transpose() {
        Ok(file) => cli.opts.merge(file.unwrap_or_default()),
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let workers = opts.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| run(cli.command, opts)) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
