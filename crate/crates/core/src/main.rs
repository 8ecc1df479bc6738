use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ea_core::augment::{
    export_training_manifest, partition_with_source, register_augmented_model, AssmRegistration,
    ManifestVariant, PartitionOptions, PartitionResult, SsmCriterion, TrainingManifest,
};
use ea_core::backends::{
    BackendSource, CostProfile, HttpEndpoint, Layer, OfflineSource, PredictionSource,
};
use ea_core::config::{AssmEntry, RunConfig};
use ea_core::dataset::{DatasetBundle, Split};
use ea_core::metrics::{compute_report, render_report, MetricsReport, ReportFormat};
use ea_core::router::{
    build_plan, calibrate_thresholds, evaluate_backend, read_traces, route_dataset, write_traces,
    CascadePlan, RouteOptions, RouterError, Stage,
};
use ea_core::simulator::{generate_world, WorldConfig};
use ea_core::Error;

#[derive(Debug, Parser)]
#[command(name = "ea", version, about = "Confidence-gated model cascades")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the summary line as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for routing and generation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the dataset.
    Ingest,
    /// Accuracy of one or all backends on a split.
    EvalBackend {
        #[arg(long)]
        backend: Option<String>,
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Rank the specific and augmented models and write a plan.
    Rank {
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Sweep a global threshold and write the calibrated plan.
    Calibrate {
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        plan: PlanArg,
    },
    /// Route a split through the cascade and report.
    Route {
        #[arg(long, default_value = "test")]
        split: Split,
        /// Override every specific-stage threshold.
        #[arg(long)]
        tau: Option<f64>,
        /// Record failing examples and keep going.
        #[arg(long)]
        skip_errors: bool,
        #[command(flatten)]
        plan: PlanArg,
    },
    /// Split the train set into fitted and underfitted examples.
    Partition {
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, value_enum)]
        criterion: Option<CriterionArg>,
        /// Query the large model on every example, enabling the ea_full manifest.
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        plan: PlanArg,
    },
    /// Write the training manifest for a partition.
    ExportManifest {
        #[arg(long, default_value = "ea")]
        variant: ManifestVariant,
        /// Partition file; defaults to partition.json in the output directory.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArg,
    },
    /// Register a trained augmented model against its manifest.
    RegisterAssm(RegisterArgs),
    /// Recompute a report from a traces file.
    Report {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[command(flatten)]
        plan: PlanArg,
    },
    /// Generate a synthetic world and a runnable config for it.
    Simulate {
        #[arg(long, conflicts_with = "world", required_unless_present = "world")]
        preset: Option<String>,
        /// World config (TOML).
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct PlanArg {
    /// Plan file; defaults to the config's plan, then the calibrated or
    /// ranked plan in the output directory.
    #[arg(long = "plan")]
    path: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long)]
    id: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    provenance: String,
    /// Offline predictions file.
    #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
    predictions: Option<PathBuf>,
    /// Chat-completion endpoint URL.
    #[arg(long, requires_all = ["model", "template"])]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    template: Option<String>,
    /// Threshold of the new augmented stage.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Large-model threshold, when the plan has none yet.
    #[arg(long)]
    tau2: Option<f64>,
    #[command(flatten)]
    plan: PlanArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    RoutedOutput,
    AllSsms,
}

impl From<CriterionArg> for SsmCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::RoutedOutput => SsmCriterion::RoutedOutput,
            CriterionArg::AllSsms => SsmCriterion::AllSsms,
        }
    }
}

/// What a subcommand did: a one-line message plus machine-readable fields.
struct Summary {
    message: String,
    fields: Value,
    artifacts: Vec<PathBuf>,
}

struct Ctx {
    config: Option<RunConfig>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn config(&self) -> Result<&RunConfig, Error> {
        self.config
            .as_ref()
            .ok_or(Error::Config(ea_core::config::ConfigError::Missing("--config")))
    }

    fn out_dir(&self) -> Result<PathBuf, Error> {
        match (&self.out, &self.config) {
            (Some(out), _) => Ok(out.clone()),
            (None, Some(c)) => Ok(c.output_dir.clone()),
            (None, None) => Ok(PathBuf::from("out")),
        }
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, Error> {
        let dir = self.out_dir()?;
        let path = dir.join(name);
        fs::create_dir_all(&dir)
            .and_then(|_| fs::write(&path, bytes))
            .map_err(|source| RouterError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(path)
    }

    /// `--plan`, then the config's plan, then the calibrated or ranked plan
    /// previously written to the output directory.
    fn plan(&self, arg: &PlanArg) -> Result<(CascadePlan, PathBuf), Error> {
        let config = self.config()?;
        let out = self.out_dir()?;
        let candidates = [
            arg.path.clone(),
            config.plan.clone(),
            Some(out.join("plan.calibrated.toml")),
            Some(out.join("plan.toml")),
        ];
        for path in candidates.into_iter().flatten() {
            if arg.path.as_ref() == Some(&path) || config.plan.as_ref() == Some(&path) || path.exists() {
                return Ok((CascadePlan::load(&path)?, path));
            }
        }
        Err(ea_core::config::ConfigError::Missing("plan (run `ea rank` first or pass --plan)").into())
    }
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn split_counts(bundle: &DatasetBundle) -> Value {
    json!({
        "train": bundle.split(Split::Train).len(),
        "val": bundle.split(Split::Val).len(),
        "test": bundle.split(Split::Test).len(),
    })
}

fn ingest(ctx: &Ctx) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let slices = config.slices(&bundle).ok();
    let body = json!({
        "content_hash": bundle.provenance().content_hash,
        "labels": bundle.label_space().labels(),
        "splits": split_counts(&bundle),
        "train_class_counts": bundle.train_class_counts(),
        "slices": slices,
    });
    let path = ctx.write("ingest.json", pretty(&body))?;
    Ok(Summary {
        message: format!(
            "ingested {} examples (train {}, val {}, test {}) over {} labels",
            bundle.len(),
            bundle.split(Split::Train).len(),
            bundle.split(Split::Val).len(),
            bundle.split(Split::Test).len(),
            bundle.label_space().len()
        ),
        fields: body,
        artifacts: vec![path],
    })
}

fn eval_backend(ctx: &Ctx, backend: Option<String>, split: Split) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let registry = config.build_registry(&bundle)?;
    let ids: Vec<String> = match backend {
        Some(id) => {
            registry.require(&id)?;
            vec![id]
        }
        None => registry.ids().into_iter().map(String::from).collect(),
    };
    let evals = ids
        .iter()
        .map(|id| evaluate_backend(&registry, id, &bundle, split))
        .collect::<Result<Vec<_>, _>>()?;
    let name = match ids.as_slice() {
        [one] if ids.len() == 1 && registry.ids().len() > 1 => format!("eval_{one}_{}.json", split.as_str()),
        _ => format!("eval_{}.json", split.as_str()),
    };
    let path = ctx.write(&name, pretty(&evals))?;
    let parts: Vec<String> = evals
        .iter()
        .map(|e| format!("{} {:.4}", e.backend_id, e.accuracy))
        .collect();
    Ok(Summary {
        message: format!("{} accuracy: {}", split, parts.join(", ")),
        fields: json!({ "evaluations": evals }),
        artifacts: vec![path],
    })
}

fn rank(ctx: &Ctx, split: Option<Split>, tau: Option<f64>) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let registry = config.build_registry(&bundle)?;
    let c = config.cascade;
    let split = split.unwrap_or(c.rank_split);
    let (plan, evals) = build_plan(
        &registry,
        &bundle,
        split,
        tau.unwrap_or(c.tau),
        c.tau2,
        c.augmented_tau,
    )?;
    let plan_path = ctx.write("plan.toml", plan.to_toml())?;
    let rank_path = ctx.write("ranking.json", pretty(&evals))?;
    let order: Vec<&str> = plan.stages.iter().map(|s| s.backend.as_str()).collect();
    Ok(Summary {
        message: format!(
            "ranked on {split}: {} -> {}",
            order.join(" > "),
            plan.terminal.backend
        ),
        fields: json!({ "order": order, "plan_hash": plan.hash(), "evaluations": evals }),
        artifacts: vec![plan_path, rank_path],
    })
}

fn calibrate(
    ctx: &Ctx,
    split: Option<Split>,
    budget: Option<f64>,
    grid: Option<Vec<f64>>,
    plan_arg: &PlanArg,
) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let registry = config.build_registry(&bundle)?;
    let (skeleton, _) = ctx.plan(plan_arg)?;
    let split = split.unwrap_or(config.calibration.split);
    let budget = budget.or(config.calibration.budget);
    let grid = grid.unwrap_or_else(|| config.calibration.grid.clone());
    let cal = calibrate_thresholds(&skeleton, &registry, &bundle, split, &grid, budget, None)?;
    let plan_path = ctx.write("plan.calibrated.toml", cal.plan.to_toml())?;
    let cal_path = ctx.write("calibration.json", pretty(&cal))?;
    let best = cal
        .sweep
        .iter()
        .find(|p| p.tau == cal.tau)
        .expect("chosen point is in the sweep");
    Ok(Summary {
        message: format!(
            "calibrated on {split}: tau {} (accuracy {:.4}, large model reached {:.2}%)",
            cal.tau,
            best.accuracy,
            best.lm_proportion * 100.0
        ),
        fields: json!({
            "tau": cal.tau,
            "accuracy": best.accuracy,
            "lm_proportion": best.lm_proportion,
            "plan_hash": cal.plan.hash(),
        }),
        artifacts: vec![plan_path, cal_path],
    })
}

fn provenance(report: &mut MetricsReport, bundle: &DatasetBundle, plan: &CascadePlan) {
    report
        .provenance
        .insert("dataset_hash".into(), bundle.provenance().content_hash.clone());
    report.provenance.insert("plan_hash".into(), plan.hash());
}

fn write_report(
    ctx: &Ctx,
    report: &MetricsReport,
    split: Split,
) -> Result<Vec<PathBuf>, Error> {
    Ok(vec![
        ctx.write(
            &format!("report_{}.json", split.as_str()),
            render_report(report, ReportFormat::Json),
        )?,
        ctx.write(
            &format!("report_{}.md", split.as_str()),
            render_report(report, ReportFormat::Markdown),
        )?,
    ])
}

fn report_message(report: &MetricsReport, split: Split) -> String {
    let shares: Vec<String> = report
        .rounded_proportions()
        .into_iter()
        .map(|(id, p)| format!("{id} {p:.2}%"))
        .collect();
    format!(
        "routed {} {} examples: accuracy {:.4}; {}",
        report.n,
        split,
        report.overall_accuracy,
        shares.join(", ")
    )
}

fn route(
    ctx: &Ctx,
    split: Split,
    tau: Option<f64>,
    skip_errors: bool,
    plan_arg: &PlanArg,
) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let registry = config.build_registry(&bundle)?;
    let (mut plan, _) = ctx.plan(plan_arg)?;
    if let Some(tau) = tau {
        plan = plan.with_global_tau(tau);
    }
    let slices = config.slices(&bundle).ok();
    let routed = route_dataset(
        &plan,
        &registry,
        &bundle,
        split,
        slices.as_ref(),
        RouteOptions {
            jobs: None,
            skip_errors,
        },
    )?;
    let mut report = routed.report;
    provenance(&mut report, &bundle, &plan);

    let mut traces = Vec::new();
    write_traces(&mut traces, &routed.outcome.traces).expect("in-memory write");
    let mut artifacts = vec![ctx.write(&format!("traces_{}.jsonl", split.as_str()), traces)?];
    artifacts.extend(write_report(ctx, &report, split)?);
    let failures = &routed.outcome.failures;
    if !failures.is_empty() {
        let lines: String = failures
            .iter()
            .map(|(id, err)| format!("{}\n", json!({ "example_id": id, "error": err })))
            .collect();
        artifacts.push(ctx.write(&format!("failures_{}.jsonl", split.as_str()), lines)?);
    }
    let mut message = report_message(&report, split);
    if !failures.is_empty() {
        message.push_str(&format!("; {} skipped", failures.len()));
    }
    Ok(Summary {
        message,
        fields: json!({
            "n": report.n,
            "accuracy": report.overall_accuracy,
            "proportions": report.rounded_proportions(),
            "skipped": failures.len(),
        }),
        artifacts,
    })
}

fn partition(
    ctx: &Ctx,
    split: Split,
    criterion: Option<CriterionArg>,
    full: bool,
    plan_arg: &PlanArg,
) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let registry = config.build_registry(&bundle)?;
    let (plan, _) = ctx.plan(plan_arg)?;
    let result = partition_with_source(
        &plan,
        &registry,
        &bundle,
        split,
        PartitionOptions {
            criterion: criterion.map_or(config.augment.criterion, Into::into),
            full_lm: full,
            jobs: None,
        },
    )?;
    let path = ctx.write("partition.json", format!("{}\n", result.to_json()))?;
    Ok(Summary {
        message: format!(
            "{} of {} {split} examples underfitted ({} specific-layer errors, {} large-model errors)",
            result.underfitted_ids.len(),
            result.len(),
            result.ssm_error_ids.len(),
            result.lm_error_ids.len()
        ),
        fields: json!({
            "underfitted": result.underfitted_ids.len(),
            "fitted": result.fitted_ids.len(),
            "ssm_errors": result.ssm_error_ids.len(),
            "lm_errors": result.lm_error_ids.len(),
            "partition_hash": result.hash(),
        }),
        artifacts: vec![path],
    })
}

fn export_manifest(
    ctx: &Ctx,
    variant: ManifestVariant,
    partition_path: Option<PathBuf>,
    plan_arg: &PlanArg,
) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let (plan, _) = ctx.plan(plan_arg)?;
    let path = partition_path.unwrap_or(ctx.out_dir()?.join("partition.json"));
    let text = fs::read_to_string(&path).map_err(|source| RouterError::Io {
        path: path.clone(),
        source,
    })?;
    let partition = PartitionResult::from_json(&text)?;
    let export = export_training_manifest(&partition, &bundle, variant, &config.task, &plan.hash())?;
    for w in &export.warnings {
        eprintln!("warning[{}]: {w}", w.name());
    }
    let manifest = &export.manifest;
    let out = ctx.write(&format!("manifest_{variant}.jsonl"), manifest.to_jsonl())?;
    let provenance = manifest.provenance_hash();
    Ok(Summary {
        message: format!(
            "wrote {variant} manifest with {} examples; provenance {provenance}",
            manifest.rows.len()
        ),
        fields: json!({ "rows": manifest.rows.len(), "provenance": provenance }),
        artifacts: vec![out],
    })
}

fn register_assm(ctx: &Ctx, args: &RegisterArgs) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let mut registry = config.build_registry(&bundle)?;
    let manifest = TrainingManifest::load(&args.manifest)?;
    let source = match (&args.predictions, &args.endpoint) {
        (Some(path), _) => BackendSource::Offline(OfflineSource {
            path: path.clone(),
            rows_for: None,
        }),
        (None, Some(url)) => BackendSource::Http(HttpEndpoint::new(
            url.clone(),
            args.model.clone().unwrap_or_default(),
            args.template.clone().unwrap_or_default(),
        )),
        (None, None) => unreachable!("clap requires one source"),
    };
    let registration = AssmRegistration {
        id: args.id.clone(),
        provenance: args.provenance.clone(),
        cost: CostProfile::default(),
        source: source.clone(),
    };
    let descriptor =
        register_augmented_model(&mut registry, registration, &manifest, &config.build_context())?;
    debug_assert_eq!(descriptor.layer, Layer::Augmented);

    let entry = AssmEntry {
        id: args.id.clone(),
        provenance: args.provenance.clone(),
        manifest: args.manifest.clone(),
        cost: descriptor.cost,
        source,
    };
    #[derive(serde::Serialize)]
    struct Entries<'a> {
        assm: [&'a AssmEntry; 1],
    }
    let entry_toml = toml::to_string(&Entries { assm: [&entry] }).expect("entry serialises");
    let mut artifacts = vec![ctx.write(&format!("assm_{}.toml", args.id), entry_toml)?];

    let (mut plan, _) = ctx.plan(&args.plan)?;
    plan.augmented.retain(|s| s.backend != args.id);
    plan.augmented.push(Stage {
        backend: args.id.clone(),
        tau: args.tau,
    });
    if plan.terminal.tau2.is_none() {
        plan.terminal.tau2 = args.tau2.or(config.cascade.tau2);
    }
    plan.validate_with(&registry as &dyn PredictionSource)?;
    artifacts.push(ctx.write(&format!("plan.with_{}.toml", args.id), plan.to_toml())?);
    Ok(Summary {
        message: format!(
            "registered {} in the augmented layer against manifest {}",
            args.id,
            manifest.provenance_hash()
        ),
        fields: json!({ "id": args.id, "plan_hash": plan.hash() }),
        artifacts,
    })
}

fn report(ctx: &Ctx, traces_path: &Path, split: Split, plan_arg: &PlanArg) -> Result<Summary, Error> {
    let config = ctx.config()?;
    let bundle = config.load_dataset()?;
    let (plan, _) = ctx.plan(plan_arg)?;
    let file = fs::File::open(traces_path).map_err(|source| RouterError::Io {
        path: traces_path.to_path_buf(),
        source,
    })?;
    let traces = read_traces(BufReader::new(file))?;
    let examples = bundle
        .non_empty_split(split)
        .map_err(|_| RouterError::EmptySplit(split))?;
    let traced: std::collections::HashSet<&str> =
        traces.iter().map(|t| t.example_id.as_str()).collect();
    // Traces written with --skip-errors omit the failed examples.
    let examples: Vec<_> = examples
        .iter()
        .filter(|ex| traced.contains(ex.id.as_str()))
        .cloned()
        .collect();
    let profiles: std::collections::HashMap<&str, CostProfile> = config
        .backends
        .iter()
        .map(|b| (b.id.as_str(), b.cost))
        .chain(config.assms.iter().map(|a| (a.id.as_str(), a.cost)))
        .collect();
    let costs: Vec<(String, CostProfile)> = plan
        .backend_ids()
        .into_iter()
        .map(|id| (id.to_string(), profiles.get(id).copied().unwrap_or_default()))
        .collect();
    let slices = config.slices(&bundle).ok();
    let mut report = compute_report(
        &traces,
        &examples,
        slices.as_ref(),
        &costs,
        Some(&plan.terminal.backend),
    )?;
    provenance(&mut report, &bundle, &plan);
    let artifacts = write_report(ctx, &report, split)?;
    Ok(Summary {
        message: report_message(&report, split),
        fields: json!({
            "n": report.n,
            "accuracy": report.overall_accuracy,
            "proportions": report.rounded_proportions(),
        }),
        artifacts,
    })
}

fn simulate(
    ctx: &Ctx,
    preset: Option<&str>,
    world: Option<&Path>,
    seed: Option<u64>,
) -> Result<Summary, Error> {
    let mut config = match (preset, world) {
        (Some(name), _) => WorldConfig::preset(name)?,
        (None, Some(path)) => WorldConfig::load(path)?,
        (None, None) => unreachable!("clap requires one of --preset and --world"),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let world = generate_world(&config)?;
    let dir = ctx.out_dir()?;
    let files = world.write(&dir)?;

    // A config that runs the world from the written files; paths are
    // relative to it so the directory can move.
    let mut run = RunConfig::minimal("dataset.jsonl");
    run.task = config.name.clone();
    run.output_dir = PathBuf::from(".");
    run.dataset.labels = Some(PathBuf::from("labels.txt"));
    run.backends = world.offline_descriptors(Path::new("predictions.jsonl"));
    run.cascade.tau = config.cascade.tau;
    run.cascade.tau2 = config.cascade.tau2;
    run.cascade.augmented_tau = config.cascade.augmented_tau;
    run.calibration.budget = config.cascade.budget;
    let config_path = ctx.write("config.toml", run.to_toml())?;

    Ok(Summary {
        message: format!(
            "simulated {} (seed {}): {} examples, {} models",
            config.name,
            config.seed,
            world.bundle.len(),
            world.descriptors.len()
        ),
        fields: json!({
            "name": config.name,
            "seed": config.seed,
            "splits": split_counts(&world.bundle),
            "models": world.descriptors.iter().map(|d| d.id.clone()).collect::<Vec<_>>(),
        }),
        artifacts: vec![files.dataset, files.labels, files.predictions, files.world, config_path],
    })
}

fn dispatch(cli: &Cli) -> Result<(&'static str, Summary), Error> {
    let config = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let ctx = Ctx {
        config,
        out: cli.out.clone(),
    };
    Ok(match &cli.command {
        Command::Ingest => ("ingest", ingest(&ctx)?),
        Command::EvalBackend { backend, split } => {
            ("eval-backend", eval_backend(&ctx, backend.clone(), *split)?)
        }
        Command::Rank { split, tau } => ("rank", rank(&ctx, *split, *tau)?),
        Command::Calibrate {
            split,
            budget,
            grid,
            plan,
        } => ("calibrate", calibrate(&ctx, *split, *budget, grid.clone(), plan)?),
        Command::Route {
            split,
            tau,
            skip_errors,
            plan,
        } => ("route", route(&ctx, *split, *tau, *skip_errors, plan)?),
        Command::Partition {
            split,
            criterion,
            full,
            plan,
        } => ("partition", partition(&ctx, *split, *criterion, *full, plan)?),
        Command::ExportManifest {
            variant,
            partition,
            plan,
        } => (
            "export-manifest",
            export_manifest(&ctx, *variant, partition.clone(), plan)?,
        ),
        Command::RegisterAssm(args) => ("register-assm", register_assm(&ctx, args)?),
        Command::Report {
            traces,
            split,
            plan,
        } => ("report", report(&ctx, traces, *split, plan)?),
        Command::Simulate {
            preset,
            world,
            seed,
        } => (
            "simulate",
            simulate(&ctx, preset.as_deref(), world.as_deref(), *seed)?,
        ),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.config.is_none() && !matches!(cli.command, Command::Simulate { .. }) {
        Cli::command()
            .error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "this subcommand needs --config <CONFIG>",
            )
            .exit();
    }
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match dispatch(&cli) {
        Ok((command, summary)) => {
            if cli.json {
                let mut line = json!({
                    "command": command,
                    "status": "ok",
                    "message": summary.message,
                    "artifacts": summary.artifacts,
                });
                line["details"] = summary.fields;
                println!("{line}");
            } else {
                println!("{}", summary.message);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                println!(
                    "{}",
                    json!({
                        "status": "error",
                        "error": e.name(),
                        "module": e.module(),
                        "message": e.to_string(),
                    })
                );
            }
            eprintln!("error[{}] ({}): {e}", e.name(), e.module());
            ExitCode::from(1)
        }
    }
}
