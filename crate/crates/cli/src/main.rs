use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use netcf::ccv::{mse_loss, run_ccv, CandidateConfig};
use netcf::dpnb::{create_training_batches, create_validation_batches};
use netcf::envs::{simulate, EnvConfig};
use netcf::estimators::{bcmp_estimate, dm, estimate, ht, EstimatorId};
use netcf::harness::export::{export, write_text};
use netcf::harness::{
    counterfactual_tte, default_grid, dm_sweep, run_benchmark, ExperimentConfig, Format, Record, SweepConfig,
};
use netcf::panel::{read_panel, read_treatment, Envelope};
use netcf::{compute_tte, generate_staggered_design, rng, ExperimentDesign, OutcomePanel, TreatmentMatrix};

#[derive(Parser, Debug)]
#[command(name = "netcf", version, about = "Counterfactual estimation under network interference")]
struct Cli {
    /// Experiment config (JSON or TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Table format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: FormatArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Sigma,
    Mu,
}

/// Observed data read from files instead of simulated from the config.
#[derive(clap::Args, Debug)]
struct DataArgs {
    /// Observed outcome panel (.csv or JSON).
    #[arg(long, requires = "treatment")]
    panel: Option<PathBuf>,
    /// Observed treatment matrix (.csv or JSON).
    #[arg(long, requires = "panel")]
    treatment: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a staggered allocation and simulate the observed panel.
    Simulate,
    /// All-treated and all-control counterfactual evolutions from one estimator.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// Estimator id; overrides the config's `estimator.estimator`.
        #[arg(long)]
        estimator: Option<EstimatorId>,
    },
    /// Counterfactual cross-validation over the configured candidate grid.
    Ccv {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Difference-in-means bias/variance sweep.
    DmSweep {
        /// Built-in sweep used when the config has no `sweep` section.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Repeated runs comparing CMP, bCMP, DM and HT against the ground truth.
    Benchmark,
    /// Total treatment effect estimates, or the exact TTE of two panels.
    Tte {
        #[command(flatten)]
        data: DataArgs,
        /// All-treated panel; with `--control`, prints the exact TTE.
        #[arg(long, requires = "control")]
        treated: Option<PathBuf>,
        /// All-control panel.
        #[arg(long, requires = "treated")]
        control: Option<PathBuf>,
        /// Number of final periods averaged (defaults to the last stage).
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRecord {
    t: usize,
    observed: f64,
    treated: f64,
    control: f64,
}

impl Record for SeriesRecord {
    const COLUMNS: &'static [&'static str] = &["t", "observed", "treated", "control"];
}

#[derive(Debug, Serialize, Deserialize)]
struct TteRecord {
    estimator: String,
    tte: Option<f64>,
    detail: Option<String>,
}

impl Record for TteRecord {
    const COLUMNS: &'static [&'static str] = &["estimator", "tte", "detail"];
}

struct Session {
    doc: ExperimentConfig,
    seed: Option<u64>,
    out: PathBuf,
    format: Format,
}

impl Session {
    fn env(&self) -> Result<EnvConfig> {
        let mut env = self.doc.require_env()?.clone();
        if let Some(s) = self.seed {
            env.seed = s;
        }
        Ok(env)
    }

    fn design(&self) -> Result<ExperimentDesign> {
        Ok(self.doc.require_design()?.clone())
    }

    fn table_path(&self, stem: &str) -> PathBuf {
        self.out.join(format!("{stem}.{}", self.format.extension()))
    }

    /// Observed data from files, or a fresh simulation of the config.
    fn data(&self, args: &DataArgs) -> Result<(OutcomePanel, TreatmentMatrix, u64)> {
        if let (Some(p), Some(t)) = (&args.panel, &args.treatment) {
            let panel = read_panel(p)?;
            let w = read_treatment(t)?;
            if !panel.matches(&w) {
                bail!("{} and {} differ in shape", p.display(), t.display());
            }
            let seed = self.seed.or(self.doc.env.as_ref().map(|e| e.seed)).unwrap_or(0);
            return Ok((panel, w, seed));
        }
        let env = self.env()?;
        let w = generate_staggered_design(env.n_units, &self.design()?, env.seed)?;
        let panel = simulate(&env, &w)?;
        Ok((panel, w, env.seed))
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // Library errors already embed their cause; skip repeated links.
        let mut msg = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !msg.contains(&c) {
                msg = format!("{msg}: {c}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let doc = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    let ctx = Session {
        doc,
        seed: cli.seed,
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        format: cli.format.into(),
    };
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Estimate { data, estimator } => cmd_estimate(&ctx, &data, estimator),
        Command::Ccv { data } => cmd_ccv(&ctx, &data),
        Command::DmSweep { preset } => cmd_sweep(&ctx, preset),
        Command::Benchmark => cmd_benchmark(&ctx, cli.out.as_deref()),
        Command::Tte { data, treated, control, window } => cmd_tte(&ctx, &data, treated, control, window),
    }
}

fn cmd_simulate(ctx: &Session) -> Result<()> {
    let env = ctx.env()?;
    let design = ctx.design()?;
    let w = generate_staggered_design(env.n_units, &design, env.seed)?;
    let panel = simulate(&env, &w)?;
    let (wp, pp) = (ctx.table_path("treatment"), ctx.table_path("panel"));
    let (wt, pt) = match ctx.format {
        Format::Csv => (w.to_csv(), panel.to_csv()),
        Format::Json => (
            json(&Envelope::treatment(w, Some(env.seed), Some(design.clone())))?,
            json(&Envelope::outcomes(panel, Some(env.seed), Some(design)))?,
        ),
    };
    write_text(&wp, &wt)?;
    write_text(&pp, &pt)?;
    println!("wrote {} and {}", wp.display(), pp.display());
    Ok(())
}

/// Full-precision JSON; panels are data, not reported results.
fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn default_candidate(n_units: usize) -> CandidateConfig {
    default_grid(n_units)[0]
}

fn training_batches(w: &TreatmentMatrix, candidate: &CandidateConfig, seed: u64) -> Result<Vec<netcf::Batch>> {
    if !candidate.estimator.uses_batches() {
        return Ok(Vec::new());
    }
    let mut r = rng::stream(seed, "cmp_batches", &[]);
    Ok(create_training_batches(w, &candidate.batches, &mut r)?)
}

fn cmd_estimate(ctx: &Session, data: &DataArgs, id: Option<EstimatorId>) -> Result<()> {
    let (panel, w, seed) = ctx.data(data)?;
    let mut candidate = ctx.doc.estimator.unwrap_or_else(|| default_candidate(panel.n_units()));
    if let Some(id) = id {
        candidate.estimator = id;
    }
    candidate.validate(panel.n_units(), panel.horizon())?;
    let train = training_batches(&w, &candidate, seed)?;
    let l = candidate.estimator.effective_lag(candidate.l);
    let series = |treated| {
        estimate(candidate.estimator, &panel, &w, &w.override_from(l, treated), &train, candidate.l, candidate.alpha)
    };
    let (a, b) = (series(true)?, series(false)?);
    let observed = panel.column_means();
    let rows: Vec<SeriesRecord> = (0..panel.periods())
        .map(|t| SeriesRecord { t, observed: observed[t], treated: a.values[t], control: b.values[t] })
        .collect();
    let path = ctx.table_path("estimate");
    export(&rows, &path, ctx.format)?;
    println!("{}: wrote {}", candidate.label(), path.display());
    Ok(())
}

fn cmd_ccv(ctx: &Session, data: &DataArgs) -> Result<()> {
    let (panel, w, seed) = ctx.data(data)?;
    let setup = ctx.doc.ccv.clone().unwrap_or_default();
    let grid = setup.grid(panel.n_units());
    let blocks = setup.blocks.resolve(panel.horizon())?;
    let validation = create_validation_batches(&w, setup.validation_batches)?;
    let result = run_ccv(&panel, &w, &grid, &blocks, &validation, mse_loss, rng::stream_seed(seed, "ccv", &[]))?;
    result.write_files(&ctx.out)?;
    for l in &result.losses {
        println!("{:<48} {:.6e}", l.candidate.label(), l.loss);
    }
    println!("selected {} (loss {:.6e})", result.selected_config().label(), result.selected_loss());
    Ok(())
}

fn cmd_sweep(ctx: &Session, preset: Option<Preset>) -> Result<()> {
    let mut config = match (ctx.doc.sweep.clone(), preset) {
        (_, Some(Preset::Sigma)) => SweepConfig::sigma_sweep(),
        (_, Some(Preset::Mu)) => SweepConfig::mu_sweep(),
        (Some(c), None) => c,
        (None, None) => bail!("config has no [sweep] section; pass --preset sigma|mu"),
    };
    if let Some(s) = ctx.seed {
        config.seed = s;
    }
    let result = dm_sweep(&config)?;
    result.write(&ctx.out, ctx.format)?;
    println!("{:>8} {:>12} {:>12} {:>12}", "value", "mse", "variance", "bias2");
    for r in &result.rows {
        println!("{:>8} {:>12.4e} {:>12.4e} {:>12.4e}", r.value, r.mse, r.variance, r.bias2);
    }
    println!("wrote {}", ctx.out.display());
    Ok(())
}

fn cmd_benchmark(ctx: &Session, out_flag: Option<&Path>) -> Result<()> {
    let mut config = ctx.doc.benchmark_config()?;
    if let Some(s) = ctx.seed {
        config.env.seed = s;
    }
    let out = out_flag.map(Path::to_path_buf).or(config.out.clone()).unwrap_or_else(|| ctx.out.clone());
    let result = run_benchmark(&config)?;
    result.write(&out, ctx.format, config.raw_runs)?;
    println!("{:<6} {:>5} {:>12} {:>12} {:>12}", "est", "runs", "mean", "sd", "median_err");
    for s in &result.summary {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.5}"));
        println!("{:<6} {:>5} {:>12} {:>12} {:>12}", s.estimator, s.runs, f(s.mean), f(s.sd), f(s.median_error));
    }
    for note in &result.metadata.scale_notes {
        println!("note: {note}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_tte(
    ctx: &Session,
    data: &DataArgs,
    treated: Option<PathBuf>,
    control: Option<PathBuf>,
    window: Option<usize>,
) -> Result<()> {
    if let (Some(a), Some(b)) = (treated, control) {
        let (a, b) = (read_panel(&a)?, read_panel(&b)?);
        let window = window.unwrap_or(1);
        println!("{}", compute_tte(&a, &b, window)?);
        return Ok(());
    }
    let (panel, w, seed) = ctx.data(data)?;
    let (n, horizon) = (panel.n_units(), panel.horizon());
    let design = ctx.doc.design.clone();
    let window = window
        .or(ctx.doc.benchmark.as_ref().and_then(|b| b.window))
        .or(design.as_ref().map(ExperimentDesign::last_stage_len))
        .unwrap_or(1);
    let mut rows = Vec::new();
    let mut push = |name: &str, r: netcf::Result<f64>| {
        let (tte, detail) = match r {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        rows.push(TteRecord { estimator: name.into(), tte, detail });
    };
    // Ground truth needs the environment, so only simulated data has one.
    if data.panel.is_none() {
        let env = ctx.env()?;
        let world = env.world(0)?;
        let gt = (|| compute_tte(&world.run(&TreatmentMatrix::all_treated(n, horizon))?, &world.run(&TreatmentMatrix::zeros(n, horizon))?, window))();
        push("gt", gt);
    }
    let bcmp = (|| {
        let a = bcmp_estimate(&panel, &w, &TreatmentMatrix::all_treated(n, horizon))?;
        let b = bcmp_estimate(&panel, &w, &TreatmentMatrix::zeros(n, horizon))?;
        Ok((horizon + 1 - window..=horizon).map(|t| a.values[t] - b.values[t]).sum::<f64>() / window as f64)
    })();
    push("bcmp", bcmp);
    if let Some(c) = ctx.doc.estimator {
        let r = training_batches(&w, &c, seed)
            .map_err(|e| netcf::Error::Estimator(e.to_string()))
            .and_then(|train| counterfactual_tte(&panel, &w, &c, &train, window));
        push(c.estimator.name(), r);
    }
    push("dm", dm(&panel, &w, window));
    match &design {
        Some(d) => push("ht", ht(&panel, &w, &d.probs_per_period(), window)),
        None => log::info!("no design in config; skipping HT"),
    }
    let path = ctx.table_path("tte");
    export(&rows, &path, ctx.format)?;
    for r in &rows {
        match r.tte {
            Some(v) => println!("{:<8} {v:.6}", r.estimator),
            None => println!("{:<8} failed: {}", r.estimator, r.detail.as_deref().unwrap_or("")),
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
