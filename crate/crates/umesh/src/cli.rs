//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data or format
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use umesh_core::datagen::{force_vector, generate_dataset, read_dataset, write_dataset, Protocol};
use umesh_core::domain::embed_field;
use umesh_core::pod::{build_basis, read_basis, write_basis, PodSolver, Truncation};
use umesh_core::scenario::Scenario;
use umesh_nn::{load_model_for, predict, save_model, train, write_loss_csv, TrainConfig, UNetConfig};

use crate::bench::{benchmark, BenchOptions};
use crate::engine::Engine;
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate, write_csv_with_meta, write_report};
use crate::forces::{load_force_specs, write_displacement_csv};
use crate::model_select::{model_select, parse_grid};

#[derive(Debug, Parser)]
#[command(name = "umesh", version, about = "FEM data generation, U-Net surrogate training and POD baseline")]
pub struct Cli {
    /// Overrides the seed of the protocol or training config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve random load cases and write a dataset.
    Generate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        protocol: PathBuf,
    },
    /// Train a network on the train split of a dataset.
    Train(TrainArgs),
    /// Predict the displacement for a force-spec file.
    Predict {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        force: PathBuf,
    },
    /// Build a POD basis from the train split of a dataset.
    PodBuild {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        truncation: TruncationArgs,
    },
    /// Reduced solve for a force-spec file.
    PodSolve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        /// Use only the leading modes.
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        force: PathBuf,
    },
    /// Error report of a model, basis or reference engine on the test split.
    Evaluate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Timing table of FEM, POD and network on test samples.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        basis: Option<PathBuf>,
        /// POD modes kept from the basis.
        #[arg(long, default_value_t = 3)]
        modes: usize,
        /// Number of test samples timed.
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
    },
    /// Train and evaluate a grid of (c, k) architectures.
    ModelSelect {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// For example `c=16,32;k=2,3`.
        #[arg(long)]
        grid: String,
        #[command(flatten)]
        train: TrainOptions,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub steps: usize,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Args)]
pub struct TrainOptions {
    /// Training config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TruncationArgs {
    #[arg(long)]
    pub modes: Option<usize>,
    /// Energy fraction in (0, 1].
    #[arg(long)]
    pub energy: Option<f64>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct EngineArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Reference engine: `fem`, `truth` or `zero`.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Copy)]
struct Globals<'a> {
    seed: Option<u64>,
    out: Option<&'a Path>,
}

impl Globals<'_> {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        // Fails only if a pool already exists (repeated in-process runs).
        if rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_err() {
            log::debug!("global thread pool already initialised");
        }
    }
    let g = Globals {
        seed: cli.seed,
        out: cli.out.as_deref(),
    };
    match &cli.command {
        Command::Generate { scenario, protocol } => cmd_generate(g, scenario, protocol),
        Command::Train(args) => cmd_train(g, args),
        Command::Predict { scenario, model, force } => cmd_predict(g, scenario, model, force),
        Command::PodBuild {
            scenario,
            dataset,
            truncation,
        } => cmd_pod_build(g, scenario, dataset, truncation),
        Command::PodSolve {
            scenario,
            basis,
            modes,
            force,
        } => cmd_pod_solve(g, scenario, basis, *modes, force),
        Command::Evaluate {
            scenario,
            dataset,
            engine,
        } => cmd_evaluate(g, scenario, dataset, engine),
        Command::Bench {
            scenario,
            dataset,
            model,
            basis,
            modes,
            cases,
            repeats,
            warmup,
        } => {
            let opts = BenchOptions {
                warmup: *warmup,
                repeats: *repeats,
            };
            cmd_bench(g, scenario, dataset, model.as_deref(), basis.as_deref(), *modes, *cases, opts)
        }
        Command::ModelSelect {
            scenario,
            dataset,
            grid,
            train,
        } => cmd_model_select(g, scenario, dataset, grid, train),
    }
}

fn load_dataset_for(scenario: &Scenario, path: &Path) -> Result<umesh_core::datagen::Dataset> {
    let ds = read_dataset(path)?;
    if ds.scenario_digest != scenario.digest() {
        return Err(HarnessError::Data(format!(
            "{} was generated for a different scenario",
            path.display()
        )));
    }
    Ok(ds)
}

fn load_basis_for(scenario: &Scenario, path: &Path) -> Result<umesh_core::pod::PodBasis> {
    let basis = read_basis(path)?;
    if basis.scenario_digest != scenario.digest() {
        return Err(HarnessError::Data(format!(
            "{} was built for a different scenario",
            path.display()
        )));
    }
    Ok(basis)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| HarnessError::io(path, e))?))
}

fn cmd_generate(g: Globals, scenario: &Path, protocol: &Path) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let p = Protocol::load(protocol)?;
    let seed = g.seed.unwrap_or(p.seed);
    let ds = generate_dataset(&s, &p, seed)?;
    let out = g.out_or("dataset.umds");
    write_dataset(&ds, &out)?;
    log::info!(
        "wrote {} samples ({} test, {} skipped) to {}",
        ds.len(),
        ds.count(umesh_core::datagen::Split::Test),
        ds.info.skipped,
        out.display()
    );
    Ok(())
}

fn train_config(opts: &TrainOptions, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match &opts.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => TrainConfig::new(1000, 0),
    };
    if let Some(v) = opts.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = opts.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = opts.learning_rate {
        cfg.adam.learning_rate = v;
    }
    if opts.checkpoint_every.is_some() {
        cfg.checkpoint_every = opts.checkpoint_every;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `dir/stem.suffix` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn cmd_train(g: Globals, args: &TrainArgs) -> Result<()> {
    let s = Scenario::load(&args.scenario)?;
    let ds = load_dataset_for(&s, &args.dataset)?;
    let cfg = train_config(&args.options, g.seed)?;
    let net_cfg = UNetConfig::new(args.channels, args.steps, ds.padded_dims)?;
    let out = g.out_or("model.umnn");
    let (model, trace) = train(&ds, &s.node_mask(), net_cfg, &cfg, |it, net| {
        let p = sibling(&out, &format!(".ckpt-{it}.umnn"));
        save_model(net, &p)
    })?;
    save_model(&model, &out)?;
    write_loss_csv(&trace, create(&sibling(&out, ".loss.csv"))?).map_err(|e| HarnessError::io(&out, e))?;
    log::info!("final loss {:.4e}", trace.last().map_or(f64::NAN, |r| r.loss));
    Ok(())
}

fn cmd_predict(g: Globals, scenario: &Path, model: &Path, force: &Path) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let model = load_model_for(model, s.padded.dims)?;
    let specs = load_force_specs(force, &s.mesh)?;
    let f = force_vector(&s.mesh, &specs)?;
    let field = embed_field(&s.mesh, &s.padded, &f)?;
    let p = predict(&model, &field, &s.node_mask())?;
    let u = umesh_core::domain::extract_field(&p.displacement, &s.mesh, &s.padded)?;
    let out = g.out_or("prediction.csv");
    write_displacement_csv(&s.mesh, &u, create(&out)?).map_err(|e| HarnessError::io(&out, e))?;
    log::info!("forward {:.3} ms, total {:.3} ms", p.forward_ms, p.total_ms);
    Ok(())
}

fn cmd_pod_build(g: Globals, scenario: &Path, dataset: &Path, t: &TruncationArgs) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let ds = load_dataset_for(&s, dataset)?;
    let snapshots = ds
        .train()
        .map(|smp| umesh_core::domain::extract_field(&smp.displacement, &s.mesh, &s.padded))
        .collect::<umesh_core::Result<Vec<_>>>()?;
    let truncation = match (t.modes, t.energy) {
        (Some(r), _) => Truncation::Modes(r),
        (_, Some(e)) => Truncation::Energy(e),
        _ => unreachable!("clap enforces one truncation"),
    };
    let basis = build_basis(&snapshots, truncation, s.digest())?;
    let out = g.out_or("basis.umpb");
    write_basis(&basis, &out)?;
    log::info!("kept {} modes", basis.rank());
    Ok(())
}

fn cmd_pod_solve(g: Globals, scenario: &Path, basis: &Path, modes: Option<usize>, force: &Path) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let mut basis = load_basis_for(&s, basis)?;
    if let Some(r) = modes {
        basis = basis.truncated(r);
    }
    let specs = load_force_specs(force, &s.mesh)?;
    let f = force_vector(&s.mesh, &specs)?;
    let (u, report) = PodSolver::new(basis, &s.mesh, s.material)?.solve(&f, s.solver_options())?;
    let out = g.out_or("pod_solution.csv");
    write_displacement_csv(&s.mesh, &u, create(&out)?).map_err(|e| HarnessError::io(&out, e))?;
    log::info!("{} Newton iterations, {:.3} ms", report.newton_iterations, report.wall_time * 1e3);
    Ok(())
}

fn cmd_evaluate(g: Globals, scenario: &Path, dataset: &Path, e: &EngineArgs) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let ds = load_dataset_for(&s, dataset)?;
    let (engine, digest) = if let Some(m) = &e.model {
        let model = load_model_for(m, s.padded.dims)?;
        let d = umesh_core::hex(&umesh_nn::weights_digest(&model));
        (Engine::network(&s, model), d)
    } else if let Some(b) = &e.basis {
        let basis = load_basis_for(&s, b)?;
        let d = umesh_core::hex(&umesh_core::sha256(&f64_bytes(basis.modes())));
        (Engine::pod(&s, basis)?, d)
    } else {
        let engine = match e.reference.as_deref() {
            Some("fem") => Engine::fem(&s)?,
            Some("truth") => Engine::Truth,
            Some("zero") => Engine::Zero,
            other => return Err(HarnessError::Data(format!("unknown reference engine {other:?}"))),
        };
        (engine, String::new())
    };
    let report = evaluate(&engine, &s, &ds, &digest)?;
    let out = g.out_or("report.csv");
    write_report(&report, &out)?;
    log::info!(
        "{}: mean e = {:.6e} m over {} samples",
        report.engine,
        report.errors.mean,
        report.errors.count
    );
    Ok(())
}

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    g: Globals,
    scenario: &Path,
    dataset: &Path,
    model: Option<&Path>,
    basis: Option<&Path>,
    modes: usize,
    cases: usize,
    opts: BenchOptions,
) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let ds = load_dataset_for(&s, dataset)?;
    let mut engines = vec![Engine::fem(&s)?];
    if let Some(b) = basis {
        engines.push(Engine::pod(&s, load_basis_for(&s, b)?.truncated(modes))?);
    }
    if let Some(m) = model {
        engines.push(Engine::network(&s, load_model_for(m, s.padded.dims)?));
    }
    let picked: Vec<_> = ds.test().take(cases).collect();
    if picked.is_empty() {
        return Err(HarnessError::Data("dataset has an empty test split".into()));
    }
    let rows = benchmark(&s, &picked, &engines, opts)?;
    let meta = serde_json::json!({
        "scenario_digest": s.digest_hex(),
        "cases": picked.len(),
        "repeats": opts.repeats,
        "warmup": opts.warmup,
        "pod_modes": modes,
    });
    write_csv_with_meta(&g.out_or("bench.csv"), &meta, &rows)
}

fn cmd_model_select(g: Globals, scenario: &Path, dataset: &Path, grid: &str, opts: &TrainOptions) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let ds = load_dataset_for(&s, dataset)?;
    let cells = parse_grid(grid)?;
    let cfg = train_config(opts, g.seed)?;
    let rows = model_select(&s, &ds, &cells, &cfg)?;
    let meta = serde_json::json!({
        "scenario_digest": s.digest_hex(),
        "grid": grid,
        "train": cfg,
    });
    write_csv_with_meta(&g.out_or("model_select.csv"), &meta, &rows)
}
