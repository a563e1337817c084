use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomgrid::agent::{AgentModel, ModelKind};
use tomgrid::grid::{Cell, GridConfig};
use tomgrid::inference::{
    goal_posterior, model_posterior_marginal, write_trace, PosteriorTrace, Ranking,
};
use tomgrid::planner::{
    all_trial_pairs, PairSource, RewardParams, TableBank, TableCache, DEFAULT_TOLERANCE,
};
use tomgrid::simulation::{
    run_goal_inference_experiment, simulate_human_trajectory, ExperimentPlan, TrialSpec,
    BASELINE_METHOD, JOINT_METHOD,
};
use tomgrid::trajectory::Trajectory;
use tomgrid_cli::service::{router, AppState};

#[derive(Parser)]
#[command(
    name = "tomgrid",
    version,
    about = "Infer a human's model of an agent, and their goal, from grid-world moves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve value tables for every trial hypothesis and cache them.
    Solve(ModelArgs),
    /// Simulate a synthetic population and write report files.
    Experiment(ExperimentArgs),
    /// Print the posterior trace and model ranking for a trajectory file.
    Infer(InferArgs),
    /// Simulate one synthetic trial and write its trajectory file.
    Simulate(SimulateArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Grid config (TOML); the built-in 9×9 grid when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Value-table cache directory.
    #[arg(long, env = "TOMGRID_CACHE", default_value = "tomgrid-cache")]
    cache: PathBuf,
    #[arg(long)]
    goal_reward: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    action_cost: Option<f64>,
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    collision_penalty: Option<f64>,
    /// Rationality assumed by inference.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
}

impl ModelArgs {
    fn grid(&self) -> Result<GridConfig> {
        match &self.config {
            Some(p) => GridConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(GridConfig::default()),
        }
    }

    fn params(&self, base: RewardParams) -> RewardParams {
        RewardParams {
            goal_reward: self.goal_reward.unwrap_or(base.goal_reward),
            action_cost: self.action_cost.unwrap_or(base.action_cost),
            discount: self.discount.unwrap_or(base.discount),
            collision_penalty: self.collision_penalty.unwrap_or(base.collision_penalty),
            rationality: self.beta.unwrap_or(base.rationality),
        }
    }

    /// Bank holding `pairs`, loading from or filling the cache.
    fn bank(
        &self,
        grid: GridConfig,
        pairs: &[(AgentModel, Cell)],
        quiet: bool,
    ) -> Result<TableBank> {
        let mut bank = TableBank::new(grid, self.params(RewardParams::default()), self.tol)?;
        let cache = TableCache::new(&self.cache);
        let reports = bank.ensure(pairs, Some(&cache))?;
        let solved = reports
            .iter()
            .filter(|r| r.source == PairSource::Solved)
            .count();
        if solved > 0 && !quiet {
            eprintln!(
                "solved {solved} missing value tables into {}",
                self.cache.display()
            );
        }
        Ok(bank)
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment plan (TOML); defaults apply when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, env = "TOMGRID_CACHE", default_value = "tomgrid-cache")]
    cache: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Rationality of the simulated humans.
    #[arg(long)]
    human_beta: Option<f64>,
    /// Rationality assumed by inference; 0 forces uniform likelihoods.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    trajectory: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Classify with the recorded goal; otherwise infer model and goal jointly.
    #[arg(long)]
    known_goal: bool,
    /// Trace output file; defaults to the input path with `.trace.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    condition: ModelKind,
    /// Goal as `x,y`; drawn from the seed when omitted.
    #[arg(long, value_parser = parse_cell)]
    goal: Option<Cell>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    human_beta: f64,
    #[arg(long, default_value_t = 200)]
    step_cap: usize,
    #[command(flatten)]
    model: ModelArgs,
    /// Output trajectory file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, env = "TOMGRID_PORT", default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory for finished trajectory records.
    #[arg(long, env = "TOMGRID_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

fn parse_cell(s: &str) -> std::result::Result<Cell, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x = x.trim().parse().map_err(|e| format!("{e}"))?;
    let y = y.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(Cell::new(x, y))
}

fn main() {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Solve(a) => solve(&a),
        Command::Experiment(a) => experiment(&a),
        Command::Infer(a) => infer(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Serve(a) => serve(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn solve(args: &ModelArgs) -> Result<()> {
    let grid = args.grid()?;
    let mut bank = TableBank::new(grid.clone(), args.params(RewardParams::default()), args.tol)?;
    let cache = TableCache::new(&args.cache);
    let reports = bank.ensure(&all_trial_pairs(&grid), Some(&cache))?;
    let mut solved = 0;
    for r in &reports {
        let what = match r.source {
            PairSource::Solved => {
                solved += 1;
                "solved"
            }
            PairSource::Loaded | PairSource::Skipped => "skipped (cached)",
        };
        println!(
            "{:<20} goal {}: {what}, {} sweeps, residual {:.3e}",
            r.model.to_string(),
            r.goal,
            r.sweeps,
            r.residual
        );
    }
    println!(
        "{} pairs: {solved} solved, {} skipped; cache {}",
        reports.len(),
        reports.len() - solved,
        args.cache.display()
    );
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let mut plan = match &args.plan {
        Some(p) => ExperimentPlan::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentPlan::default(),
    };
    if let Some(s) = args.seed {
        plan.seed = s;
    }
    if let Some(b) = args.human_beta {
        plan.human_beta = b;
    }
    if let Some(b) = args.beta {
        plan.params.rationality = b;
    }
    plan.validate()?;
    let cache = TableCache::new(&args.cache);
    let bank = plan.bank(Some(&cache))?;
    let report = run_goal_inference_experiment(&plan, &bank)?;
    report.write_files(&args.out)?;

    let (within, across) = report.cluster_masses();
    println!(
        "trials {} (attempts {}, collisions {}, truncations {})",
        report.trials, report.attempts, report.collisions, report.truncations
    );
    println!("top-1 accuracy {:.1}%", 100.0 * report.top1_accuracy);
    println!("top-2 accuracy {:.1}%", 100.0 * report.top2_accuracy);
    println!("confusion (rows true, columns predicted):");
    for (k, row) in report.labels.iter().zip(&report.confusion) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:7.1}")).collect();
        println!("  {:<11}{}", k.name(), cells.join(""));
    }
    println!(
        "cluster check: within {within:.1} vs across {across:.1} ({})",
        if within > across {
            "within dominates"
        } else {
            "across dominates"
        }
    );
    for method in [JOINT_METHOD, BASELINE_METHOD] {
        if let Some(c) = report.goal_curves.get(method) {
            println!(
                "{method} goal curve: {:.3} at 0%, {:.3} at 100%",
                c[0],
                c[c.len() - 1]
            );
        }
    }
    println!("report files written to {}", args.out.display());
    Ok(())
}

fn infer(args: &InferArgs) -> Result<()> {
    let traj = Trajectory::load(&args.trajectory)
        .with_context(|| format!("reading {}", args.trajectory.display()))?;
    let grid = args.model.grid()?;
    traj.validate(&grid)?;
    let start = traj.meta.human_start;
    let pairs: Vec<(AgentModel, Cell)> = AgentModel::hypotheses(start)
        .into_iter()
        .flat_map(|m| grid.goal_cells.iter().map(move |g| (m, *g)))
        .collect();
    let bank = args.model.bank(grid, &pairs, false)?;
    let trace = PosteriorTrace::compute(&traj, &bank, traj.meta.goal)?;

    let fmt = |v: Vec<(String, f64)>| {
        v.iter()
            .map(|(l, p)| format!("{l} {p:.3}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    for (i, (m, j)) in trace.models.iter().zip(&trace.joint).enumerate() {
        let action = traj
            .steps
            .get(i.wrapping_sub(1))
            .filter(|_| i > 0)
            .map_or("prior", |s| s.action.name());
        let models = if args.known_goal {
            m.clone()
        } else {
            model_posterior_marginal(j)
        };
        let line = fmt(models
            .iter()
            .map(|(h, p)| (h.kind().name().to_string(), p))
            .collect());
        if args.known_goal {
            println!("step {i:>3} {action:<5} {line}");
        } else {
            let goals = fmt(goal_posterior(j)
                .iter()
                .map(|(g, p)| (g.to_string(), p))
                .collect());
            println!("step {i:>3} {action:<5} {line} | {goals}");
        }
    }
    let last = if args.known_goal {
        trace.models.last().unwrap().clone()
    } else {
        model_posterior_marginal(trace.joint.last().unwrap())
    };
    println!("ranking:");
    for e in &Ranking::from_belief(&last).entries {
        println!(
            "  {} {:<11} {:.6}",
            e.rank,
            e.model.kind().name(),
            e.posterior
        );
    }

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| trace_path(&args.trajectory));
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?,
    );
    write_trace(&trace.records(&traj.meta.trial_id), &mut w)?;
    w.flush()?;
    println!("trace written to {}", out.display());
    Ok(())
}

fn trace_path(input: &Path) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    input.with_file_name(format!("{stem}.trace.jsonl"))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let grid = args.model.grid()?;
    if let Some(g) = args.goal {
        if grid.goal_index(g).is_none() {
            bail!("{g} is not a configured goal");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let goal = args
        .goal
        .unwrap_or_else(|| grid.goal_cells[rng.gen_range(0..grid.goal_cells.len())]);
    let human_start = grid.human_start_cells[rng.gen_range(0..grid.human_start_cells.len())];
    let agent_start = grid.agent_spawn_region[rng.gen_range(0..grid.agent_spawn_region.len())];
    let spec = TrialSpec {
        trial_id: format!("sim-{}-{}", args.condition, args.seed),
        participant: 0,
        condition: args.condition,
        goal,
        human_start,
        agent_start,
        seed: rng.gen(),
    };
    let pairs = [(spec.true_model(), goal)];
    let bank = args.model.bank(grid, &pairs, true)?;
    let traj = simulate_human_trajectory(&bank, &spec, args.human_beta, args.step_cap)?;
    match &args.out {
        Some(p) => {
            traj.save(p)?;
            eprintln!(
                "{} steps, outcome {:?}, written to {}",
                traj.len(),
                traj.meta.outcome,
                p.display()
            );
        }
        None => print!("{}", traj.to_jsonl_string()),
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let grid = args.model.grid()?;
    let bank = args
        .model
        .bank(grid.clone(), &all_trial_pairs(&grid), false)?;
    let app = Arc::new(AppState::new(Arc::new(bank), args.data_dir.clone()));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(app))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
