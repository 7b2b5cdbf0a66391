use clap::{Args, Parser, Subcommand};
use geoplan::dsl::parse_plan;
use geoplan::sim::SceneSpec;
use geoplan::solver::SolverConfig;
use geoplan_cli::{
    apply_config_file, cmd_export_dataset, cmd_plot_data, cmd_run, cmd_trace_costs, BackendConfig, CliError,
    ExportOptions, PlanSource, RunOptions,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "geoplan", about = "Geometric-constraint manipulation planning over synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scene spec file (TOML); defaults to the fixture's scene with --fixture.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Plan file in the constraint DSL.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Name of a shipped fixture plan (see `list`).
    #[arg(long)]
    fixture: Option<String>,
    /// Chat-completion endpoint URL that generates the plan.
    #[arg(long)]
    backend: Option<String>,
    /// key=value config file overriding solver and backend settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for scene sampling, solver restarts and pose jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum stage executions per episode.
    #[arg(long, default_value_t = 64)]
    step_budget: usize,
}

impl CommonArgs {
    fn plan_source(&self) -> Result<PlanSource, CliError> {
        match (&self.plan, &self.fixture, &self.backend) {
            (Some(path), None, None) => Ok(PlanSource::File(path.clone())),
            (None, Some(name), None) => Ok(PlanSource::Fixture(name.clone())),
            (None, None, Some(endpoint)) => Ok(PlanSource::Backend(endpoint.clone())),
            _ => Err(CliError::Parse(
                "pass exactly one of --plan, --fixture, --backend".into(),
            )),
        }
    }

    fn solver_config(&self) -> Result<(SolverConfig, BackendConfig), CliError> {
        let mut solver = SolverConfig {
            seed: self.seed,
            ..SolverConfig::default()
        };
        let mut backend = BackendConfig::default();
        if let Some(path) = &self.config {
            apply_config_file(path, &mut solver, &mut backend)?;
            solver.seed = self.seed;
        }
        Ok((solver, backend))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write report, trajectory and episode log.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run N episodes with randomized initial poses and export the records.
    ExportDataset {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Uniform xy jitter in meters applied to non-fixed objects.
        #[arg(long, default_value_t = 0.05)]
        position_jitter: f64,
        /// Uniform yaw jitter in degrees applied to non-fixed objects.
        #[arg(long, default_value_t = 15.0)]
        yaw_jitter_deg: f64,
        #[arg(long, default_value = "dataset")]
        out_dir: PathBuf,
        /// Parallel episode workers.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run one episode and write the per-waypoint cost time series.
    TraceCosts {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "cost_trace.csv")]
        out: PathBuf,
    },
    /// Emit plot-ready tables from a finished run directory.
    PlotData {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory written by `run`.
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "plot")]
        out_dir: PathBuf,
    },
    /// List the shipped fixtures.
    List,
}

fn resolve_spec_and_plan(common: &CommonArgs) -> Result<(SceneSpec, geoplan::dsl::TaskPlan), CliError> {
    let source = common.plan_source()?;
    let spec = geoplan_cli::resolve_scene_spec(common.scene.as_deref(), &source)?;
    let plan = match &source {
        PlanSource::File(path) => parse_plan(&std::fs::read_to_string(path)?)?,
        PlanSource::Fixture(name) => parse_plan(
            geoplan::fixtures::fixture(name)
                .ok_or_else(|| CliError::Parse(format!("no fixture named `{name}`")))?
                .plan_text,
        )?,
        PlanSource::Backend(_) => {
            return Err(CliError::Parse(
                "this subcommand needs a concrete plan; use --plan or --fixture".into(),
            ))
        }
    };
    Ok((spec, plan))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, out_dir } => {
            let report = cmd_run(&RunOptions {
                scene: common.scene.clone(),
                plan: common.plan_source()?,
                config: common.config.clone(),
                seed: common.seed,
                step_budget: common.step_budget,
                out_dir,
            })?;
            println!(
                "task: {}\nsuccess: {}\nstages: {}\nreport: {}",
                report.task,
                report.success,
                report.stages.len(),
                report.trajectory_path.replace("trajectory.txt", "report.json"),
            );
            for visit in &report.stages {
                println!(
                    "  stage {} visit {} `{}` residual {:.6} ({} ms) -> {}",
                    visit.stage, visit.visit, visit.name, visit.subgoal_residual, visit.solve_ms, visit.transition
                );
            }
            Ok(())
        }
        Command::ExportDataset {
            common,
            count,
            position_jitter,
            yaw_jitter_deg,
            out_dir,
            workers,
        } => {
            let report = cmd_export_dataset(&ExportOptions {
                scene: common.scene.clone(),
                plan: common.plan_source()?,
                count,
                seed: common.seed,
                position_jitter,
                yaw_jitter_deg,
                step_budget: common.step_budget,
                out_dir,
                workers,
            })?;
            println!(
                "episodes: {}\nsuccesses: {}\nout: {}",
                report.episodes, report.successes, report.out_dir
            );
            Ok(())
        }
        Command::TraceCosts { common, out } => {
            let (solver, _) = common.solver_config()?;
            let (spec, plan) = resolve_spec_and_plan(&common)?;
            let rows = cmd_trace_costs(&spec, &plan, &solver, common.step_budget, &out)?;
            println!("wrote {rows} rows to {}", out.display());
            Ok(())
        }
        Command::PlotData { common, run_dir, out_dir } => {
            let (spec, plan) = resolve_spec_and_plan(&common)?;
            cmd_plot_data(&spec, &plan, &run_dir, &out_dir)?;
            println!("wrote waypoints.csv, stage_costs.csv, centroids.csv to {}", out_dir.display());
            Ok(())
        }
        Command::List => {
            for name in geoplan::fixtures::fixture_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
