use std::error::Error;
use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ccsp_core::flowsim::{load_wells, simulate_with, FlowConfig, FlowModel};
use ccsp_core::geostat::{generate_field, PorosityField, VariogramModel, VariogramParams};
use ccsp_core::harness::{
    data_dir, episode_seed, evaluate, export, fidelity_study, replay_log, sign_test, Comparison, EpisodeConfig,
    Episode, EvaluationSpec, FidelitySpec, RunManifest, Truth,
};
use ccsp_core::planner::{PolicyOptions, PolicyRegistry, PomcpowConfig, PomcpowPolicy, RolloutKind};
use ccsp_core::pomdp::ObservationMode;
use ccsp_core::GridDims;

type CliResult<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "ccsp", version, about = "Belief-state planning for CO2 storage well placement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a porosity realization and write it as CCSF.
    GenField(GenFieldArgs),
    /// Run the proxy simulator on a field and well schedule; writes JSONL snapshots.
    Simulate(SimulateArgs),
    /// Compare policies over paired cases and seeds.
    Evaluate(EvaluateArgs),
    /// Compare fine- and coarse-fidelity planning, scored on fine truths.
    Fidelity(FidelityArgs),
    /// Serve the HTTP+JSON episode API.
    Serve(ServeArgs),
    /// Plan the first decision of a fresh episode.
    Plan(PlanArgs),
    /// Re-execute an episode log and verify rewards bit for bit.
    Replay(ReplayArgs),
}

fn parse_dims(s: &str) -> Result<GridDims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [nx, ny, nz] => GridDims::new(*nx, *ny, *nz).map_err(|e| e.to_string()),
        _ => Err("expected NX,NY,NZ".into()),
    }
}

fn parse_mode(s: &str) -> Result<ObservationMode, String> {
    s.parse().map_err(|e: ccsp_core::pomdp::PomdpError| e.to_string())
}

#[derive(Args)]
struct GenFieldArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_dims, default_value = "16,16,4")]
    dims: GridDims,
    #[arg(long, default_value_t = VariogramParams::default().mean)]
    mean: f64,
    #[arg(long, default_value_t = VariogramParams::default().sill)]
    sill: f64,
    /// Practical range in cells.
    #[arg(long, default_value_t = VariogramParams::default().range)]
    range: f64,
    #[arg(long, default_value_t = VariogramParams::default().nugget)]
    nugget: f64,
    #[arg(long, default_value = "exponential")]
    model: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    /// 1000 m × 1000 m × 20 m cells.
    Desk,
    /// 100 m × 100 m × 10 m cells.
    Full,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    field: PathBuf,
    /// JSON array of wells: {"kind":"injector"|"monitor","i","j","onset_year"}.
    #[arg(long)]
    wells: PathBuf,
    #[arg(long, default_value_t = 530)]
    years: u32,
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    /// Lateral block-coarsening factor (1 = full resolution).
    #[arg(long, default_value_t = 1)]
    coarsen: usize,
    /// Also write one CCSF saturation file per year into this directory.
    #[arg(long)]
    saturation_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct PlannerArgs {
    /// Tree queries per decision.
    #[arg(long, default_value_t = PomcpowConfig::default().n_query)]
    queries: usize,
    #[arg(long, value_enum, default_value = "expert")]
    rollout: RolloutArg,
    /// Belief ensemble size.
    #[arg(long, default_value_t = 100)]
    ensemble: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum RolloutArg {
    Random,
    Expert,
}

impl PlannerArgs {
    fn pomcpow(&self) -> PomcpowConfig {
        PomcpowConfig {
            n_query: self.queries,
            rollout: match self.rollout {
                RolloutArg::Random => RolloutKind::Random,
                RolloutArg::Expert => RolloutKind::Expert,
            },
            ..PomcpowConfig::default()
        }
    }

    fn episode(&self, mode: ObservationMode) -> EpisodeConfig {
        EpisodeConfig {
            ensemble_size: self.ensemble,
            ..EpisodeConfig::desk(mode)
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_delimiter = ',', default_value = "pomcpow,expert,random")]
    policies: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "monitoring")]
    modes: Vec<ObservationMode>,
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Coarsening of the planner and belief replays.
    #[arg(long, default_value_t = 1)]
    fidelity: usize,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Skip per-episode JSONL logs.
    #[arg(long)]
    no_logs: bool,
    /// Output directory (default: $CCSP_DATA_DIR/evaluate-<time>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FidelityArgs {
    #[arg(long, default_value_t = 2)]
    coarsen: usize,
    #[arg(long, value_parser = parse_mode, default_value = "monitoring")]
    mode: ObservationMode,
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = ccsp_service::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Artifact directory (default: $CCSP_DATA_DIR or ./ccsp-data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, value_parser = parse_mode, default_value = "monitoring")]
    mode: ObservationMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    fidelity: usize,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Write planner diagnostics JSON here ("-" for stdout).
    #[arg(long)]
    dump_tree: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    /// Also re-run every belief update and compare digests.
    #[arg(long)]
    check_belief: bool,
}

fn timestamped(command: &str) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    data_dir().join(format!("{command}-{secs}"))
}

fn gen_field(a: GenFieldArgs) -> CliResult {
    let params = VariogramParams {
        mean: a.mean,
        sill: a.sill,
        range: a.range,
        nugget: a.nugget,
        model: a.model.parse::<VariogramModel>()?,
    };
    let field = generate_field(&params, a.dims, a.seed)?;
    field.save(&a.out)?;
    println!("wrote {} ({} cells, mean {:.4})", a.out.display(), a.dims.len(), field.mean());
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult {
    let field = PorosityField::load(&a.field)?;
    let wells = load_wells(&a.wells)?;
    let cfg = match a.scale {
        Scale::Desk => FlowConfig::desk(),
        Scale::Full => FlowConfig::default(),
    };
    let model = FlowModel::with_coarsening(&field, &cfg, a.coarsen)?;
    let traj = simulate_with(&model, &wells, a.years)?;
    if let Some(dir) = &a.saturation_dir {
        std::fs::create_dir_all(dir)?;
    }
    traj.write_jsonl(&a.out, a.saturation_dir.as_deref())?;
    println!("wrote {}: final {}", a.out.display(), traj.final_ledger().display_mt());
    Ok(())
}

fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()).into())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult {
    let out = a.out.clone().unwrap_or_else(|| timestamped("evaluate"));
    ensure_dir(&out)?;
    let spec = EvaluationSpec {
        policies: a.policies.clone(),
        modes: a.modes.clone(),
        n_cases: a.cases,
        n_seeds: a.seeds,
        base_seed: a.base_seed,
        episode: EpisodeConfig {
            belief_fidelity: a.fidelity,
            ..a.planner.episode(a.modes[0])
        },
        options: PolicyOptions {
            pomcpow: a.planner.pomcpow(),
            fidelity: a.fidelity,
        },
        log_dir: (!a.no_logs).then(|| out.join("logs")),
    };
    let seeds = (0..a.cases)
        .flat_map(|c| (0..a.seeds).map(move |s| episode_seed(a.base_seed, c, s)))
        .collect();
    RunManifest::new("evaluate", &spec, seeds)?.write(&out)?;
    let results = evaluate(&spec, &PolicyRegistry::default())?;
    let mut comparisons = Vec::new();
    for &mode in &a.modes {
        for pair in a.policies.windows(2) {
            let (x, y) = results.paired(&pair[0], &pair[1], mode);
            comparisons.push(Comparison {
                label: format!("{} > {} ({mode})", pair[0], pair[1]),
                test: sign_test(&x, &y),
            });
        }
    }
    for policy in &a.policies {
        for pair in a.modes.windows(2) {
            let (x, y) = results.paired_modes(policy, pair[0], pair[1]);
            comparisons.push(Comparison {
                label: format!("{policy}: {} > {}", pair[0], pair[1]),
                test: sign_test(&x, &y),
            });
        }
    }
    print!("{}", results.table.display());
    for c in &comparisons {
        println!(
            "{}: {}/{} wins, {} ties, p = {:.4}",
            c.label, c.test.wins, c.test.wins + c.test.losses, c.test.ties, c.test.p_value
        );
    }
    export(&out, &results, comparisons)?;
    println!("artifacts in {}", out.display());
    Ok(())
}

fn fidelity_cmd(a: FidelityArgs) -> CliResult {
    let out = a.out.clone().unwrap_or_else(|| timestamped("fidelity"));
    ensure_dir(&out)?;
    let spec = FidelitySpec {
        n_cases: a.cases,
        n_seeds: a.seeds,
        base_seed: a.base_seed,
        factor: a.coarsen,
        episode: a.planner.episode(a.mode),
        pomcpow: a.planner.pomcpow(),
    };
    let seeds = (0..a.cases)
        .flat_map(|c| (0..a.seeds).map(move |s| episode_seed(a.base_seed, c, s)))
        .collect();
    RunManifest::new("fidelity", &spec, seeds)?.write(&out)?;
    let r = fidelity_study(&spec)?;
    println!("fine   mean return {:.1} (SE {:?})", r.mean_high, r.se_high);
    println!("coarse mean return {:.1} (SE {:?})", r.mean_low, r.se_low);
    println!("JSD {:.4}", r.jsd);
    println!(
        "RMSE fine vs coarse (MT): trapped {:.3}, free {:.3}, exited {:.3}",
        r.rmse_trapped, r.rmse_free, r.rmse_exited
    );
    println!("fine > coarse: {}/{} wins, p = {:.4}", r.sign.wins, r.sign.wins + r.sign.losses, r.sign.p_value);
    let mut records = r.high.clone();
    records.extend(r.low.iter().cloned());
    ccsp_core::harness::write_records_csv(&out.join("records.csv"), &records)?;
    ccsp_core::harness::write_density_csv(&out.join("densities.csv"), &records)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&r)?)?;
    println!("artifacts in {}", out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let dir = a.data_dir.unwrap_or_else(data_dir);
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(ccsp_service::serve(addr, dir))?;
    Ok(())
}

fn plan(a: PlanArgs) -> CliResult {
    let cfg = EpisodeConfig {
        belief_fidelity: a.fidelity,
        ..a.planner.episode(a.mode)
    };
    let truth = Truth::generated(&cfg.problem, a.seed)?;
    let ep = Episode::start(cfg, truth, a.seed, "pomcpow", true, None)?;
    let policy = PomcpowPolicy {
        cfg: a.planner.pomcpow(),
        fidelity: a.fidelity,
    };
    let belief = ep.belief().expect("belief tracked").clone();
    let d = ep.decide(&policy, &belief)?;
    println!("{}", d.action);
    if let Some(path) = &a.dump_tree {
        let json = serde_json::to_string_pretty(&serde_json::json!({
            "action": d.action,
            "diagnostics": d.diagnostics,
        }))?;
        if path.as_os_str() == "-" {
            println!("{json}");
        } else {
            std::fs::write(path, json)?;
        }
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> CliResult {
    let f = File::open(&a.log).map_err(|e| format!("{}: {e}", a.log.display()))?;
    let r = replay_log(BufReader::new(f), a.check_belief)?;
    for (t, reward) in r.rewards.iter().enumerate() {
        println!("step {t}: reward {reward}");
    }
    println!(
        "replayed {} steps, discounted return {} ({} belief digests checked)",
        r.steps, r.discounted_return, r.beliefs_checked
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenField(a) => gen_field(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Fidelity(a) => fidelity_cmd(a),
        Command::Serve(a) => serve(a),
        Command::Plan(a) => plan(a),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
