//! `v2x` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing or corrupt
//! artifact, 4 numerical failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use v2x_core::config::ENV_OVERRIDE_PREFIX;
use v2x_core::env::{Environment, Mode};
use v2x_core::graph::{count_aggregation_ops, GraphMode, GraphTopology};
use v2x_core::metrics::{self, Manifest};
use v2x_core::orchestrator::{self, EvalSummary, Models, Policy};
use v2x_core::{LabConfig, LabError, Result};

#[derive(Parser, Debug)]
#[command(name = "v2x", version, about = "GNN + DDQN spectrum and power allocation lab for V2X")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for the manifest, CSVs and checkpoints.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    iterations: Option<u64>,
    /// Vehicle count(s), comma separated. Training uses the first value.
    #[arg(long, global = true, value_delimiter = ',')]
    vehicles: Vec<usize>,
    /// `static` or `dynamic` for `test`; `implicit` or `complete` for
    /// `inspect-graph`.
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Train GNN-DDQN (or plain DQN) and write checkpoints.
    Train {
        #[arg(long, value_enum, default_value = "gnn-ddqn")]
        policy: PolicyArg,
    },
    /// Greedy evaluation of trained checkpoints over a vehicle sweep.
    Test {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Dynamic-population run with trained checkpoints or the random policy.
    Dynamic {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gnn-ddqn")]
        policy: PolicyArg,
    },
    /// Baseline evaluation: the random policy, or plain DQN trained on the
    /// same budget.
    Baseline {
        #[arg(long, value_enum, default_value = "random")]
        policy: PolicyArg,
    },
    /// Build one placement's link graph and dump it.
    InspectGraph,
    /// Aggregation multiplication counts of both graph modes.
    CountOps {
        /// Vehicle counts, comma separated.
        #[arg(long = "s", value_delimiter = ',', default_value = "10,20,50,100")]
        s: Vec<usize>,
    },
    /// Power-level shares by remaining time from a decision log.
    Strategy {
        #[arg(long)]
        decisions: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    GnnDdqn,
    Dqn,
    Random,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::GnnDdqn => Policy::GnnDdqn,
            PolicyArg::Dqn => Policy::PlainDqn,
            PolicyArg::Random => Policy::Random,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::Config(_) => 2,
        LabError::MissingArtifact(_) | LabError::CorruptCheckpoint { .. } => 3,
        LabError::Numerical(_) => 4,
        _ => 1,
    }
}

fn load_config(common: &Common) -> Result<LabConfig> {
    let base = match &common.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    let mut cfg = base.apply_overrides(std::env::vars().filter(|(k, _)| k.starts_with(ENV_OVERRIDE_PREFIX)))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.iterations {
        cfg.run.iterations = n;
    }
    if let Some(&v) = common.vehicles.first() {
        cfg.run.vehicles = v;
        cfg.run.vehicle_sweep = common.vehicles.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.clone();
    match cli.verb {
        Verb::Train { policy } => train(&cfg, policy.into(), &out, "train"),
        Verb::Test { checkpoints } => match cli.common.mode.as_deref() {
            None | Some("static") => {
                let dir = checkpoints.ok_or_else(|| LabError::config("test needs --checkpoints DIR"))?;
                let models = Models::load(&cfg, &dir)?;
                let manifest = Manifest::new("test", &cfg).with_argument("checkpoints", dir.display());
                sweep(&cfg, Some(&models), models.policy(), &out, manifest)
            }
            Some("dynamic") => dynamic(&cfg, checkpoints, Policy::GnnDdqn, &out),
            Some(other) => Err(LabError::config(format!("unknown --mode {other} for test (static|dynamic)"))),
        },
        Verb::Dynamic { checkpoints, policy } => dynamic(&cfg, checkpoints, policy.into(), &out),
        Verb::Baseline { policy } => match Policy::from(policy) {
            Policy::Random => sweep(&cfg, None, Policy::Random, &out, Manifest::new("baseline", &cfg).with_argument("policy", "random")),
            Policy::PlainDqn => train(&cfg, Policy::PlainDqn, &out, "baseline"),
            Policy::GnnDdqn => Err(LabError::config("baseline policies are random and dqn")),
        },
        Verb::InspectGraph => inspect_graph(&cfg, cli.common.mode.as_deref(), &out),
        Verb::CountOps { s } => count_ops(&cfg, &s, &out),
        Verb::Strategy { decisions } => strategy(&cfg, &decisions, &out),
    }
}

fn train(cfg: &LabConfig, policy: Policy, out: &Path, verb: &str) -> Result<()> {
    if policy == Policy::Random {
        return Err(LabError::config("the random policy has nothing to train; use `baseline`"));
    }
    let manifest = Manifest::new(verb, cfg).with_argument("policy", policy.label());
    let hash = manifest.write(out)?;
    let ckpt = out.join("checkpoints");
    let mut save = |it: u64, models: &Models| -> Result<()> {
        info!("iteration {it}: checkpoint written to {}", ckpt.display());
        models.save(&ckpt)
    };
    let (models, report) = orchestrator::train(cfg, policy, cfg.seed, cfg.run.iterations, Some(&mut save))?;
    metrics::write_metrics(&out.join("metrics.csv"), &hash, &report.rows)?;
    let mut losses: Vec<Vec<String>> =
        report.td_losses.iter().map(|(i, l)| vec!["ddqn".to_string(), i.to_string(), l.to_string()]).collect();
    losses.extend(report.sage_losses.iter().map(|(i, l)| vec!["graphsage".to_string(), i.to_string(), l.to_string()]));
    metrics::write_table(&out.join("losses.csv"), &hash, &["network", "iteration", "loss"], &losses)?;
    if verb == "baseline" {
        let test_manifest = Manifest::new("baseline-test", cfg).with_argument("policy", policy.label());
        sweep(cfg, Some(&models), policy, &out.join("test"), test_manifest)?;
    }
    println!("trained {} for {} iterations; checkpoints in {}", policy.label(), cfg.run.iterations, ckpt.display());
    Ok(())
}

fn sweep(cfg: &LabConfig, models: Option<&Models>, policy: Policy, out: &Path, manifest: Manifest) -> Result<()> {
    let hash = manifest.write(out)?;
    let mut rows = Vec::new();
    let mut decisions = Vec::new();
    let mut summaries: Vec<EvalSummary> = Vec::new();
    for &v in &cfg.run.vehicle_sweep {
        let res = orchestrator::evaluate_static(cfg, models, policy, cfg.seed, v, cfg.run.test_resets, cfg.run.test_samples)?;
        println!(
            "{:>9} vehicles={v:<4} v2i_sum_rate_mbps={:.3}±{:.3} v2v_success={:.4}±{:.4}",
            policy.label(),
            res.summary.v2i_sum_rate_bps.mean / 1e6,
            res.summary.v2i_sum_rate_bps.se / 1e6,
            res.summary.v2v_success_rate.mean,
            res.summary.v2v_success_rate.se
        );
        rows.extend(res.rows);
        decisions.extend(res.decisions);
        summaries.push(res.summary);
    }
    metrics::write_metrics(&out.join("metrics.csv"), &hash, &rows)?;
    metrics::write_decisions(&out.join("decisions.csv"), &hash, &decisions)?;
    let table: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.policy.label().to_string(),
                s.vehicles.to_string(),
                s.resets.to_string(),
                s.samples.to_string(),
                s.v2i_sum_rate_bps.mean.to_string(),
                s.v2i_sum_rate_bps.se.to_string(),
                s.v2v_success_rate.mean.to_string(),
                s.v2v_success_rate.se.to_string(),
            ]
        })
        .collect();
    metrics::write_table(
        &out.join("summary.csv"),
        &hash,
        &["policy", "vehicle_count", "resets", "samples", "v2i_sum_rate_bps_mean", "v2i_sum_rate_bps_se", "v2v_success_rate_mean", "v2v_success_rate_se"],
        &table,
    )
}

fn dynamic(cfg: &LabConfig, checkpoints: Option<PathBuf>, policy: Policy, out: &Path) -> Result<()> {
    let (models, policy) = match (policy, checkpoints) {
        (Policy::Random, _) => (None, Policy::Random),
        (_, Some(dir)) => {
            let m = Models::load(cfg, &dir)?;
            let p = m.policy();
            (Some(m), p)
        }
        (_, None) => return Err(LabError::config("dynamic needs --checkpoints DIR unless --policy random")),
    };
    let hash = Manifest::new("dynamic", cfg).with_argument("policy", policy.label()).write(out)?;
    let res = orchestrator::evaluate_dynamic(cfg, models.as_ref(), policy, cfg.seed, cfg.run.dynamic_steps)?;
    metrics::write_metrics(&out.join("metrics.csv"), &hash, &res.rows)?;
    metrics::write_table(&out.join("segments.csv"), &hash, &metrics::SEGMENT_HEADER, &metrics::segment_records(&res.segments))?;
    let events: Vec<Vec<String>> = res
        .events
        .iter()
        .map(|e| {
            let ids = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            vec![e.slot.to_string(), ids(&e.added), ids(&e.removed), e.vehicles_after.to_string()]
        })
        .collect();
    metrics::write_table(&out.join("events.csv"), &hash, &["slot", "added", "removed", "vehicles_after"], &events)?;
    for s in &res.segments {
        println!(
            "segment {} samples={} vehicles median={} success median={:.4} mean={:.4} v2i median={:.3} Mbps",
            s.segment,
            s.samples,
            s.vehicle_count.median,
            s.v2v_success_rate.median,
            s.v2v_success_rate.mean,
            s.v2i_sum_rate_bps.median / 1e6
        );
    }
    Ok(())
}

fn inspect_graph(cfg: &LabConfig, mode: Option<&str>, out: &Path) -> Result<()> {
    let mode = match mode {
        None | Some("implicit") => GraphMode::Implicit,
        Some("complete") => GraphMode::Complete,
        Some(other) => return Err(LabError::config(format!("unknown --mode {other} for inspect-graph (implicit|complete)"))),
    };
    let env = Environment::new(&cfg.env, Mode::Static, cfg.run.vehicles, cfg.graph.destinations_per_vehicle, cfg.seed, 0)?;
    let topo = match mode {
        GraphMode::Implicit => env.graph().clone(),
        GraphMode::Complete => {
            let positions = env.vehicles().map(|v| (v.id, v.position)).collect();
            GraphTopology::from_links(env.links().to_vec(), &positions, GraphMode::Complete)?
        }
    };
    topo.check_invariants()?;
    let hash = Manifest::new("inspect-graph", cfg).with_argument("mode", format!("{mode:?}").to_lowercase()).write(out)?;
    std::fs::write(out.join("graph.txt"), format!("# manifest sha256={hash}\n{}", topo.dump()))?;
    println!(
        "vehicles={} nodes={} edges={} mean_degree={:.3} max_distance_m={:.3}",
        env.vehicle_count(),
        topo.len(),
        topo.edge_count(),
        topo.mean_degree(),
        topo.max_distance()
    );
    Ok(())
}

fn count_ops(cfg: &LabConfig, s: &[usize], out: &Path) -> Result<()> {
    let (d_in, d_out) = (cfg.env.feature_dim(), cfg.sage.embed_dim);
    let hash = Manifest::new("count-ops", cfg).write(out)?;
    println!("{:>6} {:>6} {:>16} {:>16} {:>10}", "s", "nodes", "complete", "implicit", "ratio");
    let mut rows = Vec::new();
    for &v in s {
        let complete = count_aggregation_ops(v, d_in, d_out, GraphMode::Complete);
        let implicit = count_aggregation_ops(v, d_in, d_out, GraphMode::Implicit);
        let ratio = implicit as f64 / complete as f64;
        println!("{v:>6} {:>6} {complete:>16} {implicit:>16} {ratio:>10.6}", 3 * v);
        rows.push(vec![v.to_string(), (3 * v).to_string(), complete.to_string(), implicit.to_string(), ratio.to_string()]);
    }
    metrics::write_table(&out.join("ops.csv"), &hash, &["s", "nodes", "complete_ops", "implicit_ops", "ratio"], &rows)
}

fn strategy(cfg: &LabConfig, decisions: &Path, out: &Path) -> Result<()> {
    let logs = metrics::read_decisions(decisions)?;
    let bin_slots = ((0.01 / cfg.env.small_step_s).round() as usize).max(1);
    let bins = orchestrator::strategy_histogram(&logs, bin_slots, cfg.env.small_step_s, cfg.env.power_level_count());
    let hash = Manifest::new("strategy", cfg).with_argument("decisions", decisions.display()).write(out)?;
    let (header, rows) = metrics::strategy_records(&bins, &cfg.env.power_levels_dbm);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    metrics::write_table(&out.join("strategy.csv"), &hash, &header, &rows)?;
    for b in &bins {
        let shares: Vec<String> = b.shares.iter().map(|s| format!("{s:.3}")).collect();
        println!("U in ({:.3}, {:.3}] s  n={:<6} shares={}", b.lower_s, b.upper_s, b.decisions, shares.join(" "));
    }
    Ok(())
}
