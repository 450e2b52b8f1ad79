use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use trustalloc_core::allocation::{AllocationAutomaton, TrustSnapshot};
use trustalloc_core::automata::Symbol;
use trustalloc_core::planner::{build_spec, build_transition_system, plan, ProductAutomaton};
use trustalloc_core::sim::{
    metrics, read_jsonl, write_jsonl, write_metrics_csv, write_robot_trust_csv, write_trust_csv, HumanModel, Metrics,
    Session, SimError,
};
use trustalloc_core::trust::trace::{read_trace, replay, write_summaries};
use trustalloc_core::trust::TrustParams;
use trustalloc_core::world::{load_scenario, sense, Scenario};
use trustalloc_service::{Config, Hub};

#[derive(Parser)]
#[command(name = "trustalloc", version, about = "Trust-aware multi-robot task allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the allocation automaton and print its maximum-trust path.
    Synthesize {
        #[arg(long)]
        scenario: PathBuf,
        /// `uniform:<value>` or a JSON file mapping robot ids to trust values.
        #[arg(long, default_value = "uniform:0.5")]
        trust: String,
        /// Write the automaton as DOT to this file.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Replay a factor/observation trace through the trust filter.
    Filter {
        /// CSV with columns t,performance,safety,env_workload,supervision_workload,ac,ac_prev,h.
        #[arg(long)]
        trace: PathBuf,
        /// JSON trust parameters; defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan one robot's motion for one action from its start cell.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        robot: String,
        /// Action symbol to perform.
        #[arg(long)]
        assignment: String,
        /// Predecessor action whose station must be observed first.
        #[arg(long)]
        after: Option<String>,
        /// Plan with every obstacle known instead of the robot's initial sensing.
        #[arg(long)]
        reveal: bool,
        /// Write the product automaton as DOT to this file.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Run a session headless and write its event log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// `auto`, `threshold:<theta>` or `scripted:<file>`; the scenario's model when omitted.
        #[arg(long)]
        human: Option<String>,
        /// Seed for stochastic decisions; the scenario's seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        max_ticks: u64,
    },
    /// Turn an event log into CSV files.
    Export {
        #[arg(long)]
        log: PathBuf,
        /// Output directory.
        #[arg(long)]
        csv: PathBuf,
    },
    /// Host interactive sessions over HTTP.
    Serve {
        #[arg(long, env = "TRUSTALLOC_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "TRUSTALLOC_PERSIST_DIR")]
        persist_dir: Option<PathBuf>,
        #[arg(long, env = "TRUSTALLOC_MAX_SESSIONS", default_value_t = 64)]
        max_sessions: usize,
    },
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_scenario(&text).with_context(|| format!("loading {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_trust(spec: &str, scenario: &Scenario) -> Result<TrustSnapshot> {
    if let Some(v) = spec.strip_prefix("uniform:") {
        let v: f64 = v.parse().with_context(|| format!("bad uniform trust `{v}`"))?;
        return Ok(TrustSnapshot::uniform(&scenario.profiles(), v)?);
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    let values: BTreeMap<String, f64> = serde_json::from_str(&text).with_context(|| format!("parsing {spec}"))?;
    let pairs: Vec<(&str, f64)> = values.iter().map(|(r, &t)| (r.as_str(), t)).collect();
    Ok(TrustSnapshot::from_pairs(&pairs)?)
}

fn parse_human(spec: &str) -> Result<HumanModel> {
    if spec == "auto" {
        return Ok(HumanModel::Stochastic);
    }
    if let Some(theta) = spec.strip_prefix("threshold:") {
        let theta = theta.parse().with_context(|| format!("bad threshold `{theta}`"))?;
        return Ok(HumanModel::Threshold { theta });
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let decisions: Vec<bool> =
            serde_json::from_str(&text).with_context(|| format!("{path}: expected a JSON array of booleans"))?;
        return Ok(HumanModel::Scripted { decisions });
    }
    bail!("unknown human model `{spec}`; expected auto, threshold:<theta> or scripted:<file>")
}

fn synthesize(scenario: &Path, trust: &str, dot: Option<&Path>) -> Result<()> {
    let scenario = read_scenario(scenario)?;
    let trust = parse_trust(trust, &scenario)?;
    let psi = AllocationAutomaton::synthesize(&scenario.subtasks, &scenario.profiles())?;
    let path = psi.max_trust_path(&trust)?;
    println!(
        "states: {}  transitions: {}  accepting: {}",
        psi.states().len(),
        psi.transitions().len(),
        psi.accepting().len()
    );
    println!("path: {path}");
    println!("steps: {}  total trust: {}", path.len(), path.total_trust);
    for robot in scenario.profiles() {
        let own: Vec<String> = path.project(&robot.id).iter().map(|(step, s, _)| format!("{s}@{step}")).collect();
        println!("  {}: {}", robot.id, if own.is_empty() { "-".into() } else { own.join(" ") });
    }
    if let Some(dot) = dot {
        write_file(dot, &psi.to_dot())?;
    }
    Ok(())
}

fn filter(trace: &Path, params: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let params: TrustParams = match params {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrustParams::default(),
    };
    let rows = read_trace(File::open(trace).with_context(|| format!("opening {}", trace.display()))?)?;
    let summaries = replay(&rows, &params)?;
    match out {
        Some(p) => write_summaries(File::create(p).with_context(|| format!("creating {}", p.display()))?, &summaries)?,
        None => write_summaries(io::stdout().lock(), &summaries)?,
    }
    Ok(())
}

fn plan_cmd(
    scenario: &Path,
    robot: &str,
    assignment: &str,
    after: Option<&str>,
    reveal: bool,
    dot: Option<&Path>,
) -> Result<()> {
    let scenario = read_scenario(scenario)?;
    let mut state = scenario
        .robots
        .iter()
        .find(|r| r.id().as_str() == robot)
        .cloned()
        .ok_or_else(|| anyhow!("no robot `{robot}` in the scenario"))?;
    let symbol = Symbol::new(assignment);
    if !state.profile.can(&symbol) {
        bail!("robot `{robot}` cannot perform `{assignment}`");
    }
    state.known_obstacles = if reveal {
        scenario.world.obstacles.clone()
    } else {
        sense(&scenario.world, &state)
    };
    let pred = after.map(Symbol::new);
    let spec = build_spec(&scenario.world, &symbol, pred.as_ref())?;
    let ts = build_transition_system(&scenario.world, &state, &Default::default());
    if let Some(dot) = dot {
        write_file(dot, &ProductAutomaton::build(&ts, &spec).to_dot())?;
    }
    let p = plan(&ts, &spec)?;
    let cells: Vec<String> = p.cells.iter().map(ToString::to_string).collect();
    println!("{}", cells.join(" -> "));
    println!("cost: {}", p.cost);
    Ok(())
}

fn summary(m: &Metrics) -> serde_json::Value {
    serde_json::json!({
        "makespan": m.makespan,
        "last_tick": m.last_tick,
        "completions": m.completions,
        "avoided": m.avoided,
        "moves": m.moves,
        "requests": m.requests,
        "allowed": m.allowed,
        "denied": m.denied,
        "reallocations": m.reallocations,
    })
}

fn run(scenario: &Path, human: Option<&str>, seed: Option<u64>, out: &Path, max_ticks: u64) -> Result<()> {
    let scenario = read_scenario(scenario)?;
    let human = match human {
        Some(h) => parse_human(h)?,
        None => scenario.config.human.clone(),
    };
    if matches!(human, HumanModel::Interactive) {
        bail!("the interactive human model needs `serve`; choose auto, threshold:<theta> or scripted:<file>");
    }
    let seed = seed.unwrap_or(scenario.config.seed);
    let mut session = Session::with_options(scenario, human, seed)?;
    let outcome = session.run(max_ticks);
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    write_jsonl(&mut w, session.log())?;
    w.flush()?;
    match outcome {
        Ok(()) => {
            println!("{}", serde_json::to_string_pretty(&summary(&metrics(session.log())))?);
            Ok(())
        }
        Err(e @ (SimError::Deadlock { .. } | SimError::TickLimit(_))) => {
            Err(anyhow!(e).context(format!("run stopped; partial log written to {}", out.display())))
        }
        Err(e) => Err(e.into()),
    }
}

fn export(log: &Path, dir: &Path) -> Result<()> {
    let file = File::open(log).with_context(|| format!("opening {}", log.display()))?;
    let records = read_jsonl(BufReader::new(file)).with_context(|| format!("parsing {}", log.display()))?;
    let m = metrics(&records);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: String| {
        let path = dir.join(name);
        File::create(&path).with_context(|| format!("creating {}", path.display()))
    };
    write_trust_csv(create("trust.csv".into())?, &m)?;
    for (robot, points) in &m.trust {
        write_robot_trust_csv(create(format!("trust_{robot}.csv"))?, points)?;
    }
    write_metrics_csv(create("metrics.csv".into())?, &m)?;
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary(&m))?)?;
    println!("wrote {} robots to {}", m.trust.len(), dir.display());
    Ok(())
}

fn serve(bind: SocketAddr, persist_dir: Option<PathBuf>, max_sessions: usize) -> Result<()> {
    let hub = Arc::new(Hub::new(Config {
        max_sessions,
        persist_dir,
        ..Config::default()
    }));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        trustalloc_service::serve(listener, hub).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synthesize { scenario, trust, dot } => synthesize(&scenario, &trust, dot.as_deref()),
        Command::Filter { trace, params, out } => filter(&trace, params.as_deref(), out.as_deref()),
        Command::Plan {
            scenario,
            robot,
            assignment,
            after,
            reveal,
            dot,
        } => plan_cmd(&scenario, &robot, &assignment, after.as_deref(), reveal, dot.as_deref()),
        Command::Run {
            scenario,
            human,
            seed,
            out,
            max_ticks,
        } => run(&scenario, human.as_deref(), seed, &out, max_ticks),
        Command::Export { log, csv } => export(&log, &csv),
        Command::Serve {
            bind,
            persist_dir,
            max_sessions,
        } => serve(bind, persist_dir, max_sessions),
    }
}
