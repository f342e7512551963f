use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::ChaCha8Rng;

use delayctl::error::{Error, Result};
use delayctl::mdp::{build_instance, relative_value_iteration, MdpConfig};
use delayctl::routing::{lone_packet_hops, shortest_hops};
use delayctl::sim::output::{csv_string, records, write_csv, write_json, write_learning_csv, Record};
use delayctl::sim::{adapt_multipliers, run, stream, sweep, Scenario, Stream, SweepRow, Targets};

#[derive(Parser)]
#[command(name = "delayctl", version, about = "Delay-aware wireless resource control and backpressure routing simulator")]
struct Cli {
    /// Progress and diagnostics on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario.
    Run(RunArgs),
    /// Cross-product sweep of one numeric field over a seed list.
    Sweep(SweepArgs),
    /// Relative value iteration on a small MDP instance.
    Oracle(OracleArgs),
    /// Multi-hop routing run with the per-node report.
    Routing(RoutingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Record wall-clock time per run (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Tune the power multiplier to the scenario's average power budget first.
    #[arg(long)]
    tune: bool,
    /// Drop-rate ceiling for the tuning step (MDP policies only).
    #[arg(long, requires = "tune")]
    drop_target: Option<f64>,
    /// Write start-of-slot queue lengths as CSV.
    #[arg(long)]
    queue_trace: Option<PathBuf>,
    /// Write the learning trace as CSV (learned-potential policy).
    #[arg(long)]
    learning_trace: Option<PathBuf>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Dotted field path, e.g. `single_hop.avg_snr_db`.
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct OracleArgs {
    /// MDP instance as TOML.
    instance: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    max_sweeps: usize,
}

#[derive(Args)]
struct RoutingArgs {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Instead of a run, inject single packets into the empty network and
    /// report their hop counts.
    #[arg(long)]
    lone_packet: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(out: &OutputArgs, recs: &[Record]) -> Result<()> {
    let mut w = sink(&out.output)?;
    match out.format {
        Format::Csv => write_csv(&mut w, recs)?,
        Format::Json => {
            write_json(&mut w, recs)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn cmd_run(a: RunArgs, verbose: u8) -> Result<()> {
    let mut s = load(&a.scenario, a.seed)?;
    s.trace_queues |= a.queue_trace.is_some();
    if a.tune {
        let h = s.single_hop.as_ref().ok_or_else(|| Error::Mismatch("--tune needs a single-hop scenario".into()))?;
        let targets = Targets { power: Some(h.power_budget()), drop: a.drop_target, ..Default::default() };
        let (tuned, rec) = adapt_multipliers(&s, &targets)?;
        if verbose > 0 {
            for st in &rec.steps {
                eprintln!("tune {}={:.6e} power {:.4} drop {:.4}", st.knob, st.value, st.power, st.drop);
            }
        }
        s = tuned;
    }
    let r = run(&s)?;
    if verbose > 0 {
        eprintln!("{} seed {} {} slots in {} ms", r.policy, r.seed, r.metrics.slots, r.wall_ms);
    }
    if let (Some(p), Some(trace)) = (&a.queue_trace, &r.queue_trace) {
        let mut w = csv::Writer::from_path(p)?;
        for row in trace {
            w.write_record(row.iter().map(|q| q.to_string()))?;
        }
        w.flush()?;
    }
    if let Some(p) = &a.learning_trace {
        let rows = r.learning_trace.as_deref().unwrap_or_default();
        write_learning_csv(BufWriter::new(File::create(p)?), rows)?;
    }
    emit(&a.out, &[Record::new(&r, "", 0.0, a.out.timing)])
}

fn cmd_sweep(a: SweepArgs, verbose: u8) -> Result<()> {
    let s = Scenario::load(&a.scenario)?;
    let rows: Vec<SweepRow> = sweep(&s, &a.axis, &a.values, &a.seeds)?;
    if verbose > 0 {
        eprintln!("{} runs over {} = {:?}", rows.len(), a.axis, a.values);
    }
    let recs = records(&rows, a.out.timing);
    if verbose > 1 {
        eprint!("{}", csv_string(&recs)?);
    }
    emit(&a.out, &recs)
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.instance)?;
    let cfg: MdpConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let inst = build_instance(cfg)?;
    let sol = relative_value_iteration(&inst, a.tol, a.max_sweeps)?;
    println!("theta = {}", sol.theta);
    println!("sweeps = {}", sol.span_history.len());
    println!("span = {:e}", sol.span_history.last().copied().unwrap_or(f64::NAN));
    for (s, (&act, v)) in sol.policy.iter().zip(&sol.v).enumerate() {
        println!("state {s}: h = {v:.6}, action {:?}", inst.actions[act]);
    }
    Ok(())
}

fn cmd_routing(a: RoutingArgs, verbose: u8) -> Result<()> {
    let s = load(&a.scenario, a.seed)?;
    let mh = s.multi_hop.as_ref().ok_or_else(|| Error::Mismatch("routing needs a multi_hop scenario".into()))?;
    let mut w = sink(&a.output)?;
    if let Some(trials) = a.lone_packet {
        let net = mh.topology.build()?;
        let hmin = shortest_hops(&net, net.commodities[0].source, 0)?;
        let mut rng: ChaCha8Rng = stream(s.seed, Stream::Links);
        let hops = (0..trials)
            .map(|_| lone_packet_hops(&net, mh.variant, 0, 100_000, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let done: Vec<u32> = hops.iter().flatten().copied().collect();
        let mean = done.iter().map(|&h| h as f64).sum::<f64>() / done.len().max(1) as f64;
        writeln!(w, "{}", serde_json::json!({ "h_min": hmin, "trials": trials, "delivered": done.len(), "mean_hops": mean, "hops": hops }))?;
    } else {
        let r = run(&s)?;
        if verbose > 0 {
            eprintln!("{} seed {} in {} ms", r.policy, r.seed, r.wall_ms);
        }
        serde_json::to_writer_pretty(&mut w, &r.routing)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a, cli.verbose),
        Cmd::Sweep(a) => cmd_sweep(a, cli.verbose),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Routing(a) => cmd_routing(a, cli.verbose),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
