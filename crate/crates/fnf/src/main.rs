use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use fnf::casas::{write_casas, PrefixMap};
use fnf::config::RunConfig;
use fnf::experiment::{check_report, run_experiment, Mode};
use fnf::formats::write_ndjson;
use fnf::net::{serve, SocketTa};
use fnf::run::{self, experiment_spec, forwarded_by_user, load_applets, load_inputs, load_registry, RunError};
use fnf_core::catalog::merge_applets;
use fnf_core::ta::{adversary_snapshot, TaPlatform};

#[derive(Parser)]
#[command(
    name = "fnf",
    version,
    about = "Privacy gateway between smart-home devices and a trigger-action platform"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse applet descriptions and print the merged lookup tables.
    ParseApplets {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        applets: PathBuf,
    },
    /// Write the configured trace in CASAS and NDJSON form.
    Generate(RunArgs),
    /// Replay the configured trace through the gateway.
    Replay(RunArgs),
    /// Run the two-user identification experiment and check its bands.
    Evaluate(RunArgs),
    /// Serve the platform over TCP.
    TaServe {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        applets: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Stop after this many connections.
        #[arg(long)]
        connections: Option<u64>,
        /// Directory for the platform's event log, written on exit.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECKS_FAILED: u8 = 3;

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

struct Resolved {
    cfg: RunConfig,
    mode: Mode,
    seed: u64,
    out: PathBuf,
}

fn resolve(args: &RunArgs) -> Result<Resolved, RunError> {
    let cfg = RunConfig::load(&args.config)?;
    Ok(Resolved {
        mode: args.mode.unwrap_or(cfg.mode),
        seed: args.seed.unwrap_or(cfg.seed),
        out: args.out.clone().unwrap_or_else(|| cfg.output.dir.clone()),
        cfg,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_metadata(
    out: &Path,
    command: &str,
    r: &Resolved,
    started: chrono::DateTime<chrono::Utc>,
    extra: serde_json::Value,
) -> Result<(), RunError> {
    write_json(
        &out.join("run.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "mode": r.mode.name(),
            "seed": r.seed,
            "started": started.to_rfc3339(),
            "finished": chrono::Utc::now().to_rfc3339(),
            "config": r.cfg,
            "details": extra,
        }),
    )
}

fn parse_applets_cmd(registry: &Path, applets: &Path) -> Result<u8, RunError> {
    let devices = load_registry(registry)?;
    let applets = load_applets(applets, &devices)?;
    let catalog = merge_applets(&applets, &devices)?;
    let tables = json!({
        "records": applets,
        "trigger_devices": catalog.trigger_devices().map(|d| d.as_str()).collect::<Vec<_>>(),
        "discrete": catalog.discrete_tables().collect::<Vec<_>>(),
        "numeric": catalog.numeric_tables().collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&tables).expect("serializable"));
    Ok(0)
}

fn generate_cmd(args: &RunArgs) -> Result<u8, RunError> {
    let started = chrono::Utc::now();
    let r = resolve(args)?;
    let inputs = load_inputs(&r.cfg, r.seed)?;
    fs::create_dir_all(&r.out)?;
    let epoch = chrono::NaiveDate::from_ymd_opt(2011, 6, 15).expect("valid date");
    fs::write(
        r.out.join("trace.casas"),
        write_casas(&inputs.events, epoch, &PrefixMap::default()),
    )?;
    write_ndjson(fs::File::create(r.out.join("trace.ndjson"))?, &inputs.events)?;
    write_metadata(
        &r.out,
        "generate",
        &r,
        started,
        json!({ "events": inputs.events.len(), "epoch": epoch.to_string() }),
    )?;
    println!("wrote {} events to {}", inputs.events.len(), r.out.display());
    Ok(0)
}

fn replay_cmd(args: &RunArgs) -> Result<u8, RunError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let r = resolve(args)?;
    let inputs = load_inputs(&r.cfg, r.seed)?;
    let params = r.cfg.fuzz.params();
    // Replay randomness is kept apart from trace generation.
    let replay_seed = r.seed.wrapping_add(0x5eed);
    let (log, report) = match &r.cfg.ta_addr {
        Some(addr) => {
            let ta = SocketTa::connect(addr.as_str())?;
            let (_, report) = run::replay(&inputs, &params, r.mode, ta, replay_seed)?;
            (None, report)
        }
        None => {
            let (ta, report) = run::replay(
                &inputs,
                &params,
                r.mode,
                TaPlatform::new(inputs.applets.clone()),
                replay_seed,
            )?;
            (Some(ta.into_log()), report)
        }
    };
    let elapsed = clock.elapsed().as_secs_f64();
    fs::create_dir_all(&r.out)?;
    write_ndjson(fs::File::create(r.out.join("forwarded.ndjson"))?, &report.forwarded)?;
    write_ndjson(fs::File::create(r.out.join("delivered.ndjson"))?, &report.delivered)?;
    write_ndjson(fs::File::create(r.out.join("refreshes.ndjson"))?, &report.refreshes)?;
    if let Some(log) = &log {
        write_ndjson(fs::File::create(r.out.join("adversary.ndjson"))?, log.events())?;
        write_json(
            &r.out.join("adversary_pattern.json"),
            &adversary_snapshot(log, params.buckets),
        )?;
    }
    let summary = json!({
        "input_events": report.stats.input_count,
        "forwarded": report.stats.forwarded_count,
        "forwarded_ratio": report.stats.forwarded_ratio(),
        "forwarded_by_user": forwarded_by_user(&report),
        "drops": report.stats.drops,
        "rounds": report.rounds,
        "sent_real": report.sent_real,
        "sent_pseudo": report.sent_pseudo,
        "discarded_replies": report.discarded,
        "protocol_errors": report.protocol_errors,
        "overhead_ratio": report.overhead_ratio(),
        "applets": inputs.applets.len(),
        "elapsed_seconds": elapsed,
    });
    write_json(&r.out.join("stats.json"), &summary)?;
    write_metadata(&r.out, "replay", &r, started, json!({ "replay_seed": replay_seed }))?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    Ok(if report.protocol_errors > 0 {
        EXIT_CHECKS_FAILED
    } else {
        0
    })
}

fn evaluate_cmd(args: &RunArgs) -> Result<u8, RunError> {
    let started = chrono::Utc::now();
    let r = resolve(args)?;
    let (spec, calibration) = experiment_spec(&r.cfg, r.seed)?;
    let report = run_experiment(&spec)?;
    let checks = check_report(&report, &r.cfg.thresholds);
    fs::create_dir_all(&r.out)?;
    write_json(&r.out.join("report.json"), &report)?;
    fs::write(r.out.join("series.csv"), report.csv())?;
    write_json(&r.out.join("checks.json"), &checks)?;
    let seeds: Vec<u64> = report.repetitions.iter().map(|rep| rep.trace_seed).collect();
    write_metadata(
        &r.out,
        "evaluate",
        &r,
        started,
        json!({ "calibration": calibration, "trace_seeds": seeds }),
    )?;
    for s in &report.summary {
        let show = |o: Option<fnf::experiment::Spread>| o.map_or("-".to_string(), |s| format!("{:.3}", s.mean));
        println!(
            "{:<14} r {:>7}  knn {:>6}  svm {:>6}  overhead {:>6}",
            s.mode.name(),
            show(s.pearson),
            show(s.knn_accuracy),
            show(s.svm_accuracy),
            show(s.overhead_ratio)
        );
    }
    let mut ok = true;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.pass;
    }
    Ok(if ok { 0 } else { EXIT_CHECKS_FAILED })
}

fn ta_serve_cmd(
    registry: &Path,
    applets: &Path,
    listen: &str,
    connections: Option<u64>,
    out: Option<&Path>,
) -> Result<u8, RunError> {
    let devices = load_registry(registry)?;
    let applets = load_applets(applets, &devices)?;
    let listener = TcpListener::bind(listen)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut ta = TaPlatform::new(applets);
    let batches = serve(&listener, &mut ta, connections)?;
    log::info!("served {batches} batches");
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_ndjson(fs::File::create(out.join("adversary.ndjson"))?, ta.log().events())?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::ParseApplets { registry, applets } => parse_applets_cmd(registry, applets),
        Command::Generate(a) => generate_cmd(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::TaServe {
            registry,
            applets,
            listen,
            connections,
            out,
        } => ta_serve_cmd(registry, applets, listen, *connections, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
