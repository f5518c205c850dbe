use std::fs;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agentic_auv::agent::TemplateBackend;
use agentic_auv::bus::Bus;
use agentic_auv::codesynth::{synthesize_and_deploy, NodeRequirement};
use agentic_auv::diagnostics::{Monitor, Thresholds};
use agentic_auv::scenario::{
    collect_reports, replay_file, run_scenario, verify_files, BackendKind, Overrides, ScenarioConfig,
};
use agentic_auv::sim::VehicleStatus;
use agentic_auv::topics::standard_registry;

#[derive(Parser)]
#[command(name = "agentic-auv", about = "Deterministic multi-agent AUV autonomy scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and write traces, CSVs and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Run only this seed instead of the scenario's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trace and check the recorded inbox digests.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Diagnose a JSON-lines log of vehicle status samples.
    Diagnose {
        #[arg(long)]
        status_log: PathBuf,
    },
    /// Synthesize, test and deploy a node from a JSON requirement.
    Synth {
        #[arg(long)]
        request: PathBuf,
        #[arg(long, default_value = "synth_node")]
        node_id: String,
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
    },
    /// Summarize every summary.json below a directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            backend,
            ticks,
            out,
        } => {
            let mut config = ScenarioConfig::load(&scenario)?;
            Overrides { seed, backend, ticks }.apply(&mut config)?;
            let bundle = run_scenario(&config, &out)?;
            println!("{} ({}) seeds {:?}", bundle.name, bundle.experiment, bundle.seeds);
            for (k, v) in &bundle.metrics {
                println!("  {k} = {v}");
            }
            for a in &bundle.assertions {
                let verdict = if a.passed { "PASS" } else { "FAIL" };
                println!(
                    "  {verdict} {} = {:?} (min {:?}, max {:?})",
                    a.metric, a.value, a.min, a.max
                );
            }
            println!("  report digest {}", bundle.report_digest());
            Ok(bundle.passed)
        }
        Cmd::Replay { trace } => {
            let r = replay_file(&trace)?;
            println!(
                "replayed {} entries into {} subscriptions: {}",
                r.entries,
                r.subscriptions,
                if r.matched { "inbox digests match" } else { "MISMATCH" }
            );
            for m in &r.mismatches {
                println!("  differs: {m}");
            }
            Ok(r.matched)
        }
        Cmd::Diagnose { status_log } => {
            let mut monitor = Monitor::new(Thresholds::default());
            let mut last: Option<String> = None;
            for (i, line) in BufReader::new(fs::File::open(&status_log)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let status = VehicleStatus::from_json(&serde_json::from_str(&line)?)
                    .map_err(|e| format!("line {}: {e}", i + 1))?;
                if let Some(d) = monitor.push(status).map_err(|e| format!("line {}: {e}", i + 1))? {
                    let text = format!("{}\n{}\n{}", d.issue, d.status, d.action);
                    if last.as_deref() != Some(text.as_str()) {
                        println!("sample {}:\n{text}", i + 1);
                        last = Some(text);
                    }
                }
            }
            if last.is_none() {
                println!("fewer than ten samples: no diagnosis");
            }
            Ok(true)
        }
        Cmd::Synth { request, node_id, out } => {
            let req: NodeRequirement = serde_json::from_slice(&fs::read(&request)?)?;
            fs::create_dir_all(&out)?;
            let mut bus = Bus::new(standard_registry(), 0);
            let mut reasoner = TemplateBackend::standard("codesynth");
            let report = synthesize_and_deploy(&mut bus, &node_id, &req, &mut reasoner, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.deployed)
        }
        Cmd::Report { dir } => {
            let reports = collect_reports(&dir)?;
            if reports.is_empty() {
                println!("no summary.json under {}", dir.display());
                return Ok(false);
            }
            let mut ok = true;
            for (path, b) in &reports {
                let base = path.parent().unwrap_or(&dir);
                let stale = verify_files(base, b);
                let passed = b.assertions.iter().filter(|a| a.passed).count();
                println!(
                    "{:<28} {:<15} assertions {}/{}  files {} ({} changed)  digest {}",
                    b.name,
                    b.experiment,
                    passed,
                    b.assertions.len(),
                    b.files.len(),
                    stale.len(),
                    &b.report_digest()[..16]
                );
                for a in b.assertions.iter().filter(|a| !a.passed) {
                    println!("    FAIL {} = {:?}", a.metric, a.value);
                }
                ok &= b.passed && stale.is_empty();
            }
            Ok(ok)
        }
    }
}
