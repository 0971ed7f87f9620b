//! `sharvot`: run seeded elections, demo the Circle Shuffle and inspect
//! scripts or transactions.
//!
//! Exit codes: 0 success (including a refund outcome), 1 usage, config or
//! parse error, 2 protocol abort.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sharvot::circle_shuffle;
use sharvot::election::{run_election, ElectionConfig, Outcome};
use sharvot::ledger::Transaction;
use sharvot::script::{is_padding, Arm, Script, VoteScript};

#[derive(Debug, Parser)]
#[command(name = "sharvot", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an election from a JSON config and write its transcript.
    Run {
        /// Election config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Root seed; overrides the `seed` field of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Transcript output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a standalone Circle Shuffle over random items.
    Shuffle {
        /// Number of participants.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=64))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Disassemble a script or transaction given as hex.
    Inspect(InspectInput),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct InspectInput {
    /// Hex-encoded script or transaction.
    #[arg(long)]
    hex: Option<String>,
    /// File holding the hex encoding.
    #[arg(long)]
    file: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out),
        Command::Shuffle { n, seed } => cmd_shuffle(n as usize, seed),
        Command::Inspect(input) => cmd_inspect(&input),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_run(config: &PathBuf, seed: Option<u64>, out: &PathBuf) -> Result<String, Failure> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", config.display())))?;
    let mut cfg = ElectionConfig::from_json(&text).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = run_election(cfg).map_err(|e| Failure::usage(e.to_string()))?;
    std::fs::write(out, report.to_json())
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", out.display())))?;
    let mut text = String::new();
    for w in &report.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    if let Outcome::Aborted { .. } = report.outcome {
        return Err(Failure {
            code: 2,
            message: format!("{text}{}", report.summary()),
        });
    }
    let _ = writeln!(text, "{}", report.summary());
    Ok(text)
}

fn cmd_shuffle(n: usize, seed: u64) -> Result<String, Failure> {
    let demo = circle_shuffle::demo(n, seed).map_err(|e| Failure {
        code: 2,
        message: e.to_string(),
    })?;
    let mut text = String::new();
    let _ = writeln!(text, "session {}", hex::encode(demo.session_id));
    let _ = writeln!(text, "inputs:");
    for (i, item) in demo.items.iter().enumerate() {
        let _ = writeln!(text, "  [{i}] {}", hex::encode(item));
    }
    let _ = writeln!(text, "hops:");
    for hop in &demo.hops {
        let phase = if (hop.hop as usize) <= n { "shuffle" } else { "unveil" };
        let _ = writeln!(
            text,
            "  hop {:>3} {phase:<7} {} -> {} {} bytes{}",
            hop.hop,
            hop.from,
            hop.to,
            hop.bytes.len(),
            if hop.dropped { " (dropped)" } else { "" }
        );
    }
    let _ = writeln!(text, "output:");
    for (slot, (item, from)) in demo.run.order.iter().zip(demo.output_positions()).enumerate() {
        let origin = from.map_or("?".to_string(), |i| i.to_string());
        let _ = writeln!(text, "  [{slot}] {} (input {origin})", hex::encode(item));
    }
    let ok = demo.multiset_preserved();
    let _ = writeln!(text, "multiset preserved: {}", if ok { "yes" } else { "NO" });
    if ok {
        Ok(text)
    } else {
        Err(Failure {
            code: 2,
            message: format!("{text}output is not a permutation of the input"),
        })
    }
}

fn cmd_inspect(input: &InspectInput) -> Result<String, Failure> {
    let raw = match (&input.hex, &input.file) {
        (Some(h), _) => h.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?,
        (None, None) => return Err(Failure::usage("need --hex or --file")),
    };
    let compact: String = raw.split_whitespace().collect();
    if compact.is_empty() {
        return Err(Failure::usage("empty input"));
    }
    let bytes = hex::decode(&compact).map_err(|e| Failure::usage(format!("invalid hex: {e}")))?;
    if let Ok(tx) = Transaction::from_bytes(&bytes) {
        return Ok(render_transaction(&tx));
    }
    let script = Script::parse(&bytes).map_err(|e| Failure::usage(e.to_string()))?;
    Ok(render_script(&script))
}

fn render_transaction(tx: &Transaction) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "transaction {}", tx.txid());
    let _ = writeln!(text, "version {} locktime {}", tx.version, tx.locktime);
    for (i, input) in tx.inputs.iter().enumerate() {
        let _ = writeln!(text, "input {i}: {}:{}", input.prevout.txid, input.prevout.index);
        let _ = writeln!(text, "  unlocking: {}", input.unlocking.disassemble());
    }
    for (i, output) in tx.outputs.iter().enumerate() {
        let _ = writeln!(text, "output {i}: amount {}", output.amount);
        let _ = writeln!(text, "  locking: {}", output.locking.disassemble());
    }
    text
}

fn render_script(script: &Script) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "script ({} bytes)", script.byte_len());
    let _ = writeln!(text, "{}", script.disassemble());
    let Ok(vs) = VoteScript::from_script(script.clone()) else {
        return text;
    };
    let _ = writeln!(text, "vote script: {} arms, address {}", vs.arm_count(), hex::encode(vs.address()));
    for (i, arm) in vs.arms().iter().enumerate() {
        match arm {
            Arm::Multisig(m) => {
                let _ = writeln!(
                    text,
                    "arm {i}: {}-of-{} multisig, {} metadata slots ({} filled)",
                    m.required,
                    m.metadata.len() + m.keys.len(),
                    m.metadata.len(),
                    m.filled_slots().count()
                );
                for (j, slot) in m.metadata.iter().enumerate() {
                    if is_padding(slot) {
                        let _ = writeln!(text, "  slot {j:>2}: padding ({} bytes)", slot.len());
                    } else {
                        let _ = writeln!(text, "  slot {j:>2}: {}", hex::encode(slot));
                    }
                }
                for (j, key) in m.keys.iter().enumerate() {
                    let _ = writeln!(text, "  key  {j:>2}: {}", hex::encode(key));
                }
            }
            Arm::Refund(r) => {
                let _ = writeln!(text, "arm {i}: refund after locktime {}", r.locktime);
                let _ = writeln!(text, "  dealer key: {}", hex::encode(&r.dealer_key));
                for (j, chunk) in r.cosigner_chunks.iter().enumerate() {
                    let _ = writeln!(text, "  cosigner chunk {j}: 1-of-{}", chunk.len());
                    for key in chunk {
                        let _ = writeln!(text, "    {}", hex::encode(key));
                    }
                }
            }
        }
    }
    text
}
