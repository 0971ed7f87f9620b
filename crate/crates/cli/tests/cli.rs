//! The binary against direct library calls.

use std::path::Path;
use std::process::{Command, Output};

use sharvot::circle_shuffle;
use sharvot::crypto::keygen;
use sharvot::election::{run_election, Election, ElectionConfig};
use sharvot::script::build_multisig;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const EXAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example.json");

fn sharvot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sharvot")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_prints_winner_and_writes_the_library_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    let o = sharvot(&["run", "--config", EXAMPLE, "--seed", "3", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "winner: B\n");

    let mut cfg = ElectionConfig::from_json(&std::fs::read_to_string(EXAMPLE).unwrap()).unwrap();
    cfg.seed = 3;
    let report = run_election(cfg).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), report.to_json());
}

#[test]
fn run_uses_the_config_seed_without_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    assert!(sharvot(&["run", "--config", EXAMPLE, "--out", path_str(&out)]).status.success());
    let cfg = ElectionConfig::from_json(&std::fs::read_to_string(EXAMPLE).unwrap()).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), run_election(cfg).unwrap().to_json());
}

#[test]
fn refund_outcome_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tie.json");
    let cfg = r#"{"voters":4,"threshold":2,"fee":10,"locktime":6,"votes":["A","A","B","B"]}"#;
    std::fs::write(&cfg_path, cfg).unwrap();
    let out = dir.path().join("t.json");
    let o = sharvot(&["run", "--config", path_str(&cfg_path), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("refund:"));
}

#[test]
fn bad_configs_exit_one_without_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    for (name, body) in [
        ("truncated", r#"{"voters": 5, "thresh"#),
        ("unknown-field", r#"{"voters":2,"threshold":1,"fee":1,"locktime":1,"votes":["A","B"],"colour":1}"#),
        ("threshold", r#"{"voters":2,"threshold":2,"fee":1,"locktime":1,"votes":["A","B"]}"#),
        ("unknown-candidate", r#"{"voters":2,"threshold":1,"fee":1,"locktime":1,"votes":["A","Z"]}"#),
    ] {
        let cfg = dir.path().join(format!("{name}.json"));
        std::fs::write(&cfg, body).unwrap();
        let o = sharvot(&["run", "--config", path_str(&cfg), "--out", path_str(&out)]);
        assert_eq!(o.status.code(), Some(1), "{name}");
        assert!(!out.exists(), "{name}");
    }
    let o = sharvot(&["run", "--config", "/nonexistent.json", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(sharvot(&[]).status.code(), Some(1));
    assert_eq!(sharvot(&["run"]).status.code(), Some(1));
    assert_eq!(sharvot(&["bogus"]).status.code(), Some(1));
    assert_eq!(sharvot(&["inspect"]).status.code(), Some(1));
    assert_eq!(sharvot(&["inspect", "--hex", "00", "--file", "x"]).status.code(), Some(1));
    assert_eq!(sharvot(&["--help"]).status.code(), Some(0));
    assert_eq!(sharvot(&["--version"]).status.code(), Some(0));
}

#[test]
fn shuffle_lists_the_library_order() {
    let o = sharvot(&["shuffle", "--n", "4", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let demo = circle_shuffle::demo(4, 9).unwrap();
    let output: Vec<&str> = text
        .lines()
        .skip_while(|l| *l != "output:")
        .skip(1)
        .take_while(|l| l.starts_with("  ["))
        .collect();
    assert_eq!(output.len(), 4);
    for (line, item) in output.iter().zip(&demo.run.order) {
        assert!(line.contains(&hex::encode(item)), "{line}");
    }
    assert_eq!(text.lines().filter(|l| l.contains(" hop ")).count(), 8);
    assert!(text.ends_with("multiset preserved: yes\n"));
}

#[test]
fn shuffle_of_one_is_identity_and_zero_is_a_usage_error() {
    let text = stdout(&sharvot(&["shuffle", "--n", "1", "--seed", "2"]));
    assert!(text.contains("  [0] ") && text.contains("(input 0)"));
    assert_eq!(sharvot(&["shuffle", "--n", "0"]).status.code(), Some(1));
}

#[test]
fn inspect_metadata_multisig_shows_the_library_disassembly() {
    let kp = keygen(&mut ChaCha20Rng::seed_from_u64(1));
    let s = build_multisig(1, &[kp.public()], &[vec![0x11; 64], vec![0x22; 64]]).unwrap();
    let o = sharvot(&["inspect", "--hex", &s.to_hex()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == s.disassemble()));
    assert!(s.disassemble().starts_with("OP_1 <1111"));
    assert!(s.disassemble().ends_with("OP_3 OP_CHECKMULTISIG"));
}

#[test]
fn inspect_vote_script_and_commitment_transaction() {
    let cfg = ElectionConfig::from_json(&std::fs::read_to_string(EXAMPLE).unwrap()).unwrap();
    let mut e = Election::new(cfg).unwrap();
    e.submit_votes().unwrap();
    e.commit(None).unwrap();
    let vs = e.vote_script().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("vs.hex");
    std::fs::write(&file, format!("{}\n", vs.script().to_hex())).unwrap();
    let text = stdout(&sharvot(&["inspect", "--file", path_str(&file)]));
    assert!(text.lines().any(|l| l == vs.script().disassemble()));
    assert_eq!(text.matches("13 metadata slots (5 filled)").count(), 2);
    assert_eq!(text.matches("padding (121 bytes)").count(), 16);
    assert!(text.contains("refund after locktime"));

    let vct = e.vct().unwrap();
    let text = stdout(&sharvot(&["inspect", "--hex", &hex::encode(vct.to_bytes())]));
    assert!(text.starts_with(&format!("transaction {}\n", vct.txid())));
    assert!(text.contains(&vct.outputs[0].locking.disassemble()));
}

#[test]
fn inspect_rejects_empty_and_malformed_input() {
    assert_eq!(sharvot(&["inspect", "--hex", ""]).status.code(), Some(1));
    assert_eq!(sharvot(&["inspect", "--hex", "zz"]).status.code(), Some(1));
    assert_eq!(sharvot(&["inspect", "--hex", "ff"]).status.code(), Some(1));
    assert_eq!(sharvot(&["inspect", "--hex", "4d0002"]).status.code(), Some(1));
}
