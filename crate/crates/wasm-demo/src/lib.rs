//! Browser bindings: each export takes plain arguments and returns a JSON
//! string, either the result or `{"error": "..."}`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use sharvot::circle_shuffle;
use sharvot::election::{run_election, ElectionConfig};
use sharvot::shamir::{reconstruct_secret, split_secret, PrimeField, SharingConfig};
use wasm_bindgen::prelude::wasm_bindgen;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// Splits `secret` into `n` shares with threshold `t` over `F_prime`
/// (`prime = 0` selects the curve order) and reconstructs from a quorum
/// and from one share fewer.
#[wasm_bindgen]
pub fn shamir_demo(secret: u64, t: usize, n: usize, prime: u64, seed: u64) -> String {
    respond(shamir_value(secret, t, n, prime, seed))
}

fn shamir_value(secret: u64, t: usize, n: usize, prime: u64, seed: u64) -> Result<Value, String> {
    let field = if prime == 0 {
        PrimeField::curve_order()
    } else {
        PrimeField::new_u64(prime).map_err(|e| e.to_string())?
    };
    let cfg = SharingConfig::new(t, n, field.clone()).map_err(|e| e.to_string())?;
    let secret = field.from_u64(secret);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shares = split_secret(&secret, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let quorum = reconstruct_secret(&shares[n - t - 1..], &cfg).map_err(|e| e.to_string())?;
    let short = if t == 0 {
        None
    } else {
        // Interpolating t shares as if they were a full quorum of a
        // degree t-1 polynomial gives an unrelated value.
        let lower = SharingConfig::new(t - 1, n, field.clone()).map_err(|e| e.to_string())?;
        Some(reconstruct_secret(&shares[..t], &lower).map_err(|e| e.to_string())?.to_string())
    };
    Ok(json!({
        "modulus": field.modulus().to_string(),
        "secret": secret.to_string(),
        "shares": shares.iter().map(|s| json!({ "x": s.x().to_string(), "y": s.y().to_string() })).collect::<Vec<_>>(),
        "quorum": t + 1,
        "reconstructed": quorum.to_string(),
        "below_quorum_guess": short,
    }))
}

/// Runs a Circle Shuffle among `n` participants.
#[wasm_bindgen]
pub fn shuffle_demo(n: usize, seed: u64) -> String {
    respond(shuffle_value(n, seed))
}

fn shuffle_value(n: usize, seed: u64) -> Result<Value, String> {
    let demo = circle_shuffle::demo(n, seed).map_err(|e| e.to_string())?;
    let hops: Vec<Value> = demo
        .hops
        .iter()
        .map(|h| {
            json!({
                "hop": h.hop,
                "phase": if usize::from(h.hop) <= n { "shuffle" } else { "unveil" },
                "from": h.from,
                "to": h.to,
                "bytes": h.bytes.len(),
            })
        })
        .collect();
    Ok(json!({
        "session": hex::encode(demo.session_id),
        "inputs": demo.items.iter().map(hex::encode).collect::<Vec<_>>(),
        "hops": hops,
        "output": demo.run.order.iter().map(hex::encode).collect::<Vec<_>>(),
        "origins": demo.output_positions(),
        "multiset_preserved": demo.multiset_preserved(),
    }))
}

/// Runs a full election from a JSON config; returns the summary line and
/// the transcript.
#[wasm_bindgen]
pub fn election_demo(config_json: &str) -> String {
    respond(election_value(config_json))
}

fn election_value(config_json: &str) -> Result<Value, String> {
    let cfg = ElectionConfig::from_json(config_json).map_err(|e| e.to_string())?;
    let report = run_election(cfg).map_err(|e| e.to_string())?;
    let transcript: Value = serde_json::from_str(&report.to_json()).map_err(|e| e.to_string())?;
    Ok(json!({ "summary": report.summary(), "report": transcript }))
}
