//! Simulated UTXO chain: transactions, signature digests, a logical block
//! clock, locktime enforcement and double-spend rejection.
//!
//! There is no separate unconfirmed pool: an accepted transaction is applied
//! to the UTXO set at once and recorded in the open block at the current
//! height. [`LedgerState::advance`] seals that block and moves the clock.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{self, PublicKey};
use crate::script::{self, ExecutionContext, Script, ScriptReject};

const TX_MAGIC: &[u8; 4] = b"SVTX";
const SIGHASH_TAG: &[u8] = b"sharvot/sighash/v1";
pub const TX_VERSION: u32 = 1;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Txid(pub [u8; 32]);

impl Txid {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Txid({})", self.to_hex())
    }
}

impl Serialize for Txid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Txid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("txid must be 32 bytes"))?;
        Ok(Txid(arr))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Txid,
    pub index: u32,
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxIn {
    pub prevout: OutPoint,
    pub unlocking: Script,
    /// Who signed this input, for transcripts. Not consulted by validation.
    #[serde(default)]
    pub signers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOut {
    pub amount: u64,
    pub locking: Script,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub version: u32,
    pub inputs: Vec<TxIn>,
    pub outputs: Vec<TxOut>,
    pub locktime: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed transaction: {0}")]
pub struct TxParseError(pub String);

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TxParseError> {
        let out = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| TxParseError(format!("truncated at byte {}", self.at)))?;
        self.at += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, TxParseError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, TxParseError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TxParseError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a [u8], TxParseError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn script(&mut self) -> Result<Script, TxParseError> {
        Script::parse(self.blob()?).map_err(|e| TxParseError(e.to_string()))
    }
}

fn put_blob(out: &mut Vec<u8>, data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(data);
}

fn put_outputs(out: &mut Vec<u8>, outputs: &[TxOut]) {
    out.extend_from_slice(&(outputs.len() as u32).to_be_bytes());
    for o in outputs {
        out.extend_from_slice(&o.amount.to_be_bytes());
        put_blob(out, &o.locking.to_bytes());
    }
}

impl Transaction {
    pub fn new(inputs: Vec<TxIn>, outputs: Vec<TxOut>, locktime: u64) -> Self {
        Self {
            version: TX_VERSION,
            inputs,
            outputs,
            locktime,
        }
    }

    /// `"SVTX" | version | inputs | outputs | locktime`, integers big-endian,
    /// scripts and strings u32-length-prefixed.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = TX_MAGIC.to_vec();
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&(self.inputs.len() as u32).to_be_bytes());
        for i in &self.inputs {
            out.extend_from_slice(&i.prevout.txid.0);
            out.extend_from_slice(&i.prevout.index.to_be_bytes());
            put_blob(&mut out, &i.unlocking.to_bytes());
            out.extend_from_slice(&(i.signers.len() as u16).to_be_bytes());
            for s in &i.signers {
                put_blob(&mut out, s.as_bytes());
            }
        }
        put_outputs(&mut out, &self.outputs);
        out.extend_from_slice(&self.locktime.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TxParseError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != TX_MAGIC {
            return Err(TxParseError("missing SVTX magic".into()));
        }
        let version = r.u32()?;
        let n_in = r.u32()?;
        let mut inputs = Vec::new();
        for _ in 0..n_in {
            let txid = Txid(r.take(32)?.try_into().expect("32 bytes"));
            let index = r.u32()?;
            let unlocking = r.script()?;
            let n_sig = r.u16()?;
            let signers = (0..n_sig)
                .map(|_| {
                    String::from_utf8(r.blob()?.to_vec()).map_err(|_| TxParseError("signer label is not utf-8".into()))
                })
                .collect::<Result<_, _>>()?;
            inputs.push(TxIn {
                prevout: OutPoint { txid, index },
                unlocking,
                signers,
            });
        }
        let n_out = r.u32()?;
        let mut outputs = Vec::new();
        for _ in 0..n_out {
            let amount = r.u64()?;
            let locking = r.script()?;
            outputs.push(TxOut { amount, locking });
        }
        let locktime = r.u64()?;
        if r.at != bytes.len() {
            return Err(TxParseError(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            version,
            inputs,
            outputs,
            locktime,
        })
    }

    pub fn txid(&self) -> Txid {
        Txid(crypto::sha256d(&self.to_bytes()))
    }

    pub fn output_total(&self) -> u64 {
        self.outputs.iter().map(|o| o.amount).sum()
    }

    pub fn outpoint(&self, index: u32) -> OutPoint {
        OutPoint {
            txid: self.txid(),
            index,
        }
    }
}

/// Signature message for input `index`: the version, that input's outpoint,
/// every output and the locktime. Other inputs (and all unlocking scripts)
/// are excluded, so inputs can be signed independently and in any order.
pub fn tx_digest(tx: &Transaction, index: usize) -> [u8; 32] {
    let mut msg = SIGHASH_TAG.to_vec();
    msg.extend_from_slice(&tx.version.to_be_bytes());
    if let Some(input) = tx.inputs.get(index) {
        msg.extend_from_slice(&input.prevout.txid.0);
        msg.extend_from_slice(&input.prevout.index.to_be_bytes());
    }
    put_outputs(&mut msg, &tx.outputs);
    msg.extend_from_slice(&tx.locktime.to_be_bytes());
    crypto::sha256(&msg)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Reject {
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("unknown outpoint {0}")]
    UnknownOutpoint(OutPoint),
    #[error("double spend of {0}")]
    DoubleSpend(OutPoint),
    #[error("input {input}: {reason}")]
    Script { input: usize, reason: ScriptReject },
    #[error("locktime {locktime} not reached at height {height}")]
    Locktime { locktime: u64, height: u64 },
    #[error("outputs {outputs} exceed inputs {inputs}")]
    Unbalanced { inputs: u64, outputs: u64 },
    #[error("fee {fee} below the mining fee {required}")]
    InsufficientFee { fee: u64, required: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utxo {
    pub amount: u64,
    pub locking: Script,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub txids: Vec<Txid>,
}

/// Ledger snapshot. Mutated only through [`submit`](Self::submit) and
/// [`advance`](Self::advance); clones are independent values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerState {
    utxos: BTreeMap<OutPoint, Utxo>,
    spent: BTreeMap<OutPoint, Txid>,
    transactions: BTreeMap<Txid, Transaction>,
    blocks: Vec<Block>,
    open: Block,
    min_fee: u64,
}

impl LedgerState {
    /// A ledger whose first block holds one input-less funding transaction.
    pub fn genesis(outputs: Vec<TxOut>) -> (Self, Transaction) {
        let coinbase = Transaction::new(Vec::new(), outputs, 0);
        let txid = coinbase.txid();
        let utxos = coinbase
            .outputs
            .iter()
            .enumerate()
            .map(|(i, o)| {
                (
                    OutPoint { txid, index: i as u32 },
                    Utxo {
                        amount: o.amount,
                        locking: o.locking.clone(),
                    },
                )
            })
            .collect();
        let state = Self {
            utxos,
            spent: BTreeMap::new(),
            transactions: BTreeMap::from([(txid, coinbase.clone())]),
            blocks: Vec::new(),
            open: Block {
                height: 0,
                txids: vec![txid],
            },
            min_fee: 0,
        };
        (state, coinbase)
    }

    /// Minimum `inputs - outputs` for acceptance.
    pub fn with_min_fee(mut self, fee: u64) -> Self {
        self.min_fee = fee;
        self
    }

    pub fn height(&self) -> u64 {
        self.open.height
    }

    pub fn utxo(&self, outpoint: &OutPoint) -> Option<&Utxo> {
        self.utxos.get(outpoint)
    }

    pub fn utxos(&self) -> impl Iterator<Item = (&OutPoint, &Utxo)> {
        self.utxos.iter()
    }

    pub fn transaction(&self, txid: &Txid) -> Option<&Transaction> {
        self.transactions.get(txid)
    }

    pub fn spender(&self, outpoint: &OutPoint) -> Option<Txid> {
        self.spent.get(outpoint).copied()
    }

    /// Sealed blocks followed by the open one.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().chain(std::iter::once(&self.open))
    }

    pub fn total_value(&self) -> u64 {
        self.utxos.values().map(|u| u.amount).sum()
    }

    /// Sum of unspent pay-to-public-key outputs owned by `key`.
    pub fn balance(&self, key: &PublicKey) -> u64 {
        self.utxos
            .values()
            .filter(|u| u.locking.p2pk_key().as_ref() == Some(key))
            .map(|u| u.amount)
            .sum()
    }

    /// Full validation without applying.
    pub fn check(&self, tx: &Transaction) -> Result<(), Reject> {
        let height = self.height();
        if tx.locktime > height {
            return Err(Reject::Locktime {
                locktime: tx.locktime,
                height,
            });
        }
        if tx.inputs.is_empty() {
            return Err(Reject::NoInputs);
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut input_total: u64 = 0;
        for input in &tx.inputs {
            let op = input.prevout;
            if !seen.insert(op) || self.spent.contains_key(&op) {
                return Err(Reject::DoubleSpend(op));
            }
            let utxo = self.utxos.get(&op).ok_or(Reject::UnknownOutpoint(op))?;
            input_total = input_total.saturating_add(utxo.amount);
        }
        let outputs = tx
            .outputs
            .iter()
            .try_fold(0u64, |acc, o| acc.checked_add(o.amount))
            .unwrap_or(u64::MAX);
        if outputs > input_total {
            return Err(Reject::Unbalanced {
                inputs: input_total,
                outputs,
            });
        }
        if input_total - outputs < self.min_fee {
            return Err(Reject::InsufficientFee {
                fee: input_total - outputs,
                required: self.min_fee,
            });
        }
        for (i, input) in tx.inputs.iter().enumerate() {
            let utxo = &self.utxos[&input.prevout];
            let ctx = ExecutionContext {
                sighash: tx_digest(tx, i),
                height,
            };
            script::evaluate(&utxo.locking, &input.unlocking, &ctx)
                .map_err(|reason| Reject::Script { input: i, reason })?;
        }
        Ok(())
    }

    /// Validates and applies `tx` atomically.
    pub fn submit(&mut self, tx: &Transaction) -> Result<Txid, Reject> {
        self.check(tx)?;
        let txid = tx.txid();
        for input in &tx.inputs {
            self.utxos.remove(&input.prevout);
            self.spent.insert(input.prevout, txid);
        }
        for (i, o) in tx.outputs.iter().enumerate() {
            self.utxos.insert(
                OutPoint { txid, index: i as u32 },
                Utxo {
                    amount: o.amount,
                    locking: o.locking.clone(),
                },
            );
        }
        self.transactions.insert(txid, tx.clone());
        self.open.txids.push(txid);
        Ok(txid)
    }

    /// Seals `count` blocks; the clock ends `count` higher.
    pub fn advance(&mut self, count: u64) {
        for _ in 0..count {
            let next = Block {
                height: self.open.height + 1,
                txids: Vec::new(),
            };
            self.blocks.push(std::mem::replace(&mut self.open, next));
        }
    }

    pub fn export(&self) -> LedgerExport {
        LedgerExport {
            height: self.height(),
            total_value: self.total_value(),
            blocks: self
                .blocks()
                .map(|b| ExportedBlock {
                    height: b.height,
                    transactions: b
                        .txids
                        .iter()
                        .map(|id| ExportedTx {
                            txid: *id,
                            tx: self.transactions[id].clone(),
                        })
                        .collect(),
                })
                .collect(),
            utxos: self
                .utxos
                .iter()
                .map(|(op, u)| ExportedUtxo {
                    outpoint: *op,
                    amount: u.amount,
                    locking: u.locking.clone(),
                })
                .collect(),
        }
    }
}

/// JSON view of a ledger: scripts as hex, amounts as integers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerExport {
    pub height: u64,
    pub total_value: u64,
    pub blocks: Vec<ExportedBlock>,
    pub utxos: Vec<ExportedUtxo>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedBlock {
    pub height: u64,
    pub transactions: Vec<ExportedTx>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedTx {
    pub txid: Txid,
    #[serde(flatten)]
    pub tx: Transaction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedUtxo {
    pub outpoint: OutPoint,
    pub amount: u64,
    pub locking: Script,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, sign, KeyPair};
    use crate::script::{p2pk_locking, p2pk_unlocking};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn funded(n: usize, amount: u64) -> (LedgerState, Transaction, Vec<KeyPair>) {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let keys: Vec<KeyPair> = (0..n).map(|_| keygen(&mut rng)).collect();
        let outs = keys
            .iter()
            .map(|k| TxOut {
                amount,
                locking: p2pk_locking(&k.public()),
            })
            .collect();
        let (state, cb) = LedgerState::genesis(outs);
        (state, cb, keys)
    }

    fn pay(from: &[(OutPoint, &KeyPair)], outputs: Vec<TxOut>, locktime: u64) -> Transaction {
        let inputs = from
            .iter()
            .map(|(op, _)| TxIn {
                prevout: *op,
                unlocking: Script::new(),
                signers: Vec::new(),
            })
            .collect();
        let mut tx = Transaction::new(inputs, outputs, locktime);
        for (i, (_, k)) in from.iter().enumerate() {
            let sig = sign(k.secret(), &tx_digest(&tx, i));
            tx.inputs[i].unlocking = p2pk_unlocking(&sig);
        }
        tx
    }

    #[test]
    fn serialization_round_trip() {
        let (_, cb, keys) = funded(2, 10);
        let mut tx = pay(&[(cb.outpoint(0), &keys[0])], vec![TxOut { amount: 10, locking: p2pk_locking(&keys[1].public()) }], 3);
        tx.inputs[0].signers = vec!["voter-0".into()];
        let bytes = tx.to_bytes();
        assert_eq!(&bytes[..4], b"SVTX");
        assert_eq!(Transaction::from_bytes(&bytes).unwrap(), tx);
        assert!(Transaction::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Transaction::from_bytes(&extra).is_err());
        let json = serde_json::to_string(&tx).unwrap();
        assert_eq!(serde_json::from_str::<Transaction>(&json).unwrap(), tx);
    }

    #[test]
    fn digest_binds_outputs_and_own_outpoint_only() {
        let (_, cb, keys) = funded(2, 10);
        let out = |a| TxOut { amount: a, locking: p2pk_locking(&keys[0].public()) };
        let tx = pay(&[(cb.outpoint(0), &keys[0]), (cb.outpoint(1), &keys[1])], vec![out(20)], 0);
        assert_eq!(tx_digest(&tx, 0), tx_digest(&tx.clone(), 0));
        assert_ne!(tx_digest(&tx, 0), tx_digest(&tx, 1));
        let mut changed = tx.clone();
        changed.outputs[0].amount = 19;
        assert_ne!(tx_digest(&tx, 0), tx_digest(&changed, 0));
        let mut other_unlock = tx.clone();
        other_unlock.inputs[1].unlocking = Script::new().push(vec![9u8; 10]);
        other_unlock.inputs[1].signers = vec!["x".into()];
        assert_eq!(tx_digest(&tx, 0), tx_digest(&other_unlock, 0));
        let mut relock = tx.clone();
        relock.locktime = 1;
        assert_ne!(tx_digest(&tx, 0), tx_digest(&relock, 0));
    }

    #[test]
    fn spend_and_double_spend() {
        let (mut state, cb, keys) = funded(2, 10);
        let to1 = vec![TxOut { amount: 10, locking: p2pk_locking(&keys[1].public()) }];
        let tx = pay(&[(cb.outpoint(0), &keys[0])], to1.clone(), 0);
        state.submit(&tx).unwrap();
        assert_eq!(state.balance(&keys[0].public()), 0);
        assert_eq!(state.balance(&keys[1].public()), 20);
        assert_eq!(state.submit(&tx), Err(Reject::DoubleSpend(cb.outpoint(0))));
        let mut to2 = to1.clone();
        to2[0].amount = 9;
        let conflicting = pay(&[(cb.outpoint(0), &keys[0])], to2, 0);
        assert_eq!(state.submit(&conflicting), Err(Reject::DoubleSpend(cb.outpoint(0))));
        assert_eq!(state.spender(&cb.outpoint(0)), Some(tx.txid()));
    }

    #[test]
    fn same_outpoint_twice_in_one_tx() {
        let (state, cb, keys) = funded(1, 10);
        let out = vec![TxOut { amount: 1, locking: p2pk_locking(&keys[0].public()) }];
        let tx = pay(&[(cb.outpoint(0), &keys[0]), (cb.outpoint(0), &keys[0])], out, 0);
        assert_eq!(state.check(&tx), Err(Reject::DoubleSpend(cb.outpoint(0))));
    }

    #[test]
    fn rejections() {
        let (mut state, cb, keys) = funded(2, 10);
        let out = |a| vec![TxOut { amount: a, locking: p2pk_locking(&keys[1].public()) }];
        let ghost = OutPoint { txid: Txid([7; 32]), index: 0 };
        assert_eq!(state.check(&pay(&[(ghost, &keys[0])], out(1), 0)), Err(Reject::UnknownOutpoint(ghost)));
        assert_eq!(
            state.check(&pay(&[(cb.outpoint(0), &keys[0])], out(11), 0)),
            Err(Reject::Unbalanced { inputs: 10, outputs: 11 })
        );
        assert_eq!(
            state.check(&pay(&[(cb.outpoint(0), &keys[1])], out(10), 0)),
            Err(Reject::Script { input: 0, reason: ScriptReject::BadSignature })
        );
        assert_eq!(
            state.check(&pay(&[(cb.outpoint(0), &keys[0])], out(10), 1)),
            Err(Reject::Locktime { locktime: 1, height: 0 })
        );
        assert_eq!(state.check(&Transaction::new(Vec::new(), out(0), 0)), Err(Reject::NoInputs));
        state.advance(1);
        assert!(state.check(&pay(&[(cb.outpoint(0), &keys[0])], out(10), 1)).is_ok());
    }

    #[test]
    fn mining_fee_policy() {
        let (state, cb, keys) = funded(1, 10);
        let state = state.with_min_fee(2);
        let out = |a| vec![TxOut { amount: a, locking: p2pk_locking(&keys[0].public()) }];
        assert_eq!(
            state.check(&pay(&[(cb.outpoint(0), &keys[0])], out(9), 0)),
            Err(Reject::InsufficientFee { fee: 1, required: 2 })
        );
        assert!(state.check(&pay(&[(cb.outpoint(0), &keys[0])], out(8), 0)).is_ok());
    }

    #[test]
    fn advance_moves_clock_and_seals_blocks() {
        let (mut state, cb, keys) = funded(1, 10);
        assert_eq!(state.height(), 0);
        state.advance(0);
        assert_eq!(state.height(), 0);
        let tx = pay(&[(cb.outpoint(0), &keys[0])], vec![TxOut { amount: 10, locking: p2pk_locking(&keys[0].public()) }], 0);
        state.submit(&tx).unwrap();
        state.advance(5);
        assert_eq!(state.height(), 5);
        let blocks: Vec<_> = state.blocks().collect();
        assert_eq!(blocks.len(), 6);
        assert_eq!(blocks[0].txids, vec![cb.txid(), tx.txid()]);
        assert!(blocks[1..].iter().all(|b| b.txids.is_empty()));
    }

    #[test]
    fn export_is_json_with_hex_scripts() {
        let (state, _, _) = funded(2, 10);
        let json = serde_json::to_value(state.export()).unwrap();
        assert_eq!(json["total_value"], 20);
        let locking = json["utxos"][0]["locking"].as_str().unwrap();
        assert!(locking.starts_with("4d0021"));
        assert_eq!(json["blocks"][0]["transactions"][0]["outputs"][0]["amount"], 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn conservation_and_determinism(splits in proptest::collection::vec((0usize..3, 0u64..12, 0usize..3), 1..8)) {
            let run = || {
                let (mut state, cb, keys) = funded(3, 10);
                let mut owned: Vec<(OutPoint, usize, u64)> = (0..3).map(|i| (cb.outpoint(i as u32), i, 10)).collect();
                let mut totals = vec![state.total_value()];
                for &(pick, amount, to) in &splits {
                    let Some(&(op, owner, value)) = owned.get(pick % owned.len().max(1)) else { break };
                    let tx = pay(&[(op, &keys[owner])], vec![TxOut { amount, locking: p2pk_locking(&keys[to].public()) }], 0);
                    if state.submit(&tx).is_ok() {
                        owned.retain(|o| o.0 != op);
                        owned.push((tx.outpoint(0), to, amount));
                        prop_assert!(amount <= value);
                        prop_assert_eq!(state.submit(&tx).is_err(), true);
                    }
                    totals.push(state.total_value());
                    state.advance(1);
                }
                prop_assert!(totals.windows(2).all(|w| w[1] <= w[0]));
                Ok(serde_json::to_vec(&state.export()).unwrap())
            };
            prop_assert_eq!(run()?, run()?);
        }
    }
}
