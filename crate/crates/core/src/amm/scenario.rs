//! Ground-truth trace generation.
//!
//! Each scenario drives the pricing models through an attack (or a benign
//! trade) and records the resulting calls, value transfers and ERC20 events
//! as a trace bundle, together with a manifest of the findings the analysis
//! is expected to report. Traces carry chaff (approval events, balance
//! reads, sync/swap events) so that pruning has something to remove.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    apply_trade, derive_doubling_input, floor_amount, max_borrow, ratio, rational, swap_out_with,
    vault_mint, AmmError, FeeConfig, LendingConfig, PoolState, Rational, Side, VaultState,
};
use crate::cft::ERC20_TRANSFER_TOPIC;
use crate::detect::FindingKind;
use crate::trace::{write_bundle, EventRecord, TraceBundle, TxKind, TxRecord, Word};
use crate::units::{encode_hex, Address, Amount, AssetId, SignedAmount};

const APPROVAL_TOPIC: Word = [
    0x8c, 0x5b, 0xe1, 0xe5, 0xeb, 0xec, 0x7d, 0x5b, 0xd1, 0x4f, 0x71, 0x42, 0x7d, 0x1e, 0x84, 0xf3,
    0xdd, 0x03, 0x14, 0xc0, 0xf7, 0xb2, 0x29, 0x1e, 0x5b, 0x20, 0x0a, 0xc8, 0xc7, 0xc3, 0xb9, 0x25,
];
const SYNC_TOPIC: Word = [
    0x1c, 0x41, 0x1e, 0x9a, 0x96, 0xe0, 0x71, 0x24, 0x1c, 0x2f, 0x21, 0xf7, 0x72, 0x6b, 0x17, 0xae,
    0x89, 0xe3, 0xca, 0xb4, 0xc7, 0x8b, 0xe5, 0x0e, 0x06, 0x2b, 0x03, 0xa9, 0xff, 0xfb, 0xba, 0xd1,
];
const SWAP_TOPIC: Word = [
    0xd7, 0x8a, 0xd9, 0x5f, 0xa4, 0x6c, 0x99, 0x4b, 0x65, 0x51, 0xd0, 0xda, 0x85, 0xfc, 0x27, 0x5f,
    0xe6, 0x13, 0xce, 0x37, 0x65, 0x7f, 0xb8, 0xd5, 0xe3, 0xd1, 0x30, 0xe6, 0x98, 0x22, 0xd5, 0xc8,
];

const SEL_TRANSFER: [u8; 4] = [0xa9, 0x05, 0x9c, 0xbb];
const SEL_TRANSFER_FROM: [u8; 4] = [0x23, 0xb8, 0x72, 0xdd];
const SEL_BALANCE_OF: [u8; 4] = [0x70, 0xa0, 0x82, 0x31];
const SEL_GET_RESERVES: [u8; 4] = [0x09, 0x02, 0xf1, 0xac];
const SEL_SWAP: [u8; 4] = [0x02, 0x2c, 0x0d, 0x9f];
const SEL_ROUTER_SWAP: [u8; 4] = [0x38, 0xed, 0x17, 0x39];
const SEL_GENERIC: [u8; 4] = [0x61, 0x46, 0x19, 0x54];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("pricing failed: {0}")]
    Pricing(#[from] AmmError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidParams(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Direct,
    Indirect,
    Arbitrage,
    Benign,
    Mixed,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Direct => "direct",
            ScenarioKind::Indirect => "indirect",
            ScenarioKind::Arbitrage => "arbitrage",
            ScenarioKind::Benign => "benign",
            ScenarioKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "direct" => ScenarioKind::Direct,
            "indirect" => ScenarioKind::Indirect,
            "arbitrage" => ScenarioKind::Arbitrage,
            "benign" => ScenarioKind::Benign,
            "mixed" => ScenarioKind::Mixed,
            other => return Err(invalid(format!("unknown scenario kind `{other}`"))),
        })
    }
}

// --- parameters -----------------------------------------------------------

/// `key=value` parameters; every key must be consumed by the scenario.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScenarioParams {
    values: BTreeMap<String, String>,
}

impl ScenarioParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` items.
    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self, ScenarioError> {
        let mut p = ScenarioParams::new();
        for item in items {
            let item = item.as_ref();
            for part in item.split(',').filter(|s| !s.is_empty()) {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("expected key=value, got `{part}`")))?;
                p.values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(p)
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.values.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

struct Reader<'a> {
    params: &'a ScenarioParams,
    used: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(params: &'a ScenarioParams) -> Self {
        Reader {
            params,
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a str> {
        self.used.push(key);
        self.params.get(key)
    }

    fn amount(
        &mut self,
        key: &'static str,
        default: &str,
        decimals: u32,
    ) -> Result<Amount, ScenarioError> {
        let v = self.raw(key).unwrap_or(default);
        let a = Amount::from_units(v, decimals).map_err(|e| invalid(format!("{key}: {e}")))?;
        if a.is_zero() {
            return Err(invalid(format!("{key} must be positive")));
        }
        Ok(a)
    }

    fn opt_amount(
        &mut self,
        key: &'static str,
        decimals: u32,
    ) -> Result<Option<Amount>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => {
                let a =
                    Amount::from_units(v, decimals).map_err(|e| invalid(format!("{key}: {e}")))?;
                if a.is_zero() {
                    return Err(invalid(format!("{key} must be positive")));
                }
                Ok(Some(a))
            }
        }
    }

    fn uint(&mut self, key: &'static str, default: u64) -> Result<u64, ScenarioError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| invalid(format!("{key}: `{v}` is not an integer"))),
        }
    }

    fn flag(&mut self, key: &'static str) -> Result<Option<bool>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some("1" | "true" | "yes") => Ok(Some(true)),
            Some("0" | "false" | "no") => Ok(Some(false)),
            Some(v) => Err(invalid(format!("{key}: `{v}` is not a boolean"))),
        }
    }

    fn fraction(
        &mut self,
        key: &'static str,
        default: (u64, u64),
    ) -> Result<(u64, u64), ScenarioError> {
        let Some(v) = self.raw(key) else {
            return Ok(default);
        };
        let (n, d) = v.split_once('/').unwrap_or((v, "1"));
        let n = n
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{key}: `{v}` is not a fraction")))?;
        let d: u64 = d
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{key}: `{v}` is not a fraction")))?;
        if d == 0 {
            return Err(invalid(format!("{key}: zero denominator")));
        }
        Ok((n, d))
    }

    fn finish(self) -> Result<(), ScenarioError> {
        let unknown: Vec<&str> = self
            .params
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !self.used.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(invalid(format!(
                "unknown parameter(s): {}",
                unknown.join(", ")
            )))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Common {
    chaff: u32,
    flash: Option<bool>,
    fee: FeeConfig,
    block: u64,
}

fn read_common(r: &mut Reader<'_>) -> Result<Common, ScenarioError> {
    let chaff = r.uint("chaff", 2)?;
    let (num, den) = r.fraction("fee", (997, 1000))?;
    Ok(Common {
        chaff: u32::try_from(chaff)
            .map_err(|_| invalid("chaff too large"))?
            .min(64),
        flash: r.flag("flash")?,
        fee: FeeConfig::new(num, den).map_err(|e| invalid(e.to_string()))?,
        block: r.uint("block", 1)?,
    })
}

#[derive(Debug, Clone)]
struct DirectParams {
    reserve_x: Amount,
    reserve_y: Amount,
    attack: Amount,
    victim_sell: Amount,
}

#[derive(Debug, Clone)]
struct LendingParams {
    reserve_x: Amount,
    reserve_y: Amount,
    collateral: Amount,
    attack: Option<Amount>,
    lending: LendingConfig,
}

#[derive(Debug, Clone)]
struct VaultParams {
    curve_usdt: Amount,
    curve_usdc: Amount,
    attack: Amount,
    deposit: Amount,
    vault_underlying: Amount,
    vault_external: Amount,
    vault_supply: Amount,
}

#[derive(Debug, Clone)]
struct ArbParams {
    a_eth: Amount,
    a_usdc: Amount,
    b_usdc: Amount,
    b_asset: Amount,
    c_asset: Amount,
    c_usdc: Amount,
    trade: Amount,
}

#[derive(Debug, Clone)]
struct BenignParams {
    reserve_x: Amount,
    reserve_y: Amount,
    amount: Amount,
}

#[derive(Debug, Clone)]
enum Plan {
    Direct(DirectParams),
    Lending(LendingParams),
    Vault(VaultParams),
    Arbitrage(ArbParams),
    Benign(BenignParams),
}

impl Plan {
    fn label(&self) -> &'static str {
        match self {
            Plan::Direct(_) => "direct",
            Plan::Lending(_) => "indirect-lending",
            Plan::Vault(_) => "indirect-vault",
            Plan::Arbitrage(_) => "arbitrage",
            Plan::Benign(_) => "benign",
        }
    }

    /// Scales every amount of the plan; `fx` applies to the first asset of
    /// each pool and `fy` to the second, in permille.
    fn jitter(&mut self, fx: u64, fy: u64) {
        let s = |a: &mut Amount, f: u64| {
            let v = a.0 * f / 1000;
            *a = Amount(if v.is_zero() { a.0 } else { v });
        };
        match self {
            Plan::Direct(p) => {
                s(&mut p.reserve_x, fx);
                s(&mut p.attack, fx);
                s(&mut p.victim_sell, fx);
                s(&mut p.reserve_y, fy);
            }
            Plan::Lending(p) => {
                s(&mut p.reserve_x, fx);
                s(&mut p.collateral, fx);
                s(&mut p.reserve_y, fy);
                if let Some(a) = &mut p.attack {
                    s(a, fy);
                }
            }
            Plan::Vault(p) => {
                s(&mut p.curve_usdt, fx);
                s(&mut p.attack, fx);
                s(&mut p.curve_usdc, fy);
                s(&mut p.deposit, fy);
            }
            Plan::Arbitrage(p) => {
                s(&mut p.a_eth, fx);
                s(&mut p.trade, fx);
                s(&mut p.a_usdc, fy);
                s(&mut p.b_usdc, fy);
                s(&mut p.c_usdc, fy);
            }
            Plan::Benign(p) => {
                s(&mut p.reserve_x, fx);
                s(&mut p.amount, fx);
                s(&mut p.reserve_y, fy);
            }
        }
    }
}

fn read_direct(r: &mut Reader<'_>) -> Result<DirectParams, ScenarioError> {
    Ok(DirectParams {
        reserve_x: r.amount("reserve_x", "1000", 18)?,
        reserve_y: r.amount("reserve_y", "1000", 18)?,
        attack: r.amount("attack", "900", 18)?,
        victim_sell: r.amount("victim_sell", "10", 18)?,
    })
}

fn read_lending(r: &mut Reader<'_>) -> Result<LendingParams, ScenarioError> {
    let (n, d) = r.fraction("collateral_ratio", (3, 2))?;
    if n <= d {
        return Err(invalid("collateral_ratio must exceed 1"));
    }
    Ok(LendingParams {
        reserve_x: r.amount("reserve_x", "1000", 18)?,
        reserve_y: r.amount("reserve_y", "1000", 18)?,
        collateral: r.amount("collateral", "1.5", 18)?,
        attack: r.opt_amount("attack", 18)?,
        lending: LendingConfig {
            collateral_ratio: ratio(n, d),
        },
    })
}

fn read_vault(r: &mut Reader<'_>) -> Result<VaultParams, ScenarioError> {
    Ok(VaultParams {
        curve_usdt: r.amount("curve_usdt", "100000000", 6)?,
        curve_usdc: r.amount("curve_usdc", "100000000", 6)?,
        attack: r.amount("attack", "17200000", 6)?,
        deposit: r.amount("deposit", "60200000", 6)?,
        vault_underlying: r.amount("vault_underlying", "10000000", 6)?,
        vault_external: r.amount("vault_external", "90000000", 6)?,
        vault_supply: r.amount("vault_supply", "97000000", 6)?,
    })
}

fn read_arbitrage(r: &mut Reader<'_>) -> Result<ArbParams, ScenarioError> {
    Ok(ArbParams {
        a_eth: r.amount("a_eth", "1000", 18)?,
        a_usdc: r.amount("a_usdc", "3000000", 6)?,
        b_usdc: r.amount("b_usdc", "3000000", 6)?,
        b_asset: r.amount("b_asset", "1000000", 18)?,
        c_asset: r.amount("c_asset", "1000000", 18)?,
        c_usdc: r.amount("c_usdc", "3100000", 6)?,
        trade: r.amount("trade", "10", 18)?,
    })
}

fn read_benign(r: &mut Reader<'_>) -> Result<BenignParams, ScenarioError> {
    Ok(BenignParams {
        reserve_x: r.amount("reserve_x", "1000", 18)?,
        reserve_y: r.amount("reserve_y", "1000", 18)?,
        amount: r.amount("amount", "5", 18)?,
    })
}

fn default_plan(label: &str) -> Plan {
    let empty = ScenarioParams::new();
    let mut r = Reader::new(&empty);
    match label {
        "direct" => Plan::Direct(read_direct(&mut r).expect("defaults parse")),
        "indirect-lending" => Plan::Lending(read_lending(&mut r).expect("defaults parse")),
        "indirect-vault" => Plan::Vault(read_vault(&mut r).expect("defaults parse")),
        "arbitrage" => Plan::Arbitrage(read_arbitrage(&mut r).expect("defaults parse")),
        _ => Plan::Benign(read_benign(&mut r).expect("defaults parse")),
    }
}

const MIX: [&str; 5] = [
    "direct",
    "indirect-lending",
    "indirect-vault",
    "arbitrage",
    "benign",
];

// built once per stream, so the size gap does not matter
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Shape {
    Single(Plan),
    Mixed { count: u64, jitter_permille: u64 },
}

#[derive(Debug, Clone)]
struct Resolved {
    shape: Shape,
    common: Common,
}

fn resolve(kind: ScenarioKind, params: &ScenarioParams) -> Result<Resolved, ScenarioError> {
    let mut r = Reader::new(params);
    let common = read_common(&mut r)?;
    let shape = match kind {
        ScenarioKind::Direct => Shape::Single(Plan::Direct(read_direct(&mut r)?)),
        ScenarioKind::Indirect => match r.raw("target").unwrap_or("lending") {
            "lending" => Shape::Single(Plan::Lending(read_lending(&mut r)?)),
            "vault" => Shape::Single(Plan::Vault(read_vault(&mut r)?)),
            other => {
                return Err(invalid(format!(
                    "target: expected lending or vault, got `{other}`"
                )))
            }
        },
        ScenarioKind::Arbitrage => Shape::Single(Plan::Arbitrage(read_arbitrage(&mut r)?)),
        ScenarioKind::Benign => Shape::Single(Plan::Benign(read_benign(&mut r)?)),
        ScenarioKind::Mixed => {
            let count = r.uint("count", 100)?;
            let jitter = r.uint("jitter", 20)?;
            if jitter >= 50 {
                return Err(invalid("jitter must be below 50 (percent)"));
            }
            Shape::Mixed {
                count,
                jitter_permille: jitter * 10,
            }
        }
    };
    r.finish()?;
    Ok(Resolved { shape, common })
}

// --- manifest ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedFinding {
    pub kind: FindingKind,
    pub attacker: Address,
    pub pool: Address,
    pub victim: Option<Address>,
    pub profit_asset: AssetId,
    pub profit_amount: SignedAmount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub bundle_id: String,
    pub scenario: String,
    pub expected: Vec<ExpectedFinding>,
    /// Named intermediate quantities, base units unless stated.
    pub metrics: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    pub bundle_count: u64,
    pub totals: BTreeMap<String, u64>,
    pub bundles: Vec<BundleManifest>,
}

pub fn empty_totals() -> BTreeMap<String, u64> {
    [
        FindingKind::DirectManipulation,
        FindingKind::IndirectManipulation,
        FindingKind::Arbitrage,
    ]
    .iter()
    .map(|k| (k.as_str().to_string(), 0))
    .collect()
}

// --- trace construction ----------------------------------------------------

fn word_addr(a: Address) -> Word {
    a.to_word()
}

fn calldata(selector: [u8; 4], words: &[Word]) -> Vec<u8> {
    let mut v = Vec::with_capacity(4 + 32 * words.len());
    v.extend_from_slice(&selector);
    for w in words {
        v.extend_from_slice(w);
    }
    v
}

struct TraceBuilder {
    bundle_id: String,
    block: u64,
    ext_id: String,
    external: Option<TxRecord>,
    internals: Vec<TxRecord>,
    events: Vec<EventRecord>,
    stack: Vec<(u64, u32)>,
    next: u64,
    chaff: u32,
}

impl TraceBuilder {
    fn new(bundle_id: String, block: u64, ext_id: String, chaff: u32) -> Self {
        TraceBuilder {
            bundle_id,
            block,
            ext_id,
            external: None,
            internals: Vec::new(),
            events: Vec::new(),
            stack: Vec::new(),
            next: 0,
            chaff,
        }
    }

    fn call(&mut self, from: Address, to: Address, value: Amount, input: Vec<u8>) {
        let seq = self.next;
        self.next += 1;
        match self.stack.last().copied() {
            None => {
                assert!(
                    self.external.is_none(),
                    "a bundle has one external transaction"
                );
                self.external = Some(TxRecord {
                    id: self.ext_id.clone(),
                    kind: TxKind::External,
                    from,
                    to,
                    value,
                    input,
                    depth: 0,
                    seq,
                    parent_seq: None,
                });
                self.stack.push((seq, 0));
            }
            Some((parent, depth)) => {
                self.internals.push(TxRecord {
                    id: format!("{}:{}", self.ext_id, seq),
                    kind: TxKind::Internal,
                    from,
                    to,
                    value,
                    input,
                    depth: depth + 1,
                    seq,
                    parent_seq: Some(parent),
                });
                self.stack.push((seq, depth + 1));
            }
        }
    }

    fn ret(&mut self) {
        self.stack.pop().expect("ret without call");
    }

    fn event(&mut self, emitter: Address, topics: Vec<Word>, data: Vec<u8>) {
        let (parent, _) = *self.stack.last().expect("event outside a call");
        let seq = self.next;
        self.next += 1;
        self.events.push(EventRecord {
            emitter,
            topics,
            data,
            seq,
            parent_seq: parent,
        });
    }

    fn finish(self) -> TraceBundle {
        assert!(self.stack.is_empty(), "unbalanced calls");
        TraceBundle {
            bundle_id: self.bundle_id,
            block: self.block,
            external: self.external.expect("bundle has an external transaction"),
            internals: self.internals,
            events: self.events,
        }
    }

    // ERC20 and pool primitives

    fn transfer_event(&mut self, token: Address, from: Address, to: Address, amount: Amount) {
        self.event(
            token,
            vec![ERC20_TRANSFER_TOPIC, word_addr(from), word_addr(to)],
            amount.to_word().to_vec(),
        );
    }

    fn erc20_transfer(&mut self, caller: Address, token: Address, to: Address, amount: Amount) {
        self.call(
            caller,
            token,
            Amount::ZERO,
            calldata(SEL_TRANSFER, &[word_addr(to), amount.to_word()]),
        );
        self.transfer_event(token, caller, to, amount);
        self.ret();
    }

    fn erc20_transfer_from(
        &mut self,
        caller: Address,
        token: Address,
        from: Address,
        to: Address,
        amount: Amount,
    ) {
        self.call(
            caller,
            token,
            Amount::ZERO,
            calldata(
                SEL_TRANSFER_FROM,
                &[word_addr(from), word_addr(to), amount.to_word()],
            ),
        );
        if self.chaff > 0 {
            self.event(
                token,
                vec![APPROVAL_TOPIC, word_addr(from), word_addr(caller)],
                [0xffu8; 32].to_vec(),
            );
        }
        self.transfer_event(token, from, to, amount);
        self.ret();
    }

    fn send(&mut self, caller: Address, asset: AssetId, to: Address, amount: Amount) {
        match asset {
            AssetId::Ether => {
                self.call(caller, to, amount, Vec::new());
                self.ret();
            }
            AssetId::Erc20(token) => self.erc20_transfer(caller, token, to, amount),
        }
    }

    fn static_reads(&mut self, caller: Address, target: Address, selector: [u8; 4]) {
        for _ in 0..self.chaff {
            self.call(
                caller,
                target,
                Amount::ZERO,
                calldata(selector, &[word_addr(caller)]),
            );
            self.ret();
        }
    }

    fn pool_events(&mut self, pool: &PoolState) {
        if self.chaff == 0 {
            return;
        }
        let mut data = pool.reserve_x.to_word().to_vec();
        data.extend_from_slice(&pool.reserve_y.to_word());
        self.event(pool.address, vec![SYNC_TOPIC], data);
        self.event(pool.address, vec![SWAP_TOPIC], vec![0u8; 128]);
    }

    /// Pool side of a swap after the input has arrived: balance reads, the
    /// output payment, then sync/swap logs.
    fn pool_payout(
        &mut self,
        after: &PoolState,
        asset_out: AssetId,
        to: Address,
        amount_out: Amount,
    ) {
        if let AssetId::Erc20(t) = asset_out {
            self.static_reads(after.address, t, SEL_BALANCE_OF);
        }
        self.send(after.address, asset_out, to, amount_out);
        self.pool_events(after);
    }

    /// An ERC20-for-ERC20 swap through a router on behalf of `user`.
    fn router_swap(&mut self, user: Address, router: Address, trade: &Trade) {
        let AssetId::Erc20(token_in) = trade.asset_in else {
            panic!("router swaps take ERC20 input");
        };
        self.call(
            user,
            router,
            Amount::ZERO,
            calldata(
                SEL_ROUTER_SWAP,
                &[trade.amount_in.to_word(), word_addr(user)],
            ),
        );
        self.erc20_transfer_from(router, token_in, user, trade.after.address, trade.amount_in);
        self.call(
            router,
            trade.after.address,
            Amount::ZERO,
            calldata(SEL_SWAP, &[word_addr(user)]),
        );
        self.pool_payout(&trade.after, trade.asset_out, user, trade.amount_out);
        self.ret();
        self.ret();
    }

    /// A swap where `user` calls the pool itself, paying Ether as call value
    /// or ERC20 via transferFrom.
    fn direct_pool_swap(&mut self, user: Address, trade: &Trade) {
        let pool = trade.after.address;
        let value = if trade.asset_in == AssetId::Ether {
            trade.amount_in
        } else {
            Amount::ZERO
        };
        self.call(user, pool, value, calldata(SEL_SWAP, &[word_addr(user)]));
        if let AssetId::Erc20(t) = trade.asset_in {
            self.erc20_transfer_from(pool, t, user, pool, trade.amount_in);
        }
        self.pool_payout(&trade.after, trade.asset_out, user, trade.amount_out);
        self.ret();
    }
}

/// One executed pool trade.
#[derive(Debug, Clone)]
struct Trade {
    after: PoolState,
    asset_in: AssetId,
    asset_out: AssetId,
    amount_in: Amount,
    amount_out: Amount,
}

fn trade(
    pool: &PoolState,
    side: Side,
    amount_in: Amount,
    fee: FeeConfig,
) -> Result<Trade, ScenarioError> {
    let (after, amount_out) = apply_trade(pool, side, amount_in, fee)?;
    if amount_out.is_zero() {
        return Err(invalid("trade output rounds to zero"));
    }
    let (asset_in, asset_out) = pool.assets(side);
    Ok(Trade {
        after,
        asset_in,
        asset_out,
        amount_in,
        amount_out,
    })
}

// --- scenarios ----------------------------------------------------------------

struct Actors<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl Actors<'_> {
    fn addr(&mut self) -> Address {
        loop {
            let a = Address(self.rng.random::<[u8; 20]>());
            if !a.is_zero() {
                return a;
            }
        }
    }

    fn hash(&mut self) -> String {
        encode_hex(&self.rng.random::<[u8; 32]>())
    }
}

struct Ctx<'r> {
    actors: Actors<'r>,
    common: Common,
    bundle_id: String,
    flash: bool,
}

fn metric(m: &mut BTreeMap<String, String>, k: &str, v: impl ToString) {
    m.insert(k.to_string(), v.to_string());
}

fn rational_str(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Wraps `body` in a flash loan of `asset` when enabled. Returns the
/// builder after the external transaction has been closed.
fn attack_frame(
    cx: &mut Ctx<'_>,
    eoa: Address,
    attacker: Address,
    loan: Option<(AssetId, Amount)>,
    body: impl FnOnce(&mut TraceBuilder),
) -> TraceBundle {
    let mut b = TraceBuilder::new(
        cx.bundle_id.clone(),
        cx.common.block,
        cx.actors.hash(),
        cx.common.chaff,
    );
    b.call(eoa, attacker, Amount::ZERO, calldata(SEL_GENERIC, &[]));
    match loan.filter(|_| cx.flash) {
        Some((AssetId::Erc20(token), amount)) => {
            let lender = cx.actors.addr();
            b.call(
                attacker,
                lender,
                Amount::ZERO,
                calldata(SEL_GENERIC, &[amount.to_word()]),
            );
            b.erc20_transfer(lender, token, attacker, amount);
            b.call(lender, attacker, Amount::ZERO, calldata(SEL_GENERIC, &[]));
            body(&mut b);
            b.ret();
            b.erc20_transfer_from(lender, token, attacker, lender, amount);
            b.ret();
        }
        _ => body(&mut b),
    }
    b.ret();
    b.finish()
}

fn gen_direct(
    cx: &mut Ctx<'_>,
    p: &DirectParams,
) -> Result<(TraceBundle, BundleManifest), ScenarioError> {
    let fee = cx.common.fee;
    let (x, y) = (
        AssetId::Erc20(cx.actors.addr()),
        AssetId::Erc20(cx.actors.addr()),
    );
    let pool = PoolState::new(cx.actors.addr(), x, y, p.reserve_x, p.reserve_y)?;
    let (eoa, attacker, victim_app, router) = (
        cx.actors.addr(),
        cx.actors.addr(),
        cx.actors.addr(),
        cx.actors.addr(),
    );

    let tr1 = trade(&pool, Side::XforY, p.attack, fee)?;
    let tr3 = trade(&tr1.after, Side::XforY, p.victim_sell, fee)?;
    let tr2 = trade(&tr3.after, Side::YforX, tr1.amount_out, fee)?;
    let unmanipulated = swap_out_with(p.victim_sell, p.reserve_x, p.reserve_y, fee);

    let bundle = attack_frame(cx, eoa, attacker, Some((x, p.attack)), |b| {
        b.static_reads(attacker, pool.address, SEL_GET_RESERVES);
        b.router_swap(attacker, router, &tr1);
        b.call(
            attacker,
            victim_app,
            Amount::ZERO,
            calldata(SEL_GENERIC, &[]),
        );
        b.router_swap(victim_app, router, &tr3);
        b.ret();
        b.router_swap(attacker, router, &tr2);
    });

    let profit = SignedAmount::diff(tr2.amount_out, p.attack);
    let mut metrics = BTreeMap::new();
    metric(&mut metrics, "swap_out_unmanipulated", unmanipulated);
    metric(&mut metrics, "tr1_out", tr1.amount_out);
    metric(&mut metrics, "victim_out", tr3.amount_out);
    metric(&mut metrics, "tr2_out", tr2.amount_out);
    metric(&mut metrics, "attacker_profit", profit);
    metric(
        &mut metrics,
        "victim_loss",
        SignedAmount::diff(unmanipulated, tr3.amount_out),
    );
    let expected = if profit.is_positive() {
        vec![ExpectedFinding {
            kind: FindingKind::DirectManipulation,
            attacker,
            pool: pool.address,
            victim: Some(victim_app),
            profit_asset: x,
            profit_amount: profit,
        }]
    } else {
        Vec::new()
    };
    Ok((bundle, manifest_entry(cx, "direct", expected, metrics)))
}

fn gen_lending(
    cx: &mut Ctx<'_>,
    p: &LendingParams,
) -> Result<(TraceBundle, BundleManifest), ScenarioError> {
    let fee = cx.common.fee;
    let (x, y) = (
        AssetId::Erc20(cx.actors.addr()),
        AssetId::Erc20(cx.actors.addr()),
    );
    let pool = PoolState::new(cx.actors.addr(), x, y, p.reserve_x, p.reserve_y)?;
    let (eoa, attacker, lender, router) = (
        cx.actors.addr(),
        cx.actors.addr(),
        cx.actors.addr(),
        cx.actors.addr(),
    );
    let (AssetId::Erc20(x_token), AssetId::Erc20(y_token)) = (x, y) else {
        unreachable!()
    };

    let attack = match p.attack {
        Some(a) => a,
        None => derive_doubling_input(&pool, fee)?,
    };
    let collateral = rational(p.collateral);
    let borrow_before = floor_amount(&max_borrow(
        &(&collateral * pool.spot_y_per_x()),
        &p.lending,
    ))?;
    let tr1 = trade(&pool, Side::YforX, attack, fee)?;
    let borrow = floor_amount(&max_borrow(
        &(&collateral * tr1.after.spot_y_per_x()),
        &p.lending,
    ))?;
    if borrow.is_zero() {
        return Err(invalid("collateral too small to borrow anything"));
    }
    let tr2 = trade(&tr1.after, Side::XforY, tr1.amount_out, fee)?;

    let bundle = attack_frame(cx, eoa, attacker, Some((y, attack)), |b| {
        b.call(
            attacker,
            lender,
            Amount::ZERO,
            calldata(SEL_GENERIC, &[p.collateral.to_word()]),
        );
        b.erc20_transfer_from(lender, x_token, attacker, lender, p.collateral);
        b.ret();
        b.router_swap(attacker, router, &tr1);
        b.call(
            attacker,
            lender,
            Amount::ZERO,
            calldata(SEL_GENERIC, &[borrow.to_word()]),
        );
        b.static_reads(lender, pool.address, SEL_GET_RESERVES);
        b.erc20_transfer(lender, y_token, attacker, borrow);
        b.ret();
        b.router_swap(attacker, router, &tr2);
    });

    let mut metrics = BTreeMap::new();
    metric(&mut metrics, "attack_input", attack);
    metric(
        &mut metrics,
        "rate_before",
        rational_str(&pool.spot_y_per_x()),
    );
    metric(
        &mut metrics,
        "rate_after",
        rational_str(&tr1.after.spot_y_per_x()),
    );
    metric(&mut metrics, "borrow_before", borrow_before);
    metric(&mut metrics, "borrow_after", borrow);
    metric(&mut metrics, "tr1_out", tr1.amount_out);
    metric(&mut metrics, "tr2_out", tr2.amount_out);
    let expected = vec![ExpectedFinding {
        kind: FindingKind::IndirectManipulation,
        attacker,
        pool: pool.address,
        victim: Some(lender),
        profit_asset: y,
        profit_amount: SignedAmount::positive(borrow),
    }];
    Ok((
        bundle,
        manifest_entry(cx, "indirect-lending", expected, metrics),
    ))
}

fn gen_vault(
    cx: &mut Ctx<'_>,
    p: &VaultParams,
) -> Result<(TraceBundle, BundleManifest), ScenarioError> {
    let fee = cx.common.fee;
    let (usdt, usdc) = (
        AssetId::Erc20(cx.actors.addr()),
        AssetId::Erc20(cx.actors.addr()),
    );
    let curve = PoolState::new(cx.actors.addr(), usdt, usdc, p.curve_usdt, p.curve_usdc)?;
    let (eoa, attacker, vault, router) = (
        cx.actors.addr(),
        cx.actors.addr(),
        cx.actors.addr(),
        cx.actors.addr(),
    );
    let AssetId::Erc20(usdc_token) = usdc else {
        unreachable!()
    };
    let shares_asset = AssetId::Erc20(vault);

    let vault_state = |pool: &PoolState| VaultState {
        reserve_underlying: p.vault_underlying,
        reserve_lp_external: p.vault_external,
        total_supply_shares: p.vault_supply,
        // underlying (USDC) per unit of the externally held position
        external_rate: super::Rational::new(
            super::to_big(pool.reserve_y),
            super::to_big(pool.reserve_x),
        ),
    };
    let fair_shares = vault_mint(&vault_state(&curve), p.deposit)?;
    let tr1 = trade(&curve, Side::XforY, p.attack, fee)?;
    let shares = vault_mint(&vault_state(&tr1.after), p.deposit)?;
    if shares.is_zero() {
        return Err(invalid("deposit mints no shares"));
    }
    let tr2 = trade(&tr1.after, Side::YforX, tr1.amount_out, fee)?;

    let bundle = attack_frame(cx, eoa, attacker, Some((usdt, p.attack)), |b| {
        b.router_swap(attacker, router, &tr1);
        b.call(
            attacker,
            vault,
            Amount::ZERO,
            calldata(SEL_GENERIC, &[p.deposit.to_word()]),
        );
        b.static_reads(vault, curve.address, SEL_GET_RESERVES);
        b.erc20_transfer_from(vault, usdc_token, attacker, vault, p.deposit);
        b.transfer_event(vault, Address::ZERO, attacker, shares);
        b.ret();
        b.router_swap(attacker, router, &tr2);
    });

    let mut metrics = BTreeMap::new();
    metric(&mut metrics, "shares_fair", fair_shares);
    metric(&mut metrics, "shares_minted", shares);
    metric(&mut metrics, "tr1_out", tr1.amount_out);
    metric(&mut metrics, "tr2_out", tr2.amount_out);
    let expected = vec![ExpectedFinding {
        kind: FindingKind::IndirectManipulation,
        attacker,
        pool: curve.address,
        victim: Some(vault),
        profit_asset: shares_asset,
        profit_amount: SignedAmount::positive(shares),
    }];
    Ok((
        bundle,
        manifest_entry(cx, "indirect-vault", expected, metrics),
    ))
}

fn gen_arbitrage(
    cx: &mut Ctx<'_>,
    p: &ArbParams,
) -> Result<(TraceBundle, BundleManifest), ScenarioError> {
    let fee = cx.common.fee;
    let (usdc, asset) = (
        AssetId::Erc20(cx.actors.addr()),
        AssetId::Erc20(cx.actors.addr()),
    );
    let pa = PoolState::new(cx.actors.addr(), AssetId::Ether, usdc, p.a_eth, p.a_usdc)?;
    let pb = PoolState::new(cx.actors.addr(), usdc, asset, p.b_usdc, p.b_asset)?;
    let pc = PoolState::new(cx.actors.addr(), asset, usdc, p.c_asset, p.c_usdc)?;
    let (eoa, bot, router) = (cx.actors.addr(), cx.actors.addr(), cx.actors.addr());

    let t1 = trade(&pa, Side::XforY, p.trade, fee)?;
    let t2 = trade(&pb, Side::XforY, t1.amount_out, fee)?;
    let t3 = trade(&pc, Side::XforY, t2.amount_out, fee)?;
    // the bot sells back what it bought in the first leg and keeps the
    // surplus from the middle legs
    let t4 = trade(&t1.after, Side::YforX, t1.amount_out, fee)?;

    let bundle = attack_frame(cx, eoa, bot, None, |b| {
        b.direct_pool_swap(bot, &t1);
        b.router_swap(bot, router, &t2);
        b.router_swap(bot, router, &t3);
        b.direct_pool_swap(bot, &t4);
    });

    let mut metrics = BTreeMap::new();
    metric(
        &mut metrics,
        "usdc_surplus",
        SignedAmount::diff(t3.amount_out, t1.amount_out),
    );
    metric(&mut metrics, "eth_back", t4.amount_out);
    let expected = vec![ExpectedFinding {
        kind: FindingKind::Arbitrage,
        attacker: bot,
        pool: pa.address,
        victim: None,
        profit_asset: AssetId::Ether,
        profit_amount: SignedAmount::diff(t4.amount_out, p.trade),
    }];
    Ok((bundle, manifest_entry(cx, "arbitrage", expected, metrics)))
}

fn gen_benign(
    cx: &mut Ctx<'_>,
    p: &BenignParams,
) -> Result<(TraceBundle, BundleManifest), ScenarioError> {
    let fee = cx.common.fee;
    let (x, y) = (
        AssetId::Erc20(cx.actors.addr()),
        AssetId::Erc20(cx.actors.addr()),
    );
    let pool = PoolState::new(cx.actors.addr(), x, y, p.reserve_x, p.reserve_y)?;
    let (user, router) = (cx.actors.addr(), cx.actors.addr());
    let t = trade(&pool, Side::XforY, p.amount, fee)?;
    let mut b = TraceBuilder::new(
        cx.bundle_id.clone(),
        cx.common.block,
        cx.actors.hash(),
        cx.common.chaff,
    );
    b.router_swap(user, router, &t);
    let mut metrics = BTreeMap::new();
    metric(&mut metrics, "amount_out", t.amount_out);
    Ok((
        b.finish(),
        manifest_entry(cx, "benign", Vec::new(), metrics),
    ))
}

fn manifest_entry(
    cx: &Ctx<'_>,
    scenario: &str,
    expected: Vec<ExpectedFinding>,
    mut metrics: BTreeMap<String, String>,
) -> BundleManifest {
    metric(&mut metrics, "flash_loan", cx.flash);
    BundleManifest {
        bundle_id: cx.bundle_id.clone(),
        scenario: scenario.to_string(),
        expected,
        metrics,
    }
}

fn run_plan(cx: &mut Ctx<'_>, plan: &Plan) -> Result<(TraceBundle, BundleManifest), ScenarioError> {
    match plan {
        Plan::Direct(p) => gen_direct(cx, p),
        Plan::Lending(p) => gen_lending(cx, p),
        Plan::Vault(p) => gen_vault(cx, p),
        Plan::Arbitrage(p) => gen_arbitrage(cx, p),
        Plan::Benign(p) => gen_benign(cx, p),
    }
}

// --- public entry points -----------------------------------------------------

/// Lazily generates the bundles of a scenario, one at a time.
pub struct ScenarioStream {
    kind: ScenarioKind,
    resolved: Resolved,
    rng: ChaCha8Rng,
    seed: u64,
    index: u64,
    count: u64,
}

impl ScenarioStream {
    pub fn new(
        kind: ScenarioKind,
        params: &ScenarioParams,
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        let resolved = resolve(kind, params)?;
        let count = match resolved.shape {
            Shape::Single(_) => 1,
            Shape::Mixed { count, .. } => count,
        };
        Ok(ScenarioStream {
            kind,
            resolved,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            index: 0,
            count,
        })
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn next_bundle(&mut self) -> Result<(TraceBundle, BundleManifest), ScenarioError> {
        let i = self.index;
        self.index += 1;
        let common = self.resolved.common;
        let (plan, flash) = match &self.resolved.shape {
            Shape::Single(plan) => (plan.clone(), common.flash.unwrap_or(false)),
            Shape::Mixed {
                jitter_permille, ..
            } => {
                let label = MIX[self.rng.random_range(0..MIX.len())];
                let mut plan = default_plan(label);
                let j = *jitter_permille;
                let fx = self.rng.random_range(1000 - j..=1000 + j);
                let fy = self.rng.random_range(1000 - j..=1000 + j);
                plan.jitter(fx, fy);
                let flash = common.flash.unwrap_or_else(|| self.rng.random_bool(0.5));
                (plan, flash)
            }
        };
        let bundle_id = format!("{}-{}-{}", self.kind, self.seed, i);
        let mut cx = Ctx {
            actors: Actors { rng: &mut self.rng },
            common,
            bundle_id,
            flash,
        };
        let out = run_plan(&mut cx, &plan);
        if let Ok((_, m)) = &out {
            debug_assert_eq!(m.scenario, plan.label());
        }
        out
    }

    /// A manifest skeleton with zero totals and no bundles.
    pub fn manifest_header(&self, params: &ScenarioParams) -> Manifest {
        Manifest {
            kind: self.kind,
            seed: self.seed,
            params: params.as_map().clone(),
            bundle_count: self.count,
            totals: empty_totals(),
            bundles: Vec::new(),
        }
    }
}

impl Iterator for ScenarioStream {
    type Item = Result<(TraceBundle, BundleManifest), ScenarioError>;

    fn next(&mut self) -> Option<Self::Item> {
        (self.index < self.count).then(|| self.next_bundle())
    }
}

/// Adds a bundle's expectations to the manifest totals.
pub fn tally(totals: &mut BTreeMap<String, u64>, m: &BundleManifest) {
    for e in &m.expected {
        *totals.entry(e.kind.as_str().to_string()).or_default() += 1;
    }
}

/// A generated scenario: trace bytes in the trace file format and the
/// manifest describing what the analysis should find.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub trace: Vec<u8>,
    pub manifest: Manifest,
}

/// Generates a scenario in memory. Identical arguments give identical bytes.
pub fn emit_scenario(
    kind: ScenarioKind,
    params: &ScenarioParams,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    let stream = ScenarioStream::new(kind, params, seed)?;
    let mut manifest = stream.manifest_header(params);
    let mut trace = Vec::new();
    for item in stream {
        let (bundle, m) = item?;
        write_bundle(&mut trace, &bundle).expect("writing to a Vec cannot fail");
        tally(&mut manifest.totals, &m);
        manifest.bundles.push(m);
    }
    Ok(Scenario { trace, manifest })
}

/// Serialises a stream of bundles on demand, so arbitrarily large corpora
/// can be fed to a reader without being held in memory.
pub struct CorpusReader<I> {
    bundles: I,
    buf: Vec<u8>,
    pos: usize,
}

impl<I: Iterator<Item = TraceBundle>> CorpusReader<I> {
    pub fn new(bundles: I) -> Self {
        CorpusReader {
            bundles,
            buf: Vec::new(),
            pos: 0,
        }
    }
}

impl<I: Iterator<Item = TraceBundle>> Read for CorpusReader<I> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.pos == self.buf.len() {
            let Some(b) = self.bundles.next() else {
                return Ok(0);
            };
            self.buf.clear();
            self.pos = 0;
            write_bundle(&mut self.buf, &b)?;
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}
