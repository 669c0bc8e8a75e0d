//! Synthetic token datasets with planted entities.
//!
//! Every entity has a hub address that buys from the pool, funds its member
//! wallets, tops them up later and collects a final sweep on the last day.
//! All of an entity's own transfers happen within one hour of the day. The
//! entity pattern decides how the members are first funded and what extra
//! flows they exchange. Retail addresses only ever transact with other
//! retail addresses and with public actors, never with entity members.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{write_json, DatasetBundle, IngestError};
use crate::model::{
    Address, AddressLabel, EntityGroup, Evidence, GroupSet, LabelCategory, LiquiditySnapshot, MarketSnapshot, Transfer,
};

/// Token price in USD used to derive raw amounts.
pub const TOKEN_PRICE: f64 = 0.001;
const DECIMALS: i32 = 18;
const DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Diffusion,
    SequentialChain,
    Collector,
    WashPair,
    Circular,
    Airdrop,
    PublicHub,
}

impl Pattern {
    pub const ENTITY: [Pattern; 5] = [
        Pattern::Diffusion,
        Pattern::SequentialChain,
        Pattern::Collector,
        Pattern::WashPair,
        Pattern::Circular,
    ];

    pub const ALL: [Pattern; 7] = [
        Pattern::Diffusion,
        Pattern::SequentialChain,
        Pattern::Collector,
        Pattern::WashPair,
        Pattern::Circular,
        Pattern::Airdrop,
        Pattern::PublicHub,
    ];

    pub fn is_entity_pattern(self) -> bool {
        Pattern::ENTITY.contains(&self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Diffusion => "diffusion",
            Pattern::SequentialChain => "sequential_chain",
            Pattern::Collector => "collector",
            Pattern::WashPair => "wash_pair",
            Pattern::Circular => "circular",
            Pattern::Airdrop => "airdrop",
            Pattern::PublicHub => "public_hub",
        }
    }
}

impl std::str::FromStr for Pattern {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| SynthError::InvalidSpec(format!("unknown pattern {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_retail: usize,
    pub n_entities: usize,
    /// Inclusive size bounds, hub included.
    pub entity_size_range: (usize, usize),
    pub patterns: BTreeSet<Pattern>,
    /// Typical retail buy in USD; entity hubs buy 5 to 20 times this.
    pub volume_scale: f64,
    pub duration_days: u32,
    pub seed: u64,
    /// Mean number of outgoing peer-to-peer transfers per retail address.
    pub retail_tx_per_address: f64,
    /// Members on the loop of a circular entity.
    pub circular_length: usize,
    pub start_timestamp: i64,
    pub token: String,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_retail: 1000,
            n_entities: 10,
            entity_size_range: (6, 12),
            patterns: Pattern::ALL.into_iter().collect(),
            volume_scale: 10_000.0,
            duration_days: 30,
            seed: 0,
            retail_tx_per_address: 4.0,
            circular_length: 3,
            start_timestamp: 1_702_598_400,
            token: "SYN".to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] IngestError),
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Smallest entity that clears the fan-out threshold of 5.
    pub const MIN_ENTITY_SIZE: usize = 6;

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let (lo, hi) = self.entity_size_range;
        if lo > hi {
            return bad("entity_size_range min exceeds max");
        }
        if self.n_entities > 0 {
            if lo < Self::MIN_ENTITY_SIZE {
                return bad("entities need at least 6 addresses to clear the fan-out threshold");
            }
            if !self.patterns.iter().any(|p| p.is_entity_pattern()) {
                return bad("entities requested but no entity pattern enabled");
            }
            if self.patterns.contains(&Pattern::Circular) && !(2..lo).contains(&self.circular_length) {
                return bad("circular_length must be at least 2 and below the smallest entity size");
            }
        }
        if self.duration_days < 3 {
            return bad("duration_days must be at least 3");
        }
        if !(self.volume_scale.is_finite() && self.volume_scale >= 10.0) {
            return bad("volume_scale must be at least 10 USD");
        }
        if !(self.retail_tx_per_address.is_finite() && self.retail_tx_per_address >= 0.0) {
            return bad("retail_tx_per_address must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEntity {
    pub pattern: Pattern,
    pub hub: Address,
    /// Members other than the hub, in planting order.
    pub members: Vec<Address>,
    pub hour: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bundle: DatasetBundle,
    pub truth: GroupSet,
    pub planted: Vec<PlantedEntity>,
    /// Transfers touching the pool or the exchange.
    pub public_transfers: usize,
    pub airdrop_transfers: usize,
}

impl Scenario {
    /// Writes the dataset files plus `ground_truth.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), IngestError> {
        self.bundle.write_dir(dir)?;
        write_json(&dir.join("ground_truth.json"), &self.truth.to_file())
    }

    /// Unordered address pairs that share a ground-truth entity.
    pub fn truth_pairs(&self) -> BTreeSet<(Address, Address)> {
        group_pairs(&self.truth)
    }
}

/// All unordered member pairs of all groups, smaller address first.
pub fn group_pairs(set: &GroupSet) -> BTreeSet<(Address, Address)> {
    let mut pairs = BTreeSet::new();
    for g in set.groups() {
        let m: Vec<&Address> = g.members.iter().collect();
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                pairs.insert((m[i].clone(), m[j].clone()));
            }
        }
    }
    pairs
}

struct Event {
    ts: i64,
    from: usize,
    to: usize,
    usd: f64,
    batch: Option<usize>,
}

struct Gen {
    rng: ChaCha8Rng,
    addresses: Vec<Address>,
    seen: BTreeSet<Address>,
    events: Vec<Event>,
    start: i64,
}

impl Gen {
    fn new_address(&mut self) -> usize {
        loop {
            let bytes: [u8; 20] = self.rng.random();
            let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
            let a = Address::new(&format!("0x{hex}")).expect("non-empty");
            if self.seen.insert(a.clone()) {
                self.addresses.push(a);
                return self.addresses.len() - 1;
            }
        }
    }

    fn push(&mut self, ts: i64, from: usize, to: usize, usd: f64) {
        self.events.push(Event {
            ts,
            from,
            to,
            usd: cents(usd),
            batch: None,
        });
    }

    fn random_ts(&mut self, from_day: f64, to_day: f64) -> i64 {
        let lo = self.start + (from_day * DAY as f64) as i64;
        let hi = self.start + (to_day * DAY as f64) as i64;
        self.rng.random_range(lo..hi.max(lo + 1))
    }
}

fn cents(usd: f64) -> f64 {
    (usd * 100.0).round() / 100.0
}

/// Consecutive timestamps inside one hour of a given day.
struct Clock {
    base: i64,
    offset: i64,
}

impl Clock {
    fn at(start: i64, day: i64, hour: u32, rng: &mut ChaCha8Rng) -> Self {
        Clock {
            base: start + day * DAY + hour as i64 * 3600,
            offset: rng.random_range(0..600),
        }
    }

    fn tick(&mut self) -> i64 {
        let t = self.base + self.offset.min(3599);
        self.offset += 10;
        t
    }
}

struct Actors {
    pool: usize,
    exchange: Option<usize>,
}

/// Generates a dataset and its ground truth. The same spec always yields
/// identical output.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        addresses: Vec::new(),
        seen: BTreeSet::new(),
        events: Vec::new(),
        start: spec.start_timestamp,
    };
    let days = spec.duration_days as i64;
    let needs_exchange = spec.patterns.contains(&Pattern::PublicHub)
        || (spec.n_entities > 0 && spec.patterns.contains(&Pattern::Collector));
    let actors = Actors {
        pool: g.new_address(),
        exchange: needs_exchange.then(|| g.new_address()),
    };
    let mut labels = vec![AddressLabel {
        address: g.addresses[actors.pool].clone(),
        category: LabelCategory::SmartContract,
        source: "synthetic".into(),
    }];
    if let Some(x) = actors.exchange {
        for category in [LabelCategory::Exchange, LabelCategory::HotWallet] {
            labels.push(AddressLabel {
                address: g.addresses[x].clone(),
                category,
                source: "synthetic".into(),
            });
        }
    }

    let entity_patterns: Vec<Pattern> = Pattern::ENTITY
        .into_iter()
        .filter(|p| spec.patterns.contains(p))
        .collect();
    let mut planted = Vec::with_capacity(spec.n_entities);
    for e in 0..spec.n_entities {
        let pattern = entity_patterns[e % entity_patterns.len()];
        planted.push(plant_entity(&mut g, spec, &actors, pattern, days));
    }

    let retail: Vec<usize> = (0..spec.n_retail).map(|_| g.new_address()).collect();
    plant_retail(&mut g, spec, &actors, &retail, days);

    let mut airdrop_transfers = 0;
    if spec.patterns.contains(&Pattern::Airdrop) && retail.len() >= 5 {
        let deployer = g.new_address();
        labels.push(AddressLabel {
            address: g.addresses[deployer].clone(),
            category: LabelCategory::Project,
            source: "synthetic".into(),
        });
        let k = retail.len().min(50);
        let ts = g.random_ts(0.0, 1.0);
        let picks = sample(&mut g.rng, retail.len(), k).into_vec();
        for i in picks {
            g.events.push(Event {
                ts,
                from: deployer,
                to: retail[i],
                usd: 25.0,
                batch: Some(0),
            });
            airdrop_transfers += 1;
        }
    }

    let public: BTreeSet<usize> = std::iter::once(actors.pool).chain(actors.exchange).collect();
    let public_transfers = g
        .events
        .iter()
        .filter(|e| public.contains(&e.from) || public.contains(&e.to))
        .count();
    let transfers = materialize(&mut g, spec);

    let end = g.start + days * DAY - 1;
    let (balances, supply) = holder_balances(&transfers, &g.addresses, &public);
    let volume_24h: f64 = transfers
        .iter()
        .filter(|t| t.timestamp >= end - DAY)
        .map(|t| t.usd_value)
        .sum();
    let liquidity = spec.volume_scale * (20.0 + spec.n_retail as f64 / 100.0 + 2.0 * spec.n_entities as f64);
    let pool_tokens = liquidity / 2.0 / TOKEN_PRICE;
    let pool = LiquiditySnapshot {
        q_a: pool_tokens,
        q_b: liquidity / 2.0,
        p_a: TOKEN_PRICE,
        p_b: 1.0,
        timestamp: end,
    };
    let market = MarketSnapshot {
        volume_24h,
        market_cap: (supply + pool_tokens) * TOKEN_PRICE,
        balances,
        timestamp: end,
    };

    let public_addrs: BTreeSet<&Address> = public.iter().map(|&i| &g.addresses[i]).collect();
    let universe: BTreeSet<Address> = transfers
        .iter()
        .flat_map(|t| [&t.from, &t.to])
        .filter(|a| !public_addrs.contains(a))
        .cloned()
        .collect();
    let groups = planted
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut members: BTreeSet<Address> = p.members.iter().cloned().collect();
            members.insert(p.hub.clone());
            let mut group = EntityGroup::new(
                members,
                vec![Evidence::new("ground_truth", format!("{:?}", p.pattern), 1.0)],
            );
            group.group_id = i as u64;
            group.linkage_probability = 1.0;
            group
        })
        .collect();
    let truth = GroupSet::new(groups, universe).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    Ok(Scenario {
        bundle: DatasetBundle {
            transfers,
            labels,
            pool: Some(pool),
            market: Some(market),
        },
        truth,
        planted,
        public_transfers,
        airdrop_transfers,
    })
}

fn plant_entity(g: &mut Gen, spec: &ScenarioSpec, actors: &Actors, pattern: Pattern, days: i64) -> PlantedEntity {
    let (lo, hi) = spec.entity_size_range;
    let size = g.rng.random_range(lo..=hi);
    let hub = g.new_address();
    let members: Vec<usize> = (1..size).map(|_| g.new_address()).collect();
    let hour: u32 = g.rng.random_range(0..24);
    let fund_day = g.rng.random_range(0..(days / 2).max(1));
    let topup_day = g.rng.random_range(fund_day + 1..days - 1);
    let last_day = days - 1;
    let buy = spec.volume_scale * g.rng.random_range(5.0..20.0);
    let mut held = vec![0.0; members.len()];

    let mut clock = Clock::at(g.start, fund_day, hour, &mut g.rng);
    g.push(clock.tick(), actors.pool, hub, buy);
    match pattern {
        Pattern::SequentialChain => {
            let mut amount = cents(buy * 0.5);
            let mut from = hub;
            for (k, &m) in members.iter().enumerate() {
                g.push(clock.tick(), from, m, amount);
                held[k] += amount;
                if k > 0 {
                    held[k - 1] -= amount;
                }
                from = m;
                amount = cents(amount * 0.8);
            }
        }
        Pattern::Collector => {
            let exchange = actors.exchange.expect("exchange exists when collectors are planted");
            for (k, &m) in members.iter().enumerate() {
                let w = cents(buy * g.rng.random_range(0.03..0.08));
                g.push(clock.tick(), exchange, m, w);
                held[k] += w;
            }
            for (k, &m) in members.iter().enumerate() {
                let s = cents(held[k] * 0.7);
                g.push(clock.tick(), m, hub, s);
                held[k] -= s;
            }
        }
        _ => {
            for (k, &m) in members.iter().enumerate() {
                let f = cents(buy * g.rng.random_range(0.03..0.08));
                g.push(clock.tick(), hub, m, f);
                held[k] += f;
            }
        }
    }
    if pattern == Pattern::Circular {
        circular_round(g, &mut clock, &members, &mut held, spec.circular_length);
    }

    let mut clock = Clock::at(g.start, topup_day, hour, &mut g.rng);
    for (k, &m) in members.iter().enumerate() {
        let t = cents(buy * 0.01);
        g.push(clock.tick(), hub, m, t);
        held[k] += t;
    }

    let mut clock = Clock::at(g.start, last_day, hour, &mut g.rng);
    match pattern {
        Pattern::WashPair => {
            for pair in (0..members.len() / 2).map(|i| (2 * i, 2 * i + 1)) {
                let x = cents(held[pair.0].min(held[pair.1]) * 0.3);
                for round in 0..6 {
                    let (a, b) = if round % 2 == 0 { pair } else { (pair.1, pair.0) };
                    g.push(clock.tick(), members[a], members[b], x);
                }
            }
        }
        Pattern::Circular => circular_round(g, &mut clock, &members, &mut held, spec.circular_length),
        _ => {}
    }
    for (k, &m) in members.iter().enumerate() {
        let s = cents(held[k] * 0.3);
        g.push(clock.tick(), m, hub, s);
        held[k] -= s;
    }

    PlantedEntity {
        pattern,
        hub: g.addresses[hub].clone(),
        members: members.iter().map(|&m| g.addresses[m].clone()).collect(),
        hour,
    }
}

/// Passes an amount around the first `len` members, losing 2% per hop.
fn circular_round(g: &mut Gen, clock: &mut Clock, members: &[usize], held: &mut [f64], len: usize) {
    let mut amount = cents(held[0] * 0.5);
    for k in 0..len {
        let next = (k + 1) % len;
        g.push(clock.tick(), members[k], members[next], amount);
        held[k] -= amount;
        held[next] += amount;
        amount = cents(amount * 0.98);
    }
}

fn plant_retail(g: &mut Gen, spec: &ScenarioSpec, actors: &Actors, retail: &[usize], days: i64) {
    let half = days as f64 / 2.0;
    let mean = spec.retail_tx_per_address;
    let (lo, hi) = ((mean * 0.5).floor() as u32, (mean * 1.5).ceil() as u32);
    for &r in retail {
        let buy = spec.volume_scale * 10f64.powf(g.rng.random_range(-2.0..0.0));
        let t0 = g.random_ts(0.0, half);
        g.push(t0, actors.pool, r, buy);
        let from_day = (t0 - g.start) as f64 / DAY as f64;
        if retail.len() > 1 {
            let n = g.rng.random_range(lo..=hi.max(lo));
            for _ in 0..n {
                let mut to = retail[g.rng.random_range(0..retail.len())];
                while to == r {
                    to = retail[g.rng.random_range(0..retail.len())];
                }
                let ts = g.random_ts(from_day, days as f64);
                let usd = buy * g.rng.random_range(0.02..0.15);
                g.push(ts.max(t0 + 1), r, to, usd);
            }
        }
        if g.rng.random_bool(0.2) {
            let ts = g.random_ts(from_day, days as f64);
            let usd = buy * g.rng.random_range(0.05..0.3);
            g.push(ts.max(t0 + 1), r, actors.pool, usd);
        }
        if spec.patterns.contains(&Pattern::PublicHub) {
            let exchange = actors.exchange.expect("exchange exists with public_hub");
            if g.rng.random_bool(0.1) {
                let ts = g.random_ts(from_day, days as f64);
                let usd = buy * g.rng.random_range(0.05..0.3);
                g.push(ts.max(t0 + 1), r, exchange, usd);
            }
            if g.rng.random_bool(0.1) {
                let ts = g.random_ts(0.0, days as f64);
                let usd = spec.volume_scale * g.rng.random_range(0.01..0.1);
                g.push(ts, exchange, r, usd);
            }
        }
    }
}

fn raw_amount(usd: f64) -> u128 {
    (usd / TOKEN_PRICE * 10f64.powi(DECIMALS)).round() as u128
}

fn tx_hash(seed: u64, n: usize) -> String {
    let digest = Sha256::digest(format!("{seed}:{n}").as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("0x{hex}")
}

fn materialize(g: &mut Gen, spec: &ScenarioSpec) -> Vec<Transfer> {
    let mut order: Vec<usize> = (0..g.events.len()).collect();
    order.sort_by_key(|&i| (g.events[i].ts, i));
    let mut batch_hashes: BTreeMap<usize, String> = BTreeMap::new();
    let mut out = Vec::with_capacity(order.len());
    for (n, &i) in order.iter().enumerate() {
        let e = &g.events[i];
        let hash = match e.batch {
            Some(b) => batch_hashes.entry(b).or_insert_with(|| tx_hash(spec.seed, n)).clone(),
            None => tx_hash(spec.seed, n),
        };
        out.push(Transfer {
            tx_hash: hash,
            block_number: ((e.ts - g.start) / 3) as u64 + 1,
            timestamp: e.ts,
            from: g.addresses[e.from].clone(),
            to: g.addresses[e.to].clone(),
            token: spec.token.clone(),
            raw_amount: raw_amount(e.usd),
            usd_value: e.usd,
            gas_fee: (g.rng.random_range(1..50) as f64) * 1e-5,
        });
    }
    out
}

/// Positive token balances of non-public holders, and their sum.
fn holder_balances(
    transfers: &[Transfer],
    addresses: &[Address],
    public: &BTreeSet<usize>,
) -> (BTreeMap<Address, f64>, f64) {
    let public: BTreeSet<&Address> = public.iter().map(|&i| &addresses[i]).collect();
    let mut raw: BTreeMap<&Address, i128> = BTreeMap::new();
    for t in transfers {
        *raw.entry(&t.from).or_default() -= t.raw_amount as i128;
        *raw.entry(&t.to).or_default() += t.raw_amount as i128;
    }
    let scale = 10f64.powi(DECIMALS);
    let balances: BTreeMap<Address, f64> = raw
        .into_iter()
        .filter(|(a, b)| *b > 0 && !public.contains(a))
        .map(|(a, b)| (a.clone(), b as f64 / scale))
        .collect();
    let supply = balances.values().sum();
    (balances, supply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{detect_source_of_funds, DetectorConfig};
    use crate::model::TransactionGraph;
    use crate::preprocess::{clean_dataset, PreprocessConfig};

    fn spec(patterns: &[Pattern], n_entities: usize, n_retail: usize) -> ScenarioSpec {
        ScenarioSpec {
            n_retail,
            n_entities,
            patterns: patterns.iter().copied().collect(),
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn single_diffusion_entity_is_found_exactly() {
        let mut s = spec(&[Pattern::Diffusion], 1, 0);
        s.entity_size_range = (6, 6);
        let sc = generate_scenario(&s).unwrap();
        let (clean, _) = clean_dataset(&sc.bundle, &PreprocessConfig::default());
        let graph = TransactionGraph::build(&clean.transfers);
        let groups = detect_source_of_funds(&graph, &clean.labels, &DetectorConfig::default());
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, sc.truth.groups()[0].members);
        assert_eq!(groups[0].members.len(), 6);
    }

    #[test]
    fn zero_entities_zero_groups() {
        let sc = generate_scenario(&spec(&Pattern::ALL, 0, 50)).unwrap();
        assert!(sc.truth.groups().is_empty());
        assert!(!sc.bundle.transfers.is_empty());
    }

    /// Simple cycles through the planted loop, found by walking every
    /// ordering of its members.
    #[test]
    fn circular_loop_of_three_is_a_cycle() {
        let sc = generate_scenario(&spec(&[Pattern::Circular], 1, 0)).unwrap();
        let p = &sc.planted[0];
        let loop_members = &p.members[..3];
        let amount = |a: &Address, b: &Address| -> u128 {
            sc.bundle
                .transfers
                .iter()
                .filter(|t| &t.from == a && &t.to == b)
                .map(|t| t.raw_amount)
                .sum()
        };
        for k in 0..3 {
            assert!(amount(&loop_members[k], &loop_members[(k + 1) % 3]) > 0);
        }
        let back = amount(&loop_members[2], &loop_members[0]) as f64;
        let out = amount(&loop_members[0], &loop_members[1]) as f64;
        assert!(back >= 0.95 * out);

        let graph = TransactionGraph::build(&sc.bundle.transfers);
        let ids: Vec<usize> = loop_members.iter().map(|a| graph.node_id(a).unwrap()).collect();
        let cycles = crate::detect::find_circular_cycles(&graph, &DetectorConfig::default());
        let mut want = ids.clone();
        let r = want.iter().enumerate().min_by_key(|(_, &v)| v).unwrap().0;
        want.rotate_left(r);
        assert!(cycles.contains(&want), "{cycles:?} lacks {want:?}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = spec(&Pattern::ALL, 5, 100);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_scenario(&s).unwrap().write_dir(a.path()).unwrap();
        generate_scenario(&s).unwrap().write_dir(b.path()).unwrap();
        for name in [
            "transfers.csv",
            "labels.json",
            "pool.json",
            "market.json",
            "ground_truth.json",
        ] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert!(x == y, "{name} differs");
        }
    }

    #[test]
    fn truth_is_disjoint_and_present() {
        let sc = generate_scenario(&spec(&Pattern::ALL, 10, 200)).unwrap();
        let present: BTreeSet<&Address> = sc.bundle.transfers.iter().flat_map(|t| [&t.from, &t.to]).collect();
        let mut seen = BTreeSet::new();
        for g in sc.truth.groups() {
            for m in &g.members {
                assert!(present.contains(m));
                assert!(seen.insert(m.clone()));
            }
        }
        assert_eq!(
            seen.len(),
            sc.planted.iter().map(|p| p.members.len() + 1).sum::<usize>()
        );
    }

    #[test]
    fn retail_never_touches_entities() {
        let sc = generate_scenario(&spec(&Pattern::ALL, 10, 300)).unwrap();
        let membership = sc.truth.membership();
        for t in &sc.bundle.transfers {
            match (membership.get(&t.from), membership.get(&t.to)) {
                (Some(a), Some(b)) => assert_eq!(a, b),
                (Some(_), None) | (None, Some(_)) => {
                    let other = if membership.contains_key(&t.from) {
                        &t.to
                    } else {
                        &t.from
                    };
                    assert!(
                        sc.bundle.labels.iter().any(|l| &l.address == other),
                        "entity touches unlabeled {other:?}"
                    );
                }
                (None, None) => {}
            }
        }
    }

    #[test]
    fn cleaning_removes_planted_public_and_airdrop_transfers() {
        let sc = generate_scenario(&spec(&Pattern::ALL, 6, 300)).unwrap();
        let (_, report) = clean_dataset(&sc.bundle, &PreprocessConfig::default());
        assert_eq!(report.removed_public_tx, sc.public_transfers);
        assert_eq!(report.removed_airdrop_tx, sc.airdrop_transfers);
        assert_eq!(sc.airdrop_transfers, 50);
    }

    #[test]
    fn spec_parses_from_toml() {
        let s = ScenarioSpec::from_toml(
            "n_entities = 3\npatterns = [\"wash_pair\", \"airdrop\"]\nentity_size_range = [6, 8]\n",
        )
        .unwrap();
        assert_eq!(s.n_entities, 3);
        assert_eq!(s.entity_size_range, (6, 8));
        assert_eq!(s.patterns, [Pattern::WashPair, Pattern::Airdrop].into_iter().collect());
        for p in Pattern::ALL {
            assert_eq!(p.as_str().parse::<Pattern>().unwrap(), p);
            assert_eq!(serde_json::to_value(p).unwrap(), p.as_str());
        }
        assert!(ScenarioSpec::from_toml("n_entitis = 3").is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let s = ScenarioSpec {
            entity_size_range: (8, 7),
            ..ScenarioSpec::default()
        };
        assert!(matches!(s.validate(), Err(SynthError::InvalidSpec(_))));
        let s = ScenarioSpec {
            entity_size_range: (3, 7),
            ..ScenarioSpec::default()
        };
        assert!(s.validate().is_err());
        let mut s = ScenarioSpec {
            patterns: [Pattern::Airdrop].into_iter().collect(),
            ..ScenarioSpec::default()
        };
        assert!(s.validate().is_err());
        s.n_entities = 0;
        assert!(s.validate().is_ok());
    }
}
