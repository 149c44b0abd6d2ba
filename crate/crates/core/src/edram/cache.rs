use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::classify::{classify_all, ThresholdPolicy};
use super::flips::sample_positions;
use super::refresh::{group_index, BitPlane, ImportanceClass, RefreshController, RefreshPolicy, GROUP_ORDER};
use super::retention::RetentionModel;
use crate::aerp::TokenId;
use crate::error::{config_err, Error, Result};
use crate::primitives::{ImportanceScore, SimRng, Value16};

/// Full-array refresh energy: 1.14 mJ per pass over 4 MiB.
pub const REFRESH_J_PER_BYTE: f64 = 1.14e-3 / (4.0 * 1024.0 * 1024.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankGroup {
    KeyMsb,
    KeyLsb,
    ValueMsb,
    ValueLsb,
}

impl BankGroup {
    pub const ALL: [BankGroup; 4] = [BankGroup::KeyMsb, BankGroup::KeyLsb, BankGroup::ValueMsb, BankGroup::ValueLsb];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn of(is_value: bool, plane: BitPlane) -> Self {
        match (is_value, plane) {
            (false, BitPlane::Msb) => BankGroup::KeyMsb,
            (false, BitPlane::Lsb) => BankGroup::KeyLsb,
            (true, BitPlane::Msb) => BankGroup::ValueMsb,
            (true, BitPlane::Lsb) => BankGroup::ValueLsb,
        }
    }
}

/// 4 bank groups x `banks_per_group` banks. A slot address names the same row
/// in every bank; element `i` of a vector lives in bank `i % banks_per_group`
/// of its group, column `i / banks_per_group`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankLayout {
    pub banks_per_group: usize,
    pub bank_bytes: u64,
}

impl Default for BankLayout {
    /// 32 banks sharing 4 MiB.
    fn default() -> Self {
        Self {
            banks_per_group: 8,
            bank_bytes: 4 * 1024 * 1024 / 32,
        }
    }
}

impl BankLayout {
    pub fn total_banks(&self) -> usize {
        4 * self.banks_per_group
    }

    /// (bank, row, column) of element `element` of the vector stored at `addr`.
    pub fn locate(&self, group: BankGroup, element: usize, addr: usize) -> (usize, usize, usize) {
        (
            group.index() * self.banks_per_group + element % self.banks_per_group,
            addr,
            element / self.banks_per_group,
        )
    }

    /// Bytes a single slot takes in each bank.
    pub fn row_bytes(&self, elems: usize) -> u64 {
        elems.div_ceil(self.banks_per_group) as u64
    }

    pub fn capacity_slots(&self, elems: usize) -> usize {
        if elems == 0 {
            return 0;
        }
        (self.bank_bytes / self.row_bytes(elems)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdramConfig {
    pub layout: BankLayout,
    /// Elements per stored K (and V) vector.
    pub elems: usize,
    pub refresh: RefreshPolicy,
    pub retention: RetentionModel,
    pub threshold: ThresholdPolicy,
    pub refresh_j_per_byte: f64,
    pub seed: u64,
    pub log_flips: bool,
}

impl EdramConfig {
    pub fn new(elems: usize, refresh: RefreshPolicy, seed: u64) -> Self {
        Self {
            layout: BankLayout::default(),
            elems,
            refresh,
            retention: RetentionModel::default(),
            threshold: ThresholdPolicy::default(),
            refresh_j_per_byte: REFRESH_J_PER_BYTE,
            seed,
            log_flips: false,
        }
    }
}

/// One retention failure, for the diagnostics log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub time_ns: u64,
    pub bank: usize,
    pub address: usize,
    pub bit: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdramStats {
    pub refresh_energy_j: f64,
    pub refresh_passes: [u64; 4],
    pub flips: u64,
    /// Flips indexed by plane (MSB, LSB).
    pub flips_by_plane: [u64; 2],
    /// Demand reads that landed on a bank being refreshed in the same tick.
    pub stall_cycles: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct PlaneClock {
    refreshed_ns: u64,
    evaluated_ns: u64,
    epoch: u64,
    commits: u64,
    /// Bits (of K then V words) already failed since the last refresh.
    failed: Vec<u16>,
}

impl PlaneClock {
    fn fresh(now: u64, words: usize, epoch: u64) -> Self {
        Self {
            refreshed_ns: now,
            evaluated_ns: now,
            epoch,
            commits: 0,
            failed: vec![0; words],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    token: TokenId,
    words: Vec<Value16>,
    score: ImportanceScore,
    class: ImportanceClass,
    clocks: [PlaneClock; 2],
}

/// Banked KV eDRAM with a score register per slot, adaptive refresh and
/// retention-failure injection on a nanosecond timeline.
#[derive(Debug, Clone)]
pub struct EdramCache {
    cfg: EdramConfig,
    controller: RefreshController,
    slots: Vec<Option<Slot>>,
    by_token: BTreeMap<TokenId, usize>,
    rng: SimRng,
    refreshed_now: [bool; 4],
    writes: u64,
    stats: EdramStats,
    log: Vec<FlipRecord>,
}

impl EdramCache {
    pub fn new(cfg: EdramConfig) -> Result<Self> {
        if cfg.elems == 0 {
            return Err(config_err("stored vectors need at least one element"));
        }
        let capacity = cfg.layout.capacity_slots(cfg.elems);
        if capacity == 0 {
            return Err(config_err("bank too small for a single vector"));
        }
        let controller = RefreshController::new(&cfg.refresh, &cfg.retention)?;
        Ok(Self {
            rng: SimRng::new(cfg.seed),
            controller,
            slots: vec![None; capacity],
            by_token: BTreeMap::new(),
            refreshed_now: [false; 4],
            writes: 0,
            stats: EdramStats::default(),
            log: Vec::new(),
            cfg,
        })
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }

    pub fn layout(&self) -> &BankLayout {
        &self.cfg.layout
    }

    pub fn stats(&self) -> &EdramStats {
        &self.stats
    }

    pub fn flip_log(&self) -> &[FlipRecord] {
        &self.log
    }

    pub fn address_of(&self, token: TokenId) -> Option<usize> {
        self.by_token.get(&token).copied()
    }

    /// Address -> token for every occupied slot.
    pub fn occupancy(&self) -> BTreeMap<usize, TokenId> {
        self.by_token.iter().map(|(&t, &a)| (a, t)).collect()
    }

    /// Row used by `token` in each of the banks.
    pub fn bank_rows(&self, token: TokenId) -> Option<Vec<usize>> {
        let addr = self.address_of(token)?;
        let layout = self.cfg.layout;
        let mut rows = Vec::with_capacity(layout.total_banks());
        for g in BankGroup::ALL {
            for e in 0..layout.banks_per_group.min(self.cfg.elems) {
                rows.push(layout.locate(g, e, addr).1);
            }
        }
        Some(rows)
    }

    pub fn class_of(&self, token: TokenId) -> Option<ImportanceClass> {
        let addr = self.address_of(token)?;
        self.slots[addr].as_ref().map(|s| s.class)
    }

    fn group_bytes(&self) -> [u64; 4] {
        let mut per_class = [0u64; 2];
        for s in self.slots.iter().flatten() {
            per_class[(s.class == ImportanceClass::Lst) as usize] += 1;
        }
        // K and V, one byte per element per plane
        let per_slot = 2 * self.cfg.elems as u64;
        std::array::from_fn(|g| {
            let (class, _) = GROUP_ORDER[g];
            per_class[(class == ImportanceClass::Lst) as usize] * per_slot
        })
    }

    fn commit(&mut self, addr: usize, plane: BitPlane, now: u64) {
        let elems = self.cfg.elems;
        let layout = self.cfg.layout;
        let retention = self.cfg.retention;
        let log_flips = self.cfg.log_flips;
        let Some(slot) = self.slots[addr].as_mut() else { return };
        let clock = &mut slot.clocks[plane.index()];
        if now <= clock.evaluated_ns {
            return;
        }
        let from = (clock.evaluated_ns - clock.refreshed_ns) as f64 * 1e-9;
        let to = (now - clock.refreshed_ns) as f64 * 1e-9;
        let q = retention.conditional_failure(from, to);
        clock.evaluated_ns = now;
        if q <= 0.0 {
            return;
        }
        let mut rng = self
            .rng
            .stream(&[addr as u64, plane.index() as u64, clock.epoch, clock.commits]);
        clock.commits += 1;
        let mut flips = 0u64;
        let words = &mut slot.words;
        let failed = &mut clock.failed;
        let log = &mut self.log;
        sample_positions(words.len() as u64 * 8, q, &mut rng, |pos| {
            let w = (pos / 8) as usize;
            let bit = (pos % 8) as u32 + plane.shift();
            if failed[w] & (1 << bit) != 0 {
                return;
            }
            failed[w] |= 1 << bit;
            words[w] = words[w].flip_bit(bit);
            flips += 1;
            if log_flips {
                let group = BankGroup::of(w >= elems, plane);
                let (bank, row, _) = layout.locate(group, w % elems, addr);
                log.push(FlipRecord {
                    time_ns: now,
                    bank,
                    address: row,
                    bit,
                });
            }
        });
        self.stats.flips += flips;
        self.stats.flips_by_plane[plane.index()] += flips;
    }

    /// Run the refresh controller up to `now_ns`.
    pub fn advance(&mut self, now_ns: u64) -> Result<()> {
        let bytes = self.group_bytes();
        let out = self
            .controller
            .refresh_tick(now_ns, &bytes, self.cfg.refresh_j_per_byte)?;
        self.refreshed_now = [false; 4];
        for ev in &out.events {
            let (class, plane) = GROUP_ORDER[ev.group];
            for addr in 0..self.slots.len() {
                if self.slots[addr].as_ref().is_some_and(|s| s.class == class) {
                    self.commit(addr, plane, ev.time_ns);
                    let slot = self.slots[addr].as_mut().expect("occupied");
                    let epoch = slot.clocks[plane.index()].epoch + 1;
                    slot.clocks[plane.index()] = PlaneClock::fresh(ev.time_ns, slot.words.len(), epoch);
                }
            }
            if ev.time_ns == now_ns {
                self.refreshed_now[ev.group] = true;
            }
        }
        self.stats.refresh_energy_j += out.energy_j;
        self.stats.refresh_passes = self.controller.passes();
        Ok(())
    }

    /// K and V of a resident token as they read at `now_ns`, including any
    /// retention failures since each plane was last refreshed.
    pub fn read_token(&mut self, token: TokenId, now_ns: u64) -> Result<(Vec<Value16>, Vec<Value16>)> {
        self.advance(now_ns)?;
        let addr = self.address_of(token).ok_or(Error::CacheMiss(token))?;
        let class = self.slots[addr].as_ref().expect("mapped slot").class;
        if self.refreshed_now[group_index(class, BitPlane::Msb)] || self.refreshed_now[group_index(class, BitPlane::Lsb)] {
            self.stats.stall_cycles += 1;
        }
        self.commit(addr, BitPlane::Msb, now_ns);
        self.commit(addr, BitPlane::Lsb, now_ns);
        let slot = self.slots[addr].as_ref().expect("mapped slot");
        self.stats.bytes_read += 2 * slot.words.len() as u64;
        let (k, v) = slot.words.split_at(self.cfg.elems);
        Ok((k.to_vec(), v.to_vec()))
    }

    fn store(&mut self, addr: usize, token: TokenId, key: &[Value16], value: &[Value16], score: ImportanceScore, now_ns: u64) -> Result<()> {
        if key.len() != self.cfg.elems || value.len() != self.cfg.elems {
            return Err(config_err(format!(
                "vectors must have {} elements, got K={} V={}",
                self.cfg.elems,
                key.len(),
                value.len()
            )));
        }
        if let Some(&other) = self.by_token.get(&token) {
            if other != addr {
                return Err(Error::Protocol(format!("token {token} already stored at address {other}")));
            }
        }
        let mut words = key.to_vec();
        words.extend_from_slice(value);
        self.writes += 1;
        let epoch = self.writes << 20;
        let n = words.len();
        self.stats.bytes_written += 2 * n as u64;
        self.slots[addr] = Some(Slot {
            token,
            words,
            score,
            class: ImportanceClass::Lst,
            clocks: [PlaneClock::fresh(now_ns, n, epoch), PlaneClock::fresh(now_ns, n, epoch)],
        });
        self.by_token.insert(token, addr);
        self.reclassify();
        Ok(())
    }

    fn check_addr(&self, addr: usize) -> Result<()> {
        if addr >= self.slots.len() {
            return Err(Error::Protocol(format!(
                "address {addr} out of range (capacity {})",
                self.slots.len()
            )));
        }
        Ok(())
    }

    /// Store a token in an empty slot.
    pub fn write(&mut self, addr: usize, token: TokenId, key: &[Value16], value: &[Value16], score: ImportanceScore, now_ns: u64) -> Result<()> {
        self.check_addr(addr)?;
        self.advance(now_ns)?;
        if self.slots[addr].is_some() {
            return Err(Error::Protocol(format!("address {addr} is occupied; use evict_write")));
        }
        self.store(addr, token, key, value, score, now_ns)
    }

    /// Replace the token at `addr` with a new one, as directed by the evictor.
    /// The new planes go to the same row of all 32 banks and the score
    /// register entry is overwritten.
    pub fn evict_write(&mut self, addr: usize, token: TokenId, key: &[Value16], value: &[Value16], score: ImportanceScore, now_ns: u64) -> Result<TokenId> {
        self.check_addr(addr)?;
        self.advance(now_ns)?;
        let old = self.slots[addr]
            .as_ref()
            .map(|s| s.token)
            .ok_or_else(|| Error::Protocol(format!("address {addr} holds no token to evict")))?;
        self.by_token.remove(&old);
        if let Err(e) = self.store(addr, token, key, value, score, now_ns) {
            self.by_token.insert(old, addr);
            return Err(e);
        }
        Ok(old)
    }

    /// Update a token's score register and reclassify the live set.
    pub fn set_score(&mut self, token: TokenId, score: ImportanceScore) -> Result<()> {
        let addr = self.address_of(token).ok_or(Error::CacheMiss(token))?;
        self.slots[addr].as_mut().expect("mapped slot").score = score;
        self.reclassify();
        Ok(())
    }

    fn reclassify(&mut self) {
        let live: Vec<usize> = (0..self.slots.len()).filter(|&a| self.slots[a].is_some()).collect();
        let scores: Vec<ImportanceScore> = live.iter().map(|&a| self.slots[a].as_ref().unwrap().score).collect();
        let classes = classify_all(&scores, self.cfg.threshold);
        for (a, c) in live.into_iter().zip(classes) {
            self.slots[a].as_mut().unwrap().class = c;
        }
    }
}
