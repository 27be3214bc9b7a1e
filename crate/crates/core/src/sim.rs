//! Deterministic behavioral engine for scheduler-queue contention.
//!
//! A measurement program is a delay chain, `k` repetitions of a priming
//! instruction, optional dispatch fillers and a probe. The engine dispatches
//! it against one machine model, with the sibling hardware thread idle, busy
//! or running its own program, and decides per the model's rules whether the
//! second probe read executes out of order, how many bingo updates elapse
//! when it does not, and what the per-queue stall counters read.
//!
//! The model, in dispatch order:
//!
//! 1. Dependent priming uops accumulate in their queue(s) while the delay
//!    chain is unresolved. The dispatcher places flexible uops into the least
//!    occupied queue of the choice set.
//! 2. The available room is the queue capacity, minus the watermark reserve
//!    while the sibling is busy, minus the sibling's own live occupancy,
//!    minus the calibrated capacity offsets. Exceeding it stalls the back
//!    end before the probe read dispatches.
//! 3. At near-capacity occupancies listed in the machine's spurious budget,
//!    the back end stalls a short dispatch window after priming even though
//!    capacity was not exceeded. The probe read escapes the stall only if it
//!    dispatches within the window; trailing transient priming uops, filler
//!    uops and the long timer read all consume the window.
//! 4. Memory ordering: a flushed or address-dependent priming operand forces
//!    the read to wait for the operand access, which dominates every other
//!    delay.
//!
//! Everything is deterministic for a fixed seed; optional per-trial stall
//! noise feeds the higher-level attack models.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::uarch::{
    lookup_instruction, InstructionSpec, InstructionTable, MachineConfig, MemOperand, QueueId,
};

/// Probe used to detect whether the back end stalled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    /// Race a single-uop read of an externally updated variable.
    Bingo,
    /// Non-serialized hardware timer read.
    Timer,
    /// Stall performance counters only.
    Counters,
    /// No probe (sibling workloads).
    None,
}

/// One measurement-thread program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadProgram {
    /// Dependency chain delaying the priming uops: (mnemonic, repetitions)
    /// links, executed back to back.
    pub delay_chain: Vec<(String, u32)>,
    /// Priming instruction and repetition count `k`.
    pub priming: (String, u32),
    /// Filler instructions dispatched between priming and the probe read.
    pub fillers: (String, u32),
    pub probe: Probe,
    /// Model a cache flush of the priming instruction's memory operand.
    pub flush_operand: bool,
}

impl ThreadProgram {
    /// Program with the given priming block and no fillers, probing via the
    /// bingo race. The delay chain runs on the integer side when the priming
    /// instruction occupies FP queues, and on the FP side otherwise, so the
    /// chain never competes with the queues under test.
    pub fn standard(config: &MachineConfig, mnemonic: &str, k: u32) -> Result<ThreadProgram> {
        let spec = lookup_instruction(config, mnemonic)?;
        let fp_target = spec
            .dependent_placement()
            .map(|p| p.queues.iter().all(|q| q.is_fp()))
            .unwrap_or(false);
        let delay_chain = if fp_target {
            let mut chain = vec![("div".to_string(), 18)];
            if InstructionTable::global()
                .lookup(config.name, "cvtsi2sd")
                .is_ok()
            {
                chain.push(("cvtsi2sd".to_string(), 1));
            }
            chain
        } else {
            vec![("sqrtsd".to_string(), 12)]
        };
        Ok(ThreadProgram {
            delay_chain,
            priming: (mnemonic.to_string(), k),
            fillers: ("pxor".to_string(), 0),
            probe: Probe::Bingo,
            flush_operand: false,
        })
    }

    pub fn with_fillers(mut self, count: u32) -> Self {
        self.fillers.1 = count;
        self
    }

    pub fn with_probe(mut self, probe: Probe) -> Self {
        self.probe = probe;
        self
    }

    pub fn with_flushed_operand(mut self, flush: bool) -> Self {
        self.flush_operand = flush;
        self
    }
}

/// Load on the sibling hardware thread of the measuring core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SiblingLoad {
    Idle,
    BusyLoop,
    Program(ThreadProgram),
}

/// Outcome of one contention measurement (aggregated over trials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Mean bingo updates observed between the two reads.
    pub bingo_updates: f64,
    /// Whether the second read executed out of order (majority over trials).
    pub reordered: bool,
    /// Mean stalled cycles per queue (token-stall counters).
    pub queue_stall_cycles: BTreeMap<QueueId, f64>,
    pub trials: u32,
}

/// Outcome of a single trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub reordered: bool,
    pub bingo_updates: f64,
    pub stalls: BTreeMap<QueueId, f64>,
}

/// Engine tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    /// Bingo variable updates per abstract cycle.
    pub bingo_update_rate: f64,
    /// Per-trial probability of an extra spurious stall (default 0).
    pub noise_stall_prob: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            bingo_update_rate: 1.0,
            noise_stall_prob: 0.0,
        }
    }
}

/// A program resolved against one machine model, ready for cheap per-trial
/// evaluation.
#[derive(Debug, Clone)]
pub struct PreparedProbe {
    k: u32,
    dep_pool: Vec<QueueId>,
    dep_uops_per_instance: u32,
    /// Deficit applied to the pool capacity: per-instruction calibration
    /// plus the machine-wide offset for fully flexible integer placements.
    capacity_deficit: u32,
    pool_includes_nsq: bool,
    transient_int_uops_per_instance: u32,
    filler_uops: u32,
    timer_window_charge: u32,
    delay_cycles: u64,
    accumulating: bool,
    mem_rule: bool,
}

impl PreparedProbe {
    pub fn priming_count(&self) -> u32 {
        self.k
    }
}

/// Sibling load resolved to its steady-state effect on the shared queues.
#[derive(Debug, Clone, Default)]
pub struct SiblingState {
    pub busy: bool,
    pub occupancy: BTreeMap<QueueId, u32>,
}

/// Contention engine bound to one machine model.
pub struct Engine<'a> {
    config: &'a MachineConfig,
    table: &'a InstructionTable,
    params: EngineParams,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a MachineConfig) -> Self {
        Engine {
            config,
            table: InstructionTable::global(),
            params: EngineParams::default(),
        }
    }

    pub fn with_params(mut self, params: EngineParams) -> Self {
        self.params = params;
        self
    }

    pub fn config(&self) -> &MachineConfig {
        self.config
    }

    pub fn params(&self) -> EngineParams {
        self.params
    }

    fn spec(&self, mnemonic: &str) -> Result<&'a InstructionSpec> {
        self.table.lookup(self.config.name, mnemonic)
    }

    /// Resolve a program against the machine model.
    pub fn prepare(&self, program: &ThreadProgram) -> Result<PreparedProbe> {
        let priming = self.spec(&program.priming.0)?;
        let k = program.priming.1;

        let mut delay_cycles: u64 = 0;
        for (mnemonic, count) in &program.delay_chain {
            let link = self.spec(mnemonic)?;
            delay_cycles += u64::from(link.latency_cycles) * u64::from(*count);
        }

        let filler_spec = self.spec(&program.fillers.0)?;
        let filler_uops = filler_spec.total_uops * program.fillers.1;

        let timer_window_charge = match program.probe {
            Probe::Timer => self
                .config
                .timer_read_cycles
                .ok_or(Error::TimerUnavailable(self.config.name))?,
            _ => 0,
        };

        // Placement choice sets are intersected with the queues this machine
        // actually has (the zen2 FP side is a single queue).
        let dep_pool: Vec<QueueId> = priming
            .dependent_placement()
            .map(|p| {
                p.queues
                    .iter()
                    .copied()
                    .filter(|q| self.config.queue(*q).is_some())
                    .collect()
            })
            .unwrap_or_default();
        if priming.dependent_placement().is_some() && dep_pool.is_empty() {
            return Err(Error::InvalidProgram(format!(
                "{} places uops only in queues this machine lacks",
                priming.mnemonic
            )));
        }

        let all_int =
            dep_pool.len() == self.config.int_queues.len() && dep_pool.iter().all(|q| q.is_int());
        let pool_includes_nsq = !dep_pool.is_empty() && dep_pool.iter().all(|q| q.is_fp());
        let mut capacity_deficit = priming.capacity_offset_for(self.config.name);
        if all_int {
            capacity_deficit += self.config.multi_queue_offset;
        }

        let dep_uops_per_instance = priming.dependent_placement().map(|p| p.uops).unwrap_or(0);
        let accumulating =
            priming.flags.delayable && delay_cycles > 0 && dep_uops_per_instance > 0 && k > 0;

        let has_mem_operand = priming.mem_operand != MemOperand::None;
        let mem_rule = k >= 1
            && ((program.flush_operand && has_mem_operand)
                || priming.mem_operand == MemOperand::Uncached
                || priming.mem_operand == MemOperand::AddressDependent);

        Ok(PreparedProbe {
            k,
            dep_pool,
            dep_uops_per_instance,
            capacity_deficit,
            pool_includes_nsq,
            transient_int_uops_per_instance: priming.transient_int_uops(),
            filler_uops,
            timer_window_charge,
            delay_cycles,
            accumulating,
            mem_rule,
        })
    }

    /// Resolve a sibling load to its occupancy footprint.
    pub fn prepare_sibling(&self, sibling: &SiblingLoad) -> Result<SiblingState> {
        match sibling {
            SiblingLoad::Idle => Ok(SiblingState::default()),
            SiblingLoad::BusyLoop => Ok(SiblingState {
                busy: true,
                occupancy: BTreeMap::new(),
            }),
            SiblingLoad::Program(program) => {
                let prep = self.prepare(program)?;
                let mut occupancy = BTreeMap::new();
                if prep.accumulating {
                    let total = prep.k * prep.dep_uops_per_instance;
                    let spread = distribute(total, &prep.dep_pool, &BTreeMap::new());
                    for (q, n) in spread {
                        let cap = self.config.queue(q).map(|s| s.capacity).unwrap_or(0);
                        occupancy.insert(q, n.min(cap));
                    }
                }
                Ok(SiblingState {
                    busy: true,
                    occupancy,
                })
            }
        }
    }

    fn effective_room(&self, q: QueueId, sibling: &SiblingState) -> u32 {
        let cap = self.config.queue(q).map(|s| s.capacity).unwrap_or(0);
        let reserve = if sibling.busy {
            self.config.watermark_reserve
        } else {
            0
        };
        cap.saturating_sub(reserve)
            .saturating_sub(sibling.occupancy.get(&q).copied().unwrap_or(0))
    }

    fn pool_room(&self, prep: &PreparedProbe, sibling: &SiblingState) -> u64 {
        let mut room: u64 = prep
            .dep_pool
            .iter()
            .map(|&q| u64::from(self.effective_room(q, sibling)))
            .sum();
        if prep.pool_includes_nsq {
            room += u64::from(self.config.fp_nsq_capacity);
        }
        room.saturating_sub(u64::from(prep.capacity_deficit))
    }

    /// Shared evaluation core. Fills per-queue stall cycles into `stalls`
    /// when given (the map must already hold every config queue) and returns
    /// (reordered, bingo updates). Allocation-free for targeted priming.
    fn eval_into(
        &self,
        prep: &PreparedProbe,
        sibling: &SiblingState,
        noise_draw: Option<f64>,
        mut stalls: Option<&mut BTreeMap<QueueId, f64>>,
    ) -> (bool, f64) {
        if let Some(stalls) = stalls.as_deref_mut() {
            for v in stalls.values_mut() {
                *v = 0.0;
            }
        }
        if !prep.accumulating {
            return self.finish(prep, false);
        }

        let total = prep.k * prep.dep_uops_per_instance;
        let pool_room = self.pool_room(prep, sibling);
        let overflow = u64::from(total) > pool_room;

        // Occupancy per pool queue: a singleton takes everything, flexible
        // pools balance around the sibling's footprint.
        let multi_occupancy = if prep.dep_pool.len() > 1 {
            Some(distribute(total, &prep.dep_pool, &sibling.occupancy))
        } else {
            None
        };
        let occ_of = |q: QueueId| -> u32 {
            match &multi_occupancy {
                Some(map) => map.get(&q).copied().unwrap_or(0),
                None => total,
            }
        };

        // Spurious window: at the tabulated near-capacity occupancies the
        // back end stalls shortly after priming. The read is only delayed if
        // the uops dispatched ahead of it outnumber the remaining budget.
        let window = prep.k * prep.transient_int_uops_per_instance
            + prep.filler_uops
            + prep.timer_window_charge;
        let spurious_delays_read = prep.dep_pool.iter().any(|&q| {
            q.is_int()
                && self
                    .config
                    .spurious_budget_for(occ_of(q))
                    .is_some_and(|budget| window > budget)
        });
        let noise_stall = noise_draw.is_some_and(|draw| draw < self.params.noise_stall_prob);
        let stalled = overflow || spurious_delays_read || noise_stall;

        if let Some(stalls) = stalls {
            let delay = prep.delay_cycles as f64 * self.params.bingo_update_rate;
            let excess = u64::from(total).saturating_sub(pool_room);
            let single_room = prep
                .dep_pool
                .iter()
                .map(|&q| self.effective_room(q, sibling))
                .min()
                .unwrap_or(0);
            let min_spurious = self.config.min_spurious_occupancy();
            for &q in &prep.dep_pool {
                let mut cycles = 0.0;
                if excess > 0 {
                    // Dispatch blocks until the chain resolves and the queue
                    // drains the overflowing uops.
                    cycles += delay * 0.5 + 25.0 * excess as f64;
                }
                let occ = occ_of(q);
                if q.is_int() && self.config.spurious_budget_for(occ).is_some() {
                    let base = min_spurious.unwrap_or(occ);
                    cycles += delay * 0.25 + 10.0 * f64::from(occ - base + 1);
                }
                if prep.dep_pool.len() >= 2 && total > single_room {
                    // A flexible block bigger than any one queue keeps every
                    // member queue intermittently at its token limit.
                    cycles += 5.0 * f64::from(total - single_room);
                }
                if noise_stall && cycles == 0.0 {
                    cycles += delay * 0.25;
                }
                if cycles > 0.0 {
                    *stalls.get_mut(&q).unwrap() += cycles;
                }
            }
        }

        self.finish(prep, stalled)
    }

    /// Fast path: stall decision and bingo updates, no counter model.
    pub fn eval_delay(&self, prep: &PreparedProbe, sibling: &SiblingState) -> (bool, f64) {
        self.eval_into(prep, sibling, None, None)
    }

    fn finish(&self, prep: &PreparedProbe, stalled: bool) -> (bool, f64) {
        let delay = prep.delay_cycles as f64 * self.params.bingo_update_rate;
        if prep.mem_rule {
            let updates = self.config.mem_miss_updates + if stalled { delay } else { 0.0 };
            (false, updates)
        } else if stalled {
            (false, delay)
        } else {
            (true, 0.0)
        }
    }

    /// Full per-trial evaluation including the stall-counter model.
    pub fn eval_trial(
        &self,
        prep: &PreparedProbe,
        sibling: &SiblingState,
        noise_draw: Option<f64>,
    ) -> TrialOutcome {
        let mut stalls: BTreeMap<QueueId, f64> =
            self.config.queues().map(|q| (q.id, 0.0)).collect();
        let (reordered, bingo_updates) =
            self.eval_into(prep, sibling, noise_draw, Some(&mut stalls));
        TrialOutcome {
            reordered,
            bingo_updates,
            stalls,
        }
    }

    /// Run a probe for `trials` repetitions and aggregate.
    pub fn run_probe(
        &self,
        program: &ThreadProgram,
        sibling: &SiblingLoad,
        trials: u32,
        seed: u64,
    ) -> Result<ProbeResult> {
        if trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        let prep = self.prepare(program)?;
        let sib = self.prepare_sibling(sibling)?;
        let mut rng = rng::stream_rng(seed, &[0x5150, u64::from(prep.k)]);
        let noisy = self.params.noise_stall_prob > 0.0;

        let mut scratch: BTreeMap<QueueId, f64> =
            self.config.queues().map(|q| (q.id, 0.0)).collect();
        let mut stall_sums = scratch.clone();
        let mut reordered_count = 0u32;
        let mut updates_sum = 0.0;
        for _ in 0..trials {
            let draw = if noisy { Some(rng.gen::<f64>()) } else { None };
            let (reordered, updates) = self.eval_into(&prep, &sib, draw, Some(&mut scratch));
            reordered_count += u32::from(reordered);
            updates_sum += updates;
            for (q, v) in &scratch {
                if *v > 0.0 {
                    *stall_sums.get_mut(q).unwrap() += v;
                }
            }
        }
        let n = f64::from(trials);
        for v in stall_sums.values_mut() {
            *v /= n;
        }
        Ok(ProbeResult {
            bingo_updates: updates_sum / n,
            reordered: reordered_count * 2 > trials,
            queue_stall_cycles: stall_sums,
            trials,
        })
    }

    /// Per-trial outcomes, in trial order.
    pub fn run_probe_trials(
        &self,
        program: &ThreadProgram,
        sibling: &SiblingLoad,
        trials: u32,
        seed: u64,
    ) -> Result<Vec<TrialOutcome>> {
        if trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        let prep = self.prepare(program)?;
        let sib = self.prepare_sibling(sibling)?;
        let mut rng = rng::stream_rng(seed, &[0x5150, u64::from(prep.k)]);
        let noisy = self.params.noise_stall_prob > 0.0;
        let mut out = Vec::with_capacity(trials as usize);
        for _ in 0..trials {
            let draw = if noisy { Some(rng.gen::<f64>()) } else { None };
            out.push(self.eval_trial(&prep, &sib, draw));
        }
        Ok(out)
    }
}

/// Place `total` uops into `pool` one at a time, always into the queue with
/// the lowest current fill (base occupancy plus what was placed so far),
/// breaking ties in pool order.
fn distribute(
    total: u32,
    pool: &[QueueId],
    base: &BTreeMap<QueueId, u32>,
) -> BTreeMap<QueueId, u32> {
    let mut placed: BTreeMap<QueueId, u32> = pool.iter().map(|&q| (q, 0)).collect();
    if pool.is_empty() {
        return placed;
    }
    if pool.len() == 1 {
        placed.insert(pool[0], total);
        return placed;
    }
    let mut fill: Vec<(QueueId, u32)> = pool
        .iter()
        .map(|&q| (q, base.get(&q).copied().unwrap_or(0)))
        .collect();
    for _ in 0..total {
        let (idx, _) = fill
            .iter()
            .enumerate()
            .min_by_key(|(i, (_, f))| (*f, *i))
            .unwrap();
        fill[idx].1 += 1;
        *placed.get_mut(&fill[idx].0).unwrap() += 1;
    }
    placed
}

/// Run one contention measurement with default engine parameters.
pub fn run_probe(
    config: &MachineConfig,
    program: &ThreadProgram,
    sibling: &SiblingLoad,
    trials: u32,
    seed: u64,
) -> Result<ProbeResult> {
    Engine::new(config).run_probe(program, sibling, trials, seed)
}

/// Queue capacity available to one thread: the full capacity, less the
/// watermark reserve while the sibling thread is busy.
pub fn effective_capacity(
    config: &MachineConfig,
    queue: QueueId,
    sibling_busy: bool,
) -> Result<u32> {
    let spec = config.queue(queue).ok_or(Error::UnknownQueue(queue))?;
    let reserve = if sibling_busy {
        config.watermark_reserve
    } else {
        0
    };
    Ok(spec.capacity.saturating_sub(reserve))
}

/// Stall-counter profile of a priming sweep over `k_range`.
pub fn run_counter_sweep(
    config: &MachineConfig,
    mnemonic: &str,
    k_range: impl IntoIterator<Item = u32>,
    sibling: &SiblingLoad,
) -> Result<Vec<(u32, BTreeMap<QueueId, f64>)>> {
    let engine = Engine::new(config);
    let sib = engine.prepare_sibling(sibling)?;
    let mut out = Vec::new();
    for k in k_range {
        let program = ThreadProgram::standard(config, mnemonic, k)?.with_probe(Probe::Counters);
        let prep = engine.prepare(&program)?;
        let outcome = engine.eval_trial(&prep, &sib, None);
        out.push((k, outcome.stalls));
    }
    Ok(out)
}

/// One row of the per-trial trace dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: u32,
    pub k: u32,
    pub fillers: u32,
    pub outcome: TrialOutcome,
}

/// Fixed column order of the trace CSV. Queues a machine lacks read 0.
pub const TRACE_CSV_HEADER: &str =
    "trial,k,fillers,reordered,bingo_updates,int0_stall,int1_stall,int2_stall,int3_stall,fp0_stall,fp1_stall";

/// Per-trial trace CSV (see [`TRACE_CSV_HEADER`] for the column order).
pub fn trace_to_csv(rows: &[TrialRow]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    let all = [
        QueueId::Int0,
        QueueId::Int1,
        QueueId::Int2,
        QueueId::Int3,
        QueueId::Fp0,
        QueueId::Fp1,
    ];
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            row.trial, row.k, row.fillers, row.outcome.reordered, row.outcome.bingo_updates
        ));
        for q in all {
            let v = row.outcome.stalls.get(&q).copied().unwrap_or(0.0);
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uarch::{load_machine_config, Machine};

    fn zen3() -> MachineConfig {
        load_machine_config(Machine::Zen3).unwrap()
    }

    fn bingo_reordered(config: &MachineConfig, mnemonic: &str, k: u32) -> bool {
        let program = ThreadProgram::standard(config, mnemonic, k).unwrap();
        run_probe(config, &program, &SiblingLoad::Idle, 3, 1)
            .unwrap()
            .reordered
    }

    #[test]
    fn imul_fills_to_the_documented_capacity() {
        let cfg = zen3();
        assert!(bingo_reordered(&cfg, "imul", 24));
        assert!(!bingo_reordered(&cfg, "imul", 25));
        let zen2 = load_machine_config(Machine::Zen2).unwrap();
        assert!(bingo_reordered(&zen2, "imul", 16));
        assert!(!bingo_reordered(&zen2, "imul", 17));
    }

    #[test]
    fn watermark_reduces_capacity_under_a_busy_sibling() {
        let cfg = zen3();
        let fits = |k| {
            let program = ThreadProgram::standard(&cfg, "imul", k).unwrap();
            run_probe(&cfg, &program, &SiblingLoad::BusyLoop, 1, 0)
                .unwrap()
                .reordered
        };
        assert!(fits(20));
        assert!(!fits(21));
        assert_eq!(effective_capacity(&cfg, QueueId::Int1, true).unwrap(), 20);
        assert_eq!(effective_capacity(&cfg, QueueId::Int1, false).unwrap(), 24);
        let zen2 = load_machine_config(Machine::Zen2).unwrap();
        assert_eq!(effective_capacity(&zen2, QueueId::Int1, true).unwrap(), 16);
    }

    #[test]
    fn unknown_queue_is_rejected() {
        let zen2 = load_machine_config(Machine::Zen2).unwrap();
        assert!(matches!(
            effective_capacity(&zen2, QueueId::Fp1, false),
            Err(Error::UnknownQueue(QueueId::Fp1))
        ));
    }

    #[test]
    fn nothing_enqueued_always_reorders() {
        let cfg = zen3();
        let program = ThreadProgram::standard(&cfg, "imul", 0).unwrap();
        let res = run_probe(&cfg, &program, &SiblingLoad::Idle, 5, 7).unwrap();
        assert!(res.reordered);
        assert_eq!(res.bingo_updates, 0.0);
    }

    #[test]
    fn spurious_stall_window_matches_the_budget_table() {
        let cfg = zen3();
        let case = |k: u32, fillers: u32| {
            let program = ThreadProgram::standard(&cfg, "imul", k)
                .unwrap()
                .with_fillers(fillers);
            run_probe(&cfg, &program, &SiblingLoad::Idle, 1, 0)
                .unwrap()
                .reordered
        };
        for fillers in 0..=30 {
            assert!(case(22, fillers), "22 imul, {fillers} fillers");
        }
        assert!(case(23, 4));
        assert!(!case(23, 5));
        assert!(case(24, 3));
        assert!(!case(24, 4));
    }

    #[test]
    fn multi_uop_priming_consumes_the_window_on_its_own() {
        let cfg = zen3();
        assert!(bingo_reordered(&cfg, "stosb", 22));
        assert!(!bingo_reordered(&cfg, "stosb", 23));
        assert!(bingo_reordered(&cfg, "lodsb", 22));
        assert!(!bingo_reordered(&cfg, "lodsb", 23));
        // Queue-free overhead does not consume the window.
        assert!(bingo_reordered(&cfg, "idiv", 23));
        assert!(!bingo_reordered(&cfg, "idiv", 24));
    }

    #[test]
    fn memory_ordering_rules() {
        let cfg = zen3();
        let zen2 = load_machine_config(Machine::Zen2).unwrap();
        for (config, expected) in [(&cfg, 443.839), (&zen2, 198.395)] {
            let flushed = ThreadProgram::standard(config, "imul.mem", 1)
                .unwrap()
                .with_flushed_operand(true);
            let res = run_probe(config, &flushed, &SiblingLoad::Idle, 1, 0).unwrap();
            assert!(!res.reordered);
            assert_eq!(res.bingo_updates, expected);

            let empty = ThreadProgram::standard(config, "imul.mem", 0)
                .unwrap()
                .with_flushed_operand(true);
            let res = run_probe(config, &empty, &SiblingLoad::Idle, 1, 0).unwrap();
            assert!(res.reordered, "k=0 leaves nothing to wait for");
        }

        // Cached operand, no flush: identical to the register variant.
        for k in [1, 10, 22, 23, 24, 25] {
            let mem = ThreadProgram::standard(&cfg, "imul.mem", k).unwrap();
            let reg = ThreadProgram::standard(&cfg, "imul", k).unwrap();
            let a = run_probe(&cfg, &mem, &SiblingLoad::Idle, 1, 0).unwrap();
            let b = run_probe(&cfg, &reg, &SiblingLoad::Idle, 1, 0).unwrap();
            assert_eq!(a.reordered, b.reordered, "k={k}");
            assert_eq!(a.bingo_updates, b.bingo_updates, "k={k}");
        }

        // Address-dependent operand: delayed for any k >= 1.
        let dep = ThreadProgram::standard(&cfg, "imul.addrdep", 1).unwrap();
        assert!(
            !run_probe(&cfg, &dep, &SiblingLoad::Idle, 1, 0)
                .unwrap()
                .reordered
        );

        // A flushed operand on top of a queue overflow still reads at least
        // the miss delay.
        let both = ThreadProgram::standard(&cfg, "imul.mem", 30)
            .unwrap()
            .with_flushed_operand(true);
        let res = run_probe(&cfg, &both, &SiblingLoad::Idle, 1, 0).unwrap();
        assert!(!res.reordered);
        assert!(res.bingo_updates >= cfg.mem_miss_updates);
    }

    #[test]
    fn counter_sweep_shows_the_post_read_stall() {
        let cfg = zen3();
        let rows = run_counter_sweep(&cfg, "imul", 1..=26, &SiblingLoad::Idle).unwrap();
        let stall_at = |k: u32| {
            rows.iter()
                .find(|(kk, _)| *kk == k)
                .map(|(_, s)| s.get(&QueueId::Int1).copied().unwrap_or(0.0))
                .unwrap()
        };
        assert_eq!(stall_at(10), 0.0);
        assert_eq!(stall_at(22), 0.0);
        assert!(
            stall_at(23) > 0.0,
            "stall fires even though the read reorders"
        );
        assert!(stall_at(24) > stall_at(23) - 1e-9);
        assert!(stall_at(25) > stall_at(24));
        // Other queues stay silent.
        for (_, stalls) in &rows {
            for q in [QueueId::Int0, QueueId::Int2, QueueId::Int3] {
                assert_eq!(stalls.get(&q).copied().unwrap_or(0.0), 0.0);
            }
        }
    }

    #[test]
    fn flexible_rotate_marks_both_queues() {
        let cfg = zen3();
        let rows = run_counter_sweep(&cfg, "rol", [30], &SiblingLoad::Idle).unwrap();
        let (_, stalls) = &rows[0];
        assert!(stalls[&QueueId::Int1] > 0.0);
        assert!(stalls[&QueueId::Int2] > 0.0);
        assert_eq!(stalls[&QueueId::Int0], 0.0);
    }

    #[test]
    fn determinism_across_runs() {
        let cfg = zen3();
        let program = ThreadProgram::standard(&cfg, "imul", 23)
            .unwrap()
            .with_fillers(2);
        let engine = Engine::new(&cfg).with_params(EngineParams {
            bingo_update_rate: 1.0,
            noise_stall_prob: 0.25,
        });
        let a = engine
            .run_probe(&program, &SiblingLoad::BusyLoop, 64, 99)
            .unwrap();
        let b = engine
            .run_probe(&program, &SiblingLoad::BusyLoop, 64, 99)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sibling_program_occupancy_shrinks_the_queue() {
        let cfg = zen3();
        let sender = ThreadProgram::standard(&cfg, "imul", 20)
            .unwrap()
            .with_probe(Probe::None);
        let receiver = ThreadProgram::standard(&cfg, "imul", 20).unwrap();
        let idle_side = run_probe(&cfg, &receiver, &SiblingLoad::BusyLoop, 1, 0).unwrap();
        assert!(idle_side.reordered, "20 fits under the watermark alone");
        let busy_side = run_probe(&cfg, &receiver, &SiblingLoad::Program(sender), 1, 0).unwrap();
        assert!(!busy_side.reordered, "sibling occupancy leaves no room");
    }

    #[test]
    fn timer_probe_needs_calibration() {
        let zen2 = load_machine_config(Machine::Zen2).unwrap();
        let program = ThreadProgram::standard(&zen2, "imul", 10)
            .unwrap()
            .with_probe(Probe::Timer);
        assert!(matches!(
            run_probe(&zen2, &program, &SiblingLoad::Idle, 1, 0),
            Err(Error::TimerUnavailable(Machine::Zen2))
        ));
    }

    #[test]
    fn trace_csv_has_the_documented_columns() {
        let cfg = zen3();
        let program = ThreadProgram::standard(&cfg, "imul", 25).unwrap();
        let outcomes = Engine::new(&cfg)
            .run_probe_trials(&program, &SiblingLoad::Idle, 2, 3)
            .unwrap();
        let rows: Vec<TrialRow> = outcomes
            .into_iter()
            .enumerate()
            .map(|(i, outcome)| TrialRow {
                trial: i as u32,
                k: 25,
                fillers: 0,
                outcome,
            })
            .collect();
        let csv = trace_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_CSV_HEADER);
        assert_eq!(lines.count(), 2);
    }
}
