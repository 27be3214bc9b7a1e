//! Phase-2 behavioral classification of priming candidates.
//!
//! Given a candidate instruction, sweep the priming count against the engine
//! to find the largest `k` that still reorders, watch which stall counters
//! rise, and derive the targeted / single-uop / single-queue verdicts purely
//! from behavior. The stored table flags serve as the reference the verdicts
//! are validated against.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{run_counter_sweep, Engine, Probe, SiblingLoad, ThreadProgram};
use crate::uarch::{lookup_instruction, InstructionTable, MachineConfig, QueueId};

/// Sweep measurement method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    Bingo,
    Timer,
}

/// Behavioral verdicts on the three measurable priming requirements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub targeted: bool,
    pub single_uop: bool,
    pub single_queue: bool,
}

/// Classification of one candidate instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub mnemonic: String,
    /// Largest repetition count that still reorders; `None` when the
    /// instruction never causes contention within the sweep bound.
    pub observed_k: Option<u32>,
    /// Queues whose stall counters rise across the sweep.
    pub affected_queues: BTreeSet<QueueId>,
    pub verdicts: Verdicts,
    /// Estimated dependent uops per instance on the affected queues.
    pub uops_per_target: u32,
}

/// Upper bound for capacity sweeps: everything the machine can buffer, plus
/// headroom so the per-instruction offsets cannot push the limit out of range.
fn sweep_bound(config: &MachineConfig) -> u32 {
    let queues: u32 = config.queues().map(|q| q.capacity).sum();
    queues + config.fp_nsq_capacity + 8
}

/// Largest `k` for which the probe still reorders (bingo) or sees no stall
/// penalty (timer), with a chosen sibling load. `None` means no contention
/// was observed anywhere in the sweep range.
pub fn capacity_sweep_with(
    config: &MachineConfig,
    mnemonic: &str,
    method: SweepMethod,
    sibling: &SiblingLoad,
) -> Result<Option<u32>> {
    let probe = match method {
        SweepMethod::Bingo => Probe::Bingo,
        SweepMethod::Timer => Probe::Timer,
    };
    let engine = Engine::new(config);
    let sib = engine.prepare_sibling(sibling)?;
    for k in 1..=sweep_bound(config) {
        let program = ThreadProgram::standard(config, mnemonic, k)?.with_probe(probe);
        let prep = engine.prepare(&program)?;
        let (reordered, _) = engine.eval_delay(&prep, &sib);
        if !reordered {
            return Ok(Some(k - 1));
        }
    }
    Ok(None)
}

/// Sibling-idle capacity sweep.
pub fn capacity_sweep(
    config: &MachineConfig,
    mnemonic: &str,
    method: SweepMethod,
) -> Result<Option<u32>> {
    capacity_sweep_with(config, mnemonic, method, &SiblingLoad::Idle)
}

/// Classify one phase-1 candidate from sweep behavior alone.
pub fn classify_candidate(config: &MachineConfig, mnemonic: &str) -> Result<Classification> {
    let spec = lookup_instruction(config, mnemonic)?;
    if !(spec.flags.delayable && spec.flags.non_serializing && spec.flags.unprivileged) {
        return Err(Error::NotACandidate(mnemonic.to_string()));
    }

    let observed_k = capacity_sweep(config, mnemonic, SweepMethod::Bingo)?;

    let bound = sweep_bound(config);
    let profile = run_counter_sweep(config, mnemonic, 1..=bound, &SiblingLoad::Idle)?;
    let mut affected_queues = BTreeSet::new();
    for (_, stalls) in &profile {
        for (&q, &cycles) in stalls {
            if cycles > 0.0 {
                affected_queues.insert(q);
            }
        }
    }

    let fp_domain = !affected_queues.is_empty() && affected_queues.iter().all(|q| q.is_fp());
    let single_capacity = if fp_domain {
        config.fp_queues[0].capacity
    } else {
        config.int_queues[0].capacity
    };
    let set_capacity: u32 = affected_queues
        .iter()
        .filter_map(|&q| config.queue(q).map(|s| s.capacity))
        .sum::<u32>()
        + if fp_domain { config.fp_nsq_capacity } else { 0 };

    let targeted =
        affected_queues.len() <= 1 && matches!(observed_k, Some(k) if k <= single_capacity);
    let single_queue = affected_queues.len() <= 1;
    let uops_per_target = match observed_k {
        Some(k) if k > 0 && set_capacity > 0 => set_capacity / k,
        _ => 0,
    };
    let single_uop = uops_per_target <= 1;

    Ok(Classification {
        mnemonic: mnemonic.to_string(),
        observed_k,
        affected_queues,
        verdicts: Verdicts {
            targeted,
            single_uop,
            single_queue,
        },
        uops_per_target,
    })
}

/// Classify every phase-1 candidate of the machine's table, ordered by
/// decode size (fewer uops first) and then mnemonic.
pub fn classification_report(config: &MachineConfig) -> Result<Vec<Classification>> {
    let rows = InstructionTable::global().for_machine(config.name);
    let mut candidates = crate::uarch::phase1_filter(rows.iter().copied());
    candidates.sort_by_key(|s| (s.total_uops, s.mnemonic.clone()));
    candidates
        .iter()
        .map(|s| classify_candidate(config, &s.mnemonic))
        .collect()
}

fn queue_set_label(queues: &BTreeSet<QueueId>) -> String {
    if queues.is_empty() {
        "none".to_string()
    } else {
        queues
            .iter()
            .map(|q| q.to_string())
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Classification report as CSV.
pub fn report_to_csv(rows: &[Classification]) -> String {
    let mut out = String::from(
        "mnemonic,observed_k,queues,targeted,single_uop,single_queue,uops_per_target\n",
    );
    for c in rows {
        let k = c
            .observed_k
            .map(|k| k.to_string())
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.mnemonic,
            k,
            queue_set_label(&c.affected_queues),
            c.verdicts.targeted,
            c.verdicts.single_uop,
            c.verdicts.single_queue,
            c.uops_per_target
        ));
    }
    out
}

/// Classification report as an aligned text table.
pub fn report_to_text(rows: &[Classification]) -> String {
    let header = [
        "instruction",
        "k",
        "scheduler",
        "targeted",
        "single-uop",
        "single-queue",
        "uops/target",
    ];
    let mut table: Vec<[String; 7]> = vec![header.map(String::from)];
    for c in rows {
        table.push([
            c.mnemonic.clone(),
            c.observed_k
                .map(|k| k.to_string())
                .unwrap_or_else(|| "-".to_string()),
            queue_set_label(&c.affected_queues),
            c.verdicts.targeted.to_string(),
            c.verdicts.single_uop.to_string(),
            c.verdicts.single_queue.to_string(),
            c.uops_per_target.to_string(),
        ]);
    }
    let mut widths = [0usize; 7];
    for row in &table {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &table {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            line.push_str(&format!("{:<width$}", cell, width = widths[i] + 2));
        }
        out.push_str(line.trim_end());
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

    #[test]
    fn bingo_sweep_finds_the_documented_capacities() {
        let cfg = zen3();
        assert_eq!(
            capacity_sweep(&cfg, "imul", SweepMethod::Bingo).unwrap(),
            Some(24)
        );
        assert_eq!(
            capacity_sweep(&cfg, "stosb", SweepMethod::Bingo).unwrap(),
            Some(22)
        );
        assert_eq!(
            capacity_sweep(&cfg, "lodsb", SweepMethod::Bingo).unwrap(),
            Some(22)
        );
        assert_eq!(
            capacity_sweep(&cfg, "add", SweepMethod::Bingo).unwrap(),
            Some(90)
        );
        assert_eq!(
            capacity_sweep(&cfg, "vaddsd", SweepMethod::Bingo).unwrap(),
            Some(127)
        );
        assert_eq!(
            capacity_sweep(&cfg, "bsf", SweepMethod::Bingo).unwrap(),
            Some(7)
        );
    }

    #[test]
    fn timer_sweep_loses_two_uops_on_zen3() {
        let cfg = zen3();
        assert_eq!(
            capacity_sweep(&cfg, "imul", SweepMethod::Timer).unwrap(),
            Some(22)
        );
    }

    #[test]
    fn zen2_add_uses_all_four_queues_without_deficit() {
        let zen2 = load_machine_config(Machine::Zen2).unwrap();
        assert_eq!(
            capacity_sweep(&zen2, "add", SweepMethod::Bingo).unwrap(),
            Some(64)
        );
        assert_eq!(
            capacity_sweep(&zen2, "imul", SweepMethod::Bingo).unwrap(),
            Some(16)
        );
    }

    #[test]
    fn classify_bsf_as_multi_uop() {
        let cfg = zen3();
        let c = classify_candidate(&cfg, "bsf").unwrap();
        assert_eq!(c.observed_k, Some(7));
        assert!(!c.verdicts.single_uop);
        assert!(c.verdicts.targeted);
        assert_eq!(c.uops_per_target, 3);
        assert_eq!(
            c.affected_queues.iter().copied().collect::<Vec<_>>(),
            vec![QueueId::Int3]
        );
    }

    #[test]
    fn classify_rol_as_dual_queue() {
        let cfg = zen3();
        let c = classify_candidate(&cfg, "rol").unwrap();
        assert_eq!(c.observed_k, Some(46));
        assert!(!c.verdicts.targeted);
        assert!(!c.verdicts.single_queue);
        let queues: Vec<QueueId> = c.affected_queues.iter().copied().collect();
        assert_eq!(queues, vec![QueueId::Int1, QueueId::Int2]);
    }

    #[test]
    fn classify_stosb_as_clean_priming_instruction() {
        let cfg = zen3();
        let c = classify_candidate(&cfg, "stosb").unwrap();
        assert_eq!(c.observed_k, Some(22));
        assert!(c.verdicts.targeted);
        assert!(c.verdicts.single_uop);
        assert!(c.verdicts.single_queue);
        assert_eq!(
            c.affected_queues.iter().copied().collect::<Vec<_>>(),
            vec![QueueId::Int2]
        );
    }

    #[test]
    fn non_candidates_are_rejected() {
        let cfg = zen3();
        assert!(matches!(
            classify_candidate(&cfg, "xor.zero"),
            Err(Error::NotACandidate(_))
        ));
    }

    #[test]
    fn report_is_ordered_by_decode_size() {
        let cfg = zen3();
        let report = classification_report(&cfg).unwrap();
        let sizes: Vec<u32> = report
            .iter()
            .map(|c| lookup_instruction(&cfg, &c.mnemonic).unwrap().total_uops)
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        let csv = report_to_csv(&report);
        assert!(csv.starts_with("mnemonic,observed_k,queues"));
        let text = report_to_text(&report);
        assert!(text.lines().count() == report.len() + 1);
    }
}
