//! Machine models and the instruction table.
//!
//! Both are shipped as TOML data files (`data/machines.toml`,
//! `data/instructions.toml`) and embedded into the crate. A machine model
//! describes the scheduler-queue topology plus the calibration constants the
//! simulator needs; an instruction entry describes uop decomposition, queue
//! placement and the six priming-requirement flags. Everything here is
//! immutable after load and safe to share across concurrent runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MACHINES_TOML: &str = include_str!("../data/machines.toml");
const INSTRUCTIONS_TOML: &str = include_str!("../data/instructions.toml");

/// Supported microarchitectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Machine {
    Zen2,
    Zen3,
    Zen4,
}

impl Machine {
    pub const ALL: [Machine; 3] = [Machine::Zen2, Machine::Zen3, Machine::Zen4];
}

impl fmt::Display for Machine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Machine::Zen2 => "zen2",
            Machine::Zen3 => "zen3",
            Machine::Zen4 => "zen4",
        };
        f.write_str(s)
    }
}

impl FromStr for Machine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zen2" => Ok(Machine::Zen2),
            "zen3" => Ok(Machine::Zen3),
            "zen4" => Ok(Machine::Zen4),
            _ => Err(Error::UnknownMachine(s.to_string())),
        }
    }
}

/// Scheduler queue identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueId {
    Int0,
    Int1,
    Int2,
    Int3,
    Fp0,
    Fp1,
}

impl QueueId {
    pub const INT: [QueueId; 4] = [QueueId::Int0, QueueId::Int1, QueueId::Int2, QueueId::Int3];

    pub fn is_int(self) -> bool {
        matches!(
            self,
            QueueId::Int0 | QueueId::Int1 | QueueId::Int2 | QueueId::Int3
        )
    }

    pub fn is_fp(self) -> bool {
        !self.is_int()
    }
}

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QueueId::Int0 => "int0",
            QueueId::Int1 => "int1",
            QueueId::Int2 => "int2",
            QueueId::Int3 => "int3",
            QueueId::Fp0 => "fp0",
            QueueId::Fp1 => "fp1",
        };
        f.write_str(s)
    }
}

/// Execution unit tags attachable to a scheduler queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecUnit {
    Alu0,
    Alu1,
    Alu2,
    Alu3,
    Agu0,
    Agu1,
    Agu2,
    Bru0,
    Fpu0,
    Fpu1,
    Fpu2,
    Fpu3,
    Fpu4,
    Fpu5,
}

/// One scheduler queue: identity, capacity and attached execution units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub id: QueueId,
    pub capacity: u32,
    pub units: BTreeSet<ExecUnit>,
}

/// One spurious-stall budget entry: at this queue occupancy, at most
/// `max_extra_uops` additional uops may dispatch before the back end stalls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpuriousBudget {
    pub occupancy: u32,
    pub max_extra_uops: u32,
}

/// Full machine model for one microarchitecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub name: Machine,
    pub int_queues: Vec<QueueSpec>,
    pub fp_queues: Vec<QueueSpec>,
    pub fp_nsq_capacity: u32,
    /// False when the FP side is an uncalibrated placeholder.
    pub fp_authoritative: bool,
    pub watermark_reserve: u32,
    pub fpu_dispatch_width: u32,
    pub spurious_budget: Vec<SpuriousBudget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timer_read_cycles: Option<u32>,
    pub mem_miss_updates: f64,
    pub multi_queue_offset: u32,
}

impl MachineConfig {
    pub fn queue(&self, id: QueueId) -> Option<&QueueSpec> {
        self.int_queues
            .iter()
            .chain(self.fp_queues.iter())
            .find(|q| q.id == id)
    }

    pub fn queues(&self) -> impl Iterator<Item = &QueueSpec> {
        self.int_queues.iter().chain(self.fp_queues.iter())
    }

    /// Spurious-stall budget for a given queue occupancy, if one applies.
    pub fn spurious_budget_for(&self, occupancy: u32) -> Option<u32> {
        self.spurious_budget
            .iter()
            .find(|b| b.occupancy == occupancy)
            .map(|b| b.max_extra_uops)
    }

    pub fn min_spurious_occupancy(&self) -> Option<u32> {
        self.spurious_budget.iter().map(|b| b.occupancy).min()
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidMachineData(msg));
        if self.int_queues.len() != 4 {
            return fail(format!("{}: expected 4 integer queues", self.name));
        }
        let mut seen = BTreeSet::new();
        for q in self.queues() {
            if q.capacity == 0 {
                return fail(format!("{}: queue {} has zero capacity", self.name, q.id));
            }
            if q.units.is_empty() {
                return fail(format!("{}: queue {} has no units", self.name, q.id));
            }
            if !seen.insert(q.id) {
                return fail(format!("{}: duplicate queue id {}", self.name, q.id));
            }
        }
        let min_cap = self.queues().map(|q| q.capacity).min().unwrap();
        if self.watermark_reserve >= min_cap {
            return fail(format!(
                "{}: watermark reserve {} not below min capacity {}",
                self.name, self.watermark_reserve, min_cap
            ));
        }
        let int_cap = self.int_queues[0].capacity;
        if self.int_queues.iter().any(|q| q.capacity != int_cap) {
            return fail(format!("{}: integer queue capacities differ", self.name));
        }
        for b in &self.spurious_budget {
            if b.occupancy + 1 < int_cap || b.occupancy > int_cap {
                return fail(format!(
                    "{}: spurious budget occupancy {} outside [{}, {}]",
                    self.name,
                    b.occupancy,
                    int_cap - 1,
                    int_cap
                ));
            }
        }
        Ok(())
    }
}

/// The six priming-requirement flags. Stored in the table, not inferred, so
/// the behavioral classifier can be checked against them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimingFlags {
    pub delayable: bool,
    pub targeted: bool,
    pub single_queue: bool,
    pub single_uop: bool,
    pub non_serializing: bool,
    pub unprivileged: bool,
}

/// Memory operand kind of an instruction variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemOperand {
    None,
    Cached,
    Uncached,
    AddressDependent,
}

/// Queue usage of a group of uops. A singleton queue set is a targeted slot;
/// a larger set lets the dispatcher pick any member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UopPlacement {
    pub queues: BTreeSet<QueueId>,
    pub uops: u32,
}

/// One instruction table row.
///
/// `placements[0]` is the dependent slot: its uops inherit the input
/// dependency and accumulate in the listed queues while the delay chain is
/// unresolved. Remaining placements are transient (issue independently,
/// drain immediately, but consume dispatch slots). Uops not covered by any
/// placement are queue-free overhead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub mnemonic: String,
    /// Machines this row applies to; `None` means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<BTreeSet<Machine>>,
    pub total_uops: u32,
    pub latency_cycles: u32,
    pub placements: Vec<UopPlacement>,
    pub flags: PrimingFlags,
    pub mem_operand: MemOperand,
    pub serializing_side_effect: bool,
    /// Per-machine observed capacity deficit (calibration, not mechanism).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub capacity_offset: BTreeMap<Machine, u32>,
}

impl InstructionSpec {
    pub fn applies_to(&self, machine: Machine) -> bool {
        self.arch.as_ref().is_none_or(|set| set.contains(&machine))
    }

    /// The dependent placement slot, if the instruction occupies a queue at all.
    pub fn dependent_placement(&self) -> Option<&UopPlacement> {
        self.placements.first()
    }

    /// Queue the dependent uops are pinned to, for targeted instructions.
    pub fn targeted_queue(&self) -> Option<QueueId> {
        let p = self.dependent_placement()?;
        if p.queues.len() == 1 {
            p.queues.iter().next().copied()
        } else {
            None
        }
    }

    /// Transient uops per instance that land in integer queues. These keep
    /// the integer dispatch window busy after the last dependent uop.
    pub fn transient_int_uops(&self) -> u32 {
        self.placements
            .iter()
            .skip(1)
            .filter(|p| p.queues.iter().all(|q| q.is_int()))
            .map(|p| p.uops)
            .sum()
    }

    pub fn capacity_offset_for(&self, machine: Machine) -> u32 {
        self.capacity_offset.get(&machine).copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInstructionData(msg));
        let placed: u32 = self.placements.iter().map(|p| p.uops).sum();
        if placed > self.total_uops {
            return fail(format!(
                "{}: placements cover {} uops but total_uops is {}",
                self.mnemonic, placed, self.total_uops
            ));
        }
        for p in &self.placements {
            if p.queues.is_empty() || p.uops == 0 {
                return fail(format!("{}: empty placement entry", self.mnemonic));
            }
        }
        if self.flags.targeted {
            let singletons = self
                .placements
                .iter()
                .filter(|p| p.queues.len() == 1)
                .count();
            if singletons != 1 {
                return fail(format!(
                    "{}: targeted but {} singleton placements",
                    self.mnemonic, singletons
                ));
            }
            if self.targeted_queue().is_none() {
                return fail(format!(
                    "{}: targeted but placements[0] is not a singleton",
                    self.mnemonic
                ));
            }
            if self.flags.single_uop && self.dependent_placement().unwrap().uops > 1 {
                return fail(format!(
                    "{}: single_uop but multiple uops land in the targeted queue",
                    self.mnemonic
                ));
            }
        }
        if self.serializing_side_effect && self.flags.non_serializing {
            return fail(format!(
                "{}: serializing side effect contradicts non_serializing",
                self.mnemonic
            ));
        }
        Ok(())
    }
}

/// The closed instruction universe, with per-machine row resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionTable {
    #[serde(rename = "instruction")]
    rows: Vec<InstructionSpec>,
    #[serde(default)]
    schema_version: u32,
}

impl InstructionTable {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: InstructionTable = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        for row in &table.rows {
            row.validate()?;
        }
        Ok(table)
    }

    /// The embedded default table.
    pub fn global() -> &'static InstructionTable {
        static TABLE: OnceLock<InstructionTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            InstructionTable::from_toml_str(INSTRUCTIONS_TOML)
                .expect("embedded instruction table is valid")
        })
    }

    pub fn lookup(&self, machine: Machine, mnemonic: &str) -> Result<&InstructionSpec> {
        self.rows
            .iter()
            .find(|r| r.mnemonic == mnemonic && r.applies_to(machine))
            .ok_or_else(|| Error::UnknownInstruction {
                mnemonic: mnemonic.to_string(),
                machine,
            })
    }

    /// All rows that apply to `machine`, in table order.
    pub fn for_machine(&self, machine: Machine) -> Vec<&InstructionSpec> {
        self.rows.iter().filter(|r| r.applies_to(machine)).collect()
    }

    pub fn rows(&self) -> &[InstructionSpec] {
        &self.rows
    }
}

fn machine_set() -> &'static BTreeMap<Machine, MachineConfig> {
    static SET: OnceLock<BTreeMap<Machine, MachineConfig>> = OnceLock::new();
    SET.get_or_init(|| {
        #[derive(Deserialize)]
        struct File {
            #[serde(rename = "machine")]
            machines: Vec<MachineConfig>,
        }
        let file: File = toml::from_str(MACHINES_TOML).expect("embedded machine data parses");
        file.machines
            .into_iter()
            .map(|m| {
                m.validate().expect("embedded machine data is valid");
                (m.name, m)
            })
            .collect()
    })
}

/// Load the validated model for one microarchitecture.
pub fn load_machine_config(name: Machine) -> Result<MachineConfig> {
    machine_set()
        .get(&name)
        .cloned()
        .ok_or_else(|| Error::UnknownMachine(name.to_string()))
}

/// Parse a machine model from TOML, e.g. a serialized round trip.
pub fn machine_config_from_toml(s: &str) -> Result<MachineConfig> {
    let cfg: MachineConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn machine_config_to_toml(cfg: &MachineConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Parse(e.to_string()))
}

/// Look up `mnemonic` in the shipped table, resolved for `config`'s machine.
pub fn lookup_instruction<'a>(
    config: &MachineConfig,
    mnemonic: &str,
) -> Result<&'a InstructionSpec> {
    InstructionTable::global().lookup(config.name, mnemonic)
}

/// Phase-1 candidate selection: keep instructions that are delayable,
/// non-serializing and unprivileged. Order is preserved.
pub fn phase1_filter<'a, I>(table: I) -> Vec<&'a InstructionSpec>
where
    I: IntoIterator<Item = &'a InstructionSpec>,
{
    table
        .into_iter()
        .filter(|spec| {
            spec.flags.delayable && spec.flags.non_serializing && spec.flags.unprivileged
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zen3_topology_and_calibration() {
        let cfg = load_machine_config(Machine::Zen3).unwrap();
        assert_eq!(cfg.int_queues.len(), 4);
        assert!(cfg.int_queues.iter().all(|q| q.capacity == 24));
        assert_eq!(cfg.watermark_reserve, 4);
        assert_eq!(cfg.timer_read_cycles, Some(17));
        assert_eq!(cfg.mem_miss_updates, 443.839);
        assert_eq!(cfg.fp_nsq_capacity, 64);
        assert_eq!(cfg.fpu_dispatch_width, 6);
        assert_eq!(cfg.spurious_budget_for(23), Some(4));
        assert_eq!(cfg.spurious_budget_for(24), Some(3));
        assert_eq!(cfg.spurious_budget_for(22), None);
        assert_eq!(cfg.multi_queue_offset, 6);
    }

    #[test]
    fn zen2_topology() {
        let cfg = load_machine_config(Machine::Zen2).unwrap();
        assert!(cfg.int_queues.iter().all(|q| q.capacity == 16));
        assert_eq!(cfg.watermark_reserve, 0);
        assert_eq!(cfg.timer_read_cycles, None);
        assert_eq!(cfg.mem_miss_updates, 198.395);
        assert!(cfg.spurious_budget.is_empty());
        assert!(!cfg.fp_authoritative);
    }

    #[test]
    fn zen4_matches_zen3_shape_with_own_offsets() {
        let cfg = load_machine_config(Machine::Zen4).unwrap();
        assert!(cfg.int_queues.iter().all(|q| q.capacity == 24));
        assert_eq!(cfg.watermark_reserve, 4);
        assert_eq!(cfg.multi_queue_offset, 7);
        assert_eq!(cfg.timer_read_cycles, None);
    }

    #[test]
    fn config_round_trips_through_toml() {
        for name in Machine::ALL {
            let cfg = load_machine_config(name).unwrap();
            let text = machine_config_to_toml(&cfg).unwrap();
            let back = machine_config_from_toml(&text).unwrap();
            assert_eq!(cfg, back, "{name} round trip");
        }
    }

    #[test]
    fn lookup_resolves_per_machine_rows() {
        let zen3 = load_machine_config(Machine::Zen3).unwrap();
        let zen4 = load_machine_config(Machine::Zen4).unwrap();

        let stosb = lookup_instruction(&zen3, "stosb").unwrap();
        assert_eq!(stosb.total_uops, 3);
        assert_eq!(stosb.targeted_queue(), Some(QueueId::Int2));

        let bsf3 = lookup_instruction(&zen3, "bsf").unwrap();
        assert_eq!(bsf3.total_uops, 3);
        assert_eq!(bsf3.targeted_queue(), Some(QueueId::Int3));
        assert!(!bsf3.flags.single_uop);

        let bsf4 = lookup_instruction(&zen4, "bsf").unwrap();
        assert_eq!(bsf4.total_uops, 1);
        assert_eq!(bsf4.targeted_queue(), None);
        assert!(!bsf4.flags.targeted);
        assert_eq!(
            bsf4.dependent_placement().unwrap().queues.len(),
            4,
            "any integer queue"
        );
    }

    #[test]
    fn lookup_unknown_mnemonic_errors() {
        let zen3 = load_machine_config(Machine::Zen3).unwrap();
        assert!(matches!(
            lookup_instruction(&zen3, "fnop"),
            Err(Error::UnknownInstruction { .. })
        ));
        // stosb is only tabulated for zen3/zen4.
        let zen2 = load_machine_config(Machine::Zen2).unwrap();
        assert!(lookup_instruction(&zen2, "stosb").is_err());
    }

    #[test]
    fn phase1_keeps_imul_and_drops_serializing_and_non_delayable() {
        let zen3 = load_machine_config(Machine::Zen3).unwrap();
        let rows = InstructionTable::global().for_machine(zen3.name);
        let picked = phase1_filter(rows.iter().copied());
        let names: Vec<&str> = picked.iter().map(|s| s.mnemonic.as_str()).collect();
        assert!(names.contains(&"imul"));
        assert!(names.contains(&"stosb"));
        assert!(!names.contains(&"xor.zero"), "not delayable");
        assert!(!names.contains(&"rdpru"), "not delayable");

        // A serializing instruction is rejected even if otherwise suitable.
        let serializing = InstructionSpec {
            mnemonic: "clock.read".into(),
            arch: None,
            total_uops: 3,
            latency_cycles: 9,
            placements: vec![],
            flags: PrimingFlags {
                delayable: true,
                targeted: false,
                single_queue: true,
                single_uop: true,
                non_serializing: false,
                unprivileged: true,
            },
            mem_operand: MemOperand::None,
            serializing_side_effect: true,
            capacity_offset: BTreeMap::new(),
        };
        let list = [&serializing];
        assert!(phase1_filter(list.iter().copied()).is_empty());
        let empty: Vec<&InstructionSpec> = vec![];
        assert!(phase1_filter(empty).is_empty());
    }

    #[test]
    fn targeted_queues_exist_on_their_machines() {
        for name in Machine::ALL {
            let cfg = load_machine_config(name).unwrap();
            for spec in InstructionTable::global().for_machine(name) {
                if let Some(q) = spec.targeted_queue() {
                    assert!(
                        cfg.queue(q).is_some(),
                        "{name}: {} targets missing queue {q}",
                        spec.mnemonic
                    );
                }
            }
        }
    }

    #[test]
    fn table_rows_match_measured_scheduler_columns() {
        // Queue sets from the measurement column of the shipped table.
        let zen3 = load_machine_config(Machine::Zen3).unwrap();
        let all_int: BTreeSet<QueueId> = QueueId::INT.iter().copied().collect();
        let expect = |m: &str, queues: &[QueueId]| {
            let spec = lookup_instruction(&zen3, m).unwrap();
            let got: BTreeSet<QueueId> = spec
                .dependent_placement()
                .map(|p| p.queues.clone())
                .unwrap_or_default();
            let want: BTreeSet<QueueId> = queues.iter().copied().collect();
            assert_eq!(got, want, "{m}");
        };
        expect("idiv", &[QueueId::Int0]);
        expect("movd", &[QueueId::Int0]);
        expect("vmovd", &[QueueId::Int0]);
        expect("cvtsi2sd", &[QueueId::Int0]);
        expect("imul", &[QueueId::Int1]);
        expect("stosb", &[QueueId::Int2]);
        for m in ["lodsb", "lodsw", "lodsd", "lodsq", "bsf", "bsr"] {
            expect(m, &[QueueId::Int3]);
        }
        expect("rol", &[QueueId::Int1, QueueId::Int2]);
        expect("shr", &[QueueId::Int1, QueueId::Int2]);
        expect("add", &QueueId::INT);
        for m in ["vaddsd", "divsd", "sqrtsd"] {
            expect(m, &[QueueId::Fp0, QueueId::Fp1]);
        }
        expect("xor.zero", &[]);
        expect("mov.reg", &[]);

        let zen4 = load_machine_config(Machine::Zen4).unwrap();
        for m in ["bsf", "bsr"] {
            let spec = lookup_instruction(&zen4, m).unwrap();
            assert_eq!(
                spec.dependent_placement().unwrap().queues,
                all_int,
                "{m} zen4"
            );
        }
    }
}
