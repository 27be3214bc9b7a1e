//! Behavioral simulator of out-of-order scheduler-queue contention on AMD
//! Zen 2/3/4 back ends.
//!
//! The crate models scheduler queues, watermark partitioning under SMT,
//! spurious near-capacity stalls and memory-ordering limits, and builds the
//! measurement tooling on top: the bingo-race / timer / counter probes
//! ([`sim`]), behavioral classification of priming instructions
//! ([`priming`]), inter-keystroke timing recovery ([`keystroke`]), a
//! time-sliced covert channel ([`channel`]) and a reproducible experiment
//! harness ([`experiments`]). Machine models and the instruction table ship
//! as TOML data files ([`uarch`]).

pub mod channel;
pub mod error;
pub mod experiments;
pub mod keystroke;
pub mod priming;
pub mod rng;
pub mod sim;
pub mod uarch;

pub use error::{Error, Result};
pub use sim::{run_probe, Engine, Probe, ProbeResult, SiblingLoad, ThreadProgram};
pub use uarch::{load_machine_config, lookup_instruction, Machine, MachineConfig, QueueId};
