//! Time-sliced covert channel over the contention medium.
//!
//! The sender holds one bit per coarse-clock slice: idle for a `0`, a
//! dependent multiply chain for a `1`. Receivers on every other hardware
//! thread prime scheduler queue 1 and probe with the bingo read; the
//! receiver that happens to share a core with the sender sees the signal,
//! the one sharing with the bingo thread sees quiet, and receiver-receiver
//! pairs jam each other. Framing, placement inference, demodulation and the
//! capacity metrics close the loop.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sim::{Engine, Probe, SiblingLoad, SiblingState, ThreadProgram};

/// Channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Coarse clock resolution; one bit is held per slice.
    pub slice_ms: f64,
    pub cores: u32,
    pub smt_per_core: u32,
    pub message_bytes: usize,
    pub packets_per_message: u32,
    /// Contention-level cutoff for the bit decision.
    pub threshold: f64,
    /// Per-slice probability that an observation crosses the threshold
    /// erroneously.
    pub noise_flip_prob: f64,
    /// Dependent multiply chain length used by the sender and the receivers.
    pub sender_imul_chain: u32,
    /// Square-root chain length delaying the priming block.
    pub sender_sqrt_chain: u32,
    /// Averages at or above this level on every receiver mean the sender is
    /// co-located with the bingo thread.
    pub lost_band: f64,
    /// Re-placement attempts per packet before giving up.
    pub max_retries: u32,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            slice_ms: 1.0,
            cores: 8,
            smt_per_core: 2,
            message_bytes: 5000,
            packets_per_message: 10,
            threshold: 0.5,
            noise_flip_prob: 0.0,
            sender_imul_chain: 20,
            sender_sqrt_chain: 12,
            lost_band: 0.85,
            max_retries: 32,
        }
    }
}

impl ChannelConfig {
    /// Per-slice noise levels calibrated so an end-to-end run stays under
    /// the published error-rate bounds (1.5% / 0.7%).
    pub const CALIBRATED_NOISE_ZEN3: f64 = 0.013;
    pub const CALIBRATED_NOISE_ZEN4: f64 = 0.0055;

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if !(self.slice_ms.is_finite() && self.slice_ms > 0.0) {
            return fail("slice_ms must be positive".into());
        }
        if self.smt_per_core != 2 {
            return fail("the placement model assumes 2 SMT threads per core".into());
        }
        if self.cores * self.smt_per_core < 3 {
            return fail("need at least 3 hardware threads".into());
        }
        if self.packets_per_message == 0
            || !(self.message_bytes * 8).is_multiple_of(self.packets_per_message as usize)
        {
            return fail(format!(
                "{} packets do not evenly divide {} bytes",
                self.packets_per_message, self.message_bytes
            ));
        }
        if !(0.0..0.5).contains(&self.noise_flip_prob) {
            return fail("noise_flip_prob must be in [0, 0.5)".into());
        }
        Ok(())
    }

    /// Raw transmission rate: one bit per slice.
    pub fn raw_rate_bps(&self) -> f64 {
        1000.0 / self.slice_ms
    }

    pub fn hw_threads(&self) -> u32 {
        self.cores * self.smt_per_core
    }

    pub fn receiver_count(&self) -> u32 {
        self.hw_threads() - 2
    }

    fn payload_bits_per_packet(&self) -> usize {
        self.message_bytes * 8 / self.packets_per_message as usize
    }
}

/// Logical task of one hardware thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    Sender,
    Bingo,
    Receiver(u32),
}

/// Hardware thread coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HwThread {
    pub core: u32,
    pub smt: u32,
}

/// Assignment of the tasks onto the hardware threads, one task per thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    assignment: BTreeMap<Task, HwThread>,
}

impl Placement {
    pub fn thread_of(&self, task: Task) -> Option<HwThread> {
        self.assignment.get(&task).copied()
    }

    /// Task running on the other SMT thread of the same core.
    pub fn sibling_of(&self, task: Task) -> Option<Task> {
        let home = self.thread_of(task)?;
        self.assignment
            .iter()
            .find(|(t, h)| h.core == home.core && h.smt != home.smt && **t != task)
            .map(|(t, _)| *t)
    }

    pub fn sender_shares_core_with_bingo(&self) -> bool {
        self.sibling_of(Task::Sender) == Some(Task::Bingo)
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&Task, &HwThread)> {
        self.assignment.iter()
    }

    fn validate(&self, config: &ChannelConfig) -> Result<()> {
        if self.assignment.len() != config.hw_threads() as usize {
            return Err(Error::InvalidThreadPlacement(format!(
                "{} tasks for {} hardware threads",
                self.assignment.len(),
                config.hw_threads()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for thread in self.assignment.values() {
            if !seen.insert(*thread) {
                return Err(Error::InvalidThreadPlacement(format!(
                    "thread ({}, {}) assigned twice",
                    thread.core, thread.smt
                )));
            }
        }
        Ok(())
    }
}

/// Uniform random bijection of {sender, bingo, receivers} onto the hardware
/// threads.
pub fn place_threads(config: &ChannelConfig, seed: u64) -> Result<Placement> {
    config.validate()?;
    let mut threads: Vec<HwThread> = (0..config.cores)
        .flat_map(|core| (0..config.smt_per_core).map(move |smt| HwThread { core, smt }))
        .collect();
    let mut r = rng::stream_rng(seed, &[0x706c]);
    threads.shuffle(&mut r);
    let mut tasks = vec![Task::Sender, Task::Bingo];
    tasks.extend((0..config.receiver_count()).map(Task::Receiver));
    let assignment = tasks.into_iter().zip(threads).collect();
    Ok(Placement { assignment })
}

/// One framed packet: a 16-bit sequence header plus the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub index: u16,
    pub payload: Vec<bool>,
}

pub const PACKET_HEADER_BITS: usize = 16;

impl Packet {
    /// Wire bits: big-endian sequence number, then the payload.
    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(PACKET_HEADER_BITS + self.payload.len());
        for i in (0..PACKET_HEADER_BITS).rev() {
            bits.push((self.index >> i) & 1 == 1);
        }
        bits.extend_from_slice(&self.payload);
        bits
    }

    pub fn from_bits(bits: &[bool]) -> Result<Packet> {
        if bits.len() < PACKET_HEADER_BITS {
            return Err(Error::LengthMismatch(format!(
                "packet needs at least {PACKET_HEADER_BITS} bits, got {}",
                bits.len()
            )));
        }
        let mut index = 0u16;
        for &b in &bits[..PACKET_HEADER_BITS] {
            index = (index << 1) | u16::from(b);
        }
        Ok(Packet {
            index,
            payload: bits[PACKET_HEADER_BITS..].to_vec(),
        })
    }
}

fn byte_to_bits(byte: u8) -> impl Iterator<Item = bool> {
    (0..8).rev().map(move |i| (byte >> i) & 1 == 1)
}

fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| chunk.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b)))
        .collect()
}

/// Split a message into equally sized packets with sequence headers.
pub fn frame_message(message: &[u8], config: &ChannelConfig) -> Result<Vec<Packet>> {
    config.validate()?;
    if message.len() != config.message_bytes {
        return Err(Error::LengthMismatch(format!(
            "message is {} bytes, config expects {}",
            message.len(),
            config.message_bytes
        )));
    }
    let bits: Vec<bool> = message.iter().flat_map(|&b| byte_to_bits(b)).collect();
    let per_packet = config.payload_bits_per_packet();
    let packets = if per_packet == 0 {
        (0..config.packets_per_message)
            .map(|i| Packet {
                index: i as u16,
                payload: Vec::new(),
            })
            .collect()
    } else {
        bits.chunks(per_packet)
            .enumerate()
            .map(|(i, chunk)| Packet {
                index: i as u16,
                payload: chunk.to_vec(),
            })
            .collect()
    };
    Ok(packets)
}

/// Reassemble packets (in transmission order) into the message. Headers are
/// carried for loss detection; payload order is positional.
pub fn deframe(packets: &[Packet]) -> Result<Vec<u8>> {
    let mut bits = Vec::new();
    for p in packets {
        bits.extend_from_slice(&p.payload);
    }
    if !bits.len().is_multiple_of(8) {
        return Err(Error::LengthMismatch(format!(
            "payload bits ({}) are not a whole number of bytes",
            bits.len()
        )));
    }
    Ok(bits_to_bytes(&bits))
}

/// Per-receiver contention levels plus the coarse clock log.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitOutput {
    /// `receiver_levels[r][s]` is receiver r's contention level in slice s.
    pub receiver_levels: Vec<Vec<f64>>,
    /// Slice boundary timestamps in ms; the only clock anyone reads.
    pub clock_log_ms: Vec<f64>,
}

/// Drive one packet's bits through the medium.
pub fn transmit(
    engine: &Engine,
    config: &ChannelConfig,
    bits: &[bool],
    placement: &Placement,
    seed: u64,
) -> Result<TransmitOutput> {
    placement.validate(config)?;
    let chain = config.sender_sqrt_chain;
    let k = config.sender_imul_chain;
    let receiver_program = ThreadProgram {
        delay_chain: vec![("sqrtsd".to_string(), chain)],
        priming: ("imul".to_string(), k),
        fillers: ("pxor".to_string(), 0),
        probe: Probe::Bingo,
        flush_operand: false,
    };
    let prep = engine.prepare(&receiver_program)?;
    let sender_active = engine.prepare_sibling(&SiblingLoad::Program(
        receiver_program.clone().with_probe(Probe::None),
    ))?;
    let busy = engine.prepare_sibling(&SiblingLoad::BusyLoop)?;

    let n_receivers = config.receiver_count() as usize;
    let mut siblings = Vec::with_capacity(n_receivers);
    for ridx in 0..n_receivers {
        let sib = placement
            .sibling_of(Task::Receiver(ridx as u32))
            .ok_or_else(|| {
                Error::InvalidThreadPlacement(format!("receiver {ridx} has no sibling"))
            })?;
        siblings.push(sib);
    }

    let mut r = rng::stream_rng(seed, &[0x7478]);
    let mut receiver_levels = vec![Vec::with_capacity(bits.len()); n_receivers];
    let mut clock_log_ms = Vec::with_capacity(bits.len());
    for (slice, &bit) in bits.iter().enumerate() {
        clock_log_ms.push(slice as f64 * config.slice_ms);
        for (ridx, sibling) in siblings.iter().enumerate() {
            let state: &SiblingState = match sibling {
                Task::Receiver(_) => &sender_active,
                Task::Bingo => &busy,
                Task::Sender => {
                    if bit {
                        &sender_active
                    } else {
                        &busy
                    }
                }
            };
            let (reordered, _) = engine.eval_delay(&prep, state);
            let mut level = if reordered { 0.0 } else { 1.0 };
            if config.noise_flip_prob > 0.0 && r.gen::<f64>() < config.noise_flip_prob {
                level = 1.0 - level;
            }
            receiver_levels[ridx].push(level);
        }
    }
    Ok(TransmitOutput {
        receiver_levels,
        clock_log_ms,
    })
}

/// Which trace carries the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalSelection {
    Receiver(usize),
    /// Every receiver reads high: the sender sits next to the bingo thread.
    LostChannel,
}

/// Rank receivers by average contention and pick the second lowest; report a
/// lost channel when every average sits in the jammed band.
pub fn select_signal_receiver(traces: &[Vec<f64>], lost_band: f64) -> Result<SignalSelection> {
    if traces.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 receiver traces, got {}",
            traces.len()
        )));
    }
    let averages: Vec<f64> = traces
        .iter()
        .map(|t| {
            if t.is_empty() {
                0.0
            } else {
                t.iter().sum::<f64>() / t.len() as f64
            }
        })
        .collect();
    if averages.iter().all(|&a| a >= lost_band) {
        return Ok(SignalSelection::LostChannel);
    }
    let mut order: Vec<usize> = (0..averages.len()).collect();
    order.sort_by(|&a, &b| {
        averages[a]
            .partial_cmp(&averages[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(SignalSelection::Receiver(order[1]))
}

/// One bit per slice: above the threshold reads as `1`.
pub fn demodulate(trace: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if trace.is_empty() {
        return Err(Error::EmptyInput("no slices to demodulate"));
    }
    Ok(trace.iter().map(|&level| level > threshold).collect())
}

/// Bit error rate: Hamming distance over length.
pub fn ber(sent: &[bool], received: &[bool]) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::LengthMismatch(format!(
            "sent {} bits, received {}",
            sent.len(),
            received.len()
        )));
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}

fn binary_entropy(p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Binary-symmetric-channel capacity: raw rate scaled by `1 - H2(p)`.
pub fn true_capacity(raw_rate_bps: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "error rate {p} outside [0, 1]"
        )));
    }
    if !(raw_rate_bps.is_finite() && raw_rate_bps >= 0.0) {
        return Err(Error::InvalidParameter(
            "raw rate must be non-negative".into(),
        ));
    }
    Ok(raw_rate_bps * (1.0 - binary_entropy(p)))
}

/// Bit sequence that serializes as a compact `0`/`1` string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitSeq(pub Vec<bool>);

impl fmt::Display for BitSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for BitSeq {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitSeq {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!("bad bit char {other:?}"))),
            })
            .collect::<std::result::Result<Vec<bool>, _>>()?;
        Ok(BitSeq(bits))
    }
}

/// Result of one channel run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub sent_bits: BitSeq,
    pub received_bits: BitSeq,
    pub ber: f64,
    pub lost_packets: u32,
    pub raw_rate_bps: f64,
    pub true_capacity_bps: f64,
}

/// Report plus per-receiver sample traces for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRunOutput {
    pub report: ChannelReport,
    /// Traces of the first transmitted packet.
    pub sample_traces: Vec<Vec<f64>>,
    pub sample_clock_ms: Vec<f64>,
}

/// Full pipeline over `n_messages` seeded random messages: frame, place,
/// transmit, select, demodulate, score. A lost channel re-places and
/// retransmits the packet, counting the loss.
pub fn run_channel_experiment(
    engine: &Engine,
    config: &ChannelConfig,
    n_messages: u32,
    seed: u64,
) -> Result<ChannelRunOutput> {
    config.validate()?;
    let mut sent_payload: Vec<bool> = Vec::new();
    let mut received_payload: Vec<bool> = Vec::new();
    let mut lost_packets = 0u32;
    let mut sample: Option<(Vec<Vec<f64>>, Vec<f64>)> = None;

    for m in 0..n_messages {
        let mut message = vec![0u8; config.message_bytes];
        rng::stream_rng(seed, &[0x6d73, u64::from(m)]).fill(&mut message[..]);
        let packets = frame_message(&message, config)?;
        let mut placement = place_threads(config, rng::mix(seed, &[0x706d, u64::from(m)]))?;

        for packet in &packets {
            let wire = packet.to_bits();
            let mut delivered = None;
            for attempt in 0..=config.max_retries {
                let out = transmit(
                    engine,
                    config,
                    &wire,
                    &placement,
                    rng::mix(
                        seed,
                        &[u64::from(m), u64::from(packet.index), u64::from(attempt)],
                    ),
                )?;
                match select_signal_receiver(&out.receiver_levels, config.lost_band)? {
                    SignalSelection::Receiver(idx) => {
                        let bits = demodulate(&out.receiver_levels[idx], config.threshold)?;
                        if sample.is_none() {
                            sample = Some((out.receiver_levels.clone(), out.clock_log_ms.clone()));
                        }
                        delivered = Some(bits);
                        break;
                    }
                    SignalSelection::LostChannel => {
                        lost_packets += 1;
                        placement = place_threads(
                            config,
                            rng::mix(
                                seed,
                                &[
                                    0x7265,
                                    u64::from(m),
                                    u64::from(packet.index),
                                    u64::from(attempt),
                                ],
                            ),
                        )?;
                    }
                }
            }
            let bits = delivered.ok_or(Error::LostChannelRetriesExhausted)?;
            let received = Packet::from_bits(&bits)?;
            sent_payload.extend_from_slice(&packet.payload);
            received_payload.extend_from_slice(&received.payload);
        }
    }

    let error_rate = ber(&sent_payload, &received_payload)?;
    let raw = config.raw_rate_bps();
    let report = ChannelReport {
        sent_bits: BitSeq(sent_payload),
        received_bits: BitSeq(received_payload),
        ber: error_rate,
        lost_packets,
        raw_rate_bps: raw,
        true_capacity_bps: true_capacity(raw, error_rate)?,
    };
    let (sample_traces, sample_clock_ms) = sample.unwrap_or_default();
    Ok(ChannelRunOutput {
        report,
        sample_traces,
        sample_clock_ms,
    })
}
