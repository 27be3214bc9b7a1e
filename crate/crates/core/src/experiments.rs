//! Named experiment harness.
//!
//! Each experiment binds the library modules into one reproducible run:
//! deterministic seeding, parameter overrides, CSV/JSON emission and a
//! manifest echoing the invocation. Re-running an experiment with the same
//! `ExperimentSpec` produces byte-identical files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelConfig};
use crate::error::{Error, Result};
use crate::keystroke::{self, PipelineParams};
use crate::priming::{self, SweepMethod};
use crate::rng;
use crate::sim::{self, Engine, EngineParams, Probe, SiblingLoad, ThreadProgram};
use crate::uarch::{load_machine_config, Machine, QueueId};

/// The named experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    CapacitySweep,
    PxorStalls,
    ClassifyTable,
    KeystrokeRun,
    CovertRun,
    MemOrdering,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::CapacitySweep,
        ExperimentName::PxorStalls,
        ExperimentName::ClassifyTable,
        ExperimentName::KeystrokeRun,
        ExperimentName::CovertRun,
        ExperimentName::MemOrdering,
    ];
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentName::CapacitySweep => "capacity-sweep",
            ExperimentName::PxorStalls => "pxor-stalls",
            ExperimentName::ClassifyTable => "classify-table",
            ExperimentName::KeystrokeRun => "keystroke-run",
            ExperimentName::CovertRun => "covert-run",
            ExperimentName::MemOrdering => "mem-ordering",
        };
        f.write_str(s)
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capacity-sweep" => Ok(ExperimentName::CapacitySweep),
            "pxor-stalls" => Ok(ExperimentName::PxorStalls),
            "classify-table" => Ok(ExperimentName::ClassifyTable),
            "keystroke-run" => Ok(ExperimentName::KeystrokeRun),
            "covert-run" => Ok(ExperimentName::CovertRun),
            "mem-ordering" => Ok(ExperimentName::MemOrdering),
            other => Err(Error::UnknownExperiment(other.to_string())),
        }
    }
}

/// One experiment invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub machine: Machine,
    pub seed: u64,
    /// Free-form `key=value` parameter overrides.
    pub overrides: BTreeMap<String, String>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentStatus {
    Success,
    LostChannelRetriesExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub status: ExperimentStatus,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: String,
    machine: String,
    seed: u64,
    overrides: &'a BTreeMap<String, String>,
    crate_version: &'static str,
    outputs: Vec<String>,
}

/// Typed access to the override map that rejects unknown keys.
struct Overrides<'a> {
    experiment: ExperimentName,
    map: &'a BTreeMap<String, String>,
    known: Vec<&'static str>,
}

impl<'a> Overrides<'a> {
    fn new(experiment: ExperimentName, map: &'a BTreeMap<String, String>) -> Self {
        Overrides {
            experiment,
            map,
            known: Vec::new(),
        }
    }

    fn parse<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T> {
        self.known.push(key);
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::InvalidParameter(format!("override {key}={raw} does not parse"))
            }),
        }
    }

    fn get_str(&mut self, key: &'static str) -> Option<String> {
        self.known.push(key);
        self.map.get(key).cloned()
    }

    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.known.contains(&key.as_str()) {
                return Err(Error::UnknownOverride {
                    experiment: self.experiment.to_string(),
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }
}

struct Emitter {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn finish(mut self, spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
        let outputs: Vec<String> = self
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let manifest = Manifest {
            experiment: spec.name.to_string(),
            machine: spec.machine.to_string(),
            seed: spec.seed,
            overrides: &spec.overrides,
            crate_version: env!("CARGO_PKG_VERSION"),
            outputs,
        };
        let json =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        self.write("manifest.json", &format!("{json}\n"))?;
        Ok(self.files)
    }
}

/// Documented column layouts for the figure-shaped CSV outputs.
pub fn figure_header(figure_id: &str) -> Result<&'static str> {
    match figure_id {
        // Capacity sweep: bingo updates per k for each machine x sibling series.
        "capacity-by-k" => Ok("k,zen2_idle,zen2_busy,zen3_idle,zen3_busy,zen4_idle,zen4_busy"),
        // Spurious stalls: bingo updates per filler count at fixed priming levels.
        "spurious-stalls" => Ok("pxor_count,updates_k22,updates_k23,updates_k24"),
        // Jitter histogram: one bin per row.
        "jitter-histogram" => Ok("jitter_bin_ms,samples"),
        // Classification table.
        "classification-table" => {
            Ok("mnemonic,observed_k,queues,targeted,single_uop,single_queue,uops_per_target")
        }
        other => Err(Error::UnknownFigure(other.to_string())),
    }
}

/// Render rows in a named figure layout; row widths must match the header.
pub fn emit_figure_data(figure_id: &str, rows: &[Vec<String>]) -> Result<String> {
    let header = figure_header(figure_id)?;
    let width = header.split(',').count();
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        if row.len() != width {
            return Err(Error::LengthMismatch(format!(
                "figure {figure_id} expects {width} columns, row has {}",
                row.len()
            )));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Run one named experiment. Every output under `spec.out_dir` is a
/// deterministic function of the `ExperimentSpec`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let mut emitter = Emitter::new(&spec.out_dir)?;
    let status = match spec.name {
        ExperimentName::CapacitySweep => run_capacity_sweep(spec, &mut emitter)?,
        ExperimentName::PxorStalls => run_pxor_stalls(spec, &mut emitter)?,
        ExperimentName::ClassifyTable => run_classify_table(spec, &mut emitter)?,
        ExperimentName::KeystrokeRun => run_keystroke(spec, &mut emitter)?,
        ExperimentName::CovertRun => run_covert(spec, &mut emitter)?,
        ExperimentName::MemOrdering => run_mem_ordering(spec, &mut emitter)?,
    };
    let files = emitter.finish(spec)?;
    Ok(ExperimentOutcome { status, files })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn run_capacity_sweep(spec: &ExperimentSpec, emitter: &mut Emitter) -> Result<ExperimentStatus> {
    let mut ov = Overrides::new(spec.name, &spec.overrides);
    let mnemonic = ov.get_str("instruction").unwrap_or_else(|| "imul".into());
    let k_max: u32 = ov.parse("k_max", 30)?;
    let trials: u32 = ov.parse("trials", 1000)?;
    let stall_noise: f64 = ov.parse("stall_noise", 0.0)?;
    let parallel: bool = ov.parse("parallel", false)?;
    let trace_k: Option<u32> = ov
        .get_str("trace_k")
        .map(|s| s.parse())
        .transpose()
        .map_err(|_| Error::InvalidParameter("trace_k must be an integer".into()))?;
    ov.finish()?;

    let params = EngineParams {
        noise_stall_prob: stall_noise,
        ..EngineParams::default()
    };

    // One independent job per machine: its two bingo-update columns plus its
    // summary rows.
    let seed = spec.seed;
    let sweep_machine = |machine: Machine| -> Result<(Vec<Vec<f64>>, String)> {
        let config = load_machine_config(machine)?;
        let engine = Engine::new(&config).with_params(params);
        let mut columns = Vec::new();
        let mut summary = String::new();
        for sibling in [SiblingLoad::Idle, SiblingLoad::BusyLoop] {
            let mut column = Vec::with_capacity(k_max as usize + 1);
            for k in 0..=k_max {
                let program = ThreadProgram::standard(&config, &mnemonic, k)?;
                let result = engine.run_probe(
                    &program,
                    &sibling,
                    trials,
                    rng::mix(seed, &[machine as u64, u64::from(k)]),
                )?;
                column.push(result.bingo_updates);
            }
            columns.push(column);
            let label = match sibling {
                SiblingLoad::Idle => "idle",
                _ => "busy",
            };
            let observed =
                priming::capacity_sweep_with(&config, &mnemonic, SweepMethod::Bingo, &sibling)?;
            summary.push_str(&format!(
                "{machine},{label},bingo,{}\n",
                observed
                    .map(|k| k.to_string())
                    .unwrap_or_else(|| "-".into())
            ));
            // The timer method where the read latency is calibrated.
            if config.timer_read_cycles.is_some() {
                let observed =
                    priming::capacity_sweep_with(&config, &mnemonic, SweepMethod::Timer, &sibling)?;
                summary.push_str(&format!(
                    "{machine},{label},timer,{}\n",
                    observed
                        .map(|k| k.to_string())
                        .unwrap_or_else(|| "-".into())
                ));
            }
        }
        Ok((columns, summary))
    };

    // Grid points are independent; results are always combined in machine
    // order, so the parallel path emits identical bytes.
    let per_machine: Vec<Result<(Vec<Vec<f64>>, String)>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = Machine::ALL
                .iter()
                .map(|&machine| scope.spawn(move || sweep_machine(machine)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    } else {
        Machine::ALL.iter().map(|&m| sweep_machine(m)).collect()
    };

    let mut series: Vec<Vec<f64>> = Vec::new();
    let mut summary = String::from("machine,sibling,method,observed_k\n");
    for result in per_machine {
        let (columns, rows) = result?;
        series.extend(columns);
        summary.push_str(&rows);
    }
    let rows: Vec<Vec<String>> = (0..=k_max as usize)
        .map(|k| {
            let mut row = vec![k.to_string()];
            row.extend(series.iter().map(|col| fmt_f64(col[k])));
            row
        })
        .collect();
    emitter.write(
        "capacity_by_k.csv",
        &emit_figure_data("capacity-by-k", &rows)?,
    )?;
    emitter.write("capacity_summary.csv", &summary)?;

    // Optional per-trial trace dump at one priming level on the selected machine.
    if let Some(k) = trace_k {
        let config = load_machine_config(spec.machine)?;
        let engine = Engine::new(&config).with_params(params);
        let program = ThreadProgram::standard(&config, &mnemonic, k)?;
        let outcomes = engine.run_probe_trials(
            &program,
            &SiblingLoad::Idle,
            trials,
            rng::mix(spec.seed, &[0x7472, u64::from(k)]),
        )?;
        let rows: Vec<sim::TrialRow> = outcomes
            .into_iter()
            .enumerate()
            .map(|(trial, outcome)| sim::TrialRow {
                trial: trial as u32,
                k,
                fillers: 0,
                outcome,
            })
            .collect();
        emitter.write("probe_trace.csv", &sim::trace_to_csv(&rows))?;
    }
    Ok(ExperimentStatus::Success)
}

fn run_pxor_stalls(spec: &ExperimentSpec, emitter: &mut Emitter) -> Result<ExperimentStatus> {
    let mut ov = Overrides::new(spec.name, &spec.overrides);
    let fillers_max: u32 = ov.parse("fillers_max", 30)?;
    let trials: u32 = ov.parse("trials", 100)?;
    ov.finish()?;

    let config = load_machine_config(spec.machine)?;
    let engine = Engine::new(&config);
    let k_values = [22u32, 23, 24];
    let mut rows = Vec::new();
    for fillers in 0..=fillers_max {
        let mut row = vec![fillers.to_string()];
        for &k in &k_values {
            let program = ThreadProgram::standard(&config, "imul", k)?.with_fillers(fillers);
            let result = engine.run_probe(
                &program,
                &SiblingLoad::Idle,
                trials,
                rng::mix(spec.seed, &[u64::from(k), u64::from(fillers)]),
            )?;
            row.push(fmt_f64(result.bingo_updates));
        }
        rows.push(row);
    }
    emitter.write(
        "spurious_stalls.csv",
        &emit_figure_data("spurious-stalls", &rows)?,
    )?;
    Ok(ExperimentStatus::Success)
}

fn run_classify_table(spec: &ExperimentSpec, emitter: &mut Emitter) -> Result<ExperimentStatus> {
    let ov = Overrides::new(spec.name, &spec.overrides);
    ov.finish()?;
    let config = load_machine_config(spec.machine)?;
    let report = priming::classification_report(&config)?;
    emitter.write("classification.csv", &priming::report_to_csv(&report))?;
    emitter.write("classification.txt", &priming::report_to_text(&report))?;
    Ok(ExperimentStatus::Success)
}

fn run_keystroke(spec: &ExperimentSpec, emitter: &mut Emitter) -> Result<ExperimentStatus> {
    let mut ov = Overrides::new(spec.name, &spec.overrides);
    let mut params = PipelineParams::default();
    params.n_keys = ov.parse("n_keys", params.n_keys)?;
    params.noise.noise_events = ov.parse("noise_events", params.noise.noise_events)?;
    params.noise.mouse_bursts = ov.parse("mouse_bursts", params.noise.mouse_bursts)?;
    params.sampling_interval_ms = ov.parse("sampling_interval_ms", params.sampling_interval_ms)?;
    params.post.t_idle_ms = ov.parse("t_idle_ms", params.post.t_idle_ms)?;
    params.post.n_min = ov.parse("n_min", params.post.n_min)?;
    let parallel: bool = ov.parse("parallel", false)?;
    ov.finish()?;

    let config = load_machine_config(spec.machine)?;
    type QueueRun = (
        keystroke::GroundTruth,
        keystroke::ContentionTrace,
        keystroke::KeystrokeReport,
    );
    let run_queue = |queue: QueueId| -> Result<QueueRun> {
        let seed = rng::mix(spec.seed, &[queue as u64]);
        keystroke::run_pipeline(&config, queue, seed, &params)
    };
    let runs: Vec<Result<QueueRun>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = QueueId::INT
                .iter()
                .map(|&queue| scope.spawn(move || run_queue(queue)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    } else {
        QueueId::INT.iter().map(|&q| run_queue(q)).collect()
    };

    let mut summary = String::from(
        "queue,recorded_keystrokes,false_negatives,false_positives,f1,jitter_stddev_ms,n\n",
    );
    for (queue, run) in QueueId::INT.into_iter().zip(runs) {
        let (truth, trace, report) = run?;

        let mut trace_csv = String::from("timestamp_ms\n");
        for t in &trace.activity_timestamps {
            trace_csv.push_str(&format!("{t}\n"));
        }
        emitter.write(&format!("keystroke_trace_{queue}.csv"), &trace_csv)?;

        let offsets = keystroke::matched_offsets(&report, &truth.keystroke_times);
        let hist = keystroke::jitter_histogram(&offsets, 0.5);
        let rows: Vec<Vec<String>> = hist
            .iter()
            .map(|(bin, count)| vec![fmt_f64(*bin), count.to_string()])
            .collect();
        emitter.write(
            &format!("jitter_histogram_{queue}.csv"),
            &emit_figure_data("jitter-histogram", &rows)?,
        )?;

        let json =
            serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
        emitter.write(
            &format!("keystroke_report_{queue}.json"),
            &format!("{json}\n"),
        )?;

        summary.push_str(&format!(
            "{queue},{},{},{},{},{},{}\n",
            truth.keystroke_times.len(),
            report.false_negatives,
            report.false_positives,
            fmt_f64((report.f1 * 1000.0).round() / 1000.0),
            fmt_f64(report.jitter_stddev_ms),
            report.n_true_positive
        ));
    }
    emitter.write("keystroke_summary.csv", &summary)?;
    Ok(ExperimentStatus::Success)
}

fn run_covert(spec: &ExperimentSpec, emitter: &mut Emitter) -> Result<ExperimentStatus> {
    let mut ov = Overrides::new(spec.name, &spec.overrides);
    let messages: u32 = ov.parse("messages", 1)?;
    let noise: f64 = ov.parse("noise", 0.0)?;
    let message_bytes: usize = ov.parse("message_bytes", 5000)?;
    let packets: u32 = ov.parse("packets", 10)?;
    let message_file = ov.get_str("message_file");
    ov.finish()?;

    let config = ChannelConfig {
        noise_flip_prob: noise,
        message_bytes,
        packets_per_message: packets,
        ..ChannelConfig::default()
    };
    let mc = load_machine_config(spec.machine)?;
    let engine = Engine::new(&mc);

    let run = if let Some(path) = message_file {
        let message = fs::read(&path)?;
        run_fixed_message(&engine, &config, &message, spec.seed)
    } else {
        channel::run_channel_experiment(&engine, &config, messages, spec.seed)
    };

    match run {
        Ok(out) => {
            let json = serde_json::to_string_pretty(&out.report)
                .map_err(|e| Error::Parse(e.to_string()))?;
            emitter.write("channel_report.json", &format!("{json}\n"))?;
            for (i, trace) in out.sample_traces.iter().enumerate() {
                let mut csv = String::from("t_ms,level\n");
                for (s, level) in trace.iter().enumerate() {
                    csv.push_str(&format!("{},{level}\n", out.sample_clock_ms[s]));
                }
                emitter.write(&format!("receiver_trace_{i}.csv"), &csv)?;
            }
            Ok(ExperimentStatus::Success)
        }
        Err(Error::LostChannelRetriesExhausted) => {
            emitter.write(
                "channel_report.json",
                "{\n  \"error\": \"lost channel: placement retries exhausted\"\n}\n",
            )?;
            Ok(ExperimentStatus::LostChannelRetriesExhausted)
        }
        Err(e) => Err(e),
    }
}

/// Covert run over one caller-provided message.
fn run_fixed_message(
    engine: &Engine,
    config: &ChannelConfig,
    message: &[u8],
    seed: u64,
) -> Result<channel::ChannelRunOutput> {
    let packets = channel::frame_message(message, config)?;
    let mut placement = channel::place_threads(config, rng::mix(seed, &[0x706d]))?;
    let mut sent = Vec::new();
    let mut received = Vec::new();
    let mut lost_packets = 0u32;
    let mut sample: Option<(Vec<Vec<f64>>, Vec<f64>)> = None;
    for packet in &packets {
        let wire = packet.to_bits();
        let mut delivered = None;
        for attempt in 0..=config.max_retries {
            let out = channel::transmit(
                engine,
                config,
                &wire,
                &placement,
                rng::mix(seed, &[u64::from(packet.index), u64::from(attempt)]),
            )?;
            match channel::select_signal_receiver(&out.receiver_levels, config.lost_band)? {
                channel::SignalSelection::Receiver(idx) => {
                    if sample.is_none() {
                        sample = Some((out.receiver_levels.clone(), out.clock_log_ms.clone()));
                    }
                    delivered = Some(channel::demodulate(
                        &out.receiver_levels[idx],
                        config.threshold,
                    )?);
                    break;
                }
                channel::SignalSelection::LostChannel => {
                    lost_packets += 1;
                    placement = channel::place_threads(
                        config,
                        rng::mix(seed, &[0x7265, u64::from(packet.index), u64::from(attempt)]),
                    )?;
                }
            }
        }
        let bits = delivered.ok_or(Error::LostChannelRetriesExhausted)?;
        let rx = channel::Packet::from_bits(&bits)?;
        sent.extend_from_slice(&packet.payload);
        received.extend_from_slice(&rx.payload);
    }
    let error_rate = channel::ber(&sent, &received)?;
    let raw = config.raw_rate_bps();
    let (sample_traces, sample_clock_ms) = sample.unwrap_or_default();
    Ok(channel::ChannelRunOutput {
        report: channel::ChannelReport {
            sent_bits: channel::BitSeq(sent),
            received_bits: channel::BitSeq(received),
            ber: error_rate,
            lost_packets,
            raw_rate_bps: raw,
            true_capacity_bps: channel::true_capacity(raw, error_rate)?,
        },
        sample_traces,
        sample_clock_ms,
    })
}

fn run_mem_ordering(spec: &ExperimentSpec, emitter: &mut Emitter) -> Result<ExperimentStatus> {
    let mut ov = Overrides::new(spec.name, &spec.overrides);
    let k_max: u32 = ov.parse("k_max", 26)?;
    ov.finish()?;

    let config = load_machine_config(spec.machine)?;
    let engine = Engine::new(&config);
    let mut csv = String::from("series,k,reordered,bingo_updates\n");
    let series: [(&str, &str, bool); 4] = [
        ("register", "imul", false),
        ("cached", "imul.mem", false),
        ("flushed", "imul.mem", true),
        ("address_dependent", "imul.addrdep", false),
    ];
    for (label, mnemonic, flush) in series {
        for k in 0..=k_max {
            let program = ThreadProgram::standard(&config, mnemonic, k)?
                .with_flushed_operand(flush)
                .with_probe(Probe::Bingo);
            let result = engine.run_probe(
                &program,
                &SiblingLoad::Idle,
                1,
                rng::mix(spec.seed, &[u64::from(k)]),
            )?;
            csv.push_str(&format!(
                "{label},{k},{},{}\n",
                result.reordered,
                fmt_f64(result.bingo_updates)
            ));
        }
    }
    emitter.write("mem_ordering.csv", &csv)?;

    // Flexible fill across all four integer queues.
    let mut add_csv = String::from("machine,observed_k\n");
    let observed = priming::capacity_sweep(&config, "add", SweepMethod::Bingo)?;
    add_csv.push_str(&format!(
        "{},{}\n",
        config.name,
        observed
            .map(|k| k.to_string())
            .unwrap_or_else(|| "-".into())
    ));
    emitter.write("add_capacity.csv", &add_csv)?;
    Ok(ExperimentStatus::Success)
}

/// Convenience wrapper used by tests and the trace-dump interface.
pub fn write_trace_csv(path: &Path, rows: &[sim::TrialRow]) -> Result<()> {
    fs::write(path, sim::trace_to_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: ExperimentName, dir: &Path) -> ExperimentSpec {
        ExperimentSpec {
            name,
            machine: Machine::Zen3,
            seed: 1,
            overrides: BTreeMap::new(),
            out_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn figure_layouts_are_fixed() {
        assert_eq!(
            figure_header("capacity-by-k").unwrap().split(',').count(),
            7
        );
        assert_eq!(
            figure_header("jitter-histogram").unwrap(),
            "jitter_bin_ms,samples"
        );
        assert!(matches!(
            figure_header("nope"),
            Err(Error::UnknownFigure(_))
        ));
        // Empty data still yields a header-only file.
        let csv = emit_figure_data("jitter-histogram", &[]).unwrap();
        assert_eq!(csv, "jitter_bin_ms,samples\n");
        let bad = emit_figure_data("jitter-histogram", &[vec!["1".into()]]);
        assert!(bad.is_err());
    }

    #[test]
    fn unknown_override_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(ExperimentName::PxorStalls, dir.path());
        s.overrides.insert("bogus".into(), "1".into());
        assert!(matches!(
            run_experiment(&s),
            Err(Error::UnknownOverride { .. })
        ));
    }

    #[test]
    fn capacity_sweep_shows_the_jump_past_capacity() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(ExperimentName::CapacitySweep, dir.path());
        s.overrides.insert("trials".into(), "20".into());
        run_experiment(&s).unwrap();
        let csv = fs::read_to_string(dir.path().join("capacity_by_k.csv")).unwrap();
        let zen3_idle: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert_eq!(zen3_idle[24], 0.0, "still reorders at the capacity");
        assert!(zen3_idle[25] > 0.0, "delay jumps one past the capacity");
        let summary = fs::read_to_string(dir.path().join("capacity_summary.csv")).unwrap();
        assert!(summary.contains("zen3,idle,timer,22"));
    }

    #[test]
    fn pxor_stalls_emits_the_truth_table_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(ExperimentName::PxorStalls, dir.path());
        s.overrides.insert("trials".into(), "3".into());
        let outcome = run_experiment(&s).unwrap();
        assert_eq!(outcome.status, ExperimentStatus::Success);
        let csv = fs::read_to_string(dir.path().join("spurious_stalls.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            figure_header("spurious-stalls").unwrap()
        );
        assert_eq!(lines.count(), 31);
        assert!(dir.path().join("manifest.json").exists());
    }
}
