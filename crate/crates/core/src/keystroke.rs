//! Inter-keystroke timing recovery over the contention medium.
//!
//! Ground-truth scenarios are generated with seeded randomness, the
//! co-located observer's activity trace is produced through the engine's
//! watermark mechanism, and postprocessing (clustering, size filtering,
//! alignment, scoring) recovers keystroke times and grades them against the
//! truth.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priming::{capacity_sweep, SweepMethod};
use crate::rng;
use crate::sim::{Engine, SiblingState, ThreadProgram};
use crate::uarch::{MachineConfig, QueueId};

/// Injected input scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Keystroke times, strictly increasing, in milliseconds.
    pub keystroke_times: Vec<f64>,
    /// Mouse activity bursts as (start, duration) pairs.
    pub mouse_bursts: Vec<(f64, f64)>,
    /// Short unrelated activity events.
    pub noise_events: Vec<f64>,
}

impl GroundTruth {
    /// End of the interesting part of the scenario.
    pub fn horizon_ms(&self) -> f64 {
        let last_key = self.keystroke_times.last().copied().unwrap_or(0.0);
        let last_mouse = self
            .mouse_bursts
            .iter()
            .map(|(s, d)| s + d)
            .fold(0.0, f64::max);
        let last_noise = self.noise_events.last().copied().unwrap_or(0.0);
        last_key.max(last_mouse).max(last_noise) + 100.0
    }
}

/// Unrelated-activity knobs for scenario generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Number of short spurious activity events.
    pub noise_events: u32,
    /// Number of mouse bursts (long activity windows).
    pub mouse_bursts: u32,
    /// Mouse burst duration range in ms.
    pub mouse_duration_ms: (f64, f64),
}

impl Default for NoiseParams {
    fn default() -> Self {
        // Login-prompt scenario: both hands on the keyboard, occasional
        // unrelated activity.
        NoiseParams {
            noise_events: 5,
            mouse_bursts: 0,
            mouse_duration_ms: (80.0, 200.0),
        }
    }
}

/// Generate a seeded scenario with `n_keys` keystrokes whose gaps are
/// uniform in `gap_range_ms`.
pub fn generate_ground_truth(
    seed: u64,
    n_keys: u32,
    gap_range_ms: (f64, f64),
    noise: &NoiseParams,
) -> Result<GroundTruth> {
    let (lo, hi) = gap_range_ms;
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || lo > hi {
        return Err(Error::InvalidParameter(format!(
            "gap range ({lo}, {hi}) is inverted or non-positive"
        )));
    }
    let mut r = rng::stream_rng(seed, &[0x6b65, 1]);
    let mut t = 0.0;
    let mut keystroke_times = Vec::with_capacity(n_keys as usize);
    for _ in 0..n_keys {
        t += r.gen_range(lo..=hi);
        keystroke_times.push(t);
    }
    let span = t + 500.0;
    let mut noise_events: Vec<f64> = (0..noise.noise_events)
        .map(|_| r.gen_range(0.0..span))
        .collect();
    noise_events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mouse_bursts: Vec<(f64, f64)> = (0..noise.mouse_bursts)
        .map(|_| {
            let start = r.gen_range(0.0..span);
            let dur = r.gen_range(noise.mouse_duration_ms.0..=noise.mouse_duration_ms.1);
            (start, dur)
        })
        .collect();
    Ok(GroundTruth {
        keystroke_times,
        mouse_bursts,
        noise_events,
    })
}

/// Timestamps at which the observer saw below-watermark capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentionTrace {
    pub activity_timestamps: Vec<f64>,
    pub queue: QueueId,
}

/// Shape of the activity bursts the observer sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    /// Keystroke burst duration range in ms.
    pub key_burst_ms: (f64, f64),
    /// Std deviation of the burst start relative to the keystroke, in ms
    /// (input-stack response latency).
    pub response_jitter_ms: f64,
    /// Samples per spurious noise event (kept short of the size filter).
    pub noise_samples: (u32, u32),
}

impl BurstParams {
    /// Defaults per observed queue, matching the measured per-queue jitter
    /// pattern.
    pub fn default_for(queue: QueueId) -> BurstParams {
        let response_jitter_ms = match queue {
            QueueId::Int0 => 2.5,
            QueueId::Int1 => 3.2,
            QueueId::Int2 => 2.3,
            _ => 0.9,
        };
        BurstParams {
            key_burst_ms: (14.0, 16.0),
            response_jitter_ms,
            noise_samples: (3, 8),
        }
    }
}

/// Default priming instruction per integer queue.
pub fn priming_instruction(queue: QueueId) -> Result<&'static str> {
    match queue {
        QueueId::Int0 => Ok("idiv"),
        QueueId::Int1 => Ok("imul"),
        QueueId::Int2 => Ok("stosb"),
        QueueId::Int3 => Ok("lodsb"),
        other => Err(Error::InvalidParameter(format!(
            "keystroke observation is defined on integer queues, not {other}"
        ))),
    }
}

/// Simulate the observer: prime the chosen queue to its idle capacity every
/// `sampling_interval_ms` and record the timestamps where the probe stalls.
/// The sibling thread is busy exactly while the input stack processes a
/// keystroke, noise event or mouse burst, so the watermark (plus the
/// sibling's own queue pressure) is what the observer detects.
pub fn simulate_observer_trace(
    config: &MachineConfig,
    truth: &GroundTruth,
    queue: QueueId,
    sampling_interval_ms: f64,
    burst: &BurstParams,
    seed: u64,
) -> Result<ContentionTrace> {
    if !queue.is_int() {
        return Err(Error::InvalidParameter(format!(
            "keystroke observation is defined on integer queues, not {queue}"
        )));
    }
    if !(sampling_interval_ms.is_finite() && sampling_interval_ms > 0.0) {
        return Err(Error::InvalidParameter(
            "sampling interval must be positive".into(),
        ));
    }

    let mnemonic = priming_instruction(queue)?;
    let k = capacity_sweep(config, mnemonic, SweepMethod::Bingo)?.ok_or_else(|| {
        Error::InvalidParameter(format!("{mnemonic} cannot fill {queue} on {}", config.name))
    })?;

    let engine = Engine::new(config);
    let program = ThreadProgram::standard(config, mnemonic, k)?;
    let prep = engine.prepare(&program)?;
    let busy = SiblingState {
        busy: true,
        occupancy: BTreeMap::new(),
    };
    let idle = SiblingState::default();

    // Busy windows of the sibling thread.
    let mut r = rng::stream_rng(seed, &[0x6f62, queue as u64]);
    let jitter = Normal::new(0.0, burst.response_jitter_ms.max(1e-12))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut windows: Vec<(f64, f64)> = Vec::new();
    for &key in &truth.keystroke_times {
        let start = key + jitter.sample(&mut r);
        let dur = r.gen_range(burst.key_burst_ms.0..=burst.key_burst_ms.1);
        windows.push((start, start + dur));
    }
    for &noise in &truth.noise_events {
        let samples = r.gen_range(burst.noise_samples.0..=burst.noise_samples.1);
        let dur = (samples.saturating_sub(1)) as f64 * sampling_interval_ms * 0.999;
        windows.push((noise, noise + dur));
    }
    for &(start, dur) in &truth.mouse_bursts {
        windows.push((start, start + dur));
    }
    windows.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let horizon = truth.horizon_ms();
    let mut activity = Vec::new();
    for &(start, end) in &windows {
        let first = (start.max(0.0) / sampling_interval_ms).ceil() as u64;
        let last = (end.min(horizon) / sampling_interval_ms).floor() as u64;
        for i in first..=last.max(first).min(u64::MAX - 1) {
            let t = i as f64 * sampling_interval_ms;
            if t < start || t > end {
                continue;
            }
            let (reordered, _) = engine.eval_delay(&prep, &busy);
            if !reordered {
                activity.push(t);
            }
        }
    }
    // The idle side never fires; evaluate once so the mechanism is exercised
    // against the same prepared probe.
    let (idle_reordered, _) = engine.eval_delay(&prep, &idle);
    debug_assert!(idle_reordered, "idle sibling must leave room for k={k}");

    activity.sort_by(|a, b| a.partial_cmp(b).unwrap());
    activity.dedup();
    Ok(ContentionTrace {
        activity_timestamps: activity,
        queue,
    })
}

/// Group a sorted trace into clusters: consecutive timestamps belong to the
/// same cluster when their gap is below or equal `t_idle_ms`.
pub fn cluster(trace: &ContentionTrace, t_idle_ms: f64) -> Result<Vec<Vec<f64>>> {
    if !(t_idle_ms.is_finite() && t_idle_ms >= 0.0) {
        return Err(Error::InvalidParameter(
            "cluster threshold must be non-negative".into(),
        ));
    }
    let ts = &trace.activity_timestamps;
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("trace is not sorted".into()));
    }
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for &t in ts {
        match clusters.last_mut() {
            Some(current) if t - *current.last().unwrap() <= t_idle_ms => current.push(t),
            _ => clusters.push(vec![t]),
        }
    }
    Ok(clusters)
}

/// Drop clusters with fewer than `n_min` samples and report each survivor's
/// first timestamp.
pub fn filter_clusters(clusters: &[Vec<f64>], n_min: usize) -> Vec<f64> {
    let mut out: Vec<f64> = clusters
        .iter()
        .filter(|c| c.len() >= n_min)
        .filter_map(|c| c.first().copied())
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Alignment grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub range_ms: f64,
    pub step_ms: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            range_ms: 50.0,
            step_ms: 0.1,
        }
    }
}

fn nearest(sorted: &[f64], x: f64) -> f64 {
    match sorted.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => sorted[i],
        Err(i) => {
            let before = i.checked_sub(1).map(|j| sorted[j]);
            let after = sorted.get(i).copied();
            match (before, after) {
                (Some(b), Some(a)) => {
                    if (x - b).abs() <= (a - x).abs() {
                        b
                    } else {
                        a
                    }
                }
                (Some(b), None) => b,
                (None, Some(a)) => a,
                (None, None) => unreachable!("empty slice rejected earlier"),
            }
        }
    }
}

fn mse_at(detected: &[f64], truth: &[f64], shift: f64) -> f64 {
    let sum: f64 = detected
        .iter()
        .map(|&d| {
            let s = d + shift;
            let e = s - nearest(truth, s);
            e * e
        })
        .sum();
    sum / detected.len() as f64
}

/// Grid-search the shift minimizing the mean squared error between each
/// shifted detection and its nearest ground-truth time. Ties go to the
/// smaller absolute shift.
pub fn align_with(detected: &[f64], truth: &[f64], params: &AlignParams) -> Result<f64> {
    if detected.is_empty() {
        return Err(Error::EmptyInput("no detected keystrokes to align"));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no ground-truth keystrokes to align"));
    }
    let steps = (2.0 * params.range_ms / params.step_ms).round() as i64;
    let mut best = (f64::INFINITY, f64::INFINITY, 0.0);
    for i in 0..=steps {
        let dt = -params.range_ms + i as f64 * params.step_ms;
        let mse = mse_at(detected, truth, dt);
        if mse < best.0 || (mse == best.0 && dt.abs() < best.1) {
            best = (mse, dt.abs(), dt);
        }
    }
    Ok(best.2)
}

pub fn align(detected: &[f64], truth: &[f64]) -> Result<f64> {
    align_with(detected, truth, &AlignParams::default())
}

/// Detection quality report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeReport {
    pub detected_times: Vec<f64>,
    pub delta_t: f64,
    pub false_negatives: u32,
    pub false_positives: u32,
    pub f1: f64,
    pub jitter_stddev_ms: f64,
    pub n_true_positive: u32,
}

/// Match shifted detections to ground truth greedily by distance within
/// `match_window_ms`, then score.
pub fn score(
    detected: &[f64],
    truth: &[f64],
    delta_t: f64,
    match_window_ms: f64,
) -> Result<KeystrokeReport> {
    if !(match_window_ms.is_finite() && match_window_ms > 0.0) {
        return Err(Error::InvalidParameter(
            "match window must be positive".into(),
        ));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &d) in detected.iter().enumerate() {
        let s = d + delta_t;
        for (j, &t) in truth.iter().enumerate() {
            let dist = (s - t).abs();
            if dist <= match_window_ms {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| (a.0, a.1, a.2).partial_cmp(&(b.0, b.1, b.2)).unwrap());
    let mut det_used = vec![false; detected.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut offsets = Vec::new();
    for (_, i, j) in pairs {
        if !det_used[i] && !truth_used[j] {
            det_used[i] = true;
            truth_used[j] = true;
            offsets.push(detected[i] + delta_t - truth[j]);
        }
    }
    let tp = offsets.len();
    let fp = detected.len() - tp;
    let fn_ = truth.len() - tp;
    let precision = if detected.is_empty() {
        0.0
    } else {
        tp as f64 / detected.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        tp as f64 / truth.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let jitter_stddev_ms = if offsets.len() > 1 {
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let var = offsets.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>()
            / (offsets.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(KeystrokeReport {
        detected_times: detected.to_vec(),
        delta_t,
        false_negatives: fn_ as u32,
        false_positives: fp as u32,
        f1,
        jitter_stddev_ms,
        n_true_positive: tp as u32,
    })
}

/// Postprocessing defaults found to filter all integer-queue traces well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessParams {
    pub t_idle_ms: f64,
    pub n_min: usize,
    pub match_window_ms: f64,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        PostprocessParams {
            t_idle_ms: 0.1,
            n_min: 10,
            match_window_ms: 50.0,
        }
    }
}

/// Full attack parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub n_keys: u32,
    pub gap_range_ms: (f64, f64),
    pub sampling_interval_ms: f64,
    pub noise: NoiseParams,
    pub post: PostprocessParams,
    pub align: AlignParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            n_keys: 100,
            gap_range_ms: (150.0, 300.0),
            sampling_interval_ms: 0.08,
            noise: NoiseParams::default(),
            post: PostprocessParams::default(),
            align: AlignParams::default(),
        }
    }
}

/// One full observation + recovery run on a single queue.
pub fn run_pipeline(
    config: &MachineConfig,
    queue: QueueId,
    seed: u64,
    params: &PipelineParams,
) -> Result<(GroundTruth, ContentionTrace, KeystrokeReport)> {
    let truth = generate_ground_truth(seed, params.n_keys, params.gap_range_ms, &params.noise)?;
    let burst = BurstParams::default_for(queue);
    let trace = simulate_observer_trace(
        config,
        &truth,
        queue,
        params.sampling_interval_ms,
        &burst,
        seed,
    )?;
    let clusters = cluster(&trace, params.post.t_idle_ms)?;
    let detected = filter_clusters(&clusters, params.post.n_min);
    let delta_t = align_with(&detected, &truth.keystroke_times, &params.align)?;
    let report = score(
        &detected,
        &truth.keystroke_times,
        delta_t,
        params.post.match_window_ms,
    )?;
    Ok((truth, trace, report))
}

/// Matched-offset histogram in (bin center, count) layout.
pub fn jitter_histogram(offsets: &[f64], bin_width_ms: f64) -> Vec<(f64, u32)> {
    let mut bins: BTreeMap<i64, u32> = BTreeMap::new();
    for &o in offsets {
        let idx = (o / bin_width_ms).round() as i64;
        *bins.entry(idx).or_insert(0) += 1;
    }
    bins.into_iter()
        .map(|(idx, count)| (idx as f64 * bin_width_ms, count))
        .collect()
}

/// Matched offsets (detected + delta_t - truth) for histogramming.
pub fn matched_offsets(report: &KeystrokeReport, truth: &[f64]) -> Vec<f64> {
    report
        .detected_times
        .iter()
        .map(|&d| {
            let s = d + report.delta_t;
            s - nearest(truth, s)
        })
        .filter(|o| o.abs() <= 50.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uarch::{load_machine_config, Machine};

    #[test]
    fn ground_truth_is_seeded_and_in_range() {
        let noise = NoiseParams::default();
        let a = generate_ground_truth(5, 100, (150.0, 300.0), &noise).unwrap();
        let b = generate_ground_truth(5, 100, (150.0, 300.0), &noise).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.keystroke_times.len(), 100);
        let mut prev = 0.0;
        for &t in &a.keystroke_times {
            let gap = t - prev;
            assert!((150.0..=300.0).contains(&gap), "gap {gap}");
            prev = t;
        }
        let empty = generate_ground_truth(5, 0, (150.0, 300.0), &noise).unwrap();
        assert!(empty.keystroke_times.is_empty());
        assert!(generate_ground_truth(5, 3, (300.0, 150.0), &noise).is_err());
    }

    #[test]
    fn cluster_splits_on_gaps_above_threshold() {
        let trace = ContentionTrace {
            activity_timestamps: vec![0.0, 0.05, 0.10, 0.50],
            queue: QueueId::Int1,
        };
        let clusters = cluster(&trace, 0.1).unwrap();
        assert_eq!(clusters, vec![vec![0.0, 0.05, 0.10], vec![0.50]]);

        // A gap of exactly t_idle stays in the same cluster.
        let trace = ContentionTrace {
            activity_timestamps: vec![0.0, 0.1],
            queue: QueueId::Int1,
        };
        assert_eq!(cluster(&trace, 0.1).unwrap().len(), 1);

        let empty = ContentionTrace {
            activity_timestamps: vec![],
            queue: QueueId::Int1,
        };
        assert!(cluster(&empty, 0.1).unwrap().is_empty());
        assert!(cluster(&empty, -1.0).is_err());
    }

    #[test]
    fn filter_keeps_boundary_sized_clusters() {
        let nine: Vec<f64> = (0..9).map(|i| i as f64 * 0.05).collect();
        let ten: Vec<f64> = (0..10).map(|i| 100.0 + i as f64 * 0.05).collect();
        let detected = filter_clusters(&[nine, ten], 10);
        assert_eq!(detected, vec![100.0]);
    }

    #[test]
    fn postprocess_recovers_the_example_bursts() {
        // Two dense bursts survive, two single samples are dropped.
        let mut ts: Vec<f64> = Vec::new();
        let mut t = 1434.0;
        while t <= 1448.0 {
            ts.push(t);
            t += 0.08;
        }
        ts.push(1551.0);
        let mut t = 1645.0;
        while t <= 1659.0 {
            ts.push(t);
            t += 0.08;
        }
        ts.push(1679.0);
        let trace = ContentionTrace {
            activity_timestamps: ts,
            queue: QueueId::Int3,
        };
        let detected = filter_clusters(&cluster(&trace, 0.1).unwrap(), 10);
        assert_eq!(detected, vec![1434.0, 1645.0]);
    }

    #[test]
    fn alignment_recovers_a_pure_shift() {
        let truth: Vec<f64> = (1..=20).map(|i| i as f64 * 200.0).collect();
        let detected: Vec<f64> = truth.iter().map(|t| t + 7.0).collect();
        let dt = align(&detected, &truth).unwrap();
        assert!((dt + 7.0).abs() < 0.1 + 1e-9, "dt = {dt}");
        let dt0 = align(&truth, &truth).unwrap();
        assert_eq!(dt0, 0.0);
        assert!(align(&[], &truth).is_err());
        assert!(align(&truth, &[]).is_err());
    }

    #[test]
    fn score_matches_the_f1_arithmetic() {
        let truth: Vec<f64> = (1..=100).map(|i| i as f64 * 200.0).collect();
        // One miss, no extras.
        let detected: Vec<f64> = truth[..99].to_vec();
        let report = score(&detected, &truth, 0.0, 50.0).unwrap();
        assert_eq!(report.false_negatives, 1);
        assert_eq!(report.false_positives, 0);
        assert_eq!((report.f1 * 1000.0).round() / 1000.0, 0.995);

        // No misses, one extra.
        let mut with_extra = truth.clone();
        with_extra.push(50.0);
        with_extra.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let report = score(&with_extra, &truth, 0.0, 50.0).unwrap();
        assert_eq!(report.false_negatives, 0);
        assert_eq!(report.false_positives, 1);
        assert_eq!((report.f1 * 1000.0).round() / 1000.0, 0.995);

        // Perfect detection.
        let report = score(&truth, &truth, 0.0, 50.0).unwrap();
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.jitter_stddev_ms, 0.0);
        assert_eq!(report.n_true_positive, 100);
    }

    #[test]
    fn observer_trace_turns_keystrokes_into_clusters() {
        let cfg = load_machine_config(Machine::Zen3).unwrap();
        let truth = GroundTruth {
            keystroke_times: vec![1434.0],
            mouse_bursts: vec![],
            noise_events: vec![],
        };
        let burst = BurstParams {
            key_burst_ms: (14.0, 16.0),
            response_jitter_ms: 0.0,
            noise_samples: (3, 8),
        };
        let trace = simulate_observer_trace(&cfg, &truth, QueueId::Int3, 0.08, &burst, 9).unwrap();
        assert!(trace.activity_timestamps.len() >= 10);
        // First sample lands on the grid point at or right after the burst start.
        assert!((trace.activity_timestamps[0] - 1434.0).abs() <= 0.08 + 1e-9);
        let detected = filter_clusters(&cluster(&trace, 0.1).unwrap(), 10);
        assert_eq!(detected.len(), 1);
        assert!((detected[0] - 1434.0).abs() < 0.1);
    }

    #[test]
    fn observer_trace_noise_is_removed_by_the_size_filter() {
        let cfg = load_machine_config(Machine::Zen3).unwrap();
        let truth = GroundTruth {
            keystroke_times: vec![],
            mouse_bursts: vec![],
            noise_events: vec![500.0],
        };
        let burst = BurstParams::default_for(QueueId::Int1);
        let trace = simulate_observer_trace(&cfg, &truth, QueueId::Int1, 0.08, &burst, 3).unwrap();
        assert!(!trace.activity_timestamps.is_empty());
        let clusters = cluster(&trace, 0.1).unwrap();
        assert_eq!(clusters.len(), 1);
        assert!(clusters[0].len() < 10, "noise stays below the filter");
        assert!(filter_clusters(&clusters, 10).is_empty());

        let empty_truth = GroundTruth {
            keystroke_times: vec![],
            mouse_bursts: vec![],
            noise_events: vec![],
        };
        let trace =
            simulate_observer_trace(&cfg, &empty_truth, QueueId::Int1, 0.08, &burst, 3).unwrap();
        assert!(trace.activity_timestamps.is_empty());
    }

    #[test]
    fn mouse_bursts_become_long_clusters() {
        let cfg = load_machine_config(Machine::Zen3).unwrap();
        let truth = GroundTruth {
            keystroke_times: vec![200.0],
            mouse_bursts: vec![(1000.0, 120.0)],
            noise_events: vec![],
        };
        let burst = BurstParams {
            key_burst_ms: (14.0, 16.0),
            response_jitter_ms: 0.0,
            noise_samples: (3, 8),
        };
        let trace = simulate_observer_trace(&cfg, &truth, QueueId::Int1, 0.08, &burst, 5).unwrap();
        let clusters = cluster(&trace, 0.1).unwrap();
        assert_eq!(clusters.len(), 2);
        let key_len = clusters[0].len();
        let mouse_len = clusters[1].len();
        assert!(
            mouse_len > 5 * key_len,
            "mouse cluster ({mouse_len}) should dwarf a keystroke cluster ({key_len})"
        );
    }

    #[test]
    fn fp_queues_are_rejected_for_observation() {
        let cfg = load_machine_config(Machine::Zen3).unwrap();
        let truth = GroundTruth {
            keystroke_times: vec![100.0],
            mouse_bursts: vec![],
            noise_events: vec![],
        };
        let burst = BurstParams::default_for(QueueId::Int0);
        assert!(simulate_observer_trace(&cfg, &truth, QueueId::Fp0, 0.08, &burst, 1).is_err());
    }

    #[test]
    fn end_to_end_run_is_accurate_on_every_integer_queue() {
        let cfg = load_machine_config(Machine::Zen3).unwrap();
        for queue in QueueId::INT {
            let (truth, _, report) =
                run_pipeline(&cfg, queue, 42, &PipelineParams::default()).unwrap();
            assert_eq!(truth.keystroke_times.len(), 100);
            assert!(report.f1 >= 0.995, "{queue}: f1 = {}", report.f1);
            assert!(
                report.jitter_stddev_ms <= 4.0,
                "{queue}: jitter = {}",
                report.jitter_stddev_ms
            );
        }
    }
}
