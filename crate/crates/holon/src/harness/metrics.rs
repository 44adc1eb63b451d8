//! Latency, throughput, and sensitivity metrics.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::harness::HarnessError;
use crate::runtime::RunObserver;
use crate::stream_log::PartitionId;

/// Completion latency of one window on one partition, in seconds of driver
/// time: the first emission of the window's result minus the window's end
/// boundary mapped onto the driver clock (the moment the last enabling
/// input event was ingested).
#[derive(Debug, Clone, PartialEq)]
pub struct LatencySample {
    pub window: u64,
    pub partition: PartitionId,
    pub window_end_s: f64,
    pub first_emit_s: f64,
    pub latency_s: f64,
}

/// Area-based deviation of a failure run from its baseline, with the
/// auxiliary (non-normative) decompositions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    /// Integral of the positive latency deviation over the horizon.
    pub area: f64,
    /// Peak positive deviation.
    pub peak: f64,
    /// Total time the deviation was positive.
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    /// Sorted by (window, partition).
    pub samples: Vec<LatencySample>,
    pub latency_avg_s: Option<f64>,
    pub latency_p99_s: Option<f64>,
    /// `(bucket start second, events per second)`, one-second buckets,
    /// non-empty buckets only.
    pub throughput: Vec<(f64, f64)>,
    /// Unique input events consumed (duplicated work counts once).
    pub total_consumed: u64,
    pub horizon_s: f64,
    pub sensitivity: Option<Sensitivity>,
}

#[derive(Default)]
struct SinkInner {
    high_water: BTreeMap<PartitionId, u64>,
    bucket_counts: BTreeMap<u64, u64>,
    first_emit: BTreeMap<(PartitionId, u64), u64>,
}

/// Thread-safe metrics collector fed by the runtime observer hooks.
///
/// Input consumption counts unique offset advancement per partition, so a
/// partition processed twice (work stealing, recovery replay) still counts
/// each event once.
pub struct MetricsSink {
    tick_seconds: f64,
    inner: Mutex<SinkInner>,
}

impl MetricsSink {
    pub fn new(tick_seconds: f64) -> Self {
        Self {
            tick_seconds,
            inner: Mutex::new(SinkInner::default()),
        }
    }

    pub fn total_consumed(&self) -> u64 {
        self.inner
            .lock()
            .expect("sink lock")
            .high_water
            .values()
            .sum()
    }

    pub fn high_water(&self, p: &PartitionId) -> u64 {
        self.inner
            .lock()
            .expect("sink lock")
            .high_water
            .get(p)
            .copied()
            .unwrap_or(0)
    }

    /// Assemble the report. `window_ends` maps each window to the driver
    /// time (clock units) its inputs were fully ingested; pass an empty map
    /// to skip latency accounting.
    pub fn finalize(&self, window_ends: &BTreeMap<u64, u64>, horizon_units: u64) -> MetricsReport {
        let inner = self.inner.lock().expect("sink lock");
        let mut samples: Vec<LatencySample> = Vec::new();
        for ((p, w), emit) in &inner.first_emit {
            let Some(end) = window_ends.get(w) else {
                continue;
            };
            let latency_units = emit.saturating_sub(*end);
            samples.push(LatencySample {
                window: *w,
                partition: p.clone(),
                window_end_s: *end as f64 * self.tick_seconds,
                first_emit_s: *emit as f64 * self.tick_seconds,
                latency_s: latency_units as f64 * self.tick_seconds,
            });
        }
        samples.sort_by(|a, b| (a.window, &a.partition).cmp(&(b.window, &b.partition)));

        let latencies: Vec<f64> = samples.iter().map(|s| s.latency_s).collect();
        let (latency_avg_s, latency_p99_s) = match compute_percentiles(&latencies) {
            Ok((avg, p99)) => (Some(avg), Some(p99)),
            Err(_) => (None, None),
        };

        let throughput = inner
            .bucket_counts
            .iter()
            .map(|(bucket, count)| (*bucket as f64, *count as f64))
            .collect();

        MetricsReport {
            samples,
            latency_avg_s,
            latency_p99_s,
            throughput,
            total_consumed: inner.high_water.values().sum(),
            horizon_s: horizon_units as f64 * self.tick_seconds,
            sensitivity: None,
        }
    }
}

impl RunObserver for MetricsSink {
    fn consumed(&self, p: &PartitionId, _from: u64, to: u64, now: u64) {
        let mut inner = self.inner.lock().expect("sink lock");
        let hw = inner.high_water.entry(p.clone()).or_insert(0);
        if to > *hw {
            let delta = to - *hw;
            *hw = to;
            let bucket = (now as f64 * self.tick_seconds).floor() as u64;
            *inner.bucket_counts.entry(bucket).or_insert(0) += delta;
        }
    }

    fn emitted(&self, p: &PartitionId, window: u64, now: u64) {
        let mut inner = self.inner.lock().expect("sink lock");
        inner.first_emit.entry((p.clone(), window)).or_insert(now);
    }
}

/// Arithmetic mean and nearest-rank 99th percentile (the
/// `ceil(0.99 * n)`-th order statistic).
pub fn compute_percentiles(samples: &[f64]) -> Result<(f64, f64), HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptySamples);
    }
    let avg = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).max(1);
    let p99 = sorted[rank - 1];
    Ok((avg, p99))
}

/// Latency-over-time curve of a report: `(emit time, latency)` samples
/// sorted by time, keeping the worst latency at equal times.
pub fn latency_curve(report: &MetricsReport) -> Vec<(f64, f64)> {
    let mut points: Vec<(f64, f64)> = report
        .samples
        .iter()
        .map(|s| (s.first_emit_s, s.latency_s))
        .collect();
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for (t, v) in points {
        match curve.last_mut() {
            Some((lt, lv)) if *lt == t => *lv = lv.max(v),
            _ => curve.push((t, v)),
        }
    }
    curve
}

fn step_value(curve: &[(f64, f64)], t: f64) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let mut value = curve[0].1;
    for (time, v) in curve {
        if *time <= t {
            value = *v;
        } else {
            break;
        }
    }
    value
}

/// Area between a failure run's curve and the baseline curve over a common
/// horizon: both curves are resampled by step interpolation onto the union
/// grid, the deviation is clipped at zero, and integrated with the
/// trapezoidal rule. Mismatched horizons are an error.
pub fn compute_sensitivity(
    failure: &[(f64, f64)],
    failure_horizon_s: f64,
    baseline: &[(f64, f64)],
    baseline_horizon_s: f64,
) -> Result<Sensitivity, HarnessError> {
    if (failure_horizon_s - baseline_horizon_s).abs() > 1e-9 {
        return Err(HarnessError::MismatchedHorizons {
            left: failure_horizon_s,
            right: baseline_horizon_s,
        });
    }
    let mut grid: Vec<f64> = failure
        .iter()
        .chain(baseline.iter())
        .map(|(t, _)| *t)
        .chain([0.0, failure_horizon_s])
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    grid.dedup();
    grid.retain(|t| *t <= failure_horizon_s + 1e-12);

    let diff_at = |t: f64| (step_value(failure, t) - step_value(baseline, t)).max(0.0);
    let mut area = 0.0;
    let mut peak: f64 = 0.0;
    let mut duration = 0.0;
    for pair in grid.windows(2) {
        let (t0, t1) = (pair[0], pair[1]);
        let (d0, d1) = (diff_at(t0), diff_at(t1));
        area += (d0 + d1) / 2.0 * (t1 - t0);
        peak = peak.max(d0).max(d1);
        if d0 > 1e-12 {
            duration += t1 - t0;
        }
    }
    Ok(Sensitivity {
        area,
        peak,
        duration_s: duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_follow_nearest_rank() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (avg, p99) = compute_percentiles(&samples).unwrap();
        assert!((avg - 50.5).abs() < 1e-9);
        assert_eq!(p99, 99.0);
    }

    #[test]
    fn single_sample_is_both_avg_and_p99() {
        let (avg, p99) = compute_percentiles(&[0.25]).unwrap();
        assert_eq!(avg, 0.25);
        assert_eq!(p99, 0.25);
    }

    #[test]
    fn equal_samples_collapse() {
        let (avg, p99) = compute_percentiles(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(avg, 2.0);
        assert_eq!(p99, 2.0);
    }

    #[test]
    fn empty_samples_are_an_error() {
        assert!(matches!(
            compute_percentiles(&[]),
            Err(HarnessError::EmptySamples)
        ));
    }

    #[test]
    fn sensitivity_of_a_square_pulse() {
        let baseline = vec![(0.0, 0.1), (10.0, 0.1)];
        let failure = vec![(0.0, 0.1), (2.0, 1.1), (4.0, 0.1), (10.0, 0.1)];
        let s = compute_sensitivity(&failure, 10.0, &baseline, 10.0).unwrap();
        assert!((s.area - 2.0).abs() < 1e-9, "area {}", s.area);
        assert!((s.peak - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_curves_have_zero_sensitivity() {
        let curve = vec![(0.0, 0.3), (5.0, 0.6), (9.0, 0.2)];
        let s = compute_sensitivity(&curve, 10.0, &curve, 10.0).unwrap();
        assert_eq!(s.area, 0.0);
        assert_eq!(s.peak, 0.0);
    }

    #[test]
    fn negative_deviation_is_clipped() {
        let baseline = vec![(0.0, 1.0), (10.0, 1.0)];
        let failure = vec![(0.0, 0.2), (10.0, 0.2)];
        let s = compute_sensitivity(&failure, 10.0, &baseline, 10.0).unwrap();
        assert_eq!(s.area, 0.0);
    }

    #[test]
    fn mismatched_horizons_are_an_error() {
        let a = vec![(0.0, 0.1)];
        assert!(matches!(
            compute_sensitivity(&a, 10.0, &a, 12.0),
            Err(HarnessError::MismatchedHorizons { .. })
        ));
    }

    #[test]
    fn consumption_counts_unique_offsets_once() {
        let sink = MetricsSink::new(1.0);
        let p = PartitionId::new("p000").unwrap();
        sink.consumed(&p, 0, 10, 0);
        // A duplicate execution replays the same offsets.
        sink.consumed(&p, 0, 10, 1);
        sink.consumed(&p, 10, 12, 2);
        assert_eq!(sink.total_consumed(), 12);
    }
}
