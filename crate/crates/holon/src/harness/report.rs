//! CSV report files.
//!
//! Layout under the output directory:
//!
//! - `latency.csv`: `time_s,partition,window,latency_s`
//! - `throughput.csv`: `time_s,events_per_s`
//! - `summary.csv`: `metric,value` (average/p99 latency, totals, horizon,
//!   sensitivity when a baseline was available)
//! - `output/results.csv`: canonical deduplicated result lines
//! - `output/<partition>.csv`: per-partition result lines in log order
//! - `raw/<partition>.log`: binary output log (length-prefixed frames)
//!
//! An empty run writes headers only. Under the sim driver the whole tree is
//! byte-reproducible for a fixed scenario and seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::harness::sim::ScenarioOutcome;
use crate::harness::{dedup_partition_stream, HarnessError};
use crate::stream_log::{LoggedTopic, PartitionId, Record};

fn fmt(value: f64) -> String {
    format!("{value:.6}")
}

/// Write every report file for a finished run.
pub fn write_reports(outcome: &ScenarioOutcome, out_dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir)?;
    let report = &outcome.report;
    let empty_run = report.total_consumed == 0 && report.samples.is_empty();

    let mut latency = String::from("time_s,partition,window,latency_s\n");
    let mut rows: Vec<&crate::harness::LatencySample> = report.samples.iter().collect();
    rows.sort_by(|a, b| {
        (a.first_emit_s, &a.partition, a.window)
            .partial_cmp(&(b.first_emit_s, &b.partition, b.window))
            .expect("finite sample times")
    });
    for s in rows {
        latency.push_str(&format!(
            "{},{},{},{}\n",
            fmt(s.first_emit_s),
            s.partition,
            s.window,
            fmt(s.latency_s)
        ));
    }
    fs::write(out_dir.join("latency.csv"), latency)?;

    let mut throughput = String::from("time_s,events_per_s\n");
    for (t, v) in &report.throughput {
        throughput.push_str(&format!("{},{}\n", fmt(*t), fmt(*v)));
    }
    fs::write(out_dir.join("throughput.csv"), throughput)?;

    let mut summary = String::from("metric,value\n");
    if !empty_run {
        if let (Some(avg), Some(p99)) = (report.latency_avg_s, report.latency_p99_s) {
            summary.push_str(&format!("latency_avg_s,{}\n", fmt(avg)));
            summary.push_str(&format!("latency_p99_s,{}\n", fmt(p99)));
        }
        summary.push_str(&format!("total_events,{}\n", report.total_consumed));
        summary.push_str(&format!("horizon_s,{}\n", fmt(report.horizon_s)));
        if let Some(s) = &report.sensitivity {
            summary.push_str(&format!("sensitivity_area,{}\n", fmt(s.area)));
            summary.push_str(&format!("sensitivity_peak,{}\n", fmt(s.peak)));
            summary.push_str(&format!("sensitivity_duration_s,{}\n", fmt(s.duration_s)));
        }
    }
    fs::write(out_dir.join("summary.csv"), summary)?;

    let output_dir = out_dir.join("output");
    fs::create_dir_all(&output_dir)?;
    write_results_file(&outcome.deduped, &output_dir.join("results.csv"))?;
    for (p, records) in &outcome.outputs {
        let deduped = dedup_partition_stream(records)?;
        let mut file = fs::File::create(output_dir.join(format!("{p}.csv")))?;
        for (offset, record) in deduped.iter().enumerate() {
            match &record.meta {
                Some(tag) => writeln!(
                    file,
                    "{},{},{}",
                    tag.partition,
                    tag.window,
                    record.payload_str()
                )?,
                None => writeln!(file, "{p},{offset},{}", record.payload_str())?,
            }
        }
    }

    let raw = raw_topic(&outcome.outputs);
    raw.persist_to_dir(&out_dir.join("raw"))?;
    Ok(())
}

fn raw_topic(outputs: &BTreeMap<PartitionId, Vec<Record>>) -> LoggedTopic {
    let topic = LoggedTopic::new("output", outputs.keys().cloned());
    for (p, records) in outputs {
        topic.append(p, records).expect("known partition");
    }
    topic
}

/// One result line per row, no header; the shared format of run outputs and
/// oracle ground truth, compared byte-for-byte by `diff`.
pub fn write_results_file(lines: &[String], path: &Path) -> Result<(), HarnessError> {
    let mut text = String::new();
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_results_file(path: &Path) -> Result<Vec<String>, HarnessError> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{MetricsReport, ScenarioOutcome};

    fn empty_outcome() -> ScenarioOutcome {
        ScenarioOutcome {
            report: MetricsReport::default(),
            outputs: BTreeMap::new(),
            deduped: Vec::new(),
            end_units: 0,
            final_states: BTreeMap::new(),
            watermark_trace: Vec::new(),
            completed: true,
        }
    }

    #[test]
    fn empty_run_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        write_reports(&empty_outcome(), dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("latency.csv")).unwrap(),
            "time_s,partition,window,latency_s\n"
        );
        assert_eq!(
            fs::read_to_string(dir.path().join("throughput.csv")).unwrap(),
            "time_s,events_per_s\n"
        );
        assert_eq!(
            fs::read_to_string(dir.path().join("summary.csv")).unwrap(),
            "metric,value\n"
        );
    }

    #[test]
    fn results_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let lines = vec!["a,0,x".to_string(), "b,1,y".to_string()];
        let path = dir.path().join("results.csv");
        write_results_file(&lines, &path).unwrap();
        assert_eq!(read_results_file(&path).unwrap(), lines);
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let err = write_reports(&empty_outcome(), Path::new("/proc/no/such/dir")).unwrap_err();
        assert!(matches!(err, HarnessError::Io(_)));
    }
}
