//! Segment-level device diarization from the posterior timeline.

use serde::{Deserialize, Serialize};

use super::PosteriorTimeline;

/// A maximal run of frames attributed to one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarizationSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub device_index: usize,
}

/// Per-frame argmax (ties go to the lowest index), adjacent equal labels
/// merged, and segments shorter than `min_dur_s` absorbed into the longer
/// neighbor.
pub fn diarize(timeline: &PosteriorTimeline, min_dur_s: f64) -> Vec<DiarizationSegment> {
    let period = timeline.frame_period_s;
    // (label, first frame time, frame count)
    let mut runs: Vec<(usize, f64, usize)> = Vec::new();
    for e in &timeline.entries {
        let mut best = 0;
        for (i, v) in e.p.iter().enumerate() {
            if *v > e.p[best] {
                best = i;
            }
        }
        match runs.last_mut() {
            Some((label, _, count)) if *label == best => *count += 1,
            _ => runs.push((best, e.time_s, 1)),
        }
    }

    // Absorb short runs into the longer neighbor (ties prefer the earlier
    // one), re-merging equal neighbors as labels change.
    if min_dur_s > 0.0 {
        loop {
            let victim = runs
                .iter()
                .position(|&(_, _, count)| (count as f64) * period < min_dur_s);
            let Some(i) = victim else { break };
            if runs.len() == 1 {
                break;
            }
            let take_left = if i == 0 {
                false
            } else if i + 1 == runs.len() {
                true
            } else {
                runs[i - 1].2 >= runs[i + 1].2
            };
            if take_left {
                runs[i - 1].2 += runs[i].2;
                runs.remove(i);
            } else {
                let (_, start, count) = runs[i];
                runs[i + 1].1 = start;
                runs[i + 1].2 += count;
                runs.remove(i);
            }
            // Merge newly adjacent equal labels.
            let mut j = 1;
            while j < runs.len() {
                if runs[j].0 == runs[j - 1].0 {
                    runs[j - 1].2 += runs[j].2;
                    runs.remove(j);
                } else {
                    j += 1;
                }
            }
        }
    }

    runs.into_iter()
        .map(|(label, start, count)| DiarizationSegment {
            start_s: start,
            end_s: start + count as f64 * period,
            device_index: label,
        })
        .collect()
}

/// RTTM-style lines: `SPEAKER <id> 1 <start> <dur> <NA> <NA> dev<m> <NA> <NA>`.
pub fn format_rttm(segments: &[DiarizationSegment], recording_id: &str) -> String {
    let mut out = String::new();
    for s in segments {
        out.push_str(&format!(
            "SPEAKER {recording_id} 1 {:.3} {:.3} <NA> <NA> dev{} <NA> <NA>\n",
            s.start_s,
            s.end_s - s.start_s,
            s.device_index
        ));
    }
    out
}
