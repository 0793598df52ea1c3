use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Mean per-ray losses over one logging interval ending at `iteration`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub color_loss: f64,
    pub depth_loss: f64,
}

impl LogRecord {
    pub fn total(&self) -> f64 {
        self.color_loss + self.depth_loss
    }
}

/// Replaced (tool, tissue) pixel counts per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementEvent {
    pub iteration: usize,
    pub replaced: Vec<(usize, usize)>,
}

/// Loss history and refinement record. Wall-clock times are kept apart so
/// the rest of the log is reproducible bit for bit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub refinement: Option<RefinementEvent>,
    /// Seconds since training began, one per record.
    pub wall_seconds: Vec<f64>,
}

impl TrainLog {
    pub(crate) fn push(&mut self, record: LogRecord, seconds: f64) {
        self.records.push(record);
        self.wall_seconds.push(seconds);
    }

    /// Tab-separated loss table followed by refinement rows.
    ///
    /// ```text
    /// iteration  color_loss  depth_loss
    /// ...
    /// refine_iteration  frame  replaced_fg  replaced_bg
    /// ...
    /// ```
    ///
    /// Floats use Rust's shortest round-trip formatting.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("iteration\tcolor_loss\tdepth_loss\n");
        for r in &self.records {
            let _ = writeln!(s, "{}\t{:?}\t{:?}", r.iteration, r.color_loss, r.depth_loss);
        }
        if let Some(ev) = &self.refinement {
            s.push_str("refine_iteration\tframe\treplaced_fg\treplaced_bg\n");
            for (k, (fg, bg)) in ev.replaced.iter().enumerate() {
                let _ = writeln!(s, "{}\t{}\t{}\t{}", ev.iteration, k + 1, fg, bg);
            }
        }
        s
    }

    pub fn timing_tsv(&self) -> String {
        let mut s = String::from("iteration\twall_seconds\n");
        for (r, t) in self.records.iter().zip(&self.wall_seconds) {
            let _ = writeln!(s, "{}\t{t:.3}", r.iteration);
        }
        s
    }

    /// Mean total loss over the records whose iteration falls in the first
    /// and last `fraction` of `iterations`.
    pub fn early_late_means(&self, iterations: usize, fraction: f64) -> Option<(f64, f64)> {
        let cut = (iterations as f64 * fraction).round() as usize;
        let mean = |f: &dyn Fn(usize) -> bool| {
            let v: Vec<f64> = self.records.iter().filter(|r| f(r.iteration)).map(LogRecord::total).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some((mean(&|i| i <= cut)?, mean(&|i| i > iterations - cut)?))
    }
}
