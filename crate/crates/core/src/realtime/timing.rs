use serde::{Deserialize, Serialize};

/// Timing of one real-time step. All durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub t_sim: f64,
    /// Integration only (events, network solves and device derivatives).
    pub calc_time: f64,
    /// Wall time from the start of this step to the start of the next.
    pub loop_time: f64,
    pub overrun: bool,
    /// Active wall time minus ideal wall time, at the end of the step.
    pub drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub steps: u64,
    pub dt: f64,
    pub mean_calc: f64,
    pub max_calc: f64,
    pub p99_calc: f64,
    /// Mean of `|loop_time - dt/speed|`.
    pub mean_jitter: f64,
    pub overruns: u64,
    pub overrun_fraction: f64,
    pub final_drift: f64,
    pub max_abs_drift: f64,
}

impl std::fmt::Display for TimingSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} steps at dt = {} ms: calc mean {:.3} ms, p99 {:.3} ms, max {:.3} ms; \
             jitter {:.3} ms; overruns {} ({:.2} %); drift {:.3} ms (max {:.3} ms)",
            self.steps,
            self.dt * 1e3,
            self.mean_calc * 1e3,
            self.p99_calc * 1e3,
            self.max_calc * 1e3,
            self.mean_jitter * 1e3,
            self.overruns,
            self.overrun_fraction * 100.0,
            self.final_drift * 1e3,
            self.max_abs_drift * 1e3,
        )
    }
}

/// Per-step timing log of a real-time run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub dt: f64,
    pub records: Vec<StepRecord>,
    /// `dt / speed` in force for each record, for the jitter figure.
    #[serde(skip)]
    ideal: Vec<f64>,
}

impl TimingStats {
    pub fn new(dt: f64) -> Self {
        Self { dt, records: Vec::new(), ideal: Vec::new() }
    }

    pub(crate) fn push(&mut self, rec: StepRecord, ideal_loop: f64) {
        self.records.push(rec);
        self.ideal.push(ideal_loop);
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn summary(&self) -> TimingSummary {
        let n = self.records.len();
        let mut calc: Vec<f64> = self.records.iter().map(|r| r.calc_time).collect();
        calc.sort_by(f64::total_cmp);
        let mean = |v: &mut dyn Iterator<Item = f64>| if n == 0 { 0.0 } else { v.sum::<f64>() / n as f64 };
        let p99 = if n == 0 { 0.0 } else { calc[((n as f64 * 0.99).ceil() as usize).clamp(1, n) - 1] };
        let overruns = self.records.iter().filter(|r| r.overrun).count() as u64;
        let ideal = |k: usize| self.ideal.get(k).copied().unwrap_or(self.dt);
        TimingSummary {
            steps: n as u64,
            dt: self.dt,
            mean_calc: mean(&mut calc.iter().copied()),
            max_calc: calc.last().copied().unwrap_or(0.0),
            p99_calc: p99,
            mean_jitter: mean(&mut self.records.iter().enumerate().map(|(k, r)| (r.loop_time - ideal(k)).abs())),
            overruns,
            overrun_fraction: if n == 0 { 0.0 } else { overruns as f64 / n as f64 },
            final_drift: self.records.last().map_or(0.0, |r| r.drift),
            max_abs_drift: self.records.iter().map(|r| r.drift.abs()).fold(0.0, f64::max),
        }
    }
}
