//! Wall-clock measurement with warmup, used by the microbenchmarks and the
//! compute-coefficient estimate.

use std::time::Instant;

use crate::error::{Error, Result};

/// Summary over `runs` timed executions after `warmup` discarded ones.
#[derive(Clone, Copy, Debug)]
pub struct TimingStats {
    pub runs: usize,
    pub warmup: usize,
    pub mean_s: f64,
    pub min_s: f64,
}

/// Execute `f` `warmup + runs` times; average the last `runs` wall-clock
/// durations.
pub fn time_runs(runs: usize, warmup: usize, mut f: impl FnMut()) -> Result<TimingStats> {
    if runs == 0 {
        return Err(Error::InvalidArgument("timing needs at least one run".into()));
    }
    for _ in 0..warmup {
        f();
    }
    let mut total = 0.0f64;
    let mut min = f64::INFINITY;
    for _ in 0..runs {
        let start = Instant::now();
        f();
        let dt = start.elapsed().as_secs_f64();
        total += dt;
        min = min.min(dt);
    }
    Ok(TimingStats { runs, warmup, mean_s: total / runs as f64, min_s: min })
}
