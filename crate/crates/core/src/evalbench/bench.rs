use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fusion::{fuse_all, observation_partition, partition_observations, FusionMode};
use crate::model::{Config, MaskObservation};
use crate::roomseg::RoomSet;

pub const MIN_RUNS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTiming {
    pub mode: FusionMode,
    pub median: Duration,
    pub runs: Vec<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rooms: usize,
    pub observations: usize,
    pub instances: usize,
    pub workers: usize,
    pub timings: Vec<ModeTiming>,
}

fn median(v: &[Duration]) -> Duration {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2
    }
}

impl BenchReport {
    pub fn median(&self, mode: FusionMode) -> Option<Duration> {
        self.timings.iter().find(|t| t.mode == mode).map(|t| t.median)
    }

    /// Time saved relative to fully serial fusion, in percent.
    pub fn speedup_percent(&self, mode: FusionMode) -> Option<f64> {
        let base = self.median(FusionMode::SerialGlobal)?.as_secs_f64();
        let t = self.median(mode)?.as_secs_f64();
        (base > 0.0).then(|| (base - t) / base * 100.0)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {} rooms, {} observations, {} instances, {} workers",
            self.rooms, self.observations, self.instances, self.workers
        );
        let _ = writeln!(s, "{:<14} {:>12} {:>10}", "mode", "median_ms", "speedup_%");
        for t in &self.timings {
            let sp = self.speedup_percent(t.mode).map_or("n/a".into(), |v| format!("{v:.1}"));
            let _ = writeln!(
                s,
                "{:<14} {:>12.3} {:>10}",
                t.mode.as_str(),
                t.median.as_secs_f64() * 1e3,
                sp
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,median_ms,speedup_percent,rooms,observations,workers\n");
        for t in &self.timings {
            let sp = self
                .speedup_percent(t.mode)
                .map_or(String::new(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{},{:.6},{},{},{},{}",
                t.mode.as_str(),
                t.median.as_secs_f64() * 1e3,
                sp,
                self.rooms,
                self.observations,
                self.workers
            );
        }
        s
    }
}

/// Times the fusion stage (room partitioning through instance output) per
/// mode: one untimed warm-up, then the median of `runs` timed runs. Every
/// mode must produce the same partition of observations into instances.
pub fn bench_fusion(
    obs: &[MaskObservation],
    rooms: &RoomSet,
    cfg: &Config,
    modes: &[FusionMode],
    runs: usize,
) -> Result<BenchReport> {
    let runs = runs.max(MIN_RUNS);
    let mut timings = Vec::new();
    let mut reference: Option<(FusionMode, Vec<Vec<crate::model::ObsKey>>)> = None;
    let mut instances = 0;
    for &mode in modes {
        let once = || -> Result<(Duration, Vec<crate::model::Instance>)> {
            let input = obs.to_vec();
            let t = Instant::now();
            let queues = partition_observations(input, rooms)?;
            let out = fuse_all(&queues, cfg, mode)?;
            Ok((t.elapsed(), out.instances))
        };
        let (_, warm) = once()?;
        let part = observation_partition(&warm);
        match &reference {
            Some((m, p)) if *p != part => {
                return Err(Error::ModeMismatch(format!("{mode} differs from {m}")));
            }
            Some(_) => {}
            None => {
                instances = warm.len();
                reference = Some((mode, part));
            }
        }
        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            times.push(once()?.0);
        }
        timings.push(ModeTiming {
            mode,
            median: median(&times),
            runs: times,
        });
    }
    Ok(BenchReport {
        rooms: rooms.len(),
        observations: obs.len(),
        instances,
        workers: cfg.workers,
        timings,
    })
}
