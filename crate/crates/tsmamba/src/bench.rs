//! Wall-clock scaling of the selective scan against softmax attention.
//!
//! Each implementation is timed at every sequence length; the reported time
//! is the median over `repeats` runs after one discarded warm-up run. A run
//! times a batch of calls sized so the batch takes at least
//! [`MIN_RUN`], which keeps coarse timers out of the small lengths. Slopes
//! are least-squares fits of `ln(time)` against `ln(n)`.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use tsmamba_core::attention::AttentionRef;
use tsmamba_core::scan::{self, SsmParams};
use tsmamba_core::Tensor;

use crate::error::{Error, Result};

/// SSM state size used for the scan timings.
pub const SCAN_STATE: usize = 8;

/// Shortest timed batch.
pub const MIN_RUN: Duration = Duration::from_millis(20);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Impl {
    ScanSeq,
    ScanPar,
    AttentionRef,
}

impl Impl {
    pub const ALL: [Impl; 3] = [Impl::ScanSeq, Impl::ScanPar, Impl::AttentionRef];

    pub fn name(self) -> &'static str {
        match self {
            Impl::ScanSeq => "scan_seq",
            Impl::ScanPar => "scan_par",
            Impl::AttentionRef => "attention_ref",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub imp: Impl,
    pub n: usize,
    pub d: usize,
    /// Median nanoseconds per call.
    pub wall_ns: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingResult {
    pub records: Vec<BenchRecord>,
    pub slopes: Vec<(Impl, f64)>,
    pub workers: usize,
}

impl ScalingResult {
    pub fn slope(&self, imp: Impl) -> Option<f64> {
        self.slopes.iter().find(|(i, _)| *i == imp).map(|(_, s)| *s)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("impl,n,d,wall_ns\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{:.0}", r.imp.name(), r.n, r.d, r.wall_ns).expect("string write");
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("workers = {}\n", self.workers);
        for (imp, slope) in &self.slopes {
            writeln!(s, "{}_slope = {slope:.4}", imp.name()).expect("string write");
        }
        s
    }
}

/// Seeded scan input of length `n` and width `d`.
pub fn scan_input(n: usize, d: usize, seed: u64) -> Result<(Tensor, SsmParams)> {
    Ok(scan::random_instance(n, d, SCAN_STATE, &mut tsmamba_core::seeded_rng(seed))?)
}

/// Seeded attention input of length `n` and width `d`.
pub fn attention_input(n: usize, d: usize, seed: u64) -> Result<Tensor> {
    Ok(Tensor::uniform([n, d], -1.0, 1.0, &mut tsmamba_core::seeded_rng(seed))?)
}

/// Median of `repeats` timed batches, in nanoseconds per call.
pub fn median_ns(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut inner = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        if start.elapsed() >= MIN_RUN || inner >= 1 << 20 {
            break;
        }
        inner *= 2;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        times.push(start.elapsed().as_nanos() as f64 / inner as f64);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        (times[mid - 1] + times[mid]) / 2.0
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Config("a slope needs at least two points".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("all lengths are equal".into()));
    }
    Ok(sxy / sxx)
}

/// Powers of two from `n_min` to `n_max` inclusive.
pub fn geometric(n_min: usize, n_max: usize) -> Result<Vec<usize>> {
    if n_min == 0 || !n_min.is_power_of_two() || !n_max.is_power_of_two() || n_min > n_max {
        return Err(Error::Config(format!("lengths {n_min}..{n_max} must be powers of two, ascending")));
    }
    Ok(std::iter::successors(Some(n_min), |&n| (n < n_max).then_some(n * 2)).collect())
}

fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

pub fn time_one(imp: Impl, n: usize, d: usize, repeats: usize, seed: u64) -> Result<f64> {
    match imp {
        Impl::ScanSeq | Impl::ScanPar => {
            let (u, p) = scan_input(n, d, seed)?;
            median_ns(repeats, || {
                let y = match imp {
                    Impl::ScanSeq => scan::selective_scan_seq(&u, &p)?,
                    _ => scan::selective_scan_par(&u, &p)?,
                };
                black_box(y);
                Ok(())
            })
        }
        Impl::AttentionRef => {
            let x = attention_input(n, d, seed)?;
            let att = AttentionRef::new(d, seed);
            median_ns(repeats, || {
                black_box(att.forward(&x)?);
                Ok(())
            })
        }
    }
}

pub fn scaling_run(lengths: &[usize], d: usize, repeats: usize, seed: u64) -> Result<ScalingResult> {
    if d == 0 || repeats == 0 || lengths.is_empty() {
        return Err(Error::Config("need d, repeats and at least one length".into()));
    }
    let mut records = Vec::new();
    let mut slopes = Vec::new();
    for imp in Impl::ALL {
        let mut points = Vec::new();
        for &n in lengths {
            let wall_ns = time_one(imp, n, d, repeats, seed)?;
            log::info!("{} n={n} d={d}: {wall_ns:.0} ns", imp.name());
            points.push((n as f64, wall_ns));
            records.push(BenchRecord { imp, n, d, wall_ns });
        }
        if lengths.len() >= 2 {
            slopes.push((imp, log_log_slope(&points)?));
        }
    }
    for &n in lengths.iter().filter(|&&n| n >= 1 << 12) {
        let t = |imp| records.iter().find(|r| r.imp == imp && r.n == n).map(|r| r.wall_ns);
        if let (Some(seq), Some(par)) = (t(Impl::ScanSeq), t(Impl::ScanPar)) {
            log::info!("n={n}: scan_par/scan_seq = {:.2} with {} worker(s)", par / seq, workers());
        }
    }
    Ok(ScalingResult {
        records,
        slopes,
        workers: workers(),
    })
}
