//! Single-prediction timing with interleaved repetitions.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::Predictor;
use crate::linalg::Vector;

pub const DEFAULT_WARMUP: usize = 100;
pub const DEFAULT_REPS: usize = 1000;
pub const MIN_REPS: usize = 30;
/// Distinct seeded inputs cycled through during timing.
const INPUT_POOL: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Time batches of this many inputs and report per-input time.
    pub batch: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: DEFAULT_REPS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            batch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub variant: String,
    pub reps: usize,
    pub median_us: f64,
    pub p25_us: f64,
    pub p75_us: f64,
    pub flops: usize,
    /// Baseline (first variant) median over this variant's median.
    pub speedup_vs_baseline: f64,
}

pub const BENCH_HEADER: &str = "variant,reps,median_us,p25_us,p75_us,flops,speedup";

pub fn bench_csv(reports: &[BenchReport]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in reports {
        let variant = if r.variant.contains([',', '"', '\n']) {
            format!("\"{}\"", r.variant.replace('"', "\"\""))
        } else {
            r.variant.clone()
        };
        writeln!(
            s,
            "{variant},{},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.reps, r.median_us, r.p25_us, r.p75_us, r.flops, r.speedup_vs_baseline
        )
        .expect("writing to a String");
    }
    s
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Time every model on the same seeded inputs. After `warmup` untimed
/// calls each, repetitions are interleaved across models so drift in
/// machine state hits all of them alike.
pub fn bench_predict(models: &[(&str, &dyn Predictor)], opts: &BenchOptions) -> Result<Vec<BenchReport>> {
    let Some(&(_, first)) = models.first() else {
        return Err(Error::Config("nothing to benchmark".into()));
    };
    if opts.reps < MIN_REPS {
        return Err(Error::Config(format!("at least {MIN_REPS} repetitions needed, got {}", opts.reps)));
    }
    if opts.batch == Some(0) {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let d = first.input_len();
    for (_, m) in models {
        if m.input_len() != d {
            return Err(Error::dim("bench_predict input length", d, m.input_len()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pool: Vec<Vector> = (0..INPUT_POOL).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
    let batch = opts.batch.unwrap_or(1);

    let run = |m: &dyn Predictor, start: usize| -> Result<()> {
        for n in 0..batch {
            black_box(m.logits(black_box(&pool[(start + n) % INPUT_POOL]))?);
        }
        Ok(())
    };
    for (_, m) in models {
        for w in 0..opts.warmup {
            run(*m, w)?;
        }
    }
    let mut samples = vec![Vec::with_capacity(opts.reps); models.len()];
    for rep in 0..opts.reps {
        for (n, (_, m)) in models.iter().enumerate() {
            let start = Instant::now();
            run(*m, rep * batch)?;
            samples[n].push(start.elapsed().as_secs_f64() * 1e6 / batch as f64);
        }
    }

    let mut reports: Vec<BenchReport> = models
        .iter()
        .zip(samples.iter_mut())
        .map(|((name, m), s)| {
            s.sort_by(f64::total_cmp);
            BenchReport {
                variant: (*name).to_string(),
                reps: opts.reps,
                median_us: quantile(s, 0.5),
                p25_us: quantile(s, 0.25),
                p75_us: quantile(s, 0.75),
                flops: m.flops(),
                speedup_vs_baseline: 1.0,
            }
        })
        .collect();
    let base = reports[0].median_us;
    for r in &mut reports {
        r.speedup_vs_baseline = base / r.median_us;
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{AffineMap, DenseMatrix};

    #[test]
    fn quantiles() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&d, 0.5), 3.0);
        assert_eq!(quantile(&d, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn reports_are_ordered_and_named() {
        let a = AffineMap::identity(16);
        let b = AffineMap::new(DenseMatrix::zeros(3, 16), Vector::zeros(3)).unwrap();
        let opts = BenchOptions {
            reps: 40,
            warmup: 5,
            seed: 1,
            batch: None,
        };
        let r = bench_predict(&[("a", &a), ("b", &b)], &opts).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].speedup_vs_baseline, 1.0);
        for x in &r {
            assert!(x.p25_us <= x.median_us && x.median_us <= x.p75_us);
            assert_eq!(x.reps, 40);
        }
        assert_eq!(r[1].flops, 3 * 16 + 3);
        let csv = bench_csv(&r);
        assert!(csv.starts_with(BENCH_HEADER));
        assert_eq!(csv.lines().count(), 3);
        let batched = BenchOptions { batch: Some(8), ..opts };
        assert_eq!(bench_predict(&[("a", &a)], &batched).unwrap().len(), 1);
    }

    #[test]
    fn rejects_bad_requests() {
        let a = AffineMap::identity(4);
        let b = AffineMap::identity(5);
        let opts = BenchOptions {
            reps: 30,
            ..BenchOptions::default()
        };
        assert!(matches!(bench_predict(&[("a", &a), ("b", &b)], &opts), Err(Error::Dimension { .. })));
        let few = BenchOptions { reps: 29, ..opts };
        assert!(matches!(bench_predict(&[("a", &a)], &few), Err(Error::Config(_))));
        assert!(matches!(bench_predict(&[], &opts), Err(Error::Config(_))));
    }

    #[test]
    fn csv_quotes_awkward_names() {
        let r = BenchReport {
            variant: "a,b".into(),
            reps: 30,
            median_us: 1.0,
            p25_us: 1.0,
            p75_us: 1.0,
            flops: 1,
            speedup_vs_baseline: 1.0,
        };
        assert!(bench_csv(&[r]).lines().nth(1).unwrap().starts_with("\"a,b\","));
    }
}
