//! Policy ingestion benchmark.
//!
//! For each capsule count `n`, `n` policies are drawn as random clause
//! subsets of a regulation's clause pool. One iteration times parsing the
//! analysis program, folding the `n` policies with the policy join, and
//! computing the residual of the result.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::lattice::Lattices;
use crate::parser::{parse_dnf, PolicyParseError, SourcePolicy, GDPR_POLICY};
use crate::policy::{PolicyClause, PolicyDnf};
use crate::program::{abstract_interpret, parse_program, CapsuleEnv, CapsuleId, Schema};
use crate::residual::{ingest, residual_policy};

pub const HIPAA_POOL: &str = include_str!("../data/policies/hipaa.priv");
pub const FERPA_POOL: &str = include_str!("../data/policies/ferpa.priv");
pub const CCPA_POOL: &str = include_str!("../data/policies/ccpa.priv");

/// Bundled regulation pools by name.
pub const BUNDLED_POOLS: [(&str, &str); 4] = [
    ("gdpr", GDPR_POLICY),
    ("hipaa", HIPAA_POOL),
    ("ferpa", FERPA_POOL),
    ("ccpa", CCPA_POOL),
];

/// Program parsed and analyzed in every iteration.
pub const BENCH_PROGRAM: &str = "dpCount(1.0, 1e-6, project({zip}, filter(age > 17, getDC(c1))))";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("capsule counts must all be at least 2")]
    CountTooSmall,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("no regulation pools")]
    NoPools,
    #[error("subset size distribution: {0}")]
    Distribution(String),
    #[error(transparent)]
    Policy(#[from] PolicyParseError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

/// The distinct DNF clauses of one regulation.
#[derive(Clone, Debug)]
pub struct Pool {
    pub name: String,
    pub clauses: Vec<PolicyClause>,
}

impl Pool {
    pub fn parse(name: &str, text: &str, lattices: &Lattices) -> Result<Self, PolicyParseError> {
        let dnf = parse_dnf(&SourcePolicy::new(text, name), lattices)?;
        Ok(Self {
            name: name.to_string(),
            clauses: dnf.clauses().cloned().collect(),
        })
    }

    pub fn bundled(lattices: &Lattices) -> Vec<Pool> {
        BUNDLED_POOLS
            .iter()
            .map(|(name, text)| Pool::parse(name, text, lattices).expect("bundled pools parse"))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub pools: Vec<Pool>,
    pub counts: Vec<usize>,
    /// Mean subset size; defaults to half the pool.
    pub mean: Option<f64>,
    /// Subset size standard deviation; defaults to a quarter of the pool.
    pub stddev: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
}

/// 2, 4, ..., 1024.
pub fn default_counts() -> Vec<usize> {
    (1..=10).map(|k| 1usize << k).collect()
}

impl BenchConfig {
    pub fn new(pools: Vec<Pool>) -> Self {
        Self {
            pools,
            counts: default_counts(),
            mean: None,
            stddev: None,
            iterations: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.pools.is_empty() {
            return Err(BenchError::NoPools);
        }
        if self.counts.iter().any(|&n| n < 2) || self.counts.is_empty() {
            return Err(BenchError::CountTooSmall);
        }
        if self.iterations < 1 {
            return Err(BenchError::NoIterations);
        }
        if self.mean.is_some_and(|m| !m.is_finite())
            || self.stddev.is_some_and(|s| !(s.is_finite() && s >= 0.0))
        {
            return Err(BenchError::Distribution(
                "mean and stddev must be finite, stddev non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub regulation: String,
    pub n: usize,
    pub iteration: usize,
    pub parse_ms: f64,
    pub ingest_ms: f64,
    pub residual_ms: f64,
    pub distinct_clauses: usize,
}

/// Draws `n` policies, each a random subset of the pool whose size follows
/// a normal distribution clamped to `[1, pool size]`.
pub fn generate_policies(
    pool: &Pool,
    n: usize,
    mean: f64,
    stddev: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<PolicyDnf> {
    let size = pool.clauses.len();
    let normal = Normal::new(mean, stddev).expect("validated parameters");
    (0..n)
        .map(|_| {
            let k = (normal.sample(rng).round() as i64).clamp(1, size as i64) as usize;
            let picked = sample(rng, size, k)
                .into_iter()
                .map(|i| pool.clauses[i].clone());
            PolicyDnf::new(picked).expect("k >= 1")
        })
        .collect()
}

fn iteration_seed(seed: u64, pool: usize, n: usize, iteration: usize) -> u64 {
    seed ^ ((pool as u64) << 56) ^ ((n as u64) << 20) ^ iteration as u64
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Runs every (pool, n, iteration) combination in order on the calling
/// thread, passing each row to `on_row` as it completes.
pub fn run_bench(
    cfg: &BenchConfig,
    lattices: &Lattices,
    mut on_row: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>, BenchError> {
    cfg.validate()?;
    let env = CapsuleEnv::from([(
        CapsuleId::new("c1"),
        Schema::new([("age", "AgeBucket"), ("zip", "Region"), ("name", "Name")])
            .expect("unique fields"),
    )]);
    let mut rows = Vec::new();
    for (pi, pool) in cfg.pools.iter().enumerate() {
        let size = pool.clauses.len() as f64;
        let mean = cfg.mean.unwrap_or(size / 2.0);
        let stddev = cfg.stddev.unwrap_or(size / 4.0);
        for &n in &cfg.counts {
            for iteration in 0..cfg.iterations {
                let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(cfg.seed, pi, n, iteration));
                let policies = generate_policies(pool, n, mean, stddev, &mut rng);

                let t = Instant::now();
                let program = parse_program(BENCH_PROGRAM).expect("bench program parses");
                let parse_ms = ms(t);

                let t = Instant::now();
                let joined = ingest(&policies, lattices).expect("n >= 2");
                let ingest_ms = ms(t);

                let t = Instant::now();
                let effect = abstract_interpret(&env, &program, lattices)
                    .expect("bench program is well formed")
                    .effect;
                let residual = residual_policy(&joined, &effect, lattices);
                let residual_ms = ms(t);
                std::hint::black_box(&residual);

                let row = BenchRow {
                    regulation: pool.name.clone(),
                    n,
                    iteration,
                    parse_ms,
                    ingest_ms,
                    residual_ms,
                    distinct_clauses: joined.len(),
                };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Column order of the CSV report.
pub const CSV_HEADER: [&str; 7] = [
    "regulation",
    "n",
    "iteration",
    "parse_ms",
    "ingest_ms",
    "residual_ms",
    "distinct_clauses",
];

pub struct CsvReport<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvReport<W> {
    pub fn new(out: W) -> Result<Self, BenchError> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        writer.write_record(CSV_HEADER).map_err(csv_io)?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, row: &BenchRow) -> Result<(), BenchError> {
        self.writer.serialize(row).map_err(csv_io)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> BenchError {
    BenchError::Io(std::io::Error::other(e.to_string()))
}
