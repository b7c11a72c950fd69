use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{fast, search, CrackError, CrackOptions, Keyspace};
use crate::crypto::LoginId;

/// USD per core-hour implied by $0.11 for 420 s on a 20-core machine.
pub const DEFAULT_PRICE_PER_CORE_HOUR: f64 = 0.11 / (420.0 / 3600.0 * 20.0);
pub const KNOWN_ID_PINS: u64 = 1_000_000;
pub const FULL_SPACE_IDS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub workers: usize,
    pub sample_candidates: u64,
    pub iterations: u32,
    pub price_per_core_hour: f64,
}

impl BenchConfig {
    pub fn new(workers: usize, sample_candidates: u64) -> Self {
        Self {
            workers,
            sample_candidates,
            iterations: crate::crypto::creds::DEFAULT_ITERATIONS,
            price_per_core_hour: DEFAULT_PRICE_PER_CORE_HOUR,
        }
    }
}

/// Time and money to cover the known-id and full spaces at a given rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub iterations_per_sec: f64,
    pub cores: usize,
    pub known_id_secs: f64,
    pub known_id_cost_usd: f64,
    pub full_space_secs: f64,
    pub full_space_cost_usd: f64,
}

/// Extrapolates from a PBKDF2-iteration rate achieved on `cores` cores.
/// The known-id space is `10^6 * iterations` operations.
pub fn extrapolate(iterations_per_sec: f64, iterations: u32, cores: usize, price_per_core_hour: f64) -> Extrapolation {
    let known_ops = KNOWN_ID_PINS as f64 * iterations as f64;
    let known_id_secs = known_ops / iterations_per_sec;
    let full_space_secs = known_id_secs * FULL_SPACE_IDS as f64;
    let cost = |secs: f64| secs / 3600.0 * cores as f64 * price_per_core_hour;
    Extrapolation {
        iterations_per_sec,
        cores,
        known_id_secs,
        known_id_cost_usd: cost(known_id_secs),
        full_space_secs,
        full_space_cost_usd: cost(full_space_secs),
    }
}

/// Measured throughput in three accounting conventions plus
/// extrapolations. Everything but the rates and `elapsed_secs` is
/// determined by the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workers: usize,
    pub available_cores: usize,
    pub iterations: u32,
    pub sample_candidates: u64,
    pub elapsed_secs: f64,
    /// Whole PBKDF2 evaluations (one per candidate) per second.
    pub candidates_per_sec: f64,
    /// PBKDF2 iterations, i.e. HMAC-SHA1 invocations, per second.
    pub hashes_per_second: f64,
    pub sha1_compressions_per_sec: f64,
    pub per_core_hashes_per_second: f64,
    pub price_per_core_hour: f64,
    pub extrapolation: Extrapolation,
}

pub fn benchmark(workers: usize, sample_candidates: u64) -> Result<BenchReport, CrackError> {
    benchmark_with(&BenchConfig::new(workers, sample_candidates))
}

/// Runs the search loop over the first `sample_candidates` PINs of a fixed
/// id against a target that matches none of them.
pub fn benchmark_with(cfg: &BenchConfig) -> Result<BenchReport, CrackError> {
    if cfg.sample_candidates == 0 {
        return Err(CrackError::Invalid("sample_candidates must be positive".into()));
    }
    let ks = Keyspace::fixed("00000000", 12, cfg.iterations);
    let limit = cfg.sample_candidates.min(ks.candidates()?);
    let unreachable = LoginId::from_bytes(&[0xff; 16]);
    let opts = CrackOptions {
        workers: cfg.workers,
        unit_size: (limit / (cfg.workers as u64 * 8)).clamp(1, super::DEFAULT_UNIT_SIZE),
        deadline: None,
        progress_every: Duration::from_secs(3600),
    };
    let r = search(&unreachable, &ks, limit, &opts, &mut |_| {})?;
    let secs = r.elapsed.as_secs_f64().max(f64::MIN_POSITIVE);
    let candidates_per_sec = r.tried as f64 / secs;
    let hashes_per_second = candidates_per_sec * cfg.iterations as f64;
    Ok(BenchReport {
        workers: cfg.workers,
        available_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        iterations: cfg.iterations,
        sample_candidates: r.tried,
        elapsed_secs: secs,
        candidates_per_sec,
        hashes_per_second,
        sha1_compressions_per_sec: candidates_per_sec * fast::compressions_per_candidate(cfg.iterations) as f64,
        per_core_hashes_per_second: hashes_per_second / cfg.workers as f64,
        price_per_core_hour: cfg.price_per_core_hour,
        extrapolation: extrapolate(hashes_per_second, cfg.iterations, cfg.workers, cfg.price_per_core_hour),
    })
}
