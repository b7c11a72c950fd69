//! Run settings: defaults, then command-line flags, then the config file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use ivote_core::bruteforce::DEFAULT_PRICE_PER_CORE_HOUR;
use ivote_core::crypto::SchemeParams;
use ivote_core::sim::{ProxyMode, Recovery, SimConfig};
use serde::Deserialize;
use toml::Spanned;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub workers: usize,
    pub sample: u64,
    pub iterations: u32,
    pub price_per_core_hour: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    pub target: Option<String>,
    pub parallelism: usize,
    pub timeout: Duration,
    pub forbid_coverage: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub sim: SimConfig,
    pub bench: BenchSettings,
    pub scan: ScanSettings,
    pub out: Option<PathBuf>,
    /// Where proxy transcripts go, as JSON Lines.
    pub transcripts: Option<PathBuf>,
    pub json: bool,
    /// Crack progress as JSON Lines on stderr.
    pub progress: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            bench: BenchSettings {
                workers: 1,
                sample: 2000,
                iterations: sim.params.iterations,
                price_per_core_hour: DEFAULT_PRICE_PER_CORE_HOUR,
            },
            sim,
            scan: ScanSettings {
                target: None,
                parallelism: 8,
                timeout: Duration::from_secs(5),
                forbid_coverage: false,
            },
            out: None,
            transcripts: None,
            json: false,
            progress: false,
        }
    }
}

/// Values given on the command line. `None` leaves the default.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub voters: Option<usize>,
    pub pin_digits: Option<usize>,
    pub id_digits: Option<usize>,
    pub iterations: Option<u32>,
    pub workers: Option<usize>,
    pub proxy: Option<ProxyMode>,
    pub out: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub json: bool,
    pub progress: bool,
    pub targets: Option<usize>,
    pub recovery: Option<Recovery>,
    pub unknown_id: bool,
    pub budget_secs: Option<f64>,
    pub slow_voters: Option<usize>,
    pub other_device: Option<usize>,
    pub sample: Option<u64>,
    pub price: Option<f64>,
    pub target: Option<String>,
    pub parallelism: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub forbid_coverage: bool,
}

/// A problem with a setting; `line` is set when it came from the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.file, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<Spanned<u64>>,
    voters: Option<Spanned<usize>>,
    pin_digits: Option<Spanned<usize>>,
    id_digits: Option<Spanned<usize>>,
    iterations: Option<Spanned<u32>>,
    workers: Option<Spanned<usize>>,
    proxy: Option<Spanned<String>>,
    out: Option<Spanned<String>>,
    transcripts: Option<Spanned<String>>,
    json: Option<Spanned<bool>>,
    progress: Option<Spanned<bool>>,
    revote: Option<Spanned<bool>>,
    targets: Option<Spanned<usize>>,
    recovery: Option<Spanned<String>>,
    known_id: Option<Spanned<bool>>,
    crack_budget_secs: Option<Spanned<f64>>,
    slow_voters: Option<Spanned<usize>>,
    other_device: Option<Spanned<usize>>,
    sample: Option<Spanned<u64>>,
    price_per_core_hour: Option<Spanned<f64>>,
    target: Option<Spanned<String>>,
    parallelism: Option<Spanned<usize>>,
    timeout_ms: Option<Spanned<u64>>,
    forbid_coverage: Option<Spanned<bool>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Settings {
    pub fn resolve(flags: &Overrides, file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        s.apply_flags(flags);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
                file: Some(path.to_owned()),
                line: None,
                message: e.to_string(),
            })?;
            s.apply_file(path, &text)?;
        } else {
            s.check(None, |_| None)?;
        }
        Ok(s)
    }

    fn apply_flags(&mut self, f: &Overrides) {
        let sim = &mut self.sim;
        set(&mut sim.seed, f.seed);
        set(&mut sim.voters, f.voters);
        set(&mut sim.params.pin_digits, f.pin_digits);
        set(&mut sim.params.id_digits, f.id_digits);
        set(&mut sim.params.iterations, f.iterations);
        set(&mut self.bench.iterations, f.iterations);
        set(&mut sim.workers, f.workers);
        set(&mut self.bench.workers, f.workers);
        set(&mut sim.proxy, f.proxy);
        set(&mut sim.targets, f.targets);
        set(&mut sim.recovery, f.recovery);
        sim.known_id &= !f.unknown_id;
        if f.budget_secs.is_some() {
            sim.crack_budget_secs = f.budget_secs;
        }
        set(&mut sim.slow_voters, f.slow_voters);
        set(&mut sim.other_device, f.other_device);
        set(&mut self.bench.sample, f.sample);
        set(&mut self.bench.price_per_core_hour, f.price);
        if f.target.is_some() {
            self.scan.target = f.target.clone();
        }
        set(&mut self.scan.parallelism, f.parallelism);
        set(&mut self.scan.timeout, f.timeout_ms.map(Duration::from_millis));
        self.scan.forbid_coverage |= f.forbid_coverage;
        if f.out.is_some() {
            self.out = f.out.clone();
        }
        if f.transcripts.is_some() {
            self.transcripts = f.transcripts.clone();
        }
        self.json |= f.json;
        self.progress |= f.progress;
    }

    fn apply_file(&mut self, path: &Path, text: &str) -> Result<(), ConfigError> {
        let err = |line: Option<usize>, message: String| ConfigError {
            file: Some(path.to_owned()),
            line,
            message,
        };
        let fc: FileConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            err(line, e.message().to_owned())
        })?;
        let mut lines: Vec<(&'static str, usize)> = Vec::new();
        macro_rules! take {
            ($field:ident => $($dst:expr),+) => {
                if let Some(v) = fc.$field {
                    lines.push((stringify!($field), line_of(text, v.span().start)));
                    let v = v.into_inner();
                    $( $dst = v; )+
                }
            };
        }
        take!(seed => self.sim.seed);
        take!(voters => self.sim.voters);
        take!(pin_digits => self.sim.params.pin_digits);
        take!(id_digits => self.sim.params.id_digits);
        take!(iterations => self.sim.params.iterations, self.bench.iterations);
        take!(workers => self.sim.workers, self.bench.workers);
        take!(revote => self.sim.revote);
        take!(targets => self.sim.targets);
        take!(known_id => self.sim.known_id);
        take!(slow_voters => self.sim.slow_voters);
        take!(other_device => self.sim.other_device);
        take!(sample => self.bench.sample);
        take!(price_per_core_hour => self.bench.price_per_core_hour);
        take!(parallelism => self.scan.parallelism);
        take!(forbid_coverage => self.scan.forbid_coverage);
        take!(json => self.json);
        take!(progress => self.progress);
        if let Some(v) = fc.crack_budget_secs {
            lines.push(("crack_budget_secs", line_of(text, v.span().start)));
            self.sim.crack_budget_secs = Some(v.into_inner());
        }
        if let Some(v) = fc.timeout_ms {
            lines.push(("timeout_ms", line_of(text, v.span().start)));
            self.scan.timeout = Duration::from_millis(v.into_inner());
        }
        if let Some(v) = fc.target {
            lines.push(("target", line_of(text, v.span().start)));
            self.scan.target = Some(v.into_inner());
        }
        if let Some(v) = fc.out {
            lines.push(("out", line_of(text, v.span().start)));
            self.out = Some(PathBuf::from(v.into_inner()));
        }
        if let Some(v) = fc.transcripts {
            lines.push(("transcripts", line_of(text, v.span().start)));
            self.transcripts = Some(PathBuf::from(v.into_inner()));
        }
        if let Some(v) = fc.proxy {
            let line = line_of(text, v.span().start);
            self.sim.proxy = v.get_ref().parse().map_err(|m| err(Some(line), m))?;
        }
        if let Some(v) = fc.recovery {
            let line = line_of(text, v.span().start);
            self.sim.recovery = parse_recovery(v.get_ref()).map_err(|m| err(Some(line), m))?;
        }
        let line_for = |field: &str| lines.iter().find(|(f, _)| *f == field).map(|(_, l)| *l);
        self.check(Some(path), line_for)
    }

    /// Checks each setting on its own so a failure names one field. The
    /// file is only named when the bad value came from it.
    fn check(&self, file: Option<&Path>, line_for: impl Fn(&str) -> Option<usize>) -> Result<(), ConfigError> {
        let fail = |field: &str, message: String| {
            let line = line_for(field);
            Err(ConfigError {
                file: line.and(file).map(Path::to_owned),
                line,
                message: format!("{field}: {message}"),
            })
        };
        let p = self.sim.params;
        let d = SchemeParams::default();
        for (field, trial) in [
            (
                "pin_digits",
                SchemeParams {
                    pin_digits: p.pin_digits,
                    ..d
                },
            ),
            (
                "id_digits",
                SchemeParams {
                    id_digits: p.id_digits,
                    ..d
                },
            ),
            (
                "iterations",
                SchemeParams {
                    iterations: p.iterations,
                    ..d
                },
            ),
        ] {
            if let Err(e) = trial.validate() {
                return fail(field, e.to_string());
            }
        }
        if self.sim.voters == 0 {
            return fail("voters", "must be at least 1".into());
        }
        if self.sim.workers == 0 {
            return fail("workers", "must be at least 1".into());
        }
        if self.sim.slow_voters > self.sim.voters {
            return fail("slow_voters", "cannot exceed voters".into());
        }
        if self.sim.other_device > self.sim.voters {
            return fail("other_device", "cannot exceed voters".into());
        }
        if let Some(b) = self.sim.crack_budget_secs {
            if !(b.is_finite() && b > 0.0) {
                return fail("crack_budget_secs", "must be a positive number of seconds".into());
            }
        }
        if self.bench.sample == 0 {
            return fail("sample", "must be at least 1".into());
        }
        if !(self.bench.price_per_core_hour.is_finite() && self.bench.price_per_core_hour >= 0.0) {
            return fail("price_per_core_hour", "must be a non-negative number".into());
        }
        if self.scan.parallelism == 0 {
            return fail("parallelism", "must be at least 1".into());
        }
        if self.scan.timeout.is_zero() {
            return fail("timeout_ms", "must be positive".into());
        }
        Ok(())
    }
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

pub fn parse_recovery(s: &str) -> Result<Recovery, String> {
    match s {
        "inject" => Ok(Recovery::Inject),
        "crack" => Ok(Recovery::Crack),
        _ => Err(format!("unknown recovery {s:?} (inject, crack)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(flags: &Overrides, text: &str) -> Result<Settings, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        Settings::resolve(flags, Some(&path)).map_err(|e| ConfigError { file: None, ..e })
    }

    #[test]
    fn file_overrides_flags() {
        let flags = Overrides {
            seed: Some(3),
            voters: Some(40),
            iterations: Some(100),
            ..Overrides::default()
        };
        let s = resolve(&flags, "voters = 7\nproxy = \"passive\"\n").unwrap();
        assert_eq!(s.sim.seed, 3);
        assert_eq!(s.sim.voters, 7);
        assert_eq!(s.sim.params.iterations, 100);
        assert_eq!(s.bench.iterations, 100);
        assert_eq!(s.sim.proxy, ProxyMode::Passive);
    }

    #[test]
    fn errors_name_the_line() {
        let e = resolve(&Overrides::default(), "seed = 1\n\nvoters = 0\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.starts_with("voters"));

        let e = resolve(&Overrides::default(), "seed = 1\nproxy = \"loud\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));

        let e = resolve(&Overrides::default(), "seed = 1\nvoterz = 3\n").unwrap_err();
        assert_eq!(e.line, Some(2));

        let e = resolve(&Overrides::default(), "pin_digits = 0\n").unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn bad_flags_have_no_line() {
        let flags = Overrides {
            workers: Some(0),
            ..Overrides::default()
        };
        let e = Settings::resolve(&flags, None).unwrap_err();
        assert_eq!((e.file, e.line), (None, None));
    }
}
