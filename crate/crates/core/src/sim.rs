//! Seeded end-to-end elections and attack scenarios. One seed fixes every
//! random choice; only crack timing depends on the machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bruteforce::{crack_with, CrackError, CrackOptions, Keyspace, Progress};
use crate::client::{verify_by_phone, Browser, ClientConfig, ClientError, Session};
use crate::clock::SimClock;
use crate::crypto::{Credentials, SchemeParams};
use crate::protocol::{ErrorKind, Local, PreferenceVector, Preferences, Race, Transport};
use crate::proxy::{self, AttackConfig, Proxy, ProxyError, SessionId, Substitution, Transcript};
use crate::server::{ElectionConfig, Server, ServerError, SharedServer};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("voter {identity}: {source}")]
    Client {
        identity: String,
        #[source]
        source: ClientError,
    },
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Server(#[from] ServerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    #[default]
    None,
    /// Relays without keeping bodies.
    Transparent,
    Passive,
    Inject,
}

impl ProxyMode {
    fn attack_config(self) -> Option<AttackConfig> {
        match self {
            Self::None => None,
            Self::Transparent => Some(AttackConfig::default()),
            Self::Passive => Some(AttackConfig::passive()),
            Self::Inject => Some(AttackConfig::injecting()),
        }
    }
}

impl FromStr for ProxyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "transparent" => Ok(Self::Transparent),
            "passive" => Ok(Self::Passive),
            "inject" => Ok(Self::Inject),
            _ => Err(format!("unknown proxy mode {s:?} (none, transparent, passive, inject)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Crack,
    Inject,
    Substitute,
    Link,
    Partials,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Crack => "crack",
            Self::Inject => "inject",
            Self::Substitute => "substitute",
            Self::Link => "link",
            Self::Partials => "partials",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crack" => Ok(Self::Crack),
            "inject" => Ok(Self::Inject),
            "substitute" => Ok(Self::Substitute),
            "link" => Ok(Self::Link),
            "partials" => Ok(Self::Partials),
            _ => Err(format!("unknown scenario {s:?} (crack, inject, substitute, link, partials)")),
        }
    }
}

/// How the attacker gets a victim's iVoteID and PIN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    #[default]
    Inject,
    /// Brute force the login id; with the iVoteID assumed known only PINs
    /// are searched.
    Crack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub voters: usize,
    pub params: SchemeParams,
    pub proxy: ProxyMode,
    /// Try to cast a second time after the first cast.
    pub revote: bool,
    /// Voters singled out by substitute, crack and partials.
    pub targets: usize,
    pub recovery: Recovery,
    /// Crack with the iVoteID known.
    pub known_id: bool,
    pub workers: usize,
    pub crack_budget_secs: Option<f64>,
    /// Voters who take long enough over each field that the profiling
    /// cookie lapses before they finish typing.
    pub slow_voters: usize,
    /// Voters who vote from a different device than they registered on.
    pub other_device: usize,
    pub attacker_prefs: Option<Preferences>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            voters: 10,
            params: SchemeParams::default(),
            proxy: ProxyMode::None,
            revote: true,
            targets: 5,
            recovery: Recovery::Inject,
            known_id: true,
            workers: 1,
            crack_budget_secs: None,
            slow_voters: 0,
            other_device: 0,
            attacker_prefs: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        self.params.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.voters == 0 {
            return bad("voters must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.slow_voters > self.voters || self.other_device > self.voters {
            return bad("slow_voters and other_device cannot exceed voters");
        }
        if let Some(b) = self.crack_budget_secs {
            if !(b.is_finite() && b > 0.0) {
                return bad("crack_budget_secs must be positive");
            }
        }
        Ok(())
    }

    pub fn crack_options(&self) -> CrackOptions {
        CrackOptions {
            deadline: self.crack_budget_secs.map(Duration::from_secs_f64),
            ..CrackOptions::with_workers(self.workers)
        }
    }
}

const SLOW_THINK_MS: u64 = 15_000;

/// A server, its out-of-band delivery, an optional proxy in front, and the
/// seeded randomness voters draw from.
pub struct Election {
    server: SharedServer,
    client: ClientConfig,
    clock: SimClock,
    proxy: Option<Proxy>,
    rng: ChaCha20Rng,
}

impl Election {
    pub fn new(params: SchemeParams, seed: u64, attack: Option<AttackConfig>) -> Result<Self, SimError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let server_seed = rng.gen();
        let proxy_seed = rng.gen();
        let server = SharedServer::new(Server::new(ElectionConfig::sample(params), server_seed)?);
        let clock = SimClock::new();
        let proxy = attack.map(|a| Proxy::new(a, params, clock.clone(), proxy_seed)).transpose()?;
        let client = ClientConfig {
            server_key: server.verifying_key(),
            params,
        };
        Ok(Self {
            server,
            client,
            clock,
            proxy,
            rng,
        })
    }

    pub fn server(&self) -> &SharedServer {
        &self.server
    }

    pub fn client_config(&self) -> &ClientConfig {
        &self.client
    }

    pub fn proxy(&self) -> Option<&Proxy> {
        self.proxy.as_ref()
    }

    pub fn races(&self) -> Vec<Race> {
        self.server.lock().config().races.clone()
    }

    pub fn browser(&mut self) -> Browser {
        Browser::new(self.clock.clone(), self.rng.gen())
    }

    /// A connection to the server, through the proxy when there is one.
    pub fn connect(&self) -> (Box<dyn Transport>, Option<SessionId>) {
        let direct = Local(self.server.clone());
        match &self.proxy {
            Some(p) => {
                let t = p.connect(direct);
                let id = t.session_id();
                (Box::new(t), Some(id))
            }
            None => (Box::new(direct), None),
        }
    }

    /// Registration with a random PIN, then collection of the iVoteID.
    pub fn enrol(&mut self, browser: &mut Browser, identity: &str) -> Result<Credentials, SimError> {
        let params = self.client.params;
        let pin: String = (0..params.pin_digits)
            .map(|_| char::from(b'0' + self.rng.gen_range(0..10u8)))
            .collect();
        let fail = |source| SimError::Client {
            identity: identity.to_owned(),
            source,
        };
        let (mut t, _) = self.connect();
        browser.register(t.as_mut(), identity, &pin).map_err(fail)?;
        let id = self
            .server
            .delivery()
            .collect(identity)
            .ok_or_else(|| SimError::Config(format!("no iVoteID delivered to {identity}")))?;
        Credentials::with_params(&id, &pin, &params).map_err(|e| SimError::Config(e.to_string()))
    }

    /// A random non-empty ranking for every race.
    pub fn random_prefs(&mut self) -> Preferences {
        let races = self.races();
        Preferences::from_vectors(races.iter().map(|r| {
            let mut c: Vec<&str> = r.candidates.iter().map(String::as_str).collect();
            c.shuffle(&mut self.rng);
            let n = self.rng.gen_range(1..=c.len());
            PreferenceVector::new(&r.id, &c[..n])
        }))
    }

    fn sample(&mut self, n: usize, k: usize) -> BTreeSet<usize> {
        index::sample(&mut self.rng, n, k.min(n)).into_iter().collect()
    }

    /// First-preference counts from the ballots the server holds.
    pub fn tally(&self) -> Result<BTreeMap<String, BTreeMap<String, usize>>, SimError> {
        let s = self.server.lock();
        let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for race in &s.config().races {
            out.insert(race.id.clone(), race.candidates.iter().map(|c| (c.clone(), 0)).collect());
        }
        for rec in s.records() {
            let Some(b) = &rec.final_ballot else { continue };
            for v in s.open_ballot(b)?.vectors() {
                if let Some(first) = v.ranking.first() {
                    *out.entry(v.race_id).or_default().entry(first.clone()).or_default() += 1;
                }
            }
        }
        Ok(out)
    }
}

fn identity(i: usize) -> String {
    format!("voter-{i:04}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterOutcome {
    pub identity: String,
    pub receipt: Option<String>,
    pub resumed: bool,
    pub verified: bool,
    pub revote_rejected: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub voters: usize,
    pub params: SchemeParams,
    pub proxy: ProxyMode,
    pub receipts: usize,
    pub unique_receipts: usize,
    pub verified: usize,
    pub revotes_rejected: usize,
    pub failures: usize,
    pub tally: BTreeMap<String, BTreeMap<String, usize>>,
    pub outcomes: Vec<VoterOutcome>,
}

impl SimReport {
    pub fn success(&self) -> bool {
        self.failures == 0 && self.unique_receipts == self.receipts && self.verified == self.voters
    }
}

/// register, login, save a partial per race, log in again, resume, cast,
/// verify by phone, try to vote again.
fn run_voter(
    e: &mut Election,
    browser: &mut Browser,
    creds: &Credentials,
    prefs: &Preferences,
    revote: bool,
) -> Result<VoterOutcome, ClientError> {
    let cfg = e.client;
    let (mut t, _) = e.connect();
    let mut s = browser.login(t.as_mut(), &cfg, creds)?;
    for v in prefs.vectors() {
        s.save_partial(browser, t.as_mut(), v)?;
    }
    let (mut t, _) = e.connect();
    let mut s = browser.login(t.as_mut(), &cfg, creds)?;
    let resumed = s.resume()?;
    let is_resumed = resumed.as_ref() == Some(prefs);
    let receipt = s.cast(browser, t.as_mut(), resumed.as_ref().unwrap_or(prefs))?;
    let verified = verify_by_phone(&mut Local(e.server.clone()), creds, &receipt)? == *prefs;
    let revote_rejected = revote.then(|| is_already_voted(s.cast(browser, t.as_mut(), prefs)));
    Ok(VoterOutcome {
        identity: String::new(),
        receipt: Some(receipt.to_string()),
        resumed: is_resumed,
        verified,
        revote_rejected,
        error: None,
    })
}

fn is_already_voted<T>(r: Result<T, ClientError>) -> bool {
    matches!(r, Err(e) if e.server_kind() == Some(ErrorKind::AlreadyVoted))
}

pub type ProgressSink<'a> = Box<dyn FnMut(&str, &Progress) + 'a>;

/// What a caller can watch during a run: crack progress as it happens and,
/// once the run ends, every transcript the proxy kept.
#[derive(Default)]
pub struct Observer<'a> {
    pub progress: Option<ProgressSink<'a>>,
    pub transcripts: Vec<Transcript>,
}

impl<'a> Observer<'a> {
    pub fn with_progress(f: impl FnMut(&str, &Progress) + 'a) -> Self {
        Self {
            progress: Some(Box::new(f)),
            transcripts: Vec::new(),
        }
    }

    fn report(&mut self, who: &str, p: &Progress) {
        if let Some(f) = self.progress.as_mut() {
            f(who, p);
        }
    }

    fn keep(&mut self, e: &Election) {
        self.transcripts = e.proxy.as_ref().map(Proxy::transcripts).unwrap_or_default();
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimReport, SimError> {
    simulate_observed(cfg, &mut Observer::default())
}

pub fn simulate_observed(cfg: &SimConfig, obs: &mut Observer<'_>) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let mut e = Election::new(cfg.params, cfg.seed, cfg.proxy.attack_config())?;
    let mut outcomes = Vec::with_capacity(cfg.voters);
    for i in 0..cfg.voters {
        let who = identity(i);
        let mut b = e.browser();
        let prefs = e.random_prefs();
        let outcome = e
            .enrol(&mut b, &who)
            .map_err(|err| err.to_string())
            .and_then(|creds| run_voter(&mut e, &mut b, &creds, &prefs, cfg.revote).map_err(|err| err.to_string()));
        outcomes.push(match outcome {
            Ok(o) => VoterOutcome { identity: who, ..o },
            Err(error) => VoterOutcome {
                identity: who,
                receipt: None,
                resumed: false,
                verified: false,
                revote_rejected: None,
                error: Some(error),
            },
        });
    }
    obs.keep(&e);
    let receipts: Vec<&str> = outcomes.iter().filter_map(|o| o.receipt.as_deref()).collect();
    Ok(SimReport {
        seed: cfg.seed,
        voters: cfg.voters,
        params: cfg.params,
        proxy: cfg.proxy,
        receipts: receipts.len(),
        unique_receipts: receipts.iter().collect::<BTreeSet<_>>().len(),
        verified: outcomes.iter().filter(|o| o.verified).count(),
        revotes_rejected: outcomes.iter().filter(|o| o.revote_rejected == Some(true)).count(),
        failures: outcomes.iter().filter(|o| o.error.is_some() || !o.resumed).count(),
        tally: e.tally()?,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metrics {
    Crack {
        targets: usize,
        cracked: usize,
        timed_out: usize,
        /// Candidates tried across all targets.
        tried: u64,
        /// Candidates in each target's space.
        space: u64,
    },
    Inject {
        sessions: usize,
        harvested: usize,
        correct: usize,
        slow_sessions: usize,
        slow_harvested: usize,
        page_length_preserved: bool,
    },
    Substitute {
        targets: usize,
        recovered: usize,
        substituted: usize,
        accepted: usize,
        readback_mismatches: usize,
        untouched_correct: usize,
        untouched: usize,
    },
    Link {
        same_device: usize,
        linked_correct: usize,
        linked_wrong: usize,
        other_device: usize,
        other_device_linked: usize,
    },
    Partials {
        targets: usize,
        recovered: usize,
        full_history: usize,
        last_matches_cast: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub voters: usize,
    pub success: bool,
    pub metrics: Metrics,
    pub problems: Vec<String>,
}

/// Preferences no random voter can end up with: every candidate, in
/// reverse ballot order.
pub fn default_attacker_prefs(races: &[Race]) -> Preferences {
    Preferences::from_vectors(races.iter().map(|r| {
        let c: Vec<&str> = r.candidates.iter().rev().map(String::as_str).collect();
        PreferenceVector::new(&r.id, &c)
    }))
}

pub fn run_attack(cfg: &SimConfig, scenario: Scenario) -> Result<AttackReport, SimError> {
    run_attack_observed(cfg, scenario, &mut Observer::default())
}

pub fn run_attack_observed(cfg: &SimConfig, scenario: Scenario, obs: &mut Observer<'_>) -> Result<AttackReport, SimError> {
    cfg.validate()?;
    let mut problems = Vec::new();
    let metrics = match scenario {
        Scenario::Crack => crack_scenario(cfg, &mut problems, obs)?,
        Scenario::Inject => inject_scenario(cfg, &mut problems, obs)?,
        Scenario::Substitute => substitute_scenario(cfg, &mut problems, obs)?,
        Scenario::Link => link_scenario(cfg, &mut problems, obs)?,
        Scenario::Partials => partials_scenario(cfg, &mut problems, obs)?,
    };
    let success = problems.is_empty()
        && match &metrics {
            Metrics::Crack { targets, cracked, .. } => cracked == targets,
            Metrics::Inject {
                sessions,
                correct,
                harvested,
                slow_harvested,
                page_length_preserved,
                ..
            } => correct == sessions && harvested == correct && *slow_harvested == 0 && *page_length_preserved,
            Metrics::Substitute {
                targets,
                substituted,
                accepted,
                readback_mismatches,
                untouched_correct,
                untouched,
                ..
            } => substituted == targets && accepted == targets && readback_mismatches == substituted && untouched_correct == untouched,
            Metrics::Link {
                same_device,
                linked_correct,
                linked_wrong,
                other_device_linked,
                ..
            } => linked_correct == same_device && *linked_wrong == 0 && *other_device_linked == 0,
            Metrics::Partials {
                targets,
                full_history,
                last_matches_cast,
                ..
            } => full_history == targets && last_matches_cast == targets,
        };
    Ok(AttackReport {
        scenario,
        seed: cfg.seed,
        voters: cfg.voters,
        success,
        metrics,
        problems,
    })
}

fn client_err(who: &str) -> impl Fn(ClientError) -> SimError + '_ {
    move |source| SimError::Client {
        identity: who.to_owned(),
        source,
    }
}

/// Logs in through a fresh connection and returns the session with the
/// connection it used.
fn login(e: &Election, b: &mut Browser, who: &str, creds: &Credentials) -> Result<(Session, Box<dyn Transport>, SessionId), SimError> {
    let (mut t, sid) = e.connect();
    let s = b.login(t.as_mut(), &e.client, creds).map_err(client_err(who))?;
    Ok((s, t, sid.expect("scenarios run behind a proxy")))
}

fn recover(
    e: &Election,
    cfg: &SimConfig,
    who: &str,
    sid: SessionId,
    creds: &Credentials,
    obs: &mut Observer<'_>,
) -> Result<Option<Credentials>, SimError> {
    let proxy = e.proxy.as_ref().expect("scenarios run behind a proxy");
    match cfg.recovery {
        Recovery::Inject => Ok(proxy.recover_by_harvest(sid)?),
        Recovery::Crack => {
            let t = proxy.transcript(sid).ok_or(ProxyError::UnknownSession(sid))?;
            let hint = cfg.known_id.then(|| creds.ivote_id());
            match proxy::crack_session_with(&t, &cfg.params, hint, &cfg.crack_options(), &mut |p| obs.report(who, p)) {
                Ok(c) => {
                    proxy.record_credentials(sid, c.clone());
                    Ok(Some(c))
                }
                Err(ProxyError::Crack(CrackError::TimedOut { .. } | CrackError::NotFound { .. })) => Ok(None),
                Err(err) => Err(err.into()),
            }
        }
    }
}

fn attack_config(cfg: &SimConfig, base: AttackConfig) -> AttackConfig {
    AttackConfig {
        inject: base.inject || cfg.recovery == Recovery::Inject,
        crack_workers: cfg.workers,
        ..base
    }
}

fn crack_scenario(cfg: &SimConfig, problems: &mut Vec<String>, obs: &mut Observer<'_>) -> Result<Metrics, SimError> {
    let mut e = Election::new(
        cfg.params,
        cfg.seed,
        Some(AttackConfig {
            crack_workers: cfg.workers,
            ..AttackConfig::passive()
        }),
    )?;
    let targets = e.sample(cfg.voters, cfg.targets.max(1));
    let (mut cracked, mut timed_out, mut tried) = (0, 0, 0);
    let space_ks = |id: Option<&str>| match id {
        Some(id) => Keyspace::fixed(id, cfg.params.pin_digits as u32, cfg.params.iterations),
        None => Keyspace::all(cfg.params.id_digits as u32, cfg.params.pin_digits as u32, cfg.params.iterations),
    };
    let space = space_ks(cfg.known_id.then_some("0"))
        .candidates()
        .map_err(|err| SimError::Config(err.to_string()))?;
    for i in 0..cfg.voters {
        let who = identity(i);
        let mut b = e.browser();
        let creds = e.enrol(&mut b, &who)?;
        let (_, _, sid) = login(&e, &mut b, &who, &creds)?;
        if !targets.contains(&i) {
            continue;
        }
        let t = e
            .proxy
            .as_ref()
            .and_then(|p| p.transcript(sid))
            .ok_or(ProxyError::UnknownSession(sid))?;
        let Some(target) = proxy::observed_login_ids(&t).into_iter().next() else {
            problems.push(format!("{who}: no login id observed"));
            continue;
        };
        let ks = space_ks(cfg.known_id.then(|| creds.ivote_id()));
        match crack_with(&target, &ks, &cfg.crack_options(), &mut |p| obs.report(&who, p)) {
            Ok(found) => {
                tried += found.tried;
                if found.creds.ivote_id() == creds.ivote_id() && found.creds.pin() == creds.pin() {
                    cracked += 1;
                } else {
                    problems.push(format!("{who}: cracked to the wrong credentials"));
                }
            }
            Err(CrackError::TimedOut { tried: n }) => {
                timed_out += 1;
                tried += n;
                problems.push(format!("{who}: budget ran out after {n} of {space} candidates"));
            }
            Err(err) => problems.push(format!("{who}: {err}")),
        }
    }
    obs.keep(&e);
    Ok(Metrics::Crack {
        targets: targets.len(),
        cracked,
        timed_out,
        tried,
        space,
    })
}

fn inject_scenario(cfg: &SimConfig, problems: &mut Vec<String>, obs: &mut Observer<'_>) -> Result<Metrics, SimError> {
    let mut e = Election::new(cfg.params, cfg.seed, Some(AttackConfig::injecting()))?;
    let slow = e.sample(cfg.voters, cfg.slow_voters);
    let proxy = e.proxy.clone().expect("proxy");
    let (mut harvested, mut correct, mut slow_harvested) = (0, 0, 0);
    let mut page_length_preserved = true;
    let original_len = crate::protocol::page::login_page().len();
    for i in 0..cfg.voters {
        let who = identity(i);
        let mut b = e.browser();
        if slow.contains(&i) {
            b = b.with_think_time(SLOW_THINK_MS);
        }
        let creds = e.enrol(&mut b, &who)?;
        let (mut t, sid) = e.connect();
        let page = b.open_login_page(t.as_mut()).map_err(client_err(&who))?;
        page_length_preserved &= page.len() == original_len;
        b.login(t.as_mut(), &e.client, &creds).map_err(client_err(&who))?;
        let got = proxy.harvest_credentials(sid.expect("proxy"))?;
        if slow.contains(&i) {
            slow_harvested += got.len();
            continue;
        }
        harvested += got.len();
        match got.as_slice() {
            [h] if h.creds == creds => correct += 1,
            [] => problems.push(format!("{who}: nothing harvested")),
            _ => problems.push(format!("{who}: harvested {} pairs, expected the planted one", got.len())),
        }
    }
    obs.keep(&e);
    Ok(Metrics::Inject {
        sessions: cfg.voters - slow.len(),
        harvested,
        correct,
        slow_sessions: slow.len(),
        slow_harvested,
        page_length_preserved,
    })
}

fn substitute_scenario(cfg: &SimConfig, problems: &mut Vec<String>, obs: &mut Observer<'_>) -> Result<Metrics, SimError> {
    let races = ElectionConfig::sample(cfg.params).races;
    let attacker = cfg.attacker_prefs.clone().unwrap_or_else(|| default_attacker_prefs(&races));
    attacker
        .validate(&races)
        .map_err(|err| SimError::Config(format!("attacker preferences: {err}")))?;
    let mut e = Election::new(
        cfg.params,
        cfg.seed,
        Some(attack_config(cfg, AttackConfig::substituting(attacker.clone()))),
    )?;
    let targets = e.sample(cfg.voters, cfg.targets);
    let proxy = e.proxy.clone().expect("proxy");
    let (mut recovered, mut substituted, mut accepted, mut mismatches, mut untouched_correct) = (0, 0, 0, 0, 0);
    for i in 0..cfg.voters {
        let who = identity(i);
        let mut b = e.browser();
        let mut prefs = e.random_prefs();
        while prefs == attacker {
            prefs = e.random_prefs();
        }
        let creds = e.enrol(&mut b, &who)?;
        let (mut s, mut t, sid) = login(&e, &mut b, &who, &creds)?;
        let targeted = targets.contains(&i);
        if targeted {
            match recover(&e, cfg, &who, sid, &creds, obs)? {
                Some(c) if c == creds => {
                    recovered += 1;
                    proxy.substitute_ballot(sid, attacker.clone())?;
                }
                Some(_) => problems.push(format!("{who}: recovered the wrong credentials")),
                None => problems.push(format!("{who}: credentials not recovered")),
            }
        }
        let receipt = s.cast(&mut b, t.as_mut(), &prefs).map_err(client_err(&who))?;
        let readback = verify_by_phone(&mut Local(e.server.clone()), &creds, &receipt).map_err(client_err(&who))?;
        if targeted {
            if let Some(Substitution::Substituted { receipt: r }) = proxy.substitution(sid) {
                substituted += 1;
                if r.as_ref() == Some(&receipt) {
                    accepted += 1;
                }
            } else if let Some(Substitution::PassedThrough { reason }) = proxy.substitution(sid) {
                problems.push(format!("{who}: ballot passed through ({reason})"));
            }
            if readback != prefs {
                mismatches += 1;
                if readback != attacker {
                    problems.push(format!("{who}: read-back is neither the voter's nor the attacker's"));
                }
            }
        } else if readback == prefs {
            untouched_correct += 1;
        } else {
            problems.push(format!("{who}: untargeted read-back mismatch"));
        }
    }
    obs.keep(&e);
    Ok(Metrics::Substitute {
        targets: targets.len(),
        recovered,
        substituted,
        accepted,
        readback_mismatches: mismatches,
        untouched_correct,
        untouched: cfg.voters - targets.len(),
    })
}

fn link_scenario(cfg: &SimConfig, problems: &mut Vec<String>, obs: &mut Observer<'_>) -> Result<Metrics, SimError> {
    let mut e = Election::new(cfg.params, cfg.seed, Some(AttackConfig::passive()))?;
    let switching = e.sample(cfg.voters, cfg.other_device);
    let mut truth = BTreeMap::new();
    for i in 0..cfg.voters {
        let who = identity(i);
        let mut b = e.browser();
        let creds = e.enrol(&mut b, &who)?;
        if switching.contains(&i) {
            b = e.browser();
        }
        let prefs = e.random_prefs();
        let (mut s, mut t, sid) = login(&e, &mut b, &who, &creds)?;
        s.cast(&mut b, t.as_mut(), &prefs).map_err(client_err(&who))?;
        truth.insert(who, sid);
    }
    let links = e.proxy.as_ref().expect("proxy").link_sessions();
    let (mut correct, mut wrong, mut other_linked) = (0, 0, 0);
    for (i, (who, sid)) in truth.iter().enumerate() {
        match links.get(who) {
            Some(got) if switching.contains(&i) => {
                other_linked += 1;
                if got != sid {
                    wrong += 1;
                }
            }
            Some(got) if got == sid => correct += 1,
            Some(_) => wrong += 1,
            None if !switching.contains(&i) => problems.push(format!("{who}: not linked")),
            None => {}
        }
    }
    obs.keep(&e);
    Ok(Metrics::Link {
        same_device: cfg.voters - switching.len(),
        linked_correct: correct,
        linked_wrong: wrong,
        other_device: switching.len(),
        other_device_linked: other_linked,
    })
}

/// Each target saves two different partial votes, casts the second, and
/// the attacker reads the partials back with recovered credentials.
fn partials_scenario(cfg: &SimConfig, problems: &mut Vec<String>, obs: &mut Observer<'_>) -> Result<Metrics, SimError> {
    let base = match cfg.recovery {
        Recovery::Inject => AttackConfig::injecting(),
        Recovery::Crack => AttackConfig::passive(),
    };
    let mut e = Election::new(cfg.params, cfg.seed, Some(attack_config(cfg, base)))?;
    let targets = e.sample(cfg.voters, cfg.targets);
    let proxy = e.proxy.clone().expect("proxy");
    let (mut recovered, mut full, mut last_ok) = (0, 0, 0);
    for i in 0..cfg.voters {
        let who = identity(i);
        let mut b = e.browser();
        let creds = e.enrol(&mut b, &who)?;
        let p1 = e.random_prefs();
        let mut p2 = e.random_prefs();
        while p2 == p1 {
            p2 = e.random_prefs();
        }
        let (mut s, mut t, sid) = login(&e, &mut b, &who, &creds)?;
        let err = client_err(&who);
        s.save_all(&mut b, t.as_mut(), p1.clone()).map_err(&err)?;
        s.save_all(&mut b, t.as_mut(), p2.clone()).map_err(&err)?;
        s.cast(&mut b, t.as_mut(), &p2).map_err(&err)?;
        if !targets.contains(&i) {
            continue;
        }
        let Some(c) = recover(&e, cfg, &who, sid, &creds, obs)? else {
            problems.push(format!("{who}: credentials not recovered"));
            continue;
        };
        recovered += 1;
        let r = proxy.decrypt_partials(sid, &c)?;
        if r.recovered == [p1.clone(), p2.clone()] {
            full += 1;
        } else {
            problems.push(format!(
                "{who}: recovered {} partials, {} failed",
                r.recovered.len(),
                r.failed.len()
            ));
        }
        if r.last() == Some(&p2) {
            last_ok += 1;
        }
    }
    obs.keep(&e);
    Ok(Metrics::Partials {
        targets: targets.len(),
        recovered,
        full_history: full,
        last_matches_cast: last_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(voters: usize) -> SimConfig {
        SimConfig {
            voters,
            params: SchemeParams {
                iterations: 8,
                ..SchemeParams::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn simulation_is_clean_and_deterministic() {
        let cfg = small(12);
        let a = simulate(&cfg).unwrap();
        assert!(a.success(), "{a:#?}");
        assert_eq!(a.revotes_rejected, 12);
        let b = simulate(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = simulate(&SimConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.outcomes, c.outcomes);
    }

    #[test]
    fn proxies_do_not_change_the_outcome() {
        let plain = simulate(&small(8)).unwrap();
        for mode in [ProxyMode::Transparent, ProxyMode::Passive, ProxyMode::Inject] {
            let via = simulate(&SimConfig { proxy: mode, ..small(8) }).unwrap();
            assert_eq!(via.tally, plain.tally, "{mode:?}");
            assert_eq!(via.outcomes, plain.outcomes, "{mode:?}");
        }
    }

    #[test]
    fn scenarios_succeed_at_small_scale() {
        let cfg = SimConfig {
            targets: 3,
            slow_voters: 2,
            other_device: 2,
            ..small(8)
        };
        for s in [Scenario::Inject, Scenario::Substitute, Scenario::Link, Scenario::Partials] {
            let r = run_attack(&cfg, s).unwrap();
            assert!(r.success, "{r:#?}");
        }
        let crack = SimConfig {
            params: SchemeParams {
                pin_digits: 3,
                ..cfg.params
            },
            recovery: Recovery::Crack,
            ..cfg
        };
        for s in [Scenario::Crack, Scenario::Partials, Scenario::Substitute] {
            let r = run_attack(&crack, s).unwrap();
            assert!(r.success, "{r:#?}");
        }
    }

    #[test]
    fn crack_budget_runs_out() {
        let cfg = SimConfig {
            targets: 1,
            crack_budget_secs: Some(0.05),
            params: SchemeParams::default(),
            ..small(1)
        };
        let r = run_attack(&cfg, Scenario::Crack).unwrap();
        assert!(!r.success);
        let Metrics::Crack {
            timed_out, tried, space, ..
        } = r.metrics
        else {
            panic!()
        };
        assert!(timed_out == 1 && tried < space);
    }

    #[test]
    fn observer_sees_progress_and_transcripts() {
        let cfg = SimConfig {
            targets: 2,
            params: SchemeParams {
                pin_digits: 3,
                ..small(4).params
            },
            ..small(4)
        };
        let mut seen = Vec::new();
        let mut obs = Observer::with_progress(|who: &str, p: &Progress| seen.push((who.to_owned(), p.tried)));
        let r = run_attack_observed(&cfg, Scenario::Crack, &mut obs).unwrap();
        assert!(r.success);
        // enrolment and login each open a connection
        assert_eq!(obs.transcripts.len(), 8);
        drop(obs);
        let who: BTreeSet<&str> = seen.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(who.len(), 2);

        let mut obs = Observer::default();
        simulate_observed(&small(3), &mut obs).unwrap();
        assert!(obs.transcripts.is_empty());
        simulate_observed(
            &SimConfig {
                proxy: ProxyMode::Passive,
                ..small(3)
            },
            &mut obs,
        )
        .unwrap();
        assert!(obs.transcripts.len() >= 3);
    }
}
