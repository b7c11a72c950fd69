//! Certificate footprint scanner: grabs the leaf certificate from each of an
//! explicit list of TLS endpoints, clusters endpoints that serve the same
//! certificate and reports which of them cover a target name.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::ErrorKind as IoKind;
use std::net::{TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::{verify_tls12_signature, verify_tls13_signature, CryptoProvider};
use rustls::pki_types::{CertificateDer, ServerName, UnixTime};
use rustls::{ClientConfig, ClientConnection, DigitallySignedStruct, SignatureScheme};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x509_parser::prelude::{FromDer, GeneralName, X509Certificate};

pub const DEFAULT_PORT: u16 = 443;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanError {
    #[error("line {line}: {message}")]
    Endpoint { line: usize, message: String },
    #[error("certificate parse error: {0}")]
    Parse(String),
    #[error("endpoint list is empty")]
    NoEndpoints,
}

/// `host[:port]`, optionally followed by whitespace and a server name to
/// send instead of the host.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sni: Option<String>,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self {
            host: host.into(),
            port,
            sni: None,
        }
    }

    pub fn with_sni(mut self, sni: impl Into<String>) -> Self {
        self.sni = Some(sni.into());
        self
    }

    fn server_name(&self) -> Result<ServerName<'static>, String> {
        let name = self.sni.as_deref().unwrap_or(&self.host);
        let name = name.trim_start_matches('[').trim_end_matches(']');
        ServerName::try_from(name.to_owned()).map_err(|e| format!("invalid server name {name:?}: {e}"))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.host.contains(':') && !self.host.starts_with('[') {
            write!(f, "[{}]:{}", self.host, self.port)?;
        } else {
            write!(f, "{}:{}", self.host, self.port)?;
        }
        if let Some(sni) = &self.sni {
            write!(f, " {sni}")?;
        }
        Ok(())
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let addr = parts.next().ok_or("empty endpoint")?;
        let sni = parts.next().map(str::to_owned);
        if parts.next().is_some() {
            return Err(format!("trailing fields in {s:?}"));
        }
        let (host, port) = if let Some(rest) = addr.strip_prefix('[') {
            let (h, tail) = rest.split_once(']').ok_or("unclosed '['")?;
            match tail.strip_prefix(':') {
                Some(p) => (h, Some(p)),
                None if tail.is_empty() => (h, None),
                None => return Err(format!("unexpected {tail:?} after address")),
            }
        } else if addr.matches(':').count() == 1 {
            let (h, p) = addr.split_once(':').unwrap();
            (h, Some(p))
        } else {
            (addr, None)
        };
        if host.is_empty() {
            return Err("empty host".into());
        }
        let port = match port {
            Some(p) => p.parse::<u16>().map_err(|_| format!("bad port {p:?}"))?,
            None => DEFAULT_PORT,
        };
        Ok(Self {
            host: host.to_owned(),
            port,
            sni,
        })
    }
}

/// One endpoint per line; blank lines and `#` comments are skipped.
pub fn parse_endpoints(text: &str) -> Result<Vec<Endpoint>, ScanError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|message| ScanError::Endpoint { line: i + 1, message })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertRecord {
    pub endpoint: Endpoint,
    #[serde(with = "der_b64")]
    pub der: Vec<u8>,
    /// SHA-256 of `der`, hex.
    pub fingerprint: String,
    pub subject: String,
    pub san_list: Vec<String>,
    /// SAN entries that are not DNS names.
    pub other_sans: usize,
    pub handshake_rtt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub endpoint: Endpoint,
    pub reason: String,
}

mod der_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(der: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(der))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        STANDARD.decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

pub fn fingerprint(der: &[u8]) -> String {
    hex::encode(Sha256::digest(der))
}

/// SAN entries of a certificate, split by type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sans {
    pub dns_names: Vec<String>,
    pub other: usize,
}

/// DNS-name SAN entries in certificate order. A certificate without the
/// extension has none.
pub fn extract_sans(der: &[u8]) -> Result<Sans, ScanError> {
    let (_, cert) = X509Certificate::from_der(der).map_err(|e| ScanError::Parse(e.to_string()))?;
    sans_of(&cert)
}

fn sans_of(cert: &X509Certificate<'_>) -> Result<Sans, ScanError> {
    let mut out = Sans::default();
    let Some(ext) = cert.subject_alternative_name().map_err(|e| ScanError::Parse(e.to_string()))? else {
        return Ok(out);
    };
    for name in &ext.value.general_names {
        match name {
            GeneralName::DNSName(n) => out.dns_names.push((*n).to_owned()),
            _ => out.other += 1,
        }
    }
    Ok(out)
}

/// Certificate name matching: exact, or a `*` as the whole leftmost label
/// standing for exactly one label. Case-insensitive.
pub fn covers(san: &str, target: &str) -> bool {
    let san = san.trim_end_matches('.').to_ascii_lowercase();
    let target = target.trim_end_matches('.').to_ascii_lowercase();
    if san.is_empty() || target.is_empty() {
        return false;
    }
    let Some(suffix) = san.strip_prefix("*.") else {
        return san == target;
    };
    if suffix.is_empty() || suffix.contains('*') {
        return false;
    }
    match target.split_once('.') {
        Some((label, rest)) => !label.is_empty() && rest == suffix,
        None => false,
    }
}

/// Accepts any certificate chain; handshake signatures are still checked
/// so the peer must hold the key for the certificate it sent.
#[derive(Debug)]
struct AcceptAny(Arc<CryptoProvider>);

impl ServerCertVerifier for AcceptAny {
    fn verify_server_cert(
        &self,
        _end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        Ok(ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.0.signature_verification_algorithms.supported_schemes()
    }
}

fn client_config() -> Arc<ClientConfig> {
    let provider = Arc::new(rustls::crypto::ring::default_provider());
    let cfg = ClientConfig::builder_with_provider(provider.clone())
        .with_safe_default_protocol_versions()
        .expect("ring supports the default versions")
        .dangerous()
        .with_custom_certificate_verifier(Arc::new(AcceptAny(provider)))
        .with_no_client_auth();
    Arc::new(cfg)
}

fn io_reason(e: &std::io::Error) -> String {
    match e.kind() {
        IoKind::ConnectionRefused => "connection refused".into(),
        IoKind::TimedOut | IoKind::WouldBlock => "timeout".into(),
        IoKind::InvalidData => format!("tls: {e}"),
        _ => e.to_string(),
    }
}

/// Connects, completes a TLS handshake and hangs up without sending
/// application data.
pub fn grab_cert(ep: &Endpoint, timeout: Duration) -> Result<CertRecord, ScanFailure> {
    grab_with(&client_config(), ep, timeout)
}

fn grab_with(cfg: &Arc<ClientConfig>, ep: &Endpoint, timeout: Duration) -> Result<CertRecord, ScanFailure> {
    let fail = |reason: String| ScanFailure {
        endpoint: ep.clone(),
        reason,
    };
    let name = ep.server_name().map_err(fail)?;
    let addr = (ep.host.trim_start_matches('[').trim_end_matches(']'), ep.port)
        .to_socket_addrs()
        .map_err(|e| fail(format!("resolve: {e}")))?
        .next()
        .ok_or_else(|| fail("resolve: no addresses".into()))?;
    let mut sock = TcpStream::connect_timeout(&addr, timeout).map_err(|e| fail(io_reason(&e)))?;
    sock.set_read_timeout(Some(timeout))
        .and_then(|_| sock.set_write_timeout(Some(timeout)))
        .map_err(|e| fail(io_reason(&e)))?;
    let mut conn = ClientConnection::new(cfg.clone(), name).map_err(|e| fail(format!("tls: {e}")))?;
    let started = Instant::now();
    while conn.is_handshaking() {
        match conn.complete_io(&mut sock) {
            Ok((0, 0)) if conn.is_handshaking() => return Err(fail("connection closed during handshake".into())),
            Ok(_) => {}
            Err(e) => return Err(fail(io_reason(&e))),
        }
    }
    let rtt = started.elapsed();
    let der = conn
        .peer_certificates()
        .and_then(|c| c.first())
        .map(|c| c.as_ref().to_vec())
        .ok_or_else(|| fail("no certificate".into()))?;
    conn.send_close_notify();
    let _ = conn.complete_io(&mut sock);
    let (_, cert) = X509Certificate::from_der(&der).map_err(|e| fail(format!("certificate parse error: {e}")))?;
    let sans = sans_of(&cert).map_err(|e| fail(e.to_string()))?;
    Ok(CertRecord {
        endpoint: ep.clone(),
        fingerprint: fingerprint(&der),
        subject: cert.subject().to_string(),
        san_list: sans.dns_names,
        other_sans: sans.other,
        handshake_rtt_ms: (rtt.as_secs_f64() * 1e3).max(f64::MIN_POSITIVE),
        der,
    })
}

/// Grabs every endpoint with at most `parallelism` connections open at
/// once. Results come back in input order.
pub fn scan(endpoints: &[Endpoint], parallelism: usize, timeout: Duration) -> Vec<Result<CertRecord, ScanFailure>> {
    let cfg = client_config();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, endpoints.len().max(1)) {
            let tx = tx.clone();
            let (cfg, next) = (&cfg, &next);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(ep) = endpoints.get(i) else { break };
                if tx.send((i, grab_with(cfg, ep, timeout))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut results: Vec<_> = rx.into_iter().collect();
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub subject: String,
    pub san_count: usize,
    pub covers_target: bool,
    pub endpoints: Vec<Endpoint>,
    /// Handshake time per endpoint, same order.
    pub handshake_rtt_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub target: String,
    pub scanned: usize,
    /// Certificate fingerprint to the endpoints serving it.
    pub clusters: BTreeMap<String, Cluster>,
    /// Endpoints whose certificate covers the target.
    pub coverage: Vec<Endpoint>,
    /// Other names on the certificates that cover the target.
    pub cohabitants: Vec<String>,
    pub failures: Vec<ScanFailure>,
}

impl FootprintReport {
    /// Builds the report from finished grabs.
    pub fn from_results(target: &str, results: Vec<Result<CertRecord, ScanFailure>>) -> Self {
        let scanned = results.len();
        let mut clusters: BTreeMap<String, Cluster> = BTreeMap::new();
        let mut sans: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut failures = Vec::new();
        for r in results {
            let rec = match r {
                Ok(rec) => rec,
                Err(f) => {
                    failures.push(f);
                    continue;
                }
            };
            let c = clusters.entry(rec.fingerprint.clone()).or_insert_with(|| Cluster {
                subject: rec.subject.clone(),
                san_count: rec.san_list.len(),
                covers_target: rec.san_list.iter().any(|s| covers(s, target)),
                endpoints: Vec::new(),
                handshake_rtt_ms: Vec::new(),
            });
            c.endpoints.push(rec.endpoint);
            c.handshake_rtt_ms.push(rec.handshake_rtt_ms);
            sans.entry(rec.fingerprint).or_insert(rec.san_list);
        }
        let mut coverage = Vec::new();
        let mut cohabitants = BTreeSet::new();
        for (fp, c) in &clusters {
            if !c.covers_target {
                continue;
            }
            coverage.extend(c.endpoints.iter().cloned());
            cohabitants.extend(sans[fp].iter().filter(|s| !covers(s, target)).map(|s| s.to_ascii_lowercase()));
        }
        coverage.sort();
        Self {
            target: target.to_owned(),
            scanned,
            clusters,
            coverage,
            cohabitants: cohabitants.into_iter().collect(),
            failures,
        }
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.clusters.values().map(|c| c.endpoints.len()).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }
}

pub fn footprint_report(endpoints: &[Endpoint], target: &str, parallelism: usize, timeout: Duration) -> Result<FootprintReport, ScanError> {
    if endpoints.is_empty() {
        return Err(ScanError::NoEndpoints);
    }
    Ok(FootprintReport::from_results(target, scan(endpoints, parallelism, timeout)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcard_matches_one_label() {
        assert!(covers("*.elections.wa.gov.au", "ivote-cvs.elections.wa.gov.au"));
        assert!(!covers("*.elections.wa.gov.au", "a.b.elections.wa.gov.au"));
        assert!(!covers("*.elections.wa.gov.au", "elections.wa.gov.au"));
        assert!(covers("example.com", "example.com"));
        assert!(covers("*.Elections.WA.gov.au", "IVOTE-CVS.elections.wa.gov.au"));
        assert!(!covers("*", "com"));
        assert!(!covers("a*.example.com", "ab.example.com"));
        assert!(!covers("*.*.example.com", "a.b.example.com"));
    }

    #[test]
    fn endpoint_lines() {
        let eps = parse_endpoints("# fixtures\n127.0.0.1:8443\n\nexample.com  ivote-cvs.elections.wa.gov.au\n[::1]:9000 # v6\n").unwrap();
        assert_eq!(
            eps,
            vec![
                Endpoint::new("127.0.0.1", 8443),
                Endpoint::new("example.com", 443).with_sni("ivote-cvs.elections.wa.gov.au"),
                Endpoint::new("::1", 9000),
            ]
        );
        assert_eq!(eps[2].to_string(), "[::1]:9000");
        assert_eq!(
            parse_endpoints("ok.test\nbad:port\n"),
            Err(ScanError::Endpoint {
                line: 2,
                message: "bad port \"port\"".into()
            })
        );
    }

    #[test]
    fn garbage_der_is_a_parse_error() {
        assert!(matches!(extract_sans(b"not a certificate"), Err(ScanError::Parse(_))));
    }

    #[test]
    fn empty_list_is_rejected() {
        assert_eq!(footprint_report(&[], "x.test", 4, DEFAULT_TIMEOUT), Err(ScanError::NoEndpoints));
    }
}
