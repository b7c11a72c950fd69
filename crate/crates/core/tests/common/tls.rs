//! Local TLS servers with generated certificates.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rcgen::{CertificateParams, DistinguishedName, DnType, KeyPair, SanType};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use rustls::{ServerConfig, ServerConnection};

/// SAN list of the shared mitigation-provider certificate.
pub const SHARED_SANS: &[&str] = &[
    "incapsula.com",
    "*.1strongteam.com",
    "*.absolutewatches.com.au",
    "*.advancemotors.com.au",
    "*.alconchirurgia.pl",
    "*.amplex.com.au",
    "*.bohemiocollection.com.au",
    "*.cheapcaribbean.com",
    "*.compareit4me.com",
    "*.elections.wa.gov.au",
    "*.everafterhigh.com",
    "*.farmerslifeonline.com",
    "*.floraandfauna.com.au",
    "*.heypennyfabrics.com.au",
    "*.homeaway.com.ph",
    "*.jetblackespresso.com.au",
    "*.lifemapco.com",
    "*.lovemyearth.net",
    "*.maklernetz.at",
    "*.mobile-vertriebe.de",
    "*.mobile.zurich.com.ar",
    "*.monsterhigh.com",
    "*.mycommunitystarter.co.uk",
    "*.noosacivicshopping.com.au",
    "*.oilsforlifeaustralia.com.au",
    "*.planetparts.com.au",
    "*.purina.lt",
    "*.redsimaging.com.au",
    "*.rlicorp.com",
    "*.roundup.fr",
    "*.sassykat.com.au",
    "*.spendwellhealth.com",
    "*.sublimation.com.au",
    "*.uat.user.zurichpartnerzone.com",
    "*.woodgrove.com.au",
    "*.yamahamotor-webservice.com",
    "*.zlaponline.com",
    "*.zurich-personal.co.uk",
    "*.zurich.ae",
    "*.zurich.co.jp",
    "*.zurich.es",
    "*.zurich.jp",
    "*.zurichlife.co.jp",
    "*.zurichseguros.pt",
    "1strongteam.com",
    "absolutewatches.com.au",
    "advancemotors.com.au",
    "alconchirurgia.pl",
    "amplex.com.au",
    "bohemiocollection.com.au",
    "compareit4me.com",
    "farmerslifeonline.com",
    "floraandfauna.com.au",
    "heypennyfabrics.com.au",
    "homeaway.com.ph",
    "jetblackespresso.com.au",
    "lifemapco.com",
    "lovemyearth.net",
    "mycommunitystarter.co.uk",
    "noosacivicshopping.com.au",
    "oilsforlifeaustralia.com.au",
    "planetparts.com.au",
    "purina.lt",
    "redsimaging.com.au",
    "roundup.fr",
    "sassykat.com.au",
    "spendwellhealth.com",
    "sublimation.com.au",
    "woodgrove.com.au",
    "zurich.ae",
    "zurich.es",
    "zurich.jp",
    "zurichlife.co.jp",
];

pub struct GeneratedCert {
    pub der: CertificateDer<'static>,
    pub key: PrivatePkcs8KeyDer<'static>,
}

/// Self-signed certificate with `subject` as CN and `dns` as DNS-name SANs,
/// in that order. `extra_ip` adds one non-DNS SAN.
pub fn make_cert(subject: &str, dns: &[&str], extra_ip: bool) -> GeneratedCert {
    let key = KeyPair::generate().unwrap();
    let mut params = CertificateParams::default();
    let mut dn = DistinguishedName::new();
    dn.push(DnType::CommonName, subject);
    params.distinguished_name = dn;
    params.subject_alt_names = dns.iter().map(|n| SanType::DnsName((*n).try_into().unwrap())).collect();
    if extra_ip {
        params.subject_alt_names.push(SanType::IpAddress([127, 0, 0, 1].into()));
    }
    let cert = params.self_signed(&key).unwrap();
    GeneratedCert {
        der: cert.der().clone(),
        key: PrivatePkcs8KeyDer::from(key.serialize_der()),
    }
}

/// Accepts connections on 127.0.0.1 and completes TLS handshakes with the
/// given certificate until dropped.
pub struct TlsFixture {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TlsFixture {
    pub fn start(cert: &GeneratedCert) -> Self {
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let cfg = ServerConfig::builder_with_provider(provider)
            .with_safe_default_protocol_versions()
            .unwrap()
            .with_no_client_auth()
            .with_single_cert(vec![cert.der.clone()], PrivateKeyDer::Pkcs8(cert.key.clone_key()))
            .unwrap();
        let cfg = Arc::new(cfg);
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let cfg = cfg.clone();
                std::thread::spawn(move || {
                    let _ = handshake(cfg, stream);
                });
            }
        });
        Self {
            addr,
            stop,
            thread: Some(thread),
        }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> ivote_core::certscan::Endpoint {
        ivote_core::certscan::Endpoint::new(self.addr.ip().to_string(), self.addr.port())
    }
}

fn handshake(cfg: Arc<ServerConfig>, mut stream: TcpStream) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut conn = ServerConnection::new(cfg).map_err(io::Error::other)?;
    while conn.is_handshaking() {
        if conn.complete_io(&mut stream)? == (0, 0) {
            break;
        }
    }
    // Wait for the peer's close.
    let _ = conn.complete_io(&mut stream);
    Ok(())
}

impl Drop for TlsFixture {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A port on 127.0.0.1 with nothing listening.
pub fn closed_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}
