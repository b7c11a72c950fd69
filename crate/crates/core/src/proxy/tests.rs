use super::*;
use crate::client::{Browser, ClientConfig, ClientError};
use crate::protocol::{ErrorKind, Local, PreferenceVector};
use crate::server::{ElectionConfig, Server, SharedServer};

struct Rig {
    server: SharedServer,
    cfg: ClientConfig,
    clock: SimClock,
    proxy: Proxy,
}

fn rig(config: AttackConfig, pin_digits: usize) -> Rig {
    let params = SchemeParams {
        iterations: 16,
        pin_digits,
        ..SchemeParams::default()
    };
    let server = SharedServer::new(Server::new(ElectionConfig::sample(params), 11).unwrap());
    let clock = SimClock::new();
    let proxy = Proxy::new(config, params, clock.clone(), 5).unwrap();
    let cfg = ClientConfig {
        server_key: server.verifying_key(),
        params,
    };
    Rig { server, cfg, clock, proxy }
}

impl Rig {
    fn enrol(&self, b: &mut Browser, who: &str, pin: &str) -> Credentials {
        let mut t = self.proxy.connect(Local(self.server.clone()));
        b.register(&mut t, who, pin).unwrap();
        let id = self.server.delivery().collect(who).unwrap();
        Credentials::with_params(&id, pin, &self.server.params()).unwrap()
    }
}

fn la(ranking: &[&str]) -> PreferenceVector {
    PreferenceVector::new("la-sydney", ranking)
}

fn prefs(ranking: &[&str]) -> Preferences {
    Preferences::from_vectors([la(ranking)])
}

#[test]
fn transparent_proxy_changes_nothing() {
    let r = rig(AttackConfig::default(), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    let page = b.open_login_page(&mut t).unwrap();
    assert_eq!(page, crate::protocol::page::login_page());
    let mut s = b.login(&mut t, &r.cfg, &creds).unwrap();
    let receipt = s.cast(&mut b, &mut t, &prefs(&["CHEN"])).unwrap();
    assert_eq!(crate::client::verify_by_phone(&mut t, &creds, &receipt).unwrap(), prefs(&["CHEN"]));
    let tr = r.proxy.transcript(t.session_id()).unwrap();
    assert!(tr.messages.iter().all(|m| m.body.is_none() && !m.rewritten));
    assert!(tr.client_fingerprint.is_some());
}

#[test]
fn passive_log_holds_login_id_but_not_credentials() {
    let r = rig(AttackConfig::passive(), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    b.login(&mut t, &r.cfg, &creds).unwrap();
    let tr = r.proxy.transcript(t.session_id()).unwrap();
    assert_eq!(observed_login_ids(&tr), vec![r.cfg.kdf().login_id(&creds)]);
    assert!(r.proxy.harvest_credentials(t.session_id()).unwrap().is_empty());
    let text = serde_json::to_string(&tr).unwrap();
    assert!(!text.contains(creds.ivote_id()));
}

#[test]
fn injected_page_leaks_credentials() {
    let r = rig(AttackConfig::injecting(), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    let page = b.open_login_page(&mut t).unwrap();
    assert_eq!(page.len(), crate::protocol::page::login_page().len());
    b.login(&mut t, &r.cfg, &creds).unwrap();
    let got = r.proxy.harvest_credentials(t.session_id()).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].creds, creds);
}

#[test]
fn slow_typist_outlives_the_cookie() {
    let r = rig(AttackConfig::injecting(), 6);
    let mut b = Browser::new(r.clock.clone(), 1).with_think_time(15_000);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    b.login(&mut t, &r.cfg, &creds).unwrap();
    assert!(r.proxy.harvest_credentials(t.session_id()).unwrap().is_empty());
}

#[test]
fn harvests_are_attributed_per_fingerprint() {
    let r = rig(AttackConfig::injecting(), 6);
    let mut a = Browser::new(r.clock.clone(), 1);
    let mut c = Browser::new(r.clock.clone(), 2);
    let ca = r.enrol(&mut a, "alice", "111111");
    let cc = r.enrol(&mut c, "carol", "222222");
    let mut ta = r.proxy.connect(Local(r.server.clone()));
    let mut tc = r.proxy.connect(Local(r.server.clone()));
    a.login(&mut ta, &r.cfg, &ca).unwrap();
    c.login(&mut tc, &r.cfg, &cc).unwrap();
    let all = r.proxy.harvest_all();
    assert_eq!(all.len(), 2);
    let fa = r.proxy.transcript(ta.session_id()).unwrap().client_fingerprint;
    let fc = r.proxy.transcript(tc.session_id()).unwrap().client_fingerprint;
    assert_ne!(fa, fc);
    for h in all {
        let want = if h.client_fingerprint == fa { &ca } else { &cc };
        assert_eq!(&h.creds, want);
    }
}

#[test]
fn login_id_cracks_with_known_id() {
    let r = rig(AttackConfig::passive(), 3);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "417");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    b.login(&mut t, &r.cfg, &creds).unwrap();
    let got = r.proxy.recover_by_crack(t.session_id(), Some(creds.ivote_id())).unwrap();
    assert_eq!(got, creds);
    assert_eq!(r.proxy.recovered(t.session_id()), Some(creds));
}

#[test]
fn crack_needs_a_login_id() {
    let r = rig(AttackConfig::default(), 3);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "417");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    b.login(&mut t, &r.cfg, &creds).unwrap();
    assert!(matches!(
        r.proxy.crack_session(t.session_id(), Some(creds.ivote_id())),
        Err(ProxyError::Precondition(_))
    ));
}

#[test]
fn substituted_ballot_verifies_as_the_voters_choice() {
    let attacker = prefs(&["EVANS", "DAVIES"]);
    let r = rig(AttackConfig::substituting(attacker.clone()), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    let mut s = b.login(&mut t, &r.cfg, &creds).unwrap();
    r.proxy.recover_by_harvest(t.session_id()).unwrap().unwrap();
    r.proxy.substitute_ballot(t.session_id(), attacker.clone()).unwrap();

    let voter = prefs(&["ADAMS", "BROWN"]);
    let receipt = s.cast(&mut b, &mut t, &voter).unwrap();
    assert_eq!(r.proxy.substitution_receipt(t.session_id()), Some(receipt.clone()));

    let guard = r.server.lock();
    let ballot = guard.records().next().unwrap().final_ballot.clone().unwrap();
    assert_eq!(guard.open_ballot(&ballot).unwrap(), attacker);
    drop(guard);
    // The telephone service reads back what the server holds.
    assert_eq!(
        crate::client::verify_by_phone(&mut Local(r.server.clone()), &creds, &receipt).unwrap(),
        attacker
    );
    let tr = r.proxy.transcript(t.session_id()).unwrap();
    assert!(tr.requests(EndpointKind::Vote).all(|m| m.rewritten));
}

#[test]
fn substitution_preconditions() {
    let attacker = prefs(&["EVANS"]);
    let r = rig(AttackConfig::substituting(attacker.clone()), 6);
    let mut b = Browser::new(r.clock.clone(), 1).with_think_time(30_000);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    let mut s = b.login(&mut t, &r.cfg, &creds).unwrap();
    let sid = t.session_id();
    assert_eq!(r.proxy.recover_by_harvest(sid).unwrap(), None);
    assert_eq!(
        r.proxy.substitute_ballot(sid, attacker.clone()),
        Err(ProxyError::CannotSubstitute(sid))
    );
    s.cast(&mut b, &mut t, &prefs(&["ADAMS"])).unwrap();
    r.proxy.record_credentials(sid, creds);
    assert_eq!(r.proxy.substitute_ballot(sid, attacker), Err(ProxyError::TooLate(sid)));
    assert_eq!(
        r.proxy.substitute_ballot(99, prefs(&["EVANS"])),
        Err(ProxyError::UnknownSession(99))
    );
}

#[test]
fn substitute_requires_passive_log() {
    let cfg = AttackConfig {
        passive_log: false,
        ..AttackConfig::substituting(prefs(&["EVANS"]))
    };
    assert!(matches!(cfg.validate(), Err(ProxyError::Config(_))));
}

#[test]
fn partial_votes_are_readable_with_recovered_credentials() {
    let r = rig(AttackConfig::injecting(), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    let mut s = b.login(&mut t, &r.cfg, &creds).unwrap();
    s.save_partial(&mut b, &mut t, la(&["ADAMS"])).unwrap();
    s.save_partial(&mut b, &mut t, la(&["BROWN", "ADAMS"])).unwrap();
    let got = r.proxy.decrypt_partials(t.session_id(), &creds).unwrap();
    assert_eq!(got.recovered, vec![prefs(&["ADAMS"]), prefs(&["BROWN", "ADAMS"])]);
    assert!(got.failed.is_empty());

    let wrong = Credentials::with_params(creds.ivote_id(), "000000", r.proxy.params()).unwrap();
    let miss = r.proxy.decrypt_partials(t.session_id(), &wrong).unwrap();
    assert!(miss.recovered.is_empty());
    assert_eq!(miss.failed, vec![0, 1]);
}

#[test]
fn partials_survive_a_new_login_session() {
    let r = rig(AttackConfig::passive(), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut first = Local(r.server.clone());
    let mut s = b.login(&mut first, &r.cfg, &creds).unwrap();
    s.save_partial(&mut b, &mut first, la(&["CHEN"])).unwrap();
    let mut t = r.proxy.connect(Local(r.server.clone()));
    b.login(&mut t, &r.cfg, &creds).unwrap();
    let got = r.proxy.decrypt_partials(t.session_id(), &creds).unwrap();
    assert_eq!(got.last(), Some(&prefs(&["CHEN"])));
}

#[test]
fn registration_links_to_vote_by_fingerprint() {
    let r = rig(AttackConfig::passive(), 6);
    let mut a = Browser::new(r.clock.clone(), 1);
    let mut c = Browser::new(r.clock.clone(), 2);
    let ca = r.enrol(&mut a, "alice", "111111");
    let cc = r.enrol(&mut c, "carol", "222222");
    let mut ta = r.proxy.connect(Local(r.server.clone()));
    let mut sa = a.login(&mut ta, &r.cfg, &ca).unwrap();
    sa.cast(&mut a, &mut ta, &prefs(&["ADAMS"])).unwrap();
    let mut tc = r.proxy.connect(Local(r.server.clone()));
    c.login(&mut tc, &r.cfg, &cc).unwrap();
    let links = r.proxy.link_sessions();
    assert_eq!(links.get("alice"), Some(&ta.session_id()));
    assert_eq!(links.get("carol"), Some(&tc.session_id()));
}

#[test]
fn transcripts_round_trip_through_jsonl() {
    let r = rig(AttackConfig::passive(), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let creds = r.enrol(&mut b, "alice", "246810");
    let mut t = r.proxy.connect(Local(r.server.clone()));
    b.login(&mut t, &r.cfg, &creds).unwrap();
    let all = r.proxy.transcripts();
    let mut buf = Vec::new();
    write_jsonl(&all, &mut buf).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), all);
}

#[test]
fn upstream_errors_pass_through() {
    let r = rig(AttackConfig::passive(), 6);
    let mut b = Browser::new(r.clock.clone(), 1);
    let bogus = Credentials::with_params("12345678", "000000", r.proxy.params()).unwrap();
    let mut t = r.proxy.connect(Local(r.server.clone()));
    assert_eq!(b.login(&mut t, &r.cfg, &bogus).unwrap_err(), ClientError::LoginFailed);
    let tr = r.proxy.transcript(t.session_id()).unwrap();
    assert!(tr.messages.iter().any(|m| m.ok == Some(false)));
    let _ = ErrorKind::NotFound;
}
