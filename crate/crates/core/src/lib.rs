//! A desk-scale model of the iVote internet-voting front end and of what a
//! TLS-terminating DDoS-mitigation proxy in front of it can do: recover
//! credentials by brute force or script injection, read partial votes,
//! substitute ballots, and link registrations to ballots. A separate scanner
//! measures how widely one certificate is shared.

pub mod bruteforce;
pub mod certscan;
pub mod client;
pub mod clock;
pub mod crypto;
pub mod protocol;
pub mod proxy;
pub mod server;
pub mod sim;
