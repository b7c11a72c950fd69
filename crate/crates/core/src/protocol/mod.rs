//! Wire protocol: endpoints, envelopes, message bodies and transports.

pub mod envelope;
pub mod messages;
pub mod page;
pub mod transport;

use thiserror::Error;

pub use envelope::{Endpoint, EndpointKind, ErrorBody, ErrorKind, Request, Response, SetCookie, Status};
pub use messages::{
    from_body, to_body, Ack, Ballot, CastResponse, LoginRequest, PartialVote, PreferenceVector, Preferences, Race, ReadbackRequest,
    Receipt, RegisterRequest, RegisterResponse, TokenFile, TokenRequest,
};
pub use transport::{serve, Handler, Local, ServeHandle, SocketTransport, Transport, TransportError, Unreachable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid preferences: {0}")]
    InvalidPreferences(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(String),
}
