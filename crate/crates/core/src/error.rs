use crate::addrmap::AddrError;
use crate::node::traffic::TrafficError;
use crate::node::NodeError;
use crate::noc::NocError;
use crate::packet::PacketError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Address(#[from] AddrError),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Noc(#[from] NocError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invariant violated at cycle {cycle}: {what}")]
    Invariant { cycle: u64, what: String },
    #[error("table check incomplete: missing {0}")]
    Incomplete(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
