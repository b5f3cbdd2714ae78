//! Cycle-level simulator of the Epiphany-V on-chip network, its processor
//! nodes, and glueless multi-chip arrays.

pub mod addrmap;
pub mod error;
pub mod harness;
pub mod machine;
pub mod metrics;
pub mod multichip;
pub mod noc;
pub mod node;
pub mod ordering;
pub mod packet;
pub mod router;
pub mod workload;

pub use addrmap::{AddressLayout, ChipGeometry, GlobalAddress, NodeCoord};
pub use error::{Error, Result};
pub use machine::{Machine, MachineConfig};
pub use multichip::{build_array, ChipArray, LinkConfig};
pub use noc::{Fabric, FabricConfig, Topology};
pub use node::traffic::{PatternKind, TrafficPattern};
pub use node::{Node, NodeConfig, ScriptOp, TransactionScript};
pub use packet::{NetworkClass, NocPacket, PacketKind};
pub use router::Direction;
