//! Random scripted workloads whose final memory does not depend on timing.
//!
//! Each scratchpad is split into regions so that no two in-flight
//! transactions race:
//!
//! - `[0, RO_BYTES)` is preloaded and never written; remote reads target it.
//! - Node `w` owns a `WRITE_SLOT`-byte slot at `WRITE_BASE + w * WRITE_SLOT`
//!   in every scratchpad; only `w` writes there, remotely or (in its own
//!   scratchpad) locally, and never both at once.
//! - Read number `k` of a node returns to `RETURN_BASE + 8k` of the issuer.
//!
//! With the local alias on, node (0,0) is never a remote target: its
//! address has an all-zero coordinate field, which other issuers read as
//! their own scratchpad.

use crate::addrmap::{encode_address, AddressLayout, NodeCoord};
use crate::error::{Error, Result};
use crate::machine::Machine;
use crate::node::{OpKind, ScriptOp, TransactionScript};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RO_BYTES: u32 = 0x1000;
pub const WRITE_BASE: u32 = 0x2000;
pub const WRITE_SLOT: u32 = 0x20;
pub const RETURN_BASE: u32 = 0x6000;
pub const MAX_NODES: usize = 256;
pub const MAX_OPS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub seed: u64,
    pub rows: u32,
    pub cols: u32,
    /// One script per node, raster order.
    pub scripts: Vec<(NodeCoord, TransactionScript)>,
}

/// Preloaded byte of the read-only region.
pub fn ro_byte(seed: u64, node: usize, offset: u32) -> u8 {
    let mut z = seed ^ ((node as u64) << 32) ^ u64::from(offset);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) as u8
}

fn size_and_offset(rng: &mut ChaCha8Rng, base: u32, span: u32) -> (u8, u32) {
    let size = [1u8, 2, 4, 8][rng.gen_range(0..4)];
    let slots = span / u32::from(size);
    (size, base + rng.gen_range(0..slots) * u32::from(size))
}

pub fn random_workload(rows: u32, cols: u32, layout: AddressLayout, seed: u64) -> Result<Workload> {
    let n = (rows * cols) as usize;
    let lowest = usize::from(layout.local_alias);
    if n > MAX_NODES || n < 2 + lowest {
        return Err(Error::Config(format!("workloads need {}..={MAX_NODES} nodes, got {n}", 2 + lowest)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at = |i: usize| NodeCoord::new(i as u32 % cols, i as u32 / cols);
    let mut scripts = Vec::with_capacity(n);
    for me in 0..n {
        let count = rng.gen_range(0..=MAX_OPS);
        let mut ops = Vec::with_capacity(count);
        let mut reads = 0u32;
        let own_slot = WRITE_BASE + me as u32 * WRITE_SLOT;
        for _ in 0..count {
            let targets = n - lowest - usize::from(me >= lowest);
            let mut other = lowest + rng.gen_range(0..targets);
            if me >= lowest && other >= me {
                other += 1;
            }
            let op = match rng.gen_range(0..4) {
                0 => {
                    let (size, off) = size_and_offset(&mut rng, 0, RETURN_BASE);
                    ScriptOp::local_read(encode_address(at(me), off, layout)?, size)
                }
                1 => {
                    let (size, off) = size_and_offset(&mut rng, own_slot, WRITE_SLOT);
                    ScriptOp::local_write(encode_address(at(me), off, layout)?, rng.gen(), size)
                }
                2 => {
                    let (size, off) = size_and_offset(&mut rng, own_slot, WRITE_SLOT);
                    ScriptOp::remote_write(encode_address(at(other), off, layout)?, rng.gen(), size)
                }
                _ => {
                    let (size, off) = size_and_offset(&mut rng, 0, RO_BYTES);
                    let ret = encode_address(at(me), RETURN_BASE + 8 * reads, layout)?;
                    reads += 1;
                    ScriptOp::remote_read(encode_address(at(other), off, layout)?, ret, size, rng.gen_bool(0.5))
                }
            };
            ops.push(op);
        }
        scripts.push((
            at(me),
            TransactionScript {
                ops,
                start_cycle: rng.gen_range(0..20),
            },
        ));
    }
    Ok(Workload { seed, rows, cols, scripts })
}

impl Workload {
    /// Preloads the read-only regions and installs every script.
    pub fn install(&self, m: &mut Machine) -> Result<()> {
        let topo = m.topo();
        if topo.grid_rows() != self.rows || topo.grid_cols() != self.cols {
            return Err(Error::Config("workload and machine grids differ".into()));
        }
        for i in 0..topo.nodes() {
            let c = topo.coord(i);
            let seed = self.seed;
            let node = m.node_mut(c);
            node.mem.fill_with(|off| if off < RO_BYTES { ro_byte(seed, i, off) } else { 0 });
        }
        for (c, s) in &self.scripts {
            m.load_script(*c, s.clone())?;
        }
        Ok(())
    }

    pub fn op_count(&self) -> usize {
        self.scripts.iter().map(|(_, s)| s.ops.len()).sum()
    }

    pub fn remote_ops(&self) -> usize {
        self.scripts
            .iter()
            .flat_map(|(_, s)| &s.ops)
            .filter(|o| matches!(o.op, OpKind::RemoteRead | OpKind::RemoteWrite))
            .count()
    }
}
