//! Processor nodes as transaction sources and servicers.
//!
//! A node owns a 64KB scratchpad split into four banks interleaved on 8-byte
//! words. Every cycle it has four independent 8-byte ports (fetch,
//! load/store, network receive, network send); ports that touch the same
//! bank in the same cycle are serialized by a fixed priority.

pub mod traffic;

use crate::addrmap::{encode_address, is_local, resolve_target, AddrError, AddressLayout, GlobalAddress, NodeCoord};
use crate::noc::NocError;
use crate::packet::{make_read_reply, make_read_request, make_write, NocPacket, PacketError, PacketKind};
use crate::router::{Flit, PacketId};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

pub const SCRATCHPAD_BYTES: u32 = 64 * 1024;
pub const BANKS: usize = 4;
pub const BANK_BYTES: u32 = SCRATCHPAD_BYTES / BANKS as u32;
pub const PORT_BYTES: u32 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodeError {
    #[error("offset {0:#x} is outside the 64KB scratchpad")]
    OutOfScratchpad(u32),
    #[error("offset {offset:#x} is not aligned to {size} bytes")]
    Misaligned { offset: u32, size: u8 },
    #[error("access size {0} is not 1, 2, 4 or 8 bytes")]
    BadSize(u8),
    #[error("script op {index} on node {node}: {reason}")]
    BadScript { node: NodeCoord, index: usize, reason: String },
    #[error("port budget {0} bytes exceeds the 8-byte port width")]
    BadBudget(u32),
    #[error(transparent)]
    Address(#[from] AddrError),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Noc(#[from] NocError),
}

/// Bank serving `offset`: 8-byte words interleave across the four banks.
pub fn bank_of(offset: u32) -> Result<usize, NodeError> {
    if offset >= SCRATCHPAD_BYTES {
        return Err(NodeError::OutOfScratchpad(offset));
    }
    Ok(((offset >> 3) & 3) as usize)
}

fn check_access(offset: u32, size: u8) -> Result<usize, NodeError> {
    if !matches!(size, 1 | 2 | 4 | 8) {
        return Err(NodeError::BadSize(size));
    }
    let bank = bank_of(offset)?;
    if offset % u32::from(size) != 0 {
        return Err(NodeError::Misaligned { offset, size });
    }
    Ok(bank)
}

#[derive(Clone, PartialEq, Eq)]
pub struct Scratchpad {
    bytes: Box<[u8]>,
}

impl std::fmt::Debug for Scratchpad {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nonzero = self.bytes.iter().filter(|b| **b != 0).count();
        write!(f, "Scratchpad({nonzero} nonzero bytes)")
    }
}

impl Default for Scratchpad {
    fn default() -> Self {
        Self {
            bytes: vec![0; SCRATCHPAD_BYTES as usize].into_boxed_slice(),
        }
    }
}

impl Scratchpad {
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn fill_with(&mut self, mut f: impl FnMut(u32) -> u8) {
        for (i, b) in self.bytes.iter_mut().enumerate() {
            *b = f(i as u32);
        }
    }

    /// Little-endian load, right-aligned in the result.
    pub fn read(&self, offset: u32, size: u8) -> Result<u64, NodeError> {
        check_access(offset, size)?;
        let o = offset as usize;
        let mut buf = [0u8; 8];
        buf[..size as usize].copy_from_slice(&self.bytes[o..o + size as usize]);
        Ok(u64::from_le_bytes(buf))
    }

    pub fn write(&mut self, offset: u32, size: u8, data: u64) -> Result<(), NodeError> {
        check_access(offset, size)?;
        let o = offset as usize;
        self.bytes[o..o + size as usize].copy_from_slice(&data.to_le_bytes()[..size as usize]);
        Ok(())
    }
}

/// The four per-cycle ports, highest bank priority first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodePort {
    NetReceive = 0,
    LoadStore = 1,
    Fetch = 2,
    NetSend = 3,
}

impl NodePort {
    pub const PRIORITY: [NodePort; 4] = [NodePort::NetReceive, NodePort::LoadStore, NodePort::Fetch, NodePort::NetSend];
}

/// Per-cycle byte allowance of each port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortBudget {
    pub fetch: u32,
    pub load_store: u32,
    pub net_receive: u32,
    pub net_send: u32,
}

impl Default for PortBudget {
    fn default() -> Self {
        Self {
            fetch: PORT_BYTES,
            load_store: PORT_BYTES,
            net_receive: PORT_BYTES,
            net_send: PORT_BYTES,
        }
    }
}

impl PortBudget {
    pub fn validate(&self) -> Result<(), NodeError> {
        for b in [self.fetch, self.load_store, self.net_receive, self.net_send] {
            if b > PORT_BYTES {
                return Err(NodeError::BadBudget(b));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u32 {
        self.fetch + self.load_store + self.net_receive + self.net_send
    }
}

/// A port's access this cycle; `bank` is `None` for accesses that do not touch the scratchpad.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRequest {
    pub port: NodePort,
    pub bank: Option<usize>,
}

/// Grants requests in port priority order; a request loses only to a
/// higher-priority request for the same bank.
pub fn grant_ports(requests: &[PortRequest]) -> Vec<(NodePort, bool)> {
    let mut sorted: Vec<PortRequest> = requests.to_vec();
    sorted.sort_by_key(|r| r.port as u8);
    let mut busy = [false; BANKS];
    sorted
        .into_iter()
        .map(|r| match r.bank {
            None => (r.port, true),
            Some(b) if busy[b] => (r.port, false),
            Some(b) => {
                busy[b] = true;
                (r.port, true)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    LocalRead,
    LocalWrite,
    RemoteRead,
    RemoteWrite,
}

/// One scripted transaction. For `RemoteRead`, `data` is the return address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptOp {
    pub op: OpKind,
    pub addr: GlobalAddress,
    pub data: u64,
    pub size: u8,
    pub blocking: bool,
}

impl ScriptOp {
    pub fn remote_write(addr: GlobalAddress, data: u64, size: u8) -> Self {
        Self { op: OpKind::RemoteWrite, addr, data, size, blocking: false }
    }

    pub fn remote_read(addr: GlobalAddress, ret: GlobalAddress, size: u8, blocking: bool) -> Self {
        Self { op: OpKind::RemoteRead, addr, data: ret.raw(), size, blocking }
    }

    pub fn local_write(addr: GlobalAddress, data: u64, size: u8) -> Self {
        Self { op: OpKind::LocalWrite, addr, data, size, blocking: false }
    }

    pub fn local_read(addr: GlobalAddress, size: u8) -> Self {
        Self { op: OpKind::LocalRead, addr, data: 0, size, blocking: false }
    }
}

/// Ops in program order, started at `start_cycle`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionScript {
    pub ops: Vec<ScriptOp>,
    #[serde(default)]
    pub start_cycle: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchStream {
    pub base: u32,
    pub len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    /// Default for script reads that do not say otherwise.
    #[serde(default = "yes")]
    pub blocking_reads: bool,
    #[serde(default = "two")]
    pub reply_queue_depth: usize,
    #[serde(default)]
    pub fetch: Option<FetchStream>,
    #[serde(default)]
    pub budget: PortBudget,
}

fn yes() -> bool {
    true
}
fn two() -> usize {
    2
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            blocking_reads: true,
            reply_queue_depth: 2,
            fetch: None,
            budget: PortBudget::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub local_reads: u64,
    pub local_writes: u64,
    pub remote_writes_issued: u64,
    pub remote_reads_issued: u64,
    pub writes_serviced: u64,
    pub reads_serviced: u64,
    pub replies_received: u64,
    pub fetches: u64,
    pub bank_stalls: [u64; 4],
    pub send_refusals: u64,
    pub receive_refusals: u64,
    pub bad_offset_errors: u64,
    pub blocked_cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    LocalRead { index: usize, offset: u32, value: u64, cycle: u64 },
    ReadReply { request: PacketId, offset: u32, value: u64, tick: u64 },
}

/// A remote transaction taking effect at its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub tick: u64,
    pub node: NodeCoord,
    pub kind: PacketKind,
    pub packet: PacketId,
    pub cause: Option<PacketId>,
    pub offset: u32,
    pub size: u8,
    /// Written data, or the data read for a request.
    pub value: u64,
    pub ok: bool,
}

/// A scratchpad mutation, in the order the simulator applied it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemWrite {
    pub node: NodeCoord,
    pub offset: u32,
    pub size: u8,
    pub data: u64,
}

/// A script op that left the node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Issue {
    pub index: usize,
    pub packet: PacketId,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleOutcome {
    /// Bytes moved per port, indexed by [`NodePort`].
    pub bytes: [u32; 4],
    pub local_write: Option<MemWrite>,
    pub sent: Option<PacketId>,
}

impl CycleOutcome {
    pub fn total_bytes(&self) -> u32 {
        self.bytes.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub coord: NodeCoord,
    pub mem: Scratchpad,
    layout: AddressLayout,
    cfg: NodeConfig,
    script: Vec<ScriptOp>,
    pc: usize,
    start_cycle: u64,
    waiting_on: Option<PacketId>,
    replies: VecDeque<(NocPacket, PacketId)>,
    /// Generated traffic waiting for the send port.
    pub traffic_pending: Option<NocPacket>,
    fetch_ptr: u32,
    recv: Option<(u64, Option<usize>, u32)>,
    pub counters: NodeCounters,
    pub observations: Vec<Observation>,
    pub issues: Vec<Issue>,
}

impl Node {
    pub fn new(coord: NodeCoord, layout: AddressLayout, cfg: NodeConfig) -> Self {
        Self {
            coord,
            mem: Scratchpad::default(),
            layout,
            cfg,
            script: Vec::new(),
            pc: 0,
            start_cycle: 0,
            waiting_on: None,
            replies: VecDeque::new(),
            traffic_pending: None,
            fetch_ptr: cfg.fetch.map_or(0, |f| f.base),
            recv: None,
            counters: NodeCounters::default(),
            observations: Vec::new(),
            issues: Vec::new(),
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    fn canonical(&self, addr: GlobalAddress) -> Result<GlobalAddress, AddrError> {
        let (target, offset) = resolve_target(addr, self.coord, self.layout)?;
        encode_address(target, offset, self.layout)
    }

    /// Validates and installs a script. Alias addresses are rewritten to this
    /// node's own coordinates.
    pub fn load_script(&mut self, script: TransactionScript) -> Result<(), NodeError> {
        let bad = |index, reason: String| NodeError::BadScript { node: self.coord, index, reason };
        let mut ops = Vec::with_capacity(script.ops.len());
        for (i, op) in script.ops.into_iter().enumerate() {
            let mut op = op;
            if !matches!(op.size, 1 | 2 | 4 | 8) {
                return Err(bad(i, format!("size {} is not 1, 2, 4 or 8", op.size)));
            }
            match op.op {
                OpKind::LocalRead | OpKind::LocalWrite => {
                    if !is_local(op.addr, self.coord, self.layout).map_err(|e| bad(i, e.to_string()))? {
                        return Err(bad(i, format!("{} is not local", op.addr)));
                    }
                    check_access(op.addr.offset(), op.size).map_err(|e| bad(i, e.to_string()))?;
                }
                OpKind::RemoteWrite => {
                    op.addr = self.canonical(op.addr).map_err(|e| bad(i, e.to_string()))?;
                }
                OpKind::RemoteRead => {
                    op.addr = self.canonical(op.addr).map_err(|e| bad(i, e.to_string()))?;
                    let ret = self.canonical(GlobalAddress(op.data)).map_err(|e| bad(i, e.to_string()))?;
                    if op.blocking && !is_local(ret, self.coord, self.layout).map_err(|e| bad(i, e.to_string()))? {
                        return Err(bad(i, "a blocking read must return to the issuing node".into()));
                    }
                    op.data = ret.raw();
                }
            }
            ops.push(op);
        }
        self.script = ops;
        self.pc = 0;
        self.start_cycle = script.start_cycle;
        Ok(())
    }

    pub fn script(&self) -> &[ScriptOp] {
        &self.script
    }

    pub fn script_done(&self) -> bool {
        self.pc >= self.script.len() && self.waiting_on.is_none()
    }

    pub fn program_counter(&self) -> usize {
        self.pc
    }

    pub fn waiting_on(&self) -> Option<PacketId> {
        self.waiting_on
    }

    /// No script work, no replies to send and no generated packet waiting.
    pub fn is_quiet(&self) -> bool {
        self.script_done() && self.replies.is_empty() && self.traffic_pending.is_none()
    }

    pub fn pending_replies(&self) -> usize {
        self.replies.len()
    }

    /// Applies a remote transaction addressed to this node. Returns the reply
    /// for a read. Bad offsets are counted and the transaction dropped.
    pub fn service_remote(&mut self, pkt: &NocPacket) -> Result<Option<NocPacket>, PacketError> {
        Ok(self.service(pkt)?.1)
    }

    fn service(&mut self, pkt: &NocPacket) -> Result<(Result<u64, NodeError>, Option<NocPacket>), PacketError> {
        let offset = pkt.dst.offset();
        let size = pkt.size_bytes();
        match pkt.kind() {
            PacketKind::ReadRequest => {
                let v = self.mem.read(offset, size);
                match v {
                    Ok(data) => {
                        self.counters.reads_serviced += 1;
                        Ok((Ok(data), Some(make_read_reply(pkt, data)?)))
                    }
                    Err(e) => {
                        self.counters.bad_offset_errors += 1;
                        Ok((Err(e), None))
                    }
                }
            }
            PacketKind::Write | PacketKind::ReadReply => match self.mem.write(offset, size, pkt.payload) {
                Ok(()) => {
                    self.counters.writes_serviced += 1;
                    Ok((Ok(pkt.payload), None))
                }
                Err(e) => {
                    self.counters.bad_offset_errors += 1;
                    Ok((Err(e), None))
                }
            },
        }
    }

    /// Network receive port. Returns `None` when the node pushes back: the
    /// port already moved a packet this cycle, or a read request finds the
    /// reply queue full.
    pub fn receive(&mut self, cycle: u64, tick: u64, flit: &Flit) -> Option<ServiceRecord> {
        if matches!(self.recv, Some((c, _, _)) if c == cycle) {
            self.counters.receive_refusals += 1;
            return None;
        }
        let pkt = &flit.packet;
        if pkt.kind() == PacketKind::ReadRequest && self.replies.len() >= self.cfg.reply_queue_depth {
            self.counters.receive_refusals += 1;
            return None;
        }
        let offset = pkt.dst.offset();
        let (result, reply) = self.service(pkt).expect("request packets always carry a valid return address");
        let bank = bank_of(offset).ok();
        self.recv = Some((cycle, bank, pkt.size_bytes().into()));
        if let Some(r) = reply {
            self.replies.push_back((r, flit.id));
        }
        if pkt.kind() == PacketKind::ReadReply {
            self.counters.replies_received += 1;
            if let (Some(cause), Ok(value)) = (flit.cause, &result) {
                self.observations.push(Observation::ReadReply { request: cause, offset, value: *value, tick });
            }
            if flit.cause.is_some() && flit.cause == self.waiting_on {
                self.waiting_on = None;
            }
        }
        Some(ServiceRecord {
            tick,
            node: self.coord,
            kind: pkt.kind(),
            packet: flit.id,
            cause: flit.cause,
            offset,
            size: pkt.size_bytes(),
            value: *result.as_ref().unwrap_or(&0),
            ok: result.is_ok(),
        })
    }

    fn script_head(&self, cycle: u64) -> Option<(usize, ScriptOp)> {
        (cycle >= self.start_cycle && self.waiting_on.is_none() && self.pc < self.script.len())
            .then(|| (self.pc, self.script[self.pc]))
    }

    /// The node's end-of-cycle work: load/store, fetch and send, arbitrated
    /// against the bank the receive port used this cycle.
    ///
    /// `send` injects a packet (with an optional causing request) and
    /// returns its id, or `None` if the network refused it.
    pub fn node_cycle<F>(&mut self, cycle: u64, tick: u64, mut send: F) -> Result<CycleOutcome, NodeError>
    where
        F: FnMut(NocPacket, Option<PacketId>) -> Result<Option<PacketId>, NocError>,
    {
        let mut out = CycleOutcome::default();
        let mut requests = Vec::with_capacity(4);
        if let Some((c, bank, bytes)) = self.recv {
            if c == cycle {
                requests.push(PortRequest { port: NodePort::NetReceive, bank });
                out.bytes[NodePort::NetReceive as usize] = bytes;
            }
        }
        let head = self.script_head(cycle);
        if head.is_none() && self.waiting_on.is_some() {
            self.counters.blocked_cycles += 1;
        }
        let local_head = head.filter(|(_, op)| matches!(op.op, OpKind::LocalRead | OpKind::LocalWrite));
        if let Some((_, op)) = local_head {
            if self.cfg.budget.load_store >= u32::from(op.size) {
                requests.push(PortRequest { port: NodePort::LoadStore, bank: Some(bank_of(op.addr.offset())?) });
            }
        }
        let fetch = self.cfg.fetch.filter(|_| self.cfg.budget.fetch >= PORT_BYTES);
        if fetch.is_some() {
            requests.push(PortRequest { port: NodePort::Fetch, bank: Some(bank_of(self.fetch_ptr)?) });
        }
        let sending = self.cfg.budget.net_send >= PORT_BYTES
            && (!self.replies.is_empty()
                || matches!(head, Some((_, op)) if matches!(op.op, OpKind::RemoteRead | OpKind::RemoteWrite))
                || self.traffic_pending.is_some());
        if sending {
            requests.push(PortRequest { port: NodePort::NetSend, bank: None });
        }

        for (port, granted) in grant_ports(&requests) {
            if !granted {
                self.counters.bank_stalls[port as usize] += 1;
                continue;
            }
            match port {
                NodePort::NetReceive => {}
                NodePort::LoadStore => {
                    let (index, op) = local_head.expect("load/store requested for a local op");
                    let offset = op.addr.offset();
                    if op.op == OpKind::LocalRead {
                        let value = self.mem.read(offset, op.size)?;
                        self.observations.push(Observation::LocalRead { index, offset, value, cycle });
                        self.counters.local_reads += 1;
                    } else {
                        self.mem.write(offset, op.size, op.data)?;
                        out.local_write = Some(MemWrite { node: self.coord, offset, size: op.size, data: op.data });
                        self.counters.local_writes += 1;
                    }
                    out.bytes[NodePort::LoadStore as usize] = op.size.into();
                    self.pc += 1;
                }
                NodePort::Fetch => {
                    let f = fetch.expect("fetch requested");
                    self.fetch_ptr += PORT_BYTES;
                    if self.fetch_ptr >= f.base + f.len.max(PORT_BYTES) {
                        self.fetch_ptr = f.base;
                    }
                    self.counters.fetches += 1;
                    out.bytes[NodePort::Fetch as usize] = PORT_BYTES;
                }
                NodePort::NetSend => {
                    out.sent = self.try_send(cycle, tick, head, &mut send)?;
                    if out.sent.is_some() {
                        out.bytes[NodePort::NetSend as usize] = PORT_BYTES;
                    }
                }
            }
        }
        debug_assert!(out.bytes.iter().all(|b| *b <= PORT_BYTES));
        Ok(out)
    }

    fn try_send<F>(
        &mut self,
        _cycle: u64,
        tick: u64,
        head: Option<(usize, ScriptOp)>,
        send: &mut F,
    ) -> Result<Option<PacketId>, NodeError>
    where
        F: FnMut(NocPacket, Option<PacketId>) -> Result<Option<PacketId>, NocError>,
    {
        if let Some(&(reply, cause)) = self.replies.front() {
            let id = send(reply, Some(cause))?;
            match id {
                Some(_) => {
                    self.replies.pop_front();
                }
                None => self.counters.send_refusals += 1,
            }
            return Ok(id);
        }
        if let Some((index, op)) = head.filter(|(_, op)| matches!(op.op, OpKind::RemoteRead | OpKind::RemoteWrite)) {
            let pkt = match op.op {
                OpKind::RemoteWrite => make_write(op.addr, op.data, op.size.into())?,
                _ => make_read_request(op.addr, GlobalAddress(op.data), op.size.into())?,
            };
            let id = send(pkt, None)?;
            match id {
                Some(id) => {
                    self.pc += 1;
                    self.issues.push(Issue { index, packet: id, tick });
                    if op.op == OpKind::RemoteRead {
                        self.counters.remote_reads_issued += 1;
                        if op.blocking {
                            self.waiting_on = Some(id);
                        }
                    } else {
                        self.counters.remote_writes_issued += 1;
                    }
                }
                None => self.counters.send_refusals += 1,
            }
            return Ok(id);
        }
        if let Some(pkt) = self.traffic_pending {
            let id = send(pkt, None)?;
            match id {
                Some(_) => self.traffic_pending = None,
                None => self.counters.send_refusals += 1,
            }
            return Ok(id);
        }
        Ok(None)
    }
}
