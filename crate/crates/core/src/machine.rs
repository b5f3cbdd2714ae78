//! A full system: the fabric plus one node per grid coordinate.
//!
//! Each core cycle is two fabric ticks, during which nodes accept ejected
//! packets through their receive ports, followed by every node's
//! end-of-cycle work in raster order. Packets offered by a node therefore
//! enter the fabric on the first tick of the next cycle.

use crate::addrmap::{encode_address, AddressLayout, ChipGeometry, GlobalAddress, NodeCoord};
use crate::error::{Error, Result};
use crate::multichip::{build_array, ChipArray};
use crate::node::traffic::{TrafficGen, TrafficOp, TrafficPattern};
use crate::node::{MemWrite, Node, NodeConfig, NodePort, ServiceRecord, TransactionScript, PORT_BYTES};
use crate::noc::{Delivery, EjectSink, FabricConfig, Topology, TICKS_PER_CYCLE};
use crate::packet::{make_read_request, make_write, NetworkClass, NocPacket, PacketKind};
use crate::router::Flit;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Scratchpad window targeted by synthetic traffic, away from script data.
pub const TRAFFIC_BASE: u32 = 0xC000;
const TRAFFIC_SPAN: u32 = 0x4000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub fabric: FabricConfig,
    pub node: NodeConfig,
    /// Keep service and memory-write logs.
    pub log: bool,
    /// Recount every buffered packet after each cycle.
    pub check_conservation: bool,
}


/// A fixed-destination background stream from one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub src: NodeCoord,
    pub dst: NodeCoord,
    pub op: TrafficOp,
    pub rate: f64,
    pub start: u64,
    pub stop: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineLog {
    pub services: Vec<ServiceRecord>,
    /// Every scratchpad mutation in the order it happened.
    pub writes: Vec<MemWrite>,
}

/// Delivery accounting since the last [`DeliveryStats::reset`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeliveryStats {
    pub delivered: [u64; 3],
    pub payload_bytes: [u64; 3],
    /// Count of deliveries by latency in ticks.
    pub latency_ticks: Vec<u64>,
    pub offered: u64,
}

impl DeliveryStats {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    fn record(&mut self, d: &Delivery) {
        let k = d.plane.index();
        self.delivered[k] += 1;
        self.payload_bytes[k] += d.flit.packet.payload_bytes();
        let lat = d.latency_ticks() as usize;
        if self.latency_ticks.len() <= lat {
            self.latency_ticks.resize(lat + 1, 0);
        }
        self.latency_ticks[lat] += 1;
    }

    pub fn total_delivered(&self) -> u64 {
        self.delivered.iter().sum()
    }
}

struct NodeSink<'a> {
    nodes: &'a mut [Node],
    topo: Topology,
    cycle: u64,
    log: Option<&'a mut MachineLog>,
}

impl EjectSink for NodeSink<'_> {
    fn accept(&mut self, tick: u64, flit: &Flit) -> bool {
        let node = &mut self.nodes[self.topo.index(flit.dst)];
        match node.receive(self.cycle, tick, flit) {
            None => false,
            Some(rec) => {
                if let Some(log) = self.log.as_deref_mut() {
                    if rec.ok && rec.kind != PacketKind::ReadRequest {
                        log.writes.push(MemWrite {
                            node: rec.node,
                            offset: rec.offset,
                            size: rec.size,
                            data: rec.value,
                        });
                    }
                    log.services.push(rec);
                }
                true
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Machine {
    pub array: ChipArray,
    nodes: Vec<Node>,
    traffic: Option<TrafficGen>,
    flows: Vec<(Flow, Option<u64>)>,
    flow_rng: ChaCha8Rng,
    injecting: bool,
    log: Option<MachineLog>,
    pub stats: DeliveryStats,
    cfg: MachineConfig,
    deliveries: Vec<Delivery>,
}

fn threshold(rate: f64) -> Option<u64> {
    (rate < 1.0).then(|| (rate.max(0.0) * 18_446_744_073_709_551_616.0) as u64)
}

impl Machine {
    pub fn new(array: ChipArray, cfg: MachineConfig) -> Result<Self> {
        cfg.node.budget.validate()?;
        let topo = *array.topo();
        let nodes = (0..topo.nodes())
            .map(|i| Node::new(topo.coord(i), topo.layout, cfg.node))
            .collect();
        Ok(Self {
            array,
            nodes,
            traffic: None,
            flows: Vec::new(),
            flow_rng: ChaCha8Rng::seed_from_u64(0),
            injecting: true,
            log: cfg.log.then(MachineLog::default),
            stats: DeliveryStats::default(),
            cfg,
            deliveries: Vec::new(),
        })
    }

    /// A single chip of `rows` x `cols` nodes.
    pub fn single(rows: u32, cols: u32, cfg: MachineConfig) -> Result<Self> {
        Self::array(1, 1, rows, cols, AddressLayout::default(), cfg)
    }

    pub fn array(chips_x: u32, chips_y: u32, rows: u32, cols: u32, layout: AddressLayout, cfg: MachineConfig) -> Result<Self> {
        let geom = ChipGeometry::new(rows, cols)?;
        Self::new(build_array(chips_x, chips_y, geom, layout, cfg.fabric)?, cfg)
    }

    pub fn topo(&self) -> Topology {
        *self.array.topo()
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    pub fn cycle(&self) -> u64 {
        self.array.fabric.cycle()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, c: NodeCoord) -> &Node {
        &self.nodes[self.topo().index(c)]
    }

    pub fn node_mut(&mut self, c: NodeCoord) -> &mut Node {
        let i = self.topo().index(c);
        &mut self.nodes[i]
    }

    pub fn log(&self) -> Option<&MachineLog> {
        self.log.as_ref()
    }

    pub fn address(&self, c: NodeCoord, offset: u32) -> Result<GlobalAddress> {
        Ok(encode_address(c, offset, self.topo().layout)?)
    }

    fn check_node(&self, c: NodeCoord) -> Result<()> {
        if self.topo().contains(c) {
            Ok(())
        } else {
            Err(Error::Config(format!("node {c} is outside the {}x{} grid", self.topo().grid_cols(), self.topo().grid_rows())))
        }
    }

    /// Installs a script after checking every remote target is routable.
    pub fn load_script(&mut self, c: NodeCoord, script: TransactionScript) -> Result<()> {
        self.check_node(c)?;
        let topo = self.topo();
        let node = self.node_mut(c);
        node.load_script(script)?;
        for op in node.script() {
            if matches!(op.op, crate::node::OpKind::RemoteRead | crate::node::OpKind::RemoteWrite) {
                let pkt = if op.op == crate::node::OpKind::RemoteWrite {
                    make_write(op.addr, op.data, op.size.into())?
                } else {
                    make_read_request(op.addr, GlobalAddress(op.data), op.size.into())?
                };
                topo.place(c, &pkt)?;
                if let Some(ret) = pkt.return_addr() {
                    topo.place(topo.coord(0), &make_write(ret, 0, 8)?)?;
                }
            }
        }
        Ok(())
    }

    pub fn set_pattern(&mut self, pattern: TrafficPattern) -> Result<()> {
        let t = self.topo();
        self.traffic = Some(TrafficGen::new(pattern, t.grid_rows(), t.grid_cols())?);
        Ok(())
    }

    pub fn clear_pattern(&mut self) {
        self.traffic = None;
    }

    pub fn add_flow(&mut self, flow: Flow) -> Result<()> {
        self.check_node(flow.src)?;
        self.check_node(flow.dst)?;
        if flow.src == flow.dst {
            return Err(Error::Config(format!("flow from {} targets itself", flow.src)));
        }
        self.flows.push((flow, threshold(flow.rate)));
        Ok(())
    }

    pub fn set_flow_seed(&mut self, seed: u64) {
        self.flow_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_injecting(&mut self, on: bool) {
        self.injecting = on;
    }

    fn traffic_packet(&self, src: NodeCoord, dst: NodeCoord, op: TrafficOp, size: u8, data: u64) -> Result<NocPacket> {
        let topo = self.topo();
        let slot = (topo.index(src) as u32 * 8) % TRAFFIC_SPAN;
        let offset = TRAFFIC_BASE + slot - slot % u32::from(size.max(1));
        let addr = self.address(dst, offset)?;
        Ok(match op {
            TrafficOp::Write => make_write(addr, data, size.into())?,
            TrafficOp::Read => make_read_request(addr, self.address(src, offset)?, size.into())?,
        })
    }

    fn offer_traffic(&mut self, cycle: u64) -> Result<()> {
        if !self.injecting {
            return Ok(());
        }
        let topo = self.topo();
        if let Some(gen) = &self.traffic {
            let pattern = *gen.pattern();
            for i in 0..self.nodes.len() {
                if self.nodes[i].traffic_pending.is_some() {
                    continue;
                }
                let src = topo.coord(i);
                if let Some(dst) = gen.decide(src, cycle) {
                    let pkt = self.traffic_packet(src, dst, pattern.op, pattern.size, cycle)?;
                    self.nodes[i].traffic_pending = Some(pkt);
                    self.stats.offered += 1;
                }
            }
        }
        for k in 0..self.flows.len() {
            let (flow, thr) = self.flows[k];
            if cycle < flow.start || cycle >= flow.stop {
                continue;
            }
            let mut rng = self.flow_rng.clone();
            rng.set_stream(k as u64);
            rng.set_word_pos(u128::from(cycle) * 2);
            let fire = thr.is_none_or(|t| rng.next_u64() < t);
            let i = topo.index(flow.src);
            if fire && self.nodes[i].traffic_pending.is_none() {
                let pkt = self.traffic_packet(flow.src, flow.dst, flow.op, 8, cycle)?;
                self.nodes[i].traffic_pending = Some(pkt);
                self.stats.offered += 1;
            }
        }
        Ok(())
    }

    /// Advances one core cycle.
    pub fn step_cycle(&mut self) -> Result<()> {
        let cycle = self.cycle();
        let topo = self.topo();
        for _ in 0..TICKS_PER_CYCLE {
            let mut sink = NodeSink {
                nodes: &mut self.nodes,
                topo,
                cycle,
                log: self.log.as_mut(),
            };
            self.array.fabric.step_into(&mut sink, &mut self.deliveries);
        }
        for d in self.deliveries.drain(..) {
            self.stats.record(&d);
        }
        self.offer_traffic(cycle)?;
        let tick = self.array.fabric.tick();
        let budget = self.cfg.node.budget;
        let caps = [budget.net_receive, budget.load_store, budget.fetch, budget.net_send];
        for i in 0..self.nodes.len() {
            let src = topo.coord(i);
            let fabric = &mut self.array.fabric;
            let out = self.nodes[i].node_cycle(cycle, tick, |p, cause| fabric.try_inject(src, p, cause))?;
            if let (Some(w), Some(log)) = (out.local_write, self.log.as_mut()) {
                log.writes.push(w);
            }
            let over = NodePort::PRIORITY.iter().any(|p| out.bytes[*p as usize] > caps[*p as usize]);
            if over || out.total_bytes() > 4 * PORT_BYTES {
                return Err(Error::Invariant {
                    cycle,
                    what: format!("node {src} moved {:?} bytes on its ports", out.bytes),
                });
            }
        }
        if self.cfg.check_conservation && !self.array.fabric.conservation_holds() {
            return Err(Error::Invariant {
                cycle,
                what: "injected != delivered + buffered".into(),
            });
        }
        Ok(())
    }

    pub fn run_cycles(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            self.step_cycle()?;
        }
        Ok(())
    }

    /// Fabric empty and every node out of work.
    pub fn is_quiescent(&self) -> bool {
        self.array.fabric.is_idle() && self.nodes.iter().all(Node::is_quiet)
    }

    /// Runs with traffic generation off until quiescent. Returns false if
    /// `max_cycles` ran out first.
    pub fn run_until_quiescent(&mut self, max_cycles: u64) -> Result<bool> {
        let was = self.injecting;
        self.injecting = false;
        let mut done = self.is_quiescent();
        for _ in 0..max_cycles {
            if done {
                break;
            }
            self.step_cycle()?;
            done = self.is_quiescent();
        }
        self.injecting = was;
        Ok(done)
    }

    /// Scratchpad images in raster order.
    pub fn memories(&self) -> Vec<&[u8]> {
        self.nodes.iter().map(|n| n.mem.as_bytes()).collect()
    }

    /// Delivered packet counts per plane since construction.
    pub fn delivered_per_plane(&self) -> [u64; 3] {
        NetworkClass::ALL.map(|c| self.array.fabric.plane(c).delivered)
    }
}
