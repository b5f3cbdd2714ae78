//! Chip-to-chip extension of the mesh.
//!
//! Each chip side has 32 io-slices. When two chips abut, the slices of the
//! shared edge run in link mode and carry mesh packets of all three planes
//! to the neighbouring chip's edge router. Slices are split evenly over the
//! routers of the edge; a link bundle serving one edge router moves whole
//! 17-byte packets once it has accumulated enough payload credit.

use crate::addrmap::{decode_address, ChipGeometry, NodeCoord};
use crate::noc::{Fabric, FabricConfig, NocError, Topology};
use crate::packet::{ArrayDims, NocPacket, PacketError, PACKET_BYTES};
use crate::router::{Direction, Flit};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const SLICES_PER_SIDE: u32 = 32;
pub const PINS_PER_SLICE: u32 = 8;
pub const DEFAULT_SLICE_RATE: f64 = 1.5;
const PACKET_CREDIT_MILLI: u64 = PACKET_BYTES as u64 * 1000;
const RX_DEPTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    /// Payload bytes per IO clock carried by one io-slice.
    #[serde(default = "default_rate")]
    pub payload_rate: f64,
    /// IO clocks per core clock.
    #[serde(default = "default_ratio")]
    pub clock_ratio: f64,
    #[serde(default = "default_depth")]
    pub queue_depth: usize,
}

fn default_rate() -> f64 {
    DEFAULT_SLICE_RATE
}
fn default_ratio() -> f64 {
    1.0
}
fn default_depth() -> usize {
    4
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            payload_rate: DEFAULT_SLICE_RATE,
            clock_ratio: 1.0,
            queue_depth: 4,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.payload_rate.is_finite() && self.payload_rate > 0.0) {
            return Err(format!("payload_rate must be positive, got {}", self.payload_rate));
        }
        if !(self.clock_ratio.is_finite() && self.clock_ratio >= 0.001) {
            return Err(format!("clock_ratio must be >= 0.001, got {}", self.clock_ratio));
        }
        if self.queue_depth == 0 {
            return Err("queue_depth must be at least 1".into());
        }
        Ok(())
    }

    pub(crate) fn io_ratio_milli(&self) -> u64 {
        (self.clock_ratio * 1000.0).round() as u64
    }

    fn slice_rate_milli(&self) -> u64 {
        (self.payload_rate * 1000.0).round() as u64
    }
}

/// The io-slices serving edge router `j` of an edge `edge_len` routers long.
pub fn slices_for(j: u32, edge_len: u32) -> std::ops::Range<u32> {
    (j * SLICES_PER_SIDE / edge_len)..((j + 1) * SLICES_PER_SIDE / edge_len)
}

/// One direction of a chip-to-chip link bundle.
#[derive(Debug, Clone)]
pub struct ChipLink {
    pub from: NodeCoord,
    pub to: NodeCoord,
    pub side: Direction,
    pub slices: std::ops::Range<u32>,
    rate_milli: u64,
    credit_milli: u64,
    tx: [VecDeque<Flit>; 3],
    rx: [VecDeque<Flit>; 3],
    depth: usize,
    rr: usize,
    pub transferred: u64,
}

impl ChipLink {
    pub fn new(side: Direction, slices: std::ops::Range<u32>, cfg: &LinkConfig) -> Self {
        let n = u64::from(slices.end - slices.start);
        Self {
            from: NodeCoord::default(),
            to: NodeCoord::default(),
            side,
            slices,
            rate_milli: n * cfg.slice_rate_milli(),
            credit_milli: 0,
            tx: Default::default(),
            rx: Default::default(),
            depth: cfg.queue_depth,
            rr: 0,
            transferred: 0,
        }
    }

    pub(crate) fn between(topo: &Topology, from: NodeCoord, side: Direction, cfg: &LinkConfig) -> Result<Self, NocError> {
        let (edge_len, j) = if side.is_horizontal() {
            (topo.geom.rows, from.y % topo.geom.rows)
        } else {
            (topo.geom.cols, from.x % topo.geom.cols)
        };
        if edge_len > SLICES_PER_SIDE {
            return Err(NocError::EdgeTooLong(edge_len));
        }
        let mut l = ChipLink::new(side, slices_for(j, edge_len), cfg);
        l.from = from;
        l.to = topo.neighbor(from, side).expect("link to an existing neighbour");
        Ok(l)
    }

    /// Payload bytes per IO clock, as a float.
    pub fn payload_rate(&self) -> f64 {
        self.rate_milli as f64 / 1000.0
    }

    pub fn can_accept(&self, plane: usize) -> bool {
        self.tx[plane].len() < self.depth
    }

    /// Enqueues for transmission. Callers check [`ChipLink::can_accept`] first.
    pub fn push(&mut self, plane: usize, f: Flit) {
        debug_assert!(self.can_accept(plane));
        self.tx[plane].push_back(f);
    }

    pub fn take_arrival(&mut self, plane: usize) -> Option<Flit> {
        self.rx[plane].pop_front()
    }

    pub(crate) fn return_arrival(&mut self, plane: usize, f: Flit) {
        self.rx[plane].push_front(f);
    }

    pub fn queued(&self, plane: usize) -> usize {
        self.tx[plane].len() + self.rx[plane].len()
    }

    pub fn credit(&self) -> f64 {
        self.credit_milli as f64 / 1000.0
    }

    fn next_plane(&self) -> Option<usize> {
        (0..3)
            .map(|s| (self.rr + s) % 3)
            .find(|&k| !self.tx[k].is_empty() && self.rx[k].len() < RX_DEPTH)
    }

    /// One IO clock. Returns how many packets crossed.
    ///
    /// Credit accrues at the bundle's payload rate; each crossing spends a
    /// full packet's worth and partial-packet credit left over after a
    /// crossing is discarded, so a lone slice at 1.5 B/clock moves one
    /// packet every 12 clocks. With nothing to send the credit saturates at
    /// one packet.
    pub fn link_tick(&mut self) -> usize {
        self.credit_milli += self.rate_milli;
        let mut moved = 0;
        while self.credit_milli >= PACKET_CREDIT_MILLI {
            let Some(k) = self.next_plane() else { break };
            let f = self.tx[k].pop_front().expect("selected plane has a packet");
            self.rx[k].push_back(f);
            self.rr = (k + 1) % 3;
            self.credit_milli -= PACKET_CREDIT_MILLI;
            moved += 1;
        }
        if moved > 0 {
            self.credit_milli = 0;
        } else {
            self.credit_milli = self.credit_milli.min(PACKET_CREDIT_MILLI);
        }
        self.transferred += moved as u64;
        moved
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceMode {
    Link,
    /// Represented but has no effect on traffic.
    Gpio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoSlice {
    pub side: Direction,
    pub index: u32,
    pub mode: SliceMode,
    pub pins: u32,
    pub payload_rate: f64,
}

/// A (chip, side) edge wired to a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bundle {
    pub chip: (u32, u32),
    pub side: Direction,
    pub links: usize,
    pub slices: u32,
}

/// A 2D array of chips sharing one global node grid.
#[derive(Debug, Clone)]
pub struct ChipArray {
    pub fabric: Fabric,
    slices: Vec<Vec<IoSlice>>,
}

impl ChipArray {
    pub fn topo(&self) -> &Topology {
        &self.fabric.topo
    }

    pub fn dims(&self) -> ArrayDims {
        self.fabric.topo.array
    }

    pub fn chip_slices(&self, chip: (u32, u32)) -> &[IoSlice] {
        &self.slices[(chip.1 * self.dims().chips_x + chip.0) as usize]
    }

    pub fn pin_count(&self, chip: (u32, u32)) -> u32 {
        self.chip_slices(chip).iter().map(|s| s.pins).sum()
    }

    pub fn aggregate_payload_rate(&self, chip: (u32, u32)) -> f64 {
        self.chip_slices(chip).iter().map(|s| s.payload_rate).sum()
    }

    pub fn bundles(&self) -> Vec<Bundle> {
        let mut out: Vec<Bundle> = Vec::new();
        let topo = *self.topo();
        for l in self.fabric.links() {
            let chip = topo.chip_of(l.from);
            let n = l.slices.end - l.slices.start;
            match out.iter_mut().find(|b| b.chip == chip && b.side == l.side) {
                Some(b) => {
                    b.links += 1;
                    b.slices += n;
                }
                None => out.push(Bundle {
                    chip,
                    side: l.side,
                    links: 1,
                    slices: n,
                }),
            }
        }
        out
    }
}

pub fn build_array(
    chips_x: u32,
    chips_y: u32,
    geom: ChipGeometry,
    layout: crate::addrmap::AddressLayout,
    cfg: FabricConfig,
) -> Result<ChipArray, NocError> {
    let topo = Topology {
        geom,
        array: ArrayDims { chips_x, chips_y },
        layout,
    };
    let fabric = Fabric::new(topo, cfg)?;
    let mut slices = Vec::with_capacity((chips_x * chips_y) as usize);
    for cy in 0..chips_y {
        for cx in 0..chips_x {
            let mut chip = Vec::with_capacity(4 * SLICES_PER_SIDE as usize);
            for side in Direction::MESH {
                let abutting = match side {
                    Direction::North => cy > 0,
                    Direction::South => cy + 1 < chips_y,
                    Direction::West => cx > 0,
                    Direction::East => cx + 1 < chips_x,
                    Direction::Hub => false,
                };
                for index in 0..SLICES_PER_SIDE {
                    chip.push(IoSlice {
                        side,
                        index,
                        mode: if abutting { SliceMode::Link } else { SliceMode::Gpio },
                        pins: PINS_PER_SLICE,
                        payload_rate: cfg.link.payload_rate,
                    });
                }
            }
            slices.push(chip);
        }
    }
    let array = ChipArray { fabric, slices };
    debug_assert!((0..chips_y).all(|cy| (0..chips_x).all(|cx| array.pin_count((cx, cy)) == 1024)));
    Ok(array)
}

/// Side through which a packet leaves `self_chip`: global y is resolved
/// before global x, as on chip.
pub fn route_offchip(self_chip: (u32, u32), pkt: &NocPacket, topo: &Topology) -> Result<Direction, NocError> {
    let (dst, _) = decode_address(pkt.dst, topo.layout).map_err(PacketError::from)?;
    if !topo.contains(dst) {
        return Err(NocError::Unroutable(dst));
    }
    let (cx, cy) = topo.chip_of(dst);
    use std::cmp::Ordering::*;
    Ok(match cy.cmp(&self_chip.1) {
        Greater => Direction::South,
        Less => Direction::North,
        Equal => match cx.cmp(&self_chip.0) {
            Greater => Direction::East,
            Less => Direction::West,
            Equal => Direction::Hub,
        },
    })
}
