//! Final scratchpad contents of random scripted workloads against two
//! sequential references: the simulator's own mutation log replayed in
//! order, and a program-order execution of the scripts.

use emesh_core::addrmap::{AddressLayout, NodeCoord};
use emesh_core::machine::{Machine, MachineConfig};
use emesh_core::node::OpKind;
use emesh_core::packet::PacketKind;
use emesh_core::workload::{random_workload, ro_byte, Workload, RO_BYTES};

const SPAD: usize = 65536;

fn initial(w: &Workload) -> Vec<Vec<u8>> {
    (0..(w.rows * w.cols) as usize)
        .map(|i| (0..SPAD as u32).map(|o| if o < RO_BYTES { ro_byte(w.seed, i, o) } else { 0 }).collect())
        .collect()
}

// x in address bits [34:20], y in [49:35]
fn split(addr: u64, cols: u32) -> (usize, usize) {
    let x = ((addr >> 20) & 0x7FFF) as u32;
    let y = ((addr >> 35) & 0x7FFF) as u32;
    ((y * cols + x) as usize, (addr & 0xF_FFFF) as usize)
}

fn store(mem: &mut [u8], off: usize, size: u8, data: u64) {
    mem[off..off + size as usize].copy_from_slice(&data.to_le_bytes()[..size as usize]);
}

fn load(mem: &[u8], off: usize, size: u8) -> u64 {
    let mut b = [0u8; 8];
    b[..size as usize].copy_from_slice(&mem[off..off + size as usize]);
    u64::from_le_bytes(b)
}

fn program_order(w: &Workload) -> Vec<Vec<u8>> {
    let init = initial(w);
    let mut mem = init.clone();
    for (c, s) in &w.scripts {
        let me = (c.y * w.cols + c.x) as usize;
        for op in &s.ops {
            let (node, off) = split(op.addr.raw(), w.cols);
            match op.op {
                OpKind::LocalRead => {}
                OpKind::LocalWrite => store(&mut mem[me], off, op.size, op.data),
                OpKind::RemoteWrite => store(&mut mem[node], off, op.size, op.data),
                OpKind::RemoteRead => {
                    let v = load(&init[node], off, op.size);
                    let (rn, roff) = split(op.data, w.cols);
                    store(&mut mem[rn], roff, op.size, v);
                }
            }
        }
    }
    mem
}

fn simulate(w: &Workload, chips: u32) -> Machine {
    let cfg = MachineConfig { log: true, check_conservation: true, ..Default::default() };
    let (rows, cols) = (w.rows / chips, w.cols / chips);
    let mut m = Machine::array(chips, chips, rows, cols, AddressLayout::default(), cfg).unwrap();
    w.install(&mut m).unwrap();
    assert!(m.run_until_quiescent(200_000).unwrap(), "workload {} did not quiesce", w.seed);
    m
}

fn replay(w: &Workload, m: &Machine) -> Vec<Vec<u8>> {
    let mut mem = initial(w);
    for wr in &m.log().unwrap().writes {
        let i = (wr.node.y * w.cols + wr.node.x) as usize;
        store(&mut mem[i], wr.offset as usize, wr.size, wr.data);
    }
    mem
}

fn check(w: &Workload, m: &Machine) {
    let actual: Vec<Vec<u8>> = m.memories().into_iter().map(<[u8]>::to_vec).collect();
    assert!(actual == replay(w, m), "seed {}: log replay differs", w.seed);
    let reference = program_order(w);
    if actual != reference {
        for (i, (a, r)) in actual.iter().zip(&reference).enumerate() {
            if let Some(o) = (0..SPAD).find(|o| a[*o] != r[*o]) {
                panic!("seed {}: node {i} offset {o:#x}: simulated {:#x}, reference {:#x}", w.seed, a[o], r[o]);
            }
        }
    }
}

fn transactions(m: &Machine) -> Vec<(NodeCoord, PacketKind, u32, u8, u64)> {
    let mut v: Vec<_> = m
        .log()
        .unwrap()
        .services
        .iter()
        .map(|s| (s.node, s.kind, s.offset, s.size, s.value))
        .collect();
    v.sort();
    v
}

#[test]
fn single_chip_4x4_workloads() {
    for seed in 0..150 {
        let w = random_workload(4, 4, AddressLayout::default(), seed).unwrap();
        let m = simulate(&w, 1);
        check(&w, &m);
    }
}

#[test]
fn multichip_matches_flat_mesh() {
    for seed in 1000..1060 {
        let w = random_workload(8, 8, AddressLayout::default(), seed).unwrap();
        let multi = simulate(&w, 2);
        let flat = simulate(&w, 1);
        check(&w, &multi);
        check(&w, &flat);
        assert!(multi.memories() == flat.memories());
        assert_eq!(transactions(&multi), transactions(&flat), "seed {seed}");
        assert!(multi.delivered_per_plane()[2] > 0 || w.remote_ops() == 0);
    }
}
