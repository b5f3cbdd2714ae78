//! Saturating and random loads: packets are conserved every cycle and the
//! fabric always drains once generation stops.

use emesh_core::machine::{Machine, MachineConfig};
use emesh_core::node::traffic::{PatternKind, TrafficOp, TrafficPattern};
use proptest::prelude::*;

fn checked() -> MachineConfig {
    MachineConfig { check_conservation: true, ..Default::default() }
}

fn drain(m: &mut Machine, max: u64) {
    assert!(m.run_until_quiescent(max).unwrap(), "fabric did not drain");
    let f = &m.array.fabric;
    assert_eq!(f.injected(), f.delivered());
    assert!(f.is_idle());
}

#[test]
fn uniform_saturation_on_8x8_drains() {
    let mut m = Machine::single(8, 8, checked()).unwrap();
    m.set_pattern(TrafficPattern::new(PatternKind::UniformRandom, 1.0, 3)).unwrap();
    m.run_cycles(3_000).unwrap();
    assert!(m.array.fabric.in_flight() > 0);
    drain(&mut m, 10_000);
}

#[test]
fn hotspot_reads_drain() {
    let mut m = Machine::single(6, 6, checked()).unwrap();
    let mut p = TrafficPattern::new(PatternKind::Hotspot, 1.0, 8);
    p.op = TrafficOp::Read;
    m.set_pattern(p).unwrap();
    m.run_cycles(2_000).unwrap();
    drain(&mut m, 20_000);
}

const KINDS: [PatternKind; 6] = [
    PatternKind::UniformRandom,
    PatternKind::NearestNeighbor,
    PatternKind::Transpose,
    PatternKind::BitReversal,
    PatternKind::Hotspot,
    PatternKind::MirrorHalves,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_loads_conserve_and_drain(
        rows in 2u32..=6,
        cols in 2u32..=6,
        kind in 0usize..KINDS.len(),
        rate in 0.05f64..=1.0,
        read in any::<bool>(),
        seed in any::<u64>(),
        cycles in 50u64..400,
    ) {
        let kind = KINDS[kind];
        // transpose and bit reversal need square power-of-two meshes
        let (rows, cols) = match kind {
            PatternKind::Transpose => (rows, rows),
            PatternKind::BitReversal => (4, 4),
            _ => (rows, cols),
        };
        let mut m = Machine::single(rows, cols, checked()).unwrap();
        let mut p = TrafficPattern::new(kind, rate, seed);
        p.op = if read { TrafficOp::Read } else { TrafficOp::Write };
        m.set_pattern(p).unwrap();
        m.run_cycles(cycles).unwrap();
        drain(&mut m, 20_000);
    }
}
