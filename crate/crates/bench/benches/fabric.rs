use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use emesh_core::addrmap::AddressLayout;
use emesh_core::machine::{Machine, MachineConfig};
use emesh_core::node::traffic::{PatternKind, TrafficPattern};
use emesh_core::ordering::{adversarial_scenarios, run_litmus};
use emesh_core::workload::random_workload;

fn loaded(rows: u32, cols: u32, kind: PatternKind, rate: f64) -> Machine {
    let mut m = Machine::single(rows, cols, MachineConfig::default()).unwrap();
    m.set_pattern(TrafficPattern::new(kind, rate, 1)).unwrap();
    m.run_cycles(500).unwrap();
    m
}

fn machine_cycles(c: &mut Criterion) {
    let mut g = c.benchmark_group("machine_100_cycles");
    for (name, n, kind, rate) in [
        ("8x8_uniform_0.3", 8, PatternKind::UniformRandom, 0.3),
        ("16x16_uniform_1.0", 16, PatternKind::UniformRandom, 1.0),
        ("16x16_mirror_1.0", 16, PatternKind::MirrorHalves, 1.0),
    ] {
        g.bench_function(name, |b| {
            b.iter_batched_ref(|| loaded(n, n, kind, rate), |m| m.run_cycles(100).unwrap(), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn multichip_workload(c: &mut Criterion) {
    let w = random_workload(8, 8, AddressLayout::default(), 42).unwrap();
    c.bench_function("workload_2x2_chips_of_4x4", |b| {
        b.iter(|| {
            let mut m = Machine::array(2, 2, 4, 4, AddressLayout::default(), MachineConfig::default()).unwrap();
            w.install(&mut m).unwrap();
            black_box(m.run_until_quiescent(100_000).unwrap())
        })
    });
}

fn litmus_scenario(c: &mut Criterion) {
    let mut s = adversarial_scenarios().remove(0);
    s.trials = 1;
    c.bench_function("litmus_adversarial_trial", |b| b.iter(|| black_box(run_litmus(&s).unwrap())));
}

criterion_group!(benches, machine_cycles, multichip_workload, litmus_scenario);
criterion_main!(benches);
