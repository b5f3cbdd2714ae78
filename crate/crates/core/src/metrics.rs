//! Analytic performance figures and measured counterparts.

use crate::addrmap::NodeCoord;
use crate::error::{Error, Result};
use crate::machine::Machine;
use crate::node::traffic::{PatternKind, TrafficOp, TrafficPattern};
use crate::noc::{CutCount, DELIVERY_OVERHEAD_TICKS, HOP_TICKS, TICKS_PER_CYCLE};
use crate::packet::NetworkClass;
use crate::router::Direction;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub cores: u64,
    pub dp_flops_per_core_cycle: u64,
    pub sp_flops_per_core_cycle: u64,
    pub bytes_per_core_cycle: u64,
    pub planes: u64,
    pub link_payload_bytes: u64,
    pub cut_links: u64,
    pub io_links: u64,
    pub io_link_payload: f64,
}

impl Default for SpecConfig {
    fn default() -> Self {
        Self {
            cores: 1024,
            dp_flops_per_core_cycle: 2,
            sp_flops_per_core_cycle: 4,
            bytes_per_core_cycle: 32,
            planes: 3,
            link_payload_bytes: 8,
            cut_links: 32,
            io_links: 128,
            io_link_payload: 1.5,
        }
    }
}

impl SpecConfig {
    /// Defaults scaled to a `rows` x `cols` chip.
    pub fn for_mesh(rows: u32, cols: u32) -> Self {
        Self {
            cores: u64::from(rows) * u64::from(cols),
            cut_links: cols.into(),
            ..Self::default()
        }
    }
}

/// Per-cycle figures; IO bandwidth is per IO clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecMetrics {
    pub dp_flops_per_cycle: u64,
    pub sp_flops_per_cycle: u64,
    pub memory_bytes_per_cycle: u64,
    pub bisection_bytes_per_cycle: u64,
    pub io_bytes_per_io_clock: f64,
}

pub fn spec_metrics(cfg: &SpecConfig) -> SpecMetrics {
    if cfg.cores == 0 {
        return SpecMetrics {
            dp_flops_per_cycle: 0,
            sp_flops_per_cycle: 0,
            memory_bytes_per_cycle: 0,
            bisection_bytes_per_cycle: 0,
            io_bytes_per_io_clock: 0.0,
        };
    }
    SpecMetrics {
        dp_flops_per_cycle: cfg.cores * cfg.dp_flops_per_core_cycle,
        sp_flops_per_cycle: cfg.cores * cfg.sp_flops_per_core_cycle,
        memory_bytes_per_cycle: cfg.cores * cfg.bytes_per_core_cycle,
        bisection_bytes_per_cycle: cfg.planes * cfg.cut_links * 2 * cfg.link_payload_bytes,
        io_bytes_per_io_clock: cfg.io_links as f64 * cfg.io_link_payload,
    }
}

/// Uncongested latency of an `h`-hop packet, in cycles.
pub fn zero_load_latency_cycles(hops: u64) -> f64 {
    (hops * HOP_TICKS + DELIVERY_OVERHEAD_TICKS) as f64 / TICKS_PER_CYCLE as f64
}

/// One value per mesh plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerPlane<T> {
    pub rmesh: T,
    pub cmesh: T,
    pub xmesh: T,
}

impl<T: Copy> PerPlane<T> {
    pub fn from_array(a: [T; 3]) -> Self {
        Self { rmesh: a[0], cmesh: a[1], xmesh: a[2] }
    }

    pub fn get(&self, c: NetworkClass) -> T {
        match c {
            NetworkClass::Rmesh => self.rmesh,
            NetworkClass::Cmesh => self.cmesh,
            NetworkClass::Xmesh => self.xmesh,
        }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.rmesh, self.cmesh, self.xmesh]
    }
}

/// Latency in cycles over packets delivered in the window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: u64,
    pub min: f64,
    pub mean: f64,
    pub p99: f64,
    pub max: f64,
}

impl LatencySummary {
    pub fn from_histogram(hist: &[u64]) -> Self {
        let samples: u64 = hist.iter().sum();
        if samples == 0 {
            return Self::default();
        }
        let cyc = |t: usize| t as f64 / TICKS_PER_CYCLE as f64;
        let min = hist.iter().position(|n| *n > 0).unwrap_or(0);
        let max = hist.iter().rposition(|n| *n > 0).unwrap_or(0);
        let total: u128 = hist.iter().enumerate().map(|(t, n)| t as u128 * u128::from(*n)).sum();
        let rank = samples - samples / 100;
        let mut seen = 0;
        let mut p99 = max;
        for (t, n) in hist.iter().enumerate() {
            seen += n;
            if seen >= rank {
                p99 = t;
                break;
            }
        }
        Self {
            samples,
            min: cyc(min),
            mean: total as f64 / samples as f64 / TICKS_PER_CYCLE as f64,
            p99: cyc(p99),
            max: cyc(max),
        }
    }
}

/// Fraction of window cycles in which a mesh link launched a packet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkUtilization {
    pub links: u64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounters {
    pub bad_offset: u64,
    pub receive_refusals: u64,
    pub send_refusals: u64,
    /// Windows where a plane's cut throughput exceeded its analytic capacity.
    pub capacity_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub name: String,
    pub seed: u64,
    pub rows: u32,
    pub cols: u32,
    pub chips_x: u32,
    pub chips_y: u32,
    pub pattern: Option<PatternKind>,
    pub rate: f64,
    pub warmup: u64,
    pub window: u64,
    pub offered: u64,
    pub injected: PerPlane<u64>,
    pub delivered: PerPlane<u64>,
    pub delivered_bytes_per_cycle: f64,
    pub latency: LatencySummary,
    pub link_utilization: PerPlane<LinkUtilization>,
    /// Payload bytes per cycle over the horizontal mid cut.
    pub cut_bytes_per_cycle: PerPlane<f64>,
    pub cut_capacity_bytes_per_cycle: f64,
    pub errors: ErrorCounters,
    pub drained: Option<bool>,
    pub drain_cycles: Option<u64>,
    pub memory_digest: Option<String>,
}

/// Counters captured at the start of a measurement window.
#[derive(Debug, Clone)]
pub struct WindowStart {
    cycle: u64,
    cut: [CutCount; 3],
    injected: [u64; 3],
    delivered: [u64; 3],
    sent: [Vec<u64>; 3],
}

fn link_counts(m: &Machine, k: usize) -> Vec<u64> {
    let topo = m.topo();
    let plane = &m.array.fabric.planes()[k];
    plane
        .mesh_links(&topo)
        .into_iter()
        .map(|(c, d)| plane.router(&topo, c).sent[d.index()])
        .collect()
}

fn mid_cut(m: &Machine) -> u32 {
    m.topo().grid_rows() / 2
}

impl WindowStart {
    /// Snapshots counters and clears the delivery statistics.
    pub fn begin(m: &mut Machine) -> Self {
        m.stats.reset();
        Self {
            cycle: m.cycle(),
            cut: m.array.fabric.cut_counters(mid_cut(m)),
            injected: NetworkClass::ALL.map(|c| m.array.fabric.plane(c).injected),
            delivered: m.delivered_per_plane(),
            sent: [link_counts(m, 0), link_counts(m, 1), link_counts(m, 2)],
        }
    }
}

/// Identifying fields of a report.
#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub name: String,
    pub seed: u64,
    pub pattern: Option<PatternKind>,
    pub rate: f64,
    pub warmup: u64,
}

pub fn cut_capacity(cols: u32) -> f64 {
    f64::from(cols) * 2.0 * 8.0
}

/// Builds a report for the window that began at `start`.
pub fn window_report(m: &Machine, start: &WindowStart, meta: ReportMeta) -> StatsReport {
    let topo = m.topo();
    let window = m.cycle() - start.cycle;
    let w = window.max(1) as f64;
    let cut_now = m.array.fabric.cut_counters(mid_cut(m));
    let cut = PerPlane::from_array([0, 1, 2].map(|k| (cut_now[k].bytes - start.cut[k].bytes) as f64 / w));
    let capacity = cut_capacity(topo.grid_cols());
    let injected_now = NetworkClass::ALL.map(|c| m.array.fabric.plane(c).injected);
    let delivered_now = m.delivered_per_plane();
    let util = [0, 1, 2].map(|k| {
        let now = link_counts(m, k);
        let per: Vec<f64> = now.iter().zip(&start.sent[k]).map(|(a, b)| (a - b) as f64 / w).collect();
        LinkUtilization {
            links: per.len() as u64,
            mean: if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 },
            max: per.iter().copied().fold(0.0, f64::max),
        }
    });
    let mut errors = ErrorCounters::default();
    for n in m.nodes() {
        errors.bad_offset += n.counters.bad_offset_errors;
        errors.receive_refusals += n.counters.receive_refusals;
        errors.send_refusals += n.counters.send_refusals;
    }
    errors.capacity_violations = cut.to_array().iter().filter(|b| **b > capacity).count() as u64;
    StatsReport {
        name: meta.name,
        seed: meta.seed,
        rows: topo.geom.rows,
        cols: topo.geom.cols,
        chips_x: topo.array.chips_x,
        chips_y: topo.array.chips_y,
        pattern: meta.pattern,
        rate: meta.rate,
        warmup: meta.warmup,
        window,
        offered: m.stats.offered,
        injected: PerPlane::from_array([0, 1, 2].map(|k| injected_now[k] - start.injected[k])),
        delivered: PerPlane::from_array([0, 1, 2].map(|k| delivered_now[k] - start.delivered[k])),
        delivered_bytes_per_cycle: m.stats.payload_bytes.iter().sum::<u64>() as f64 / w,
        latency: LatencySummary::from_histogram(&m.stats.latency_ticks),
        link_utilization: PerPlane::from_array(util),
        cut_bytes_per_cycle: cut,
        cut_capacity_bytes_per_cycle: capacity,
        errors,
        drained: None,
        drain_cycles: None,
        memory_digest: None,
    }
}

/// Runs `pattern` for `warmup` cycles, then measures for `window` cycles.
pub fn measure_window(m: &mut Machine, pattern: TrafficPattern, warmup: u64, window: u64, name: &str) -> Result<StatsReport> {
    m.set_pattern(pattern)?;
    m.run_cycles(warmup)?;
    let start = WindowStart::begin(m);
    m.run_cycles(window)?;
    let meta = ReportMeta {
        name: name.into(),
        seed: pattern.seed,
        pattern: Some(pattern.kind),
        rate: pattern.rate,
        warmup,
    };
    Ok(window_report(m, &start, meta))
}

/// Payload bytes per cycle across the horizontal mid cut under saturating
/// MIRROR_HALVES traffic of kind `op`.
pub fn measure_bisection(m: &mut Machine, op: TrafficOp, warmup: u64, window: u64) -> Result<PerPlane<f64>> {
    let rows = m.topo().grid_rows();
    if rows % 2 != 0 {
        return Err(Error::Config(format!("bisection needs an even row count, got {rows}")));
    }
    let pattern = TrafficPattern {
        op,
        ..TrafficPattern::new(PatternKind::MirrorHalves, 1.0, 0)
    };
    Ok(measure_window(m, pattern, warmup, window, "bisection")?.cut_bytes_per_cycle)
}

/// One report per offered rate, each on a fresh machine from `build`.
pub fn measure_latency<F>(build: F, pattern: TrafficPattern, rates: &[f64], warmup: u64, window: u64) -> Result<Vec<StatsReport>>
where
    F: Fn() -> Result<Machine> + Sync,
{
    use rayon::prelude::*;
    rates
        .par_iter()
        .map(|&rate| {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::Config(format!("rate {rate} is outside (0, 1]")));
            }
            let mut m = build()?;
            measure_window(&mut m, TrafficPattern { rate, ..pattern }, warmup, window, "latency")
        })
        .collect()
}

/// Hops a lone packet takes between two nodes under dimension-order routing.
pub fn hop_count(a: NodeCoord, b: NodeCoord) -> u64 {
    u64::from(a.x.abs_diff(b.x) + a.y.abs_diff(b.y))
}

/// Links crossing the mid cut in one direction.
pub fn cut_links(m: &Machine) -> usize {
    let topo = m.topo();
    let b = mid_cut(m);
    m.array.fabric.planes()[0]
        .mesh_links(&topo)
        .into_iter()
        .filter(|(c, d)| *d == Direction::South && c.y + 1 == b)
        .count()
}
