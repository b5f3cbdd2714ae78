//! Synthetic traffic generation.
//!
//! Decisions are a pure function of (pattern, node, cycle): each node and
//! cycle reads its own fixed window of a ChaCha8 keystream selected by
//! seed, stream and word position, so no generator state carries over.

use crate::addrmap::NodeCoord;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PatternKind {
    UniformRandom,
    NearestNeighbor,
    Transpose,
    BitReversal,
    Hotspot,
    MirrorHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficOp {
    #[default]
    Write,
    Read,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficPattern {
    pub kind: PatternKind,
    /// Packets per node per cycle.
    pub rate: f64,
    #[serde(default = "eight")]
    pub size: u8,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub op: TrafficOp,
    /// HOTSPOT target; the mesh center when absent.
    #[serde(default)]
    pub hotspot: Option<NodeCoord>,
    /// Share of HOTSPOT packets sent to the hotspot, the rest uniform.
    #[serde(default = "half")]
    pub hotspot_fraction: f64,
}

fn eight() -> u8 {
    8
}
fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error("rate {0} is outside [0, 1]")]
    Rate(f64),
    #[error("size {0} is not 1, 2, 4 or 8")]
    Size(u8),
    #[error("TRANSPOSE needs a square mesh, got {rows}x{cols}")]
    NotSquare { rows: u32, cols: u32 },
    #[error("BIT_REVERSAL needs a power-of-two node count, got {0}")]
    NotPowerOfTwo(u32),
    #[error("hotspot {0} is off the mesh")]
    Hotspot(NodeCoord),
    #[error("hotspot fraction {0} is outside [0, 1]")]
    Fraction(f64),
}

impl TrafficPattern {
    pub fn new(kind: PatternKind, rate: f64, seed: u64) -> Self {
        Self {
            kind,
            rate,
            size: 8,
            seed,
            op: TrafficOp::Write,
            hotspot: None,
            hotspot_fraction: 0.5,
        }
    }

    /// Rate 0 is accepted so a pattern can be switched off.
    pub fn validate(&self, rows: u32, cols: u32) -> Result<(), TrafficError> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(TrafficError::Rate(self.rate));
        }
        if !matches!(self.size, 1 | 2 | 4 | 8) {
            return Err(TrafficError::Size(self.size));
        }
        if !(0.0..=1.0).contains(&self.hotspot_fraction) {
            return Err(TrafficError::Fraction(self.hotspot_fraction));
        }
        match self.kind {
            PatternKind::Transpose if rows != cols => return Err(TrafficError::NotSquare { rows, cols }),
            PatternKind::BitReversal if !(rows * cols).is_power_of_two() => {
                return Err(TrafficError::NotPowerOfTwo(rows * cols))
            }
            PatternKind::Hotspot => {
                if let Some(h) = self.hotspot {
                    if h.x >= cols || h.y >= rows || h.z != 0 {
                        return Err(TrafficError::Hotspot(h));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

const WORDS_PER_DRAW: u128 = 8;

/// Per-node injection decisions for one fabric.
#[derive(Debug, Clone)]
pub struct TrafficGen {
    pattern: TrafficPattern,
    rows: u32,
    cols: u32,
    base: ChaCha8Rng,
    threshold: Option<u64>,
    hot_threshold: u64,
}

fn fraction_threshold(p: f64) -> Option<u64> {
    // None means "always"
    if p >= 1.0 {
        None
    } else {
        Some((p * 18_446_744_073_709_551_616.0) as u64)
    }
}

fn below(r: u64, n: u32) -> u32 {
    ((u128::from(r) * u128::from(n)) >> 64) as u32
}

impl TrafficGen {
    pub fn new(pattern: TrafficPattern, rows: u32, cols: u32) -> Result<Self, TrafficError> {
        pattern.validate(rows, cols)?;
        Ok(Self {
            pattern,
            rows,
            cols,
            base: ChaCha8Rng::seed_from_u64(pattern.seed),
            threshold: fraction_threshold(pattern.rate),
            hot_threshold: fraction_threshold(pattern.hotspot_fraction).unwrap_or(u64::MAX),
        })
    }

    pub fn pattern(&self) -> &TrafficPattern {
        &self.pattern
    }

    fn draws(&self, node: u32, cycle: u64) -> [u64; 3] {
        let mut rng = self.base.clone();
        rng.set_stream(u64::from(node));
        rng.set_word_pos(u128::from(cycle) * WORDS_PER_DRAW);
        [rng.next_u64(), rng.next_u64(), rng.next_u64()]
    }

    fn uniform(&self, node: u32, r: u64) -> u32 {
        let n = self.rows * self.cols;
        let pick = below(r, n - 1);
        if pick >= node {
            pick + 1
        } else {
            pick
        }
    }

    /// Destination `src` injects toward at `cycle`, if it injects at all.
    pub fn decide(&self, src: NodeCoord, cycle: u64) -> Option<NodeCoord> {
        let (rows, cols) = (self.rows, self.cols);
        if rows * cols < 2 || self.pattern.rate <= 0.0 {
            return None;
        }
        let node = src.y * cols + src.x;
        let [fire, r1, r2] = self.draws(node, cycle);
        if matches!(self.threshold, Some(t) if fire >= t) {
            return None;
        }
        let at = |i: u32| NodeCoord::new(i % cols, i / cols);
        let dst = match self.pattern.kind {
            PatternKind::UniformRandom => at(self.uniform(node, r1)),
            PatternKind::NearestNeighbor => {
                let mut nbrs = Vec::with_capacity(4);
                if src.y > 0 {
                    nbrs.push(NodeCoord::new(src.x, src.y - 1));
                }
                if src.x + 1 < cols {
                    nbrs.push(NodeCoord::new(src.x + 1, src.y));
                }
                if src.y + 1 < rows {
                    nbrs.push(NodeCoord::new(src.x, src.y + 1));
                }
                if src.x > 0 {
                    nbrs.push(NodeCoord::new(src.x - 1, src.y));
                }
                nbrs[below(r1, nbrs.len() as u32) as usize]
            }
            PatternKind::Transpose => NodeCoord::new(src.y, src.x),
            PatternKind::BitReversal => {
                let bits = (rows * cols).trailing_zeros();
                at(node.reverse_bits() >> (32 - bits))
            }
            PatternKind::Hotspot => {
                let spot = self.pattern.hotspot.unwrap_or(NodeCoord::new(cols / 2, rows / 2));
                if r2 < self.hot_threshold && spot != src {
                    spot
                } else {
                    at(self.uniform(node, r1))
                }
            }
            PatternKind::MirrorHalves => NodeCoord::new(src.x, rows - 1 - src.y),
        };
        (dst != src).then_some(dst)
    }
}

/// Every node's decision for `cycle`, in raster order.
pub fn gen_traffic(pattern: &TrafficPattern, rows: u32, cols: u32, cycle: u64) -> Result<Vec<(NodeCoord, NodeCoord)>, TrafficError> {
    let g = TrafficGen::new(*pattern, rows, cols)?;
    let mut out = Vec::new();
    for y in 0..rows {
        for x in 0..cols {
            let src = NodeCoord::new(x, y);
            if let Some(d) = g.decide(src, cycle) {
                out.push((src, d));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(kind: PatternKind) -> TrafficPattern {
        TrafficPattern::new(kind, 1.0, 7)
    }

    #[test]
    fn transpose_example() {
        let g = TrafficGen::new(full(PatternKind::Transpose), 8, 8).unwrap();
        assert_eq!(g.decide(NodeCoord::new(2, 5), 0), Some(NodeCoord::new(5, 2)));
        assert_eq!(g.decide(NodeCoord::new(3, 3), 0), None);
    }

    #[test]
    fn mirror_example() {
        let g = TrafficGen::new(full(PatternKind::MirrorHalves), 32, 32).unwrap();
        assert_eq!(g.decide(NodeCoord::new(7, 0), 9), Some(NodeCoord::new(7, 31)));
        assert_eq!(g.decide(NodeCoord::new(7, 31), 9), Some(NodeCoord::new(7, 0)));
    }

    #[test]
    fn bit_reversal_on_16_nodes() {
        let g = TrafficGen::new(full(PatternKind::BitReversal), 4, 4).unwrap();
        // node 1 = 0b0001 -> 0b1000 = 8 = (0, 2)
        assert_eq!(g.decide(NodeCoord::new(1, 0), 0), Some(NodeCoord::new(0, 2)));
        // node 6 = 0b0110 is a palindrome
        assert_eq!(g.decide(NodeCoord::new(2, 1), 0), None);
    }

    #[test]
    fn uniform_is_reproducible_and_never_self() {
        let p = TrafficPattern::new(PatternKind::UniformRandom, 0.3, 11);
        let a: Vec<_> = (0..200).map(|c| gen_traffic(&p, 4, 4, c).unwrap()).collect();
        let b: Vec<_> = (0..200).map(|c| gen_traffic(&p, 4, 4, c).unwrap()).collect();
        assert_eq!(a, b);
        let flat: Vec<_> = a.into_iter().flatten().collect();
        assert!(flat.iter().all(|(s, d)| s != d && d.x < 4 && d.y < 4));
        // 0.3 x 16 nodes x 200 cycles = 960 expected
        assert!((800..1120).contains(&flat.len()), "{}", flat.len());
        let other = TrafficPattern { seed: 12, ..p };
        assert_ne!(gen_traffic(&other, 4, 4, 0).unwrap(), gen_traffic(&p, 4, 4, 0).unwrap());
    }

    #[test]
    fn neighbor_and_hotspot_destinations() {
        let g = TrafficGen::new(full(PatternKind::NearestNeighbor), 3, 3).unwrap();
        for c in 0..50 {
            let d = g.decide(NodeCoord::new(0, 0), c).unwrap();
            assert!(d == NodeCoord::new(1, 0) || d == NodeCoord::new(0, 1));
        }
        let mut p = full(PatternKind::Hotspot);
        p.hotspot_fraction = 1.0;
        let g = TrafficGen::new(p, 4, 4).unwrap();
        assert_eq!(g.decide(NodeCoord::new(0, 0), 3), Some(NodeCoord::new(2, 2)));
        assert_ne!(g.decide(NodeCoord::new(2, 2), 3), Some(NodeCoord::new(2, 2)));
    }

    #[test]
    fn validation() {
        assert!(TrafficGen::new(full(PatternKind::Transpose), 4, 8).is_err());
        assert!(TrafficGen::new(full(PatternKind::BitReversal), 3, 4).is_err());
        assert!(TrafficGen::new(TrafficPattern::new(PatternKind::UniformRandom, 1.5, 0), 4, 4).is_err());
        let zero = TrafficGen::new(TrafficPattern::new(PatternKind::UniformRandom, 0.0, 0), 4, 4).unwrap();
        assert!((0..100).all(|c| zero.decide(NodeCoord::new(1, 1), c).is_none()));
    }
}
