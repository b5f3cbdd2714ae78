//! The flat 64-bit distributed memory map.
//!
//! Every node owns a 1MB region. A global address is laid out as
//!
//! ```text
//!  63        50 49                     20 19          0
//! +------------+-------------------------+-------------+
//! |  reserved  |   z  |   y   |    x     |   offset    |
//! +------------+-------------------------+-------------+
//! ```
//!
//! The 30 coordinate bits are split between x, y and z by an
//! [`AddressLayout`]; x occupies the low end of the field.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const OFFSET_BITS: u32 = 20;
pub const COORD_BITS: u32 = 30;
pub const REGION_BYTES: u64 = 1 << OFFSET_BITS;
const COORD_SHIFT: u32 = OFFSET_BITS;
const RESERVED_MASK: u64 = !((1u64 << (OFFSET_BITS + COORD_BITS)) - 1);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("coordinate bit widths {x}+{y}+{z} must sum to 30")]
    BadLayout { x: u8, y: u8, z: u8 },
    #[error("coordinate {coord} does not fit layout {layout}")]
    CoordOutOfRange { coord: NodeCoord, layout: AddressLayout },
    #[error("offset {0:#x} exceeds the 20-bit region offset")]
    OffsetOutOfRange(u64),
    #[error("address {0:#018x} has nonzero reserved bits [63:50]")]
    Malformed(u64),
    #[error("chip geometry must have at least one row and one column")]
    EmptyGeometry,
    #[error("coordinate {coord} lies below the array origin {origin}")]
    BelowOrigin { coord: NodeCoord, origin: NodeCoord },
}

/// How the 30 coordinate bits are split between the three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressLayout {
    pub x_bits: u8,
    pub y_bits: u8,
    pub z_bits: u8,
    /// An all-zero coordinate field addresses the issuing node itself.
    #[serde(default = "default_true")]
    pub local_alias: bool,
}

fn default_true() -> bool {
    true
}

impl AddressLayout {
    pub fn new(x_bits: u8, y_bits: u8, z_bits: u8) -> Result<Self, AddrError> {
        let layout = Self {
            x_bits,
            y_bits,
            z_bits,
            local_alias: true,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn with_local_alias(mut self, on: bool) -> Self {
        self.local_alias = on;
        self
    }

    pub fn validate(&self) -> Result<(), AddrError> {
        let sum = u32::from(self.x_bits) + u32::from(self.y_bits) + u32::from(self.z_bits);
        if sum != COORD_BITS {
            return Err(AddrError::BadLayout {
                x: self.x_bits,
                y: self.y_bits,
                z: self.z_bits,
            });
        }
        Ok(())
    }

    pub const fn offset_bits(&self) -> u32 {
        OFFSET_BITS
    }

    pub fn fits(&self, coord: NodeCoord) -> bool {
        fits(coord.x, self.x_bits) && fits(coord.y, self.y_bits) && fits(coord.z, self.z_bits)
    }
}

impl Default for AddressLayout {
    fn default() -> Self {
        Self {
            x_bits: 15,
            y_bits: 15,
            z_bits: 0,
            local_alias: true,
        }
    }
}

impl fmt::Display for AddressLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}/y{}/z{}", self.x_bits, self.y_bits, self.z_bits)
    }
}

fn fits(v: u32, bits: u8) -> bool {
    bits >= 32 || u64::from(v) < (1u64 << bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct NodeCoord {
    pub x: u32,
    pub y: u32,
    #[serde(default)]
    pub z: u32,
}

impl NodeCoord {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y, z: 0 }
    }

    pub const fn new3(x: u32, y: u32, z: u32) -> Self {
        Self { x, y, z }
    }
}

impl fmt::Display for NodeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.z == 0 {
            write!(f, "({},{})", self.x, self.y)
        } else {
            write!(f, "({},{},{})", self.x, self.y, self.z)
        }
    }
}

/// A raw 64-bit system address. Reserved bits are only checked on decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlobalAddress(pub u64);

impl GlobalAddress {
    pub const fn raw(self) -> u64 {
        self.0
    }

    pub const fn is_valid(self) -> bool {
        self.0 & RESERVED_MASK == 0
    }

    pub fn validate(self) -> Result<Self, AddrError> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(AddrError::Malformed(self.0))
        }
    }

    pub const fn offset(self) -> u32 {
        (self.0 & (REGION_BYTES - 1)) as u32
    }

    /// The whole 30-bit coordinate field, independent of layout.
    pub const fn coord_field(self) -> u32 {
        ((self.0 >> COORD_SHIFT) & ((1 << COORD_BITS) - 1)) as u32
    }
}

impl fmt::Display for GlobalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}

pub fn encode_address(
    coord: NodeCoord,
    offset: u32,
    layout: AddressLayout,
) -> Result<GlobalAddress, AddrError> {
    if !layout.fits(coord) {
        return Err(AddrError::CoordOutOfRange { coord, layout });
    }
    if u64::from(offset) >= REGION_BYTES {
        return Err(AddrError::OffsetOutOfRange(offset.into()));
    }
    let x_shift = COORD_SHIFT;
    let y_shift = x_shift + u32::from(layout.x_bits);
    let z_shift = y_shift + u32::from(layout.y_bits);
    let mut raw = u64::from(offset);
    // zero-width fields only ever carry 0, which fits() already enforced
    if layout.x_bits > 0 {
        raw |= u64::from(coord.x) << x_shift;
    }
    if layout.y_bits > 0 {
        raw |= u64::from(coord.y) << y_shift;
    }
    if layout.z_bits > 0 {
        raw |= u64::from(coord.z) << z_shift;
    }
    Ok(GlobalAddress(raw))
}

pub fn decode_address(
    addr: GlobalAddress,
    layout: AddressLayout,
) -> Result<(NodeCoord, u32), AddrError> {
    let addr = addr.validate()?;
    let field = u64::from(addr.coord_field());
    let take = |shift: u32, bits: u8| -> u32 {
        if bits == 0 {
            0
        } else {
            ((field >> shift) & ((1u64 << bits) - 1)) as u32
        }
    };
    let x = take(0, layout.x_bits);
    let y = take(u32::from(layout.x_bits), layout.y_bits);
    let z = take(u32::from(layout.x_bits) + u32::from(layout.y_bits), layout.z_bits);
    Ok((NodeCoord { x, y, z }, addr.offset()))
}

/// Whether `addr` names memory owned by `self_coord`.
pub fn is_local(
    addr: GlobalAddress,
    self_coord: NodeCoord,
    layout: AddressLayout,
) -> Result<bool, AddrError> {
    let (coord, _) = decode_address(addr, layout)?;
    Ok(coord == self_coord || (layout.local_alias && addr.coord_field() == 0))
}

/// Resolves the node an address refers to when issued by `issuer`, applying the local alias.
pub fn resolve_target(
    addr: GlobalAddress,
    issuer: NodeCoord,
    layout: AddressLayout,
) -> Result<(NodeCoord, u32), AddrError> {
    let (coord, offset) = decode_address(addr, layout)?;
    if layout.local_alias && addr.coord_field() == 0 {
        Ok((issuer, offset))
    } else {
        Ok((coord, offset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipGeometry {
    pub rows: u32,
    pub cols: u32,
    /// Global coordinate of the corner node of chip (0,0).
    #[serde(default)]
    pub origin: NodeCoord,
}

impl ChipGeometry {
    pub fn new(rows: u32, cols: u32) -> Result<Self, AddrError> {
        if rows == 0 || cols == 0 {
            return Err(AddrError::EmptyGeometry);
        }
        Ok(Self {
            rows,
            cols,
            origin: NodeCoord::default(),
        })
    }

    pub const fn nodes(&self) -> u32 {
        self.rows * self.cols
    }
}

impl Default for ChipGeometry {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            origin: NodeCoord::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChipPlacement {
    pub chip_x: u32,
    pub chip_y: u32,
    pub local_row: u32,
    pub local_col: u32,
}

impl ChipPlacement {
    pub const fn chip(&self) -> (u32, u32) {
        (self.chip_x, self.chip_y)
    }
}

pub fn chip_of(coord: NodeCoord, geom: ChipGeometry) -> Result<ChipPlacement, AddrError> {
    if coord.x < geom.origin.x || coord.y < geom.origin.y {
        return Err(AddrError::BelowOrigin {
            coord,
            origin: geom.origin,
        });
    }
    let x = coord.x - geom.origin.x;
    let y = coord.y - geom.origin.y;
    Ok(ChipPlacement {
        chip_x: x / geom.cols,
        chip_y: y / geom.rows,
        local_row: y % geom.rows,
        local_col: x % geom.cols,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemCapacity {
    pub max_nodes: u64,
    pub total_bytes: u64,
}

/// Node count and memory size the address map can express. Independent of how
/// the coordinate bits are partitioned.
pub fn system_capacity(layout: AddressLayout) -> SystemCapacity {
    let coord_bits =
        u32::from(layout.x_bits) + u32::from(layout.y_bits) + u32::from(layout.z_bits);
    let max_nodes = 1u64 << coord_bits;
    SystemCapacity {
        max_nodes,
        total_bytes: max_nodes << OFFSET_BITS,
    }
}
