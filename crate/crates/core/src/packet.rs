//! The 136-bit mesh packet.
//!
//! Wire layout, most significant first: `ctrl(8) | dst_addr(64) | payload(64)`.
//! The control byte is:
//!
//! | bits  | meaning                          |
//! |-------|----------------------------------|
//! | 0     | write flag                       |
//! | 2:1   | log2 of the access size in bytes |
//! | 3     | read-reply flag                  |
//! | 7:4   | reserved, zero                   |

use crate::addrmap::{chip_of, decode_address, AddrError, AddressLayout, ChipGeometry, GlobalAddress};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const PACKET_BITS: usize = 136;
pub const PACKET_BYTES: usize = PACKET_BITS / 8;

const CTRL_WRITE: u8 = 1 << 0;
const CTRL_SIZE_SHIFT: u8 = 1;
const CTRL_SIZE_MASK: u8 = 0b11 << CTRL_SIZE_SHIFT;
const CTRL_REPLY: u8 = 1 << 3;
const CTRL_RESERVED: u8 = 0xF0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("access size {0} is not 1, 2, 4 or 8 bytes")]
    BadSize(u64),
    #[error(transparent)]
    Address(#[from] AddrError),
    #[error("expected a read request, got {0:?}")]
    NotReadRequest(PacketKind),
    #[error("packet word must be {expected} bits, got {got}")]
    Width { expected: usize, got: usize },
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("destination chip ({0},{1}) is outside the chip array")]
    Unroutable(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Write,
    ReadRequest,
    ReadReply,
}

impl PacketKind {
    /// Replies are writes of returned data.
    pub const fn is_write(self) -> bool {
        !matches!(self, PacketKind::ReadRequest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkClass {
    Rmesh,
    Cmesh,
    Xmesh,
}

impl NetworkClass {
    pub const ALL: [NetworkClass; 3] = [NetworkClass::Rmesh, NetworkClass::Cmesh, NetworkClass::Xmesh];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            NetworkClass::Rmesh => "rmesh",
            NetworkClass::Cmesh => "cmesh",
            NetworkClass::Xmesh => "xmesh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for NetworkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ctrl(u8);

impl Ctrl {
    fn new(write: bool, size_log2: u8, reply: bool) -> Self {
        debug_assert!(size_log2 <= 3);
        let mut b = size_log2 << CTRL_SIZE_SHIFT;
        if write {
            b |= CTRL_WRITE;
        }
        if reply {
            b |= CTRL_REPLY;
        }
        Ctrl(b)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn is_write(self) -> bool {
        self.0 & CTRL_WRITE != 0
    }

    pub const fn is_reply(self) -> bool {
        self.0 & CTRL_REPLY != 0
    }

    pub const fn size_log2(self) -> u8 {
        (self.0 & CTRL_SIZE_MASK) >> CTRL_SIZE_SHIFT
    }

    pub const fn size_bytes(self) -> u8 {
        1 << self.size_log2()
    }

    fn check(bits: u8) -> Result<Ctrl, PacketError> {
        if bits & CTRL_RESERVED != 0 {
            return Err(PacketError::Malformed(format!(
                "reserved control bits set in {bits:#010b}"
            )));
        }
        if bits & CTRL_REPLY != 0 && bits & CTRL_WRITE == 0 {
            return Err(PacketError::Malformed(
                "reply flag set on a read request".into(),
            ));
        }
        Ok(Ctrl(bits))
    }
}

fn size_log2(size_bytes: u64) -> Result<u8, PacketError> {
    match size_bytes {
        1 => Ok(0),
        2 => Ok(1),
        4 => Ok(2),
        8 => Ok(3),
        other => Err(PacketError::BadSize(other)),
    }
}

fn size_mask(size_bytes: u8) -> u64 {
    if size_bytes >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * u32::from(size_bytes))) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NocPacket {
    pub dst: GlobalAddress,
    pub payload: u64,
    pub ctrl: Ctrl,
}

impl NocPacket {
    pub fn kind(&self) -> PacketKind {
        match (self.ctrl.is_write(), self.ctrl.is_reply()) {
            (false, _) => PacketKind::ReadRequest,
            (true, false) => PacketKind::Write,
            (true, true) => PacketKind::ReadReply,
        }
    }

    pub fn size_bytes(&self) -> u8 {
        self.ctrl.size_bytes()
    }

    /// Return address carried by a read request.
    pub fn return_addr(&self) -> Option<GlobalAddress> {
        (self.kind() == PacketKind::ReadRequest).then_some(GlobalAddress(self.payload))
    }

    /// Payload bytes a packet moves across a link: the data for writes and
    /// replies, the full return-address word for read requests.
    pub fn payload_bytes(&self) -> u64 {
        match self.kind() {
            PacketKind::ReadRequest => 8,
            _ => u64::from(self.size_bytes()),
        }
    }

    pub fn to_word(&self) -> PacketWord {
        serialize(self)
    }
}

/// Builds a write. Sub-word data is taken from the low bytes of `data`.
pub fn make_write(dst: GlobalAddress, data: u64, size_bytes: u64) -> Result<NocPacket, PacketError> {
    let log2 = size_log2(size_bytes)?;
    dst.validate()?;
    Ok(NocPacket {
        dst,
        payload: data & size_mask(1 << log2),
        ctrl: Ctrl::new(true, log2, false),
    })
}

pub fn make_read_request(
    dst: GlobalAddress,
    return_addr: GlobalAddress,
    size_bytes: u64,
) -> Result<NocPacket, PacketError> {
    let log2 = size_log2(size_bytes)?;
    dst.validate()?;
    return_addr.validate()?;
    Ok(NocPacket {
        dst,
        payload: return_addr.raw(),
        ctrl: Ctrl::new(false, log2, false),
    })
}

pub fn make_read_reply(request: &NocPacket, data: u64) -> Result<NocPacket, PacketError> {
    let kind = request.kind();
    if kind != PacketKind::ReadRequest {
        return Err(PacketError::NotReadRequest(kind));
    }
    let log2 = request.ctrl.size_log2();
    Ok(NocPacket {
        dst: GlobalAddress(request.payload).validate()?,
        payload: data & size_mask(1 << log2),
        ctrl: Ctrl::new(true, log2, true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDims {
    pub chips_x: u32,
    pub chips_y: u32,
}

impl ArrayDims {
    pub const SINGLE: ArrayDims = ArrayDims { chips_x: 1, chips_y: 1 };

    pub fn contains(&self, chip: (u32, u32)) -> bool {
        chip.0 < self.chips_x && chip.1 < self.chips_y
    }
}

/// Chooses the plane a packet is injected on.
pub fn classify_network(
    pkt: &NocPacket,
    src_chip: (u32, u32),
    geom: ChipGeometry,
    array: ArrayDims,
    layout: AddressLayout,
) -> Result<NetworkClass, PacketError> {
    let (coord, _) = decode_address(pkt.dst, layout)?;
    let place = chip_of(coord, geom)?;
    if coord.z != 0 || !array.contains(place.chip()) {
        return Err(PacketError::Unroutable(place.chip_x, place.chip_y));
    }
    Ok(match pkt.kind() {
        PacketKind::ReadRequest => NetworkClass::Rmesh,
        _ if place.chip() == src_chip => NetworkClass::Cmesh,
        _ => NetworkClass::Xmesh,
    })
}

/// A serialized packet, big-endian: byte 0 is the control byte.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PacketWord([u8; PACKET_BYTES]);

impl PacketWord {
    pub const ZERO: PacketWord = PacketWord([0; PACKET_BYTES]);

    pub const fn bit_width(&self) -> usize {
        PACKET_BITS
    }

    pub fn as_bytes(&self) -> &[u8; PACKET_BYTES] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, PacketError> {
        let arr: [u8; PACKET_BYTES] = bytes.try_into().map_err(|_| PacketError::Width {
            expected: PACKET_BITS,
            got: bytes.len() * 8,
        })?;
        Ok(PacketWord(arr))
    }

    pub fn to_hex(&self) -> String {
        use std::fmt::Write;
        self.0.iter().fold(String::with_capacity(2 * PACKET_BYTES), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn from_hex(s: &str) -> Result<Self, PacketError> {
        if s.len() != 2 * PACKET_BYTES || !s.is_ascii() {
            return Err(PacketError::Width {
                expected: PACKET_BITS,
                got: s.len() * 4,
            });
        }
        let mut out = [0u8; PACKET_BYTES];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let digits = std::str::from_utf8(chunk).expect("ascii checked above");
            out[i] = u8::from_str_radix(digits, 16)
                .map_err(|e| PacketError::Malformed(format!("bad hex {digits:?}: {e}")))?;
        }
        Ok(PacketWord(out))
    }
}

impl fmt::Debug for PacketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PacketWord({})", self.to_hex())
    }
}

pub fn serialize(pkt: &NocPacket) -> PacketWord {
    let mut out = [0u8; PACKET_BYTES];
    out[0] = pkt.ctrl.bits();
    out[1..9].copy_from_slice(&pkt.dst.raw().to_be_bytes());
    out[9..17].copy_from_slice(&pkt.payload.to_be_bytes());
    PacketWord(out)
}

pub fn deserialize(word: &PacketWord) -> Result<NocPacket, PacketError> {
    let b = &word.0;
    let ctrl = Ctrl::check(b[0])?;
    let dst = GlobalAddress(u64::from_be_bytes(b[1..9].try_into().unwrap()));
    let payload = u64::from_be_bytes(b[9..17].try_into().unwrap());
    let dst = dst.validate()?;
    Ok(NocPacket { dst, payload, ctrl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrmap::{encode_address, NodeCoord};
    use proptest::prelude::*;

    fn addr(x: u32, y: u32, off: u32) -> GlobalAddress {
        encode_address(NodeCoord::new(x, y), off, AddressLayout::default()).unwrap()
    }

    #[test]
    fn write_ctrl_bytes() {
        let a = addr(1, 2, 0x10);
        assert_eq!(make_write(a, 0, 8).unwrap().ctrl.bits(), 0b0000_0111);
        assert_eq!(make_write(a, 0xDEAD, 1).unwrap().ctrl.bits(), 0b0000_0001);
        assert_eq!(make_write(a, 0xDEAD, 2).unwrap().ctrl.bits(), 0b0000_0011);
        assert_eq!(make_write(a, 0xDEAD, 4).unwrap().ctrl.bits(), 0b0000_0101);
        assert_eq!(make_write(a, 0, 3), Err(PacketError::BadSize(3)));
        assert_eq!(make_write(a, 0, 16), Err(PacketError::BadSize(16)));
    }

    #[test]
    fn narrow_write_is_right_aligned() {
        let p = make_write(addr(0, 0, 0), 0x1122_3344_5566_7788, 2).unwrap();
        assert_eq!(p.payload, 0x7788);
        assert_eq!(p.kind(), PacketKind::Write);
    }

    #[test]
    fn read_request_carries_return_address() {
        let a = addr(3, 3, 0x20);
        let b = addr(0, 1, 0x800);
        let r = make_read_request(a, b, 8).unwrap();
        assert_eq!(r.payload, b.raw());
        assert!(!r.ctrl.is_write());
        assert_eq!(r.kind(), PacketKind::ReadRequest);
        assert_eq!(r.return_addr(), Some(b));
        assert!(make_read_request(a, a, 8).is_ok());
        assert!(matches!(
            make_read_request(a, GlobalAddress(1 << 55), 8),
            Err(PacketError::Address(AddrError::Malformed(_)))
        ));
    }

    #[test]
    fn reply_targets_return_address() {
        let a = addr(3, 3, 0x20);
        let b = addr(0, 1, 0x800);
        let req = make_read_request(a, b, 4).unwrap();
        let rep = make_read_reply(&req, 0xCAFE_F00D).unwrap();
        assert_eq!(rep.dst, b);
        assert_eq!(rep.payload, 0xCAFE_F00D);
        assert_eq!(rep.size_bytes(), 4);
        assert_eq!(rep.kind(), PacketKind::ReadReply);
        assert!(rep.ctrl.is_write() && rep.ctrl.is_reply());
        let w = make_write(a, 1, 8).unwrap();
        assert_eq!(
            make_read_reply(&w, 0),
            Err(PacketError::NotReadRequest(PacketKind::Write))
        );
    }

    #[test]
    fn plane_classification() {
        let geom = ChipGeometry::new(4, 4).unwrap();
        let arr = ArrayDims { chips_x: 2, chips_y: 2 };
        let l = AddressLayout::default();
        let on_chip = addr(2, 3, 0);
        let next_chip = addr(5, 1, 0);
        let rd = make_read_request(next_chip, on_chip, 8).unwrap();
        assert_eq!(classify_network(&rd, (0, 0), geom, arr, l), Ok(NetworkClass::Rmesh));
        let w = make_write(on_chip, 0, 8).unwrap();
        assert_eq!(classify_network(&w, (0, 0), geom, arr, l), Ok(NetworkClass::Cmesh));
        let w = make_write(next_chip, 0, 8).unwrap();
        assert_eq!(classify_network(&w, (0, 0), geom, arr, l), Ok(NetworkClass::Xmesh));
        let rep = make_read_reply(&make_read_request(on_chip, next_chip, 8).unwrap(), 1).unwrap();
        assert_eq!(classify_network(&rep, (0, 0), geom, arr, l), Ok(NetworkClass::Xmesh));
        let far = make_write(addr(9, 0, 0), 0, 8).unwrap();
        assert_eq!(
            classify_network(&far, (0, 0), geom, arr, l),
            Err(PacketError::Unroutable(2, 0))
        );
    }

    #[test]
    fn zero_word() {
        let p = NocPacket {
            dst: GlobalAddress(0),
            payload: 0,
            ctrl: Ctrl::default(),
        };
        let w = serialize(&p);
        assert_eq!(w, PacketWord::ZERO);
        assert_eq!(w.bit_width(), 136);
        assert_eq!(w.to_hex(), "0".repeat(34));
        assert_eq!(deserialize(&w).unwrap(), p);
    }

    #[test]
    fn width_and_reserved_checks() {
        assert_eq!(
            PacketWord::from_slice(&[0u8; 16]),
            Err(PacketError::Width { expected: 136, got: 128 })
        );
        assert!(PacketWord::from_hex("00").is_err());
        let mut bytes = [0u8; 17];
        bytes[0] = 0x10;
        assert!(matches!(
            deserialize(&PacketWord::from_slice(&bytes).unwrap()),
            Err(PacketError::Malformed(_))
        ));
        bytes[0] = CTRL_REPLY;
        assert!(deserialize(&PacketWord::from_slice(&bytes).unwrap()).is_err());
        bytes[0] = 0;
        bytes[1] = 0x80;
        assert!(deserialize(&PacketWord::from_slice(&bytes).unwrap()).is_err());
    }

    #[test]
    fn field_positions() {
        assert!(make_write(GlobalAddress(0x0102_0304_0506_0708), 0, 8).is_err());
        let p = make_write(GlobalAddress(0x0002_0304_0506_0708), 0x1112_1314_1516_1718, 8).unwrap();
        assert_eq!(
            serialize(&p).to_hex(),
            concat!("07", "0002030405060708", "1112131415161718")
        );
    }

    fn valid_packets() -> impl Strategy<Value = NocPacket> {
        let a = 0u64..(1 << 50);
        (a.clone(), a, any::<u64>(), 0u8..4, 0u8..3).prop_map(|(d, r, data, sz, kind)| {
            let size = 1u64 << sz;
            let req = make_read_request(GlobalAddress(d), GlobalAddress(r), size).unwrap();
            match kind {
                0 => make_write(GlobalAddress(d), data, size).unwrap(),
                1 => req,
                _ => make_read_reply(&req, data).unwrap(),
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn serialize_roundtrip(p in valid_packets()) {
            let w = serialize(&p);
            prop_assert_eq!(w.as_bytes().len() * 8, PACKET_BITS);
            prop_assert_eq!(deserialize(&w).unwrap(), p);
            prop_assert_eq!(PacketWord::from_hex(&w.to_hex()).unwrap(), w);
        }

        #[test]
        fn classification_depends_on_kind_and_chips(p in valid_packets(), sx in 0u32..3, sy in 0u32..3) {
            let geom = ChipGeometry::new(8, 8).unwrap();
            let arr = ArrayDims { chips_x: 3, chips_y: 3 };
            let l = AddressLayout::default();
            let (c, _) = decode_address(p.dst, l).unwrap();
            let dst_chip = (c.x / 8, c.y / 8);
            match classify_network(&p, (sx, sy), geom, arr, l) {
                Ok(class) => {
                    prop_assert!(arr.contains(dst_chip));
                    let expect = if p.kind() == PacketKind::ReadRequest {
                        NetworkClass::Rmesh
                    } else if dst_chip == (sx, sy) {
                        NetworkClass::Cmesh
                    } else {
                        NetworkClass::Xmesh
                    };
                    prop_assert_eq!(class, expect);
                }
                Err(e) => {
                    prop_assert!(!arr.contains(dst_chip));
                    prop_assert!(matches!(e, PacketError::Unroutable(..)), "unexpected error kind");
                }
            }
        }
    }
}
