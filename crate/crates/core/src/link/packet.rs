//! Nine-bit packet framing: start sequence, data nibble, even parity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const START_SEQUENCE: [u8; 4] = [0, 1, 1, 1];
pub const PACKET_BITS: usize = 9;
/// Reserved for acknowledgements; application data lives in 0x0..=0xE.
pub const ACK_NIBBLE: u8 = 0xF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketFrame {
    pub data: u8,
}

impl PacketFrame {
    pub fn new(data: u8) -> Result<Self> {
        if data > 0xF {
            return Err(Error::InvalidNibble(data));
        }
        Ok(PacketFrame { data })
    }

    pub fn parity(&self) -> u8 {
        (self.data.count_ones() & 1) as u8
    }

    pub fn bits(&self) -> [u8; PACKET_BITS] {
        let mut b = [0u8; PACKET_BITS];
        b[..4].copy_from_slice(&START_SEQUENCE);
        for i in 0..4 {
            b[4 + i] = (self.data >> (3 - i)) & 1;
        }
        b[8] = self.parity();
        b
    }
}

pub fn encode_packet(data: u8) -> Result<[u8; PACKET_BITS]> {
    Ok(PacketFrame::new(data)?.bits())
}

/// Checks the start sequence and parity of a full 9-bit frame.
pub fn decode_packet(bits: &[u8; PACKET_BITS]) -> Option<u8> {
    if bits[..4] != START_SEQUENCE {
        return None;
    }
    decode_payload(&bits[4..])
}

/// Data nibble from the five bits after the start sequence, if parity holds.
pub fn decode_payload(payload: &[u8]) -> Option<u8> {
    debug_assert_eq!(payload.len(), 5);
    let data = payload[..4].iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1));
    let parity = payload[..4].iter().fold(0u8, |acc, &b| acc ^ b);
    (parity == payload[4]).then_some(data)
}
