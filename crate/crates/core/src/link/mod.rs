//! FSK physical layer and slotless ALOHA MAC.

mod fsk;
mod mac;
mod network;
mod packet;
mod pdr;

pub use fsk::{demod_frame, modulate, Demodulator, FskParams, RxEvent, SoftBit, ToneSchedule};
pub use mac::{Mac, MacConfig, MacEvent, MacState, PendingAck};
pub use network::MacNetwork;
pub use packet::{decode_packet, decode_payload, encode_packet, PacketFrame, ACK_NIBBLE, PACKET_BITS, START_SEQUENCE};
pub use pdr::{measure_pdr, pdr_sweep, write_pdr_csv, PdrChannel, PdrResult};
