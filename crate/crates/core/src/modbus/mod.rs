//! Serial Modbus RTU master over an abstract duplex byte stream: frame
//! encoding, CRC-16, response decoding, and register-map translation into
//! [`ElectricalSample`](crate::metrology::ElectricalSample).
//!
//! Only function 0x03 (read holding registers) is implemented; the meter is
//! read-only from the master's point of view. One poll loop owns one
//! transport exclusively — RTU is strictly request/response.

pub mod frame;
pub mod master;
pub mod registers;
pub mod transport;

pub use frame::{
    crc16, decode_request, decode_response, encode_exception, encode_read_request,
    encode_response, FrameError, RequestFrame, ResponseFrame, EXCEPTION_FLAG,
    EXC_ILLEGAL_DATA_ADDRESS, EXC_ILLEGAL_DATA_VALUE, EXC_ILLEGAL_FUNCTION,
    FUNC_READ_HOLDING_REGISTERS, REQUEST_FRAME_LEN,
};
pub use master::{poll, read_sample, MasterError, PollConfig, PollStats, SampleSink};
pub use registers::{Quantity, ReadGroup, RegisterEntry, RegisterMap, RegisterMapError};
pub use transport::{pipe, PipeTransport, TcpTransport, Transport};
