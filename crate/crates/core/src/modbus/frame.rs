//! Modbus RTU frame encoding and decoding with CRC-16/MODBUS checksums.
//!
//! Wire layout, read-holding-registers request (always 8 bytes):
//! `unit, 0x03, addr hi, addr lo, count hi, count lo, crc lo, crc hi`.
//! Normal response: `unit, 0x03, byte count, data..., crc lo, crc hi`;
//! exception response: `unit, function | 0x80, exception code, crc lo, crc hi`.

use thiserror::Error;

pub const FUNC_READ_HOLDING_REGISTERS: u8 = 0x03;
pub const EXCEPTION_FLAG: u8 = 0x80;
pub const EXC_ILLEGAL_FUNCTION: u8 = 0x01;
pub const EXC_ILLEGAL_DATA_ADDRESS: u8 = 0x02;
pub const EXC_ILLEGAL_DATA_VALUE: u8 = 0x03;

pub const MIN_UNIT_ID: u8 = 1;
pub const MAX_UNIT_ID: u8 = 247;
pub const MAX_READ_COUNT: u16 = 125;
/// Read requests are fixed-length on the wire.
pub const REQUEST_FRAME_LEN: usize = 8;
/// Unit + function + crc is the shortest decodable reply shape plus one
/// payload byte (exception code or byte count).
pub const MIN_RESPONSE_LEN: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("crc mismatch: computed {computed:#06x}, received {received:#06x}")]
    CrcMismatch { computed: u16, received: u16 },
    #[error("frame too short: {len} bytes")]
    ShortFrame { len: usize },
    #[error("exception response, code {code:#04x}")]
    ExceptionResponse { code: u8 },
    #[error("reply from unit {got}, expected unit {expected}")]
    UnitMismatch { got: u8, expected: u8 },
    #[error("unit id {0} outside {MIN_UNIT_ID}..={MAX_UNIT_ID}")]
    UnitIdRange(u8),
    #[error("register count {0} outside 1..={MAX_READ_COUNT}")]
    CountRange(u16),
    #[error("unsupported function {0:#04x}")]
    UnsupportedFunction(u8),
    #[error("byte count {byte_count} inconsistent with frame length {len}")]
    LengthMismatch { byte_count: u8, len: usize },
}

// CRC-16/MODBUS: polynomial 0x8005 bit-reflected to 0xA001, initial value
// 0xFFFF, no final xor. Transmitted low byte first.
const fn build_crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xA001
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u16; 256] = build_crc_table();

pub fn crc16(payload: &[u8]) -> u16 {
    payload.iter().fold(0xFFFFu16, |crc, &byte| {
        (crc >> 8) ^ CRC_TABLE[((crc ^ byte as u16) & 0xFF) as usize]
    })
}

fn append_crc(frame: &mut Vec<u8>) {
    let crc = crc16(frame);
    frame.push((crc & 0xFF) as u8);
    frame.push((crc >> 8) as u8);
}

fn check_crc(bytes: &[u8]) -> Result<(), FrameError> {
    let body_len = bytes.len() - 2;
    let computed = crc16(&bytes[..body_len]);
    let received = bytes[body_len] as u16 | (bytes[body_len + 1] as u16) << 8;
    if computed != received {
        return Err(FrameError::CrcMismatch { computed, received });
    }
    Ok(())
}

/// A validated read-holding-registers request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestFrame {
    pub unit_id: u8,
    pub function: u8,
    pub start_address: u16,
    pub count: u16,
}

/// A validated, non-exception response carrying big-endian register words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseFrame {
    pub unit_id: u8,
    pub function: u8,
    pub registers: Vec<u16>,
}

pub fn encode_read_request(
    unit_id: u8,
    start_address: u16,
    count: u16,
) -> Result<[u8; REQUEST_FRAME_LEN], FrameError> {
    if !(MIN_UNIT_ID..=MAX_UNIT_ID).contains(&unit_id) {
        return Err(FrameError::UnitIdRange(unit_id));
    }
    if count == 0 || count > MAX_READ_COUNT {
        return Err(FrameError::CountRange(count));
    }
    let mut frame = [0u8; REQUEST_FRAME_LEN];
    frame[0] = unit_id;
    frame[1] = FUNC_READ_HOLDING_REGISTERS;
    frame[2] = (start_address >> 8) as u8;
    frame[3] = (start_address & 0xFF) as u8;
    frame[4] = (count >> 8) as u8;
    frame[5] = (count & 0xFF) as u8;
    let crc = crc16(&frame[..6]);
    frame[6] = (crc & 0xFF) as u8;
    frame[7] = (crc >> 8) as u8;
    Ok(frame)
}

/// Decodes a complete 8-byte request frame. CRC is validated before any
/// field is interpreted; the function code is preserved as-is so a server
/// can answer unknown functions with the proper exception.
pub fn decode_request(bytes: &[u8]) -> Result<RequestFrame, FrameError> {
    if bytes.len() < REQUEST_FRAME_LEN {
        return Err(FrameError::ShortFrame { len: bytes.len() });
    }
    let frame = &bytes[..REQUEST_FRAME_LEN];
    check_crc(frame)?;
    Ok(RequestFrame {
        unit_id: frame[0],
        function: frame[1],
        start_address: (frame[2] as u16) << 8 | frame[3] as u16,
        count: (frame[4] as u16) << 8 | frame[5] as u16,
    })
}

pub fn encode_response(unit_id: u8, registers: &[u16]) -> Vec<u8> {
    let mut frame = Vec::with_capacity(5 + 2 * registers.len());
    frame.push(unit_id);
    frame.push(FUNC_READ_HOLDING_REGISTERS);
    frame.push((registers.len() * 2) as u8);
    for word in registers {
        frame.push((word >> 8) as u8);
        frame.push((word & 0xFF) as u8);
    }
    append_crc(&mut frame);
    frame
}

pub fn encode_exception(unit_id: u8, function: u8, code: u8) -> Vec<u8> {
    let mut frame = vec![unit_id, function | EXCEPTION_FLAG, code];
    append_crc(&mut frame);
    frame
}

/// Validates and decodes one complete response frame.
///
/// Classified failures: [`FrameError::CrcMismatch`] (caller must discard and
/// retry the poll), [`FrameError::ShortFrame`], [`FrameError::ExceptionResponse`]
/// and [`FrameError::UnitMismatch`].
pub fn decode_response(bytes: &[u8], expected_unit: u8) -> Result<ResponseFrame, FrameError> {
    if bytes.len() < MIN_RESPONSE_LEN {
        return Err(FrameError::ShortFrame { len: bytes.len() });
    }
    check_crc(bytes)?;
    let body = &bytes[..bytes.len() - 2];
    let unit_id = body[0];
    if unit_id != expected_unit {
        return Err(FrameError::UnitMismatch {
            got: unit_id,
            expected: expected_unit,
        });
    }
    let function = body[1];
    if function & EXCEPTION_FLAG != 0 {
        return Err(FrameError::ExceptionResponse { code: body[2] });
    }
    if function != FUNC_READ_HOLDING_REGISTERS {
        return Err(FrameError::UnsupportedFunction(function));
    }
    let byte_count = body[2];
    if byte_count % 2 != 0 || body.len() != 3 + byte_count as usize {
        return Err(FrameError::LengthMismatch {
            byte_count,
            len: bytes.len(),
        });
    }
    let registers = body[3..]
        .chunks_exact(2)
        .map(|pair| (pair[0] as u16) << 8 | pair[1] as u16)
        .collect();
    Ok(ResponseFrame {
        unit_id,
        function,
        registers,
    })
}

/// Expected total frame length for a response whose first bytes are already
/// buffered, or `None` until enough bytes have arrived to tell.
pub fn expected_response_len(buffered: &[u8]) -> Option<usize> {
    if buffered.len() < 3 {
        return None;
    }
    if buffered[1] & EXCEPTION_FLAG != 0 {
        Some(MIN_RESPONSE_LEN)
    } else {
        Some(3 + buffered[2] as usize + 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent bit-by-bit reference implementation of the polynomial
    /// division, kept deliberately separate from the table-driven version it
    /// checks.
    fn crc16_reference(data: &[u8]) -> u16 {
        let mut crc: u16 = 0xFFFF;
        for &byte in data {
            crc ^= byte as u16;
            for _ in 0..8 {
                if crc & 1 != 0 {
                    crc = (crc >> 1) ^ 0xA001;
                } else {
                    crc >>= 1;
                }
            }
        }
        crc
    }

    #[test]
    fn crc_of_empty_input_is_initial_value() {
        assert_eq!(crc16(&[]), 0xFFFF);
        assert_eq!(crc16_reference(&[]), 0xFFFF);
    }

    #[test]
    fn crc_known_frame_wire_order() {
        // Frozen from the bit-by-bit reference: frame 01 03 00 00 00 02
        // carries checksum bytes C4 0B on the wire (low byte first).
        let body = [0x01, 0x03, 0x00, 0x00, 0x00, 0x02];
        let crc = crc16(&body);
        assert_eq!(crc, crc16_reference(&body));
        assert_eq!([(crc & 0xFF) as u8, (crc >> 8) as u8], [0xC4, 0x0B]);
    }

    #[test]
    fn crc_residue_over_frame_plus_checksum_is_zero() {
        for payload in [&b"x"[..], b"start", &[0x01, 0x03, 0x02, 0x08, 0xFC]] {
            let mut frame = payload.to_vec();
            append_crc(&mut frame);
            assert_eq!(crc16_reference(&frame), 0x0000);
            assert_eq!(crc16(&frame), 0x0000);
        }
    }

    #[test]
    fn encode_read_request_layout() {
        let frame = encode_read_request(1, 0, 2).unwrap();
        assert_eq!(frame, [0x01, 0x03, 0x00, 0x00, 0x00, 0x02, 0xC4, 0x0B]);
    }

    #[test]
    fn encode_read_request_range_checks() {
        assert!(matches!(
            encode_read_request(1, 0, 0),
            Err(FrameError::CountRange(0))
        ));
        assert!(matches!(
            encode_read_request(1, 0, 126),
            Err(FrameError::CountRange(126))
        ));
        assert!(matches!(
            encode_read_request(248, 0, 1),
            Err(FrameError::UnitIdRange(248))
        ));
        assert!(matches!(
            encode_read_request(0, 0, 1),
            Err(FrameError::UnitIdRange(0))
        ));
    }

    #[test]
    fn response_round_trip() {
        let reply = encode_response(1, &[0x08FC, 0x0001]);
        let decoded = decode_response(&reply, 1).unwrap();
        assert_eq!(decoded.unit_id, 1);
        assert_eq!(decoded.function, FUNC_READ_HOLDING_REGISTERS);
        assert_eq!(decoded.registers, vec![0x08FC, 0x0001]);
    }

    #[test]
    fn decode_classifies_corruption_and_shape_errors() {
        let mut reply = encode_response(1, &[0x08FC, 0x0001]);
        reply[3] ^= 0x40;
        assert!(matches!(
            decode_response(&reply, 1),
            Err(FrameError::CrcMismatch { .. })
        ));
        assert!(matches!(
            decode_response(&[0x01, 0x03, 0x02], 1),
            Err(FrameError::ShortFrame { len: 3 })
        ));
        let from_other_unit = encode_response(7, &[1]);
        assert!(matches!(
            decode_response(&from_other_unit, 1),
            Err(FrameError::UnitMismatch {
                got: 7,
                expected: 1
            })
        ));
    }

    #[test]
    fn decode_exception_response() {
        let frame = encode_exception(1, FUNC_READ_HOLDING_REGISTERS, EXC_ILLEGAL_DATA_ADDRESS);
        assert!(matches!(
            decode_response(&frame, 1),
            Err(FrameError::ExceptionResponse { code: 0x02 })
        ));
    }

    #[test]
    fn decode_request_round_trip_and_crc() {
        let frame = encode_read_request(17, 0x0102, 14).unwrap();
        let decoded = decode_request(&frame).unwrap();
        assert_eq!(
            decoded,
            RequestFrame {
                unit_id: 17,
                function: FUNC_READ_HOLDING_REGISTERS,
                start_address: 0x0102,
                count: 14
            }
        );
        let mut corrupted = frame;
        corrupted[4] ^= 0x01;
        assert!(matches!(
            decode_request(&corrupted),
            Err(FrameError::CrcMismatch { .. })
        ));
        assert!(matches!(
            decode_request(&frame[..5]),
            Err(FrameError::ShortFrame { len: 5 })
        ));
    }

    #[test]
    fn expected_response_len_tracks_frame_shape() {
        assert_eq!(expected_response_len(&[0x01]), None);
        assert_eq!(expected_response_len(&[0x01, 0x03, 0x04]), Some(9));
        assert_eq!(expected_response_len(&[0x01, 0x83, 0x02]), Some(5));
    }

    proptest! {
        #[test]
        fn table_matches_bit_by_bit_reference(data in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(crc16(&data), crc16_reference(&data));
        }

        #[test]
        fn any_valid_reply_round_trips(
            unit in MIN_UNIT_ID..=MAX_UNIT_ID,
            words in proptest::collection::vec(any::<u16>(), 1..=MAX_READ_COUNT as usize),
        ) {
            let reply = encode_response(unit, &words);
            let decoded = decode_response(&reply, unit).unwrap();
            prop_assert_eq!(decoded.unit_id, unit);
            prop_assert_eq!(decoded.registers, words);
        }
    }
}
