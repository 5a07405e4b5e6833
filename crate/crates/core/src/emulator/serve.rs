//! Server side of the Modbus RTU exchange: answers read-holding-register
//! requests for the shared register map from the live register image.
//!
//! RTU behaviour on bad input: a frame that fails its CRC gets no response
//! at all — the receiver resynchronises by dropping one byte and rescanning.
//! Requests addressed to another unit are ignored silently. Unmapped
//! addresses earn exception 0x02, unknown functions exception 0x01, and
//! out-of-protocol counts exception 0x03.

use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use crate::clock::Clock;
use crate::modbus::frame::{
    decode_request, encode_exception, encode_response, FrameError, EXC_ILLEGAL_DATA_ADDRESS,
    EXC_ILLEGAL_DATA_VALUE, EXC_ILLEGAL_FUNCTION, FUNC_READ_HOLDING_REGISTERS, MAX_READ_COUNT,
    REQUEST_FRAME_LEN,
};
use crate::modbus::transport::Transport;

use super::model::Emulator;

const IDLE_POLL: Duration = Duration::from_millis(100);

impl Emulator {
    /// Serves Modbus requests until the transport closes or `cancel` is set.
    /// Before each reply the simulation is advanced to the clock's current
    /// time, so a reply is always a consistent snapshot.
    pub fn serve(
        &self,
        transport: &mut dyn Transport,
        clock: &dyn Clock,
        cancel: &AtomicBool,
    ) -> io::Result<()> {
        let mut buffer: Vec<u8> = Vec::new();
        let mut chunk = [0u8; 256];
        loop {
            if cancel.load(Ordering::SeqCst) {
                return Ok(());
            }
            match transport.recv(&mut chunk, IDLE_POLL) {
                Ok(0) => return Ok(()),
                Ok(n) => buffer.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::TimedOut => continue,
                Err(e) => return Err(e),
            }

            while buffer.len() >= REQUEST_FRAME_LEN {
                match decode_request(&buffer[..REQUEST_FRAME_LEN]) {
                    Ok(request) => {
                        buffer.drain(..REQUEST_FRAME_LEN);
                        if request.unit_id != self.unit_id() {
                            continue;
                        }
                        self.advance_to(clock.now_secs());
                        let reply = self.build_reply(
                            request.function,
                            request.start_address,
                            request.count,
                        );
                        transport.send(&reply)?;
                    }
                    Err(FrameError::CrcMismatch { .. }) => {
                        // Silent drop, then resynchronise one byte at a time.
                        buffer.drain(..1);
                    }
                    Err(_) => {
                        buffer.drain(..1);
                    }
                }
            }
        }
    }

    fn build_reply(&self, function: u8, start: u16, count: u16) -> Vec<u8> {
        let unit_id = self.unit_id();
        if function != FUNC_READ_HOLDING_REGISTERS {
            return encode_exception(unit_id, function, EXC_ILLEGAL_FUNCTION);
        }
        if count == 0 || count > MAX_READ_COUNT {
            return encode_exception(unit_id, function, EXC_ILLEGAL_DATA_VALUE);
        }
        match self.read_registers(start, count) {
            Ok(words) => encode_response(unit_id, &words),
            Err(_) => encode_exception(unit_id, function, EXC_ILLEGAL_DATA_ADDRESS),
        }
    }
}
