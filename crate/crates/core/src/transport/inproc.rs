use std::sync::mpsc::{channel, Receiver, Sender};

use super::message::Message;
use super::{Conn, TransportError};

/// In-process transport endpoint: a crossed pair of byte queues.
///
/// Frames are fully encoded and decoded on the way through, so the codec
/// path is identical to the socket transport; only the wire differs.
pub struct InProcConn {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// A connected pair of in-process endpoints.
pub fn inproc_pair() -> (InProcConn, InProcConn) {
    let (atx, brx) = channel();
    let (btx, arx) = channel();
    (
        InProcConn { tx: atx, rx: arx },
        InProcConn { tx: btx, rx: brx },
    )
}

impl InProcConn {
    /// Non-blocking receive; `Ok(None)` when no frame is queued.
    pub fn try_recv(&mut self) -> Result<Option<Message>, TransportError> {
        match self.rx.try_recv() {
            Ok(bytes) => {
                let (msg, _) = Message::decode(&bytes)?;
                Ok(Some(msg))
            }
            Err(std::sync::mpsc::TryRecvError::Empty) => Ok(None),
            Err(std::sync::mpsc::TryRecvError::Disconnected) => {
                Err(TransportError::ConnectionClosed)
            }
        }
    }
}

impl Conn for InProcConn {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let bytes = msg.encode()?;
        self.tx
            .send(bytes)
            .map_err(|_| TransportError::ConnectionClosed)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let bytes = self
            .rx
            .recv()
            .map_err(|_| TransportError::ConnectionClosed)?;
        let (msg, _) = Message::decode(&bytes)?;
        Ok(msg)
    }
}
