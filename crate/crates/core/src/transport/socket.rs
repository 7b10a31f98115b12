use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::frame::read_frame;
use super::message::Message;
use super::{Conn, TransportError};

/// Reconnect policy: `base * 2^n` per retry, capped, bounded retry count.
#[derive(Debug, Clone, Copy)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub cap: Duration,
    pub max_retries: u32,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base: Duration::from_millis(100),
            cap: Duration::from_secs(5),
            max_retries: 6,
        }
    }
}

/// Delay before retry `n` (0-based): `min(base * 2^n, cap)`.
pub fn backoff_delay(policy: &BackoffPolicy, retry: u32) -> Duration {
    let exp = policy
        .base
        .checked_mul(1u32.checked_shl(retry).unwrap_or(u32::MAX))
        .unwrap_or(policy.cap);
    exp.min(policy.cap)
}

/// TCP transport endpoint carrying the same frames as [`crate::transport::InProcConn`].
pub struct TcpConn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpConn {
    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true).ok();
        let reader = BufReader::new(stream.try_clone()?);
        Ok(TcpConn {
            reader,
            writer: BufWriter::new(stream),
        })
    }
}

impl Conn for TcpConn {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let bytes = msg.encode()?;
        self.writer.write_all(&bytes)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = read_frame(&mut self.reader)?;
        Message::from_frame(&frame)
    }
}

/// Connect with exponential backoff: one initial attempt plus up to
/// `max_retries` retries.
pub fn connect_with_backoff<A: ToSocketAddrs + std::fmt::Debug>(
    addr: A,
    policy: &BackoffPolicy,
) -> Result<TcpConn, TransportError> {
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        match TcpStream::connect(&addr) {
            Ok(stream) => return TcpConn::from_stream(stream),
            Err(e) => last = e.to_string(),
        }
        if attempt < policy.max_retries {
            std::thread::sleep(backoff_delay(policy, attempt));
        }
    }
    Err(TransportError::RetriesExhausted {
        addr: format!("{addr:?}"),
        attempts: policy.max_retries + 1,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn backoff_schedule_arithmetic() {
        let p = BackoffPolicy::default();
        let expected_ms = [100, 200, 400, 800, 1600, 3200, 5000, 5000];
        for (n, ms) in expected_ms.iter().enumerate() {
            assert_eq!(backoff_delay(&p, n as u32), Duration::from_millis(*ms));
        }
    }

    #[test]
    fn tcp_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut conn = TcpConn::from_stream(stream).unwrap();
            let msg = conn.recv().unwrap();
            conn.send(&msg).unwrap();
        });
        let mut client = connect_with_backoff(addr, &BackoffPolicy::default()).unwrap();
        client.send(&Message::SampleReq { batch: 3 }).unwrap();
        assert_eq!(client.recv().unwrap(), Message::SampleReq { batch: 3 });
        server.join().unwrap();
    }

    #[test]
    fn disconnect_mid_stream_is_closed() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            drop(stream);
        });
        let mut client = connect_with_backoff(addr, &BackoffPolicy::default()).unwrap();
        server.join().unwrap();
        assert!(matches!(
            client.recv(),
            Err(TransportError::ConnectionClosed | TransportError::Io(_))
        ));
    }

    #[test]
    fn refused_connection_exhausts_retries() {
        // Bind then drop to get a port that refuses connections.
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let policy = BackoffPolicy {
            base: Duration::from_millis(1),
            cap: Duration::from_millis(2),
            max_retries: 2,
        };
        match connect_with_backoff(addr, &policy) {
            Err(TransportError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 3),
            Err(other) => panic!("expected retries exhausted, got {other:?}"),
            Ok(_) => panic!("connect unexpectedly succeeded"),
        }
    }
}
