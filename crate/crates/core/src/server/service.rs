use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::transport::{Conn, TcpConn, TransportError};

use super::state::ParamServer;

/// Serve one connection until the peer disconnects. Malformed requests get
/// `ERR` responses; an undecodable frame (bad magic or crc) closes the
/// connection since the stream can no longer be trusted.
pub fn serve_param_connection(server: &ParamServer, conn: &mut dyn Conn) {
    loop {
        let req = match conn.recv() {
            Ok(msg) => msg,
            Err(TransportError::ConnectionClosed) => return,
            Err(_) => return,
        };
        let resp = server.handle(&req);
        if conn.send(&resp).is_err() {
            return;
        }
    }
}

/// Accept loop on its own thread; each connection gets a service thread.
/// Setting `stop` makes the loop drain and return.
pub fn spawn_tcp_param_server(
    server: Arc<ParamServer>,
    listener: TcpListener,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    listener
        .set_nonblocking(true)
        .expect("nonblocking listener");
    std::thread::spawn(move || {
        let mut workers = Vec::new();
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false).ok();
                    let server = Arc::clone(&server);
                    workers.push(std::thread::spawn(move || {
                        if let Ok(mut conn) = TcpConn::from_stream(stream) {
                            serve_param_connection(&server, &mut conn);
                        }
                    }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(1));
                }
                Err(_) => break,
            }
        }
        for w in workers {
            w.join().ok();
        }
    })
}
