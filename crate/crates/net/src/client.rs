//! One-round TCP clients: connect, send, read one reply, close.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::Arc;

use tickwrap_core::adapter::ClientAction;
use tickwrap_core::clock::{Clock, WallNs};
use tickwrap_core::wrapper::{ClientResult, ClientTransport};
use tickwrap_core::LogicalTime;

use crate::CLIENT_TIMEOUT;

/// Send `contents` and return the reply up to the first newline (kept) or
/// peer close.
pub fn send_receive(host: &str, port: u16, contents: &str) -> std::io::Result<(String, Option<WallNs>)> {
    send_receive_at(host, port, contents, None)
}

fn send_receive_at(
    host: &str,
    port: u16,
    contents: &str,
    clock: Option<&dyn Clock>,
) -> std::io::Result<(String, Option<WallNs>)> {
    let addr = (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, format!("no address for {host}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, CLIENT_TIMEOUT)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(CLIENT_TIMEOUT))?;
    stream.set_write_timeout(Some(CLIENT_TIMEOUT))?;
    stream.write_all(format!("{contents}\n").as_bytes())?;
    stream.flush()?;
    let sent = clock.map(|c| c.now());
    stream.shutdown(Shutdown::Write)?;
    let mut reply = String::new();
    BufReader::new(&stream).read_line(&mut reply)?;
    let _ = stream.shutdown(Shutdown::Read);
    Ok((reply, sent))
}

/// Runs adapter client actions against real sockets.
pub struct TcpClients {
    clock: Arc<dyn Clock>,
}

impl TcpClients {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        TcpClients { clock }
    }
}

impl ClientTransport for TcpClients {
    fn run(&mut self, action: &ClientAction, _t: LogicalTime) -> ClientResult {
        match send_receive_at(&action.host, action.port, &action.send, Some(self.clock.as_ref())) {
            Ok((reply, sent_at)) => ClientResult { reply: Ok(reply), sent_at },
            Err(e) => {
                log::warn!("client {} to {}:{} failed: {e}", action.client_id, action.host, action.port);
                ClientResult {
                    reply: Err(e.to_string()),
                    sent_at: None,
                }
            }
        }
    }
}
