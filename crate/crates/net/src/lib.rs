//! TCP transport for the tick protocol, one-round device clients and the
//! device servers, plus a runner that wires them together in one process.

pub mod client;
pub mod device;
pub mod heart;
pub mod physical;
pub mod server;
pub mod ticker;

use std::io;
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

/// Timeout for one-round client connections and replies.
pub const CLIENT_TIMEOUT: Duration = Duration::from_secs(5);

/// Blocking accept loop that ends on the first connection seen after
/// `stop` is set. Pair with [`wake`].
pub(crate) fn accept_until(
    listener: &TcpListener,
    stop: &AtomicBool,
    mut f: impl FnMut(TcpStream, SocketAddr),
) -> io::Result<()> {
    loop {
        let (stream, peer) = listener.accept()?;
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        f(stream, peer);
    }
}

/// Set `stop` and unblock the accept loop listening on `addr`.
pub(crate) fn wake(stop: &AtomicBool, mut addr: SocketAddr) {
    stop.store(true, Ordering::SeqCst);
    if addr.ip().is_unspecified() {
        addr.set_ip(Ipv4Addr::LOCALHOST.into());
    }
    if let Err(e) = TcpStream::connect_timeout(&addr, Duration::from_secs(1)) {
        log::warn!("could not wake listener on {addr}: {e}");
    }
}
