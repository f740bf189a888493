//! Wrapper side of the tick protocol over TCP.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use tickwrap_core::tick::{AdvanceMessage, BYE};
use tickwrap_core::time::format_rational;
use tickwrap_core::wrapper::{Ticker, WrapperError};
use tickwrap_core::{Rational, TimeInf};

pub struct TcpTicker {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

fn protocol(msg: impl Into<String>) -> WrapperError {
    WrapperError::Protocol(msg.into())
}

impl TcpTicker {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<TcpTicker> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpTicker {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    /// Retry connecting until `patience` runs out, for servers still starting.
    pub fn connect_retry(addr: impl ToSocketAddrs + Clone, patience: Duration) -> std::io::Result<TcpTicker> {
        let until = Instant::now() + patience;
        loop {
            match Self::connect(addr.clone()) {
                Ok(t) => return Ok(t),
                Err(e) if Instant::now() >= until => return Err(e),
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        }
    }

    fn send_line(&mut self, text: &str) -> Result<(), WrapperError> {
        self.writer.write_all(format!("{text}\r\n").as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn read_line(&mut self) -> Result<Option<String>, WrapperError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line.trim_end().to_string()))
    }
}

impl Ticker for TcpTicker {
    fn start(&mut self, grain: Rational) -> Result<(), WrapperError> {
        self.send_line(&format_rational(&grain))?;
        match self.read_line()? {
            Some(l) if l == "GO" => Ok(()),
            Some(l) => Err(protocol(format!("handshake answered `{l}`"))),
            None => Err(protocol("server closed during handshake")),
        }
    }

    fn send_request(&mut self, mte: TimeInf) -> Result<(), WrapperError> {
        self.send_line(&mte.to_string())
    }

    fn await_advance(&mut self) -> Result<Option<AdvanceMessage>, WrapperError> {
        match self.read_line()? {
            None => Ok(None),
            Some(l) => AdvanceMessage::decode(&l).map(Some).map_err(|e| protocol(format!("`{l}`: {e}"))),
        }
    }

    fn finish(&mut self) {
        let _ = self.send_line(BYE);
    }
}
