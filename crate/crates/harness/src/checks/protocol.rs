//! Golden byte transcripts of the tick protocol under a mock clock.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tickwrap_core::clock::{Clock, MockClock, WallNs, NS_PER_MS};
use tickwrap_net::server::{ServerReport, TickServer};

use super::Criterion;

const S: WallNs = 1000 * NS_PER_MS;
const READ_TIMEOUT: Duration = Duration::from_secs(5);

type Step<'a> = (&'a [u8], &'a [u8], Option<WallNs>);

struct Transcript<'a> {
    name: &'a str,
    script: Vec<(WallNs, &'a str, &'a str)>,
    steps: Vec<Step<'a>>,
}

fn io(e: std::io::Error) -> String {
    e.to_string()
}

fn replay(t: &Transcript) -> Result<(), String> {
    let clock = Arc::new(MockClock::with_interrupts(t.script.clone()));
    let server = TickServer::bind("127.0.0.1", 0, 0).map_err(io)?;
    let addr = server.control_addr().map_err(io)?;
    let c: Arc<dyn Clock> = clock.clone();
    let handle = thread::spawn(move || server.serve_one(c));
    let mut stream = TcpStream::connect(addr).map_err(io)?;
    stream.set_read_timeout(Some(READ_TIMEOUT)).map_err(io)?;
    for (send, expect, at) in &t.steps {
        stream.write_all(send).map_err(io)?;
        let mut buf = vec![0u8; expect.len()];
        stream.read_exact(&mut buf).map_err(io)?;
        if buf != *expect {
            return Err(format!(
                "sent {:?}, got {:?}, expected {:?}",
                String::from_utf8_lossy(send),
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(expect)
            ));
        }
        if let Some(at) = at {
            if clock.now() != *at {
                return Err(format!("clock at {} ns, expected {at}", clock.now()));
            }
        }
    }
    stream.write_all(b"BYE\r\n").map_err(io)?;
    let mut rest = Vec::new();
    stream.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(format!("trailing bytes {:?}", String::from_utf8_lossy(&rest)));
    }
    let _: ServerReport = handle.join().map_err(|_| "server panicked".to_string())?.map_err(io)?;
    Ok(())
}

fn transcripts() -> Vec<Transcript<'static>> {
    vec![
        Transcript {
            name: "handshake",
            script: vec![],
            steps: vec![(b"10\r\n", b"GO\r\n", Some(0))],
        },
        Transcript {
            name: "advancement",
            script: vec![],
            steps: vec![(b"1\r\n", b"GO\r\n", None), (b"1000\r\n", b"1000\r\n", Some(S))],
        },
        Transcript {
            name: "interrupt",
            script: vec![(4 * S, "console", "set-mode bolus")],
            steps: vec![
                (b"1000\r\n", b"GO\r\n", None),
                (b"10\r\n", b"4|set-mode bolus\r\n", Some(4 * S)),
                (b"6\r\n", b"6\r\n", Some(10 * S)),
            ],
        },
    ]
}

pub fn criterion() -> Criterion {
    let name = "tick protocol golden bytes";
    let ts = transcripts();
    let failures: Vec<String> = ts
        .iter()
        .filter_map(|t| replay(t).err().map(|e| format!("{}: {e}", t.name)))
        .collect();
    let names: Vec<&str> = ts.iter().map(|t| t.name).collect();
    if failures.is_empty() {
        Criterion::new(name, true, format!("{} transcripts exact ({})", ts.len(), names.join(", ")))
    } else {
        Criterion::new(name, false, failures.join("; "))
    }
}
