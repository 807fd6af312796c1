//! TCP endpoint. Each connection gets its own session; poses that arrive
//! while a cut is being computed are coalesced so only the latest one is
//! answered.

use std::io::{BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Condvar, Mutex};

use crate::error::{Error, Result};

use super::session::{hello, ServeScene, ServeSession};
use super::wire::{read_message, write_message, CameraPose, Message, ERR_INTERNAL, ERR_MALFORMED, ERR_UNEXPECTED};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionSummary {
    pub poses_received: u64,
    pub poses_answered: u64,
}

#[derive(Default)]
struct Inbox {
    latest: Option<CameraPose>,
    received: u64,
    closed: bool,
    error: Option<(u32, String)>,
}

/// Serves one client until it closes its side or sends a bad frame. A bad
/// frame is answered with an Error message before the socket is closed.
pub fn serve_connection(stream: TcpStream, scene: &ServeScene, timing: bool) -> Result<SessionSummary> {
    stream.set_nodelay(true).ok();
    let mut reader = stream.try_clone()?;
    let mut out = BufWriter::new(stream.try_clone()?);
    write_message(&mut out, &hello())?;
    out.flush()?;

    let inbox = Mutex::new(Inbox::default());
    let wake = Condvar::new();
    let mut session = ServeSession::new(scene, timing)?;
    let mut answered = 0u64;

    let shutdown = stream.try_clone()?;
    let result = std::thread::scope(|s| {
        s.spawn(|| loop {
            let next = read_message(&mut reader);
            let mut ib = inbox.lock().unwrap();
            match next {
                Ok(Some(Message::CameraPose(p))) => {
                    ib.latest = Some(p);
                    ib.received += 1;
                }
                Ok(Some(m)) => {
                    ib.error = Some((ERR_UNEXPECTED, format!("unexpected message type {} from client", m.msg_type())));
                }
                Ok(None) => ib.closed = true,
                Err(e) => ib.error = Some((ERR_MALFORMED, e.to_string())),
            }
            let stop = ib.closed || ib.error.is_some();
            drop(ib);
            wake.notify_one();
            if stop {
                break;
            }
        });

        let mut work = || -> Result<()> {
            loop {
                let pose = {
                    let mut ib = wake
                        .wait_while(inbox.lock().unwrap(), |ib| ib.latest.is_none() && !ib.closed && ib.error.is_none())
                        .unwrap();
                    if let Some((code, message)) = ib.error.take() {
                        ib.closed = true;
                        drop(ib);
                        write_message(
                            &mut out,
                            &Message::Error {
                                code,
                                message: message.clone(),
                            },
                        )?;
                        out.flush()?;
                        return Err(Error::Protocol(message));
                    }
                    match ib.latest.take() {
                        Some(p) => p,
                        None => return Ok(()),
                    }
                };
                let msgs = match session.handle_pose(&pose) {
                    Ok(m) => m,
                    Err(e) => {
                        let code = if matches!(e, Error::Protocol(_)) { ERR_MALFORMED } else { ERR_INTERNAL };
                        write_message(
                            &mut out,
                            &Message::Error {
                                code,
                                message: e.to_string(),
                            },
                        )?;
                        out.flush()?;
                        return Err(e);
                    }
                };
                for m in &msgs {
                    write_message(&mut out, m)?;
                }
                out.flush()?;
                answered += 1;
            }
        };
        let r = work();
        // Unblocks the reader if the session ended on our side.
        let _ = shutdown.shutdown(Shutdown::Both);
        r
    });
    let received = inbox.lock().unwrap().received;
    result.map(|()| SessionSummary {
        poses_received: received,
        poses_answered: answered,
    })
}

/// Accepts connections, each served on its own thread, and reports every
/// finished session to `on_end`. Stops accepting after `max_sessions`
/// connections when given.
pub fn serve(
    listener: TcpListener,
    scene: &ServeScene,
    timing: bool,
    max_sessions: Option<usize>,
    on_end: &(dyn Fn(Option<SocketAddr>, Result<SessionSummary>) + Sync),
) -> Result<()> {
    std::thread::scope(|s| {
        for (i, conn) in listener.incoming().enumerate() {
            let stream = conn?;
            let peer = stream.peer_addr().ok();
            s.spawn(move || on_end(peer, serve_connection(stream, scene, timing)));
            if max_sessions.is_some_and(|m| i + 1 >= m) {
                break;
            }
        }
        Ok(())
    })
}
