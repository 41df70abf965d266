//! Line-oriented printer transport: send a command, await its "ok".
//!
//! [`serial_run`] drives any [`Transport`] through a program in lockstep with
//! the same interpreter the virtual printer uses, so the event stream over a
//! well-behaved link is identical to [`super::virtual_execute`]. A POSIX
//! serial-port transport is provided for real hardware; [`MockPrinter`]
//! acknowledges instantly for tests and dry runs.

use super::sim::Interpreter;
use super::{GCodeCommand, ProbeEvent, ProbeRunConfig};
use crate::error::{Error, Result};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// One read attempt against the peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadOutcome {
    /// A complete line, without its terminator.
    Line(String),
    /// The peer hung up / the stream ended.
    Closed,
    /// Nothing arrived within the allowed window.
    TimedOut,
}

/// A newline-delimited, acknowledgement-based printer link.
pub trait Transport {
    /// Send one command line (terminator added by the transport).
    fn send_line(&mut self, line: &str) -> Result<()>;
    /// Wait up to `timeout` for one line from the peer.
    fn read_line(&mut self, timeout: Duration) -> Result<ReadOutcome>;
}

/// How a run ended: every command acknowledged, or stopped early by the
/// abort flag / a closed link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Aborted,
}

/// Knobs for [`serial_run`].
#[derive(Debug, Clone)]
pub struct SerialOptions {
    /// How long to wait for each acknowledgement.
    pub ack_timeout: Duration,
    /// Cooperative cancellation: set from any thread to stop between
    /// commands.
    pub abort: Option<Arc<AtomicBool>>,
}

impl Default for SerialOptions {
    fn default() -> Self {
        SerialOptions {
            ack_timeout: Duration::from_secs(30),
            abort: None,
        }
    }
}

fn is_ack(line: &str) -> bool {
    line.trim_start().to_ascii_lowercase().starts_with("ok")
}

/// Send a program one command at a time, awaiting an "ok" line after each.
///
/// The interpreter that backs the virtual printer runs alongside the link,
/// so each acknowledged M400 barrier yields the same [`ProbeEvent`] the
/// virtual run would produce; `on_event` fires as each event completes (this
/// is the sensor-capture hook). The abort flag is checked between commands;
/// an aborted run or a closed link returns the events gathered so far with
/// [`RunStatus::Aborted`].
pub fn serial_run(
    commands: &[GCodeCommand],
    transport: &mut dyn Transport,
    frames_per_indent: u32,
    cfg: &ProbeRunConfig,
    options: &SerialOptions,
    mut on_event: impl FnMut(&ProbeEvent),
) -> Result<(RunStatus, Vec<ProbeEvent>)> {
    let mut interp = Interpreter::new(cfg, frames_per_indent)?;
    let mut events = Vec::new();
    for cmd in commands {
        if let Some(flag) = &options.abort {
            if flag.load(Ordering::Acquire) {
                return Ok((RunStatus::Aborted, events));
            }
        }
        let line = cmd.render()?;
        transport.send_line(&line)?;
        loop {
            match transport.read_line(options.ack_timeout)? {
                ReadOutcome::Line(l) if is_ack(&l) => break,
                ReadOutcome::Line(l) => {
                    log::debug!("printer chatter: {l}");
                }
                ReadOutcome::Closed => return Ok((RunStatus::Aborted, events)),
                ReadOutcome::TimedOut => {
                    return Err(Error::Timeout {
                        seconds: options.ack_timeout.as_secs_f64(),
                    })
                }
            }
        }
        if let Some(event) = interp.step(cmd)? {
            on_event(&event);
            events.push(event);
        }
    }
    Ok((RunStatus::Completed, events))
}

/// An in-process printer that acknowledges every line instantly. Records the
/// raw lines it was sent; optionally emits a busy line before each ack, as
/// chatty firmwares do.
#[derive(Debug, Default)]
pub struct MockPrinter {
    pub sent: Vec<String>,
    pub chatter: bool,
    pending_acks: usize,
    pending_chatter: bool,
}

impl MockPrinter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn chatty() -> Self {
        MockPrinter {
            chatter: true,
            ..Self::default()
        }
    }
}

impl Transport for MockPrinter {
    fn send_line(&mut self, line: &str) -> Result<()> {
        self.sent.push(line.to_string());
        self.pending_acks += 1;
        self.pending_chatter = self.chatter;
        Ok(())
    }

    fn read_line(&mut self, _timeout: Duration) -> Result<ReadOutcome> {
        if self.pending_acks == 0 {
            return Ok(ReadOutcome::TimedOut);
        }
        if self.pending_chatter {
            self.pending_chatter = false;
            return Ok(ReadOutcome::Line("echo: busy processing".into()));
        }
        self.pending_acks -= 1;
        Ok(ReadOutcome::Line("ok".into()))
    }
}

// ---------------------------------------------------------------------------
// POSIX serial port
// ---------------------------------------------------------------------------

/// A raw-mode POSIX serial port (8N1, no flow control).
#[cfg(unix)]
#[derive(Debug)]
pub struct SerialPort {
    file: std::fs::File,
    pending: Vec<u8>,
    path: String,
}

#[cfg(unix)]
impl SerialPort {
    /// Open and configure a serial device such as `/dev/ttyUSB0`.
    pub fn open(path: &str, baud: u32) -> Result<Self> {
        use std::os::unix::io::AsRawFd;
        let speed = baud_constant(baud)?;
        let file = std::fs::OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| Error::io(std::path::Path::new(path), e))?;
        let fd = file.as_raw_fd();
        // SAFETY: fd is a valid open descriptor owned by `file`; termios is
        // zero-initialized before tcgetattr fills it.
        unsafe {
            let mut tio: libc::termios = std::mem::zeroed();
            if libc::tcgetattr(fd, &mut tio) != 0 {
                return Err(Error::io(
                    std::path::Path::new(path),
                    std::io::Error::last_os_error(),
                ));
            }
            libc::cfmakeraw(&mut tio);
            libc::cfsetispeed(&mut tio, speed);
            libc::cfsetospeed(&mut tio, speed);
            tio.c_cc[libc::VMIN] = 0;
            tio.c_cc[libc::VTIME] = 0;
            if libc::tcsetattr(fd, libc::TCSANOW, &tio) != 0 {
                return Err(Error::io(
                    std::path::Path::new(path),
                    std::io::Error::last_os_error(),
                ));
            }
        }
        Ok(SerialPort {
            file,
            pending: Vec::new(),
            path: path.to_string(),
        })
    }

    fn take_line(&mut self) -> Option<String> {
        let nl = self.pending.iter().position(|&b| b == b'\n')?;
        let mut line: Vec<u8> = self.pending.drain(..=nl).collect();
        line.pop(); // the newline
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        Some(String::from_utf8_lossy(&line).into_owned())
    }
}

#[cfg(unix)]
impl Transport for SerialPort {
    fn send_line(&mut self, line: &str) -> Result<()> {
        use std::io::Write;
        let path = std::path::Path::new(&self.path).to_path_buf();
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.write_all(b"\n"))
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&path, e))
    }

    fn read_line(&mut self, timeout: Duration) -> Result<ReadOutcome> {
        use std::io::Read;
        use std::os::unix::io::AsRawFd;
        use std::time::Instant;

        if let Some(line) = self.take_line() {
            return Ok(ReadOutcome::Line(line));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(ReadOutcome::TimedOut);
            }
            let remaining_ms = (deadline - now).as_millis().min(i32::MAX as u128) as i32;
            let mut pfd = libc::pollfd {
                fd: self.file.as_raw_fd(),
                events: libc::POLLIN,
                revents: 0,
            };
            // SAFETY: pfd points at a single valid pollfd for the lifetime
            // of the call.
            let rc = unsafe { libc::poll(&mut pfd, 1, remaining_ms.max(1)) };
            if rc < 0 {
                let err = std::io::Error::last_os_error();
                if err.kind() == std::io::ErrorKind::Interrupted {
                    continue;
                }
                return Err(Error::io(std::path::Path::new(&self.path), err));
            }
            if rc == 0 {
                return Ok(ReadOutcome::TimedOut);
            }
            if pfd.revents & (libc::POLLHUP | libc::POLLERR | libc::POLLNVAL) != 0
                && pfd.revents & libc::POLLIN == 0
            {
                return Ok(ReadOutcome::Closed);
            }
            let mut buf = [0u8; 256];
            let path = std::path::Path::new(&self.path).to_path_buf();
            match self.file.read(&mut buf) {
                Ok(0) => return Ok(ReadOutcome::Closed),
                Ok(n) => {
                    self.pending.extend_from_slice(&buf[..n]);
                    if let Some(line) = self.take_line() {
                        return Ok(ReadOutcome::Line(line));
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
    }
}

#[cfg(unix)]
fn baud_constant(baud: u32) -> Result<libc::speed_t> {
    Ok(match baud {
        9600 => libc::B9600,
        19200 => libc::B19200,
        38400 => libc::B38400,
        57600 => libc::B57600,
        115200 => libc::B115200,
        230400 => libc::B230400,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unsupported baud rate {other} (use 9600/19200/38400/57600/115200/230400)"
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcode::{plan_to_gcode, virtual_execute};
    use crate::probe_plan::generate_grid;

    fn cfg() -> ProbeRunConfig {
        ProbeRunConfig::default()
    }

    #[test]
    fn mock_run_matches_virtual_interpreter() {
        let plan = generate_grid((1.0, 1.0), 0.5, 0.8, 2).unwrap();
        let program = plan_to_gcode(&plan, &cfg()).unwrap();
        let (_, expected) = virtual_execute(&program, 2, &cfg()).unwrap();

        let mut printer = MockPrinter::new();
        let mut streamed = Vec::new();
        let (status, events) = serial_run(
            &program,
            &mut printer,
            2,
            &cfg(),
            &SerialOptions::default(),
            |e| streamed.push(e.clone()),
        )
        .unwrap();
        assert_eq!(status, RunStatus::Completed);
        assert_eq!(events, expected);
        assert_eq!(streamed, expected);
        assert_eq!(printer.sent.len(), program.len());
    }

    #[test]
    fn chatter_lines_are_skipped() {
        let plan = generate_grid((1.0, 1.0), 1.0, 0.5, 1).unwrap();
        let program = plan_to_gcode(&plan, &cfg()).unwrap();
        let mut printer = MockPrinter::chatty();
        let (status, events) =
            serial_run(&program, &mut printer, 1, &cfg(), &SerialOptions::default(), |_| {})
                .unwrap();
        assert_eq!(status, RunStatus::Completed);
        assert_eq!(events.len(), 4);
    }

    #[test]
    fn missing_ack_times_out() {
        struct NeverAck;
        impl Transport for NeverAck {
            fn send_line(&mut self, _line: &str) -> Result<()> {
                Ok(())
            }
            fn read_line(&mut self, _timeout: Duration) -> Result<ReadOutcome> {
                Ok(ReadOutcome::TimedOut)
            }
        }
        let program = vec![GCodeCommand::bare(super::super::Opcode::G28)];
        let err = serial_run(
            &program,
            &mut NeverAck,
            1,
            &cfg(),
            &SerialOptions {
                ack_timeout: Duration::from_millis(5),
                abort: None,
            },
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, Error::Timeout { .. }), "{err}");
    }

    #[test]
    fn closed_link_reports_aborted_with_partial_events() {
        struct CloseAfter {
            acks_left: usize,
        }
        impl Transport for CloseAfter {
            fn send_line(&mut self, _line: &str) -> Result<()> {
                Ok(())
            }
            fn read_line(&mut self, _timeout: Duration) -> Result<ReadOutcome> {
                if self.acks_left == 0 {
                    return Ok(ReadOutcome::Closed);
                }
                self.acks_left -= 1;
                Ok(ReadOutcome::Line("ok".into()))
            }
        }
        let plan = generate_grid((1.0, 1.0), 1.0, 0.5, 1).unwrap();
        let program = plan_to_gcode(&plan, &cfg()).unwrap();
        // Enough acks for the preamble plus one full point (7 commands).
        let (status, events) = serial_run(
            &program,
            &mut CloseAfter { acks_left: 7 },
            1,
            &cfg(),
            &SerialOptions::default(),
            |_| {},
        )
        .unwrap();
        assert_eq!(status, RunStatus::Aborted);
        assert_eq!(events.len(), 1);
    }

    #[test]
    fn abort_after_k_events_emits_exactly_k() {
        let plan = generate_grid((2.0, 2.0), 1.0, 0.5, 1).unwrap();
        assert_eq!(plan.points.len(), 9);
        let program = plan_to_gcode(&plan, &cfg()).unwrap();
        let flag = Arc::new(AtomicBool::new(false));
        let flag_in_callback = flag.clone();
        let mut count = 0usize;
        let (status, events) = serial_run(
            &program,
            &mut MockPrinter::new(),
            1,
            &cfg(),
            &SerialOptions {
                ack_timeout: Duration::from_secs(1),
                abort: Some(flag),
            },
            |_| {
                count += 1;
                if count == 4 {
                    flag_in_callback.store(true, Ordering::Release);
                }
            },
        )
        .unwrap();
        assert_eq!(status, RunStatus::Aborted);
        assert_eq!(events.len(), 4);
    }

    #[cfg(unix)]
    #[test]
    fn serial_port_open_reports_io_error_for_missing_device() {
        let err = SerialPort::open("/dev/does-not-exist-12345", 115200).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
        let err = SerialPort::open("/dev/null", 1234).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }
}
