//! Deterministic G-code interpreter: the hardware-free printer.

use super::{GCodeCommand, Opcode, PrinterState, ProbeEvent, ProbeRunConfig};
use crate::error::{Error, Result};
use crate::probe_plan::ProbePoint;

/// Steps commands against a [`PrinterState`], emitting a [`ProbeEvent`] for
/// every M400 barrier reached while the tip is below the touch plane.
///
/// Both the virtual printer and the serial driver run this same state
/// machine, so their event streams are identical by construction.
pub(super) struct Interpreter<'a> {
    cfg: &'a ProbeRunConfig,
    frames_per_indent: u32,
    pub state: PrinterState,
    frame_counter: usize,
    event_counter: usize,
}

impl<'a> Interpreter<'a> {
    pub fn new(cfg: &'a ProbeRunConfig, frames_per_indent: u32) -> Result<Self> {
        cfg.validate()?;
        if frames_per_indent == 0 {
            return Err(Error::InvalidArgument(
                "frames_per_indent must be at least 1".into(),
            ));
        }
        Ok(Interpreter {
            cfg,
            frames_per_indent,
            state: PrinterState::initial(),
            frame_counter: 0,
            event_counter: 0,
        })
    }

    pub fn step(&mut self, cmd: &GCodeCommand) -> Result<Option<ProbeEvent>> {
        cmd.validate()?;
        match cmd.opcode {
            Opcode::G28 => {
                self.state.position = (0.0, 0.0, 0.0);
                self.state.homed = true;
                Ok(None)
            }
            Opcode::G90 => {
                self.state.absolute_mode = true;
                Ok(None)
            }
            Opcode::G91 => {
                self.state.absolute_mode = false;
                Ok(None)
            }
            Opcode::G0 | Opcode::G1 => {
                if !self.state.homed {
                    return Err(Error::Protocol(format!(
                        "{} before homing (G28 must come first)",
                        cmd.opcode.mnemonic()
                    )));
                }
                if let Some(f) = cmd.params.f {
                    self.state.feed_mm_per_min = f;
                }
                let (cx, cy, cz) = self.state.position;
                let target = if self.state.absolute_mode {
                    (
                        cmd.params.x.unwrap_or(cx),
                        cmd.params.y.unwrap_or(cy),
                        cmd.params.z.unwrap_or(cz),
                    )
                } else {
                    (
                        cx + cmd.params.x.unwrap_or(0.0),
                        cy + cmd.params.y.unwrap_or(0.0),
                        cz + cmd.params.z.unwrap_or(0.0),
                    )
                };
                let limits = self.cfg.machine_limits_mm;
                for (axis, v, lim) in [
                    ("X", target.0, limits.0),
                    ("Y", target.1, limits.1),
                    ("Z", target.2, limits.2),
                ] {
                    if !(0.0..=lim).contains(&v) {
                        return Err(Error::Range(format!(
                            "{} target {axis}={v} outside [0, {lim}]",
                            cmd.opcode.mnemonic()
                        )));
                    }
                }
                self.state.position = target;
                Ok(None)
            }
            Opcode::M400 => {
                let (x, y, z) = self.state.position;
                if self.state.homed && z < self.cfg.z_touch_mm {
                    let first = self.frame_counter;
                    self.frame_counter += self.frames_per_indent as usize;
                    let event = ProbeEvent {
                        plan_index: self.event_counter,
                        commanded: ProbePoint {
                            x_mm: x,
                            y_mm: y,
                            depth_mm: self.cfg.z_touch_mm - z,
                        },
                        achieved: (x, y, z),
                        frame_indices: (first..self.frame_counter).collect(),
                    };
                    self.event_counter += 1;
                    Ok(Some(event))
                } else {
                    // A barrier at travel height is a plain synchronization
                    // point, not an indentation.
                    Ok(None)
                }
            }
        }
    }
}

/// Interpret a program against a fresh printer, returning the final state
/// and the probe events in program order.
///
/// The interpreter is a pure function of its inputs: positions are computed
/// with the same arithmetic that generated the program, so events report
/// `achieved` positions bit-identical to the commanded ones.
pub fn virtual_execute(
    commands: &[GCodeCommand],
    frames_per_indent: u32,
    cfg: &ProbeRunConfig,
) -> Result<(PrinterState, Vec<ProbeEvent>)> {
    let mut interp = Interpreter::new(cfg, frames_per_indent)?;
    let mut events = Vec::new();
    for cmd in commands {
        if let Some(event) = interp.step(cmd)? {
            events.push(event);
        }
    }
    Ok((interp.state, events))
}
