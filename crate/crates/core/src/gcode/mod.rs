//! Printer-agnostic G-code: generation from probe plans, parsing, a
//! deterministic virtual printer, and a line-oriented serial driver.
//!
//! Only the opcode subset actually needed for probing is supported — G0/G1
//! moves, G28 homing, G90/G91 addressing, and M400 as the "all motion
//! finished" barrier at which sensor frames are captured. Anything else is a
//! parse error, which keeps the printer abstraction honest.

mod parse;
mod sim;
pub mod serial;

pub use parse::parse_gcode;
pub use serial::{serial_run, MockPrinter, ReadOutcome, RunStatus, SerialOptions, Transport};
pub use sim::virtual_execute;

use crate::error::{Error, Result};
use crate::probe_plan::{ProbePlan, ProbePoint};

/// Supported opcode subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    /// Rapid move.
    G0,
    /// Linear (feed) move.
    G1,
    /// Home all axes.
    G28,
    /// Absolute addressing.
    G90,
    /// Relative addressing.
    G91,
    /// Wait for all queued motion to finish.
    M400,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::G0 => "G0",
            Opcode::G1 => "G1",
            Opcode::G28 => "G28",
            Opcode::G90 => "G90",
            Opcode::G91 => "G91",
            Opcode::M400 => "M400",
        }
    }

    pub fn is_motion(self) -> bool {
        matches!(self, Opcode::G0 | Opcode::G1)
    }
}

/// Axis parameters of a command; absent axes are untouched by a move.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AxisParams {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    /// Feedrate in mm/min.
    pub f: Option<f64>,
}

impl AxisParams {
    pub fn is_empty(&self) -> bool {
        self.x.is_none() && self.y.is_none() && self.z.is_none() && self.f.is_none()
    }
}

/// One G-code command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GCodeCommand {
    pub opcode: Opcode,
    pub params: AxisParams,
}

impl GCodeCommand {
    pub fn bare(opcode: Opcode) -> Self {
        GCodeCommand { opcode, params: AxisParams::default() }
    }

    pub fn g0() -> Self {
        Self::bare(Opcode::G0)
    }

    pub fn g1() -> Self {
        Self::bare(Opcode::G1)
    }

    pub fn x(mut self, v: f64) -> Self {
        self.params.x = Some(v);
        self
    }

    pub fn y(mut self, v: f64) -> Self {
        self.params.y = Some(v);
        self
    }

    pub fn z(mut self, v: f64) -> Self {
        self.params.z = Some(v);
        self
    }

    pub fn f(mut self, v: f64) -> Self {
        self.params.f = Some(v);
        self
    }

    /// Check the structural invariants: only motion commands carry
    /// parameters, feedrates are positive, and all values are finite.
    pub fn validate(&self) -> Result<()> {
        if !self.opcode.is_motion() && !self.params.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} carries no axis parameters",
                self.opcode.mnemonic()
            )));
        }
        for (name, v) in [
            ("X", self.params.x),
            ("Y", self.params.y),
            ("Z", self.params.z),
            ("F", self.params.f),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "{} {name} value must be finite, got {v}",
                        self.opcode.mnemonic()
                    )));
                }
            }
        }
        if let Some(f) = self.params.f {
            if f <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "feedrate must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Render one command as a G-code line (no terminator). Parameters are
    /// emitted in X, Y, Z, F order using the shortest decimal form that
    /// parses back to the identical bits.
    pub fn render(&self) -> Result<String> {
        self.validate()?;
        let mut line = String::from(self.opcode.mnemonic());
        for (letter, v) in [
            ('X', self.params.x),
            ('Y', self.params.y),
            ('Z', self.params.z),
            ('F', self.params.f),
        ] {
            if let Some(v) = v {
                line.push(' ');
                line.push(letter);
                line.push_str(&format!("{v}"));
            }
        }
        Ok(line)
    }
}

/// Render a program as LF-terminated lines.
pub fn render_gcode(commands: &[GCodeCommand]) -> Result<String> {
    let mut out = String::new();
    for c in commands {
        out.push_str(&c.render()?);
        out.push('\n');
    }
    Ok(out)
}

/// Machine geometry and feeds for a probing run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRunConfig {
    /// Z at which the probe tip first contacts the gel surface.
    pub z_touch_mm: f64,
    /// Safe hop height between points; must be above the touch plane.
    pub travel_z_mm: f64,
    /// Feedrate for travel moves, mm/min.
    pub feed_travel: f64,
    /// Feedrate for the plunge into the gel, mm/min.
    pub feed_probe: f64,
    /// Maximum travel per axis; the valid range is [0, limit].
    pub machine_limits_mm: (f64, f64, f64),
}

impl Default for ProbeRunConfig {
    fn default() -> Self {
        ProbeRunConfig {
            z_touch_mm: 10.0,
            travel_z_mm: 15.0,
            feed_travel: 3000.0,
            feed_probe: 300.0,
            machine_limits_mm: (220.0, 220.0, 250.0),
        }
    }
}

impl ProbeRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.travel_z_mm > self.z_touch_mm) {
            return Err(Error::InvalidArgument(format!(
                "travel_z ({}) must be above z_touch ({})",
                self.travel_z_mm, self.z_touch_mm
            )));
        }
        if !(self.feed_travel > 0.0 && self.feed_probe > 0.0) {
            return Err(Error::InvalidArgument("feedrates must be positive".into()));
        }
        let (lx, ly, lz) = self.machine_limits_mm;
        if !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
            return Err(Error::InvalidArgument("machine limits must be positive".into()));
        }
        if self.travel_z_mm > lz {
            return Err(Error::InvalidArgument(format!(
                "travel_z ({}) exceeds the z limit ({lz})",
                self.travel_z_mm
            )));
        }
        Ok(())
    }
}

/// Interpreter-visible printer state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrinterState {
    pub position: (f64, f64, f64),
    pub homed: bool,
    pub absolute_mode: bool,
    pub feed_mm_per_min: f64,
}

impl PrinterState {
    pub fn initial() -> Self {
        PrinterState {
            position: (0.0, 0.0, 0.0),
            homed: false,
            absolute_mode: true,
            feed_mm_per_min: 0.0,
        }
    }
}

/// A completed indentation: where the probe was commanded, where the
/// interpreter says it ended up, and which global frame indices belong to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEvent {
    pub plan_index: usize,
    pub commanded: ProbePoint,
    pub achieved: (f64, f64, f64),
    pub frame_indices: Vec<usize>,
}

/// Translate a plan into a G-code program: home, absolute mode, then per
/// point a travel move at safe height, a plunge to `z_touch − depth`, an
/// M400 capture barrier, and a retract. An empty plan yields just the
/// preamble.
pub fn plan_to_gcode(plan: &ProbePlan, cfg: &ProbeRunConfig) -> Result<Vec<GCodeCommand>> {
    cfg.validate()?;
    let (lx, ly, _) = cfg.machine_limits_mm;
    let mut out = Vec::with_capacity(3 + plan.points.len() * 4);
    out.push(GCodeCommand::bare(Opcode::G28));
    out.push(GCodeCommand::bare(Opcode::G90));
    if plan.points.is_empty() {
        return Ok(out);
    }
    out.push(GCodeCommand::g0().z(cfg.travel_z_mm).f(cfg.feed_travel));
    for (i, p) in plan.points.iter().enumerate() {
        if !(0.0..=lx).contains(&p.x_mm) || !(0.0..=ly).contains(&p.y_mm) {
            return Err(Error::Range(format!(
                "plan point {i} at ({}, {}) is outside the machine limits ({lx}, {ly})",
                p.x_mm, p.y_mm
            )));
        }
        let z_plunge = cfg.z_touch_mm - p.depth_mm;
        if z_plunge < 0.0 {
            return Err(Error::Range(format!(
                "plan point {i} depth {} would plunge below z=0 (z_touch = {})",
                p.depth_mm, cfg.z_touch_mm
            )));
        }
        out.push(GCodeCommand::g0().x(p.x_mm).y(p.y_mm).f(cfg.feed_travel));
        out.push(GCodeCommand::g1().z(z_plunge).f(cfg.feed_probe));
        out.push(GCodeCommand::bare(Opcode::M400));
        out.push(GCodeCommand::g0().z(cfg.travel_z_mm).f(cfg.feed_travel));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe_plan::generate_grid;

    fn test_cfg() -> ProbeRunConfig {
        ProbeRunConfig::default()
    }

    #[test]
    fn empty_plan_renders_preamble_only() {
        let plan = ProbePlan {
            points: vec![],
            spacing_mm: 0.5,
            extent_mm: (1.0, 1.0),
            frames_per_indent: 30,
        };
        let cmds = plan_to_gcode(&plan, &test_cfg()).unwrap();
        assert_eq!(
            cmds,
            vec![GCodeCommand::bare(Opcode::G28), GCodeCommand::bare(Opcode::G90)]
        );
    }

    #[test]
    fn single_point_plunges_to_touch_minus_depth() {
        let plan = ProbePlan {
            points: vec![ProbePoint { x_mm: 5.0, y_mm: 5.0, depth_mm: 0.8 }],
            spacing_mm: 0.5,
            extent_mm: (10.0, 10.0),
            frames_per_indent: 30,
        };
        let cmds = plan_to_gcode(&plan, &test_cfg()).unwrap();
        let plunge = cmds
            .iter()
            .find(|c| c.opcode == Opcode::G1)
            .expect("program contains a plunge");
        assert_eq!(plunge.params.z, Some(10.0 - 0.8));
        assert_eq!(plunge.params.f, Some(300.0));
    }

    #[test]
    fn nine_point_grid_emits_nine_barriers() {
        let plan = generate_grid((1.0, 1.0), 0.5, 0.8, 30).unwrap();
        let cmds = plan_to_gcode(&plan, &test_cfg()).unwrap();
        let barriers = cmds.iter().filter(|c| c.opcode == Opcode::M400).count();
        assert_eq!(barriers, 9);
        // Deterministic output.
        assert_eq!(cmds, plan_to_gcode(&plan, &test_cfg()).unwrap());
    }

    #[test]
    fn out_of_limits_point_is_named() {
        let plan = ProbePlan {
            points: vec![
                ProbePoint { x_mm: 5.0, y_mm: 5.0, depth_mm: 0.5 },
                ProbePoint { x_mm: 500.0, y_mm: 5.0, depth_mm: 0.5 },
            ],
            spacing_mm: 0.5,
            extent_mm: (500.0, 10.0),
            frames_per_indent: 30,
        };
        let err = plan_to_gcode(&plan, &test_cfg()).unwrap_err();
        match err {
            Error::Range(msg) => assert!(msg.contains("point 1"), "{msg}"),
            other => panic!("expected range error, got {other}"),
        }
    }

    #[test]
    fn render_uses_shortest_round_trip_form() {
        let c = GCodeCommand::g1().x(5.0).y(0.1).f(3000.0);
        assert_eq!(c.render().unwrap(), "G1 X5 Y0.1 F3000");
        let bare = GCodeCommand::bare(Opcode::M400);
        assert_eq!(bare.render().unwrap(), "M400");
    }

    #[test]
    fn validation_rejects_params_on_bare_opcodes_and_bad_feeds() {
        let mut c = GCodeCommand::bare(Opcode::G28);
        c.params.x = Some(1.0);
        assert!(c.validate().is_err());
        assert!(GCodeCommand::g1().f(0.0).validate().is_err());
        assert!(GCodeCommand::g1().f(-5.0).validate().is_err());
        assert!(GCodeCommand::g1().x(f64::NAN).validate().is_err());
        assert!(GCodeCommand::g1().x(1.0).f(300.0).validate().is_ok());
    }

    #[test]
    fn run_config_validation_catches_inverted_heights() {
        let mut cfg = test_cfg();
        cfg.travel_z_mm = cfg.z_touch_mm - 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg();
        cfg.feed_probe = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = test_cfg();
        cfg.travel_z_mm = 500.0;
        assert!(cfg.validate().is_err());
    }
}
