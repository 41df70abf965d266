//! Text → command-list parsing for the supported G-code subset.

use super::{AxisParams, GCodeCommand, Opcode};
use crate::error::{Error, Result};

/// Parse a G-code program: one command per line, `;` starts a comment,
/// opcodes and axis letters are case-insensitive, blank lines are skipped.
pub fn parse_gcode(text: &str) -> Result<Vec<GCodeCommand>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.split_once(';') {
            Some((code, _comment)) => code,
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line, line_no)?);
    }
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<GCodeCommand> {
    let mut tokens = line.split_whitespace();
    let head = tokens.next().expect("line is non-empty");
    let opcode = match head.to_ascii_uppercase().as_str() {
        "G0" => Opcode::G0,
        "G1" => Opcode::G1,
        "G28" => Opcode::G28,
        "G90" => Opcode::G90,
        "G91" => Opcode::G91,
        "M400" => Opcode::M400,
        other => {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unknown opcode {other:?}"),
            })
        }
    };
    let mut params = AxisParams::default();
    for tok in tokens {
        let mut chars = tok.chars();
        let letter = chars.next().expect("token is non-empty").to_ascii_uppercase();
        let value_text = chars.as_str();
        let value: f64 = value_text.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("expected a number after {letter}, got {value_text:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("{letter} value must be finite"),
            });
        }
        let slot = match letter {
            'X' => &mut params.x,
            'Y' => &mut params.y,
            'Z' => &mut params.z,
            'F' => &mut params.f,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown axis letter {other:?}"),
                })
            }
        };
        if slot.is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate axis letter {letter}"),
            });
        }
        *slot = Some(value);
    }
    let cmd = GCodeCommand { opcode, params };
    cmd.validate().map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(cmd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcode::{plan_to_gcode, render_gcode, ProbeRunConfig};
    use crate::probe_plan::generate_grid;

    #[test]
    fn parses_motion_with_params() {
        let cmds = parse_gcode("G1 X5.0 Y5.0 F3000").unwrap();
        assert_eq!(cmds, vec![GCodeCommand::g1().x(5.0).y(5.0).f(3000.0)]);
    }

    #[test]
    fn strips_comments_and_blank_lines() {
        let cmds = parse_gcode("\nG28 ; home\n; nothing here\n\ng90\n").unwrap();
        assert_eq!(
            cmds,
            vec![GCodeCommand::bare(Opcode::G28), GCodeCommand::bare(Opcode::G90)]
        );
    }

    #[test]
    fn is_case_insensitive() {
        let cmds = parse_gcode("g1 x1.5 z-0.25 f300").unwrap();
        assert_eq!(cmds, vec![GCodeCommand::g1().x(1.5).z(-0.25).f(300.0)]);
    }

    #[test]
    fn rejects_unknown_opcodes_with_line_number() {
        let err = parse_gcode("G28\nG2 X1 Y1\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("G2"), "{message}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn rejects_duplicate_axis_letters() {
        let err = parse_gcode("G1 X1 X2").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_params_on_bare_opcodes_and_bad_feed() {
        assert!(parse_gcode("G28 X0").is_err());
        assert!(parse_gcode("M400 F100").is_err());
        assert!(parse_gcode("G1 X1 F0").is_err());
        assert!(parse_gcode("G1 Q5").is_err());
        assert!(parse_gcode("G1 X").is_err());
    }

    #[test]
    fn full_plan_round_trips_exactly() {
        let plan = generate_grid((16.0, 18.0), 0.5, 1.0, 30).unwrap();
        let cmds = plan_to_gcode(&plan, &ProbeRunConfig::default()).unwrap();
        let text = render_gcode(&cmds).unwrap();
        let back = parse_gcode(&text).unwrap();
        assert_eq!(back, cmds);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_command() -> impl Strategy<Value = GCodeCommand> {
            let finite = any::<f64>().prop_filter("finite", |v| v.is_finite());
            let feed = any::<f64>()
                .prop_filter("positive finite", |v| v.is_finite() && *v > 0.0);
            prop_oneof![
                Just(GCodeCommand::bare(Opcode::G28)),
                Just(GCodeCommand::bare(Opcode::G90)),
                Just(GCodeCommand::bare(Opcode::G91)),
                Just(GCodeCommand::bare(Opcode::M400)),
                (
                    prop_oneof![Just(Opcode::G0), Just(Opcode::G1)],
                    proptest::option::of(finite.clone()),
                    proptest::option::of(finite.clone()),
                    proptest::option::of(finite),
                    proptest::option::of(feed),
                )
                    .prop_map(|(opcode, x, y, z, f)| GCodeCommand {
                        opcode,
                        params: AxisParams { x, y, z, f },
                    }),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn parse_render_identity(cmds in proptest::collection::vec(arb_command(), 0..40)) {
                let text = render_gcode(&cmds).unwrap();
                let back = parse_gcode(&text).unwrap();
                prop_assert_eq!(back, cmds);
            }
        }
    }
}
