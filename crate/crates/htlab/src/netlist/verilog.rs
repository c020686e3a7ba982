//! Minimal structural Verilog subset: one module, scalar `input`/`output`/
//! `wire` declarations, and primitive gate instances with the output pin
//! first. Anything else is rejected with the offending line number.

use super::{FlopPair, GateKind, Netlist, NetlistBuilder, NetlistError};

pub fn parse_verilog(text: &str) -> Result<Netlist, NetlistError> {
    let (netlist, flops) = parse_inner(text, false)?;
    debug_assert!(flops.is_empty());
    Ok(netlist)
}

/// Structural Verilog with `dff inst (q, d);` instances lowered to scan
/// cells, mirroring [`super::parse_bench_full_scan`].
pub fn parse_verilog_full_scan(text: &str) -> Result<(Netlist, Vec<FlopPair>), NetlistError> {
    parse_inner(text, true)
}

struct Statement {
    line: usize,
    text: String,
}

fn parse_inner(text: &str, scan: bool) -> Result<(Netlist, Vec<FlopPair>), NetlistError> {
    let statements = split_statements(&strip_comments(text));
    let mut builder = NetlistBuilder::default();
    let mut instances: Vec<(usize, String, Vec<String>)> = Vec::new();
    let mut flop_names: Vec<(String, String)> = Vec::new();
    let mut saw_module = false;
    let mut saw_end = false;

    for st in &statements {
        let s = st.text.trim();
        if s.is_empty() {
            continue;
        }
        if saw_end {
            return Err(NetlistError::Unsupported {
                line: st.line,
                msg: "text after endmodule".to_string(),
            });
        }
        if let Some(rest) = keyword(s, "module") {
            if saw_module {
                return Err(NetlistError::Unsupported {
                    line: st.line,
                    msg: "multiple modules".to_string(),
                });
            }
            saw_module = true;
            // The port list only names nets; direction comes from the
            // input/output declarations that follow.
            let _ = rest;
            continue;
        }
        if s == "endmodule" {
            saw_end = true;
            continue;
        }
        if !saw_module {
            return Err(NetlistError::Syntax {
                line: st.line,
                msg: "expected module header".to_string(),
            });
        }
        if let Some(rest) = keyword(s, "input") {
            for name in decl_names(rest, st.line)? {
                builder.input(&name)?;
            }
        } else if let Some(rest) = keyword(s, "output") {
            for name in decl_names(rest, st.line)? {
                builder.output(&name)?;
            }
        } else if let Some(rest) = keyword(s, "wire") {
            for name in decl_names(rest, st.line)? {
                builder.net(&name);
            }
        } else if keyword(s, "assign").is_some() {
            return Err(NetlistError::Unsupported {
                line: st.line,
                msg: "assign statements are not structural primitives".to_string(),
            });
        } else {
            let (kind, pins) = parse_instance(s, st.line)?;
            if kind.eq_ignore_ascii_case("dff") {
                if !scan {
                    return Err(NetlistError::SequentialElement {
                        line: st.line,
                        net: pins.first().cloned().unwrap_or_default(),
                    });
                }
                if pins.len() != 2 {
                    return Err(NetlistError::Syntax {
                        line: st.line,
                        msg: format!("dff expects (q, d), got {} pins", pins.len()),
                    });
                }
                builder.input(&pins[0])?;
                flop_names.push((pins[1].clone(), pins[0].clone()));
            } else if GateKind::from_name(&kind).is_some() && kind.to_ascii_lowercase() == kind {
                instances.push((st.line, kind, pins));
            } else {
                return Err(NetlistError::Unsupported {
                    line: st.line,
                    msg: format!("non-primitive instance `{kind}`"),
                });
            }
        }
    }
    if !saw_module || !saw_end {
        return Err(NetlistError::Syntax {
            line: statements.last().map_or(1, |s| s.line),
            msg: "missing module/endmodule".to_string(),
        });
    }

    for (line, kind_name, pins) in instances {
        let kind = GateKind::from_name(&kind_name).expect("kind screened above");
        if pins.len() < 2 {
            return Err(NetlistError::Syntax {
                line,
                msg: "instance needs an output and at least one input".to_string(),
            });
        }
        let output = builder.net(&pins[0]);
        let inputs = pins[1..].iter().map(|p| builder.net(p)).collect();
        builder.gate(kind, inputs, output)?;
    }

    let netlist = builder.finish()?;
    let flops = flop_names
        .into_iter()
        .map(|(d, q)| {
            let d = netlist
                .net_id(&d)
                .ok_or(NetlistError::UnknownNet { name: d })?;
            let q = netlist
                .net_id(&q)
                .ok_or(NetlistError::UnknownNet { name: q })?;
            Ok(FlopPair { d, q })
        })
        .collect::<Result<Vec<_>, NetlistError>>()?;
    Ok((netlist, flops))
}

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut in_line = false;
    let mut in_block = false;
    while let Some(c) = chars.next() {
        if in_line {
            if c == '\n' {
                in_line = false;
                out.push('\n');
            }
        } else if in_block {
            if c == '*' && chars.peek() == Some(&'/') {
                chars.next();
                in_block = false;
            } else if c == '\n' {
                out.push('\n');
            }
        } else if c == '/' && chars.peek() == Some(&'/') {
            chars.next();
            in_line = true;
        } else if c == '/' && chars.peek() == Some(&'*') {
            chars.next();
            in_block = true;
        } else {
            out.push(c);
        }
    }
    out
}

fn split_statements(text: &str) -> Vec<Statement> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut line = 1;
    let mut start_line = 1;
    for c in text.chars() {
        if current.trim().is_empty() {
            start_line = line;
        }
        if c == ';' {
            out.push(Statement {
                line: start_line,
                text: std::mem::take(&mut current),
            });
        } else {
            if c == '\n' {
                line += 1;
            }
            // `endmodule` has no terminating semicolon; cut it out inline.
            current.push(c);
            if current.trim_end() == "endmodule" {
                out.push(Statement {
                    line: start_line,
                    text: std::mem::take(&mut current),
                });
            }
        }
    }
    if !current.trim().is_empty() {
        out.push(Statement {
            line: start_line,
            text: current,
        });
    }
    for st in &mut out {
        st.text = st.text.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    out
}

fn keyword<'a>(s: &'a str, kw: &str) -> Option<&'a str> {
    let rest = s.strip_prefix(kw)?;
    if rest.is_empty() || rest.starts_with([' ', '(']) {
        Some(rest.trim_start())
    } else {
        None
    }
}

fn decl_names(rest: &str, line: usize) -> Result<Vec<String>, NetlistError> {
    if rest.contains('[') {
        return Err(NetlistError::Unsupported {
            line,
            msg: "vector declarations".to_string(),
        });
    }
    let names: Vec<String> = rest
        .split(',')
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty())
        .collect();
    if names.is_empty() {
        return Err(NetlistError::Syntax {
            line,
            msg: "empty declaration".to_string(),
        });
    }
    for n in &names {
        if !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(NetlistError::Syntax {
                line,
                msg: format!("invalid identifier `{n}`"),
            });
        }
    }
    Ok(names)
}

fn parse_instance(s: &str, line: usize) -> Result<(String, Vec<String>), NetlistError> {
    let open = s.find('(').ok_or_else(|| NetlistError::Syntax {
        line,
        msg: format!("unrecognized statement `{s}`"),
    })?;
    let close = s.rfind(')').ok_or_else(|| NetlistError::Syntax {
        line,
        msg: "missing closing parenthesis".to_string(),
    })?;
    if close < open || !s[close + 1..].trim().is_empty() {
        return Err(NetlistError::Syntax {
            line,
            msg: format!("malformed instance `{s}`"),
        });
    }
    let head: Vec<&str> = s[..open].split_whitespace().collect();
    let kind = match head.as_slice() {
        [kind] | [kind, _] => kind.to_string(),
        _ => {
            return Err(NetlistError::Syntax {
                line,
                msg: format!("malformed instance head `{}`", s[..open].trim()),
            })
        }
    };
    if s[open + 1..close].contains('.') {
        return Err(NetlistError::Unsupported {
            line,
            msg: "named port connections".to_string(),
        });
    }
    let pins: Vec<String> = s[open + 1..close]
        .split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect();
    Ok((kind, pins))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
// half adder
module ha (a, b, s, c);
  input a, b;
  output s, c;
  xor x0 (s, a, b);
  and a0 (c, a, b);
endmodule
";

    #[test]
    fn parses_primitive_instances() {
        let n = parse_verilog(SMALL).unwrap();
        assert_eq!(n.num_gates(), 2);
        assert_eq!(n.primary_inputs().len(), 2);
        assert_eq!(n.primary_outputs().len(), 2);
        let s = n.net_id("s").unwrap();
        assert_eq!(n.driver_of(s).unwrap().kind, GateKind::Xor);
    }

    #[test]
    fn rejects_assign_with_line() {
        let text = "module m (a, f);\n  input a;\n  output f;\n  assign f = a;\nendmodule\n";
        match parse_verilog(text).unwrap_err() {
            NetlistError::Unsupported { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_vectors() {
        let text = "module m (a, f);\n  input [3:0] a;\n  output f;\nendmodule\n";
        assert!(matches!(
            parse_verilog(text).unwrap_err(),
            NetlistError::Unsupported { line: 2, .. }
        ));
    }

    #[test]
    fn rejects_cell_instances() {
        let text = "module m (a, f);\n  input a;\n  output f;\n  INVX1 u0 (f, a);\nendmodule\n";
        assert!(matches!(
            parse_verilog(text).unwrap_err(),
            NetlistError::Unsupported { line: 4, .. }
        ));
    }

    #[test]
    fn dff_requires_scan_mode() {
        let text = "module m (a, f);\n  input a;\n  output f;\n  wire q;\n  dff d0 (q, a);\n  not n0 (f, q);\nendmodule\n";
        assert!(matches!(
            parse_verilog(text).unwrap_err(),
            NetlistError::SequentialElement { .. }
        ));
        let (n, flops) = parse_verilog_full_scan(text).unwrap();
        assert_eq!(flops.len(), 1);
        assert!(n.is_primary_input(n.net_id("q").unwrap()));
    }

    #[test]
    fn block_comments_keep_line_numbers() {
        let text = "module m (a, f);\n  input a;\n  /* multi\n     line */\n  output f;\n  assign f = a;\nendmodule\n";
        match parse_verilog(text).unwrap_err() {
            NetlistError::Unsupported { line, .. } => assert_eq!(line, 6),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
