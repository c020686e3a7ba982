//! ISCAS bench format: `INPUT(x)`, `OUTPUT(y)`, `y = KIND(a, b, ...)`,
//! `#` comments. Full-scan parsing additionally lowers `q = DFF(d)` lines.

use super::{FlopPair, GateKind, Netlist, NetlistBuilder, NetlistError};

/// Parse a purely combinational bench file. `DFF` lines are an error here;
/// use [`parse_bench_full_scan`] for scanned sequential designs.
pub fn parse_bench(text: &str) -> Result<Netlist, NetlistError> {
    let (netlist, flops) = parse_inner(text, false)?;
    debug_assert!(flops.is_empty());
    Ok(netlist)
}

/// Parse a bench file treating every flop as a scan cell: each `q = DFF(d)`
/// makes `q` a pseudo-primary input and records the pair. Apply
/// [`Netlist::full_scan_transform`] to also expose the D pins as outputs.
pub fn parse_bench_full_scan(text: &str) -> Result<(Netlist, Vec<FlopPair>), NetlistError> {
    parse_inner(text, true)
}

fn parse_inner(text: &str, scan: bool) -> Result<(Netlist, Vec<FlopPair>), NetlistError> {
    let mut builder = NetlistBuilder::default();
    // Assignments are deferred so DFF Q pins can be declared as inputs before
    // any gate interning order matters; nets still intern in line order.
    let mut assigns: Vec<(usize, String, String, Vec<String>)> = Vec::new();
    let mut flop_names: Vec<(String, String)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = parse_decl(line, "INPUT") {
            let name = check_name(name, lineno)?;
            builder.input(name)?;
        } else if let Some(name) = parse_decl(line, "OUTPUT") {
            let name = check_name(name, lineno)?;
            builder.output(name)?;
        } else if let Some((lhs, rhs)) = line.split_once('=') {
            let lhs = check_name(lhs.trim(), lineno)?;
            let rhs = rhs.trim();
            let (kind, args) = parse_call(rhs, lineno)?;
            if kind.eq_ignore_ascii_case("DFF") {
                if !scan {
                    return Err(NetlistError::SequentialElement {
                        line: lineno,
                        net: lhs.to_string(),
                    });
                }
                if args.len() != 1 {
                    return Err(NetlistError::Syntax {
                        line: lineno,
                        msg: format!("DFF expects one input, got {}", args.len()),
                    });
                }
                builder.input(lhs)?;
                flop_names.push((args[0].clone(), lhs.to_string()));
            } else {
                assigns.push((lineno, lhs.to_string(), kind.to_string(), args));
            }
        } else {
            return Err(NetlistError::Syntax {
                line: lineno,
                msg: format!("unrecognized line `{line}`"),
            });
        }
    }

    for (lineno, lhs, kind_name, args) in assigns {
        let kind = GateKind::from_name(&kind_name).ok_or(NetlistError::UnknownGateKind {
            line: lineno,
            kind: kind_name,
        })?;
        let output = builder.net(&lhs);
        let inputs = args.iter().map(|a| builder.net(a)).collect();
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

fn parse_decl<'a>(line: &'a str, keyword: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(keyword).or_else(|| {
        line.get(..keyword.len())
            .filter(|head| head.eq_ignore_ascii_case(keyword))
            .map(|_| &line[keyword.len()..])
    })?;
    let rest = rest.trim_start();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.trim())
}

fn parse_call(rhs: &str, lineno: usize) -> Result<(&str, Vec<String>), NetlistError> {
    let open = rhs.find('(').ok_or_else(|| NetlistError::Syntax {
        line: lineno,
        msg: format!("expected `KIND(args)`, got `{rhs}`"),
    })?;
    let close = rhs.rfind(')').ok_or_else(|| NetlistError::Syntax {
        line: lineno,
        msg: "missing closing parenthesis".to_string(),
    })?;
    if close < open || !rhs[close + 1..].trim().is_empty() {
        return Err(NetlistError::Syntax {
            line: lineno,
            msg: format!("malformed gate call `{rhs}`"),
        });
    }
    let kind = rhs[..open].trim();
    let args: Vec<String> = rhs[open + 1..close]
        .split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    if args.is_empty() {
        return Err(NetlistError::Syntax {
            line: lineno,
            msg: "gate call with no inputs".to_string(),
        });
    }
    for arg in &args {
        check_name(arg, lineno)?;
    }
    Ok((kind, args))
}

fn check_name(name: &str, lineno: usize) -> Result<&str, NetlistError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '[' | ']' | '$'));
    if ok {
        Ok(name)
    } else {
        Err(NetlistError::Syntax {
            line: lineno,
            msg: format!("invalid net name `{name}`"),
        })
    }
}
