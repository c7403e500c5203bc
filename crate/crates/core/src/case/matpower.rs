//! Reader for MATPOWER-style `.m` case text.

use std::collections::HashSet;

use super::{Branch, Bus, NetworkCase};
use crate::{Error, Result};

const BUS_COLS: usize = 9;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

#[derive(Default)]
struct Sections {
    base_mva: Option<f64>,
    bus: Option<Vec<(usize, Vec<f64>)>>,
    gen: Option<Vec<(usize, Vec<f64>)>>,
    branch: Option<Vec<(usize, Vec<f64>)>>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(line, format!("invalid number `{tok}`")))
        })
        .collect()
}

fn scan(text: &str) -> Result<Sections> {
    let mut sections = Sections::default();
    let mut open: Option<(String, Vec<(usize, Vec<f64>)>, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }

        if let Some((name, mut rows, start)) = open.take() {
            let (body, closed) = match line.find(']') {
                Some(p) => (&line[..p], true),
                None => (line, false),
            };
            for seg in body.split(';') {
                let row = parse_row(seg, line_no)?;
                if !row.is_empty() {
                    rows.push((line_no, row));
                }
            }
            if closed {
                store(&mut sections, &name, rows, start)?;
            } else {
                open = Some((name, rows, start));
            }
            continue;
        }

        if let Some(rest) = line.strip_prefix("mpc.") {
            let Some((lhs, rhs)) = rest.split_once('=') else {
                return Err(parse_err(line_no, "expected assignment"));
            };
            let name = lhs.trim().to_string();
            let rhs = rhs.trim();
            if let Some(body) = rhs.strip_prefix('[') {
                let (body, closed) = match body.find(']') {
                    Some(p) => (&body[..p], true),
                    None => (body, false),
                };
                let mut rows = Vec::new();
                for seg in body.split(';') {
                    let row = parse_row(seg, line_no)?;
                    if !row.is_empty() {
                        rows.push((line_no, row));
                    }
                }
                if closed {
                    store(&mut sections, &name, rows, line_no)?;
                } else {
                    open = Some((name, rows, line_no));
                }
            } else if name == "baseMVA" {
                let value = rhs.trim_end_matches(';').trim();
                sections.base_mva = Some(
                    value
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("invalid baseMVA `{value}`")))?,
                );
            }
        }
    }
    if let Some((name, _, start)) = open {
        return Err(parse_err(start, format!("section mpc.{name} is never closed")));
    }
    Ok(sections)
}

fn store(
    sections: &mut Sections,
    name: &str,
    rows: Vec<(usize, Vec<f64>)>,
    start: usize,
) -> Result<()> {
    let (slot, min_cols) = match name {
        "bus" => (&mut sections.bus, BUS_COLS),
        "gen" => (&mut sections.gen, GEN_COLS),
        "branch" => (&mut sections.branch, BRANCH_COLS),
        _ => return Ok(()),
    };
    if let Some((line, row)) = rows.iter().find(|(_, r)| r.len() < min_cols) {
        return Err(parse_err(
            *line,
            format!("mpc.{name} row has {} columns, expected at least {min_cols}", row.len()),
        ));
    }
    if slot.is_some() {
        return Err(parse_err(start, format!("duplicate section mpc.{name}")));
    }
    *slot = Some(rows);
    Ok(())
}

fn as_id(value: f64, line: usize) -> Result<usize> {
    if value < 1.0 || value.fract() != 0.0 {
        return Err(parse_err(line, format!("invalid bus number {value}")));
    }
    Ok(value as usize)
}

/// Parses MATPOWER case text into a per-unit [`NetworkCase`].
///
/// Series impedances become admittances, line charging is split evenly onto
/// the terminal buses (the `from` half scaled by `1/tap²`), and the stored
/// `Vm`/`Va` columns become the true operating point. Out-of-service branches
/// are dropped. A bus without load and without an in-service generator is a
/// zero-injection bus.
pub fn parse_matpower_case(text: &str) -> Result<NetworkCase> {
    let total_lines = text.lines().count();
    let sections = scan(text)?;
    let base_mva = sections
        .base_mva
        .ok_or_else(|| parse_err(total_lines, "missing mpc.baseMVA"))?;
    let bus_rows = sections.bus.ok_or_else(|| parse_err(total_lines, "missing mpc.bus"))?;
    let branch_rows = sections
        .branch
        .ok_or_else(|| parse_err(total_lines, "missing mpc.branch"))?;
    let gen_rows = sections.gen.unwrap_or_default();

    let mut generator_buses = HashSet::new();
    for (line, row) in &gen_rows {
        if row[7] > 0.0 {
            generator_buses.insert(as_id(row[0], *line)?);
        }
    }

    let mut reference = None;
    let mut buses = Vec::with_capacity(bus_rows.len());
    for (line, row) in &bus_rows {
        let id = as_id(row[0], *line)?;
        let kind = row[1];
        if kind == 3.0 && reference.is_none() {
            reference = Some(id);
        }
        let (pd, qd) = (row[2], row[3]);
        buses.push(Bus {
            id,
            g_sh: row[4] / base_mva,
            b_sh: row[5] / base_mva,
            is_zero_injection: kind != 3.0 && pd == 0.0 && qd == 0.0 && !generator_buses.contains(&id),
            v_true: row[7],
            theta_true: row[8].to_radians(),
        });
    }
    let reference = reference.ok_or_else(|| parse_err(total_lines, "no reference bus (type 3)"))?;

    let pos: std::collections::HashMap<usize, usize> =
        buses.iter().enumerate().map(|(p, b)| (b.id, p)).collect();
    let mut branches = Vec::with_capacity(branch_rows.len());
    for (line, row) in &branch_rows {
        let from = as_id(row[0], *line)?;
        let to = as_id(row[1], *line)?;
        if row[10] <= 0.0 {
            continue;
        }
        if row[9] != 0.0 {
            return Err(Error::Unsupported(format!(
                "phase-shifting branch {from}-{to} (shift {}°) at line {line}",
                row[9]
            )));
        }
        let (r, x, charging) = (row[2], row[3], row[4]);
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        let denom = r * r + x * x;
        if denom == 0.0 {
            return Err(parse_err(*line, format!("branch {from}-{to} has zero impedance")));
        }
        for (end, share) in [(from, 0.5 * charging / (tap * tap)), (to, 0.5 * charging)] {
            let p = *pos
                .get(&end)
                .ok_or_else(|| parse_err(*line, format!("branch references unknown bus {end}")))?;
            buses[p].b_sh += share;
        }
        branches.push(Branch { from, to, g: r / denom, b: -x / denom, tap });
    }

    NetworkCase::new(base_mva, reference, buses, branches)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.0 0 0 1 1.1 0.9;
  2 1 50 10 0 0 1 0.98 -2.0 0 1 1.1 0.9;
];
mpc.gen = [
  1 50 10 100 -100 1.0 100 1 200 0;
];
mpc.branch = [
  1 2 0 0.1 0.02 0 0 0 0 0 1 -360 360;
];
";

    #[test]
    fn pure_reactance_gives_negative_susceptance() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(case.n_buses(), 2);
        let br = &case.branches[0];
        assert_eq!(br.g, 0.0);
        assert!((br.b + 10.0).abs() < 1e-12);
        assert_eq!(br.tap, 1.0);
        assert!((case.buses[0].b_sh - 0.01).abs() < 1e-15);
        assert!((case.buses[1].b_sh - 0.01).abs() < 1e-15);
        assert!((case.buses[1].theta_true + 2f64.to_radians()).abs() < 1e-15);
        assert_eq!(case.reference_bus, 1);
    }

    #[test]
    fn phase_shifter_is_rejected() {
        let text = TWO_BUS.replace("1 2 0 0.1 0.02 0 0 0 0 0 1", "1 2 0 0.1 0.02 0 0 0 0 30 1");
        assert!(matches!(parse_matpower_case(&text), Err(Error::Unsupported(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = TWO_BUS.replace("2 1 50 10", "2 1 5x0 10");
        match parse_matpower_case(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_branch_section_is_parse_error() {
        let cut = TWO_BUS.split("mpc.branch").next().unwrap();
        assert!(matches!(parse_matpower_case(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_injection_detection() {
        let case = parse_matpower_case(include_str!("../../../../cases/case14.m")).unwrap();
        let zi: Vec<usize> = case.buses.iter().filter(|b| b.is_zero_injection).map(|b| b.id).collect();
        assert_eq!(zi, vec![7]);
    }

    #[test]
    fn ieee118_dimensions() {
        let case = parse_matpower_case(include_str!("../../../../cases/case118.m")).unwrap();
        assert_eq!(case.n_buses(), 118);
        assert_eq!(case.n_branches(), 186);
    }
}
