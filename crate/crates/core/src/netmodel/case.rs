//! Reader for the matrix-based case format (see `docs/case-format.md`).

use std::path::Path;

use super::{Branch, Bus, BusId, BusKind, Generator, NetworkModel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Str(String),
    Equals,
    Open(char),
    Close(char),
    Semicolon,
    Comma,
    Newline,
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::CaseSyntax {
        line,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Token, usize)>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let mut chars = raw.char_indices().peekable();
        while let Some(&(pos, c)) = chars.peek() {
            match c {
                '%' => break,
                ' ' | '\t' | '\r' => {
                    chars.next();
                }
                '=' => {
                    chars.next();
                    out.push((Token::Equals, line));
                }
                '[' | '{' => {
                    chars.next();
                    out.push((Token::Open(c), line));
                }
                ']' | '}' => {
                    chars.next();
                    out.push((Token::Close(c), line));
                }
                ';' => {
                    chars.next();
                    out.push((Token::Semicolon, line));
                }
                ',' => {
                    chars.next();
                    out.push((Token::Comma, line));
                }
                '\'' | '"' => {
                    chars.next();
                    let mut s = String::new();
                    let mut closed = false;
                    for (_, ch) in chars.by_ref() {
                        if ch == c {
                            closed = true;
                            break;
                        }
                        s.push(ch);
                    }
                    if !closed {
                        return Err(syntax(line, "unterminated string"));
                    }
                    out.push((Token::Str(s), line));
                }
                c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                    let start = pos;
                    let mut end = pos;
                    let mut prev = ' ';
                    while let Some(&(p, ch)) = chars.peek() {
                        let exp_sign = (ch == '-' || ch == '+') && (prev == 'e' || prev == 'E');
                        let lead_sign = (ch == '-' || ch == '+') && p == start;
                        if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign || lead_sign {
                            end = p + ch.len_utf8();
                            prev = ch;
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    let lit = &raw[start..end];
                    // Signed infinities appear in generator limit columns.
                    let rest = &raw[end..];
                    if (lit == "-" || lit == "+") && rest.starts_with("Inf") {
                        for _ in 0..3 {
                            chars.next();
                        }
                        let v = if lit == "-" { f64::NEG_INFINITY } else { f64::INFINITY };
                        out.push((Token::Number(v), line));
                        continue;
                    }
                    let v: f64 = lit
                        .parse()
                        .map_err(|_| syntax(line, format!("invalid number '{lit}'")))?;
                    out.push((Token::Number(v), line));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = pos;
                    let mut end = pos;
                    while let Some(&(p, ch)) = chars.peek() {
                        if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' {
                            end = p + ch.len_utf8();
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    let word = &raw[start..end];
                    match word {
                        "Inf" | "inf" => out.push((Token::Number(f64::INFINITY), line)),
                        "NaN" => out.push((Token::Number(f64::NAN), line)),
                        _ => out.push((Token::Ident(word.to_string()), line)),
                    }
                }
                other => return Err(syntax(line, format!("unexpected character '{other}'"))),
            }
        }
        out.push((Token::Newline, line));
    }
    Ok(out)
}

#[derive(Debug, Default)]
struct Table {
    rows: Vec<(usize, Vec<f64>)>,
    line: usize,
}

#[derive(Debug, Default)]
struct RawCase {
    name: Option<String>,
    base_mva: Option<f64>,
    bus: Option<Table>,
    gen: Option<Table>,
    branch: Option<Table>,
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map_or(0, |(_, l)| *l)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn skip_line(&mut self) {
        while let Some(t) = self.next() {
            if t == Token::Newline {
                break;
            }
        }
    }

    fn matrix(&mut self, open_line: usize) -> Result<Table> {
        let mut table = Table {
            rows: Vec::new(),
            line: open_line,
        };
        let mut row = Vec::new();
        let mut row_line = open_line;
        loop {
            let line = self.line();
            match self.next() {
                Some(Token::Number(v)) => {
                    if row.is_empty() {
                        row_line = line;
                    }
                    row.push(v);
                }
                Some(Token::Semicolon) | Some(Token::Newline) => {
                    if !row.is_empty() {
                        table.rows.push((row_line, std::mem::take(&mut row)));
                    }
                }
                Some(Token::Comma) => {}
                Some(Token::Close(']')) => {
                    if !row.is_empty() {
                        table.rows.push((row_line, row));
                    }
                    return Ok(table);
                }
                Some(t) => return Err(syntax(line, format!("unexpected {t:?} inside matrix"))),
                None => return Err(syntax(open_line, "unterminated matrix")),
            }
        }
    }

    fn skip_cell(&mut self, open_line: usize) -> Result<()> {
        let mut depth = 1;
        while depth > 0 {
            match self.next() {
                Some(Token::Open('{')) => depth += 1,
                Some(Token::Close('}')) => depth -= 1,
                Some(_) => {}
                None => return Err(syntax(open_line, "unterminated cell array")),
            }
        }
        Ok(())
    }

    fn parse(mut self) -> Result<RawCase> {
        let mut raw = RawCase::default();
        while let Some(tok) = self.peek().cloned() {
            let line = self.line();
            match tok {
                Token::Newline | Token::Semicolon => {
                    self.pos += 1;
                }
                Token::Ident(ref w) if w == "function" => {
                    let start = self.pos;
                    self.skip_line();
                    raw.name = self.tokens[start..self.pos].iter().rev().find_map(|(t, _)| match t {
                        Token::Ident(s) => Some(s.clone()),
                        _ => None,
                    });
                }
                Token::Ident(ref w) if w.starts_with("mpc.") => {
                    let field = w["mpc.".len()..].to_string();
                    self.pos += 1;
                    if self.next() != Some(Token::Equals) {
                        return Err(syntax(line, format!("expected '=' after mpc.{field}")));
                    }
                    match self.next() {
                        Some(Token::Number(v)) => {
                            if field == "baseMVA" {
                                raw.base_mva = Some(v);
                            }
                        }
                        Some(Token::Str(_)) => {}
                        Some(Token::Open('[')) => {
                            let table = self.matrix(line)?;
                            match field.as_str() {
                                "bus" => raw.bus = Some(table),
                                "gen" => raw.gen = Some(table),
                                "branch" => raw.branch = Some(table),
                                _ => {}
                            }
                        }
                        Some(Token::Open('{')) => self.skip_cell(line)?,
                        other => return Err(syntax(line, format!("unsupported value {other:?} for mpc.{field}"))),
                    }
                }
                other => return Err(syntax(line, format!("unexpected {other:?}"))),
            }
        }
        Ok(raw)
    }
}

fn require(table: &Table, name: &str, min_cols: usize) -> Result<()> {
    for (line, row) in &table.rows {
        if row.len() < min_cols {
            return Err(syntax(
                *line,
                format!("{name} row has {} columns, need at least {min_cols}", row.len()),
            ));
        }
    }
    Ok(())
}

fn bus_id(v: f64, line: usize) -> Result<BusId> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(syntax(line, format!("bus number {v} is not a positive integer")));
    }
    Ok(BusId(v as u32))
}

/// Parses case-file text into a validated [`NetworkModel`].
///
/// Shunts are converted from MW/MVAr at 1 pu to per-unit, branch phase
/// shifts from degrees to radians, and a zero tap ratio means "no
/// transformer". PV/slack setpoints come from the first in-service
/// generator at the bus.
pub fn parse_case(text: &str) -> Result<NetworkModel> {
    let raw = Parser {
        tokens: lex(text)?,
        pos: 0,
    }
    .parse()?;
    let last_line = text.lines().count().max(1);
    let base = raw.base_mva.ok_or_else(|| syntax(last_line, "missing mpc.baseMVA"))?;
    let bus_t = raw.bus.ok_or_else(|| syntax(last_line, "missing mpc.bus"))?;
    let branch_t = raw.branch.ok_or_else(|| syntax(last_line, "missing mpc.branch"))?;
    let gen_t = raw.gen.unwrap_or_default();
    require(&bus_t, "bus", 10)?;
    require(&gen_t, "gen", 8)?;
    require(&branch_t, "branch", 11)?;
    if bus_t.rows.is_empty() {
        return Err(syntax(bus_t.line, "mpc.bus is empty"));
    }

    let mut generators = Vec::with_capacity(gen_t.rows.len());
    for (line, r) in &gen_t.rows {
        generators.push(Generator {
            bus: bus_id(r[0], *line)?,
            p_mw: r[1],
            q_mvar: r[2],
            v_setpoint: r[5],
            in_service: r[7] > 0.0,
        });
    }

    let mut buses = Vec::with_capacity(bus_t.rows.len());
    for (line, r) in &bus_t.rows {
        let id = bus_id(r[0], *line)?;
        let kind = match r[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            t => return Err(syntax(*line, format!("unsupported bus type {t}"))),
        };
        let mut v_setpoint = r[7];
        if kind != BusKind::Pq {
            match generators.iter().find(|g| g.bus == id && g.in_service) {
                Some(g) => v_setpoint = g.v_setpoint,
                None if kind == BusKind::Pv => {
                    return Err(Error::InvalidNetwork(format!(
                        "PV bus {id} (line {line}) has no in-service generator"
                    )))
                }
                None => {}
            }
        }
        buses.push(Bus {
            id,
            kind,
            load_p: r[2],
            load_q: r[3],
            shunt_g: r[4] / base,
            shunt_b: r[5] / base,
            base_kv: r[9],
            v_setpoint,
        });
    }

    let mut branches = Vec::with_capacity(branch_t.rows.len());
    for (line, r) in &branch_t.rows {
        branches.push(Branch {
            from_bus: bus_id(r[0], *line)?,
            to_bus: bus_id(r[1], *line)?,
            r: r[2],
            x: r[3],
            total_charging_b: r[4],
            tap_ratio: if r[8] == 0.0 { 1.0 } else { r[8] },
            phase_shift: r[9].to_radians(),
            in_service: r[10] > 0.0,
        });
    }

    let name = raw.name.unwrap_or_else(|| "case".to_string());
    NetworkModel::new(name, base, buses, branches, generators)
}

pub fn read_case(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_case(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = two
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
    1 3 0 0 0 0 1 1.0 0 138 1 1.1 0.9;
    2 1 50 10 0 5 1 1.0 0 138 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 100 -100 1.02 100 1 200 0;
];
mpc.branch = [
    1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [ 2 0 0 3 0.01 40 0; ];
";

    #[test]
    fn parses_minimal_two_bus_case() {
        let m = parse_case(TWO_BUS).unwrap();
        assert_eq!(m.name(), "two");
        assert_eq!(m.bus_count(), 2);
        assert_eq!(m.branches().len(), 1);
        assert_eq!(m.buses()[0].v_setpoint, 1.02);
        assert_eq!(m.buses()[1].shunt_b, 0.05);
        assert_eq!(m.branches()[0].tap_ratio, 1.0);
        assert_eq!(m.load_buses(), vec![1]);
    }

    #[test]
    fn dangling_branch_is_semantic_error() {
        let text = TWO_BUS.replace("1 2 0.01 0.1", "1 999 0.01 0.1");
        match parse_case(&text) {
            Err(Error::InvalidNetwork(m)) => assert!(m.contains("999")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = TWO_BUS.replace("2 1 50 10", "2 1 5x0 10");
        match parse_case(&text) {
            Err(Error::CaseSyntax { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        let text = TWO_BUS.replace("1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;", "1 2 0.01;");
        assert!(matches!(parse_case(&text), Err(Error::CaseSyntax { line: 13, .. })));
    }

    #[test]
    fn missing_slack_and_duplicates() {
        let text = TWO_BUS.replace("1 3 0 0", "1 1 0 0");
        assert!(matches!(parse_case(&text), Err(Error::InvalidNetwork(_))));
        let text = TWO_BUS.replace("2 1 50 10", "1 1 50 10");
        assert!(matches!(parse_case(&text), Err(Error::InvalidNetwork(m)) if m.contains("duplicate")));
    }

    #[test]
    fn exponents_infinities_and_commas() {
        let text = TWO_BUS
            .replace("0.01 0.1 0.02", "1e-2, 1.0E-1, 2e-2")
            .replace("1 0 0 100 -100", "1 0 0 Inf -Inf");
        let m = parse_case(&text).unwrap();
        assert_eq!(m.branches()[0].r, 0.01);
        assert_eq!(m.branches()[0].x, 0.1);
    }

    #[test]
    fn tap_and_shift_conversion() {
        let text = TWO_BUS.replace("0.02 0 0 0 0 0 1", "0.02 0 0 0 1.05 30 1");
        let m = parse_case(&text).unwrap();
        assert_eq!(m.branches()[0].tap_ratio, 1.05);
        assert!((m.branches()[0].phase_shift - std::f64::consts::PI / 6.0).abs() < 1e-15);
    }
}
