//! Case-file and sample-CSV formats, bundled feeder cases, and result
//! emission.
//!
//! Case files are human-readable sectioned text in physical units (ohms,
//! MW/MVAr/MVA, voltage magnitudes in p.u.); [`CaseFile::to_network`]
//! converts to the per-unit model consumed by the rest of the crate and
//! [`CaseFile::from_network`] inverts the conversion. Sample sets travel as
//! CSV with one column per bus; experiment results as a long-format,
//! schema-versioned CSV.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::eval::{ExperimentRow, ViolationReport};
use crate::formulation::DispatchMode;
use crate::net::{validate_radial, Bus, Cost, Generator, Line, NetError, NetworkCase, ValidatedNetwork};
use crate::stats::{draw_errors, ErrorTreatment, ForecastErrorModel, SampleSet};

/// Bundled feeder cases, embedded so the binary runs without a data
/// directory. See `cases/MANIFEST.md` for provenance notes.
pub mod bundled {
    /// 15-bus feeder: eight-bus mains with two laterals and two spurs,
    /// distributed generation at buses 6 and 11.
    pub const FIFTEEN_BUS: &str = include_str!("../../../cases/15bus.case");
    /// 37-bus balanced single-phase feeder reduction.
    pub const IEEE37: &str = include_str!("../../../cases/ieee37.case");
    /// 123-bus balanced single-phase feeder reduction.
    pub const IEEE123: &str = include_str!("../../../cases/ieee123.case");

    /// Resolves a bundled case by name (`15bus`, `ieee37`, `ieee123`).
    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "15bus" => Some(FIFTEEN_BUS),
            "ieee37" => Some(IEEE37),
            "ieee123" => Some(IEEE123),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl ParseError {
    fn new(line: usize, reason: impl Into<String>) -> Self {
        Self {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
}

/// One `[buses]` record in physical units. Voltage bounds are magnitudes in
/// p.u. (the in-memory model stores their squares).
#[derive(Debug, Clone, PartialEq)]
pub struct RawBus {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub load_p_mw: f64,
    pub load_q_mvar: f64,
}

/// One `[lines]` record: impedances in ohms, rating in MVA.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLine {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub s_max_mva: f64,
}

/// One `[generators]` record: limits in MW/MVAr, costs in $/MW^2h, $/MWh, $/h.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGen {
    pub bus: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub q_max_mvar: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

/// Parsed case document in the file's physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseFile {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<RawBus>,
    pub lines: Vec<RawLine>,
    pub generators: Vec<RawGen>,
}

fn parse_field<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, ParseError> {
    tok.parse()
        .map_err(|_| ParseError::new(line, format!("cannot parse {what} from '{tok}'")))
}

impl CaseFile {
    /// Parses the sectioned text format. `#` starts a comment; fields are
    /// whitespace-separated; sections may appear in any order.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            None,
            Base,
            Buses,
            Lines,
            Generators,
        }
        let mut section = Section::None;
        let mut base: Option<(f64, f64)> = None;
        let mut buses: Vec<RawBus> = Vec::new();
        let mut lines: Vec<RawLine> = Vec::new();
        let mut generators: Vec<RawGen> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let ln = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = match name.trim() {
                    "base" => Section::Base,
                    "buses" => Section::Buses,
                    "lines" => Section::Lines,
                    "generators" => Section::Generators,
                    other => return Err(ParseError::new(ln, format!("unknown section [{other}]"))),
                };
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            match section {
                Section::None => {
                    return Err(ParseError::new(ln, "data before any [section] header"))
                }
                Section::Base => {
                    if toks.len() != 2 {
                        return Err(ParseError::new(ln, "base line needs: base_mva base_kv"));
                    }
                    if base.is_some() {
                        return Err(ParseError::new(ln, "duplicate [base] record"));
                    }
                    base = Some((
                        parse_field(toks[0], ln, "base_mva")?,
                        parse_field(toks[1], ln, "base_kv")?,
                    ));
                }
                Section::Buses => {
                    if toks.len() != 5 {
                        return Err(ParseError::new(
                            ln,
                            "bus line needs: id v_min v_max load_p_mw load_q_mvar",
                        ));
                    }
                    let id = parse_field(toks[0], ln, "bus id")?;
                    if buses.iter().any(|b: &RawBus| b.id == id) {
                        return Err(ParseError::new(ln, format!("duplicate bus id {id}")));
                    }
                    buses.push(RawBus {
                        id,
                        v_min: parse_field(toks[1], ln, "v_min")?,
                        v_max: parse_field(toks[2], ln, "v_max")?,
                        load_p_mw: parse_field(toks[3], ln, "load_p_mw")?,
                        load_q_mvar: parse_field(toks[4], ln, "load_q_mvar")?,
                    });
                }
                Section::Lines => {
                    if toks.len() != 6 {
                        return Err(ParseError::new(
                            ln,
                            "line record needs: id from to r_ohm x_ohm s_max_mva",
                        ));
                    }
                    let id = parse_field(toks[0], ln, "line id")?;
                    if lines.iter().any(|l: &RawLine| l.id == id) {
                        return Err(ParseError::new(ln, format!("duplicate line id {id}")));
                    }
                    lines.push(RawLine {
                        id,
                        from: parse_field(toks[1], ln, "from bus")?,
                        to: parse_field(toks[2], ln, "to bus")?,
                        r_ohm: parse_field(toks[3], ln, "r_ohm")?,
                        x_ohm: parse_field(toks[4], ln, "x_ohm")?,
                        s_max_mva: parse_field(toks[5], ln, "s_max_mva")?,
                    });
                }
                Section::Generators => {
                    if toks.len() != 7 {
                        return Err(ParseError::new(
                            ln,
                            "generator record needs: bus p_min_mw p_max_mw q_max_mvar c2 c1 c0",
                        ));
                    }
                    generators.push(RawGen {
                        bus: parse_field(toks[0], ln, "generator bus")?,
                        p_min_mw: parse_field(toks[1], ln, "p_min_mw")?,
                        p_max_mw: parse_field(toks[2], ln, "p_max_mw")?,
                        q_max_mvar: parse_field(toks[3], ln, "q_max_mvar")?,
                        c2: parse_field(toks[4], ln, "c2")?,
                        c1: parse_field(toks[5], ln, "c1")?,
                        c0: parse_field(toks[6], ln, "c0")?,
                    });
                }
            }
        }
        let (base_mva, base_kv) =
            base.ok_or_else(|| ParseError::new(text.lines().count(), "missing [base] section"))?;
        if base_mva <= 0.0 || base_kv <= 0.0 {
            return Err(ParseError::new(1, "base_mva and base_kv must be positive"));
        }
        // Cross-references, reported with a useful position.
        let has_bus = |id: usize| buses.iter().any(|b| b.id == id);
        for l in &lines {
            if !has_bus(l.from) || !has_bus(l.to) {
                return Err(ParseError::new(
                    0,
                    format!("line {} references an unknown bus", l.id),
                ));
            }
        }
        for g in &generators {
            if !has_bus(g.bus) {
                return Err(ParseError::new(
                    0,
                    format!("generator at unknown bus {}", g.bus),
                ));
            }
        }
        Ok(Self {
            base_mva,
            base_kv,
            buses,
            lines,
            generators,
        })
    }

    /// Serializes back to the sectioned text format.
    pub fn serialize(&self) -> String {
        use fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "[base]");
        let _ = writeln!(s, "# base_mva base_kv");
        let _ = writeln!(s, "{} {}", self.base_mva, self.base_kv);
        let _ = writeln!(s, "\n[buses]");
        let _ = writeln!(s, "# id v_min v_max load_p_mw load_q_mvar");
        for b in &self.buses {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                b.id, b.v_min, b.v_max, b.load_p_mw, b.load_q_mvar
            );
        }
        let _ = writeln!(s, "\n[lines]");
        let _ = writeln!(s, "# id from to r_ohm x_ohm s_max_mva");
        for l in &self.lines {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                l.id, l.from, l.to, l.r_ohm, l.x_ohm, l.s_max_mva
            );
        }
        let _ = writeln!(s, "\n[generators]");
        let _ = writeln!(s, "# bus p_min_mw p_max_mw q_max_mvar c2 c1 c0");
        for g in &self.generators {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                g.bus, g.p_min_mw, g.p_max_mw, g.q_max_mvar, g.c2, g.c1, g.c0
            );
        }
        s
    }

    /// Converts to the per-unit in-memory model: impedances divide by
    /// `kv^2/mva`, powers divide by `mva`, voltage bounds are squared, and
    /// cost coefficients are rescaled so objective values stay in dollars.
    pub fn to_network(&self) -> NetworkCase {
        let z_base = self.base_kv * self.base_kv / self.base_mva;
        let mva = self.base_mva;
        NetworkCase {
            base_mva: mva,
            buses: self
                .buses
                .iter()
                .map(|b| Bus {
                    id: b.id,
                    u_min: b.v_min * b.v_min,
                    u_max: b.v_max * b.v_max,
                    load_p: b.load_p_mw / mva,
                    load_q: b.load_q_mvar / mva,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| Line {
                    from: l.from,
                    to: l.to,
                    resistance: l.r_ohm / z_base,
                    reactance: l.x_ohm / z_base,
                    s_max: l.s_max_mva / mva,
                })
                .collect(),
            generators: self
                .generators
                .iter()
                .map(|g| Generator {
                    bus: g.bus,
                    p_min: g.p_min_mw / mva,
                    p_max: g.p_max_mw / mva,
                    q_max: g.q_max_mvar / mva,
                    cost: Cost {
                        c2: g.c2 * mva * mva,
                        c1: g.c1 * mva,
                        c0: g.c0,
                    },
                })
                .collect(),
        }
    }

    /// Inverse of [`CaseFile::to_network`]. Line ids are regenerated as the
    /// 1-based position in the line list.
    pub fn from_network(case: &NetworkCase, base_kv: f64) -> Self {
        let mva = case.base_mva;
        let z_base = base_kv * base_kv / mva;
        Self {
            base_mva: mva,
            base_kv,
            buses: case
                .buses
                .iter()
                .map(|b| RawBus {
                    id: b.id,
                    v_min: b.u_min.sqrt(),
                    v_max: b.u_max.sqrt(),
                    load_p_mw: b.load_p * mva,
                    load_q_mvar: b.load_q * mva,
                })
                .collect(),
            lines: case
                .lines
                .iter()
                .enumerate()
                .map(|(i, l)| RawLine {
                    id: i + 1,
                    from: l.from,
                    to: l.to,
                    r_ohm: l.resistance * z_base,
                    x_ohm: l.reactance * z_base,
                    s_max_mva: l.s_max * mva,
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .map(|g| RawGen {
                    bus: g.bus,
                    p_min_mw: g.p_min * mva,
                    p_max_mw: g.p_max * mva,
                    q_max_mvar: g.q_max * mva,
                    c2: g.cost.c2 / (mva * mva),
                    c1: g.cost.c1 / mva,
                    c0: g.cost.c0,
                })
                .collect(),
        }
    }
}

/// Parses case text, converts to per-unit, and validates radiality.
pub fn load_case_str(text: &str) -> Result<ValidatedNetwork, CaseError> {
    let case = CaseFile::parse(text)?.to_network();
    Ok(validate_radial(&case)?)
}

/// Reads and validates a case file from disk.
pub fn load_case(path: &Path) -> Result<ValidatedNetwork, CaseError> {
    load_case_str(&std::fs::read_to_string(path)?)
}

/// Serializes a per-unit model back to case text (physical units).
pub fn save_case(case: &NetworkCase, base_kv: f64) -> String {
    CaseFile::from_network(case, base_kv).serialize()
}

/// Draws `n` forecast-error samples with per-bus sigma equal to `k` times
/// the forecast active load, reactive errors coupled through each bus's
/// power factor (the constant-power-factor construction). Deterministic in
/// `seed`.
pub fn synth_samples(net: &ValidatedNetwork, k: f64, n: usize, seed: u64) -> SampleSet {
    assert!(k >= 0.0, "sigma fraction must be nonnegative");
    let model = ForecastErrorModel::from_load_fraction(net, k);
    draw_errors(&model, ErrorTreatment::ConstantPowerFactor, n, seed)
}

/// Writes a sample set as CSV: header `p:<bus id>,...,q:<bus id>,...` in the
/// network's internal bus order, one observation per row.
pub fn write_samples(samples: &SampleSet, net: &ValidatedNetwork) -> String {
    use fmt::Write;
    let n = net.n_buses();
    assert_eq!(samples.n_buses(), n, "sample set does not match network");
    let mut s = String::from("# samples-schema v1\n");
    let header: Vec<String> = (0..n)
        .map(|i| format!("p:{}", net.external_id(i)))
        .chain((0..n).map(|i| format!("q:{}", net.external_id(i))))
        .collect();
    let _ = writeln!(s, "{}", header.join(","));
    for t in 0..samples.n_samples() {
        let row: Vec<String> = samples
            .p_row(t)
            .iter()
            .chain(samples.q_row(t))
            .map(|v| format!("{v}"))
            .collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

/// Reads a sample-set CSV. The header maps columns to buses by external id;
/// either both `p:` and `q:` blocks are present, or only `p:` columns, in
/// which case reactive errors are derived through each bus's forecast power
/// factor (constant-power-factor treatment).
pub fn read_samples(text: &str, net: &ValidatedNetwork) -> Result<SampleSet, ParseError> {
    let n = net.n_buses();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| ParseError::new(1, "empty sample CSV"))?;

    // Column -> (is_q, internal bus index).
    let mut mapping: Vec<(bool, usize)> = Vec::new();
    let mut internal_of = std::collections::HashMap::new();
    for i in 0..n {
        internal_of.insert(net.external_id(i), i);
    }
    for col in header.split(',') {
        let col = col.trim();
        let (is_q, id_str) = if let Some(rest) = col.strip_prefix("p:") {
            (false, rest)
        } else if let Some(rest) = col.strip_prefix("q:") {
            (true, rest)
        } else {
            return Err(ParseError::new(
                hline,
                format!("column '{col}' must be p:<bus id> or q:<bus id>"),
            ));
        };
        let ext: usize = parse_field(id_str.trim(), hline, "bus id")?;
        let idx = *internal_of
            .get(&ext)
            .ok_or_else(|| ParseError::new(hline, format!("unknown bus id {ext}")))?;
        mapping.push((is_q, idx));
    }
    let p_cols = mapping.iter().filter(|(q, _)| !q).count();
    let q_cols = mapping.len() - p_cols;
    if p_cols != n {
        return Err(ParseError::new(
            hline,
            format!("need one p: column per bus ({n}), found {p_cols}"),
        ));
    }
    if q_cols != 0 && q_cols != n {
        return Err(ParseError::new(
            hline,
            format!("q: columns must cover all {n} buses or be absent, found {q_cols}"),
        ));
    }
    let mut seen_p = vec![false; n];
    let mut seen_q = vec![false; n];
    for &(is_q, idx) in &mapping {
        let seen = if is_q { &mut seen_q } else { &mut seen_p };
        if seen[idx] {
            return Err(ParseError::new(hline, "duplicate column for a bus"));
        }
        seen[idx] = true;
    }

    let tan_phi: Vec<f64> = (0..n)
        .map(|i| {
            let b = net.bus(i);
            if b.load_p != 0.0 {
                b.load_q / b.load_p
            } else {
                0.0
            }
        })
        .collect();

    let mut p = Vec::new();
    let mut q = Vec::new();
    let mut n_samples = 0;
    for (ln, row) in lines {
        let values: Vec<&str> = row.split(',').collect();
        if values.len() != mapping.len() {
            return Err(ParseError::new(
                ln,
                format!("expected {} values, found {}", mapping.len(), values.len()),
            ));
        }
        let mut p_row = vec![0.0; n];
        let mut q_row = vec![0.0; n];
        for (&(is_q, idx), tok) in mapping.iter().zip(&values) {
            let v: f64 = parse_field(tok.trim(), ln, "sample value")?;
            if is_q {
                q_row[idx] = v;
            } else {
                p_row[idx] = v;
            }
        }
        if q_cols == 0 {
            for i in 0..n {
                q_row[i] = p_row[i] * tan_phi[i];
            }
        }
        p.extend_from_slice(&p_row);
        q.extend_from_slice(&q_row);
        n_samples += 1;
    }
    SampleSet::new(n_samples, n, p, q)
        .map_err(|e| ParseError::new(0, format!("inconsistent sample block: {e}")))
}

fn mode_name(mode: DispatchMode) -> &'static str {
    match mode {
        DispatchMode::Deterministic => "det",
        DispatchMode::ChanceConstrained => "cc",
        DispatchMode::DistRobust => "drcc",
    }
}

/// Serializes experiment rows as long-format CSV:
/// `mode,eta_v,xi,delta,metric,value,ci_low,ci_high`, one metric per row.
/// Only `violation_prob` carries confidence bounds.
pub fn write_results(rows: &[ExperimentRow]) -> String {
    use fmt::Write;
    let mut s = String::from("# results-schema v1\n");
    let _ = writeln!(s, "mode,eta_v,xi,delta,metric,value,ci_low,ci_high");
    for r in rows {
        let prefix = format!("{},{},{},{}", mode_name(r.mode), r.eta_v, r.xi, r.delta);
        let _ = writeln!(
            s,
            "{prefix},violation_prob,{},{},{}",
            r.violation_prob, r.ci_low, r.ci_high
        );
        for (metric, value) in [
            ("expected_cost", r.expected_cost),
            ("relative_cost", r.relative_cost),
            ("mean_realized_cost", r.mean_realized_cost),
            ("max_variance_ratio", r.max_variance_ratio),
        ] {
            let _ = writeln!(s, "{prefix},{metric},{value},,");
        }
    }
    s
}

/// Serializes a violation report as long-format CSV
/// (`metric,index,value`); per-bus rows carry external bus ids, per-generator
/// rows the generator's position in the case file.
pub fn write_report(report: &ViolationReport, net: &ValidatedNetwork) -> String {
    use fmt::Write;
    let mut s = String::from("# violation-report-schema v1\n");
    let _ = writeln!(s, "metric,index,value");
    let _ = writeln!(s, "samples,,{}", report.samples);
    let _ = writeln!(s, "violation_prob,,{}", report.violation_prob);
    let _ = writeln!(s, "ci_low,,{}", report.ci_low);
    let _ = writeln!(s, "ci_high,,{}", report.ci_high);
    let _ = writeln!(s, "mean_realized_cost,,{}", report.mean_realized_cost);
    for i in 0..net.n_buses() {
        let ext = net.external_id(i);
        let _ = writeln!(s, "bus_upper,{ext},{}", report.bus_upper[i]);
        let _ = writeln!(s, "bus_lower,{ext},{}", report.bus_lower[i]);
        let _ = writeln!(s, "realized_u_variance,{ext},{}", report.realized_u_variance[i]);
    }
    for (k, count) in report.gen_limit.iter().enumerate() {
        let _ = writeln!(s, "gen_limit,{k},{count}");
    }
    s
}
