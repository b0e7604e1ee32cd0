//! Network case model: bus/branch/generator tables and the admittance matrix.
//!
//! Two input formats are accepted: a subset of the MATPOWER `.m` case format
//! (`mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch`; comments, `gencost`
//! and other tables are ignored) and a canonical JSON mirror of the domain
//! types. All electrical quantities are held in the units of the case file
//! (MW, MVAr, per-unit impedances); conversion to per-unit injections happens
//! at the solver boundary.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bus number as it appears in the case file. Not necessarily consecutive.
pub type BusId = i64;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    #[serde(rename = "PV")]
    Pv,
    #[serde(rename = "PQ")]
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Real power demand, MW.
    #[serde(rename = "Pd")]
    pub pd: f64,
    /// Reactive power demand, MVAr.
    #[serde(rename = "Qd")]
    pub qd: f64,
    /// Shunt conductance, MW consumed at V = 1.0 pu.
    #[serde(rename = "Gs", default)]
    pub gs: f64,
    /// Shunt susceptance, MVAr injected at V = 1.0 pu.
    #[serde(rename = "Bs", default)]
    pub bs: f64,
    /// Initial voltage magnitude, per-unit.
    #[serde(rename = "Vm")]
    pub vm: f64,
    /// Initial voltage angle, degrees.
    #[serde(rename = "Va")]
    pub va: f64,
    /// Nominal voltage, kV.
    #[serde(rename = "baseKV")]
    pub base_kv: f64,
    #[serde(rename = "Vmin")]
    pub vmin: f64,
    #[serde(rename = "Vmax")]
    pub vmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    /// Series resistance, per-unit.
    pub r: f64,
    /// Series reactance, per-unit.
    pub x: f64,
    /// Total line charging susceptance, per-unit.
    #[serde(default)]
    pub b: f64,
    /// Off-nominal turns ratio at the `from` end; 1 when absent.
    #[serde(default = "one")]
    pub tap: f64,
    /// In-service flag.
    #[serde(default = "yes")]
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    /// Real power setpoint, MW.
    #[serde(rename = "Pg")]
    pub pg: f64,
    /// Reactive power setpoint, MVAr.
    #[serde(rename = "Qg")]
    pub qg: f64,
    #[serde(rename = "Pmax")]
    pub pmax: f64,
    #[serde(rename = "Pmin")]
    pub pmin: f64,
    #[serde(rename = "Qmax")]
    pub qmax: f64,
    #[serde(rename = "Qmin")]
    pub qmin: f64,
    /// Voltage setpoint, per-unit.
    #[serde(rename = "Vset")]
    pub vset: f64,
    #[serde(default = "yes")]
    pub status: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

/// Immutable parsed network plus the derived bus admittance matrix.
///
/// Construction validates the tables (exactly one slack bus, unique bus ids,
/// branch/generator endpoints exist, positive taps, nonzero impedances) and
/// assembles `ybus` deterministically from the branch list, so two builds of
/// the same tables are bit-identical.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    gens: Vec<Generator>,
    ybus: DMatrix<Complex64>,
    index: HashMap<BusId, usize>,
    slack: usize,
}

impl PartialEq for NetworkCase {
    fn eq(&self, other: &Self) -> bool {
        // ybus and index are derived from the tables
        self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.branches == other.branches
            && self.gens == other.gens
    }
}

impl NetworkCase {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        gens: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        if !(base_mva > 0.0) {
            return Err(CaseError::Semantic(format!(
                "baseMVA must be positive, got {base_mva}"
            )));
        }
        if buses.is_empty() {
            return Err(CaseError::Semantic("case has no buses".into()));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(CaseError::Semantic(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.base_kv > 0.0) {
                return Err(CaseError::Semantic(format!(
                    "bus {} has non-positive baseKV {}",
                    bus.id, bus.base_kv
                )));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [s] => *s,
            [] => return Err(CaseError::Semantic("case has no slack bus".into())),
            _ => {
                return Err(CaseError::Semantic(format!(
                    "case has {} slack buses, expected exactly one",
                    slacks.len()
                )))
            }
        };
        for br in &branches {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(CaseError::Semantic(format!(
                        "branch {}-{} references unknown bus {}",
                        br.from, br.to, end
                    )));
                }
            }
            if br.r < 0.0 {
                return Err(CaseError::Semantic(format!(
                    "branch {}-{} has negative resistance",
                    br.from, br.to
                )));
            }
            if !(br.tap > 0.0) {
                return Err(CaseError::Semantic(format!(
                    "branch {}-{} has non-positive tap {}",
                    br.from, br.to, br.tap
                )));
            }
        }
        for g in &gens {
            if !index.contains_key(&g.bus) {
                return Err(CaseError::Semantic(format!(
                    "generator references unknown bus {}",
                    g.bus
                )));
            }
            if g.status && !(g.pmin <= g.pg && g.pg <= g.pmax) {
                return Err(CaseError::Semantic(format!(
                    "generator at bus {} has Pg {} outside [{}, {}]",
                    g.bus, g.pg, g.pmin, g.pmax
                )));
            }
        }
        let ybus = assemble_ybus(base_mva, &buses, &branches, &index)?;
        Ok(NetworkCase {
            base_mva,
            buses,
            branches,
            gens,
            ybus,
            index,
            slack,
        })
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }
    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }
    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }
    pub fn gens(&self) -> &[Generator] {
        &self.gens
    }
    pub fn ybus(&self) -> &DMatrix<Complex64> {
        &self.ybus
    }
    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// Position of a bus id in the table order, if present.
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn require_index(&self, id: BusId) -> Result<usize, CaseError> {
        self.bus_index(id).ok_or(CaseError::UnknownBus(id))
    }

    /// Canonical JSON form; `parse_case` accepts the output.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct CaseJson<'a> {
            #[serde(rename = "baseMVA")]
            base_mva: f64,
            buses: &'a [Bus],
            branches: &'a [Branch],
            gens: &'a [Generator],
        }
        serde_json::to_string_pretty(&CaseJson {
            base_mva: self.base_mva,
            buses: &self.buses,
            branches: &self.branches,
            gens: &self.gens,
        })
        .expect("case serialization cannot fail")
    }
}

/// Rebuild the admittance matrix from the case tables.
///
/// `Y[f][t] = -y_ft / tap` for each in-service branch, series and charging
/// terms on the diagonal (`from` side divided by `tap²`), plus bus shunt
/// admittances `(Gs + jBs) / baseMVA`. Out-of-service branches contribute
/// nothing.
pub fn build_ybus(case: &NetworkCase) -> Result<DMatrix<Complex64>, CaseError> {
    assemble_ybus(case.base_mva, &case.buses, &case.branches, &case.index)
}

fn assemble_ybus(
    base_mva: f64,
    buses: &[Bus],
    branches: &[Branch],
    index: &HashMap<BusId, usize>,
) -> Result<DMatrix<Complex64>, CaseError> {
    let n = buses.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for br in branches {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(CaseError::Semantic(format!(
                "branch {}-{} has zero impedance",
                br.from, br.to
            )));
        }
        if !br.status {
            continue;
        }
        let f = index[&br.from];
        let t = index[&br.to];
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let charge = Complex64::new(0.0, br.b / 2.0);
        let tap = br.tap;
        y[(f, f)] += (ys + charge) / (tap * tap);
        y[(t, t)] += ys + charge;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    for (i, bus) in buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.gs, bus.bs) / base_mva;
    }
    Ok(y)
}

/// Parse a case from either supported format, sniffing JSON by the leading `{`.
pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    if text.trim_start().starts_with('{') {
        parse_case_json(text)
    } else {
        parse_case_m(text)
    }
}

fn parse_case_json(text: &str) -> Result<NetworkCase, CaseError> {
    #[derive(Deserialize)]
    struct CaseJson {
        #[serde(rename = "baseMVA")]
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        gens: Vec<Generator>,
    }
    let parsed: CaseJson = serde_json::from_str(text).map_err(|e| CaseError::Syntax {
        line: e.line(),
        msg: e.to_string(),
    })?;
    NetworkCase::new(parsed.base_mva, parsed.buses, parsed.branches, parsed.gens)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

/// Parse the MATPOWER `.m` subset: `mpc.baseMVA` plus the `bus`, `gen` and
/// `branch` matrices. Other assignments (`version`, `gencost`, bus names) are
/// skipped.
fn parse_case_m(text: &str) -> Result<NetworkCase, CaseError> {
    let mut base_mva: Option<f64> = None;
    let mut tables: HashMap<String, Vec<(usize, Vec<f64>)>> = HashMap::new();

    let mut lines = text.lines().enumerate();
    while let Some((ln0, raw)) = lines.next() {
        let line = strip_comment(raw).trim();
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some(eq) = rest.find('=') else { continue };
        let name = rest[..eq].trim().to_string();
        let rhs = rest[eq + 1..].trim();

        if let Some(body) = rhs.strip_prefix('[') {
            let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut chunk = body.to_string();
            let mut ln = ln0;
            loop {
                let (data, done) = match chunk.find(']') {
                    Some(pos) => (chunk[..pos].to_string(), true),
                    None => (chunk.clone(), false),
                };
                parse_rows(&data, ln + 1, &mut rows)?;
                if done {
                    break;
                }
                match lines.next() {
                    Some((ln2, raw2)) => {
                        chunk = strip_comment(raw2).trim().to_string();
                        ln = ln2;
                    }
                    None => {
                        return Err(CaseError::Syntax {
                            line: ln0 + 1,
                            msg: format!("unterminated matrix mpc.{name}"),
                        })
                    }
                }
            }
            tables.insert(name, rows);
        } else if name == "baseMVA" {
            let tok = rhs.trim_end_matches(';').trim();
            base_mva = Some(tok.parse::<f64>().map_err(|_| CaseError::Syntax {
                line: ln0 + 1,
                msg: format!("invalid baseMVA value `{tok}`"),
            })?);
        }
        // other scalar/string assignments are ignored
    }

    let base_mva =
        base_mva.ok_or_else(|| CaseError::Semantic("case is missing mpc.baseMVA".into()))?;
    let bus_rows = tables
        .remove("bus")
        .ok_or_else(|| CaseError::Semantic("case is missing mpc.bus".into()))?;
    let gen_rows = tables.remove("gen").unwrap_or_default();
    let branch_rows = tables
        .remove("branch")
        .ok_or_else(|| CaseError::Semantic("case is missing mpc.branch".into()))?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (line, row) in &bus_rows {
        let row = expect_cols(row, 13, *line, "bus")?;
        let kind = match row[1] as i64 {
            3 => BusKind::Slack,
            2 => BusKind::Pv,
            1 => BusKind::Pq,
            other => {
                return Err(CaseError::Semantic(format!(
                    "bus {} has unsupported type {other}",
                    row[0] as i64
                )))
            }
        };
        buses.push(Bus {
            id: row[0] as BusId,
            kind,
            pd: row[2],
            qd: row[3],
            gs: row[4],
            bs: row[5],
            vm: row[7],
            va: row[8],
            base_kv: row[9],
            vmin: row[12],
            vmax: row[11],
        });
    }

    let mut gens = Vec::with_capacity(gen_rows.len());
    for (line, row) in &gen_rows {
        let row = expect_cols(row, 10, *line, "gen")?;
        gens.push(Generator {
            bus: row[0] as BusId,
            pg: row[1],
            qg: row[2],
            qmax: row[3],
            qmin: row[4],
            vset: row[5],
            status: row[7] != 0.0,
            pmax: row[8],
            pmin: row[9],
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (line, row) in &branch_rows {
        let row = expect_cols(row, 11, *line, "branch")?;
        if row[9] != 0.0 {
            return Err(CaseError::Semantic(format!(
                "branch {}-{} has a phase shift, which is unsupported",
                row[0] as i64, row[1] as i64
            )));
        }
        branches.push(Branch {
            from: row[0] as BusId,
            to: row[1] as BusId,
            r: row[2],
            x: row[3],
            b: row[4],
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
            status: row[10] != 0.0,
        });
    }

    NetworkCase::new(base_mva, buses, branches, gens)
}

fn parse_rows(
    data: &str,
    line: usize,
    rows: &mut Vec<(usize, Vec<f64>)>,
) -> Result<(), CaseError> {
    for segment in data.split(';') {
        let segment = segment.trim();
        if segment.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in segment.split([' ', '\t', ',']).filter(|t| !t.is_empty()) {
            row.push(tok.parse::<f64>().map_err(|_| CaseError::Syntax {
                line,
                msg: format!("invalid number `{tok}`"),
            })?);
        }
        rows.push((line, row));
    }
    Ok(())
}

fn expect_cols<'a>(
    row: &'a [f64],
    min: usize,
    line: usize,
    table: &str,
) -> Result<&'a [f64], CaseError> {
    if row.len() < min {
        Err(CaseError::Syntax {
            line,
            msg: format!(
                "{table} row has {} columns, expected at least {min}",
                row.len()
            ),
        })
    } else {
        Ok(row)
    }
}
