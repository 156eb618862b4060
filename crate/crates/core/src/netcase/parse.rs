//! Matrix-block case text parser.

use super::{Branch, Bus, BusId, BusKind, CostCurve, Generator, Network};
use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing mpc.baseMVA assignment")]
    MissingBaseMva,
    #[error("missing mpc.{0} block")]
    MissingBlock(&'static str),
    #[error("line {line}: duplicate bus id {id}")]
    DuplicateBus { line: usize, id: BusId },
    #[error("no REF bus (type 3) in mpc.bus")]
    MissingRef,
    #[error("branch row {row} references unknown bus {bus}")]
    DanglingBranch { row: usize, bus: BusId },
    #[error("generator row {row} references unknown bus {bus}")]
    DanglingGen { row: usize, bus: BusId },
    #[error("live network is disconnected: reached {reached} of {total} buses")]
    Disconnected { reached: usize, total: usize },
    #[error("gencost has {costs} rows for {gens} generator rows")]
    GencostMismatch { gens: usize, costs: usize },
    #[error("gencost row {row}: {msg}")]
    UnsupportedCost { row: usize, msg: String },
}

/// One `mpc.<name> = [ ... ];` block, rows of numbers with source line tags.
#[derive(Default)]
struct Block {
    rows: Vec<(usize, Vec<f64>)>,
}

struct RawCase {
    base_mva: Option<f64>,
    blocks: HashMap<String, Block>,
}

fn scan(text: &str) -> Result<RawCase, CaseError> {
    let mut raw = RawCase { base_mva: None, blocks: HashMap::new() };
    // Name of the block currently being filled, if inside `[ ... ];`.
    let mut open: Option<String> = None;
    for (i, line_raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match line_raw.find('%') {
            Some(p) => &line_raw[..p],
            None => line_raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = &open {
            let (content, closes) = match line.find(']') {
                Some(p) => (line[..p].trim(), true),
                None => (line, false),
            };
            if !content.is_empty() {
                let row = parse_row(content, line_no)?;
                if let Some(b) = raw.blocks.get_mut(name) {
                    b.rows.push((line_no, row));
                }
            }
            if closes {
                open = None;
            }
            continue;
        }
        if line.starts_with("function") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("mpc.") {
            let Some(eq) = rest.find('=') else {
                return Err(CaseError::Syntax {
                    line: line_no,
                    msg: "expected '=' after field name".into(),
                });
            };
            let name = rest[..eq].trim().to_string();
            let value = rest[eq + 1..].trim();
            if value.starts_with('[') {
                let tail = value[1..].trim();
                let known = matches!(name.as_str(), "bus" | "gen" | "branch" | "gencost");
                if known {
                    raw.blocks.entry(name.clone()).or_default();
                }
                // Track unknown blocks too so their rows are consumed, but
                // only keep rows for the blocks the model reads.
                let key = if known { name } else { format!("__skip_{name}") };
                if !tail.contains(']') {
                    open = Some(key);
                } else {
                    let content = tail[..tail.find(']').unwrap()].trim();
                    if !content.is_empty() && key.starts_with("__skip_") {
                        // ignored single-line unknown block
                    } else if !content.is_empty() {
                        let row = parse_row(content, line_no)?;
                        raw.blocks.get_mut(&key).unwrap().rows.push((line_no, row));
                    }
                }
            } else if name == "baseMVA" {
                let v = value.trim_end_matches(';').trim();
                let parsed: f64 = v.parse().map_err(|_| CaseError::Syntax {
                    line: line_no,
                    msg: format!("bad baseMVA value '{v}'"),
                })?;
                raw.base_mva = Some(parsed);
            }
            // Other scalar/string assignments (version, names) are ignored.
            continue;
        }
        return Err(CaseError::Syntax {
            line: line_no,
            msg: format!("unrecognized line '{line}'"),
        });
    }
    if let Some(name) = open {
        if !name.starts_with("__skip_") {
            return Err(CaseError::Syntax {
                line: text.lines().count(),
                msg: format!("mpc.{name} block never closed with ']'"),
            });
        }
    }
    Ok(raw)
}

fn parse_row(content: &str, line_no: usize) -> Result<Vec<f64>, CaseError> {
    content
        .trim_end_matches(';')
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| CaseError::Syntax {
                line: line_no,
                msg: format!("bad number '{tok}'"),
            })
        })
        .collect()
}

fn as_bus_id(v: f64, line: usize, what: &str) -> Result<BusId, CaseError> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(CaseError::Syntax {
            line,
            msg: format!("{what} must be a positive integer, got {v}"),
        });
    }
    Ok(v as BusId)
}

fn need(row: &[f64], n: usize, line: usize, what: &str) -> Result<(), CaseError> {
    if row.len() < n {
        return Err(CaseError::Syntax {
            line,
            msg: format!("{what} row needs at least {n} columns, got {}", row.len()),
        });
    }
    Ok(())
}

/// Parses case text into a [`Network`].
///
/// Structural checks run here; value-level checks are left to
/// [`super::validate`]. Out-of-service generators are dropped together with
/// their cost rows.
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    let raw = scan(text)?;
    let base_mva = raw.base_mva.ok_or(CaseError::MissingBaseMva)?;
    let get = |name: &'static str| -> Result<&Block, CaseError> {
        raw.blocks.get(name).ok_or(CaseError::MissingBlock(name))
    };

    let mut buses = Vec::new();
    let mut ids = HashSet::new();
    for (line, row) in &get("bus")?.rows {
        need(row, 3, *line, "bus")?;
        let id = as_bus_id(row[0], *line, "bus id")?;
        if !ids.insert(id) {
            return Err(CaseError::DuplicateBus { line: *line, id });
        }
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Ref,
            t => {
                return Err(CaseError::Syntax {
                    line: *line,
                    msg: format!("unsupported bus type {t} (only 1/2/3)"),
                })
            }
        };
        buses.push(Bus { id, kind, pd_mean: row[2] });
    }
    if !buses.iter().any(|b| b.kind == BusKind::Ref) {
        return Err(CaseError::MissingRef);
    }

    let mut branches = Vec::new();
    for (line, row) in &get("branch")?.rows {
        need(row, 11, *line, "branch")?;
        let from = as_bus_id(row[0], *line, "branch from-bus")?;
        let to = as_bus_id(row[1], *line, "branch to-bus")?;
        let rate = row[5];
        branches.push(Branch {
            from,
            to,
            reactance_pu: row[3],
            flow_limit: if rate > 0.0 { Some(rate) } else { None },
            status: row[10] != 0.0,
        });
    }
    for (i, br) in branches.iter().enumerate() {
        for bus in [br.from, br.to] {
            if !ids.contains(&bus) {
                return Err(CaseError::DanglingBranch { row: i + 1, bus });
            }
        }
    }

    let gen_block = get("gen")?;
    let cost_block = get("gencost")?;
    let n_gen_rows = gen_block.rows.len();
    let n_cost_rows = cost_block.rows.len();
    // MATPOWER permits 2*n rows (reactive costs appended); use the first n.
    if n_cost_rows != n_gen_rows && n_cost_rows != 2 * n_gen_rows {
        return Err(CaseError::GencostMismatch { gens: n_gen_rows, costs: n_cost_rows });
    }
    let mut generators = Vec::new();
    for (gi, (line, row)) in gen_block.rows.iter().enumerate() {
        need(row, 10, *line, "gen")?;
        let bus = as_bus_id(row[0], *line, "gen bus")?;
        let in_service = row[7] > 0.0;
        let (cline, crow) = &cost_block.rows[gi];
        need(crow, 4, *cline, "gencost")?;
        let model = crow[0] as i64;
        if model != 2 {
            return Err(CaseError::UnsupportedCost {
                row: gi + 1,
                msg: format!("cost model {model} unsupported (only polynomial model 2)"),
            });
        }
        let ncost = crow[3] as usize;
        need(crow, 4 + ncost, *cline, "gencost")?;
        let cost = match ncost {
            3 => CostCurve { c2: crow[4], c1: crow[5], c0: crow[6] },
            2 => CostCurve { c2: 0.0, c1: crow[4], c0: crow[5] },
            n => {
                return Err(CaseError::UnsupportedCost {
                    row: gi + 1,
                    msg: format!("{n} polynomial coefficients unsupported (only 2 or 3)"),
                })
            }
        };
        if !in_service {
            continue;
        }
        generators.push(Generator { bus, p_min: row[9], p_max: row[8], cost });
    }
    for (i, g) in generators.iter().enumerate() {
        if !ids.contains(&g.bus) {
            return Err(CaseError::DanglingGen { row: i + 1, bus: g.bus });
        }
    }

    check_connected(&buses, &branches)?;
    Ok(Network { base_mva, buses, branches, generators })
}

/// BFS over in-service branches must reach every bus.
fn check_connected(buses: &[Bus], branches: &[Branch]) -> Result<(), CaseError> {
    if buses.is_empty() {
        return Err(CaseError::Disconnected { reached: 0, total: 0 });
    }
    let index: HashMap<BusId, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut adj = vec![Vec::new(); buses.len()];
    for br in branches.iter().filter(|b| b.status) {
        let (f, t) = (index[&br.from], index[&br.to]);
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; buses.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    if reached != buses.len() {
        return Err(CaseError::Disconnected { reached, total: buses.len() });
    }
    Ok(())
}

/// Reads and parses a case file from disk.
pub fn parse_case_file(path: impl AsRef<Path>) -> Result<Network, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text)
}
