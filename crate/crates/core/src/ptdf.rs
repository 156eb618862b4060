//! Power transfer distribution factors for the DC approximation.
//!
//! Row l, column n gives the MW flow induced on branch l by 1 MW injected at
//! bus n and withdrawn at the slack (REF) bus. The slack column is therefore
//! identically zero, and flows of balanced injection vectors do not depend on
//! the slack choice. Out-of-service branches keep their row (all zeros) so
//! branch indices line up with [`Network::branches`].
//!
//! Construction: reduced susceptance matrix (REF row/column deleted),
//! dense LU factorization, explicit inverse, then one row per live branch
//! from the branch susceptance and the two endpoint rows of the inverse.

use crate::netcase::Network;
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PtdfError {
    #[error("network has no REF bus")]
    NoRefBus,
    #[error("branch {branch} references unknown bus {bus}")]
    UnknownBus { branch: usize, bus: u32 },
    #[error("in-service branch {branch} has reactance <= 0")]
    ZeroReactance { branch: usize },
    #[error("reduced susceptance matrix is singular (disconnected live network)")]
    Singular,
    #[error("injection vector has {got} entries, network has {expected} buses")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Ptdf {
    n_branches: usize,
    n_buses: usize,
    /// Position of the slack bus in [`Network::buses`].
    slack: usize,
    /// Row-major, n_branches x n_buses.
    mat: Vec<f64>,
}

impl Ptdf {
    pub fn n_branches(&self) -> usize {
        self.n_branches
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Sensitivity of branch `l` flow to injection at bus position `n`.
    pub fn entry(&self, l: usize, n: usize) -> f64 {
        self.mat[l * self.n_buses + n]
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.mat[l * self.n_buses..(l + 1) * self.n_buses]
    }

    /// CSV export: one row per branch labeled `from-to`, one column per bus id.
    pub fn to_csv<W: std::io::Write>(&self, net: &Network, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["branch".to_string()];
        header.extend(net.buses.iter().map(|b| format!("bus_{}", b.id)));
        w.write_record(&header)?;
        for (l, br) in net.branches.iter().enumerate() {
            let mut rec = vec![format!("{}-{}", br.from, br.to)];
            rec.extend(self.row(l).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the PTDF matrix for the in-service part of `net`.
pub fn build_ptdf(net: &Network) -> Result<Ptdf, PtdfError> {
    let n = net.buses.len();
    let index = net.bus_index();
    let ref_id = net.ref_bus().ok_or(PtdfError::NoRefBus)?;
    let slack = index[&ref_id];

    // Susceptance and endpoint positions per live branch.
    let mut live = Vec::new();
    for (l, br) in net.branches.iter().enumerate() {
        if !br.status {
            continue;
        }
        if br.reactance_pu <= 0.0 {
            return Err(PtdfError::ZeroReactance { branch: l });
        }
        let f = *index.get(&br.from).ok_or(PtdfError::UnknownBus { branch: l, bus: br.from })?;
        let t = *index.get(&br.to).ok_or(PtdfError::UnknownBus { branch: l, bus: br.to })?;
        live.push((l, f, t, 1.0 / br.reactance_pu));
    }

    // Position in the reduced system for every non-slack bus.
    let red: Vec<Option<usize>> = {
        let mut k = 0;
        (0..n)
            .map(|i| {
                if i == slack {
                    None
                } else {
                    k += 1;
                    Some(k - 1)
                }
            })
            .collect()
    };
    let m = n - 1;
    let mut b_red = DMatrix::<f64>::zeros(m, m);
    for &(_, f, t, b) in &live {
        if let Some(rf) = red[f] {
            b_red[(rf, rf)] += b;
        }
        if let Some(rt) = red[t] {
            b_red[(rt, rt)] += b;
        }
        if let (Some(rf), Some(rt)) = (red[f], red[t]) {
            b_red[(rf, rt)] -= b;
            b_red[(rt, rf)] -= b;
        }
    }
    let inv = b_red.lu().try_inverse().ok_or(PtdfError::Singular)?;

    let mut mat = vec![0.0; net.branches.len() * n];
    for &(l, f, t, b) in &live {
        for col in 0..n {
            if col == slack {
                continue;
            }
            let rc = red[col].unwrap();
            let theta_f = red[f].map_or(0.0, |rf| inv[(rf, rc)]);
            let theta_t = red[t].map_or(0.0, |rt| inv[(rt, rc)]);
            mat[l * n + col] = b * (theta_f - theta_t);
        }
    }
    Ok(Ptdf { n_branches: net.branches.len(), n_buses: n, slack, mat })
}

/// Branch flows (MW) for a bus injection vector (MW, aligned with
/// [`Network::buses`]). Any imbalance is absorbed at the slack bus.
pub fn flows(ptdf: &Ptdf, injections: &[f64]) -> Result<Vec<f64>, PtdfError> {
    if injections.len() != ptdf.n_buses {
        return Err(PtdfError::DimensionMismatch {
            expected: ptdf.n_buses,
            got: injections.len(),
        });
    }
    let mut out = vec![0.0; ptdf.n_branches];
    for l in 0..ptdf.n_branches {
        let row = ptdf.row(l);
        let mut acc = 0.0;
        for (a, x) in row.iter().zip(injections) {
            acc += a * x;
        }
        out[l] = acc;
    }
    Ok(out)
}
