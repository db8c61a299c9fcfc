use crate::error::{Error, Result};
use crate::grid::FeatureGrid;

/// Dense symmetric patch affinity, row-major `n x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AffinityMatrix {
    /// Wraps a row-major matrix, checking symmetry and strict positivity.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::param("affinity", format!("{} entries for n = {n}", data.len())));
        }
        for i in 0..n {
            for j in 0..=i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if a != b {
                    return Err(Error::param("affinity", format!("asymmetric at ({i}, {j})")));
                }
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::param(
                        "affinity",
                        format!("entry ({i}, {j}) = {a} is not strictly positive"),
                    ));
                }
            }
        }
        Ok(AffinityMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Applies [`mask_affinity`] in place.
    pub fn mask_in_place(&mut self, excluded: &[usize], epsilon: f64) -> Result<()> {
        let n = self.n;
        if let Some(&bad) = excluded.iter().find(|&&i| i >= n) {
            return Err(Error::PatchOutOfRange { index: bad, n });
        }
        for &i in excluded {
            for j in 0..n {
                self.data[i * n + j] = epsilon;
                self.data[j * n + i] = epsilon;
            }
        }
        for &i in excluded {
            self.data[i * n + i] = 1.0;
        }
        Ok(())
    }
}

fn check_thresholds(tau_ncut: f64, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < tau_ncut && tau_ncut < 1.0) {
        return Err(Error::param(
            "tau_ncut",
            format!("need 0 < epsilon ({epsilon}) < tau_ncut ({tau_ncut}) < 1"),
        ));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw cosine similarity between unit feature rows.
pub(crate) fn raw_cosines(unit: &[Vec<f64>]) -> Vec<f64> {
    let n = unit.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = dot(&unit[i], &unit[j]);
            out[i * n + j] = c;
            out[j * n + i] = c;
        }
    }
    out
}

pub(crate) fn binarize(raw: &[f64], n: usize, tau_ncut: f64, epsilon: f64) -> AffinityMatrix {
    let mut data: Vec<f64> = raw
        .iter()
        .map(|&c| if c >= tau_ncut { 1.0 } else { epsilon })
        .collect();
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    AffinityMatrix { n, data }
}

/// Binarised cosine affinity: 1 where the patch cosine reaches `tau_ncut`,
/// `epsilon` elsewhere.
pub fn cosine_affinity(grid: &FeatureGrid, tau_ncut: f64, epsilon: f64) -> Result<AffinityMatrix> {
    check_thresholds(tau_ncut, epsilon)?;
    let unit = grid.normalized()?;
    Ok(binarize(&raw_cosines(&unit), unit.len(), tau_ncut, epsilon))
}

/// Cuts every excluded patch out of the graph: its row and column drop to
/// `epsilon` while its diagonal stays 1 so degrees remain positive.
pub fn mask_affinity(w: &AffinityMatrix, excluded: &[usize], epsilon: f64) -> Result<AffinityMatrix> {
    let mut out = w.clone();
    out.mask_in_place(excluded, epsilon)?;
    Ok(out)
}
