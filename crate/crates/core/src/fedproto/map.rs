//! Local-to-global entity alignment and the two server aggregations.

use super::ProtoError;
use crate::numcore::Matrix;

/// Injective map from a client's local entity rows to global rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationMap {
    local_to_global: Vec<usize>,
    global_count: usize,
}

impl PermutationMap {
    pub fn new(local_to_global: Vec<usize>, global_count: usize) -> Result<Self, ProtoError> {
        let mut seen = vec![false; global_count];
        for &g in &local_to_global {
            if g >= global_count {
                return Err(ProtoError::Config(format!("global entity {g} outside 0..{global_count}")));
            }
            if std::mem::replace(&mut seen[g], true) {
                return Err(ProtoError::Config(format!("global entity {g} mapped twice")));
            }
        }
        Ok(Self {
            local_to_global,
            global_count,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            local_to_global: (0..n).collect(),
            global_count: n,
        }
    }

    pub fn len(&self) -> usize {
        self.local_to_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_to_global.is_empty()
    }

    pub fn global_count(&self) -> usize {
        self.global_count
    }

    pub fn local_to_global(&self) -> &[usize] {
        &self.local_to_global
    }

    /// Global rows in local order.
    pub fn gather(&self, global: &Matrix) -> Result<Matrix, ProtoError> {
        if global.rows() != self.global_count {
            return Err(ProtoError::Config(format!(
                "table has {} rows, map expects {}",
                global.rows(),
                self.global_count
            )));
        }
        Ok(global.gather_rows(&self.local_to_global))
    }

    /// Binary indicator over global entities.
    pub fn existence(&self) -> Vec<bool> {
        let mut v = vec![false; self.global_count];
        for &g in &self.local_to_global {
            v[g] = true;
        }
        v
    }
}

/// Existence-weighted mean of uploaded rows per global entity: scatter-add
/// then divide by the number of holders. Entities no upload covers keep
/// their current rows.
pub fn aggregate_structural(global: &mut Matrix, uploads: &[(&PermutationMap, &Matrix)]) -> Result<(), ProtoError> {
    let (n, d) = global.shape();
    let mut sum = Matrix::zeros(n, d);
    let mut holders = vec![0usize; n];
    for (map, rows) in uploads {
        if map.global_count != n || rows.shape() != (map.len(), d) {
            return Err(ProtoError::Config(format!(
                "upload of {:?} for a map of {} rows into a {n} x {d} table",
                rows.shape(),
                map.len()
            )));
        }
        for (local, &g) in map.local_to_global.iter().enumerate() {
            for (s, x) in sum.row_mut(g).iter_mut().zip(rows.row(local)) {
                *s += x;
            }
            holders[g] += 1;
        }
    }
    for (g, &k) in holders.iter().enumerate() {
        if k > 0 {
            let inv = k as f64;
            for (o, s) in global.row_mut(g).iter_mut().zip(sum.row(g)) {
                *o = s / inv;
            }
        }
    }
    Ok(())
}

/// Convex combination `sum_c alpha_c W_c`.
pub fn aggregate_weights(uploads: &[&Matrix], alpha: &[f64]) -> Result<Matrix, ProtoError> {
    if uploads.is_empty() || uploads.len() != alpha.len() {
        return Err(ProtoError::Config(format!(
            "{} matrices with {} weights",
            uploads.len(),
            alpha.len()
        )));
    }
    let total: f64 = alpha.iter().sum();
    if alpha.iter().any(|a| !(*a >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(ProtoError::Config(format!("aggregation weights must be >= 0 and sum to 1, got {alpha:?}")));
    }
    let mut out = Matrix::zeros(uploads[0].rows(), uploads[0].cols());
    for (m, &a) in uploads.iter().zip(alpha) {
        m.same_shape(&out)?;
        out.add_scaled(m, a);
    }
    Ok(out)
}

/// Weights proportional to `counts`.
pub fn count_weights(counts: &[usize]) -> Result<Vec<f64>, ProtoError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(ProtoError::Config("aggregation weights over zero triples".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
