//! Edge-wise group comparisons of flow maps: Welch t-tests, FDR control, top-k ranking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    /// Both groups constant with different means: `p = 0` by convention.
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch test of `mean(a) - mean(b)`.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(
            "t-test needs at least 2 subjects per group".into(),
        ));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                degenerate: false,
            }
        } else {
            TTest {
                t: (ma - mb).signum() * f64::INFINITY,
                p: 0.0,
                df,
                degenerate: true,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}

/// Per-column Welch tests between two subjects x edges matrices.
pub fn edge_ttest(flows_a: &Matrix, flows_b: &Matrix) -> Result<Vec<TTest>> {
    if flows_a.cols() != flows_b.cols() {
        return Err(Error::dim(
            format!("{} edges", flows_a.cols()),
            format!("{} edges", flows_b.cols()),
        ));
    }
    (0..flows_a.cols())
        .into_par_iter()
        .map(|m| welch_ttest(&flows_a.col_vec(m), &flows_b.col_vec(m)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FdrMethod {
    /// Benjamini-Hochberg.
    #[default]
    Bh,
    /// Benjamini-Yekutieli, valid under arbitrary dependence.
    By,
}

fn step_up(p: &[f64], q: f64, scale: f64) -> Vec<bool> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let cutoff = (0..m)
        .rev()
        .find(|&r| p[order[r]] <= (r + 1) as f64 * q / (m as f64 * scale))
        .map_or(0, |r| r + 1);
    let mut reject = vec![false; m];
    for &i in &order[..cutoff] {
        reject[i] = true;
    }
    reject
}

pub fn fdr_bh(p: &[f64], q: f64) -> Vec<bool> {
    step_up(p, q, 1.0)
}

pub fn fdr_by(p: &[f64], q: f64) -> Vec<bool> {
    let harmonic: f64 = (1..=p.len()).map(|k| 1.0 / k as f64).sum();
    step_up(p, q, harmonic)
}

pub fn fdr(p: &[f64], q: f64, method: FdrMethod) -> Vec<bool> {
    match method {
        FdrMethod::Bh => fdr_bh(p, q),
        FdrMethod::By => fdr_by(p, q),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEdge {
    pub i: usize,
    pub j: usize,
    pub mean_phi: f64,
}

/// The `k` edges with the largest mean flow, ties broken by `(i, j)`.
/// `k` beyond the edge count is clamped; the flag reports whether that happened.
pub fn topk_edges(
    edges: &[(usize, usize)],
    mean_phi: &[f64],
    k: usize,
) -> Result<(Vec<RankedEdge>, bool)> {
    if edges.len() != mean_phi.len() {
        return Err(Error::dim(
            format!("{} values", edges.len()),
            mean_phi.len(),
        ));
    }
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| {
        mean_phi[b]
            .total_cmp(&mean_phi[a])
            .then(edges[a].cmp(&edges[b]))
    });
    let clamped = k > edges.len();
    Ok((
        order
            .into_iter()
            .take(k)
            .map(|m| RankedEdge {
                i: edges[m].0,
                j: edges[m].1,
                mean_phi: mean_phi[m],
            })
            .collect(),
        clamped,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeStat {
    pub i: usize,
    pub j: usize,
    pub t: f64,
    pub p: f64,
    pub reject: bool,
    /// Sign of `mean(patient) - mean(control)`.
    pub direction: i8,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStats {
    pub q: f64,
    pub method: FdrMethod,
    pub edges: Vec<EdgeStat>,
}

impl GroupStats {
    /// Rows are subjects, columns follow `edges`.
    pub fn compute(
        edges: &[(usize, usize)],
        patients: &Matrix,
        controls: &Matrix,
        q: f64,
        method: FdrMethod,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain(format!("FDR level {q} outside [0, 1]")));
        }
        if patients.cols() != edges.len() {
            return Err(Error::dim(
                format!("{} edges", edges.len()),
                format!("{} columns", patients.cols()),
            ));
        }
        let tests = edge_ttest(patients, controls)?;
        let p: Vec<f64> = tests.iter().map(|t| t.p).collect();
        let reject = fdr(&p, q, method);
        let edges = edges
            .iter()
            .zip(tests.iter().zip(reject))
            .map(|(&(i, j), (t, reject))| EdgeStat {
                i,
                j,
                t: t.t,
                p: t.p,
                reject,
                direction: if t.t > 0.0 {
                    1
                } else if t.t < 0.0 {
                    -1
                } else {
                    0
                },
                degenerate: t.degenerate,
            })
            .collect();
        Ok(Self { q, method, edges })
    }

    pub fn n_rejected(&self) -> usize {
        self.edges.iter().filter(|e| e.reject).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_hand_example() {
        let r = fdr_bh(&[0.01, 0.02, 0.03, 0.04, 0.2], 0.05);
        assert_eq!(r, vec![true, true, true, true, false]);
        assert_eq!(fdr_bh(&[1.0; 4], 0.05), vec![false; 4]);
        assert_eq!(fdr_bh(&[0.0; 4], 0.05), vec![true; 4]);
        assert!(fdr_bh(&[], 0.05).is_empty());
    }

    #[test]
    fn step_up_rejects_below_last_passing_rank() {
        // 0.03 > 2*0.05/4 but 0.036 <= 3*0.05/4 lets rank 2 through too
        let r = fdr_bh(&[0.001, 0.036, 0.03, 0.9], 0.05);
        assert_eq!(r, vec![true, true, true, false]);
        // BY divides by H_4 = 25/12
        assert_eq!(
            fdr_by(&[0.001, 0.036, 0.03, 0.9], 0.05),
            vec![true, false, false, false]
        );
    }

    #[test]
    fn welch_known_value() {
        // means 2 and 5, variances 1 and 1, n=3: t = -3/sqrt(2/3), df = 4
        let r = welch_ttest(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 3.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r.df - 4.0).abs() < 1e-12);
        // two-sided p for t=3.674, df=4
        assert!((r.p - 0.021311641128756).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cases() {
        let same = welch_ttest(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((same.t, same.p, same.degenerate), (0.0, 1.0, false));
        let diff = welch_ttest(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!((diff.p, diff.degenerate), (0.0, true));
        assert!(diff.t < 0.0);
        assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn topk_tie_break_and_clamp() {
        let edges = [(0, 1), (0, 2), (1, 2)];
        let (top, clamped) = topk_edges(&edges, &[1.0, 3.0, 3.0], 5).unwrap();
        assert!(clamped);
        let order: Vec<(usize, usize)> = top.iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(order, vec![(0, 2), (1, 2), (0, 1)]);
    }
}
