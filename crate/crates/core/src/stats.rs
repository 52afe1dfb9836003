//! Streaming accumulation of `ΦᵀΦ`-type statistics, grouped by observation pattern.
//!
//! Inputs are processed in fixed-size chunks; only `n × CHUNK` basis blocks are ever
//! built, so memory stays `O(n² · patterns + n · CHUNK)` regardless of the sample count.
//! Statistics are stored unweighted by noise so that a noise change only requires
//! recombination, not another pass over the data.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::Hyper;
use crate::linalg::SpdFactor;
use crate::mercer::MercerBasis;

pub(crate) const CHUNK: usize = 2048;

/// Raw moments for the samples that share one set of observed outputs.
#[derive(Clone, Debug)]
pub(crate) struct PatternStats {
    pub observed: Vec<bool>,
    pub count: usize,
    /// Σ ν φ φᵀ
    pub a: DMatrix<f64>,
    /// column k: Σ ν φ y_k
    pub cy: DMatrix<f64>,
    /// Σ ν y_j y_k
    pub yy: DMatrix<f64>,
    /// per gradient hyper: Σ ν φ φ̇ᵀ
    pub adot: Vec<DMatrix<f64>>,
    /// per gradient hyper, column k: Σ ν φ̇ y_k
    pub dy: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub(crate) struct RawStats {
    pub slots: Vec<usize>,
    pub m: usize,
    pub patterns: Vec<PatternStats>,
    pub hypers: Vec<Hyper>,
    /// Σ log ν over all observations (0 with unit weights).
    pub log_nu_sum: f64,
    pub unit_weights: bool,
}

/// Borrowed view of a (possibly multi-output, possibly masked) training set in normalized units.
pub(crate) struct StreamInput<'a> {
    pub x: &'a [f64],
    /// output-major, length N·M
    pub y: &'a [f64],
    pub m: usize,
    pub observed: Option<&'a [bool]>,
    /// per-sample weights ν, length N
    pub nu: Option<&'a [f64]>,
}

impl StreamInput<'_> {
    fn pattern_of(&self, i: usize) -> Vec<bool> {
        let n = self.x.len();
        (0..self.m).map(|k| self.observed.is_none_or(|o| o[k * n + i])).collect()
    }
}

/// Noise-weighted statistics ready for the posterior solve.
#[derive(Clone, Debug)]
pub(crate) struct Suff {
    pub m: usize,
    pub rank: usize,
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub yy: f64,
    pub log_det_noise: f64,
    pub n_obs: usize,
    /// `(C, d)` for eigenfunction hyperparameters, in `RawStats::hypers` order.
    pub phi_grads: Vec<(Hyper, DMatrix<f64>, DVector<f64>)>,
    pub noise_raw: Option<NoiseRaw>,
}

/// Per-output unweighted moments, used for gradients w.r.t. per-output noise variances.
#[derive(Clone, Debug)]
pub(crate) struct NoiseRaw {
    pub sigma2: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
    pub yy: Vec<f64>,
    pub count: Vec<usize>,
}

pub(crate) fn accumulate(
    basis: &MercerBasis,
    slots: &[usize],
    input: &StreamInput<'_>,
    hypers: &[Hyper],
) -> Result<RawStats> {
    let n_samples = input.x.len();
    let m = input.m;
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    if input.y.len() != n_samples * m {
        return Err(Error::Dimension(format!("y has {} entries, expected {}", input.y.len(), n_samples * m)));
    }
    let ns = slots.len();
    let mut patterns: Vec<PatternStats> = Vec::new();
    let mut log_nu_sum = 0.0;
    let mut phi = DMatrix::zeros(ns, 0);
    let mut dphi: Vec<DMatrix<f64>> = Vec::new();
    let mut start = 0;
    while start < n_samples {
        let end = (start + CHUNK).min(n_samples);
        let xs = &input.x[start..end];
        let len = end - start;
        if phi.ncols() != len {
            phi = DMatrix::zeros(ns, len);
            dphi = hypers.iter().map(|_| DMatrix::zeros(ns, len)).collect();
        }
        basis.fill_columns(xs, 0, slots, &mut phi);
        for (h, d) in hypers.iter().zip(dphi.iter_mut()) {
            basis.fill_grad_columns(xs, *h, slots, d)?;
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { x: xs[0] });
        }

        // Group the chunk's samples by pattern.
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for i in start..end {
            let pat = input.pattern_of(i);
            if !pat.iter().any(|&o| o) {
                continue;
            }
            let pid = match patterns.iter().position(|p| p.observed == pat) {
                Some(p) => p,
                None => {
                    patterns.push(PatternStats {
                        observed: pat,
                        count: 0,
                        a: DMatrix::zeros(ns, ns),
                        cy: DMatrix::zeros(ns, m),
                        yy: DMatrix::zeros(m, m),
                        adot: hypers.iter().map(|_| DMatrix::zeros(ns, ns)).collect(),
                        dy: hypers.iter().map(|_| DMatrix::zeros(ns, m)).collect(),
                    });
                    patterns.len() - 1
                }
            };
            match groups.iter_mut().find(|g| g.0 == pid) {
                Some(g) => g.1.push(i - start),
                None => groups.push((pid, vec![i - start])),
            }
        }

        for (pid, members) in groups {
            let p = &mut patterns[pid];
            let cols = members.len();
            let full = cols == len;
            let obs: Vec<usize> = (0..m).filter(|&k| p.observed[k]).collect();
            let nu: Vec<f64> = members
                .iter()
                .map(|&j| input.nu.map_or(1.0, |w| w[start + j]))
                .collect();
            if input.nu.is_some() {
                log_nu_sum += nu.iter().map(|v| v.ln()).sum::<f64>() * obs.len() as f64;
            }
            let sub = if full { phi.clone() } else { phi.select_columns(&members) };
            let mut weighted = sub.clone();
            for (mut col, &w) in weighted.column_iter_mut().zip(nu.iter()) {
                col *= w;
            }
            p.a.gemm(1.0, &weighted, &sub.transpose(), 1.0);
            let ycols: Vec<DVector<f64>> = (0..m)
                .map(|k| {
                    DVector::from_iterator(cols, members.iter().map(|&j| {
                        if p.observed[k] {
                            input.y[k * n_samples + start + j]
                        } else {
                            0.0
                        }
                    }))
                })
                .collect();
            for &k in &obs {
                let mut col = p.cy.column_mut(k);
                col.gemv(1.0, &weighted, &ycols[k], 1.0);
                for &l in &obs {
                    let s: f64 = (0..cols).map(|t| nu[t] * ycols[k][t] * ycols[l][t]).sum();
                    p.yy[(k, l)] += s;
                }
            }
            for (hi, d) in dphi.iter().enumerate() {
                let dsub = if full { d.clone() } else { d.select_columns(&members) };
                p.adot[hi].gemm(1.0, &weighted, &dsub.transpose(), 1.0);
                let mut dweighted = dsub;
                for (mut col, &w) in dweighted.column_iter_mut().zip(nu.iter()) {
                    col *= w;
                }
                for &k in &obs {
                    let mut col = p.dy[hi].column_mut(k);
                    col.gemv(1.0, &dweighted, &ycols[k], 1.0);
                }
            }
            p.count += cols;
        }
        start = end;
    }
    if patterns.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(RawStats {
        slots: slots.to_vec(),
        m,
        patterns,
        hypers: hypers.to_vec(),
        log_nu_sum,
        unit_weights: input.nu.is_none(),
    })
}

impl RawStats {
    /// Positions (within `self.slots`) of the basis's retained slots.
    pub fn selection(&self, basis: &MercerBasis) -> Result<Vec<usize>> {
        basis
            .slots()
            .iter()
            .map(|s| {
                self.slots
                    .iter()
                    .position(|t| t == s)
                    .ok_or_else(|| Error::Dimension(format!("slot {s} missing from cached statistics")))
            })
            .collect()
    }

    /// Combines the raw moments with the per-sample noise covariance `s` (M×M).
    pub fn suff(&self, s: &DMatrix<f64>, sel: &[usize], with_noise_raw: bool) -> Result<Suff> {
        let m = self.m;
        let r = sel.len();
        let mut h = DMatrix::zeros(r * m, r * m);
        let mut c = DVector::zeros(r * m);
        let mut yy = 0.0;
        let mut log_det = -self.log_nu_sum;
        let mut n_obs = 0;
        let mut phi_grads: Vec<(Hyper, DMatrix<f64>, DVector<f64>)> = self
            .hypers
            .iter()
            .map(|&hy| (hy, DMatrix::zeros(r * m, r * m), DVector::zeros(r * m)))
            .collect();
        for p in &self.patterns {
            let obs: Vec<usize> = (0..m).filter(|&k| p.observed[k]).collect();
            let s_oo = s.select_rows(&obs).select_columns(&obs);
            let f = SpdFactor::new(&s_oo)?;
            let w_oo = f.inverse();
            log_det += p.count as f64 * f.log_det();
            n_obs += p.count * obs.len();
            let a = p.a.select_rows(sel).select_columns(sel);
            let cy = p.cy.select_rows(sel);
            let adots: Vec<DMatrix<f64>> = p.adot.iter().map(|d| d.select_rows(sel).select_columns(sel)).collect();
            let dys: Vec<DMatrix<f64>> = p.dy.iter().map(|d| d.select_rows(sel)).collect();
            for (oj, &j) in obs.iter().enumerate() {
                for (ok, &k) in obs.iter().enumerate() {
                    let w = w_oo[(oj, ok)];
                    let mut blk = h.view_mut((j * r, k * r), (r, r));
                    blk += &a * w;
                    c.rows_mut(j * r, r).axpy(w, &cy.column(k), 1.0);
                    yy += w * p.yy[(j, k)];
                    for (g, (ad, dy)) in phi_grads.iter_mut().zip(adots.iter().zip(dys.iter())) {
                        let mut blk = g.1.view_mut((j * r, k * r), (r, r));
                        blk += ad * w;
                        g.2.rows_mut(j * r, r).axpy(w, &dy.column(k), 1.0);
                    }
                }
            }
        }
        let diagonal = (0..m).all(|i| (0..m).all(|j| i == j || s[(i, j)] == 0.0));
        let noise_raw = if with_noise_raw && self.unit_weights && diagonal {
            let mut raw = NoiseRaw {
                sigma2: (0..m).map(|k| s[(k, k)]).collect(),
                a: vec![DMatrix::zeros(r, r); m],
                c: vec![DVector::zeros(r); m],
                yy: vec![0.0; m],
                count: vec![0; m],
            };
            for p in &self.patterns {
                for k in (0..m).filter(|&k| p.observed[k]) {
                    raw.a[k] += p.a.select_rows(sel).select_columns(sel);
                    raw.c[k] += p.cy.select_rows(sel).column(k);
                    raw.yy[k] += p.yy[(k, k)];
                    raw.count[k] += p.count;
                }
            }
            Some(raw)
        } else {
            None
        };
        Ok(Suff { m, rank: r, h, c, yy, log_det_noise: log_det, n_obs, phi_grads, noise_raw })
    }
}
