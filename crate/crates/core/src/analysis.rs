//! PCA, convex hulls, smoothing, exponential fits, size scans and dataset
//! summaries.

use std::collections::HashSet;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::{self, EnsembleStats, ExperimentConfig, Quantity};
use crate::error::{Error, Result};
use crate::maps;
use crate::measures::{self, PersistenceStat};
use crate::rules::{Driver, TrajectoryRecord};

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const VARIANCE_THRESHOLD: f64 = 0.85;
/// Largest dimension with an exact hull volume.
pub const MAX_HULL_DIM: usize = 3;

/// Principal axes of a data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Unit vectors, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub centered: bool,
    /// Column means; zeros when uncentered.
    pub mean: Vec<f64>,
}

/// Eigendecomposition of `XᵀX / (n - 1)`, with the column means removed
/// first when `centered`.
pub fn pca_fit(data: &[Vec<f64>], centered: bool) -> Result<PcaModel> {
    if data.len() < 2 {
        return Err(Error::Data("PCA needs at least two points".into()));
    }
    let dim = data[0].len();
    if dim == 0 || data.iter().any(|r| r.len() != dim) {
        return Err(Error::Data("PCA rows must share a positive dimension".into()));
    }
    let n = data.len();
    let mut mean = vec![0.0; dim];
    if centered {
        for row in data {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n as f64;
            }
        }
    }
    let x = DMatrix::from_fn(n, dim, |i, j| data[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let components = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    Ok(PcaModel {
        components,
        eigenvalues,
        centered,
        mean,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            let mut r = vec![0.0; self.eigenvalues.len()];
            r[0] = 1.0;
            return r;
        }
        self.eigenvalues.iter().map(|l| l / total).collect()
    }

    /// Smallest `m` whose cumulative explained variance reaches `threshold`.
    pub fn n_components_for_variance(&self, threshold: f64) -> usize {
        let mut acc = 0.0;
        for (k, r) in self.explained_variance_ratio().iter().enumerate() {
            acc += r;
            if acc >= threshold - 1e-12 {
                return k + 1;
            }
        }
        self.dim()
    }

    /// Coordinates of every row on the first `m` components.
    pub fn project(&self, data: &[Vec<f64>], m: usize) -> Result<Vec<Vec<f64>>> {
        if m == 0 || m > self.dim() {
            return Err(Error::Data(format!("cannot project onto {m} of {} components", self.dim())));
        }
        data.iter()
            .map(|row| {
                if row.len() != self.dim() {
                    return Err(Error::Data("row dimension differs from the model".into()));
                }
                Ok(self.components[..m]
                    .iter()
                    .map(|c| c.iter().zip(row).zip(&self.mean).map(|((c, x), mu)| c * (x - mu)).sum())
                    .collect())
            })
            .collect()
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise to every coordinate.
pub fn jitter<R: Rng + ?Sized>(data: &[Vec<f64>], sigma: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("jitter sigma must be a finite non-negative number, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(data.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("jitter sigma {sigma}: {e}")))?;
    Ok(data
        .iter()
        .map(|row| row.iter().map(|x| x + normal.sample(rng)).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullResult {
    pub dim: usize,
    pub volume: f64,
    pub n_points: usize,
    /// Computed on the top three components of higher-dimensional data.
    pub projected: bool,
}

/// Volume of the convex hull of points in one to three dimensions.
pub fn convex_hull_volume(points: &[Vec<f64>]) -> Result<HullResult> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Data("hull points must share a dimension".into()));
    }
    if dim == 0 || dim > MAX_HULL_DIM {
        return Err(Error::Data(format!(
            "exact hull volumes cover 1 to {MAX_HULL_DIM} dimensions, got {dim}"
        )));
    }
    let volume = if points.len() <= dim {
        0.0
    } else {
        match dim {
            1 => {
                let (lo, hi) = points
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
                hi - lo
            }
            2 => hull_area(points),
            _ => hull_volume_3d(&points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect::<Vec<_>>()),
        }
    };
    Ok(HullResult {
        dim,
        volume,
        n_points: points.len(),
        projected: false,
    })
}

fn cross2(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn hull_area(points: &[Vec<f64>]) -> f64 {
    let mut pts: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<&[f64]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &&[f64]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let area: f64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    (area / 2.0).abs()
}

fn orient(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    (b - a).cross(&(c - a)).dot(&(p - a))
}

/// Incremental hull; faces are kept with outward orientation.
fn hull_volume_3d(pts: &[Vector3<f64>]) -> f64 {
    let (lo, hi) = pts.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let scale = (hi - lo).norm();
    if scale == 0.0 {
        return 0.0;
    }
    let tol = 1e-12 * scale;
    let farthest = |f: &dyn Fn(&Vector3<f64>) -> f64| {
        (0..pts.len())
            .map(|i| (i, f(&pts[i])))
            .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b })
    };
    let i0 = 0;
    let (i1, d1) = farthest(&|p| (p - pts[i0]).norm());
    if d1 <= tol {
        return 0.0;
    }
    let axis = (pts[i1] - pts[i0]) / d1;
    let (i2, d2) = farthest(&|p| {
        let v = p - pts[i0];
        (v - axis * axis.dot(&v)).norm()
    });
    if d2 <= tol {
        return 0.0;
    }
    let normal = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0])).normalize();
    let (i3, d3) = farthest(&|p| normal.dot(&(p - pts[i0])).abs());
    if d3 <= tol {
        return 0.0;
    }
    let centre = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
    let eps = tol * scale * scale;
    let mut faces: Vec<[usize; 3]> = [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]]
        .into_iter()
        .map(|[a, b, c]| {
            if orient(&pts[a], &pts[b], &pts[c], &centre) < 0.0 {
                [a, b, c]
            } else {
                [a, c, b]
            }
        })
        .collect();
    for (p, point) in pts.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| orient(&pts[f[0]], &pts[f[1]], &pts[f[2]], point) > eps)
            .collect();
        if !visible.contains(&true) {
            continue;
        }
        let edges: HashSet<(usize, usize)> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, v)| **v)
            .flat_map(|(f, _)| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .collect();
        let mut next: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, v)| !**v)
            .map(|(f, _)| *f)
            .collect();
        for &(a, b) in &edges {
            if !edges.contains(&(b, a)) {
                next.push([a, b, p]);
            }
        }
        faces = next;
    }
    faces
        .iter()
        .map(|f| Matrix3::from_columns(&[pts[f[0]] - centre, pts[f[1]] - centre, pts[f[2]] - centre]).determinant())
        .sum::<f64>()
        / 6.0
}

/// Hull on the components needed for `threshold` of the variance, or on the
/// top three when more are needed.
pub fn pca_hull(model: &PcaModel, data: &[Vec<f64>], threshold: f64) -> Result<(usize, HullResult)> {
    let m = model.n_components_for_variance(threshold);
    let used = m.min(MAX_HULL_DIM).min(model.dim());
    let mut hull = convex_hull_volume(&model.project(data, used)?)?;
    hull.projected = m > MAX_HULL_DIM;
    Ok((m, hull))
}

/// Trailing mean over `window` entries, aligned to the window end.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > series.len() {
        return Err(Error::Config(format!(
            "moving-average window {window} outside 1..={}",
            series.len()
        )));
    }
    Ok(series.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect())
}

/// Parameters of `y = a exp(-b x) + c` with `b, c >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

impl ExpFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (-self.b * x).exp() + self.c
    }
}

fn sse(x: &[f64], y: &[f64], p: [f64; 3]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&x, &y)| (y - p[0] * (-p[1] * x).exp() - p[2]).powi(2))
        .sum()
}

fn log_linear_guess(x: &[f64], y: &[f64], c: f64, sign: f64) -> Option<[f64; 3]> {
    let w: Vec<f64> = y.iter().map(|&y| sign * (y - c)).collect();
    if w.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let ly: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let b = (-slope).max(0.0);
    let a = sign * (my + b * mx).exp();
    Some([a, b, c])
}

/// Least-squares fit of `a exp(-b x) + c` with `b >= 0` and `c >= 0`: a
/// log-domain start refined by damped Gauss–Newton.
pub fn exponential_fit(x: &[f64], y: &[f64]) -> Result<ExpFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Data("exponential fit needs at least three (x, y) pairs".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("exponential fit inputs must be finite".into()));
    }
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = ymax - ymin;
    if range <= 1e-15 * ymax.abs().max(1e-300) {
        let (a, c) = if ymin >= 0.0 { (0.0, ymin) } else { (ymin, 0.0) };
        return Ok(ExpFit { a, b: 0.0, c, rms: 0.0 });
    }

    let mut starts = Vec::new();
    let mut cs = vec![0.0];
    for f in [1e-6, 1e-4, 1e-3, 1e-2, 0.1, 0.3, 0.6, 0.9] {
        cs.push(ymin - f * range);
        cs.push(ymin * (1.0 - f));
    }
    for c in cs.into_iter().filter(|&c| c >= 0.0 && c < ymin) {
        starts.extend(log_linear_guess(x, y, c, 1.0));
    }
    for f in [1e-3, 1e-2, 0.1, 0.5, 1.0, 3.0] {
        starts.extend(log_linear_guess(x, y, ymax + f * range, -1.0));
    }
    starts.push([ymax - ymin.max(0.0), 0.1, ymin.max(0.0)]);
    let mut p = starts
        .into_iter()
        .min_by(|a, b| sse(x, y, *a).total_cmp(&sse(x, y, *b)))
        .expect("fallback start present");

    let project = |p: [f64; 3]| [p[0], p[1].max(0.0), p[2].max(0.0)];
    let mut cost = sse(x, y, p);
    let scale2: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..2000 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let e = (-p[1] * xi).exp();
            let r = yi - p[0] * e - p[2];
            let j = Vector3::new(e, -p[0] * xi * e, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut damped = jtj;
        for k in 0..3 {
            damped[(k, k)] += mu * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            mu *= 10.0;
            continue;
        };
        let trial = project([p[0] + step[0], p[1] + step[1], p[2] + step[2]]);
        let trial_cost = sse(x, y, trial);
        if trial_cost <= cost {
            let small = (0..3).all(|k| (trial[k] - p[k]).abs() <= 1e-14 * (1.0 + p[k].abs()));
            let flat = cost - trial_cost <= 1e-16 * cost;
            p = trial;
            cost = trial_cost;
            mu = (mu / 3.0).max(1e-15);
            if small || cost <= 1e-30 * scale2 || (flat && mu < 1e-6) {
                converged = true;
                break;
            }
        } else {
            mu *= 4.0;
            if mu > 1e16 {
                converged = true;
                break;
            }
        }
    }
    let rms = (cost / x.len() as f64).sqrt();
    if !converged || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDiverged { residual: rms });
    }
    Ok(ExpFit {
        a: p[0],
        b: p[1],
        c: p[2],
        rms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub n_qubits: usize,
    pub stats: EnsembleStats,
}

/// Runs `template` at every size in `sizes` and collects one quantity.
pub fn size_scan(
    template: &ExperimentConfig,
    sizes: &[usize],
    driver: &Driver,
    quantity: Quantity,
    window: (usize, usize),
) -> Result<Vec<ScanPoint>> {
    if matches!(driver, Driver::Bernoulli(_)) {
        return Err(Error::Config("size scans need an update rule".into()));
    }
    sizes
        .iter()
        .map(|&n| {
            let cfg = ExperimentConfig {
                n_qubits: n,
                ..template.clone()
            };
            let records = ensemble::simulate(&cfg, driver)?;
            log::info!("scan: N = {n} done");
            Ok(ScanPoint {
                n_qubits: n,
                stats: ensemble::ensemble_average(&records, quantity, window)?,
            })
        })
        .collect()
}

/// Late-window digest of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub members: usize,
    pub window: (usize, usize),
    pub mean_z: f64,
    pub sigma_z: f64,
    pub mean_tau_z: f64,
    pub sigma_tau_z: f64,
    /// Non-CP fraction of the per-member propagators.
    pub non_cp_fraction: f64,
    /// Non-CP fraction of the noise-reduced propagators; needs two members.
    pub non_cp_fraction_noise_reduced: Option<f64>,
    pub w_ex: f64,
    pub dw_ex: f64,
    pub d_total: f64,
    pub t_total: f64,
    pub c_total: Option<f64>,
    pub clustering: Option<f64>,
    pub disparity: Option<f64>,
    pub persistence: PersistenceStat,
    pub pca_components: usize,
    pub hull: HullResult,
}

fn optional_mean(records: &[TrajectoryRecord], q: Quantity, window: (usize, usize)) -> Result<Option<f64>> {
    match ensemble::ensemble_average(records, q, window) {
        Ok(s) => Ok(Some(s.mean)),
        Err(Error::Data(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Summary over layers `window.0..=window.1`; the hull uses the jittered
/// `z` vectors of every member and layer in the window.
pub fn summarize<R: Rng + ?Sized>(records: &[TrajectoryRecord], window: (usize, usize), rng: &mut R) -> Result<Summary> {
    ensemble::check_window(records, window)?;
    let stat = |q| ensemble::ensemble_average(records, q, window);
    let z = stat(Quantity::Z)?;
    let tau = stat(Quantity::Tau)?;
    let noise_reduced = if records.len() >= 2 {
        let series: Vec<_> = records.iter().map(|r| r.partner_series()).collect();
        let refs: Vec<_> = series.iter().collect();
        let m = maps::noise_reduced_propagators(&refs, &records[0].gate)?;
        maps::non_cp_fraction(&m, window.0.max(1), window.1)
    } else {
        None
    };
    let runs: Vec<usize> = records.iter().flat_map(|r| r.work_runs()).collect();
    let points: Vec<Vec<f64>> = records
        .iter()
        .flat_map(|r| r.layers[window.0..=window.1].iter().map(|l| l.z.clone()))
        .collect();
    let points = jitter(&points, DEFAULT_JITTER, rng)?;
    let model = pca_fit(&points, false)?;
    let (pca_components, hull) = pca_hull(&model, &points, VARIANCE_THRESHOLD)?;
    Ok(Summary {
        members: records.len(),
        window,
        mean_z: z.mean,
        sigma_z: z.member_std,
        mean_tau_z: tau.mean,
        sigma_tau_z: tau.member_std,
        non_cp_fraction: stat(Quantity::NonCp)?.mean,
        non_cp_fraction_noise_reduced: noise_reduced,
        w_ex: stat(Quantity::WEx)?.mean,
        dw_ex: stat(Quantity::DwEx)?.mean,
        d_total: stat(Quantity::DTotal)?.mean,
        t_total: stat(Quantity::TTotal)?.mean,
        c_total: optional_mean(records, Quantity::CTotal, window)?,
        clustering: optional_mean(records, Quantity::Clustering, window)?,
        disparity: optional_mean(records, Quantity::Disparity, window)?,
        persistence: measures::persistence_stat(&runs),
        pca_components,
        hull,
    })
}

impl Summary {
    /// Named scalar entries, in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("mean_z", Some(self.mean_z)),
            ("sigma_z", Some(self.sigma_z)),
            ("mean_tau_z", Some(self.mean_tau_z)),
            ("sigma_tau_z", Some(self.sigma_tau_z)),
            ("non_cp_fraction", Some(self.non_cp_fraction)),
            ("non_cp_fraction_noise_reduced", self.non_cp_fraction_noise_reduced),
            ("w_ex", Some(self.w_ex)),
            ("dw_ex", Some(self.dw_ex)),
            ("D_total", Some(self.d_total)),
            ("T_total", Some(self.t_total)),
            ("C_total", self.c_total),
            ("clustering", self.clustering),
            ("disparity", self.disparity),
            ("L_stat", Some(self.persistence.l_stat as f64)),
            ("hull_volume", Some(self.hull.volume)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub key: String,
    pub value: Option<f64>,
    pub baseline: Option<f64>,
    /// `(value - baseline) / baseline`.
    pub delta: Option<f64>,
}

pub fn delta_table(summary: &Summary, baseline: &Summary) -> Vec<DeltaRow> {
    summary
        .scalars()
        .into_iter()
        .zip(baseline.scalars())
        .map(|((key, v), (_, b))| DeltaRow {
            key: key.to_string(),
            value: v,
            baseline: b,
            delta: v.zip(b).and_then(|(v, b)| ensemble::relative_difference(v, b)),
        })
        .collect()
}
