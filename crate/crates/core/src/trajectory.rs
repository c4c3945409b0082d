//! Pass-parameter recovery from sparse Doppler measurements.
//!
//! The measured Doppler samples are interpolated with a natural cubic spline
//! onto a 1 s grid and compared against emulated pass curves over a grid of
//! maximum elevation and inclination. For each grid cell the time alignment
//! comes from an FFT cross-correlation refined to sub-second lag; the cell
//! with the highest score wins. The search is coarse-to-fine.
//!
//! Two scores are available. [`Score::Matched`] is
//! `Γ = 2⟨s, D⟩ / (‖s‖² + ‖D‖²)`, which lies in `[−1, 1]` and equals 1 only
//! when the curves coincide, so it uses the Doppler amplitude as well as the
//! shape. [`Score::Normalized`] is the zero-mean, unit-energy correlation
//! coefficient and ignores amplitude.

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::orbit::{DopplerCurve, DopplerShape, OrbitParams, PassGeometry};
use crate::{Cplx, Error, Result};

/// Spacing of the common grid the measured and emulated curves are compared on.
pub const RESAMPLE_PERIOD_S: f64 = 1.0;

/// Natural cubic spline through a set of knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivative at each knot.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid("spline knots and values differ in length"));
        }
        if x.len() < 4 {
            return Err(Error::InsufficientData { needed: 4, got: x.len() });
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spline knots must be strictly increasing"));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        // Thomas algorithm on the interior equations, M_0 = M_{n-1} = 0
        let mut m = vec![0.0; n];
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        for i in 1..n - 1 {
            let a = h[i - 1];
            let b = 2.0 * (h[i - 1] + h[i]);
            let c = h[i];
            let d = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
            let denom = b - a * c_prime[i - 1];
            c_prime[i] = c / denom;
            d_prime[i] = (d - a * d_prime[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d_prime[i] - c_prime[i] * m[i + 1];
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    /// Spline value at `t`. Outside the knots the end polynomials are extended.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&k| k <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Cubic spline through the measured Doppler samples.
pub fn spline_doppler(measured: &DopplerCurve) -> Result<CubicSpline> {
    CubicSpline::new(&measured.times_s, &measured.doppler_hz)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    /// `2⟨s, D⟩ / (‖s‖² + ‖D‖²)`: shape and amplitude.
    #[default]
    Matched,
    /// Pearson correlation over the measured window: shape only.
    Normalized,
}

/// Search space and resolution of the trajectory grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub theta_step_deg: f64,
    pub phi_step_deg: f64,
    pub coarse_theta_step_deg: f64,
    pub coarse_phi_step_deg: f64,
    /// Maximum-elevation range, `(lo, hi]`.
    pub theta_range_deg: (f64, f64),
    /// Inclination range, `[lo, hi)`.
    pub phi_range_deg: (f64, f64),
    /// Fine cells are searched within this many coarse steps of the coarse optimum.
    pub refine_cells: f64,
    pub score: Score,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            theta_step_deg: 0.25,
            phi_step_deg: 0.5,
            coarse_theta_step_deg: 1.0,
            coarse_phi_step_deg: 2.0,
            theta_range_deg: (0.0, 90.0),
            phi_range_deg: (0.0, 180.0),
            refine_cells: 2.0,
            score: Score::Matched,
        }
    }
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        let steps = [
            self.theta_step_deg,
            self.phi_step_deg,
            self.coarse_theta_step_deg,
            self.coarse_phi_step_deg,
        ];
        if steps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("grid steps must be positive"));
        }
        let (tl, th) = self.theta_range_deg;
        let (pl, ph) = self.phi_range_deg;
        if !(0.0 <= tl && tl < th && th <= 90.0) {
            return Err(Error::invalid("theta range must satisfy 0 <= lo < hi <= 90"));
        }
        if !(0.0 <= pl && pl < ph && ph <= 180.0) {
            return Err(Error::invalid("phi range must satisfy 0 <= lo < hi <= 180"));
        }
        if !(self.refine_cells >= 0.0) {
            return Err(Error::invalid("refine_cells must be non-negative"));
        }
        Ok(())
    }

    fn theta_points(&self, step: f64, lo: f64, hi: f64) -> Vec<f64> {
        let lo = lo.max(self.theta_range_deg.0);
        let hi = hi.min(self.theta_range_deg.1);
        let first = (lo / step + 1e-9).floor() as i64 + 1;
        (first..)
            .map(|k| k as f64 * step)
            .take_while(|&t| t <= hi + 1e-9)
            .map(|t| t.min(90.0))
            .collect()
    }

    fn phi_points(&self, step: f64, lo: f64, hi: f64) -> Vec<f64> {
        let lo = lo.max(self.phi_range_deg.0);
        let hi = hi.min(self.phi_range_deg.1);
        let first = (lo / step - 1e-9).ceil() as i64;
        (first..).map(|k| k as f64 * step).take_while(|&p| p < hi - 1e-9).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridResolution {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    pub theta_max_deg: f64,
    pub phi_deg: f64,
    pub t_start_s: f64,
    /// Score at the optimum.
    pub correlation_score: f64,
    pub grid_resolution: GridResolution,
}

impl TrajectoryEstimate {
    /// The pass this estimate describes for a given orbit altitude and carrier.
    pub fn pass(&self, orbit: &OrbitParams) -> Result<PassGeometry> {
        PassGeometry::new(orbit.with_inclination(self.phi_deg), self.theta_max_deg, self.t_start_s)
    }
}

/// Measured curve on the 1 s grid, with its transform for correlation.
struct Measured {
    t0: f64,
    s: Vec<f64>,
    energy: f64,
    sum: f64,
    fft_len: usize,
    spectrum: Vec<Cplx>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// Longest pass in the search space, which bounds the template length.
fn max_template_len(orbit: &OrbitParams, grid: &SearchGrid) -> Result<usize> {
    let fastest_slowest = [grid.phi_range_deg.0, grid.phi_range_deg.1];
    let mut longest = 0.0f64;
    for phi in fastest_slowest {
        let pass = PassGeometry::new(orbit.with_inclination(phi.min(180.0)), 90.0, 0.0)?;
        longest = longest.max(pass.duration_s());
    }
    Ok((longest / RESAMPLE_PERIOD_S).floor() as usize + 1)
}

impl Measured {
    fn new(spline: &CubicSpline, template_len: usize) -> Self {
        let (a, b) = spline.domain();
        let m = ((b - a) / RESAMPLE_PERIOD_S + 1e-9).floor() as usize + 1;
        let s: Vec<f64> = (0..m).map(|i| spline.eval(a + i as f64 * RESAMPLE_PERIOD_S)).collect();
        let fft_len = (m + template_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(fft_len);
        let ifft = planner.plan_fft_inverse(fft_len);
        let mut spectrum = vec![Cplx::new(0.0, 0.0); fft_len];
        for (z, &v) in spectrum.iter_mut().zip(&s) {
            z.re = v;
        }
        fft.process(&mut spectrum);
        Self {
            t0: a,
            energy: s.iter().map(|v| v * v).sum(),
            sum: s.iter().sum(),
            s,
            fft_len,
            spectrum,
            fft,
            ifft,
        }
    }

    fn len(&self) -> usize {
        self.s.len()
    }
}

/// Emulated pass curve for one grid cell, with the pass starting at t = 0.
struct Template {
    shape: DopplerShape,
    duration: f64,
    d: Vec<f64>,
    /// Prefix sums of `d` and `d²`.
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl Template {
    fn new(orbit: &OrbitParams, theta: f64, phi: f64) -> Result<Self> {
        let pass = PassGeometry::new(orbit.with_inclination(phi), theta, 0.0)?;
        let duration = pass.duration_s();
        let shape = DopplerShape::new(&pass);
        let k = (duration / RESAMPLE_PERIOD_S).floor() as usize + 1;
        let d: Vec<f64> = (0..k)
            .map(|j| shape.eval(j as f64 * RESAMPLE_PERIOD_S - 0.5 * duration))
            .collect();
        let mut p1 = vec![0.0; k + 1];
        let mut p2 = vec![0.0; k + 1];
        for (j, v) in d.iter().enumerate() {
            p1[j + 1] = p1[j] + v;
            p2[j + 1] = p2[j] + v * v;
        }
        Ok(Self {
            shape,
            duration,
            d,
            p1,
            p2,
        })
    }

    /// Doppler at time `t` after pass start; zero below the horizon.
    fn at(&self, t: f64) -> f64 {
        if (0.0..=self.duration).contains(&t) {
            self.shape.eval(t - 0.5 * self.duration)
        } else {
            0.0
        }
    }
}

fn score_from_sums(kind: Score, n: f64, c: f64, es: f64, ss: f64, ed: f64, sd: f64) -> f64 {
    match kind {
        Score::Matched => {
            let denom = es + ed;
            if denom > 0.0 {
                2.0 * c / denom
            } else {
                f64::NEG_INFINITY
            }
        }
        Score::Normalized => {
            let vs = es - ss * ss / n;
            let vd = ed - sd * sd / n;
            if vs > 0.0 && vd > 1e-12 * ed.max(f64::MIN_POSITIVE) {
                ((c - ss * sd / n) / (vs * vd).sqrt()).clamp(-1.0, 1.0)
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    theta: f64,
    phi: f64,
    score: f64,
    t_start: f64,
}

/// Orders cells best first: higher score, then smaller θ, then smaller φ.
fn better(a: &Cell, b: &Cell) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.theta.total_cmp(&b.theta))
        .then(a.phi.total_cmp(&b.phi))
}

fn best_cell(cells: impl ParallelIterator<Item = Cell>) -> Option<Cell> {
    cells.min_by(better)
}

/// Best alignment of one template against the measurement.
fn evaluate_cell(meas: &Measured, tmpl: &Template, kind: Score, exact: bool) -> (f64, f64) {
    let m = meas.len() as i64;
    let k = tmpl.d.len() as i64;
    let f = meas.fft_len;
    let mut spec = vec![Cplx::new(0.0, 0.0); f];
    for (z, &v) in spec.iter_mut().zip(&tmpl.d) {
        z.re = v;
    }
    meas.fft.process(&mut spec);
    for (z, s) in spec.iter_mut().zip(&meas.spectrum) {
        *z = s * z.conj();
    }
    meas.ifft.process(&mut spec);
    let scale = 1.0 / f as f64;

    // Lag L means the pass starts L seconds after the first measurement, so
    // s[i] is compared with d[i − L]. At least half the measurement must
    // overlap the template.
    let min_overlap = (m + 1) / 2;
    let score_at = |l: i64| -> f64 {
        let lo = l.max(0);
        let hi = m.min(k + l);
        if hi - lo < min_overlap {
            return f64::NEG_INFINITY;
        }
        let (j0, j1) = ((lo - l) as usize, (hi - l) as usize);
        let c = spec[l.rem_euclid(f as i64) as usize].re * scale;
        let ed = tmpl.p2[j1] - tmpl.p2[j0];
        let sd = tmpl.p1[j1] - tmpl.p1[j0];
        score_from_sums(kind, m as f64, c, meas.energy, meas.sum, ed, sd)
    };
    let (mut best_l, mut best) = (0i64, f64::NEG_INFINITY);
    for l in (-k + 1)..m {
        let s = score_at(l);
        if s > best {
            best = s;
            best_l = l;
        }
    }
    if best == f64::NEG_INFINITY {
        return (best, meas.t0);
    }
    let (a, c) = (score_at(best_l - 1), score_at(best_l + 1));
    let mut delta = 0.0;
    if a.is_finite() && c.is_finite() {
        let denom = a - 2.0 * best + c;
        if denom < 0.0 {
            delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    let t_start = meas.t0 + (best_l as f64 + delta) * RESAMPLE_PERIOD_S;
    if !exact {
        return (best, t_start);
    }
    // continuous lag: score with the template evaluated analytically
    let (mut c, mut ed, mut sd) = (0.0, 0.0, 0.0);
    for (i, &s) in meas.s.iter().enumerate() {
        let d = tmpl.at(meas.t0 + i as f64 * RESAMPLE_PERIOD_S - t_start);
        c += s * d;
        ed += d * d;
        sd += d;
    }
    let exact_score = score_from_sums(kind, m as f64, c, meas.energy, meas.sum, ed, sd);
    if exact_score >= best {
        (exact_score, t_start)
    } else {
        (best, meas.t0 + best_l as f64 * RESAMPLE_PERIOD_S)
    }
}

fn search(
    meas: &Measured,
    orbit: &OrbitParams,
    kind: Score,
    thetas: &[f64],
    phis: &[f64],
    exact: bool,
) -> Result<Option<Cell>> {
    let cells: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|&t| phis.iter().map(move |&p| (t, p)))
        .collect();
    let evaluated: Result<Vec<Cell>> = cells
        .par_iter()
        .map(|&(theta, phi)| {
            let tmpl = Template::new(orbit, theta, phi)?;
            let (score, t_start) = evaluate_cell(meas, &tmpl, kind, exact);
            Ok(Cell {
                theta,
                phi,
                score,
                t_start,
            })
        })
        .collect();
    Ok(best_cell(evaluated?.into_par_iter().filter(|c| c.score.is_finite())))
}

/// Grid search for the pass parameters that best explain `measured`.
///
/// `orbit` supplies the altitude and carrier; its inclination is ignored and
/// searched instead.
pub fn estimate_trajectory(
    measured: &DopplerCurve,
    orbit: &OrbitParams,
    grid: &SearchGrid,
) -> Result<TrajectoryEstimate> {
    grid.validate()?;
    orbit.validate()?;
    let spline = spline_doppler(measured)?;
    let peak = measured.doppler_hz.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak < 1e-9 {
        return Err(Error::Ambiguous("measured Doppler is flat at zero".into()));
    }
    let meas = Measured::new(&spline, max_template_len(orbit, grid)?);

    let (tl, th) = grid.theta_range_deg;
    let (pl, ph) = grid.phi_range_deg;
    let coarse_t = grid.theta_points(grid.coarse_theta_step_deg, tl, th);
    let coarse_p = grid.phi_points(grid.coarse_phi_step_deg, pl, ph);
    let coarse = search(&meas, orbit, grid.score, &coarse_t, &coarse_p, false)?
        .ok_or_else(|| Error::Ambiguous("no grid cell overlaps the measurement".into()))?;

    let dt = grid.refine_cells * grid.coarse_theta_step_deg;
    let dp = grid.refine_cells * grid.coarse_phi_step_deg;
    let fine_t = grid.theta_points(grid.theta_step_deg, coarse.theta - dt - grid.theta_step_deg, coarse.theta + dt);
    let fine_p = grid.phi_points(grid.phi_step_deg, coarse.phi - dp, coarse.phi + dp + grid.phi_step_deg);
    let best = search(&meas, orbit, grid.score, &fine_t, &fine_p, true)?.unwrap_or(coarse);

    let est = TrajectoryEstimate {
        theta_max_deg: best.theta,
        phi_deg: best.phi,
        t_start_s: best.t_start,
        correlation_score: best.score,
        grid_resolution: GridResolution {
            theta_deg: grid.theta_step_deg,
            phi_deg: grid.phi_step_deg,
        },
    };
    let duration = est.pass(orbit)?.duration_s();
    if measured.span_s() < 0.5 * duration {
        return Err(Error::Precondition(format!(
            "measurements span {:.0} s, less than half of the {:.0} s pass",
            measured.span_s(),
            duration
        )));
    }
    Ok(est)
}

/// Predicted Doppler for upcoming packets, with a bound on how far the
/// prediction moves if the estimate is off by one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub curve: DopplerCurve,
    /// Largest deviation over the curve when θ and φ move by one grid step,
    /// keeping the closest-approach time fixed.
    pub error_bound_hz: f64,
}

/// Doppler of the estimated pass at `from_s, from_s + period, …` up to
/// `from_s + horizon_s`, restricted to the times the satellite is above the
/// horizon.
pub fn predict_next_pass_doppler(
    est: &TrajectoryEstimate,
    orbit: &OrbitParams,
    from_s: f64,
    horizon_s: f64,
    period_s: f64,
) -> Result<Prediction> {
    if !(horizon_s >= 0.0) || !(period_s > 0.0) || !from_s.is_finite() {
        return Err(Error::invalid("horizon must be non-negative and period positive"));
    }
    let pass = est.pass(orbit)?;
    let times: Vec<f64> = (0..)
        .map(|k| from_s + k as f64 * period_s)
        .take_while(|&t| t < from_s + horizon_s)
        .filter(|&t| pass.contains(t))
        .collect();
    let doppler: Vec<f64> = times.iter().map(|&t| pass.doppler(t)).collect::<Result<_>>()?;

    let mut bound = 0.0f64;
    let (dt, dp) = (est.grid_resolution.theta_deg, est.grid_resolution.phi_deg);
    for (a, b) in [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)] {
        let theta = (est.theta_max_deg + a * dt).clamp(1e-3, 90.0);
        let phi = (est.phi_deg + b * dp).clamp(0.0, 180.0);
        let other = PassGeometry::new(orbit.with_inclination(phi), theta, 0.0)?;
        let shape = DopplerShape::new(&other);
        for (&t, &d) in times.iter().zip(&doppler) {
            bound = bound.max((shape.eval(t - pass.t_ca_s()) - d).abs());
        }
    }
    Ok(Prediction {
        curve: DopplerCurve::new(times, doppler)?,
        error_bound_hz: bound,
    })
}
