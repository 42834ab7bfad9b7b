//! Incompressible 2D Navier–Stokes residuals, stream-function kinematics,
//! the physics-informed loss, flow-field files and the MAERM metric.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    derivative_jacobian, input_derivatives, mixed_input_derivative, shift_rule_derivative,
    Backend, DerivativeJacobian, DerivativeSet, EvalCounter, MultiIndex,
};
use crate::circuits::{ModelSpec, QuantumModel};
use crate::error::{Error, Result};
use crate::training::{adam_step, AdamState, BatchSampler, TrainConfig};

/// `u = ψ_y`, `v = -ψ_x`
pub fn velocities_from_stream(psi_dx: f64, psi_dy: f64) -> (f64, f64) {
    (psi_dy, -psi_dx)
}

/// Quantities entering the momentum residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    U,
    Ux,
    Uy,
    Ut,
    Uxx,
    Uyy,
    V,
    Vx,
    Vy,
    Vt,
    Vxx,
    Vyy,
    P,
    Px,
    Py,
}

const NUM_FIELDS: usize = 15;

/// Velocity and pressure values with the partials used by the residuals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowDerivatives {
    pub u: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub u_t: f64,
    pub u_xx: f64,
    pub u_yy: f64,
    pub v: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub v_t: f64,
    pub v_xx: f64,
    pub v_yy: f64,
    pub p: f64,
    pub p_x: f64,
    pub p_y: f64,
}

impl FlowDerivatives {
    fn slot(&mut self, field: Field) -> &mut f64 {
        match field {
            Field::U => &mut self.u,
            Field::Ux => &mut self.u_x,
            Field::Uy => &mut self.u_y,
            Field::Ut => &mut self.u_t,
            Field::Uxx => &mut self.u_xx,
            Field::Uyy => &mut self.u_yy,
            Field::V => &mut self.v,
            Field::Vx => &mut self.v_x,
            Field::Vy => &mut self.v_y,
            Field::Vt => &mut self.v_t,
            Field::Vxx => &mut self.v_xx,
            Field::Vyy => &mut self.v_yy,
            Field::P => &mut self.p,
            Field::Px => &mut self.p_x,
            Field::Py => &mut self.p_y,
        }
    }

    /// Assembles the flow quantities from stream-function and pressure partials.
    pub fn from_stream(
        psi: impl Fn(&MultiIndex) -> f64,
        pressure: impl Fn(&MultiIndex) -> f64,
    ) -> Self {
        let mut d = Self::default();
        for &(field, alpha, sign) in &STREAM_TERMS {
            *d.slot(field) = sign * psi(&MultiIndex(alpha.to_vec()));
        }
        for &(field, alpha) in &PRESSURE_TERMS {
            *d.slot(field) = pressure(&MultiIndex(alpha.to_vec()));
        }
        d
    }
}

/// `(field, ψ multi-index over (x, y, t), sign)`
const STREAM_TERMS: [(Field, [usize; 3], f64); 12] = [
    (Field::U, [0, 1, 0], 1.0),
    (Field::Ux, [1, 1, 0], 1.0),
    (Field::Uy, [0, 2, 0], 1.0),
    (Field::Ut, [0, 1, 1], 1.0),
    (Field::Uxx, [2, 1, 0], 1.0),
    (Field::Uyy, [0, 3, 0], 1.0),
    (Field::V, [1, 0, 0], -1.0),
    (Field::Vx, [2, 0, 0], -1.0),
    (Field::Vy, [1, 1, 0], -1.0),
    (Field::Vt, [1, 0, 1], -1.0),
    (Field::Vxx, [3, 0, 0], -1.0),
    (Field::Vyy, [1, 2, 0], -1.0),
];

const PRESSURE_TERMS: [(Field, [usize; 3]); 3] = [
    (Field::P, [0, 0, 0]),
    (Field::Px, [1, 0, 0]),
    (Field::Py, [0, 1, 0]),
];

type Partials = [(Field, f64); 8];

/// Residuals with their partials with respect to the flow quantities.
fn residuals_with_partials(d: &FlowDerivatives, reynolds: f64) -> ((f64, Partials), (f64, Partials)) {
    let nu = 1.0 / reynolds;
    let rx = d.u_t + d.u * d.u_x + d.v * d.u_y - nu * (d.u_xx + d.u_yy) + d.p_x;
    let ry = d.v_t + d.u * d.v_x + d.v * d.v_y - nu * (d.v_xx + d.v_yy) + d.p_y;
    let drx = [
        (Field::Ut, 1.0),
        (Field::U, d.u_x),
        (Field::Ux, d.u),
        (Field::V, d.u_y),
        (Field::Uy, d.v),
        (Field::Uxx, -nu),
        (Field::Uyy, -nu),
        (Field::Px, 1.0),
    ];
    let dry = [
        (Field::Vt, 1.0),
        (Field::U, d.v_x),
        (Field::Vx, d.u),
        (Field::V, d.v_y),
        (Field::Vy, d.v),
        (Field::Vxx, -nu),
        (Field::Vyy, -nu),
        (Field::Py, 1.0),
    ];
    ((rx, drx), (ry, dry))
}

/// Momentum residuals `(r_x, r_y)`.
pub fn ns_residuals(d: &FlowDerivatives, reynolds: f64) -> Result<(f64, f64)> {
    if !(reynolds > 0.0) {
        return Err(Error::Input(format!("Reynolds number must be positive, got {reynolds}")));
    }
    let ((rx, _), (ry, _)) = residuals_with_partials(d, reynolds);
    Ok((rx, ry))
}

/// Decaying Taylor–Green vortex `(u, v, p)`.
pub fn taylor_green_reference(x: f64, y: f64, t: f64, reynolds: f64) -> (f64, f64, f64) {
    let e = (-2.0 * t / reynolds).exp();
    let u = -x.cos() * y.sin() * e;
    let v = x.sin() * y.cos() * e;
    let p = -0.25 * ((2.0 * x).cos() + (2.0 * y).cos()) * e * e;
    (u, v, p)
}

/// Hand-differentiated Taylor–Green quantities.
pub fn taylor_green_derivatives(x: f64, y: f64, t: f64, reynolds: f64) -> FlowDerivatives {
    let e = (-2.0 * t / reynolds).exp();
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let k = 2.0 / reynolds;
    FlowDerivatives {
        u: -cx * sy * e,
        u_x: sx * sy * e,
        u_y: -cx * cy * e,
        u_t: k * cx * sy * e,
        u_xx: cx * sy * e,
        u_yy: cx * sy * e,
        v: sx * cy * e,
        v_x: cx * cy * e,
        v_y: -sx * sy * e,
        v_t: -k * sx * cy * e,
        v_xx: -sx * cy * e,
        v_yy: -sx * cy * e,
        p: -0.25 * ((2.0 * x).cos() + (2.0 * y).cos()) * e * e,
        p_x: 0.5 * (2.0 * x).sin() * e * e,
        p_y: 0.5 * (2.0 * y).sin() * e * e,
    }
}

/// Anything that can report flow quantities at a point `(x, y, t)`.
pub trait FlowSurrogate {
    fn flow_at(&self, point: [f64; 3]) -> Result<FlowDerivatives>;
}

/// The analytic vortex, expressed through its stream function
/// `ψ = cos x cos y e^{-2t/Re}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorGreen {
    pub reynolds: f64,
}

fn cos_derivative(arg: f64, order: usize) -> f64 {
    (arg + order as f64 * std::f64::consts::FRAC_PI_2).cos()
}

impl TaylorGreen {
    pub fn stream_partial(&self, [x, y, t]: [f64; 3], alpha: &MultiIndex) -> f64 {
        let [a, b, c] = [alpha.0[0], alpha.0[1], alpha.0[2]];
        let k = -2.0 / self.reynolds;
        cos_derivative(x, a) * cos_derivative(y, b) * k.powi(c as i32) * (k * t).exp()
    }

    pub fn pressure_partial(&self, [x, y, t]: [f64; 3], alpha: &MultiIndex) -> f64 {
        let [a, b, c] = [alpha.0[0], alpha.0[1], alpha.0[2]];
        let k = -4.0 / self.reynolds;
        let decay = k.powi(c as i32) * (k * t).exp();
        let mut spatial = 0.0;
        if b == 0 {
            spatial += 2f64.powi(a as i32) * cos_derivative(2.0 * x, a);
        }
        if a == 0 {
            spatial += 2f64.powi(b as i32) * cos_derivative(2.0 * y, b);
        }
        -0.25 * spatial * decay
    }
}

impl FlowSurrogate for TaylorGreen {
    fn flow_at(&self, point: [f64; 3]) -> Result<FlowDerivatives> {
        Ok(FlowDerivatives::from_stream(
            |a| self.stream_partial(point, a),
            |a| self.pressure_partial(point, a),
        ))
    }
}

/// Velocity and pressure on a regular `(x, y, t)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    /// Indexed `(it * ny + iy) * nx + ix`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub reynolds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowMeta {
    pub reynolds: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl FlowField {
    pub fn from_fn(
        x: Vec<f64>,
        y: Vec<f64>,
        t: Vec<f64>,
        reynolds: f64,
        f: impl Fn(f64, f64, f64) -> (f64, f64, f64),
    ) -> Result<Self> {
        let mut field = Self {
            u: Vec::with_capacity(x.len() * y.len() * t.len()),
            v: Vec::new(),
            p: Vec::new(),
            x,
            y,
            t,
            reynolds,
        };
        for &tk in &field.t {
            for &yj in &field.y {
                for &xi in &field.x {
                    let (u, v, p) = f(xi, yj, tk);
                    field.u.push(u);
                    field.v.push(v);
                    field.p.push(p);
                }
            }
        }
        field.validate()?;
        Ok(field)
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }
    pub fn ny(&self) -> usize {
        self.y.len()
    }
    pub fn nt(&self) -> usize {
        self.t.len()
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (it * self.ny() + iy) * self.nx() + ix
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let nx = self.nx();
        let ny = self.ny();
        [self.x[i % nx], self.y[(i / nx) % ny], self.t[i / (nx * ny)]]
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Flat range of one time step.
    pub fn time_slice(&self, it: usize) -> std::ops::Range<usize> {
        let n = self.nx() * self.ny();
        it * n..(it + 1) * n
    }

    pub fn meta(&self) -> FlowMeta {
        FlowMeta {
            reynolds: self.reynolds,
            nx: self.nx(),
            ny: self.ny(),
            nt: self.nt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reynolds > 0.0) {
            return Err(Error::Input(format!("Reynolds number must be positive, got {}", self.reynolds)));
        }
        if self.x.is_empty() || self.y.is_empty() || self.t.is_empty() {
            return Err(Error::Input("flow field grid has an empty axis".into()));
        }
        for (name, axis) in [("x", &self.x), ("y", &self.y), ("t", &self.t)] {
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Input(format!("grid axis `{name}` is not strictly increasing")));
            }
        }
        let n = self.nx() * self.ny() * self.nt();
        for (name, arr) in [("u", &self.u), ("v", &self.v), ("p", &self.p)] {
            if arr.len() != n {
                return Err(Error::Input(format!(
                    "shape mismatch: `{name}` has {} values for a {}x{}x{} grid",
                    arr.len(),
                    self.nx(),
                    self.ny(),
                    self.nt()
                )));
            }
        }
        Ok(())
    }

    /// `(lo, hi)` of each axis.
    pub fn extents(&self) -> [(f64, f64); 3] {
        let ext = |a: &[f64]| {
            a.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        };
        [ext(&self.x), ext(&self.y), ext(&self.t)]
    }
}

pub fn taylor_green_field(x: Vec<f64>, y: Vec<f64>, t: Vec<f64>, reynolds: f64) -> Result<FlowField> {
    FlowField::from_fn(x, y, t, reynolds, |x, y, t| taylor_green_reference(x, y, t, reynolds))
}

pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `x,y,t,u,v,p` rows in `(t, y, x)` order plus the metadata sidecar.
pub fn write_flow_field(field: &FlowField, path: &Path) -> Result<()> {
    field.validate()?;
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["x", "y", "t", "u", "v", "p"]).map_err(csv_error)?;
    for i in 0..field.len() {
        let [x, y, t] = field.point(i);
        let row = [x, y, t, field.u[i], field.v[i], field.p[i]].map(|v| v.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    let meta = serde_json::to_string_pretty(&field.meta()).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(meta_path(path), meta)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn load_flow_field(path: &Path) -> Result<FlowField> {
    let meta_file = meta_path(path);
    let meta_text = std::fs::read_to_string(&meta_file).map_err(|e| {
        Error::Parse(format!("cannot read metadata {}: {e}", meta_file.display()))
    })?;
    let meta: FlowMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Parse(format!("{}: {e}", meta_file.display())))?;

    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let mut columns = [0usize; 6];
    for (slot, name) in columns.iter_mut().zip(["x", "y", "t", "u", "v", "p"]) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("{}: missing column `{name}`", path.display())))?;
    }

    let mut rows: Vec<[f64; 6]> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = [0.0; 6];
        for (value, &col) in row.iter_mut().zip(&columns) {
            let raw = record.get(col).unwrap_or("");
            *value = raw.trim().parse().map_err(|_| {
                Error::Parse(format!("{}:{line}: invalid number `{raw}`", path.display()))
            })?;
        }
        rows.push(row);
    }

    let (nx, ny, nt) = (meta.nx, meta.ny, meta.nt);
    if rows.len() != nx * ny * nt || rows.is_empty() {
        return Err(Error::Input(format!(
            "shape mismatch: {} rows for a {nx}x{ny}x{nt} grid",
            rows.len()
        )));
    }
    let field = FlowField {
        x: (0..nx).map(|i| rows[i][0]).collect(),
        y: (0..ny).map(|j| rows[j * nx][1]).collect(),
        t: (0..nt).map(|k| rows[k * nx * ny][2]).collect(),
        u: rows.iter().map(|r| r[3]).collect(),
        v: rows.iter().map(|r| r[4]).collect(),
        p: rows.iter().map(|r| r[5]).collect(),
        reynolds: meta.reynolds,
    };
    for (i, row) in rows.iter().enumerate() {
        if field.point(i) != [row[0], row[1], row[2]] {
            return Err(Error::Input(format!(
                "shape mismatch: row {} at ({}, {}, {}) is off the ({nx}, {ny}, {nt}) grid",
                i + 1,
                row[0],
                row[1],
                row[2]
            )));
        }
    }
    field.validate()?;
    Ok(field)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

/// `(1/M) Σ |(ŷ_i - y_i) / median(y)|`
pub fn maerm(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "maerm needs equal nonempty arrays, got {} and {}",
            pred.len(),
            reference.len()
        )));
    }
    let m = median(reference).expect("nonempty");
    if m == 0.0 {
        return Err(Error::Metric(
            "reference median is zero; the relative error is undefined".into(),
        ));
    }
    Ok(pred
        .iter()
        .zip(reference)
        .map(|(p, r)| ((p - r) / m).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// MAERM in percent.
pub fn maerm_percent(pred: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(100.0 * maerm(pred, reference)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaermSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl MaermSummary {
    fn of(values: &[f64]) -> Self {
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

/// Per-time-step MAERM (percent) of each observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaermReport {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub u_summary: MaermSummary,
    pub v_summary: MaermSummary,
    pub p_summary: MaermSummary,
}

impl MaermReport {
    pub fn compute(pred: &FlowField, reference: &FlowField) -> Result<Self> {
        if pred.meta() != reference.meta() {
            return Err(Error::Input("prediction and reference grids differ".into()));
        }
        let mut per = [Vec::new(), Vec::new(), Vec::new()];
        for it in 0..reference.nt() {
            let r = reference.time_slice(it);
            per[0].push(maerm_percent(&pred.u[r.clone()], &reference.u[r.clone()])?);
            per[1].push(maerm_percent(&pred.v[r.clone()], &reference.v[r.clone()])?);
            per[2].push(maerm_percent(&pred.p[r.clone()], &reference.p[r])?);
        }
        let [u, v, p] = per;
        Ok(Self {
            times: reference.t.clone(),
            u_summary: MaermSummary::of(&u),
            v_summary: MaermSummary::of(&v),
            p_summary: MaermSummary::of(&p),
            u,
            v,
            p,
        })
    }

    pub fn means(&self) -> [f64; 3] {
        [self.u_summary.mean, self.v_summary.mean, self.p_summary.mean]
    }
}

/// Predictor returning the reference median of each observable per time step.
pub fn median_baseline(reference: &FlowField) -> FlowField {
    let mut out = reference.clone();
    for it in 0..reference.nt() {
        let r = reference.time_slice(it);
        for (dst, src) in [
            (&mut out.u, &reference.u),
            (&mut out.v, &reference.v),
            (&mut out.p, &reference.p),
        ] {
            let m = median(&src[r.clone()]).expect("time slice is nonempty");
            dst[r.clone()].fill(m);
        }
    }
    out
}

/// A supervised observation of `(u, v, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub point: [f64; 3],
    pub u: f64,
    pub v: f64,
    pub p: f64,
}

/// Every `stride`-th x and y index at every time step, anchored at index 0.
pub fn data_subset(field: &FlowField, stride: (usize, usize)) -> Result<Vec<DataPoint>> {
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Config("data stride must be positive".into()));
    }
    let mut out = Vec::new();
    for it in 0..field.nt() {
        for iy in (0..field.ny()).step_by(stride.1) {
            for ix in (0..field.nx()).step_by(stride.0) {
                let i = field.index(ix, iy, it);
                out.push(DataPoint {
                    point: field.point(i),
                    u: field.u[i],
                    v: field.v[i],
                    p: field.p[i],
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqcLoss {
    pub total: f64,
    pub l_pde: f64,
    pub l_data: f64,
}

/// `l_pde = mse(r_x) + mse(r_y)` over the collocation points,
/// `l_data = mse(u) + mse(v) + mse(p)` over the data points.
pub fn dqc_loss(
    surrogate: &impl FlowSurrogate,
    reynolds: f64,
    collocation: &[[f64; 3]],
    data: &[DataPoint],
) -> Result<DqcLoss> {
    if collocation.is_empty() {
        return Err(Error::Input("collocation batch is empty".into()));
    }
    let m = collocation.len() as f64;
    let mut l_pde = 0.0;
    for &pt in collocation {
        let (rx, ry) = ns_residuals(&surrogate.flow_at(pt)?, reynolds)?;
        l_pde += (rx * rx + ry * ry) / m;
    }
    let mut l_data = 0.0;
    if !data.is_empty() {
        let k = data.len() as f64;
        for d in data {
            let f = surrogate.flow_at(d.point)?;
            l_data += ((f.u - d.u).powi(2) + (f.v - d.v).powi(2) + (f.p - d.p).powi(2)) / k;
        }
    }
    Ok(DqcLoss {
        total: l_pde + l_data,
        l_pde,
        l_data,
    })
}

/// Classical output heads `(a_ψ, b_ψ, a_p, b_p)`: `ψ̂ = a_ψ f_ψ + b_ψ`, `p̂ = a_p f_p + b_p`.
pub const NUM_HEADS: usize = 4;

/// Stream-function and pressure models with their supervision data.
#[derive(Debug, Clone)]
pub struct NseProblem {
    pub psi_model: QuantumModel,
    pub p_model: QuantumModel,
    pub heads: [f64; NUM_HEADS],
    pub reynolds: f64,
    pub data: Vec<DataPoint>,
    pub collocation: Vec<[f64; 3]>,
    pub backend: Backend,
    psi_pde: DerivativeSet,
    p_pde: DerivativeSet,
    psi_data: DerivativeSet,
    p_data: DerivativeSet,
}

impl NseProblem {
    pub fn new(
        psi_model: QuantumModel,
        p_model: QuantumModel,
        reynolds: f64,
        data: Vec<DataPoint>,
        collocation: Vec<[f64; 3]>,
    ) -> Result<Self> {
        for (name, m) in [("stream-function", &psi_model), ("pressure", &p_model)] {
            if m.num_features() != 3 {
                return Err(Error::Input(format!(
                    "{name} model must take (x, y, t), got {} features",
                    m.num_features()
                )));
            }
        }
        if !(reynolds > 0.0) {
            return Err(Error::Input(format!("Reynolds number must be positive, got {reynolds}")));
        }
        let idx = |terms: &[[usize; 3]]| terms.iter().map(|a| MultiIndex(a.to_vec())).collect::<Vec<_>>();
        let stream: Vec<[usize; 3]> = STREAM_TERMS.iter().map(|t| t.1).collect();
        let pressure: Vec<[usize; 3]> = PRESSURE_TERMS.iter().map(|t| t.1).collect();
        Ok(Self {
            psi_pde: DerivativeSet::new(3, &idx(&stream))?,
            p_pde: DerivativeSet::new(3, &idx(&pressure))?,
            psi_data: DerivativeSet::new(3, &idx(&[[1, 0, 0], [0, 1, 0]]))?,
            p_data: DerivativeSet::new(3, &[])?,
            psi_model,
            p_model,
            heads: [1.0, 0.0, 1.0, 0.0],
            reynolds,
            data,
            collocation,
            backend: Backend::AnalyticForward,
        })
    }

    /// Models built from `spec` (stream function with `seed`, pressure with
    /// `seed + 1`), supervised on a strided subset of `reference` and
    /// collocated on its full grid. Inputs are mapped onto `[0, π]` from the
    /// grid extents unless the spec sets its own input map.
    pub fn from_reference(
        spec: &ModelSpec,
        reference: &FlowField,
        stride: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let mut spec = spec.clone();
        if spec.features != 3 {
            return Err(Error::Config(format!(
                "flow models need 3 features, spec has {}",
                spec.features
            )));
        }
        if spec.input_ranges.is_none() && spec.input_scale.is_none() {
            spec.input_ranges = Some(reference.extents().map(|(lo, hi)| [lo, hi]).to_vec());
        }
        let psi = spec.build(seed)?;
        let p = spec.build(seed.wrapping_add(1))?;
        Self::new(
            psi,
            p,
            reference.reynolds,
            data_subset(reference, stride)?,
            reference.points(),
        )
    }

    pub fn num_params(&self) -> usize {
        self.psi_model.num_params() + self.p_model.num_params() + NUM_HEADS
    }

    /// `[ψ θ_A, ψ θ_F, p θ_A, p θ_F, a_ψ, b_ψ, a_p, b_p]`
    pub fn params(&self) -> Vec<f64> {
        let mut out = self.psi_model.params();
        out.extend(self.p_model.params());
        out.extend(self.heads);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let (psi, rest) = params.split_at(self.psi_model.num_params());
        let (p, heads) = rest.split_at(self.p_model.num_params());
        self.psi_model.set_params(psi)?;
        self.p_model.set_params(p)?;
        self.heads.copy_from_slice(heads);
        Ok(())
    }

    fn scaled(&self, model_is_psi: bool, alpha: &MultiIndex, raw: f64) -> f64 {
        let (a, b) = if model_is_psi {
            (self.heads[0], self.heads[1])
        } else {
            (self.heads[2], self.heads[3])
        };
        if alpha.order() == 0 {
            a * raw + b
        } else {
            a * raw
        }
    }

    fn model_values(&self, psi: bool, point: [f64; 3], set: &DerivativeSet) -> Result<Vec<f64>> {
        let model = if psi { &self.psi_model } else { &self.p_model };
        let raw = match self.backend {
            Backend::AnalyticForward => input_derivatives(model, &point, set)?,
            Backend::ShiftRule => {
                let counter = EvalCounter::new();
                set.indices()
                    .iter()
                    .map(|a| mixed_input_derivative(model, &point, a, Backend::ShiftRule, &counter))
                    .collect::<Result<_>>()?
            }
        };
        Ok(set
            .indices()
            .iter()
            .zip(raw)
            .map(|(a, r)| self.scaled(psi, a, r))
            .collect())
    }

    fn assemble(
        psi_set: &DerivativeSet,
        psi: &[f64],
        p_set: &DerivativeSet,
        p: &[f64],
    ) -> FlowDerivatives {
        let mut d = FlowDerivatives::default();
        for &(field, alpha, sign) in &STREAM_TERMS {
            if let Some(pos) = psi_set.position(&MultiIndex(alpha.to_vec())) {
                *d.slot(field) = sign * psi[pos];
            }
        }
        for &(field, alpha) in &PRESSURE_TERMS {
            if let Some(pos) = p_set.position(&MultiIndex(alpha.to_vec())) {
                *d.slot(field) = p[pos];
            }
        }
        d
    }

    /// Predicted `(u, v, p)` at a point.
    pub fn predict(&self, point: [f64; 3]) -> Result<(f64, f64, f64)> {
        let psi = self.model_values(true, point, &self.psi_data)?;
        let p = self.model_values(false, point, &self.p_data)?;
        let d = Self::assemble(&self.psi_data, &psi, &self.p_data, &p);
        Ok((d.u, d.v, d.p))
    }

    /// Predictions on the grid of `reference`.
    pub fn predict_field(&self, reference: &FlowField) -> Result<FlowField> {
        FlowField::from_fn(
            reference.x.clone(),
            reference.y.clone(),
            reference.t.clone(),
            reference.reynolds,
            |x, y, t| self.predict([x, y, t]).unwrap_or((f64::NAN, f64::NAN, f64::NAN)),
        )
    }

    /// `u_x + v_y`, with `u_x = ∂_x ∂_y ψ̂` by nested shifts (y innermost)
    /// and `v_y = -∂_y ∂_x ψ̂` from the forward derivative states.
    pub fn mass_continuity(&self, point: [f64; 3]) -> Result<f64> {
        let counter = EvalCounter::new();
        let a = self.heads[0];
        let u_x = a * shift_rule_derivative(&self.psi_model, &point, &[0, 1], &counter)?;
        let set = DerivativeSet::new(3, &[MultiIndex(vec![1, 1, 0])])?;
        let values = input_derivatives(&self.psi_model, &point, &set)?;
        let v_y = -a * values[set.position(&MultiIndex(vec![1, 1, 0])).expect("present")];
        Ok(u_x + v_y)
    }
}

impl FlowSurrogate for NseProblem {
    fn flow_at(&self, point: [f64; 3]) -> Result<FlowDerivatives> {
        let psi = self.model_values(true, point, &self.psi_pde)?;
        let p = self.model_values(false, point, &self.p_pde)?;
        Ok(Self::assemble(&self.psi_pde, &psi, &self.p_pde, &p))
    }
}

#[derive(Debug, Clone)]
pub struct DqcGradient {
    pub loss: DqcLoss,
    pub total: f64,
    /// Laid out as [`NseProblem::params`].
    pub grad: Vec<f64>,
}

/// Loss of the problem's models and its gradient over [`NseProblem::params`].
pub fn dqc_loss_gradient(
    problem: &NseProblem,
    collocation: &[[f64; 3]],
    data: &[DataPoint],
    counter: &EvalCounter,
) -> Result<DqcGradient> {
    if collocation.is_empty() {
        return Err(Error::Input("collocation batch is empty".into()));
    }
    let mut grad = vec![0.0; problem.num_params()];
    let m = collocation.len() as f64;
    let mut l_pde = 0.0;
    for &pt in collocation {
        let jp = derivative_jacobian(&problem.psi_model, &pt, &problem.psi_pde, counter)?;
        let jq = derivative_jacobian(&problem.p_model, &pt, &problem.p_pde, counter)?;
        let d = scaled_flow(problem, &problem.psi_pde, &jp, &problem.p_pde, &jq);
        let ((rx, drx), (ry, dry)) = residuals_with_partials(&d, problem.reynolds);
        l_pde += (rx * rx + ry * ry) / m;
        let mut sens = [0.0; NUM_FIELDS];
        for (field, v) in drx {
            sens[field as usize] += 2.0 * rx / m * v;
        }
        for (field, v) in dry {
            sens[field as usize] += 2.0 * ry / m * v;
        }
        backprop(problem, &problem.psi_pde, &jp, &problem.p_pde, &jq, &sens, &mut grad);
    }
    let mut l_data = 0.0;
    if !data.is_empty() {
        let k = data.len() as f64;
        for obs in data {
            let jp = derivative_jacobian(&problem.psi_model, &obs.point, &problem.psi_data, counter)?;
            let jq = derivative_jacobian(&problem.p_model, &obs.point, &problem.p_data, counter)?;
            let d = scaled_flow(problem, &problem.psi_data, &jp, &problem.p_data, &jq);
            let (eu, ev, ep) = (d.u - obs.u, d.v - obs.v, d.p - obs.p);
            l_data += (eu * eu + ev * ev + ep * ep) / k;
            let mut sens = [0.0; NUM_FIELDS];
            sens[Field::U as usize] = 2.0 * eu / k;
            sens[Field::V as usize] = 2.0 * ev / k;
            sens[Field::P as usize] = 2.0 * ep / k;
            backprop(problem, &problem.psi_data, &jp, &problem.p_data, &jq, &sens, &mut grad);
        }
    }
    let loss = DqcLoss {
        total: l_pde + l_data,
        l_pde,
        l_data,
    };
    Ok(DqcGradient {
        total: loss.total,
        loss,
        grad,
    })
}

fn scaled_flow(
    problem: &NseProblem,
    psi_set: &DerivativeSet,
    jp: &DerivativeJacobian,
    p_set: &DerivativeSet,
    jq: &DerivativeJacobian,
) -> FlowDerivatives {
    let psi: Vec<f64> = psi_set
        .indices()
        .iter()
        .zip(&jp.values)
        .map(|(a, &r)| problem.scaled(true, a, r))
        .collect();
    let p: Vec<f64> = p_set
        .indices()
        .iter()
        .zip(&jq.values)
        .map(|(a, &r)| problem.scaled(false, a, r))
        .collect();
    NseProblem::assemble(psi_set, &psi, p_set, &p)
}

fn backprop(
    problem: &NseProblem,
    psi_set: &DerivativeSet,
    jp: &DerivativeJacobian,
    p_set: &DerivativeSet,
    jq: &DerivativeJacobian,
    sens: &[f64; NUM_FIELDS],
    grad: &mut [f64],
) {
    let mut dpsi = vec![0.0; psi_set.len()];
    for &(field, alpha, sign) in &STREAM_TERMS {
        if let Some(pos) = psi_set.position(&MultiIndex(alpha.to_vec())) {
            dpsi[pos] += sign * sens[field as usize];
        }
    }
    let mut dp = vec![0.0; p_set.len()];
    for &(field, alpha) in &PRESSURE_TERMS {
        if let Some(pos) = p_set.position(&MultiIndex(alpha.to_vec())) {
            dp[pos] += sens[field as usize];
        }
    }
    let n_psi = problem.psi_model.num_params();
    let n_p = problem.p_model.num_params();
    let heads = n_psi + n_p;
    for (offset, head, d, jac) in [(0, 0, &dpsi, jp), (n_psi, 2, &dp, jq)] {
        let a = problem.heads[head];
        for (k, row) in jac.grads.iter().enumerate() {
            let s: f64 = row.iter().zip(d.iter()).map(|(g, w)| g * w).sum();
            grad[offset + k] += a * s;
        }
        grad[heads + head] += jac.values.iter().zip(d.iter()).map(|(v, w)| v * w).sum::<f64>();
        // Index 0 of every set is the zero multi-index, the only one the shift reaches.
        grad[heads + head + 1] += d[0];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NseParams {
    pub psi_theta_a: Vec<f64>,
    pub psi_theta_f: Vec<f64>,
    pub p_theta_a: Vec<f64>,
    pub p_theta_f: Vec<f64>,
    pub heads: [f64; NUM_HEADS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NseTrainReport {
    /// Batch total loss before each update.
    pub loss_trace: Vec<f64>,
    pub pde_trace: Vec<f64>,
    pub data_trace: Vec<f64>,
    pub params: NseParams,
    /// Loss over every collocation point and the full data subset after training.
    pub final_loss: DqcLoss,
    pub maerm: MaermReport,
    pub forward_evaluations: u64,
    pub shifted_evaluations: u64,
    pub wall_clock_s: f64,
}

/// Adam on `L = L_PDE + L_data` over both models and the output heads, with
/// collocation batches drawn from the problem's grid.
pub fn train_nse(
    problem: &mut NseProblem,
    config: &TrainConfig,
    reference: &FlowField,
) -> Result<NseTrainReport> {
    config.validate()?;
    let start = Instant::now();
    let counter = EvalCounter::new();
    let mut sampler = BatchSampler::new(config.seed, problem.collocation.len(), config.batch_size)?;
    let mut adam = AdamState::new(problem.num_params());
    let mut params = problem.params();
    let data = problem.data.clone();
    let (mut loss_trace, mut pde_trace, mut data_trace) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..config.iterations {
        let batch: Vec<[f64; 3]> = sampler
            .next_batch()
            .into_iter()
            .map(|i| problem.collocation[i])
            .collect();
        let g = dqc_loss_gradient(problem, &batch, &data, &counter)?;
        if !g.total.is_finite() {
            return Err(Error::Numerical(format!("physics-informed loss diverged to {}", g.total)));
        }
        loss_trace.push(g.loss.total);
        pde_trace.push(g.loss.l_pde);
        data_trace.push(g.loss.l_data);
        let (next, updated) = adam_step(adam, &params, &g.grad, config.learning_rate)?;
        adam = next;
        params = updated;
        problem.set_params(&params)?;
    }
    let final_loss = dqc_loss(problem, problem.reynolds, &problem.collocation, &data)?;
    let maerm = MaermReport::compute(&problem.predict_field(reference)?, reference)?;
    Ok(NseTrainReport {
        loss_trace,
        pde_trace,
        data_trace,
        params: NseParams {
            psi_theta_a: problem.psi_model.theta_a().to_vec(),
            psi_theta_f: problem.psi_model.theta_f().to_vec(),
            p_theta_a: problem.p_model.theta_a().to_vec(),
            p_theta_f: problem.p_model.theta_f().to_vec(),
            heads: problem.heads,
        },
        final_loss,
        maerm,
        forward_evaluations: counter.forward(),
        shifted_evaluations: counter.shifted(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Axis of a regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        crate::circuits::uniform_grid(self.lo, self.hi, self.n)
    }
}

/// Grid and Reynolds number of an analytic Taylor–Green reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorGreenSpec {
    pub x: Axis,
    pub y: Axis,
    pub t: Axis,
    pub reynolds: f64,
}

impl TaylorGreenSpec {
    /// 20×20×5 grid over `[0.25, 2.75]² × [0, 4]` at `Re = 100`. The offset
    /// window keeps every per-time-step median of `u`, `v` and `p` away from zero.
    pub fn desk() -> Self {
        Self {
            x: Axis { lo: 0.25, hi: 2.75, n: 20 },
            y: Axis { lo: 0.25, hi: 2.75, n: 20 },
            t: Axis { lo: 0.0, hi: 4.0, n: 5 },
            reynolds: 100.0,
        }
    }

    pub fn field(&self) -> Result<FlowField> {
        for (name, a) in [("x", self.x), ("y", self.y), ("t", self.t)] {
            if a.n == 0 || (a.n > 1 && !(a.hi > a.lo)) {
                return Err(Error::Config(format!("grid axis `{name}` is empty")));
            }
        }
        taylor_green_field(self.x.values(), self.y.values(), self.t.values(), self.reynolds)
    }
}
