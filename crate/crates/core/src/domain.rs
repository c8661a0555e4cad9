//! Grid, boundary tags, quadrature and the field types every other module
//! works on.
//!
//! The domain is the rectangle `(0, L) x (-h, 0)` sampled on a uniform
//! tensor grid of `(nx + 1) x (nz + 1)` nodes that includes the boundary.
//! Node `(i, j)` sits at `x = i dx`, `z = -h + j dz`; row `j = nz` is the
//! free surface, row `j = 0` the bottom.
//!
//! All integrals use the trapezoid rule in both directions. The first
//! derivative operators [`ScalarField::ddx`] and [`ScalarField::ddz`] are
//! summation-by-parts with respect to that rule, which is what makes the
//! discrete transport and Coriolis cancellations exact.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    /// Kinematic viscosity.
    pub nu: f64,
    /// Heat diffusivity.
    pub mu: f64,
    /// Coriolis parameter.
    pub f: f64,
    /// Robin coefficient of the velocity at the surface.
    pub alpha_v: f64,
    /// Robin coefficient of the temperature at the surface.
    pub alpha_t: f64,
    /// Thermal expansion coefficient.
    pub beta_t: f64,
    /// Gravity.
    pub g: f64,
    /// Reference density.
    pub rho0: f64,
    /// Reference temperature.
    pub t0: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            nu: 1e-2,
            mu: 1e-2,
            f: 1.0,
            alpha_v: 1.0,
            alpha_t: 1.0,
            beta_t: 2e-4,
            g: 9.81,
            rho0: 1e3,
            t0: 0.0,
        }
    }
}

impl Physics {
    /// Coefficient of the buoyancy coupling `beta_T g rho0`.
    pub fn buoyancy(&self) -> f64 {
        self.beta_t * self.g * self.rho0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.nu, self.mu, self.f, self.alpha_v, self.alpha_t, self.beta_t, self.g, self.rho0,
            self.t0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDomain("physical coefficients must be finite".into()));
        }
        if self.nu <= 0.0 || self.mu <= 0.0 {
            return Err(Error::InvalidDomain("nu and mu must be positive".into()));
        }
        if self.rho0 <= 0.0 {
            return Err(Error::InvalidDomain("rho0 must be positive".into()));
        }
        if self.alpha_v < 0.0 || self.alpha_t < 0.0 {
            return Err(Error::InvalidDomain("Robin coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// Geometry, resolution and physics of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Horizontal extent `L`.
    pub length: f64,
    /// Depth `h`.
    pub depth: f64,
    /// Number of grid intervals in x.
    pub nx: usize,
    /// Number of grid intervals in z.
    pub nz: usize,
    pub physics: Physics,
}

impl DomainSpec {
    pub fn new(length: f64, depth: f64, nx: usize, nz: usize) -> Self {
        DomainSpec { length, depth, nx, nz, physics: Physics::default() }
    }

    /// Unit square at the given resolution with default physics.
    pub fn unit(n: usize) -> Self {
        Self::new(1.0, 1.0, n, n)
    }

    pub fn with_physics(mut self, physics: Physics) -> Self {
        self.physics = physics;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidDomain("L must be positive".into()));
        }
        if !(self.depth.is_finite() && self.depth > 0.0) {
            return Err(Error::InvalidDomain("h must be positive".into()));
        }
        if self.nx < 4 || self.nz < 4 {
            return Err(Error::InvalidDomain("nx and nz must be at least 4".into()));
        }
        self.physics.validate()
    }

    pub fn build(self) -> Result<Arc<Domain>> {
        Domain::new(self)
    }
}

/// Discretized domain shared by all fields on it.
#[derive(Debug)]
pub struct Domain {
    pub spec: DomainSpec,
    pub dx: f64,
    pub dz: f64,
    /// Trapezoid weights in x.
    pub wx: Array1<f64>,
    /// Trapezoid weights in z.
    pub wz: Array1<f64>,
    pub xs: Array1<f64>,
    pub zs: Array1<f64>,
}

fn trapezoid_weights(n: usize, d: f64) -> Array1<f64> {
    let mut w = Array1::from_elem(n + 1, d);
    w[0] = 0.5 * d;
    w[n] = 0.5 * d;
    w
}

impl Domain {
    pub fn new(spec: DomainSpec) -> Result<Arc<Self>> {
        spec.validate()?;
        let dx = spec.length / spec.nx as f64;
        let dz = spec.depth / spec.nz as f64;
        let xs = Array1::from_shape_fn(spec.nx + 1, |i| i as f64 * dx);
        let zs = Array1::from_shape_fn(spec.nz + 1, |j| -spec.depth + j as f64 * dz);
        Ok(Arc::new(Domain {
            spec,
            dx,
            dz,
            wx: trapezoid_weights(spec.nx, dx),
            wz: trapezoid_weights(spec.nz, dz),
            xs,
            zs,
        }))
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn nz(&self) -> usize {
        self.spec.nz
    }

    /// Node array shape `(nx + 1, nz + 1)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.spec.nx + 1, self.spec.nz + 1)
    }

    pub fn node_count(&self) -> usize {
        (self.spec.nx + 1) * (self.spec.nz + 1)
    }

    pub fn physics(&self) -> &Physics {
        &self.spec.physics
    }

    pub fn length(&self) -> f64 {
        self.spec.length
    }

    pub fn depth(&self) -> f64 {
        self.spec.depth
    }

    /// True when `(i, j)` is a velocity Dirichlet node (side walls or bottom).
    pub fn is_dirichlet(&self, i: usize, j: usize) -> bool {
        i == 0 || i == self.spec.nx || j == 0
    }

    /// Sum of z-weights over the nodes that are free for velocity fields.
    pub(crate) fn free_column_weight(&self) -> f64 {
        self.spec.depth - self.wz[0]
    }
}

fn same_domain(a: &Arc<Domain>, b: &Arc<Domain>) -> bool {
    Arc::ptr_eq(a, b) || a.spec == b.spec
}

/// Boundary behaviour attached to a scalar field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcTag {
    /// Zero on the side walls and bottom, Robin with `alpha_v` at the surface.
    Velocity,
    /// Zero normal derivative on walls and bottom, Robin with `alpha_T` at the surface.
    Temperature,
    /// No boundary conditions attached.
    Free,
}

/// Closure used by the second-difference operator at one end of a grid line.
#[derive(Clone, Copy, Debug)]
enum Closure {
    Dirichlet,
    Neumann,
    Robin(f64),
}

fn sbp_diff(inp: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, d: f64) {
    let n = inp.len() - 1;
    out[0] = (inp[1] - inp[0]) / d;
    out[n] = (inp[n] - inp[n - 1]) / d;
    let h2 = 0.5 / d;
    for i in 1..n {
        out[i] = (inp[i + 1] - inp[i - 1]) * h2;
    }
}

fn accurate_diff(inp: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, d: f64) {
    let n = inp.len() - 1;
    let h2 = 0.5 / d;
    out[0] = (-3.0 * inp[0] + 4.0 * inp[1] - inp[2]) * h2;
    out[n] = (3.0 * inp[n] - 4.0 * inp[n - 1] + inp[n - 2]) * h2;
    for i in 1..n {
        out[i] = (inp[i + 1] - inp[i - 1]) * h2;
    }
}

fn accurate_second(inp: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, d: f64) {
    let n = inp.len() - 1;
    let r = 1.0 / (d * d);
    out[0] = (2.0 * inp[0] - 5.0 * inp[1] + 4.0 * inp[2] - inp[3]) * r;
    out[n] = (2.0 * inp[n] - 5.0 * inp[n - 1] + 4.0 * inp[n - 2] - inp[n - 3]) * r;
    for i in 1..n {
        out[i] = (inp[i + 1] - 2.0 * inp[i] + inp[i - 1]) * r;
    }
}

fn closed_second(inp: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, d: f64, lo: Closure, hi: Closure) {
    let n = inp.len() - 1;
    let r = 1.0 / (d * d);
    for i in 1..n {
        out[i] = (inp[i + 1] - 2.0 * inp[i] + inp[i - 1]) * r;
    }
    out[0] = match lo {
        Closure::Dirichlet => 0.0,
        Closure::Neumann => 2.0 * (inp[1] - inp[0]) * r,
        Closure::Robin(a) => 2.0 * (inp[1] - inp[0]) * r - 2.0 * a * inp[0] / d,
    };
    out[n] = match hi {
        Closure::Dirichlet => 0.0,
        Closure::Neumann => 2.0 * (inp[n - 1] - inp[n]) * r,
        Closure::Robin(a) => 2.0 * (inp[n - 1] - inp[n]) * r - 2.0 * a * inp[n] / d,
    };
}

/// Scalar grid function with a boundary tag.
#[derive(Clone, Debug)]
pub struct ScalarField {
    domain: Arc<Domain>,
    pub tag: BcTag,
    pub data: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(domain: &Arc<Domain>, tag: BcTag) -> Self {
        ScalarField { domain: domain.clone(), tag, data: Array2::zeros(domain.shape()) }
    }

    pub fn from_array(domain: &Arc<Domain>, tag: BcTag, data: Array2<f64>) -> Result<Self> {
        if data.dim() != domain.shape() {
            return Err(Error::arg(format!(
                "array shape {:?} does not match grid {:?}",
                data.dim(),
                domain.shape()
            )));
        }
        Ok(ScalarField { domain: domain.clone(), tag, data })
    }

    /// Samples `f(x, z)` at every node.
    pub fn from_fn(domain: &Arc<Domain>, tag: BcTag, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = Array2::from_shape_fn(domain.shape(), |(i, j)| f(domain.xs[i], domain.zs[j]));
        ScalarField { domain: domain.clone(), tag, data }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    fn with_data(&self, tag: BcTag, data: Array2<f64>) -> Self {
        ScalarField { domain: self.domain.clone(), tag, data }
    }

    fn check(&self, other: &ScalarField) -> Result<()> {
        if same_domain(&self.domain, &other.domain) {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }

    pub fn retag(mut self, tag: BcTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.with_data(self.tag, &self.data * a)
    }

    /// `self + a * other`, keeping the tag of `self`.
    pub fn axpy(&self, a: f64, other: &ScalarField) -> Result<Self> {
        self.check(other)?;
        let mut data = self.data.clone();
        data.scaled_add(a, &other.data);
        Ok(self.with_data(self.tag, data))
    }

    /// Pointwise product.
    pub fn hadamard(&self, other: &ScalarField) -> Result<Self> {
        self.check(other)?;
        Ok(self.with_data(BcTag::Free, &self.data * &other.data))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Trapezoid integral over the domain.
    pub fn integral(&self) -> f64 {
        let d = &self.domain;
        let mut s = 0.0;
        for (i, row) in self.data.outer_iter().enumerate() {
            s += d.wx[i] * row.dot(&d.wz);
        }
        s
    }

    /// Weighted `L2` inner product.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.check(other)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &ScalarField) -> f64 {
        let d = &self.domain;
        let mut s = 0.0;
        for (i, (a, b)) in self.data.outer_iter().zip(other.data.outer_iter()).enumerate() {
            let mut col = 0.0;
            for j in 0..a.len() {
                col += d.wz[j] * a[j] * b[j];
            }
            s += d.wx[i] * col;
        }
        s
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner_unchecked(self).sqrt()
    }

    /// `L2` inner product of the traces on the free surface.
    pub fn surface_inner(&self, other: &ScalarField) -> Result<f64> {
        self.check(other)?;
        let d = &self.domain;
        let top = d.nz();
        Ok((0..=d.nx()).map(|i| d.wx[i] * self.data[[i, top]] * other.data[[i, top]]).sum())
    }

    /// Surface trace as a vector indexed by x-node.
    pub fn surface_trace(&self) -> Array1<f64> {
        self.data.column(self.domain.nz()).to_owned()
    }

    /// Bottom trace as a vector indexed by x-node.
    pub fn bottom_trace(&self) -> Array1<f64> {
        self.data.column(0).to_owned()
    }

    /// Trapezoid integral over z for each column.
    pub fn column_integrals(&self) -> Array1<f64> {
        self.data.dot(&self.domain.wz)
    }

    /// Vertical average, broadcast along each column.
    pub fn vertical_average(&self) -> ScalarField {
        let h = self.domain.depth();
        let means = self.column_integrals() / h;
        let mut data = Array2::zeros(self.domain.shape());
        for (mut row, m) in data.outer_iter_mut().zip(means.iter()) {
            row.fill(*m);
        }
        self.with_data(BcTag::Free, data)
    }

    /// Fluctuation `phi - P phi`; keeps the tag.
    pub fn fluctuation(&self) -> ScalarField {
        let avg = self.vertical_average();
        self.with_data(self.tag, &self.data - &avg.data)
    }

    fn along(&self, axis: Axis, tag: BcTag, f: impl Fn(ArrayView1<f64>, ArrayViewMut1<f64>)) -> Self {
        let mut out = Array2::zeros(self.domain.shape());
        Zip::from(out.lanes_mut(axis)).and(self.data.lanes(axis)).for_each(|o, i| f(i, o));
        self.with_data(tag, out)
    }

    /// Summation-by-parts first derivative in x.
    pub fn ddx(&self) -> ScalarField {
        let d = self.domain.dx;
        self.along(Axis(0), BcTag::Free, |i, o| sbp_diff(i, o, d))
    }

    /// Summation-by-parts first derivative in z.
    pub fn ddz(&self) -> ScalarField {
        let d = self.domain.dz;
        self.along(Axis(1), BcTag::Free, |i, o| sbp_diff(i, o, d))
    }

    /// Second-order x-derivative with one-sided boundary stencils; not
    /// summation-by-parts.
    pub fn ddx_accurate(&self) -> ScalarField {
        let d = self.domain.dx;
        self.along(Axis(0), BcTag::Free, |i, o| accurate_diff(i, o, d))
    }

    /// Second-order z-derivative with one-sided boundary stencils.
    pub fn ddz_accurate(&self) -> ScalarField {
        let d = self.domain.dz;
        self.along(Axis(1), BcTag::Free, |i, o| accurate_diff(i, o, d))
    }

    fn closures(&self) -> Result<([Closure; 2], [Closure; 2])> {
        let p = self.domain.physics();
        match self.tag {
            BcTag::Velocity => Ok((
                [Closure::Dirichlet, Closure::Dirichlet],
                [Closure::Dirichlet, Closure::Robin(p.alpha_v)],
            )),
            BcTag::Temperature => Ok((
                [Closure::Neumann, Closure::Neumann],
                [Closure::Neumann, Closure::Robin(p.alpha_t)],
            )),
            BcTag::Free => Err(Error::BcMismatch(
                "second derivatives need a velocity or temperature tag".into(),
            )),
        }
    }

    fn zero_dirichlet_nodes(&self, data: &mut Array2<f64>) {
        if self.tag == BcTag::Velocity {
            mask_dirichlet(&self.domain, data);
        }
    }

    /// Second x-difference with the boundary closure of the tag.
    pub fn dxx_closed(&self) -> Result<ScalarField> {
        let ([lo, hi], _) = self.closures()?;
        let d = self.domain.dx;
        let mut f = self.along(Axis(0), self.tag, |i, o| closed_second(i, o, d, lo, hi));
        self.zero_dirichlet_nodes(&mut f.data);
        Ok(f)
    }

    /// Second z-difference with the boundary closure of the tag (the surface
    /// Robin condition eliminates the ghost node).
    pub fn dzz_closed(&self) -> Result<ScalarField> {
        let (_, [lo, hi]) = self.closures()?;
        let d = self.domain.dz;
        let mut f = self.along(Axis(1), self.tag, |i, o| closed_second(i, o, d, lo, hi));
        self.zero_dirichlet_nodes(&mut f.data);
        Ok(f)
    }

    /// Five-point Laplacian with boundary closures. Velocity Dirichlet nodes
    /// are returned as zero.
    pub fn laplacian(&self) -> Result<ScalarField> {
        let mut f = self.dxx_closed()?;
        f.data += &self.dzz_closed()?.data;
        Ok(f)
    }

    /// `int_z^0 phi dz` by cumulative trapezoid from the surface.
    pub fn integral_from_surface(&self) -> ScalarField {
        let d = self.domain.dz;
        self.along(Axis(1), BcTag::Free, |inp, mut out| {
            let n = inp.len() - 1;
            out[n] = 0.0;
            for j in (0..n).rev() {
                out[j] = out[j + 1] + 0.5 * d * (inp[j] + inp[j + 1]);
            }
        })
    }

    /// `sum_j wz_j sum_i (Delta_x a)(Delta_x b) / dx`, the x-part of the Dirichlet form.
    pub fn grad_x_form(&self, other: &ScalarField) -> f64 {
        let d = &self.domain;
        let mut s = 0.0;
        for i in 0..d.nx() {
            let (a0, a1) = (self.data.row(i), self.data.row(i + 1));
            let (b0, b1) = (other.data.row(i), other.data.row(i + 1));
            for j in 0..=d.nz() {
                s += d.wz[j] * (a1[j] - a0[j]) * (b1[j] - b0[j]);
            }
        }
        s / d.dx
    }

    /// z-part of the Dirichlet form.
    pub fn grad_z_form(&self, other: &ScalarField) -> f64 {
        let d = &self.domain;
        let mut s = 0.0;
        for (i, (a, b)) in self.data.outer_iter().zip(other.data.outer_iter()).enumerate() {
            let mut col = 0.0;
            for j in 0..d.nz() {
                col += (a[j + 1] - a[j]) * (b[j + 1] - b[j]);
            }
            s += d.wx[i] * col;
        }
        s / d.dz
    }

    /// Discrete `|grad phi|^2`.
    pub fn grad_norm_sq(&self) -> f64 {
        self.grad_x_form(self) + self.grad_z_form(self)
    }

    /// Squared discrete `H^2` norm: the field, both first derivatives and the
    /// three second derivatives, using second-order one-sided boundary stencils.
    pub fn h2_norm_sq(&self) -> f64 {
        let dx = self.domain.dx;
        let dz = self.domain.dz;
        let fx = self.along(Axis(0), BcTag::Free, |i, o| accurate_diff(i, o, dx));
        let fz = self.along(Axis(1), BcTag::Free, |i, o| accurate_diff(i, o, dz));
        let fxx = self.along(Axis(0), BcTag::Free, |i, o| accurate_second(i, o, dx));
        let fzz = self.along(Axis(1), BcTag::Free, |i, o| accurate_second(i, o, dz));
        let fxz = fx.along(Axis(1), BcTag::Free, |i, o| accurate_diff(i, o, dz));
        [self, &fx, &fz, &fxx, &fzz, &fxz].iter().map(|f| f.inner_unchecked(f)).sum()
    }

    /// Largest absolute value on velocity Dirichlet nodes.
    pub fn dirichlet_residual(&self) -> f64 {
        let d = &self.domain;
        let mut m = 0.0_f64;
        for ((i, j), v) in self.data.indexed_iter() {
            if d.is_dirichlet(i, j) {
                m = m.max(v.abs());
            }
        }
        m
    }

    /// Orthogonal projection onto velocity fields with zero vertical mean:
    /// Dirichlet nodes are zeroed and the column mean over the remaining
    /// nodes is removed.
    pub fn velocity_projection(&self) -> ScalarField {
        let d = &self.domain;
        let mut data = self.data.clone();
        mask_dirichlet(d, &mut data);
        let wfree = d.free_column_weight();
        for mut col in data.outer_iter_mut().skip(1).take(d.nx() - 1) {
            let m = col.dot(&d.wz) / wfree;
            for j in 1..=d.nz() {
                col[j] -= m;
            }
        }
        self.with_data(BcTag::Velocity, data)
    }
}

pub(crate) fn mask_dirichlet(d: &Domain, data: &mut Array2<f64>) {
    let nx = d.nx();
    data.row_mut(0).fill(0.0);
    data.row_mut(nx).fill(0.0);
    data.column_mut(0).fill(0.0);
}

/// Prognostic state `(u, v, T)`.
#[derive(Clone, Debug)]
pub struct StateField {
    pub u: ScalarField,
    pub v: ScalarField,
    pub t: ScalarField,
}

/// Relative tolerance used when checking the vertical-mean constraint.
pub const CONSTRAINT_TOL: f64 = 1e-12;

impl StateField {
    pub fn zeros(domain: &Arc<Domain>) -> Self {
        StateField {
            u: ScalarField::zeros(domain, BcTag::Velocity),
            v: ScalarField::zeros(domain, BcTag::Velocity),
            t: ScalarField::zeros(domain, BcTag::Temperature),
        }
    }

    /// Builds a state, checking grids and tags. The constraint is not checked;
    /// use [`StateField::project_h`] or [`StateField::check_constraint`].
    pub fn new(u: ScalarField, v: ScalarField, t: ScalarField) -> Result<Self> {
        u.check(&v)?;
        u.check(&t)?;
        if u.tag != BcTag::Velocity || v.tag != BcTag::Velocity {
            return Err(Error::BcMismatch("u and v must carry the velocity tag".into()));
        }
        if t.tag != BcTag::Temperature {
            return Err(Error::BcMismatch("T must carry the temperature tag".into()));
        }
        Ok(StateField { u, v, t })
    }

    /// Builds a state from three analytic profiles.
    pub fn from_fns(
        domain: &Arc<Domain>,
        u: impl Fn(f64, f64) -> f64,
        v: impl Fn(f64, f64) -> f64,
        t: impl Fn(f64, f64) -> f64,
    ) -> Self {
        StateField {
            u: ScalarField::from_fn(domain, BcTag::Velocity, u),
            v: ScalarField::from_fn(domain, BcTag::Velocity, v),
            t: ScalarField::from_fn(domain, BcTag::Temperature, t),
        }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        self.u.domain()
    }

    pub fn components(&self) -> [&ScalarField; 3] {
        [&self.u, &self.v, &self.t]
    }

    pub fn components_mut(&mut self) -> [&mut ScalarField; 3] {
        [&mut self.u, &mut self.v, &mut self.t]
    }

    pub(crate) fn check(&self, other: &StateField) -> Result<()> {
        self.u.check(&other.u)
    }

    /// Largest column integral of `u`, relative to `h max|u|`.
    pub fn constraint_residual(&self) -> f64 {
        let scale = self.domain().depth() * self.u.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        self.u.column_integrals().iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale
    }

    pub fn check_constraint(&self) -> Result<()> {
        let r = self.constraint_residual();
        if r > CONSTRAINT_TOL {
            Err(Error::ConstraintViolated { residual: r })
        } else {
            Ok(())
        }
    }

    /// `(Q u, v, T)`.
    pub fn project_h(&self) -> StateField {
        StateField { u: self.u.fluctuation(), v: self.v.clone(), t: self.t.clone() }
    }

    /// Orthogonal projection onto the space the eigenbasis spans: velocity
    /// zero on the side walls and bottom, `u` with zero vertical mean.
    pub fn project_v(&self) -> StateField {
        let mut v = self.v.data.clone();
        mask_dirichlet(self.domain(), &mut v);
        StateField {
            u: self.u.velocity_projection(),
            v: self.v.with_data(BcTag::Velocity, v),
            t: self.t.clone(),
        }
    }

    /// Largest velocity value on Dirichlet nodes.
    pub fn dirichlet_residual(&self) -> f64 {
        self.u.dirichlet_residual().max(self.v.dirichlet_residual())
    }

    pub fn scaled(&self, a: f64) -> StateField {
        StateField { u: self.u.scaled(a), v: self.v.scaled(a), t: self.t.scaled(a) }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &StateField) -> Result<StateField> {
        Ok(StateField {
            u: self.u.axpy(a, &other.u)?,
            v: self.v.axpy(a, &other.v)?,
            t: self.t.axpy(a, &other.t)?,
        })
    }

    pub fn add_assign_scaled(&mut self, a: f64, other: &StateField) {
        self.u.data.scaled_add(a, &other.u.data);
        self.v.data.scaled_add(a, &other.v.data);
        self.t.data.scaled_add(a, &other.t.data);
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite() && self.t.is_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.u.max_abs().max(self.v.max_abs()).max(self.t.max_abs())
    }

    /// `H` inner product (unit weight on temperature).
    pub fn inner_h(&self, other: &StateField) -> Result<f64> {
        self.check(other)?;
        Ok(self.u.inner_unchecked(&other.u)
            + self.v.inner_unchecked(&other.v)
            + self.t.inner_unchecked(&other.t))
    }

    pub fn norm_h_sq(&self) -> f64 {
        self.u.inner_unchecked(&self.u) + self.v.inner_unchecked(&self.v) + self.t.inner_unchecked(&self.t)
    }

    pub fn norm_h(&self) -> f64 {
        self.norm_h_sq().sqrt()
    }

    /// `V` inner product: viscous and diffusive Dirichlet forms plus the
    /// surface Robin terms.
    pub fn inner_v(&self, other: &StateField) -> Result<f64> {
        self.check(other)?;
        let p = *self.domain().physics();
        let form = |a: &ScalarField, b: &ScalarField| a.grad_x_form(b) + a.grad_z_form(b);
        let vel = form(&self.u, &other.u)
            + form(&self.v, &other.v)
            + p.alpha_v * (self.u.surface_inner(&other.u)? + self.v.surface_inner(&other.v)?);
        let tem = form(&self.t, &other.t) + p.alpha_t * self.t.surface_inner(&other.t)?;
        Ok(p.nu * vel + p.mu * tem)
    }

    pub fn norm_v_sq(&self) -> f64 {
        self.inner_v(self).unwrap_or(f64::NAN)
    }

    pub fn norm_v(&self) -> f64 {
        self.norm_v_sq().sqrt()
    }

    /// Squared discrete `H^2` norm, summed over components.
    pub fn norm_h2_sq(&self) -> f64 {
        self.u.h2_norm_sq() + self.v.h2_norm_sq() + self.t.h2_norm_sq()
    }

    pub fn norm_h2(&self) -> f64 {
        self.norm_h2_sq().sqrt()
    }

    /// Flattened `[u; v; T]` in row-major node order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.components().iter().flat_map(|c| c.data.iter().copied()).collect()
    }

    pub fn from_slice(domain: &Arc<Domain>, values: &[f64]) -> Result<Self> {
        let n = domain.node_count();
        if values.len() != 3 * n {
            return Err(Error::arg("flattened state has the wrong length"));
        }
        let shape = domain.shape();
        let part = |k: usize, tag| {
            let a = Array2::from_shape_vec(shape, values[k * n..(k + 1) * n].to_vec()).expect("shape");
            ScalarField { domain: domain.clone(), tag, data: a }
        };
        Ok(StateField {
            u: part(0, BcTag::Velocity),
            v: part(1, BcTag::Velocity),
            t: part(2, BcTag::Temperature),
        })
    }
}

/// Random field generators used by probes, tests and initial conditions.
pub mod sampling {
    use super::*;
    use std::f64::consts::PI;

    /// Smooth state that satisfies every boundary condition of the operator
    /// domain: `u` and `v` vanish on the walls and bottom, all components obey
    /// the surface Robin conditions, `T` has zero normal derivative on walls
    /// and bottom, and `u` has zero vertical mean on the grid. Each component
    /// is a sum of `order x order` separable trigonometric profiles with
    /// polynomial corrections; coefficients are uniform in
    /// `[-amplitude, amplitude]`.
    pub fn smooth_state<R: Rng + ?Sized>(
        domain: &Arc<Domain>,
        rng: &mut R,
        order: usize,
        amplitude: f64,
    ) -> StateField {
        let l = domain.length();
        let h = domain.depth();
        let p = *domain.physics();
        let order = order.max(1);
        let mut draw = || -> Vec<f64> {
            (0..order * order).map(|_| amplitude * rng.random_range(-1.0..1.0)).collect()
        };
        let (cu, cv, ct) = (draw(), draw(), draw());
        let (av, at) = (p.alpha_v, p.alpha_t);

        // u profiles: sin(q pi s/h) + a1 s/h + a2 (s/h)^2 with zero mean and
        // the Robin condition at s = h.
        let u_fix: Vec<(f64, f64)> = (1..=order)
            .map(|q| {
                let k = q as f64 * PI / h;
                let mean = (1.0 - (q as f64 * PI).cos()) / (q as f64 * PI);
                let robin = k * (q as f64 * PI).cos();
                let (m11, m12, m21, m22) = (0.5, 1.0 / 3.0, 1.0 / h + av, 2.0 / h + av);
                let det = m11 * m22 - m12 * m21;
                let a1 = (-mean * m22 + robin * m12) / det;
                let a2 = (-robin * m11 + mean * m21) / det;
                (a1, a2)
            })
            .collect();
        let zeta_u = |q: usize, s: f64| {
            let (a1, a2) = u_fix[q - 1];
            let r = s / h;
            (q as f64 * PI * r).sin() + a1 * r + a2 * r * r
        };
        let zeta_v = |q: usize, s: f64| {
            let sign = if q % 2 == 1 { 1.0 } else { -1.0 };
            let b = -av * sign / (1.0 / h + av);
            ((q as f64 - 0.5) * PI * s / h).sin() + b * s / h
        };
        let chi_t = |q: usize, s: f64| {
            let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
            let a = -at * sign / (2.0 / h + at);
            let r = s / h;
            (q as f64 * PI * r).cos() + a * r * r
        };
        let mut u = ScalarField::from_fn(domain, BcTag::Velocity, |x, z| {
            let mut acc = 0.0;
            for pp in 1..=order {
                let sx = (pp as f64 * PI * x / l).sin();
                for q in 1..=order {
                    acc += cu[(pp - 1) * order + q - 1] * sx * zeta_u(q, z + h);
                }
            }
            acc
        });
        let v = ScalarField::from_fn(domain, BcTag::Velocity, |x, z| {
            let mut acc = 0.0;
            for pp in 1..=order {
                let sx = (pp as f64 * PI * x / l).sin();
                for q in 1..=order {
                    acc += cv[(pp - 1) * order + q - 1] * sx * zeta_v(q, z + h);
                }
            }
            acc
        });
        let t = ScalarField::from_fn(domain, BcTag::Temperature, |x, z| {
            let mut acc = 0.0;
            for pp in 0..order {
                let cx = (pp as f64 * PI * x / l).cos();
                for q in 0..order {
                    acc += ct[pp * order + q] * cx * chi_t(q, z + h);
                }
            }
            acc
        });
        enforce_mean_smoothly(&mut u);
        mask_dirichlet(domain, &mut u.data);
        let mut v = v;
        mask_dirichlet(domain, &mut v.data);
        StateField { u, v, t }
    }

    /// Removes the discrete column mean of `u` with a profile linear in depth
    /// that vanishes at the bottom, so smoothness is preserved.
    pub fn enforce_mean_smoothly(u: &mut ScalarField) {
        let d = u.domain().clone();
        let h = d.depth();
        let r: Vec<f64> = d.zs.iter().map(|z| (z + h) / h).collect();
        let rw: f64 = r.iter().zip(d.wz.iter()).map(|(a, b)| a * b).sum();
        let ints = u.column_integrals();
        for (mut col, m) in u.data.outer_iter_mut().zip(ints.iter()) {
            for j in 0..col.len() {
                col[j] -= m * r[j] / rw;
            }
        }
    }

    /// Independent uniform node values projected onto the eigenbasis space.
    pub fn rough_state<R: Rng + ?Sized>(domain: &Arc<Domain>, rng: &mut R, amplitude: f64) -> StateField {
        let mut gen = |tag| {
            let data = Array2::from_shape_fn(domain.shape(), |_| amplitude * rng.random_range(-1.0..1.0));
            ScalarField { domain: domain.clone(), tag, data }
        };
        let u = gen(BcTag::Velocity);
        let v = gen(BcTag::Velocity);
        let t = gen(BcTag::Temperature);
        StateField { u, v, t }.project_v()
    }
}
