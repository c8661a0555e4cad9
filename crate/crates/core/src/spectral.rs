//! Eigenbasis of the dissipative operator and the Galerkin projections built
//! on it.
//!
//! `A` is block diagonal in `(u, v, T)`. Each block is `W^-1 K` with `W` the
//! diagonal trapezoid mass and `K` the stiffness of the Dirichlet form, so
//! it is self-adjoint for the weighted inner product. The `u` block is
//! further restricted to fields with zero vertical mean.
//!
//! Two solvers produce the same discrete eigenpairs:
//!
//! * [`EigenMethod::Separable`] uses that every block is a Kronecker sum of a
//!   1-D x-operator and a 1-D z-operator (the mean constraint acts on z only),
//!   and solves the 1-D problems densely.
//! * [`EigenMethod::Dense`] assembles each full block and solves it densely,
//!   after conjugating the `u` block with the mean-removal projector and
//!   discarding its null modes. It is cubic in the node count, so keep it to
//!   grids of about 24 x 24 or less.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::domain::{Domain, StateField};
use crate::error::{Error, Result};
use crate::operators::apply_a;

/// Relative threshold below which `u`-block eigenvalues are treated as the
/// null modes introduced by the mean constraint.
pub const NULL_MODE_THRESHOLD: f64 = 1e-8;

/// Diagonal block of `A` a mode belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Block {
    U,
    V,
    T,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::U, Block::V, Block::T];

    fn index(self) -> usize {
        match self {
            Block::U => 0,
            Block::V => 1,
            Block::T => 2,
        }
    }

    fn code(self) -> u8 {
        self.index() as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        Block::ALL.get(c as usize).copied().ok_or_else(|| Error::Format("bad block code".into()))
    }

    pub fn name(self) -> &'static str {
        ["u", "v", "T"][self.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigenMethod {
    Separable,
    Dense,
}

/// A 1-D generalized eigenproblem `K phi = lambda W phi` on a grid line,
/// eigenvectors `W`-orthonormal, sorted ascending.
#[derive(Clone, Debug)]
struct LineModes {
    /// Node indices of the line that carry unknowns.
    nodes: Vec<usize>,
    lambdas: Vec<f64>,
    /// One row per mode, values on `nodes`.
    vectors: Vec<Vec<f64>>,
}

/// Solves `K phi = lambda W phi`, optionally on the subspace orthogonal
/// (in `W`) to the given constraint vectors.
fn generalized_eigen(k: &DMatrix<f64>, w: &[f64], constraints: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = w.len();
    let sq: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut m = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / (sq[i] * sq[j]));
    if !constraints.is_empty() {
        let mut pr = DMatrix::<f64>::identity(n, n);
        for c in constraints {
            // W^-1/2 c in the symmetrized coordinates is W^1/2 (c / w) = c / sqrt(w);
            // for a constraint sum_j w_j phi_j the direction is sqrt(w).
            let e: Vec<f64> = c.iter().zip(&sq).map(|(ci, s)| ci * s).collect();
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    pr[(i, j)] -= e[i] * e[j] / (norm * norm);
                }
            }
        }
        m = &pr * &m * &pr;
    }
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let mut lambdas = Vec::new();
    let mut vectors = Vec::new();
    for idx in order {
        let lam = eig.eigenvalues[idx];
        if !constraints.is_empty() && lam.abs() < NULL_MODE_THRESHOLD * lmax {
            continue;
        }
        let y = eig.eigenvectors.column(idx);
        let mut phi: Vec<f64> = (0..n).map(|i| y[i] / sq[i]).collect();
        // deterministic sign: first entry of largest magnitude is positive
        let pivot = phi.iter().fold(0.0_f64, |m, v| if v.abs() > m.abs() + 1e-12 { *v } else { m });
        if pivot < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        lambdas.push(lam.max(0.0));
        vectors.push(phi);
    }
    Ok((lambdas, vectors))
}

/// Stiffness of `sum_cells (Delta phi)^2 / d` on a line with `n + 1` nodes,
/// restricted to `nodes`, plus a Robin term at the last node.
fn line_stiffness(n: usize, d: f64, nodes: &[usize], robin_top: f64) -> DMatrix<f64> {
    let mut full = DMatrix::<f64>::zeros(n + 1, n + 1);
    for c in 0..n {
        full[(c, c)] += 1.0 / d;
        full[(c + 1, c + 1)] += 1.0 / d;
        full[(c, c + 1)] -= 1.0 / d;
        full[(c + 1, c)] -= 1.0 / d;
    }
    full[(n, n)] += robin_top;
    DMatrix::from_fn(nodes.len(), nodes.len(), |a, b| full[(nodes[a], nodes[b])])
}

fn line_modes(n: usize, d: f64, weights: &Array1<f64>, nodes: Vec<usize>, robin_top: f64, mean_free: bool) -> Result<LineModes> {
    let k = line_stiffness(n, d, &nodes, robin_top);
    let w: Vec<f64> = nodes.iter().map(|&i| weights[i]).collect();
    let constraints = if mean_free { vec![vec![1.0; nodes.len()]] } else { vec![] };
    let (lambdas, vectors) = generalized_eigen(&k, &w, &constraints)?;
    Ok(LineModes { nodes, lambdas, vectors })
}

/// A mode before it is materialized on the grid.
struct Candidate {
    lambda: f64,
    block: Block,
    key: (usize, usize),
}

/// Orthonormal eigenbasis, sorted by eigenvalue across the three blocks.
///
/// Mode `k` has a single nonzero component given by `blocks[k]`.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    domain: Arc<Domain>,
    pub lambdas: Vec<f64>,
    pub blocks: Vec<Block>,
    /// Node values of each mode's nonzero component, row-major.
    modes: Vec<Array1<f64>>,
    /// Same values multiplied by the quadrature weights.
    weighted: Vec<Array1<f64>>,
}

impl EigenBasis {
    /// Builds the `n_max` lowest eigenpairs (all of them for `None`).
    pub fn build(domain: &Arc<Domain>, n_max: Option<usize>, method: EigenMethod) -> Result<Self> {
        if n_max == Some(0) {
            return Err(Error::arg("n_max must be positive"));
        }
        let (modes, lambdas, blocks) = match method {
            EigenMethod::Separable => separable(domain, n_max)?,
            EigenMethod::Dense => dense(domain, n_max)?,
        };
        let (mx, mz) = domain.shape();
        let w = Array1::from_shape_fn(mx * mz, |k| domain.wx[k / mz] * domain.wz[k % mz]);
        let weighted = modes.iter().map(|m| m * &w).collect();
        Ok(EigenBasis { domain: domain.clone(), lambdas, blocks, modes, weighted })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Keeps only the first `n` modes.
    pub fn truncated(&self, n: usize) -> EigenBasis {
        let n = n.min(self.len());
        EigenBasis {
            domain: self.domain.clone(),
            lambdas: self.lambdas[..n].to_vec(),
            blocks: self.blocks[..n].to_vec(),
            modes: self.modes[..n].to_vec(),
            weighted: self.weighted[..n].to_vec(),
        }
    }

    /// Mode `k` as a state.
    pub fn mode(&self, k: usize) -> StateField {
        let mut s = StateField::zeros(&self.domain);
        let shape = self.domain.shape();
        let data = Array2::from_shape_vec(shape, self.modes[k].to_vec()).expect("shape");
        match self.blocks[k] {
            Block::U => s.u.data = data,
            Block::V => s.v.data = data,
            Block::T => s.t.data = data,
        }
        s
    }

    /// `<state, Phi_k>_H` for `k < n`.
    pub fn project_coeffs(&self, state: &StateField, n: usize) -> Vec<f64> {
        let views: [Vec<f64>; 3] = [
            state.u.data.iter().copied().collect(),
            state.v.data.iter().copied().collect(),
            state.t.data.iter().copied().collect(),
        ];
        (0..n.min(self.len()))
            .map(|k| {
                let c = &views[self.blocks[k].index()];
                self.weighted[k].iter().zip(c).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Coefficients against every mode.
    pub fn project(&self, state: &StateField) -> Vec<f64> {
        self.project_coeffs(state, self.len())
    }

    /// Random state `sum_k amplitude xi_k (lambda_1 / lambda_k)^decay Phi_k`
    /// over all modes, with independent standard normal `xi_k`.
    pub fn spectral_state<R: Rng + ?Sized>(&self, rng: &mut R, amplitude: f64, decay: f64) -> StateField {
        let l0 = self.lambdas[0];
        let c: Vec<f64> = self
            .lambdas
            .iter()
            .map(|l| {
                let xi: f64 = rng.sample(StandardNormal);
                amplitude * xi * (l0 / l).powf(decay)
            })
            .collect();
        self.synthesize(&c)
    }

    /// `sum_k c_k Phi_k` over the first `c.len()` modes.
    pub fn synthesize(&self, coeffs: &[f64]) -> StateField {
        let n = self.domain.node_count();
        let mut acc = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (k, c) in coeffs.iter().enumerate().take(self.len()) {
            if *c == 0.0 {
                continue;
            }
            let dst = &mut acc[self.blocks[k].index()];
            for (d, m) in dst.iter_mut().zip(self.modes[k].iter()) {
                *d += c * m;
            }
        }
        let mut all = Vec::with_capacity(3 * n);
        for a in acc {
            all.extend(a);
        }
        StateField::from_slice(&self.domain, &all).expect("length")
    }

    /// `P_n U`.
    pub fn project_pn(&self, state: &StateField, n: usize) -> StateField {
        self.synthesize(&self.project_coeffs(state, n))
    }

    /// `Q_n U = U - P_n U`.
    pub fn project_qn(&self, state: &StateField, n: usize) -> StateField {
        state.axpy(-1.0, &self.project_pn(state, n)).expect("same grid")
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn gram_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.len() {
            for j in i..self.len() {
                if self.blocks[i] != self.blocks[j] {
                    continue;
                }
                let g: f64 = self.weighted[i].iter().zip(self.modes[j].iter()).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Largest relative deviation of `<A Phi_k, Phi_k>` from `lambda_k`.
    pub fn rayleigh_residual(&self) -> f64 {
        (0..self.len())
            .map(|k| {
                let m = self.mode(k);
                let r = apply_a(&m).inner_h(&m).unwrap();
                (r - self.lambdas[k]).abs() / self.lambdas[k].abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// Checks `||Q_n U||^2 <= |A U|^2 / lambda_{n+1}`.
    pub fn poincare_check(&self, state: &StateField, n: usize) -> Result<PoincareCheck> {
        if n >= self.len() {
            return Err(Error::arg("Poincare check needs n + 1 modes"));
        }
        let lhs = self.project_qn(state, n).norm_v_sq();
        let rhs = apply_a(state).norm_h_sq() / self.lambdas[n];
        Ok(PoincareCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-10) + 1e-14 })
    }

    /// Eigenvalues as CSV (`index,block,lambda`).
    pub fn lambdas_csv(&self) -> String {
        let mut s = String::from("index,block,lambda\n");
        for (k, (l, b)) in self.lambdas.iter().zip(&self.blocks).enumerate() {
            s.push_str(&format!("{},{},{:.17e}\n", k + 1, b.name(), l));
        }
        s
    }

    /// Little-endian binary export: magic, version, grid and physics header,
    /// then per mode a block code, the eigenvalue and the node values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let spec = &self.domain.spec;
        out.write_all(EIGEN_MAGIC)?;
        out.write_all(&EIGEN_VERSION.to_le_bytes())?;
        out.write_all(&(spec.nx as u32).to_le_bytes())?;
        out.write_all(&(spec.nz as u32).to_le_bytes())?;
        for v in [spec.length, spec.depth, spec.physics.nu, spec.physics.mu, spec.physics.alpha_v, spec.physics.alpha_t] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(self.len() as u32).to_le_bytes())?;
        for k in 0..self.len() {
            out.write_all(&[self.blocks[k].code()])?;
            out.write_all(&self.lambdas[k].to_le_bytes())?;
            for v in self.modes[k].iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a basis written by [`EigenBasis::write_binary`] for `domain`.
    pub fn read_binary<R: Read>(domain: &Arc<Domain>, mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != EIGEN_MAGIC {
            return Err(Error::Format("not an eigenbasis file".into()));
        }
        let ver = read_u32(&mut input)?;
        if ver != EIGEN_VERSION {
            return Err(Error::Format(format!("unsupported eigenbasis version {ver}")));
        }
        let nx = read_u32(&mut input)? as usize;
        let nz = read_u32(&mut input)? as usize;
        let mut hdr = [0.0; 6];
        for v in hdr.iter_mut() {
            *v = read_f64(&mut input)?;
        }
        let spec = &domain.spec;
        let expect = [spec.length, spec.depth, spec.physics.nu, spec.physics.mu, spec.physics.alpha_v, spec.physics.alpha_t];
        if nx != spec.nx || nz != spec.nz || hdr != expect {
            return Err(Error::Format("eigenbasis file does not match the domain".into()));
        }
        let n = read_u32(&mut input)? as usize;
        let g = domain.node_count();
        let mut lambdas = Vec::with_capacity(n);
        let mut blocks = Vec::with_capacity(n);
        let mut modes = Vec::with_capacity(n);
        for _ in 0..n {
            let mut code = [0u8; 1];
            input.read_exact(&mut code)?;
            blocks.push(Block::from_code(code[0])?);
            lambdas.push(read_f64(&mut input)?);
            let mut m = Array1::zeros(g);
            for v in m.iter_mut() {
                *v = read_f64(&mut input)?;
            }
            modes.push(m);
        }
        let (mx, mz) = domain.shape();
        let w = Array1::from_shape_fn(mx * mz, |k| domain.wx[k / mz] * domain.wz[k % mz]);
        let weighted = modes.iter().map(|m| m * &w).collect();
        Ok(EigenBasis { domain: domain.clone(), lambdas, blocks, modes, weighted })
    }
}

const EIGEN_MAGIC: &[u8; 8] = b"SPE2DEIG";
const EIGEN_VERSION: u32 = 1;

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Outcome of a single Poincare comparison.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PoincareCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

type Built = (Vec<Array1<f64>>, Vec<f64>, Vec<Block>);

fn select(mut cands: Vec<Candidate>, n_max: Option<usize>) -> Vec<Candidate> {
    cands.sort_by(|a, b| {
        a.lambda.total_cmp(&b.lambda).then(a.block.index().cmp(&b.block.index())).then(a.key.cmp(&b.key))
    });
    if let Some(n) = n_max {
        cands.truncate(n);
    }
    cands
}

fn separable(domain: &Arc<Domain>, n_max: Option<usize>) -> Result<Built> {
    let (nx, nz) = (domain.nx(), domain.nz());
    let p = *domain.physics();
    let x_vel = line_modes(nx, domain.dx, &domain.wx, (1..nx).collect(), 0.0, false)?;
    let x_tem = line_modes(nx, domain.dx, &domain.wx, (0..=nx).collect(), 0.0, false)?;
    let z_u = line_modes(nz, domain.dz, &domain.wz, (1..=nz).collect(), p.alpha_v, true)?;
    let z_v = line_modes(nz, domain.dz, &domain.wz, (1..=nz).collect(), p.alpha_v, false)?;
    let z_t = line_modes(nz, domain.dz, &domain.wz, (0..=nz).collect(), p.alpha_t, false)?;

    let pairs: [(Block, &LineModes, &LineModes, f64); 3] =
        [(Block::U, &x_vel, &z_u, p.nu), (Block::V, &x_vel, &z_v, p.nu), (Block::T, &x_tem, &z_t, p.mu)];
    let mut cands = Vec::new();
    for (block, xm, zm, kappa) in pairs.iter() {
        for (a, lx) in xm.lambdas.iter().enumerate() {
            for (b, lz) in zm.lambdas.iter().enumerate() {
                cands.push(Candidate { lambda: kappa * (lx + lz), block: *block, key: (a, b) });
            }
        }
    }
    let chosen = select(cands, n_max);
    let mz = nz + 1;
    let mut modes = Vec::with_capacity(chosen.len());
    for c in &chosen {
        let (_, xm, zm, _) = pairs[c.block.index()];
        let mut m = Array1::zeros(domain.node_count());
        let (xv, zv) = (&xm.vectors[c.key.0], &zm.vectors[c.key.1]);
        for (ia, &i) in xm.nodes.iter().enumerate() {
            for (jb, &j) in zm.nodes.iter().enumerate() {
                m[i * mz + j] = xv[ia] * zv[jb];
            }
        }
        modes.push(m);
    }
    Ok((modes, chosen.iter().map(|c| c.lambda).collect(), chosen.iter().map(|c| c.block).collect()))
}

fn dense(domain: &Arc<Domain>, n_max: Option<usize>) -> Result<Built> {
    let (nx, nz) = (domain.nx(), domain.nz());
    let mz = nz + 1;
    let p = *domain.physics();
    let mut cands = Vec::new();
    let mut store: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 3];
    let mut node_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 3];
    for block in Block::ALL {
        let nodes: Vec<(usize, usize)> = match block {
            Block::T => (0..=nx).flat_map(|i| (0..=nz).map(move |j| (i, j))).collect(),
            _ => (1..nx).flat_map(|i| (1..=nz).map(move |j| (i, j))).collect(),
        };
        let (kappa, alpha) = if block == Block::T { (p.mu, p.alpha_t) } else { (p.nu, p.alpha_v) };
        let pos = |i: usize, j: usize| nodes.iter().position(|&q| q == (i, j));
        let n = nodes.len();
        let mut k = DMatrix::<f64>::zeros(n, n);
        let mut add = |a: (usize, usize), b: (usize, usize), v: f64| {
            if let (Some(ia), Some(ib)) = (pos(a.0, a.1), pos(b.0, b.1)) {
                k[(ia, ib)] += v;
            }
        };
        for i in 0..=nx {
            for j in 0..=nz {
                if i < nx {
                    let c = domain.wz[j] / domain.dx;
                    add((i, j), (i, j), c);
                    add((i + 1, j), (i + 1, j), c);
                    add((i, j), (i + 1, j), -c);
                    add((i + 1, j), (i, j), -c);
                }
                if j < nz {
                    let c = domain.wx[i] / domain.dz;
                    add((i, j), (i, j), c);
                    add((i, j + 1), (i, j + 1), c);
                    add((i, j), (i, j + 1), -c);
                    add((i, j + 1), (i, j), -c);
                }
            }
            add((i, nz), (i, nz), alpha * domain.wx[i]);
        }
        let w: Vec<f64> = nodes.iter().map(|&(i, j)| domain.wx[i] * domain.wz[j]).collect();
        let constraints: Vec<Vec<f64>> = if block == Block::U {
            (1..nx)
                .map(|col| nodes.iter().map(|&(i, _)| if i == col { 1.0 } else { 0.0 }).collect())
                .collect()
        } else {
            vec![]
        };
        let (lams, vecs) = generalized_eigen(&k, &w, &constraints)?;
        for (idx, lam) in lams.iter().enumerate() {
            cands.push(Candidate { lambda: kappa * lam, block, key: (idx, 0) });
        }
        store[block.index()] = vecs;
        node_lists[block.index()] = nodes;
    }
    let chosen = select(cands, n_max);
    let mut modes = Vec::with_capacity(chosen.len());
    for c in &chosen {
        let mut m = Array1::zeros(domain.node_count());
        let v = &store[c.block.index()][c.key.0];
        for (a, &(i, j)) in node_lists[c.block.index()].iter().enumerate() {
            m[i * mz + j] = v[a];
        }
        modes.push(m);
    }
    Ok((modes, chosen.iter().map(|c| c.lambda).collect(), chosen.iter().map(|c| c.block).collect()))
}

/// Convenience wrapper for [`EigenBasis::build`] with the separable solver.
pub fn build_eigenbasis(domain: &Arc<Domain>, n_max: usize) -> Result<EigenBasis> {
    EigenBasis::build(domain, Some(n_max), EigenMethod::Separable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sampling, DomainSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dom(n: usize) -> Arc<Domain> {
        DomainSpec::unit(n).build().unwrap()
    }

    #[test]
    fn separable_and_dense_agree() {
        let d = dom(8);
        let s = EigenBasis::build(&d, Some(40), EigenMethod::Separable).unwrap();
        let q = EigenBasis::build(&d, Some(40), EigenMethod::Dense).unwrap();
        for (a, b) in s.lambdas.iter().zip(&q.lambdas) {
            assert!((a - b).abs() < 1e-9 * a.max(1e-12), "{a} vs {b}");
        }
        assert!(q.gram_residual() < 1e-10);
        assert!(q.rayleigh_residual() < 1e-8);
    }

    #[test]
    fn basis_is_orthonormal_and_consistent() {
        let d = dom(12);
        let b = build_eigenbasis(&d, 60).unwrap();
        assert!(b.gram_residual() < 1e-10);
        assert!(b.rayleigh_residual() < 1e-8);
        assert!(b.lambdas.windows(2).all(|w| w[0] <= w[1]));
        for k in 0..b.len() {
            let m = b.mode(k);
            assert!(m.constraint_residual() < 1e-12);
            assert!(m.dirichlet_residual() == 0.0);
        }
    }

    #[test]
    fn doubling_keeps_leading_pairs() {
        let d = dom(10);
        let a = build_eigenbasis(&d, 20).unwrap();
        let b = build_eigenbasis(&d, 40).unwrap();
        for k in 0..20 {
            assert!((a.lambdas[k] - b.lambdas[k]).abs() < 1e-9 * a.lambdas[k]);
        }
    }

    #[test]
    fn v_block_matches_analytic_without_surface_drag() {
        let mut spec = DomainSpec::unit(64);
        spec.physics.alpha_v = 0.0;
        let d = spec.build().unwrap();
        let b = build_eigenbasis(&d, 30).unwrap();
        let k = b.blocks.iter().position(|&bl| bl == Block::V).unwrap();
        let exact = spec.physics.nu * PI * PI * (1.0 + 0.25);
        assert!((b.lambdas[k] / exact - 1.0).abs() < 0.02);
    }

    #[test]
    fn full_basis_reconstructs_admissible_states() {
        let d = dom(6);
        let b = EigenBasis::build(&d, None, EigenMethod::Separable).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sampling::rough_state(&d, &mut rng, 1.0);
        let r = b.synthesize(&b.project(&s));
        assert!(r.axpy(-1.0, &s).unwrap().norm_h() < 1e-9 * s.norm_h());
    }

    #[test]
    fn poincare_is_tight_on_next_mode() {
        let d = dom(10);
        let b = build_eigenbasis(&d, 20).unwrap();
        let chk = b.poincare_check(&b.mode(8), 8).unwrap();
        assert!((chk.lhs - chk.rhs).abs() < 1e-8 * chk.rhs);
        assert!(b.poincare_check(&StateField::zeros(&d), 8).unwrap().holds);
    }

    #[test]
    fn binary_round_trip() {
        let d = dom(6);
        let b = build_eigenbasis(&d, 10).unwrap();
        let mut buf = Vec::new();
        b.write_binary(&mut buf).unwrap();
        let c = EigenBasis::read_binary(&d, buf.as_slice()).unwrap();
        assert_eq!(b.lambdas, c.lambdas);
        assert!(EigenBasis::read_binary(&dom(8), buf.as_slice()).is_err());
        assert!(EigenBasis::read_binary(&d, &buf[..20]).is_err());
    }

    #[test]
    fn zero_modes_is_an_error() {
        assert!(EigenBasis::build(&dom(6), Some(0), EigenMethod::Separable).is_err());
    }
}
