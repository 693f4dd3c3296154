//! The curl-div operator `M = I + ∇×∇× − ∇∇·` on interior-face unknowns, its
//! low end of spectrum, and the M-orthogonal projection onto the span of the
//! first N eigenvectors.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::{Axis, VoxelDomain};
use crate::error::{Error, Result};
use crate::fields::{FaceField, VectorPotentialField};
use crate::solvers::conjugate_gradient;

/// Symmetric matrix in compressed-row form (both triangles stored).
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        });
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match r.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[k])] = self.vals[k];
            }
        }
        m
    }
}

/// `M` restricted to interior faces.
///
/// `matrix` is the strong-form operator `I + K`; the bilinear form is
/// `(Mu, v) = mass · uᵀ matrix v` with the uniform diagonal mass `V`.
#[derive(Clone, Debug)]
pub struct CurlDivOperator {
    domain: Arc<VoxelDomain>,
    /// Flat face index (into a `FaceField`'s data) of each unknown.
    pub dofs: Vec<usize>,
    pub matrix: CsrMatrix,
    pub mass: f64,
}

impl CurlDivOperator {
    pub fn domain(&self) -> &Arc<VoxelDomain> {
        &self.domain
    }

    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    pub fn gather(&self, a: &VectorPotentialField) -> Vec<f64> {
        self.dofs.iter().map(|&f| a.data[f]).collect()
    }

    pub fn scatter(&self, x: &[f64]) -> VectorPotentialField {
        let mut a = FaceField::zeros(&self.domain);
        for (&f, &v) in self.dofs.iter().zip(x) {
            a.data[f] = v;
        }
        a
    }

    /// `(Mu, v)` for face fields.
    pub fn form(&self, u: &VectorPotentialField, v: &VectorPotentialField) -> f64 {
        let x = self.gather(u);
        let mut mx = vec![0.0; x.len()];
        self.matrix.matvec(&x, &mut mx);
        self.mass * mx.iter().zip(self.gather(v)).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn apply(&self, u: &VectorPotentialField) -> VectorPotentialField {
        let x = self.gather(u);
        let mut y = vec![0.0; x.len()];
        self.matrix.matvec(&x, &mut y);
        self.scatter(&y)
    }
}

/// Assembles `M` from its curl rows (one per interior edge) and divergence
/// rows (one per inside cell): `K = Σ cᵀc + Σ dᵀd`. Boundary curl data is
/// taken as zero.
pub fn assemble_m(domain: &Arc<VoxelDomain>) -> CurlDivOperator {
    assemble(domain, true)
}

/// `I + ∇×∇×` without the grad-div part.
pub fn assemble_curl_curl(domain: &Arc<VoxelDomain>) -> CurlDivOperator {
    assemble(domain, false)
}

fn assemble(domain: &Arc<VoxelDomain>, graddiv: bool) -> CurlDivOperator {
    let dom = domain.as_ref();
    let probe: FaceField<f64> = FaceField::zeros(domain);
    let mut dof_of = vec![usize::MAX; probe.data.len()];
    let mut dofs = Vec::new();
    for ax in Axis::ALL {
        for f in 0..dom.num_faces(ax) {
            if dom.face_is_interior(ax, f) {
                let flat = probe.offset(ax) + f;
                dof_of[flat] = dofs.len();
                dofs.push(flat);
            }
        }
    }
    let h = dom.spacing();
    let n = dofs.len();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
    let add_outer = |rows: &mut Vec<Vec<(usize, f64)>>, stencil: &[(usize, f64)]| {
        for &(i, ci) in stencil {
            for &(j, cj) in stencil {
                rows[i].push((j, ci * cj));
            }
        }
    };
    for ax in Axis::ALL {
        let (b, c) = ax.transverse();
        for e in 0..dom.num_edges(ax) {
            if !dom.edge_is_interior(ax, e) {
                continue;
            }
            let p = dom.edge_coords(ax, e);
            let mut pb = p;
            pb[b.index()] -= 1;
            let mut pc = p;
            pc[c.index()] -= 1;
            let (ib, ic) = (1.0 / h[b.index()], 1.0 / h[c.index()]);
            let f = |axis: Axis, q: [usize; 3]| dof_of[probe.offset(axis) + dom.face_index(axis, q[0], q[1], q[2])];
            let st = [
                (f(c, p), ib),
                (f(c, pb), -ib),
                (f(b, p), -ic),
                (f(b, pc), ic),
            ];
            add_outer(&mut rows, &st);
        }
    }
    for &cell in dom.inside_cells().iter().filter(|_| graddiv) {
        let p = dom.cell_coords(cell);
        let mut st = Vec::with_capacity(6);
        for ax in Axis::ALL {
            let ih = 1.0 / h[ax.index()];
            let lo = probe.offset(ax) + dom.face_index(ax, p[0], p[1], p[2]);
            let mut q = p;
            q[ax.index()] += 1;
            let hi = probe.offset(ax) + dom.face_index(ax, q[0], q[1], q[2]);
            if dof_of[lo] != usize::MAX {
                st.push((dof_of[lo], -ih));
            }
            if dof_of[hi] != usize::MAX {
                st.push((dof_of[hi], ih));
            }
        }
        add_outer(&mut rows, &st);
    }
    CurlDivOperator {
        domain: domain.clone(),
        dofs,
        matrix: CsrMatrix::from_rows(rows),
        mass: dom.cell_volume(),
    }
}

/// How eigenpairs are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense for small problems where N is a large fraction of the unknowns,
    /// iterative otherwise.
    Auto,
    Iterative,
    Dense,
}

/// Largest unknown count handed to the dense eigensolver.
pub const DENSE_LIMIT: usize = 3000;

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub method: EigenMethod,
    pub shift: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            method: EigenMethod::Auto,
            shift: 1.0,
            tol: 1e-9,
            max_iter: 300,
            inner_tol: 1e-12,
            seed: 0x5eed,
        }
    }
}

/// First N eigenpairs of `M`, mass-orthonormal: `V · a_iᵀ a_j = δ_ij`.
#[derive(Clone, Debug)]
pub struct GalerkinBasis {
    domain: Arc<VoxelDomain>,
    pub dofs: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// Column-per-mode coefficient vectors over the interior-face unknowns.
    pub vectors: Vec<Vec<f64>>,
    pub mass: f64,
    pub orthonormality: f64,
    pub max_residual: f64,
}

impl GalerkinBasis {
    pub fn domain(&self) -> &Arc<VoxelDomain> {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    /// Leading `n` modes; nested, so `truncate(n) ⊂ truncate(n+1)`.
    pub fn truncate(&self, n: usize) -> Result<GalerkinBasis> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!("cannot truncate a {}-mode basis to {n}", self.len())));
        }
        let mut b = self.clone();
        b.eigenvalues.truncate(n);
        b.vectors.truncate(n);
        Ok(b)
    }

    pub fn mode(&self, i: usize) -> VectorPotentialField {
        let mut a = FaceField::zeros(&self.domain);
        for (&f, &v) in self.dofs.iter().zip(&self.vectors[i]) {
            a.data[f] = v;
        }
        a
    }

    /// `Σ c_i a_i`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> VectorPotentialField {
        let mut x = vec![0.0; self.dof_count()];
        for (c, v) in coeffs.iter().zip(&self.vectors) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += c * vi;
            }
        }
        let mut a = FaceField::zeros(&self.domain);
        for (&f, &v) in self.dofs.iter().zip(&x) {
            a.data[f] = v;
        }
        a
    }

    /// Mass pairings `(u, a_i)` for every mode.
    pub fn mass_pairings(&self, u: &VectorPotentialField) -> Vec<f64> {
        let x: Vec<f64> = self.dofs.iter().map(|&f| u.data[f]).collect();
        self.vectors
            .iter()
            .map(|v| self.mass * v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

fn mass_normalize(v: &mut [f64], mass: f64) {
    let n = (mass * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Fixes each vector's sign so its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn finish_basis(op: &CurlDivOperator, mut pairs: Vec<(f64, Vec<f64>)>) -> GalerkinBasis {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, v) in pairs.iter_mut() {
        mass_normalize(v, op.mass);
        canonical_sign(v);
    }
    let n = pairs.len();
    let mut ortho = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let g = op.mass * pairs[i].1.iter().zip(&pairs[j].1).map(|(a, b)| a * b).sum::<f64>();
            let target = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((g - target).abs());
        }
    }
    let mut max_res = 0.0f64;
    let mut mv = vec![0.0; op.dof_count()];
    for (lam, v) in &pairs {
        op.matrix.matvec(v, &mut mv);
        let r = mv.iter().zip(v).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        max_res = max_res.max(r / (lam * vn));
    }
    GalerkinBasis {
        domain: op.domain.clone(),
        dofs: op.dofs.clone(),
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        vectors: pairs.into_iter().map(|p| p.1).collect(),
        mass: op.mass,
        orthonormality: ortho,
        max_residual: max_res,
    }
}

/// Dense symmetric eigensolve of the assembled matrix; the test oracle.
pub fn dense_eigenpairs(op: &CurlDivOperator, n: usize) -> Result<GalerkinBasis> {
    let dof = op.dof_count();
    if n == 0 || n > dof {
        return Err(Error::invalid(format!("requested {n} modes of {dof} unknowns")));
    }
    if dof > DENSE_LIMIT {
        return Err(Error::invalid(format!("dense eigensolve limited to {DENSE_LIMIT} unknowns, got {dof}")));
    }
    let eig = SymmetricEigen::new(op.matrix.to_dense());
    let mut order: Vec<usize> = (0..dof).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let pairs = order[..n]
        .iter()
        .map(|&k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
        .collect();
    Ok(finish_basis(op, pairs))
}

/// Euclidean modified Gram–Schmidt, twice for stability.
fn orthonormalize(vs: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..vs.len() {
            for j in 0..i {
                let d: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
                let (lo, hi) = vs.split_at_mut(i);
                for (x, y) in hi[0].iter_mut().zip(&lo[j]) {
                    *x -= d * y;
                }
            }
            let n = vs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            vs[i].iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Block shift-invert subspace iteration with Rayleigh–Ritz extraction.
pub fn iterative_eigenpairs(op: &CurlDivOperator, n: usize, opts: &EigenOptions) -> Result<GalerkinBasis> {
    let dof = op.dof_count();
    if n == 0 || n > dof {
        return Err(Error::invalid(format!("requested {n} modes of {dof} unknowns")));
    }
    let p = (n + (n / 2).max(8)).min(dof);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..p).map(|_| (0..dof).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    orthonormalize(&mut x);
    let shifted_diag: Vec<f64> = op.matrix.diagonal().iter().map(|d| d - opts.shift).collect();
    let mut res_max = f64::INFINITY;
    let mut theta = vec![0.0; p];
    for _ in 0..opts.max_iter {
        // Y = (M − σ)⁻¹ X, warm-started from X/(θ − σ)
        let solves: Vec<Result<Vec<f64>>> = x
            .par_iter()
            .zip(theta.par_iter())
            .map(|(xi, &th)| {
                let scale = if th > opts.shift { 1.0 / (th - opts.shift) } else { 0.0 };
                let mut y: Vec<f64> = xi.iter().map(|v| v * scale).collect();
                conjugate_gradient(
                    |u, out| {
                        op.matrix.matvec(u, out);
                        for (o, ui) in out.iter_mut().zip(u) {
                            *o -= opts.shift * ui;
                        }
                    },
                    &shifted_diag,
                    xi,
                    &mut y,
                    opts.inner_tol,
                    20 * dof.max(50),
                )?;
                Ok(y)
            })
            .collect();
        let mut y = solves.into_iter().collect::<Result<Vec<_>>>()?;
        orthonormalize(&mut y);
        let my: Vec<Vec<f64>> = y
            .iter()
            .map(|v| {
                let mut o = vec![0.0; dof];
                op.matrix.matvec(v, &mut o);
                o
            })
            .collect();
        let h = DMatrix::from_fn(p, p, |i, j| {
            let a: f64 = y[i].iter().zip(&my[j]).map(|(a, b)| a * b).sum();
            let b: f64 = y[j].iter().zip(&my[i]).map(|(a, b)| a * b).sum();
            0.5 * (a + b)
        });
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut new_x = Vec::with_capacity(p);
        let mut new_mx = Vec::with_capacity(p);
        for &k in &order {
            let mut v = vec![0.0; dof];
            let mut mv = vec![0.0; dof];
            for j in 0..p {
                let c = eig.eigenvectors[(j, k)];
                for i in 0..dof {
                    v[i] += c * y[j][i];
                    mv[i] += c * my[j][i];
                }
            }
            new_x.push(v);
            new_mx.push(mv);
        }
        theta = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        res_max = (0..n)
            .map(|i| {
                let r = new_mx[i].iter().zip(&new_x[i]).map(|(a, b)| (a - theta[i] * b).powi(2)).sum::<f64>().sqrt();
                r / theta[i].abs()
            })
            .fold(0.0, f64::max);
        x = new_x;
        if res_max <= opts.tol {
            let pairs = theta.iter().copied().zip(x).take(n).collect();
            return Ok(finish_basis(op, pairs));
        }
    }
    Err(Error::numerical(
        format!("subspace iteration did not converge in {} sweeps", opts.max_iter),
        res_max,
    ))
}

/// The `n` smallest eigenpairs of `M`, nondecreasing.
pub fn eigenbasis_m(op: &CurlDivOperator, n: usize, opts: &EigenOptions) -> Result<GalerkinBasis> {
    let dof = op.dof_count();
    match opts.method {
        EigenMethod::Dense => dense_eigenpairs(op, n),
        EigenMethod::Iterative => iterative_eigenpairs(op, n, opts),
        EigenMethod::Auto if dof <= DENSE_LIMIT && 4 * n >= dof => dense_eigenpairs(op, n),
        EigenMethod::Auto => iterative_eigenpairs(op, n, opts),
    }
}

/// M-orthogonal projection onto the span of the basis.
#[derive(Clone, Debug)]
pub struct Projection {
    pub coeffs: Vec<f64>,
    pub field: VectorPotentialField,
}

/// `c_i = (M A0, a_i) / λ_i`, which is the M-orthogonal projection because
/// `(M a_i, a_j) = λ_i δ_ij`.
pub fn project_onto_xn(a0: &VectorPotentialField, basis: &GalerkinBasis) -> Result<Projection> {
    if a0.domain().content_hash() != basis.domain.content_hash() {
        return Err(Error::invalid("field and basis live on different domains"));
    }
    let op = assemble_m(&basis.domain);
    let x = op.gather(a0);
    let mut mx = vec![0.0; x.len()];
    op.matrix.matvec(&x, &mut mx);
    let coeffs: Vec<f64> = basis
        .vectors
        .iter()
        .zip(&basis.eigenvalues)
        .map(|(v, lam)| basis.mass * v.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>() / lam)
        .collect();
    let field = basis.reconstruct(&coeffs);
    Ok(Projection { coeffs, field })
}

const BASIS_MAGIC: &[u8; 8] = b"TDGLBAS1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisTolerances {
    pub eig_tol: f64,
    pub orthonormality: f64,
    pub max_residual: f64,
}

/// Binary container: magic, domain hash, N, unknown count, tolerances, then
/// eigenvalues and eigenvectors as little-endian f64.
pub fn write_basis(path: &Path, basis: &GalerkinBasis, eig_tol: f64) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * basis.len() * (basis.dof_count() + 1));
    buf.extend_from_slice(BASIS_MAGIC);
    buf.extend_from_slice(&basis.domain.content_hash());
    buf.extend_from_slice(&(basis.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(basis.dof_count() as u64).to_le_bytes());
    for t in [eig_tol, basis.orthonormality, basis.max_residual] {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for &l in &basis.eigenvalues {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for v in &basis.vectors {
        for &x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_basis(path: &Path, domain: &Arc<VoxelDomain>) -> Result<(GalerkinBasis, BasisTolerances)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Record(format!("{}: {m}", path.display()));
    if bytes.len() < 80 || &bytes[..8] != BASIS_MAGIC {
        return Err(bad("not a basis file"));
    }
    if bytes[8..40] != domain.content_hash() {
        return Err(bad("basis was computed on a different domain"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (n, dof) = (u64_at(40), u64_at(48));
    let tol = BasisTolerances {
        eig_tol: f64_at(56),
        orthonormality: f64_at(64),
        max_residual: f64_at(72),
    };
    let header = 80;
    if bytes.len() != header + 8 * n * (dof + 1) {
        return Err(bad("truncated payload"));
    }
    let op = assemble_m(domain);
    if op.dof_count() != dof {
        return Err(bad("unknown count does not match the domain"));
    }
    let eigenvalues = (0..n).map(|i| f64_at(header + 8 * i)).collect();
    let base = header + 8 * n;
    let vectors = (0..n)
        .map(|i| (0..dof).map(|j| f64_at(base + 8 * (i * dof + j))).collect())
        .collect();
    Ok((
        GalerkinBasis {
            domain: domain.clone(),
            dofs: op.dofs,
            eigenvalues,
            vectors,
            mass: op.mass,
            orthonormality: tol.orthonormality,
            max_residual: tol.max_residual,
        },
        tol,
    ))
}
