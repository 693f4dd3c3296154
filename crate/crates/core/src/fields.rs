//! Grid fields on the staggered layout: scalars at cell centers, vector
//! components on faces, curl data on edges. Storage spans the full bounding
//! grid; entries outside the domain (and boundary-normal face values of the
//! vector potential) are held at zero.

use num_complex::Complex64;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

use crate::domain::{Axis, VoxelDomain};

/// Real or complex grid values.
pub trait Scalar:
    Copy
    + Default
    + PartialEq
    + Send
    + Sync
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Mul<f64, Output = Self>
    + Mul<Output = Self>
    + 'static
{
    fn conj(self) -> Self;
    fn abs2(self) -> f64;
    fn zero() -> Self {
        Self::default()
    }
    fn from_real(x: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn abs2(self) -> f64 {
        self * self
    }
    #[inline]
    fn from_real(x: f64) -> Self {
        x
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    #[inline]
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

fn offsets(sizes: [usize; 3]) -> [usize; 4] {
    [0, sizes[0], sizes[0] + sizes[1], sizes[0] + sizes[1] + sizes[2]]
}

/// Scalar field at cell centers.
#[derive(Clone, Debug)]
pub struct CenterField<T: Scalar> {
    domain: Arc<VoxelDomain>,
    pub values: Vec<T>,
}

pub type OrderParameterField = CenterField<Complex64>;
pub type ScalarField = CenterField<f64>;

impl<T: Scalar> PartialEq for CenterField<T> {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl<T: Scalar> CenterField<T> {
    pub fn zeros(domain: &Arc<VoxelDomain>) -> Self {
        CenterField {
            domain: domain.clone(),
            values: vec![T::zero(); domain.num_cells()],
        }
    }

    pub fn constant(domain: &Arc<VoxelDomain>, v: T) -> Self {
        Self::from_fn(domain, |_| v)
    }

    /// Evaluates `f` at inside cell centers; outside cells stay zero.
    pub fn from_fn(domain: &Arc<VoxelDomain>, mut f: impl FnMut([f64; 3]) -> T) -> Self {
        let mut out = Self::zeros(domain);
        for &c in domain.inside_cells() {
            out.values[c] = f(domain.cell_center(c));
        }
        out
    }

    pub fn from_values(domain: &Arc<VoxelDomain>, mut values: Vec<T>) -> Self {
        assert_eq!(values.len(), domain.num_cells(), "center field length");
        for (c, v) in values.iter_mut().enumerate() {
            if !domain.mask()[c] {
                *v = T::zero();
            }
        }
        CenterField {
            domain: domain.clone(),
            values,
        }
    }

    pub fn domain(&self) -> &Arc<VoxelDomain> {
        &self.domain
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += xv * a;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v = *v * a;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for &c in self.domain.inside_cells() {
            out.values[c] = f(self.values[c]);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.domain
            .inside_cells()
            .iter()
            .map(|&c| self.values[c].abs2().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Field with one component per face, grouped by face axis.
#[derive(Clone, Debug)]
pub struct FaceField<T: Scalar> {
    domain: Arc<VoxelDomain>,
    pub data: Vec<T>,
    offsets: [usize; 4],
}

/// Real vector potential; boundary-normal faces are zero.
pub type VectorPotentialField = FaceField<f64>;

impl<T: Scalar> PartialEq for FaceField<T> {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl<T: Scalar> FaceField<T> {
    pub fn zeros(domain: &Arc<VoxelDomain>) -> Self {
        let off = offsets([
            domain.num_faces(Axis::X),
            domain.num_faces(Axis::Y),
            domain.num_faces(Axis::Z),
        ]);
        FaceField {
            domain: domain.clone(),
            data: vec![T::zero(); off[3]],
            offsets: off,
        }
    }

    /// Samples `f(axis, x)` on interior faces only, so the normal trace vanishes.
    pub fn from_fn_interior(domain: &Arc<VoxelDomain>, mut f: impl FnMut(Axis, [f64; 3]) -> T) -> Self {
        let mut out = Self::zeros(domain);
        for ax in Axis::ALL {
            for fi in 0..domain.num_faces(ax) {
                if domain.face_is_interior(ax, fi) {
                    *out.at_mut(ax, fi) = f(ax, domain.face_center(ax, fi));
                }
            }
        }
        out
    }

    /// Samples `f(axis, x)` on every face touching an inside cell.
    pub fn from_fn_all(domain: &Arc<VoxelDomain>, mut f: impl FnMut(Axis, [f64; 3]) -> T) -> Self {
        let mut out = Self::zeros(domain);
        for ax in Axis::ALL {
            for fi in 0..domain.num_faces(ax) {
                if domain.face_inside_count(ax, fi) > 0 {
                    *out.at_mut(ax, fi) = f(ax, domain.face_center(ax, fi));
                }
            }
        }
        out
    }

    pub fn from_data(domain: &Arc<VoxelDomain>, data: Vec<T>) -> Self {
        let mut out = Self::zeros(domain);
        assert_eq!(data.len(), out.data.len(), "face field length");
        out.data = data;
        out
    }

    pub fn domain(&self) -> &Arc<VoxelDomain> {
        &self.domain
    }

    #[inline]
    pub fn comp(&self, ax: Axis) -> &[T] {
        let a = ax.index();
        &self.data[self.offsets[a]..self.offsets[a + 1]]
    }

    #[inline]
    pub fn comp_mut(&mut self, ax: Axis) -> &mut [T] {
        let a = ax.index();
        &mut self.data[self.offsets[a]..self.offsets[a + 1]]
    }

    #[inline]
    pub fn at(&self, ax: Axis, f: usize) -> T {
        self.data[self.offsets[ax.index()] + f]
    }

    #[inline]
    pub fn at_mut(&mut self, ax: Axis, f: usize) -> &mut T {
        &mut self.data[self.offsets[ax.index()] + f]
    }

    pub fn offset(&self, ax: Axis) -> usize {
        self.offsets[ax.index()]
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (y, &xv) in self.data.iter_mut().zip(&x.data) {
            *y += xv * a;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v = *v * a;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Zeroes every face that is not interior (enforces A·n = 0).
    pub fn mask_interior(&mut self) {
        let dom = self.domain.clone();
        for ax in Axis::ALL {
            let c = self.comp_mut(ax);
            for (fi, v) in c.iter_mut().enumerate() {
                if !dom.face_is_interior(ax, fi) {
                    *v = T::zero();
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Real field with one component per grid edge.
#[derive(Clone, Debug)]
pub struct EdgeField {
    domain: Arc<VoxelDomain>,
    pub data: Vec<f64>,
    offsets: [usize; 4],
}

impl PartialEq for EdgeField {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl EdgeField {
    pub fn zeros(domain: &Arc<VoxelDomain>) -> Self {
        let off = offsets([
            domain.num_edges(Axis::X),
            domain.num_edges(Axis::Y),
            domain.num_edges(Axis::Z),
        ]);
        EdgeField {
            domain: domain.clone(),
            data: vec![0.0; off[3]],
            offsets: off,
        }
    }

    pub fn domain(&self) -> &Arc<VoxelDomain> {
        &self.domain
    }

    #[inline]
    pub fn at(&self, ax: Axis, e: usize) -> f64 {
        self.data[self.offsets[ax.index()] + e]
    }

    #[inline]
    pub fn at_mut(&mut self, ax: Axis, e: usize) -> &mut f64 {
        &mut self.data[self.offsets[ax.index()] + e]
    }

    pub fn comp(&self, ax: Axis) -> &[f64] {
        let a = ax.index();
        &self.data[self.offsets[a]..self.offsets[a + 1]]
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (y, &x) in out.data.iter_mut().zip(&other.data) {
            *y -= x;
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Externally applied magnetic field.
#[derive(Clone, Debug, PartialEq)]
pub enum AppliedField {
    Uniform([f64; 3]),
    /// Tabulated samples: the face-normal components (used for the
    /// divergence check) and the edge-tangential components (used by the
    /// curl boundary condition and the ∇×H source).
    Sampled {
        faces: FaceField<f64>,
        edges: EdgeField,
        divergence_free: bool,
    },
}

impl AppliedField {
    pub fn zero() -> Self {
        AppliedField::Uniform([0.0; 3])
    }

    pub fn is_zero(&self) -> bool {
        match self {
            AppliedField::Uniform(h) => h.iter().all(|&v| v == 0.0),
            AppliedField::Sampled { edges, .. } => edges.data.iter().all(|&v| v == 0.0),
        }
    }

    /// Tangential samples of H on every edge touching the domain.
    pub fn edge_samples(&self, domain: &Arc<VoxelDomain>) -> EdgeField {
        match self {
            AppliedField::Uniform(h) => {
                let mut e = EdgeField::zeros(domain);
                for ax in Axis::ALL {
                    for ei in 0..domain.num_edges(ax) {
                        if domain.edge_inside_count(ax, ei) > 0 {
                            *e.at_mut(ax, ei) = h[ax.index()];
                        }
                    }
                }
                e
            }
            AppliedField::Sampled { edges, .. } => edges.clone(),
        }
    }

    /// Normal samples of H on every face touching the domain.
    pub fn face_samples(&self, domain: &Arc<VoxelDomain>) -> FaceField<f64> {
        match self {
            AppliedField::Uniform(h) => FaceField::from_fn_all(domain, |ax, _| h[ax.index()]),
            AppliedField::Sampled { faces, .. } => faces.clone(),
        }
    }

    pub fn divergence_free_flag(&self) -> bool {
        match self {
            AppliedField::Uniform(_) => true,
            AppliedField::Sampled {
                divergence_free, ..
            } => *divergence_free,
        }
    }
}
