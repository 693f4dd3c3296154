//! Browser bindings: a small live simulation with a |ψ| slice, the low
//! spectrum of M, and the norm-ratio refinement on the L-shape.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use tdgl::diagnostics::{energy, norm_ratio, singular_gradient_field};
use tdgl::dynamics::{random_psi, Gauge, PhysParams, SimState, Stepper, TimeDisc};
use tdgl::galerkin::{assemble_m, eigenbasis_m, EigenOptions};
use tdgl::{AppliedField, Axis, VectorPotentialField, VoxelDomain};

fn js_err(e: tdgl::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn domain(shape: &str, n: usize, nz: usize) -> Result<Arc<VoxelDomain>, JsValue> {
    let (counts, lengths) = ([n, n, nz], [1.0, 1.0, nz as f64 / n as f64]);
    let dom = match shape {
        "box" => VoxelDomain::build_box(counts, lengths),
        "lshape" => VoxelDomain::build_lshape(counts, lengths, [Axis::X, Axis::Y]),
        other => return Err(JsValue::from_str(&format!("unknown shape {other:?}"))),
    };
    dom.map(Arc::new).map_err(js_err)
}

#[wasm_bindgen]
pub struct Simulation {
    stepper: Stepper,
    state: SimState,
    applied: AppliedField,
    kappa: f64,
    dt: f64,
    steps: usize,
}

#[wasm_bindgen]
impl Simulation {
    /// Thin slab (`n × n × 2`), random ψ₀, field `h` along z.
    #[wasm_bindgen(constructor)]
    pub fn new(shape: &str, n: usize, kappa: f64, h: f64, dt: f64, seed: u64) -> Result<Simulation, JsValue> {
        let dom = domain(shape, n, 2)?;
        let applied = AppliedField::Uniform([0.0, 0.0, h]);
        let params = PhysParams::new(1.0, kappa, f64::INFINITY, applied.clone()).map_err(js_err)?;
        let stepper = Stepper::new(&dom, params, TimeDisc::lagged(dt), Gauge::Lorentz);
        let state = SimState::new(random_psi(&dom, seed, 1.0), VectorPotentialField::zeros(&dom));
        Ok(Simulation {
            stepper,
            state,
            applied,
            kappa,
            dt,
            steps: 0,
        })
    }

    /// Advances `k` steps.
    pub fn advance(&mut self, k: usize) -> Result<(), JsValue> {
        for _ in 0..k {
            let (next, _) = self.stepper.picard_step(&self.state, None).map_err(js_err)?;
            self.state = next;
            self.steps += 1;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn energy(&self) -> f64 {
        energy(&self.state.psi, &self.state.a, &self.applied, self.kappa).total
    }

    pub fn width(&self) -> usize {
        self.stepper.domain().counts()[0]
    }

    /// Row-major |ψ| on the bottom layer; −1 marks cells outside the domain.
    pub fn modulus_slice(&self) -> Vec<f32> {
        let dom = self.stepper.domain();
        let [nx, ny, _] = dom.counts();
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let c = dom.cell_index(i, j, 0);
                out.push(if dom.mask()[c] { self.state.psi.values[c].norm() as f32 } else { -1.0 });
            }
        }
        out
    }
}

/// Smallest `count` eigenvalues of M on an `n³` domain.
#[wasm_bindgen]
pub fn m_spectrum(shape: &str, n: usize, count: usize) -> Result<Vec<f64>, JsValue> {
    let dom = domain(shape, n, n)?;
    let basis = eigenbasis_m(&assemble_m(&dom), count, &EigenOptions::default()).map_err(js_err)?;
    Ok(basis.eigenvalues)
}

/// norm_ratio of the corner-singular gradient field on slabs with
/// `base`, `2·base`, ... cells across.
#[wasm_bindgen]
pub fn ratio_refinement(base: usize, levels: usize) -> Result<Vec<f64>, JsValue> {
    (0..levels)
        .map(|l| {
            let n = base << l;
            let dom = domain("lshape", n, 2)?;
            let a = singular_gradient_field(&dom).map_err(js_err)?;
            norm_ratio(&a).map_err(js_err)
        })
        .collect()
}
