//! Browser demo: the random-feature kernel, the GP head's uncertainty over
//! a 2-D plane, and focal loss curves.
//!
//! The exported functions are thin wrappers over the ones in [`compute`],
//! which also run natively.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use wasm_bindgen::prelude::*;

pub mod compute;

fn js(e: gpf_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Kernel curve as rows of `[distance, exact, approximate]`, flattened.
#[wasm_bindgen]
pub fn kernel_curve(
    rff_dim: usize,
    seed: u64,
    max_distance: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    compute::kernel_curve(rff_dim, seed, max_distance, points).map_err(js)
}

/// Rows of `[p, loss, dloss/dlogit]` per gamma, flattened gamma-major.
#[wasm_bindgen]
pub fn focal_curves(gammas: Vec<f64>, points: usize) -> Result<Vec<f64>, JsError> {
    compute::focal_curves(&gammas, points).map_err(js)
}

#[wasm_bindgen]
pub struct UncertaintyField(compute::Field);

#[wasm_bindgen]
impl UncertaintyField {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.0.size
    }

    #[wasm_bindgen(getter)]
    pub fn extent(&self) -> f64 {
        self.0.extent
    }

    /// Row-major, `size * size`, top row is `y = +extent`.
    pub fn prob(&self) -> Vec<f64> {
        self.0.prob.clone()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.0.variance.clone()
    }

    /// Training points as `[x, y, label]` triples.
    pub fn points(&self) -> Vec<f64> {
        self.0.points.clone()
    }
}

/// Trains a GP-headed model on two clusters and evaluates it on a grid.
#[wasm_bindgen]
pub fn uncertainty_field(
    separation: f64,
    seed: u64,
    size: usize,
    extent: f64,
) -> Result<UncertaintyField, JsError> {
    compute::uncertainty_field(separation, seed, size, extent)
        .map(UncertaintyField)
        .map_err(js)
}
