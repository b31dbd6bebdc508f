//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three interactive pieces: the receptive-field footprint for a chosen
//! depth, the one-dimensional posterior fusion curves, and a toy denoiser
//! that trains live on a synthetic texture.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: blindspot::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Footprint {
    inner: demo::FootprintImage,
}

#[wasm_bindgen]
impl Footprint {
    /// Probe image side in pixels.
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.inner.size
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.inner.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.inner.height
    }

    #[wasm_bindgen(getter)]
    pub fn center(&self) -> f64 {
        self.inner.center
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.inner.rgba.clone()
    }
}

/// Gradient footprint of the center output for a network of `depth`.
#[wasm_bindgen]
pub fn receptive_field(depth: usize, seeds: u32) -> Result<Footprint, JsError> {
    demo::footprint(depth, seeds).map(|inner| Footprint { inner }).map_err(js)
}

/// `[xs, prior, likelihood, posterior]` densities, each `n` long.
#[wasm_bindgen]
pub fn fusion_curves(
    mu: f64,
    prior_std: f64,
    y: f64,
    noise_std: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    demo::fusion_curves(mu, prior_std, y, noise_std, lo, hi, n).map_err(js)
}

/// `[posterior mean, posterior variance]`.
#[wasm_bindgen]
pub fn fusion(mu: f64, prior_std: f64, y: f64, noise_std: f64) -> Result<Vec<f64>, JsError> {
    demo::fusion(mu, prior_std, y, noise_std)
        .map(|(m, p)| vec![m, p])
        .map_err(js)
}

#[wasm_bindgen]
pub struct ToyDenoiser {
    inner: demo::Toy,
}

#[wasm_bindgen]
impl ToyDenoiser {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, sigma: f64) -> Result<ToyDenoiser, JsError> {
        demo::Toy::new(seed as u64, sigma).map(|inner| ToyDenoiser { inner }).map_err(js)
    }

    pub fn train(&mut self, steps: u32) -> Result<f64, JsError> {
        self.inner.train(steps).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn step(&self) -> f64 {
        self.inner.steps_done() as f64
    }

    #[wasm_bindgen(getter)]
    pub fn total(&self) -> f64 {
        self.inner.total_steps() as f64
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        demo::TOY_SIZE
    }

    /// RGBA bytes for `clean`, `noisy`, `posterior` or `mean`.
    pub fn rgba(&mut self, kind: &str) -> Result<Vec<u8>, JsError> {
        self.inner.image(kind).map(demo::to_rgba).map_err(js)
    }

    pub fn psnr(&mut self, kind: &str) -> Result<f64, JsError> {
        self.inner.psnr(kind).map_err(js)
    }
}
