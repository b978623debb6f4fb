//! Stacked LSTM with a linear head on the final hidden state, with full BPTT.
//!
//! Gate rows are stored in the order input, forget, candidate, output. Each
//! layer keeps one weight matrix of shape `4H × (in + H)` acting on `[x_t; h_{t-1}]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

impl Dims {
    /// 24 inputs, two layers of 64, 4 approaches × 5 features × 6 steps out.
    pub fn standard() -> Self {
        Self {
            input: 24,
            hidden: 64,
            layers: 2,
            output: 120,
        }
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input
        } else {
            self.hidden
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerOffsets {
    w: usize,
    b: usize,
    input: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    layers: Vec<LayerOffsets>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(d: &Dims) -> Self {
        let gates = 4 * d.hidden;
        let mut offset = 0;
        let layers = (0..d.layers)
            .map(|l| {
                let input = d.layer_input(l);
                let w = offset;
                offset += gates * (input + d.hidden);
                let b = offset;
                offset += gates;
                LayerOffsets { w, b, input }
            })
            .collect();
        let head_w = offset;
        offset += d.output * d.hidden;
        let head_b = offset;
        offset += d.output;
        Self {
            layers,
            head_w,
            head_b,
            total: offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmModel {
    dims: Dims,
    layout: Layout,
    params: Vec<f64>,
}

/// Per-layer activations kept for the backward pass.
struct LayerTrace {
    /// `[x_t; h_{t-1}]` per step
    z: Vec<f64>,
    /// activated gates i, f, g, o per step
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl LstmModel {
    pub fn zeros(dims: Dims) -> Self {
        let layout = Layout::new(&dims);
        Self {
            params: vec![0.0; layout.total],
            dims,
            layout,
        }
    }

    /// Uniform ±1/√hidden, forget-gate bias 1.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut model = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dims.hidden as f64).sqrt();
        for p in model.params.iter_mut() {
            *p = rng.random_range(-bound..bound);
        }
        let h = dims.hidden;
        for l in 0..dims.layers {
            let b = model.layout.layers[l].b;
            model.params[b + h..b + 2 * h].fill(1.0);
        }
        model
    }

    pub fn from_params(dims: Dims, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&dims);
        if params.len() != layout.total {
            return Err(Error::Weights(format!(
                "expected {} parameters for {dims:?}, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Weights("non-finite parameter".into()));
        }
        Ok(Self { dims, layout, params })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(W, b)` of layer `l`; `W` is `4H × (in + H)` row-major.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let o = self.layout.layers[l];
        let gates = 4 * self.dims.hidden;
        (
            &self.params[o.w..o.w + gates * (o.input + self.dims.hidden)],
            &self.params[o.b..o.b + gates],
        )
    }

    /// `(W_o, b_o)`; `W_o` is `output × H` row-major.
    pub fn head(&self) -> (&[f64], &[f64]) {
        let (d, l) = (&self.dims, &self.layout);
        (
            &self.params[l.head_w..l.head_w + d.output * d.hidden],
            &self.params[l.head_b..l.head_b + d.output],
        )
    }

    pub fn head_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let (d, l) = (self.dims, &self.layout);
        let (front, back) = self.params.split_at_mut(l.head_b);
        (&mut front[l.head_w..l.head_w + d.output * d.hidden], &mut back[..d.output])
    }

    /// Named tensors in storage order, for persistence.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let d = &self.dims;
        let mut out = Vec::new();
        for l in 0..d.layers {
            let (w, b) = self.layer(l);
            out.push((format!("layer{l}.w"), vec![4 * d.hidden, d.layer_input(l) + d.hidden], w));
            out.push((format!("layer{l}.b"), vec![4 * d.hidden], b));
        }
        let (w, b) = self.head();
        out.push(("head.w".into(), vec![d.output, d.hidden], w));
        out.push(("head.b".into(), vec![d.output], b));
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let d = self.dims.input;
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return Err(Error::Numeric(format!("input length {} is not a multiple of {d}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input".into()));
        }
        Ok(x.len() / d)
    }

    /// Run the sequence `x` (`steps × input`, row-major) and return the head output.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let steps = self.check_input(x)?;
        let (_, out) = self.run(x, steps, false);
        Ok(out)
    }

    fn run(&self, x: &[f64], steps: usize, keep: bool) -> (Vec<LayerTrace>, Vec<f64>) {
        let h = self.dims.hidden;
        let g4 = 4 * h;
        let mut traces = Vec::with_capacity(self.dims.layers);
        let mut seq: Vec<f64> = x.to_vec();
        for (l, o) in self.layout.layers.iter().enumerate() {
            let (w, b) = self.layer(l);
            let zin = o.input + h;
            let mut tr = LayerTrace {
                z: Vec::with_capacity(if keep { steps * zin } else { 0 }),
                gates: Vec::with_capacity(if keep { steps * g4 } else { 0 }),
                c: Vec::with_capacity(steps * h),
                tanh_c: Vec::with_capacity(if keep { steps * h } else { 0 }),
                h: Vec::with_capacity(steps * h),
            };
            let mut z = vec![0.0; zin];
            let mut a = vec![0.0; g4];
            let mut c_prev = vec![0.0; h];
            let mut h_prev = vec![0.0; h];
            for t in 0..steps {
                z[..o.input].copy_from_slice(&seq[t * o.input..(t + 1) * o.input]);
                z[o.input..].copy_from_slice(&h_prev);
                for r in 0..g4 {
                    a[r] = b[r] + dot(&w[r * zin..(r + 1) * zin], &z);
                }
                for j in 0..h {
                    a[j] = sigmoid(a[j]);
                    a[h + j] = sigmoid(a[h + j]);
                    a[2 * h + j] = a[2 * h + j].tanh();
                    a[3 * h + j] = sigmoid(a[3 * h + j]);
                }
                for j in 0..h {
                    let c = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
                    let tc = c.tanh();
                    c_prev[j] = c;
                    h_prev[j] = a[3 * h + j] * tc;
                    if keep {
                        tr.tanh_c.push(tc);
                    }
                }
                if keep {
                    tr.z.extend_from_slice(&z);
                    tr.gates.extend_from_slice(&a);
                    tr.c.extend_from_slice(&c_prev);
                }
                tr.h.extend_from_slice(&h_prev);
            }
            seq = tr.h.clone();
            traces.push(tr);
        }
        let last = &seq[(steps - 1) * h..steps * h];
        let (wo, bo) = self.head();
        let out = (0..self.dims.output)
            .map(|r| bo[r] + dot(&wo[r * h..(r + 1) * h], last))
            .collect();
        (traces, out)
    }

    /// Squared error `Σ (ŷ - y)²` for one sequence; adds `scale · ∂/∂θ` of it into `grad`.
    pub fn accumulate_gradient(&self, x: &[f64], y: &[f64], scale: f64, grad: &mut [f64]) -> Result<f64> {
        let steps = self.check_input(x)?;
        if y.len() != self.dims.output {
            return Err(Error::Numeric(format!("target length {} != {}", y.len(), self.dims.output)));
        }
        debug_assert_eq!(grad.len(), self.layout.total);
        let (traces, out) = self.run(x, steps, true);
        let h = self.dims.hidden;
        let g4 = 4 * h;

        let mut sse = 0.0;
        let dout: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(p, t)| {
                let e = p - t;
                sse += e * e;
                2.0 * e * scale
            })
            .collect();

        // Head.
        let top = traces.last().expect("at least one layer");
        let last_h = &top.h[(steps - 1) * h..steps * h];
        let (wo, _) = self.head();
        let mut dh_ext = vec![0.0; steps * h];
        {
            let (hw, hb) = (self.layout.head_w, self.layout.head_b);
            for (r, &d) in dout.iter().enumerate() {
                grad[hb + r] += d;
                axpy(d, last_h, &mut grad[hw + r * h..hw + (r + 1) * h]);
                axpy(d, &wo[r * h..(r + 1) * h], &mut dh_ext[(steps - 1) * h..]);
            }
        }

        // Layers, top to bottom.
        for (l, o) in self.layout.layers.iter().enumerate().rev() {
            let tr = &traces[l];
            let (w, _) = self.layer(l);
            let zin = o.input + h;
            let mut dx = vec![0.0; steps * o.input];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut da = vec![0.0; g4];
            let mut dz = vec![0.0; zin];
            for t in (0..steps).rev() {
                let gates = &tr.gates[t * g4..(t + 1) * g4];
                let tanh_c = &tr.tanh_c[t * h..(t + 1) * h];
                for j in 0..h {
                    let (i, f, g, og) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let c_prev = if t > 0 { tr.c[(t - 1) * h + j] } else { 0.0 };
                    let dh = dh_ext[t * h + j] + dh_next[j];
                    let dc = dc_next[j] + dh * og * (1.0 - tanh_c[j] * tanh_c[j]);
                    da[j] = dc * g * i * (1.0 - i);
                    da[h + j] = dc * c_prev * f * (1.0 - f);
                    da[2 * h + j] = dc * i * (1.0 - g * g);
                    da[3 * h + j] = dh * tanh_c[j] * og * (1.0 - og);
                    dc_next[j] = dc * f;
                }
                let z = &tr.z[t * zin..(t + 1) * zin];
                dz.fill(0.0);
                for (r, &d) in da.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grad[o.b + r] += d;
                    axpy(d, z, &mut grad[o.w + r * zin..o.w + (r + 1) * zin]);
                    axpy(d, &w[r * zin..(r + 1) * zin], &mut dz);
                }
                dx[t * o.input..(t + 1) * o.input].copy_from_slice(&dz[..o.input]);
                dh_next.copy_from_slice(&dz[o.input..]);
            }
            dh_ext = dx;
        }
        Ok(sse)
    }
}
