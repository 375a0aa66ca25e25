use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GradientVector, Tensor, ACTIVATION_CLAMP};
use crate::error::{Error, Result};

/// Single-layer LSTM followed by a dense output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmTopology {
    /// Features per timestep.
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl LstmTopology {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        LstmTopology {
            input,
            hidden,
            output,
        }
    }
}

impl Default for LstmTopology {
    fn default() -> Self {
        LstmTopology::new(1, 32, 1)
    }
}

/// Network architecture. `Linear` is a bias-free linear probe on the last
/// timestep, used to check the training loop on a convex problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Lstm(LstmTopology),
    Linear { input: usize },
}

impl Default for Topology {
    fn default() -> Self {
        Topology::Lstm(LstmTopology::default())
    }
}

/// A contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(fan_in, fan_out)` for weight matrices, `None` for biases.
    pub fans: Option<(usize, usize)>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

const GATE_NAMES: [(&str, &str); 4] = [
    ("w_input_gate", "b_input_gate"),
    ("w_forget_gate", "b_forget_gate"),
    ("w_cell", "b_cell"),
    ("w_output_gate", "b_output_gate"),
];

impl Topology {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Topology::Lstm(t) if t.input == 0 || t.hidden == 0 || t.output == 0 => {
                Err(Error::InvalidTopology(format!(
                    "lstm dimensions must be positive (input={}, hidden={}, output={})",
                    t.input, t.hidden, t.output
                )))
            }
            Topology::Linear { input: 0 } => Err(Error::InvalidTopology(
                "linear input width must be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn input_width(&self) -> usize {
        match *self {
            Topology::Lstm(t) => t.input,
            Topology::Linear { input } => input,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            Topology::Lstm(t) => t.output,
            Topology::Linear { .. } => 1,
        }
    }

    /// Closed-form parameter count: `4(h(h+i)+h) + (h·o + o)` for the LSTM.
    pub fn param_count(&self) -> usize {
        match *self {
            Topology::Lstm(LstmTopology {
                input: i,
                hidden: h,
                output: o,
            }) => 4 * (h * (h + i) + h) + h * o + o,
            Topology::Linear { input } => input,
        }
    }

    /// Parameter layout. Gate weights come first (input, forget, cell,
    /// output; each `hidden × (input + hidden)` acting on `[x_t; h_{t-1}]`),
    /// then the four gate biases, then the dense weights and bias.
    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name, rows, cols, fans| {
            blocks.push(ParamBlock {
                name,
                offset,
                rows,
                cols,
                fans,
            });
            offset += rows * cols;
        };
        match *self {
            Topology::Lstm(LstmTopology {
                input: i,
                hidden: h,
                output: o,
            }) => {
                for (w, _) in GATE_NAMES {
                    push(w, h, i + h, Some((i + h, h)));
                }
                for (_, b) in GATE_NAMES {
                    push(b, h, 1, None);
                }
                push("w_dense", o, h, Some((h, o)));
                push("b_dense", o, 1, None);
            }
            Topology::Linear { input } => push("w_linear", 1, input, Some((input, 1))),
        }
        blocks
    }

    /// Rough floating-point operation count of one forward pass.
    pub fn forward_flops(&self, timesteps: usize) -> u64 {
        let f = match *self {
            Topology::Lstm(LstmTopology {
                input: i,
                hidden: h,
                output: o,
            }) => timesteps * (2 * 4 * h * (i + h) + 4 * h + 12 * h) + 2 * h * o,
            Topology::Linear { input } => 2 * input,
        };
        f as u64
    }
}

/// Trainable parameters plus the architecture and seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub topology: Topology,
    pub params: Vec<f64>,
    pub init_seed: u64,
}

/// Xavier-uniform weights, zero biases, drawn from a ChaCha8 stream seeded
/// with `seed` in layout order.
pub fn init_model(topology: Topology, seed: u64) -> Result<ModelState> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; topology.param_count()];
    for block in topology.param_blocks() {
        if let Some((fan_in, fan_out)) = block.fans {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[block.range()] {
                *p = rng.random_range(-limit..=limit);
            }
        }
    }
    Ok(ModelState {
        topology,
        params,
        init_seed: seed,
    })
}

/// Prediction for a single-output model. The recurrent state starts at zero.
pub fn forward(model: &ModelState, x: &Tensor) -> Result<f64> {
    model.require_scalar_output()?;
    Ok(model.forward_outputs(x)?[0])
}

/// Exact gradient of `loss_mse(forward(model, x), y)` with respect to every
/// parameter.
pub fn backward_per_sample(model: &ModelState, x: &Tensor, y: f64) -> Result<GradientVector> {
    Ok(model.loss_and_gradient(x, y)?.1)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP)).exp())
}

fn tanh(z: f64) -> f64 {
    z.clamp(-ACTIVATION_CLAMP, ACTIVATION_CLAMP).tanh()
}

/// Zero where the activation argument was clamped.
fn pass(z: f64) -> f64 {
    if z.abs() > ACTIVATION_CLAMP {
        0.0
    } else {
        1.0
    }
}

/// Activations kept from the forward pass for backpropagation.
struct Step {
    xh: Vec<f64>,
    /// Pre-activations, gate-major `[i, f, g, o]`.
    z: Vec<f64>,
    /// Post-activations in the same layout.
    a: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
}

impl ModelState {
    pub fn from_params(topology: Topology, params: Vec<f64>, init_seed: u64) -> Result<Self> {
        topology.validate()?;
        if params.len() != topology.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", topology.param_count()),
                got: format!("{}", params.len()),
            });
        }
        Ok(ModelState {
            topology,
            params,
            init_seed,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn require_scalar_output(&self) -> Result<()> {
        match self.topology.output_width() {
            1 => Ok(()),
            o => Err(Error::ShapeMismatch {
                expected: "a single-output model".into(),
                got: format!("{o} outputs"),
            }),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let width = self.topology.input_width();
        match x.shape() {
            [t, f] if *f == width => Ok(*t),
            s => Err(Error::ShapeMismatch {
                expected: format!("(timesteps, {width})"),
                got: format!("{s:?}"),
            }),
        }
    }

    /// All output units for input `x` of shape `(timesteps, features)`.
    pub fn forward_outputs(&self, x: &Tensor) -> Result<Vec<f64>> {
        let out = match self.topology {
            Topology::Lstm(t) => {
                let (_, h) = self.lstm_forward(t, x)?;
                self.dense(t, &h)
            }
            Topology::Linear { .. } => vec![self.linear(x)?],
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward output".into()));
        }
        Ok(out)
    }

    /// Prediction and per-parameter gradient of the squared error for one
    /// sample. Leaves the model untouched.
    pub fn loss_and_gradient(&self, x: &Tensor, y: f64) -> Result<(f64, GradientVector)> {
        self.require_scalar_output()?;
        if !y.is_finite() {
            return Err(Error::NonFinite("target".into()));
        }
        let (pred, grad) = match self.topology {
            Topology::Lstm(t) => self.lstm_backward(t, x, y)?,
            Topology::Linear { input } => {
                let pred = self.linear(x)?;
                let last = x.row(x.shape()[0] - 1);
                let dy = 2.0 * (pred - y);
                let g = (0..input).map(|j| dy * last[j]).collect();
                (pred, GradientVector(g))
            }
        };
        if !pred.is_finite() {
            return Err(Error::NonFinite("forward output".into()));
        }
        if grad.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((pred, grad))
    }

    fn linear(&self, x: &Tensor) -> Result<f64> {
        let t = self.check_input(x)?;
        Ok(x.row(t - 1)
            .iter()
            .zip(&self.params)
            .map(|(a, w)| a * w)
            .sum())
    }

    fn dense(&self, t: LstmTopology, h: &[f64]) -> Vec<f64> {
        let LstmTopology {
            input: i,
            hidden: hs,
            output: o,
        } = t;
        let w_off = 4 * hs * (i + hs) + 4 * hs;
        let b_off = w_off + o * hs;
        (0..o)
            .map(|k| {
                let row = &self.params[w_off + k * hs..w_off + (k + 1) * hs];
                self.params[b_off + k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn lstm_forward(&self, t: LstmTopology, x: &Tensor) -> Result<(Vec<Step>, Vec<f64>)> {
        let steps_n = self.check_input(x)?;
        let LstmTopology {
            input: i,
            hidden: h,
            ..
        } = t;
        let cols = i + h;
        let b_off = 4 * h * cols;
        let w = &self.params[..b_off];
        let b = &self.params[b_off..b_off + 4 * h];

        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut steps = Vec::with_capacity(steps_n);
        for s in 0..steps_n {
            let mut xh = Vec::with_capacity(cols);
            xh.extend_from_slice(x.row(s));
            xh.extend_from_slice(&h_prev);

            let z: Vec<f64> = (0..4 * h)
                .map(|r| {
                    let row = &w[r * cols..(r + 1) * cols];
                    b[r] + row.iter().zip(&xh).map(|(a, v)| a * v).sum::<f64>()
                })
                .collect();
            let a: Vec<f64> = z
                .iter()
                .enumerate()
                .map(|(r, &zr)| if r / h == 2 { tanh(zr) } else { sigmoid(zr) })
                .collect();

            let mut c = vec![0.0; h];
            let mut h_new = vec![0.0; h];
            for j in 0..h {
                c[j] = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
                h_new[j] = a[3 * h + j] * tanh(c[j]);
            }
            steps.push(Step {
                xh,
                z,
                a,
                c_prev: std::mem::replace(&mut c_prev, c.clone()),
                c,
            });
            h_prev = h_new;
        }
        Ok((steps, h_prev))
    }

    fn lstm_backward(&self, t: LstmTopology, x: &Tensor, y: f64) -> Result<(f64, GradientVector)> {
        let (steps, h_last) = self.lstm_forward(t, x)?;
        let LstmTopology {
            input: i,
            hidden: h,
            output: o,
        } = t;
        let cols = i + h;
        let gb_off = 4 * h * cols;
        let dw_off = gb_off + 4 * h;
        let db_off = dw_off + o * h;

        let pred = self.dense(t, &h_last)[0];
        let dy = 2.0 * (pred - y);
        let mut grad = vec![0.0; self.params.len()];

        // dense layer (single output)
        for j in 0..h {
            grad[dw_off + j] = dy * h_last[j];
        }
        grad[db_off] = dy;
        let mut dh: Vec<f64> = (0..h).map(|j| dy * self.params[dw_off + j]).collect();
        let mut dc = vec![0.0; h];

        let w = &self.params[..gb_off];
        let mut dz = vec![0.0; 4 * h];
        for step in steps.iter().rev() {
            let a = &step.a;
            for j in 0..h {
                let (ig, fg, gg, og) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                let tc = tanh(step.c[j]);
                let dc_j = dc[j] + dh[j] * og * (1.0 - tc * tc) * pass(step.c[j]);
                dz[j] = dc_j * gg * ig * (1.0 - ig) * pass(step.z[j]);
                dz[h + j] = dc_j * step.c_prev[j] * fg * (1.0 - fg) * pass(step.z[h + j]);
                dz[2 * h + j] = dc_j * ig * (1.0 - gg * gg) * pass(step.z[2 * h + j]);
                dz[3 * h + j] = dh[j] * tc * og * (1.0 - og) * pass(step.z[3 * h + j]);
                dc[j] = dc_j * fg;
            }
            let mut dxh = vec![0.0; cols];
            for (r, &dzr) in dz.iter().enumerate() {
                grad[gb_off + r] += dzr;
                let row = r * cols..(r + 1) * cols;
                for (g, &v) in grad[row.clone()].iter_mut().zip(&step.xh) {
                    *g += dzr * v;
                }
                for (d, &wv) in dxh.iter_mut().zip(&w[row]) {
                    *d += wv * dzr;
                }
            }
            dh.copy_from_slice(&dxh[i..]);
        }
        Ok((pred, GradientVector(grad)))
    }
}
