//! Standard LSTM (input, forget, candidate and output gates; no peepholes).
//!
//! ```text
//! z = x·Wx + h·Wh + b        gate blocks ordered [i | f | g | o]
//! c' = σ(f)⊙c + σ(i)⊙tanh(g)
//! h' = σ(o)⊙tanh(c')
//! ```

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use super::linalg::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use super::{NnError, Param, Result, Tensor};
use crate::math::{sigmoid, sqrt, tanh};
use crate::seed::Rng;

#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    /// `[input, 4·hidden]`
    pub wx: Param,
    /// `[hidden, 4·hidden]`
    pub wh: Param,
    /// `[4·hidden]`
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
        }
    }
}

impl LstmCell {
    /// Uniform `±1/√H` weights, zero biases except the forget gate at 1.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / sqrt(hidden as f64);
        let mut draw = |shape: &[usize]| {
            let len = shape.iter().product();
            let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_vec(shape, data).expect("generated data matches shape")
        };
        let wx = draw(&[input, 4 * hidden]);
        let wh = draw(&[hidden, 4 * hidden]);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmCell {
            input,
            hidden,
            wx: Param::new(wx),
            wh: Param::new(wh),
            bias: Param::new(bias),
        }
    }

    /// All-zero parameters.
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            input,
            hidden,
            wx: Param::new(Tensor::zeros(&[input, 4 * hidden])),
            wh: Param::new(Tensor::zeros(&[hidden, 4 * hidden])),
            bias: Param::new(Tensor::zeros(&[4 * hidden])),
        }
    }

    /// One gated update for a single sample.
    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<LstmState> {
        let h = self.hidden;
        if x.len() != self.input || state.hidden.len() != h || state.cell.len() != h {
            return Err(NnError::ShapeMismatch {
                context: "lstm_step".into(),
                expected: vec![self.input, h, h],
                got: vec![x.len(), state.hidden.len(), state.cell.len()],
            });
        }
        let mut z = self.bias.value.data().to_vec();
        matmul_acc(x, self.wx.value.data(), &mut z, 1, self.input, 4 * h);
        matmul_acc(&state.hidden, self.wh.value.data(), &mut z, 1, h, 4 * h);
        let mut next = LstmState::zeros(h);
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let g = tanh(z[2 * h + j]);
            let o = sigmoid(z[3 * h + j]);
            let c = f * state.cell[j] + i * g;
            next.cell[j] = c;
            next.hidden[j] = o * tanh(c);
        }
        Ok(next)
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![
            ("wx", &mut self.wx),
            ("wh", &mut self.wh),
            ("bias", &mut self.bias),
        ]
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("wx", &self.wx), ("wh", &self.wh), ("bias", &self.bias)]
    }
}

/// LSTM over `[B, T, D]`, emitting `[B, T, H]` or only the final `[B, H]`.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub cell: LstmCell,
    pub return_sequences: bool,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    batch: usize,
    steps: usize,
    input: Tensor,
    // all [T, B, ·]
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hiddens: Vec<f64>,
}

impl Lstm {
    pub fn new(cell: LstmCell, return_sequences: bool) -> Self {
        Lstm {
            cell,
            return_sequences,
            cache: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 2 || input[1] != self.cell.input {
            return Err(NnError::ShapeMismatch {
                context: "lstm input".into(),
                expected: vec![0, self.cell.input],
                got: input.to_vec(),
            });
        }
        Ok(if self.return_sequences {
            vec![input[0], self.cell.hidden]
        } else {
            vec![self.cell.hidden]
        })
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(NnError::ShapeMismatch {
                context: "lstm forward".into(),
                expected: vec![0, 0, self.cell.input],
                got: s.to_vec(),
            });
        }
        self.output_shape(&s[1..])?;
        let (b, t, d) = (s[0], s[1], s[2]);
        let h = self.cell.hidden;
        let g4 = 4 * h;

        // input projection for every (b, t) row at once
        let bias = self.cell.bias.value.data();
        let mut zx = Vec::with_capacity(b * t * g4);
        for _ in 0..b * t {
            zx.extend_from_slice(bias);
        }
        matmul_acc(x.data(), self.cell.wx.value.data(), &mut zx, b * t, d, g4);

        let mut gates = vec![0.0; t * b * g4];
        let mut cells = vec![0.0; t * b * h];
        let mut tanh_cells = vec![0.0; t * b * h];
        let mut hiddens = vec![0.0; t * b * h];
        let wh = self.cell.wh.value.data();
        let mut z = vec![0.0; b * g4];
        for ti in 0..t {
            for bi in 0..b {
                z[bi * g4..(bi + 1) * g4].copy_from_slice(&zx[(bi * t + ti) * g4..][..g4]);
            }
            if ti > 0 {
                let prev = &hiddens[(ti - 1) * b * h..ti * b * h];
                matmul_acc(prev, wh, &mut z, b, h, g4);
            }
            for bi in 0..b {
                let zr = &z[bi * g4..(bi + 1) * g4];
                let gr = &mut gates[(ti * b + bi) * g4..][..g4];
                for j in 0..h {
                    gr[j] = sigmoid(zr[j]);
                    gr[h + j] = sigmoid(zr[h + j]);
                    gr[2 * h + j] = tanh(zr[2 * h + j]);
                    gr[3 * h + j] = sigmoid(zr[3 * h + j]);
                }
                let off = (ti * b + bi) * h;
                for j in 0..h {
                    let c_prev = if ti > 0 { cells[off - b * h + j] } else { 0.0 };
                    let c = gr[h + j] * c_prev + gr[j] * gr[2 * h + j];
                    let tc = tanh(c);
                    cells[off + j] = c;
                    tanh_cells[off + j] = tc;
                    hiddens[off + j] = gr[3 * h + j] * tc;
                }
            }
        }

        let out = if self.return_sequences {
            let mut out = vec![0.0; b * t * h];
            for ti in 0..t {
                for bi in 0..b {
                    out[(bi * t + ti) * h..][..h]
                        .copy_from_slice(&hiddens[(ti * b + bi) * h..][..h]);
                }
            }
            Tensor::from_vec(&[b, t, h], out)?
        } else {
            Tensor::from_vec(&[b, h], hiddens[(t - 1) * b * h..].to_vec())?
        };
        self.cache = Some(LstmCache {
            batch: b,
            steps: t,
            input: x.clone(),
            gates,
            cells,
            tanh_cells,
            hiddens,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let (b, t) = (cache.batch, cache.steps);
        let h = self.cell.hidden;
        let d = self.cell.input;
        let g4 = 4 * h;
        let expected = if self.return_sequences {
            b * t * h
        } else {
            b * h
        };
        if grad.len() != expected {
            return Err(NnError::ShapeMismatch {
                context: "lstm backward".into(),
                expected: if self.return_sequences {
                    vec![b, t, h]
                } else {
                    vec![b, h]
                },
                got: grad.shape().to_vec(),
            });
        }
        let gd = grad.data();
        let wh = self.cell.wh.value.data();

        // dz for every (b, t) row, row-major [B·T, 4H] to match the input layout
        let mut dz_all = vec![0.0; b * t * g4];
        let mut dh_next = vec![0.0; b * h];
        let mut dc_next = vec![0.0; b * h];
        let mut dz = vec![0.0; b * g4];
        for ti in (0..t).rev() {
            for bi in 0..b {
                let off = (ti * b + bi) * h;
                let gr = &cache.gates[(ti * b + bi) * g4..][..g4];
                let dzr = &mut dz[bi * g4..(bi + 1) * g4];
                for j in 0..h {
                    let mut dh = dh_next[bi * h + j];
                    if self.return_sequences {
                        dh += gd[(bi * t + ti) * h + j];
                    } else if ti == t - 1 {
                        dh += gd[bi * h + j];
                    }
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let tc = cache.tanh_cells[off + j];
                    let c_prev = if ti > 0 {
                        cache.cells[off - b * h + j]
                    } else {
                        0.0
                    };
                    let dc = dc_next[bi * h + j] + dh * o * (1.0 - tc * tc);
                    dzr[j] = dc * g * i * (1.0 - i);
                    dzr[h + j] = dc * c_prev * f * (1.0 - f);
                    dzr[2 * h + j] = dc * i * (1.0 - g * g);
                    dzr[3 * h + j] = dh * tc * o * (1.0 - o);
                    dc_next[bi * h + j] = dc * f;
                }
                dz_all[(bi * t + ti) * g4..][..g4].copy_from_slice(dzr);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            if ti > 0 {
                let prev = &cache.hiddens[(ti - 1) * b * h..ti * b * h];
                matmul_at_b_acc(prev, &dz, self.cell.wh.grad.data_mut(), b, h, g4);
                matmul_a_bt_acc(&dz, wh, &mut dh_next, b, g4, h);
            }
        }
        {
            let db = self.cell.bias.grad.data_mut();
            for row in dz_all.chunks_exact(g4) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
        matmul_at_b_acc(
            cache.input.data(),
            &dz_all,
            self.cell.wx.grad.data_mut(),
            b * t,
            d,
            g4,
        );
        let mut dx = vec![0.0; b * t * d];
        matmul_a_bt_acc(&dz_all, self.cell.wx.value.data(), &mut dx, b * t, g4, d);
        Tensor::from_vec(cache.input.shape(), dx)
    }
}
