//! Dense layers over a flat parameter vector, with manual backpropagation.

use rand::Rng;
use rand_distr::StandardNormal;

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major at `offset` and `b` after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn n_params(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.input);
        let w = &params[self.offset..self.offset + self.input * self.output];
        let b = &params[self.offset + self.input * self.output..self.offset + self.n_params()];
        y.clear();
        for o in 0..self.output {
            let row = &w[o * self.input..(o + 1) * self.input];
            let mut s = b[o];
            for (wi, xi) in row.iter().zip(x) {
                s += wi * xi;
            }
            y.push(self.activation.apply(s));
        }
    }

    /// Accumulates parameter gradients for one sample given `dy` (gradient at
    /// the layer output) and returns the gradient at the input when `dx` is given.
    pub fn backward(&self, params: &[f64], x: &[f64], y: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut Vec<f64>>) {
        let n_w = self.input * self.output;
        let (gw, gb) = grad[self.offset..self.offset + self.n_params()].split_at_mut(n_w);
        let w = &params[self.offset..self.offset + n_w];
        let mut dz = [0.0f64; 512];
        let mut heap;
        let dz: &mut [f64] = if self.output <= 512 {
            &mut dz[..self.output]
        } else {
            heap = vec![0.0; self.output];
            &mut heap
        };
        for o in 0..self.output {
            dz[o] = dy[o] * self.activation.derivative(y[o]);
            gb[o] += dz[o];
            let row = &mut gw[o * self.input..(o + 1) * self.input];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += dz[o] * xi;
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.input, 0.0);
            for o in 0..self.output {
                if dz[o] == 0.0 {
                    continue;
                }
                let row = &w[o * self.input..(o + 1) * self.input];
                for (d, wi) in dx.iter_mut().zip(row) {
                    *d += dz[o] * wi;
                }
            }
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn init_orthogonal<R: Rng + ?Sized>(&self, params: &mut [f64], gain: f64, rng: &mut R) {
        let (rows, cols) = (self.output, self.input);
        let big = rows.max(cols);
        let small = rows.min(cols);
        let a = DMatrix::<f64>::from_fn(big, small, |_, _| rng.sample(StandardNormal));
        let qr = a.qr();
        let mut q = qr.q();
        let r = qr.r();
        // Sign fix so the distribution is uniform over orthogonal matrices.
        for j in 0..small {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let q = if rows >= cols { q } else { q.transpose() };
        let w = &mut params[self.offset..self.offset + rows * cols];
        for o in 0..rows {
            for i in 0..cols {
                w[o * cols + i] = gain * q[(o, i)];
            }
        }
        params[self.offset + rows * cols..self.offset + self.n_params()].fill(0.0);
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Lays out layers of the given widths from `offset`, returning the stack
    /// and the offset just past it.
    pub fn build(offset: usize, input: usize, widths: &[usize], activation: Activation) -> (Self, usize) {
        let mut layers = Vec::with_capacity(widths.len());
        let mut off = offset;
        let mut prev = input;
        for &w in widths {
            let d = Dense { input: prev, output: w, offset: off, activation };
            off += d.n_params();
            prev = w;
            layers.push(d);
        }
        (Self { layers }, off)
    }

    pub fn input(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    /// Forward pass; `acts[0]` is the input and `acts[i + 1]` the output of layer `i`.
    pub fn forward(&self, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize_with(self.layers.len() + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(x);
        for (i, l) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(i + 1);
            l.forward(params, &head[i], &mut tail[0]);
        }
    }

    pub fn backward(&self, params: &[f64], acts: &[Vec<f64>], dy: &[f64], grad: &mut [f64], want_dx: bool) -> Vec<f64> {
        let mut d = dy.to_vec();
        let mut next = Vec::new();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let need = i > 0 || want_dx;
            l.backward(params, &acts[i], &acts[i + 1], &d, grad, need.then_some(&mut next));
            if need {
                std::mem::swap(&mut d, &mut next);
            }
        }
        if want_dx {
            d
        } else {
            Vec::new()
        }
    }

    pub fn init_orthogonal<R: Rng + ?Sized>(&self, params: &mut [f64], gain: f64, rng: &mut R) {
        for l in &self.layers {
            l.init_orthogonal(params, gain, rng);
        }
    }
}
