use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// Exponential linear unit with `α = 1`.
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Elu => "elu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Three-layer perceptron `in → h1 → h2 → out`.
///
/// Parameters live in one flat vector laid out as `W1, b1, W2, b2, W3, b3`
/// with each weight matrix stored row-major (`fan_out × fan_in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: [usize; 4],
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Trace {
    pre: [Vec<f64>; 3],
    post: [Vec<f64>; 3],
}

impl Mlp {
    pub fn zeros(sizes: [usize; 4], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let count = (0..3).map(|k| sizes[k + 1] * (sizes[k] + 1)).sum();
        Ok(Self {
            sizes,
            hidden,
            output,
            params: vec![0.0; count],
        })
    }

    /// Uniform `±1/√fan_in` initialization with the last layer multiplied by
    /// `final_scale`.
    pub fn random<R: Rng + ?Sized>(
        sizes: [usize; 4],
        hidden: Activation,
        output: Activation,
        final_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for k in 0..3 {
            let bound = 1.0 / (sizes[k] as f64).sqrt();
            let scale = if k == 2 { final_scale } else { 1.0 };
            let (start, end) = net.layer_range(k);
            for p in &mut net.params[start..end] {
                *p = scale * rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(
        sizes: [usize; 4],
        hidden: Activation,
        output: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        check_len("parameter count", net.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "network parameters",
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[3]
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.hidden == other.hidden && self.output == other.output
    }

    /// Zeroes the bias entries of a parameter-shaped vector.
    pub fn zero_bias_entries(&self, v: &mut [f64]) {
        for k in 0..3 {
            let (_, end) = self.layer_range(k);
            v[end - self.sizes[k + 1]..end].fill(0.0);
        }
    }

    fn layer_range(&self, k: usize) -> (usize, usize) {
        let start: usize = (0..k)
            .map(|j| self.sizes[j + 1] * (self.sizes[j] + 1))
            .sum();
        (start, start + self.sizes[k + 1] * (self.sizes[k] + 1))
    }

    fn activation(&self, k: usize) -> Activation {
        if k == 2 {
            self.output
        } else {
            self.hidden
        }
    }

    fn trace(&self, input: &[f64]) -> Result<Trace> {
        check_len("network input", self.sizes[0], input.len())?;
        let mut pre: [Vec<f64>; 3] = Default::default();
        let mut post: [Vec<f64>; 3] = Default::default();
        for k in 0..3 {
            let x = if k == 0 { input } else { &post[k - 1][..] };
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let (start, _) = self.layer_range(k);
            let weights = &self.params[start..start + fan_in * fan_out];
            let bias = &self.params[start + fan_in * fan_out..start + (fan_in + 1) * fan_out];
            let z: Vec<f64> = (0..fan_out)
                .map(|i| {
                    let row = &weights[i * fan_in..(i + 1) * fan_in];
                    bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            let act = self.activation(k);
            post[k] = z.iter().map(|&v| act.apply(v)).collect();
            pre[k] = z;
        }
        Ok(Trace { pre, post })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let Trace { mut post, .. } = self.trace(input)?;
        Ok(std::mem::take(&mut post[2]))
    }

    /// Reverse-mode pass: adds `∂(gᵀ·net(x))/∂params` into `param_grad` and
    /// returns `∂(gᵀ·net(x))/∂x`.
    pub fn backward_accumulate(
        &self,
        input: &[f64],
        output_grad: &[f64],
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_len("output gradient", self.sizes[3], output_grad.len())?;
        check_len("parameter gradient", self.params.len(), param_grad.len())?;
        let trace = self.trace(input)?;
        let mut upstream = output_grad.to_vec();
        for k in (0..3).rev() {
            let act = self.activation(k);
            let delta: Vec<f64> = upstream
                .iter()
                .zip(trace.pre[k].iter().zip(&trace.post[k]))
                .map(|(g, (&z, &y))| g * act.derivative(z, y))
                .collect();
            let x = if k == 0 {
                input
            } else {
                &trace.post[k - 1][..]
            };
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let (start, _) = self.layer_range(k);
            let weights = &self.params[start..start + fan_in * fan_out];
            let (wgrad, rest) = param_grad[start..].split_at_mut(fan_in * fan_out);
            for i in 0..fan_out {
                if delta[i] == 0.0 {
                    continue;
                }
                for (g, v) in wgrad[i * fan_in..(i + 1) * fan_in].iter_mut().zip(x) {
                    *g += delta[i] * v;
                }
                rest[i] += delta[i];
            }
            let mut next = vec![0.0; fan_in];
            for i in 0..fan_out {
                if delta[i] == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(&weights[i * fan_in..(i + 1) * fan_in]) {
                    *n += delta[i] * w;
                }
            }
            upstream = next;
        }
        Ok(upstream)
    }

    /// Parameter and input gradients of `gᵀ·net(x)`.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_accumulate(input, output_grad, &mut grad)?;
        Ok((grad, input_grad))
    }

    /// `∂net/∂x` at `x` as an `out × in` matrix.
    pub fn input_jacobian(&self, input: &[f64]) -> Result<DenseMatrix> {
        let out = self.sizes[3];
        let mut jac = DenseMatrix::zeros(out, self.sizes[0]);
        let mut scratch = vec![0.0; self.params.len()];
        let mut e = vec![0.0; out];
        for i in 0..out {
            e[i] = 1.0;
            let row = self.backward_accumulate(input, &e, &mut scratch)?;
            for (j, v) in row.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
            e[i] = 0.0;
        }
        Ok(jac)
    }

    /// Writes the header line and one line per parameter tensor.
    pub fn write_text<W: Write>(&self, out: &mut W) -> Result<()> {
        let [a, b, c, d] = self.sizes;
        writeln!(out, "mlp {a} {b} {c} {d} {} {}", self.hidden, self.output)?;
        for k in 0..3 {
            let (start, end) = self.layer_range(k);
            let split = start + self.sizes[k] * self.sizes[k + 1];
            for tensor in [&self.params[start..split], &self.params[split..end]] {
                let line: Vec<String> = tensor.iter().map(|v| format!("{v:e}")).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    /// Reads one network block written by [`Mlp::write_text`].
    pub fn read_text<I: Iterator<Item = std::io::Result<String>>>(lines: &mut I) -> Result<Self> {
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse("checkpoint truncated".into()))
        };
        let header = next()?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let ["mlp", a, b, c, d, hidden, output] = fields[..] else {
            return Err(Error::Parse(format!("bad network header `{header}`")));
        };
        let mut sizes = [0usize; 4];
        for (s, f) in sizes.iter_mut().zip([a, b, c, d]) {
            *s = f
                .parse()
                .map_err(|_| Error::Parse(format!("bad layer size `{f}`")))?;
        }
        let mut net = Self::zeros(sizes, hidden.parse()?, output.parse()?)?;
        for k in 0..3 {
            let (start, end) = net.layer_range(k);
            let split = start + sizes[k] * sizes[k + 1];
            for (lo, hi) in [(start, split), (split, end)] {
                let line = next()?;
                let values = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse(format!("bad parameter: {e}")))?;
                check_len("parameter tensor", hi - lo, values.len())?;
                net.params[lo..hi].copy_from_slice(&values);
            }
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "network parameters",
            });
        }
        Ok(net)
    }
}

/// Reads every network block from a checkpoint stream.
pub fn read_networks<R: BufRead>(input: R) -> Result<Vec<Mlp>> {
    let mut lines = input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .peekable();
    let mut nets = Vec::new();
    while lines.peek().is_some() {
        nets.push(Mlp::read_text(&mut lines)?);
    }
    Ok(nets)
}
