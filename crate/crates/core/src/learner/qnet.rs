//! A small fully connected network (ReLU hidden layers, linear output) with
//! hand-written backpropagation and an Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MORLQNET";
const FORMAT_VERSION: u32 = 1;

/// Parameters are stored flat; layer `l` holds its `out x in` weight matrix
/// (row-major) followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-initialized weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = Vec::with_capacity(n);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-scale..scale) * std::f64::consts::FRAC_1_SQRT_2);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Forward pass; returns the output layer.
    pub fn forward<'w>(&self, input: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        debug_assert_eq!(input.len(), self.sizes[0]);
        ws.acts[0].copy_from_slice(input);
        let last = self.sizes.len() - 2;
        let mut offset = 0;
        for l in 0..=last {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let (lo, hi) = ws.acts.split_at_mut(l + 1);
            let x = &lo[l];
            let y = &mut hi[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    s += wi * xi;
                }
                y[o] = if l < last && s < 0.0 { 0.0 } else { s };
            }
            offset += n_in * n_out + n_out;
        }
        &ws.acts[self.sizes.len() - 1]
    }

    /// Accumulates `d loss / d params` into `grads`, given `d loss / d output`
    /// for the input of the preceding [`Mlp::forward`] call on `ws`.
    pub fn backward(&self, ws: &mut Workspace, out_grad: &[f64], grads: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        ws.deltas[n_layers].copy_from_slice(out_grad);
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let (dlo, dhi) = ws.deltas.split_at_mut(l + 1);
            let delta = &dhi[0];
            let x = &ws.acts[l];
            {
                let gw = &mut grads[off..off + n_in * n_out];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x.iter()) {
                            *g += d * xi;
                        }
                    }
                }
            }
            let gb = &mut grads[off + n_in * n_out..off + n_in * n_out + n_out];
            for (g, d) in gb.iter_mut().zip(delta.iter()) {
                *g += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let prev = &mut dlo[l];
                prev.iter_mut().for_each(|p| *p = 0.0);
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *p += d * wi;
                        }
                    }
                }
                // ReLU derivative of the hidden layer feeding this one
                for (p, a) in prev.iter_mut().zip(x.iter()) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
    }

    /// Versioned little-endian blob: magic, format version, 32-byte config
    /// digest, layer sizes, parameters.
    pub fn to_bytes(&self, config_digest: &[u8; 32]) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(config_digest);
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Inverse of [`Mlp::to_bytes`]; returns the network and its config digest.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, [u8; 32])> {
        let bad = |msg: &str| Error::Validation(format!("checkpoint: {msg}"));
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let digest: [u8; 32] = take(32)?.try_into().expect("32 bytes");
        let n_layers = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        if !(2..=64).contains(&n_layers) {
            return Err(bad("implausible layer count"));
        }
        let mut sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            sizes.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
        }
        if take(1).is_ok() {
            return Err(bad("trailing bytes"));
        }
        Ok((Self { sizes, params }, digest))
    }
}

/// Adam with optional global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, clip_norm: Option<f64>) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &mut [f64]) {
        if let Some(c) = self.clip_norm {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                let s = c / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.t = self.t.saturating_add(1);
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn net() -> Mlp {
        Mlp::new(&[3, 5, 4, 2], &mut seeded(1)).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut mlp = net();
        let x = [0.3, -0.7, 1.1];
        let target = [0.5, -0.25];
        let loss = |m: &Mlp| {
            let mut ws = m.workspace();
            let y = m.forward(&x, &mut ws);
            0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let mut ws = mlp.workspace();
        let y = mlp.forward(&x, &mut ws).to_vec();
        let out_grad: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        let mut grads = vec![0.0; mlp.params().len()];
        mlp.backward(&mut ws, &out_grad, &mut grads);
        let h = 1e-6;
        for i in 0..grads.len() {
            let orig = mlp.params()[i];
            mlp.params_mut()[i] = orig + h;
            let up = loss(&mlp);
            mlp.params_mut()[i] = orig - h;
            let down = loss(&mlp);
            mlp.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6, "param {i}: fd {fd} vs {}", grads[i]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mlp = net();
        let digest = [7u8; 32];
        let bytes = mlp.to_bytes(&digest);
        let (back, d) = Mlp::from_bytes(&bytes).unwrap();
        assert_eq!(back, mlp);
        assert_eq!(d, digest);
        assert!(Mlp::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut tampered = bytes.clone();
        tampered[0] = b'X';
        assert!(Mlp::from_bytes(&tampered).is_err());
    }

    #[test]
    fn adam_fits_a_constant() {
        let mut mlp = Mlp::new(&[1, 8, 1], &mut seeded(3)).unwrap();
        let mut opt = Adam::new(mlp.params().len(), 1e-2, None);
        let mut ws = mlp.workspace();
        for _ in 0..500 {
            let y = mlp.forward(&[1.0], &mut ws)[0];
            let mut g = vec![0.0; mlp.params().len()];
            mlp.backward(&mut ws, &[y - 3.0], &mut g);
            opt.step(mlp.params_mut(), &mut g);
        }
        let y = mlp.forward(&[1.0], &mut ws)[0];
        assert!((y - 3.0).abs() < 1e-3, "{y}");
    }
}
