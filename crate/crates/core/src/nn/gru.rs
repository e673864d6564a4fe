use super::{fingerprint, NnError, Result};
use crate::numcore::{glorot_uniform, matmul_into, sigmoid, Rng, Tensor};
use serde::{Deserialize, Serialize};

/// Single-layer GRU over row-vector inputs.
///
/// Gate convention, fixed throughout the crate:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// so `z` gates the candidate, not the carried state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub wz: Tensor,
    pub wr: Tensor,
    pub wh: Tensor,
    pub uz: Tensor,
    pub ur: Tensor,
    pub uh: Tensor,
    pub bz: Tensor,
    pub br: Tensor,
    pub bh: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruGrads {
    pub wz: Tensor,
    pub wr: Tensor,
    pub wh: Tensor,
    pub uz: Tensor,
    pub ur: Tensor,
    pub uh: Tensor,
    pub bz: Tensor,
    pub br: Tensor,
    pub bh: Tensor,
}

/// Intermediates of one `forward` call. `hs` holds `h_0..=h_T`.
#[derive(Debug, Clone)]
pub struct GruCache {
    xs: Tensor,
    hs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    cand: Vec<Vec<f64>>,
    params_fingerprint: u64,
}

impl GruCache {
    pub fn steps(&self) -> usize {
        self.z.len()
    }
}

impl GruGrads {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruGrads {
            wz: Tensor::zeros(&[input, hidden]),
            wr: Tensor::zeros(&[input, hidden]),
            wh: Tensor::zeros(&[input, hidden]),
            uz: Tensor::zeros(&[hidden, hidden]),
            ur: Tensor::zeros(&[hidden, hidden]),
            uh: Tensor::zeros(&[hidden, hidden]),
            bz: Tensor::zeros(&[hidden]),
            br: Tensor::zeros(&[hidden]),
            bh: Tensor::zeros(&[hidden]),
        }
    }

    pub fn accumulate(&mut self, other: &GruGrads) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.wz, &self.wr, &self.wh, &self.uz, &self.ur, &self.uh, &self.bz, &self.br, &self.bh,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.wz,
            &mut self.wr,
            &mut self.wh,
            &mut self.uz,
            &mut self.ur,
            &mut self.uh,
            &mut self.bz,
            &mut self.br,
            &mut self.bh,
        ]
    }
}

pub const GRU_PARAM_NAMES: [&str; 9] = ["wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"];

impl GruLayer {
    /// Glorot-uniform input and recurrent weights drawn in the order
    /// Wz, Wr, Wh, Uz, Ur, Uh; zero biases.
    pub fn new(rng: &mut Rng, input: usize, hidden: usize) -> Self {
        let wz = glorot_uniform(rng, input, hidden);
        let wr = glorot_uniform(rng, input, hidden);
        let wh = glorot_uniform(rng, input, hidden);
        let uz = glorot_uniform(rng, hidden, hidden);
        let ur = glorot_uniform(rng, hidden, hidden);
        let uh = glorot_uniform(rng, hidden, hidden);
        GruLayer {
            wz,
            wr,
            wh,
            uz,
            ur,
            uh,
            bz: Tensor::zeros(&[hidden]),
            br: Tensor::zeros(&[hidden]),
            bh: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let g = GruGrads::zeros(input, hidden);
        GruLayer {
            wz: g.wz,
            wr: g.wr,
            wh: g.wh,
            uz: g.uz,
            ur: g.ur,
            uh: g.uh,
            bz: g.bz,
            br: g.br,
            bh: g.bh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wz.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.wz.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.wz, &self.wr, &self.wh, &self.uz, &self.ur, &self.uh, &self.bz, &self.br, &self.bh,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.wz,
            &mut self.wr,
            &mut self.wh,
            &mut self.uz,
            &mut self.ur,
            &mut self.uh,
            &mut self.bz,
            &mut self.br,
            &mut self.bh,
        ]
    }

    fn check_shapes(&self, x_len: usize, h_len: usize) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        if x_len != i || h_len != h {
            return Err(crate::numcore::NumError::Shape {
                op: "gru_step",
                left: vec![x_len, h_len],
                right: vec![i, h],
            }
            .into());
        }
        Ok(())
    }

    /// One recurrence step; returns `h_t`.
    pub fn step(&self, x: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
        self.check_shapes(x.len(), h_prev.len())?;
        let (h, _, _, _) = self.step_raw(x.data(), h_prev.data());
        Ok(Tensor::vector(h))
    }

    /// Returns `(h_t, z, r, h̃)`.
    fn step_raw(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (i, n) = (self.input_dim(), self.hidden_dim());
        let mut z = self.bz.data().to_vec();
        let mut r = self.br.data().to_vec();
        let mut c = self.bh.data().to_vec();
        matmul_into(x, self.wz.data(), &mut z, 1, i, n);
        matmul_into(h_prev, self.uz.data(), &mut z, 1, n, n);
        matmul_into(x, self.wr.data(), &mut r, 1, i, n);
        matmul_into(h_prev, self.ur.data(), &mut r, 1, n, n);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        matmul_into(x, self.wh.data(), &mut c, 1, i, n);
        matmul_into(&rh, self.uh.data(), &mut c, 1, n, n);
        c.iter_mut().for_each(|v| *v = v.tanh());
        let h = (0..n)
            .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * c[k])
            .collect();
        (h, z, r, c)
    }

    /// Runs the recurrence over `xs [T×in]` from `h_0 = 0`; returns `h_T`.
    pub fn forward(&self, xs: &Tensor) -> Result<(Tensor, GruCache)> {
        let t_len = if xs.shape().len() == 2 { xs.rows() } else { 0 };
        if t_len == 0 {
            return Err(NnError::EmptySequence);
        }
        let n = self.hidden_dim();
        self.check_shapes(xs.cols(), n)?;
        let mut hs = Vec::with_capacity(t_len + 1);
        let mut zs = Vec::with_capacity(t_len);
        let mut rs = Vec::with_capacity(t_len);
        let mut cs = Vec::with_capacity(t_len);
        hs.push(vec![0.0; n]);
        for t in 0..t_len {
            let (h, z, r, c) = self.step_raw(xs.row(t), &hs[t]);
            hs.push(h);
            zs.push(z);
            rs.push(r);
            cs.push(c);
        }
        let last = Tensor::vector(hs[t_len].clone());
        Ok((
            last,
            GruCache {
                xs: xs.clone(),
                hs,
                z: zs,
                r: rs,
                cand: cs,
                params_fingerprint: fingerprint(self.tensors()),
            },
        ))
    }

    /// Backpropagation through time from `dh_T`. Returns parameter gradients
    /// and `dxs [T×in]`.
    pub fn backward(&self, cache: &GruCache, dh_last: &Tensor) -> Result<(GruGrads, Tensor)> {
        let (i, n) = (self.input_dim(), self.hidden_dim());
        if cache.xs.cols() != i || cache.hs[0].len() != n || dh_last.len() != n {
            return Err(NnError::StaleCache(format!(
                "cache built for in={} hidden={}, layer is in={i} hidden={n}",
                cache.xs.cols(),
                cache.hs[0].len()
            )));
        }
        if cache.params_fingerprint != fingerprint(self.tensors()) {
            return Err(NnError::StaleCache(
                "GRU parameters changed since forward".into(),
            ));
        }
        let t_len = cache.steps();
        let mut g = GruGrads::zeros(i, n);
        let mut dxs = Tensor::zeros(&[t_len, i]);
        let mut dh: Vec<f64> = dh_last.data().to_vec();
        if dh.iter().all(|&v| v == 0.0) {
            return Ok((g, dxs));
        }

        let mut da_z = vec![0.0; n];
        let mut da_r = vec![0.0; n];
        let mut da_h = vec![0.0; n];
        let mut d_rh = vec![0.0; n];
        for t in (0..t_len).rev() {
            let h_prev = &cache.hs[t];
            let (z, r, c) = (&cache.z[t], &cache.r[t], &cache.cand[t]);
            let x = cache.xs.row(t);
            let mut dh_prev = vec![0.0; n];
            for k in 0..n {
                let dc = dh[k] * z[k];
                let dz = dh[k] * (c[k] - h_prev[k]);
                dh_prev[k] = dh[k] * (1.0 - z[k]);
                da_h[k] = dc * (1.0 - c[k] * c[k]);
                da_z[k] = dz * z[k] * (1.0 - z[k]);
            }
            // through (r ⊙ h_prev)·Uh
            for p in 0..n {
                let row = &self.uh.data()[p * n..(p + 1) * n];
                d_rh[p] = row.iter().zip(&da_h).map(|(u, d)| u * d).sum();
            }
            for k in 0..n {
                da_r[k] = d_rh[k] * h_prev[k] * r[k] * (1.0 - r[k]);
                dh_prev[k] += d_rh[k] * r[k];
            }
            let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();

            outer_add(g.wz.data_mut(), x, &da_z);
            outer_add(g.wr.data_mut(), x, &da_r);
            outer_add(g.wh.data_mut(), x, &da_h);
            outer_add(g.uz.data_mut(), h_prev, &da_z);
            outer_add(g.ur.data_mut(), h_prev, &da_r);
            outer_add(g.uh.data_mut(), &rh, &da_h);
            for k in 0..n {
                g.bz.data_mut()[k] += da_z[k];
                g.br.data_mut()[k] += da_r[k];
                g.bh.data_mut()[k] += da_h[k];
            }

            let dx = dxs.row_mut(t);
            for (p, d) in dx.iter_mut().enumerate() {
                let wz = &self.wz.data()[p * n..(p + 1) * n];
                let wr = &self.wr.data()[p * n..(p + 1) * n];
                let wh = &self.wh.data()[p * n..(p + 1) * n];
                let mut s = 0.0;
                for k in 0..n {
                    s += wz[k] * da_z[k] + wr[k] * da_r[k] + wh[k] * da_h[k];
                }
                *d = s;
            }
            for p in 0..n {
                let uz = &self.uz.data()[p * n..(p + 1) * n];
                let ur = &self.ur.data()[p * n..(p + 1) * n];
                let mut s = 0.0;
                for k in 0..n {
                    s += uz[k] * da_z[k] + ur[k] * da_r[k];
                }
                dh_prev[p] += s;
            }
            dh = dh_prev;
        }
        Ok((g, dxs))
    }
}

/// `m += uᵀ v` for row vectors `u [a]`, `v [b]`, `m [a×b]`.
fn outer_add(m: &mut [f64], u: &[f64], v: &[f64]) {
    let b = v.len();
    for (p, &up) in u.iter().enumerate() {
        if up == 0.0 {
            continue;
        }
        for (o, &vk) in m[p * b..(p + 1) * b].iter_mut().zip(v) {
            *o += up * vk;
        }
    }
}
