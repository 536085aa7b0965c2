//! Gated recurrent unit: single step, sequence unroll and backpropagation through time.
//!
//! The cell follows the convention where the update gate multiplies the previous state:
//!
//! ```text
//! r  = σ(W_r x + U_r h₋ + b_r)
//! z  = σ(W_z x + U_z h₋ + b_z)
//! h̃  = tanh(W_h x + U_h (r ⊙ h₋) + b_h)
//! h  = z ⊙ h₋ + (1 − z) ⊙ h̃
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{affine, matvec, matvec_t_acc, outer_acc, sigmoid, tanh_act, Tensor};
use crate::optim::init_uniform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_reset: Tensor,
    pub u_reset: Tensor,
    pub b_reset: Tensor,
    pub w_update: Tensor,
    pub u_update: Tensor,
    pub b_update: Tensor,
    pub w_cand: Tensor,
    pub u_cand: Tensor,
    pub b_cand: Tensor,
    /// Learnable initial hidden state.
    pub h0: Tensor,
}

/// Gradients share the parameter layout.
pub type GruGrads = GruParams;

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[hidden_dim, input_dim]);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        GruParams {
            w_reset: w(),
            u_reset: u(),
            b_reset: b(),
            w_update: w(),
            u_update: u(),
            b_update: b(),
            w_cand: w(),
            u_cand: u(),
            b_cand: b(),
            h0: b(),
        }
    }

    /// Weight matrices and the initial state drawn uniformly from `±√(6/(in+out))`;
    /// biases start at zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        p.w_reset = init_uniform(hidden_dim, input_dim, rng);
        p.u_reset = init_uniform(hidden_dim, hidden_dim, rng);
        p.w_update = init_uniform(hidden_dim, input_dim, rng);
        p.u_update = init_uniform(hidden_dim, hidden_dim, rng);
        p.w_cand = init_uniform(hidden_dim, input_dim, rng);
        p.u_cand = init_uniform(hidden_dim, hidden_dim, rng);
        p.h0 = Tensor::from_vec(init_uniform(hidden_dim, 1, rng).as_slice().to_vec());
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_reset.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.h0.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 10] {
        [
            ("w_reset", &self.w_reset),
            ("u_reset", &self.u_reset),
            ("b_reset", &self.b_reset),
            ("w_update", &self.w_update),
            ("u_update", &self.u_update),
            ("b_update", &self.b_update),
            ("w_cand", &self.w_cand),
            ("u_cand", &self.u_cand),
            ("b_cand", &self.b_cand),
            ("h0", &self.h0),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 10] {
        [
            ("w_reset", &mut self.w_reset),
            ("u_reset", &mut self.u_reset),
            ("b_reset", &mut self.b_reset),
            ("w_update", &mut self.w_update),
            ("u_update", &mut self.u_update),
            ("b_update", &mut self.b_update),
            ("w_cand", &mut self.w_cand),
            ("u_cand", &mut self.u_cand),
            ("b_cand", &mut self.b_cand),
            ("h0", &mut self.h0),
        ]
    }

    pub fn add_assign(&mut self, other: &GruParams) -> Result<()> {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub reset: Tensor,
    pub update: Tensor,
    pub cand: Tensor,
    pub h: Tensor,
}

fn gate(w: &Tensor, u: &Tensor, b: &Tensor, x: &Tensor, h: &Tensor) -> Result<Tensor> {
    let mut pre = affine(w, x, b)?;
    pre.add_assign(&matvec(u, h)?)?;
    Ok(pre)
}

pub fn gru_step(p: &GruParams, x: &Tensor, h_prev: &Tensor) -> Result<(Tensor, GruStepCache)> {
    if h_prev.dims() != p.h0.dims() {
        return Err(Error::shape("gru_step", h_prev.dims(), p.h0.dims()));
    }
    let reset = sigmoid(&gate(&p.w_reset, &p.u_reset, &p.b_reset, x, h_prev)?);
    let update = sigmoid(&gate(&p.w_update, &p.u_update, &p.b_update, x, h_prev)?);
    let gated = crate::numeric::hadamard(&reset, h_prev)?;
    let cand = tanh_act(&gate(&p.w_cand, &p.u_cand, &p.b_cand, x, &gated)?);
    let h = Tensor::from_vec(
        update
            .as_slice()
            .iter()
            .zip(h_prev.as_slice())
            .zip(cand.as_slice())
            .map(|((z, hp), c)| z * hp + (1.0 - z) * c)
            .collect(),
    );
    let cache = GruStepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        reset,
        update,
        cand,
        h: h.clone(),
    };
    Ok((h, cache))
}

/// Unroll from `p.h0` over `xs`, returning every hidden state in input order.
pub fn gru_forward(p: &GruParams, xs: &[Tensor]) -> Result<(Vec<Tensor>, Vec<GruStepCache>)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("gru_forward sequence"));
    }
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    let mut h = p.h0.clone();
    for x in xs {
        let (next, cache) = gru_step(p, x, &h)?;
        h = next;
        hs.push(h.clone());
        caches.push(cache);
    }
    Ok((hs, caches))
}

#[derive(Debug, Clone)]
pub struct GruBackward {
    /// Parameter gradients; `grads.h0` holds the initial-state gradient.
    pub grads: GruGrads,
    pub grad_xs: Vec<Tensor>,
}

/// Reverse-mode gradients of `Σ_t ⟨grad_hs[t], h_t⟩`.
pub fn gru_backward(
    p: &GruParams,
    caches: &[GruStepCache],
    grad_hs: &[Tensor],
) -> Result<GruBackward> {
    if caches.len() != grad_hs.len() {
        return Err(Error::shape("gru_backward", caches.len(), grad_hs.len()));
    }
    let mut g = p.zeros_like();
    let mut grad_xs = vec![Tensor::zeros(&[p.input_dim()]); caches.len()];
    let d = p.hidden_dim();
    let mut carry = Tensor::zeros(&[d]);

    for (t, c) in caches.iter().enumerate().rev() {
        let mut dh = grad_hs[t].clone();
        dh.add_assign(&carry)?;
        let dh = dh.as_slice();
        let (z, hp, cand, r) = (
            c.update.as_slice(),
            c.h_prev.as_slice(),
            c.cand.as_slice(),
            c.reset.as_slice(),
        );

        let mut dh_prev = Tensor::from_vec((0..d).map(|i| dh[i] * z[i]).collect());
        let da_update = Tensor::from_vec(
            (0..d)
                .map(|i| dh[i] * (hp[i] - cand[i]) * z[i] * (1.0 - z[i]))
                .collect(),
        );
        let da_cand = Tensor::from_vec(
            (0..d)
                .map(|i| dh[i] * (1.0 - z[i]) * (1.0 - cand[i] * cand[i]))
                .collect(),
        );

        let gated = crate::numeric::hadamard(&c.reset, &c.h_prev)?;
        outer_acc(&mut g.w_cand, &da_cand, &c.x)?;
        outer_acc(&mut g.u_cand, &da_cand, &gated)?;
        g.b_cand.add_assign(&da_cand)?;
        matvec_t_acc(&p.w_cand, &da_cand, &mut grad_xs[t])?;
        let mut d_gated = Tensor::zeros(&[d]);
        matvec_t_acc(&p.u_cand, &da_cand, &mut d_gated)?;
        let dg = d_gated.as_slice();
        let da_reset = Tensor::from_vec((0..d).map(|i| dg[i] * hp[i] * r[i] * (1.0 - r[i])).collect());
        for (i, v) in dh_prev.as_mut_slice().iter_mut().enumerate() {
            *v += dg[i] * r[i];
        }

        outer_acc(&mut g.w_update, &da_update, &c.x)?;
        outer_acc(&mut g.u_update, &da_update, &c.h_prev)?;
        g.b_update.add_assign(&da_update)?;
        matvec_t_acc(&p.w_update, &da_update, &mut grad_xs[t])?;
        matvec_t_acc(&p.u_update, &da_update, &mut dh_prev)?;

        outer_acc(&mut g.w_reset, &da_reset, &c.x)?;
        outer_acc(&mut g.u_reset, &da_reset, &c.h_prev)?;
        g.b_reset.add_assign(&da_reset)?;
        matvec_t_acc(&p.w_reset, &da_reset, &mut grad_xs[t])?;
        matvec_t_acc(&p.u_reset, &da_reset, &mut dh_prev)?;

        carry = dh_prev;
    }
    g.h0 = carry;
    Ok(GruBackward { grads: g, grad_xs })
}
