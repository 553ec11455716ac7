use rand::Rng;

use super::dense::Tensor;
use super::params::{BoundParams, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Parameter handles of a GRU cell:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ h~`.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = |store: &mut ParamStore, name: &str, fan_in: usize| {
            store.insert(format!("{prefix}.{name}"), Tensor::uniform_init(fan_in, hidden_dim, rng))
        };
        let w_z = w(store, "w_z", input_dim)?;
        let u_z = w(store, "u_z", hidden_dim)?;
        let w_r = w(store, "w_r", input_dim)?;
        let u_r = w(store, "u_r", hidden_dim)?;
        let w_h = w(store, "w_h", input_dim)?;
        let u_h = w(store, "u_h", hidden_dim)?;
        let b_z = store.insert(format!("{prefix}.b_z"), Tensor::zeros(&[hidden_dim]))?;
        let b_r = store.insert(format!("{prefix}.b_r"), Tensor::zeros(&[hidden_dim]))?;
        let b_h = store.insert(format!("{prefix}.b_h"), Tensor::zeros(&[hidden_dim]))?;
        Ok(GruCell { w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h, input_dim, hidden_dim })
    }

    /// One step for a batch of rows: `x: [B x input_dim]`, `h: [B x hidden_dim]`.
    pub fn step(&self, tape: &mut Tape, p: &BoundParams, x: Var, h: Var) -> Result<Var> {
        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, hin: Var| -> Result<Var> {
            let a = tape.matmul(x, p.var(w))?;
            let c = tape.matmul(hin, p.var(u))?;
            let s = tape.add(a, c)?;
            tape.add_bias(s, p.var(b))
        };
        let z_pre = gate(tape, self.w_z, self.u_z, self.b_z, h)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.w_r, self.u_r, self.b_r, h)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h)?;
        let cand_pre = gate(tape, self.w_h, self.u_h, self.b_h, rh)?;
        let cand = tape.tanh(cand_pre);
        let diff = tape.sub(cand, h)?;
        let delta = tape.mul(z, diff)?;
        tape.add(h, delta)
    }

    /// Untracked single-row evaluation against concrete parameter values.
    pub fn eval(&self, store: &ParamStore, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(Tensor::vector(x.to_vec()));
        let hv = tape.constant(Tensor::vector(h.to_vec()));
        let out = self.step(&mut tape, &p, xv, hv)?;
        Ok(tape.value(out).data().to_vec())
    }
}
