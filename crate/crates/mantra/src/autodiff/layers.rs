//! GRU cells and dense layers built from tape primitives.

use rand::Rng;

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::{ParamVec, Tensor};
use crate::error::{Error, Result};

/// Parameter slots of one GRU cell. Gate weight matrices have shape
/// (hidden, input + hidden); biases have length hidden. `input_width` may be
/// zero, in which case the step consumes the hidden state alone.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub input_width: usize,
    pub hidden_width: usize,
    pub w_update: usize,
    pub b_update: usize,
    pub w_reset: usize,
    pub b_reset: usize,
    pub w_cand: usize,
    pub b_cand: usize,
}

impl GruParams {
    pub fn init(
        params: &mut ParamVec,
        prefix: &str,
        input_width: usize,
        hidden_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = input_width + hidden_width;
        let mut mat =
            |p: &mut ParamVec, n: &str| p.push(n, Tensor::uniform_fan_in(vec![hidden_width, fan_in], fan_in, rng));
        let w_update = mat(params, &format!("{prefix}.update.w"));
        let w_reset = mat(params, &format!("{prefix}.reset.w"));
        let w_cand = mat(params, &format!("{prefix}.cand.w"));
        let b_update = params.push(&format!("{prefix}.update.b"), Tensor::zeros(vec![hidden_width]));
        let b_reset = params.push(&format!("{prefix}.reset.b"), Tensor::zeros(vec![hidden_width]));
        let b_cand = params.push(&format!("{prefix}.cand.b"), Tensor::zeros(vec![hidden_width]));
        GruParams {
            input_width,
            hidden_width,
            w_update,
            b_update,
            w_reset,
            b_reset,
            w_cand,
            b_cand,
        }
    }

    pub fn slots(&self) -> [usize; 6] {
        [
            self.w_update,
            self.b_update,
            self.w_reset,
            self.b_reset,
            self.w_cand,
            self.b_cand,
        ]
    }
}

/// One GRU step: h' = z*h + (1-z)*cand, with
/// z = sig(Wz [x;h] + bz), r = sig(Wr [x;h] + br),
/// cand = tanh(Wc [x; r*h] + bc).
pub fn gru_step(
    tape: &mut Tape,
    params: &ParamVec,
    gru: &GruParams,
    x: Option<Var>,
    h: Var,
) -> Result<Var> {
    if tape.len(h) != gru.hidden_width {
        return Err(Error::Shape(format!(
            "gru_step: hidden state length {} != hidden_width {}",
            tape.len(h),
            gru.hidden_width
        )));
    }
    match (x, gru.input_width) {
        (None, 0) => {}
        (Some(xv), w) if tape.len(xv) == w => {}
        (Some(xv), w) => {
            return Err(Error::Shape(format!(
                "gru_step: input length {} != input_width {w}",
                tape.len(xv)
            )))
        }
        (None, w) => {
            return Err(Error::Shape(format!(
                "gru_step: missing input for input_width {w}"
            )))
        }
    }
    let cat = |tape: &mut Tape, a: Option<Var>, b: Var| match a {
        Some(a) => tape.concat(&[a, b]),
        None => b,
    };
    let xh = cat(tape, x, h);
    let wz = tape.param(params, gru.w_update);
    let bz = tape.param(params, gru.b_update);
    let zz = tape.matvec(wz, xh)?;
    let zz = tape.add(zz, bz)?;
    let z = tape.sigmoid(zz);

    let wr = tape.param(params, gru.w_reset);
    let br = tape.param(params, gru.b_reset);
    let rr = tape.matvec(wr, xh)?;
    let rr = tape.add(rr, br)?;
    let r = tape.sigmoid(rr);

    let rh = tape.mul(r, h)?;
    let xrh = cat(tape, x, rh);
    let wc = tape.param(params, gru.w_cand);
    let bc = tape.param(params, gru.b_cand);
    let cc = tape.matvec(wc, xrh)?;
    let cc = tape.add(cc, bc)?;
    let cand = tape.tanh(cc);

    let zh = tape.mul(z, h)?;
    let omz = tape.one_minus(z);
    let zc = tape.mul(omz, cand)?;
    tape.add(zh, zc)
}

/// Parameter slots of a dense (affine) layer.
#[derive(Debug, Clone)]
pub struct DenseParams {
    pub input_width: usize,
    pub output_width: usize,
    pub w: usize,
    pub b: usize,
}

impl DenseParams {
    pub fn init(
        params: &mut ParamVec,
        prefix: &str,
        input_width: usize,
        output_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = params.push(
            &format!("{prefix}.w"),
            Tensor::uniform_fan_in(vec![output_width, input_width], input_width, rng),
        );
        let b = params.push(&format!("{prefix}.b"), Tensor::zeros(vec![output_width]));
        DenseParams {
            input_width,
            output_width,
            w,
            b,
        }
    }

    /// All-zero init; the layer starts as the constant zero map.
    pub fn init_zero(
        params: &mut ParamVec,
        prefix: &str,
        input_width: usize,
        output_width: usize,
    ) -> Self {
        let w = params.push(&format!("{prefix}.w"), Tensor::zeros(vec![output_width, input_width]));
        let b = params.push(&format!("{prefix}.b"), Tensor::zeros(vec![output_width]));
        DenseParams {
            input_width,
            output_width,
            w,
            b,
        }
    }

    pub fn slots(&self) -> [usize; 2] {
        [self.w, self.b]
    }
}

pub fn dense(tape: &mut Tape, params: &ParamVec, d: &DenseParams, x: Var) -> Result<Var> {
    let w = tape.param(params, d.w);
    let b = tape.param(params, d.b);
    let y = tape.matvec(w, x)?;
    tape.add(y, b)
}
