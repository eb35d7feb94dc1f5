//! Finite-difference gradient oracle evaluated in double-double arithmetic.
//!
//! This is an independent re-implementation of the model's forward pass and
//! loss with ~106-bit significands, so a central difference at step 1e-5 is
//! limited by truncation error (O(h²)) and not by f64 cancellation.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use attnmap_core::dataset::Label;
use attnmap_core::rnn::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn ldexp(self, k: i32) -> Dd {
        let scale = 2f64.powi(k);
        Dd {
            hi: self.hi * scale,
            lo: self.lo * scale,
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi > 700.0 {
            return Dd::from(f64::INFINITY);
        }
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = (self - Dd::LN2 * Dd::from(k)).ldexp(-10);
        // Taylor series of exp(r) - 1 for |r| < 2^-11.
        let mut term = r;
        let mut sum = r;
        for n in 2..=20 {
            term = term * r / Dd::from(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-40 {
                break;
            }
        }
        // (1 + s)^2 - 1 = s (2 + s), repeated ten times.
        for _ in 0..10 {
            sum = sum * (sum + Dd::from(2.0));
        }
        (sum + Dd::ONE).ldexp(k as i32)
    }

    pub fn ln(self) -> Dd {
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..3 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn tanh(self) -> Dd {
        if self.hi > 40.0 {
            return Dd::ONE;
        }
        if self.hi < -40.0 {
            return -Dd::ONE;
        }
        let e = (self + self).exp();
        (e - Dd::ONE) / (e + Dd::ONE)
    }

    pub fn sigmoid(self) -> Dd {
        Dd::ONE / (Dd::ONE + (-self).exp())
    }

    pub fn max(self, other: Dd) -> Dd {
        if (self - other).hi >= 0.0 {
            self
        } else {
            other
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

/// Model parameters promoted to double-double, in the tensor order of
/// `ModelParams::tensors`.
struct DdParams {
    d: usize,
    h: usize,
    a: usize,
    tensors: Vec<Vec<Dd>>,
}

impl DdParams {
    fn new(params: &ModelParams) -> Self {
        DdParams {
            d: params.lstm.input_dim,
            h: params.lstm.hidden,
            a: params.attention.attention_dim,
            tensors: params
                .tensors()
                .iter()
                .map(|t| t.iter().map(|v| Dd::from(*v)).collect())
                .collect(),
        }
    }
}

fn dd_loss(p: &DdParams, inputs: &[Vec<f64>], label: Label) -> Dd {
    let (d, h, a) = (p.d, p.h, p.a);
    let [w_x, w_h, b, w_c, b_c, u, w_o, b_o] = [0, 1, 2, 3, 4, 5, 6, 7].map(|i| &p.tensors[i]);
    let mut hid = vec![Dd::ZERO; h];
    let mut cell = vec![Dd::ZERO; h];
    let mut hiddens = Vec::new();
    for x in inputs {
        let pre = |row: usize, hid: &[Dd]| {
            let mut s = b[row];
            for j in 0..d {
                s = s + w_x[row * d + j] * Dd::from(x[j]);
            }
            for j in 0..h {
                s = s + w_h[row * h + j] * hid[j];
            }
            s
        };
        let mut next = vec![Dd::ZERO; h];
        for k in 0..h {
            let i = pre(k, &hid).sigmoid();
            let f = pre(h + k, &hid).sigmoid();
            let g = pre(2 * h + k, &hid).tanh();
            let o = pre(3 * h + k, &hid).sigmoid();
            cell[k] = f * cell[k] + i * g;
            next[k] = o * cell[k].tanh();
        }
        hid = next;
        hiddens.push(hid.clone());
    }
    let scores: Vec<Dd> = hiddens
        .iter()
        .map(|hv| {
            let mut s = Dd::ZERO;
            for k in 0..a {
                let mut z = b_c[k];
                for j in 0..h {
                    z = z + w_c[k * h + j] * hv[j];
                }
                s = s + u[k] * z.tanh();
            }
            s
        })
        .collect();
    let top = scores.iter().copied().fold(scores[0], Dd::max);
    let exps: Vec<Dd> = scores.iter().map(|s| (*s - top).exp()).collect();
    let total = exps.iter().copied().fold(Dd::ZERO, |acc, e| acc + e);
    let mut context = vec![Dd::ZERO; h];
    for (e, hv) in exps.iter().zip(&hiddens) {
        let alpha = *e / total;
        for k in 0..h {
            context[k] = context[k] + alpha * hv[k];
        }
    }
    let logit = |row: usize| {
        let mut z = b_o[row];
        for k in 0..h {
            z = z + w_o[row * h + k] * context[k];
        }
        z
    };
    let (z0, z1) = (logit(0), logit(1));
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    let p_label = if label == Label::Positive { e0 } else { e1 } / (e0 + e1);
    -(p_label.max(Dd::from(1e-12)).ln())
}

/// Central finite difference of the loss with step `step`, per tensor.
pub fn fd_gradient(params: &ModelParams, inputs: &[Vec<f64>], label: Label, step: f64) -> Vec<Vec<f64>> {
    let mut p = DdParams::new(params);
    let h = Dd::from(step);
    let mut out = Vec::new();
    for t in 0..p.tensors.len() {
        let mut g = Vec::with_capacity(p.tensors[t].len());
        for k in 0..p.tensors[t].len() {
            let original = p.tensors[t][k];
            p.tensors[t][k] = original + h;
            let up = dd_loss(&p, inputs, label);
            p.tensors[t][k] = original - h;
            let down = dd_loss(&p, inputs, label);
            p.tensors[t][k] = original;
            g.push(((up - down) / (h + h)).to_f64());
        }
        out.push(g);
    }
    out
}

/// Loss evaluated in double-double, rounded to f64.
pub fn loss(params: &ModelParams, inputs: &[Vec<f64>], label: Label) -> f64 {
    dd_loss(&DdParams::new(params), inputs, label).to_f64()
}

#[cfg(test)]
mod dd_tests {
    #[allow(unused_imports)]
    use super::*;

    #[test]
    fn elementary_functions() {
        for x in [-3.7, -0.5, 0.0, 1e-9, 0.3, 2.0, 11.0] {
            let dx = Dd::from(x);
            assert!((dx.exp().to_f64() - x.exp()).abs() <= 2e-16 * x.exp());
            assert!((dx.tanh().to_f64() - x.tanh()).abs() <= 4e-16);
            if x > 0.0 {
                assert!((dx.ln().to_f64() - x.ln()).abs() <= 4e-16 * x.ln().abs().max(1.0));
            }
        }
        // exp(1) beyond f64: e = 2.718281828459045 + 1.4456468917292502e-16
        let e = Dd::ONE.exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-30);
    }
}
