//! Parameter tensors for the detector, their names and shapes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl Dims {
    pub fn d_k(&self) -> usize {
        self.embed / self.heads
    }
}

/// One GRU direction. `w_*` are `hidden x input`, `u_*` are `hidden x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDir {
    pub input: usize,
    pub hidden: usize,
    pub w_z: Vec<f64>,
    pub u_z: Vec<f64>,
    pub b_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub u_r: Vec<f64>,
    pub b_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruDir {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || vec![0.0; hidden * input];
        let u = || vec![0.0; hidden * hidden];
        let b = || vec![0.0; hidden];
        GruDir {
            input,
            hidden,
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    fn refs(&self) -> [&Vec<f64>; 9] {
        [&self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h]
    }

    fn muts(&mut self) -> [&mut Vec<f64>; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    fn layout(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
        let (i, h) = (self.input, self.hidden);
        for gate in ["z", "r", "h"] {
            out.push((format!("{prefix}.w_{gate}"), vec![h, i]));
            out.push((format!("{prefix}.u_{gate}"), vec![h, h]));
            out.push((format!("{prefix}.b_{gate}"), vec![h]));
        }
    }
}

/// Forward and backward GRUs combined as `W_f h_fwd + W_b h_bwd + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub fwd: GruDir,
    pub bwd: GruDir,
    /// `out x hidden`
    pub w_f: Vec<f64>,
    pub w_b: Vec<f64>,
    pub b: Vec<f64>,
    pub out: usize,
}

impl BiGru {
    pub fn zeros(input: usize, hidden: usize, out: usize) -> Self {
        BiGru {
            fwd: GruDir::zeros(input, hidden),
            bwd: GruDir::zeros(input, hidden),
            w_f: vec![0.0; out * hidden],
            w_b: vec![0.0; out * hidden],
            b: vec![0.0; out],
            out,
        }
    }

    fn refs(&self) -> Vec<&Vec<f64>> {
        let mut v: Vec<&Vec<f64>> = self.fwd.refs().into();
        v.extend(self.bwd.refs());
        v.extend([&self.w_f, &self.w_b, &self.b]);
        v
    }

    fn muts(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = self.fwd.muts().into();
        v.extend(self.bwd.muts());
        v.extend([&mut self.w_f, &mut self.w_b, &mut self.b]);
        v
    }

    fn layout(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
        self.fwd.layout(&format!("{prefix}.fwd"), out);
        self.bwd.layout(&format!("{prefix}.bwd"), out);
        let h = self.fwd.hidden;
        out.push((format!("{prefix}.w_f"), vec![self.out, h]));
        out.push((format!("{prefix}.w_b"), vec![self.out, h]));
        out.push((format!("{prefix}.b"), vec![self.out]));
    }
}

/// Per-head projections are stacked row-wise: head `i` owns rows
/// `i*d_k..(i+1)*d_k` of `w_q`, `w_k` and `w_v` (each `d x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub dim: usize,
    pub heads: usize,
}

impl Attention {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        let m = || vec![0.0; dim * dim];
        Attention {
            w_q: m(),
            w_k: m(),
            w_v: m(),
            w_o: m(),
            dim,
            heads,
        }
    }
}

/// `p = sigmoid(w2 . relu(W1 [c; m] + b1) + b2)`
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub dim: usize,
}

impl Classifier {
    pub fn zeros(dim: usize) -> Self {
        Classifier {
            w1: vec![0.0; dim * 2 * dim],
            b1: vec![0.0; dim],
            w2: vec![0.0; dim],
            b2: vec![0.0; 1],
            dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub dims: Dims,
    /// `vocab x embed`
    pub emb: Vec<f64>,
    pub comment: BiGru,
    pub diff: BiGru,
    pub attn: Attention,
    pub cls: Classifier,
}

impl Params {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { vocab, embed, hidden, heads } = dims;
        Params {
            dims,
            emb: vec![0.0; vocab * embed],
            comment: BiGru::zeros(embed, hidden, embed),
            diff: BiGru::zeros(embed, hidden, embed),
            attn: Attention::zeros(embed, heads),
            cls: Classifier::zeros(embed),
        }
    }

    /// Embeddings uniform in ±0.1; weight matrices uniform in ±1/sqrt(fan_in);
    /// biases zero.
    pub fn init<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let mut p = Params::zeros(dims);
        let layout = p.layout();
        for ((name, shape), t) in layout.iter().zip(p.tensors_mut()) {
            let scale = if name == "emb" {
                0.1
            } else if shape.len() == 2 {
                1.0 / libm::sqrt(shape[1] as f64)
            } else {
                continue;
            };
            for v in t.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.dims)
    }

    /// Tensor names and shapes, in the same order as [`Params::tensors`].
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dims.embed;
        let mut out = vec![(String::from("emb"), vec![self.dims.vocab, d])];
        self.comment.layout("comment", &mut out);
        self.diff.layout("diff", &mut out);
        for n in ["w_q", "w_k", "w_v", "w_o"] {
            out.push((format!("attn.{n}"), vec![d, d]));
        }
        out.push(("cls.w1".into(), vec![d, 2 * d]));
        out.push(("cls.b1".into(), vec![d]));
        out.push(("cls.w2".into(), vec![1, d]));
        out.push(("cls.b2".into(), vec![1]));
        out
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.emb];
        v.extend(self.comment.refs());
        v.extend(self.diff.refs());
        v.extend([&self.attn.w_q, &self.attn.w_k, &self.attn.w_v, &self.attn.w_o]);
        v.extend([&self.cls.w1, &self.cls.b1, &self.cls.w2, &self.cls.b2]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![&mut self.emb];
        v.extend(self.comment.muts());
        v.extend(self.diff.muts());
        v.extend([&mut self.attn.w_q, &mut self.attn.w_k, &mut self.attn.w_v, &mut self.attn.w_o]);
        v.extend([&mut self.cls.w1, &mut self.cls.b1, &mut self.cls.w2, &mut self.cls.b2]);
        v
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
