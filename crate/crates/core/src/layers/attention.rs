use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::linear::Linear;
use super::params::{Bound, Module, ParamSpec};

/// Multi-head scaled dot-product attention where queries come from one token
/// sequence and keys/values from another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossAttention {
    pub d_model: usize,
    pub n_heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl CrossAttention {
    pub fn new(name: &str, d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || d_model == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible into {n_heads} heads"
            )));
        }
        Ok(CrossAttention {
            d_model,
            n_heads,
            q: Linear::new(format!("{name}.q"), d_model, d_model),
            k: Linear::new(format!("{name}.k"), d_model, d_model),
            v: Linear::new(format!("{name}.v"), d_model, d_model),
            out: Linear::new(format!("{name}.out"), d_model, d_model),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x_query: Var, x_kv: Var) -> Result<Var> {
        self.forward_with_weights(tape, p, x_query, x_kv).map(|(y, _)| y)
    }

    /// Also returns the per-head t×t attention matrices.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x_query: Var,
        x_kv: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let (sq, skv) = (tape.shape(x_query), tape.shape(x_kv));
        match (sq, skv) {
            ([tq, dq], [tk, dk]) if tq == tk && *dq == self.d_model && *dk == self.d_model => {}
            _ => return Err(Error::shape("cross_attention", sq, skv)),
        }
        let q = self.q.forward(tape, p, x_query)?;
        let k = self.k.forward(tape, p, x_kv)?;
        let v = self.v.forward(tape, p, x_kv)?;
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice(q, 1, h * dk, dk)?,
                    tape.slice(k, 1, h * dk, dk)?,
                    tape.slice(v, 1, h * dk, dk)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        Ok((self.out.forward(tape, p, merged)?, weights))
    }
}

impl Module for CrossAttention {
    fn param_specs(&self) -> Vec<ParamSpec> {
        [&self.q, &self.k, &self.v, &self.out]
            .iter()
            .flat_map(|l| l.param_specs())
            .collect()
    }
}

/// Two-layer ReLU feed-forward block, d_model → d_ff → d_model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(name: &str, d_model: usize, d_ff: usize) -> Self {
        FeedForward {
            fc1: Linear::new(format!("{name}.fc1"), d_model, d_ff),
            fc2: Linear::new(format!("{name}.fc2"), d_ff, d_model),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        self.fc2.forward(tape, p, h)
    }

    /// `FFN(f_att + f_in) + f_att + f_in`.
    pub fn residual(&self, tape: &mut Tape, p: &Bound, f_att: Var, f_in: Var) -> Result<Var> {
        if tape.shape(f_att) != tape.shape(f_in) {
            return Err(Error::shape("ffn_residual", tape.shape(f_att), tape.shape(f_in)));
        }
        let sum = tape.add(f_att, f_in)?;
        let y = self.forward(tape, p, sum)?;
        tape.add(y, sum)
    }
}

impl Module for FeedForward {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.fc1.param_specs();
        v.extend(self.fc2.param_specs());
        v
    }
}

/// Attention followed by the residual feed-forward block, for one branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderBranch {
    pub attn: CrossAttention,
    pub ffn: FeedForward,
}

impl EncoderBranch {
    pub fn new(name: &str, d_model: usize, n_heads: usize, d_ff: usize) -> Result<Self> {
        Ok(EncoderBranch {
            attn: CrossAttention::new(&format!("{name}.attn"), d_model, n_heads)?,
            ffn: FeedForward::new(&format!("{name}.ffn"), d_model, d_ff),
        })
    }

    /// Queries from `own`, keys/values from `other`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, own: Var, other: Var) -> Result<Var> {
        let att = self.attn.forward(tape, p, own, other)?;
        self.ffn.residual(tape, p, att, own)
    }
}

impl Module for EncoderBranch {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.attn.param_specs();
        v.extend(self.ffn.param_specs());
        v
    }
}

/// Fuses two token sequences of equal shape: each branch attends to the
/// other, and the enhanced sequences are concatenated feature-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterTransformer {
    pub res: EncoderBranch,
    pub vit: EncoderBranch,
    shared: bool,
}

impl InterTransformer {
    pub fn new(name: &str, d_model: usize, n_heads: usize, d_ff: usize) -> Result<Self> {
        Ok(InterTransformer {
            res: EncoderBranch::new(&format!("{name}.res"), d_model, n_heads, d_ff)?,
            vit: EncoderBranch::new(&format!("{name}.vit"), d_model, n_heads, d_ff)?,
            shared: false,
        })
    }

    /// Both branches use one set of weights.
    pub fn shared(name: &str, d_model: usize, n_heads: usize, d_ff: usize) -> Result<Self> {
        let branch = EncoderBranch::new(&format!("{name}.shared"), d_model, n_heads, d_ff)?;
        Ok(InterTransformer {
            res: branch.clone(),
            vit: branch,
            shared: true,
        })
    }

    pub fn output_width(&self) -> usize {
        2 * self.res.attn.d_model
    }

    /// Returns the t×(2·d_model) fused sequence.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, f_res: Var, f_vit: Var) -> Result<Var> {
        if tape.shape(f_res) != tape.shape(f_vit) {
            return Err(Error::shape("inter_transformer", tape.shape(f_res), tape.shape(f_vit)));
        }
        let res = self.res.forward(tape, p, f_res, f_vit)?;
        let vit = self.vit.forward(tape, p, f_vit, f_res)?;
        tape.concat(&[res, vit], 1)
    }
}

impl Module for InterTransformer {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.res.param_specs();
        if !self.shared {
            v.extend(self.vit.param_specs());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::params::{grad_check_params, init_params, ParamStore};
    use crate::tensor::{GradCheckOptions, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn randomize(store: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in store.iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
    }

    /// Naive loops over heads, tokens and features.
    fn reference_attention(store: &ParamStore, name: &str, xq: &Tensor, xkv: &Tensor, heads: usize) -> Vec<f64> {
        let t = xq.shape()[0];
        let d = xq.shape()[1];
        let lin = |which: &str, x: &Tensor| -> Vec<Vec<f64>> {
            let w = store.get(&format!("{name}.{which}.weight")).unwrap().data();
            let b = store.get(&format!("{name}.{which}.bias")).unwrap().data();
            (0..t)
                .map(|i| {
                    (0..d)
                        .map(|j| b[j] + (0..d).map(|k| x.data()[i * d + k] * w[k * d + j]).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        let (q, k, v) = (lin("q", xq), lin("k", xkv), lin("v", xkv));
        let dk = d / heads;
        let mut merged = vec![vec![0.0; d]; t];
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    merged[i][c] = (0..t).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        let flat: Vec<f64> = merged.concat();
        let m = Tensor::matrix(t, d, flat).unwrap();
        lin("out", &m).concat()
    }

    #[test]
    fn rejects_indivisible_heads() {
        assert!(CrossAttention::new("a", 10, 4).is_err());
    }

    #[test]
    fn single_token_weights_are_one() {
        let attn = CrossAttention::new("a", 4, 2).unwrap();
        let store = init_params(&attn.param_specs(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let xq = t.constant(random(1, 4, &mut rng));
        let xkv_val = random(1, 4, &mut rng);
        let xkv = t.constant(xkv_val.clone());
        let (y, w) = attn.forward_with_weights(&mut t, &p, xq, xkv).unwrap();
        for wh in w {
            assert_eq!(t.value(wh).data(), &[1.0]);
        }
        // output = out-projection of V
        let v = attn.v.forward(&mut t, &p, xkv).unwrap();
        let expect = attn.out.forward(&mut t, &p, v).unwrap();
        assert_eq!(t.value(y), t.value(expect));
    }

    #[test]
    fn identical_value_rows_make_output_query_independent() {
        let attn = CrossAttention::new("a", 4, 2).unwrap();
        let store = init_params(&attn.param_specs(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kv = Tensor::matrix(3, 4, row.repeat(3)).unwrap();
        let mut outs = Vec::new();
        for _ in 0..2 {
            let mut t = Tape::new();
            let p = store.bind(&mut t, false);
            let xq = t.constant(random(3, 4, &mut rng));
            let xkv = t.constant(kv.clone());
            let y = attn.forward(&mut t, &p, xq, xkv).unwrap();
            outs.push(t.value(y).clone());
        }
        for (a, b) in outs[0].data().iter().zip(outs[1].data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // every row equal too
        let d = outs[0].data();
        for i in 1..3 {
            for j in 0..4 {
                assert!((d[i * 4 + j] - d[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_reference_and_rows_sum_to_one() {
        for heads in [1, 2] {
            let attn = CrossAttention::new("a", 8, heads).unwrap();
            let mut store = init_params(&attn.param_specs(), 0).unwrap();
            randomize(&mut store, 17 + heads as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (xq, xkv) = (random(3, 8, &mut rng), random(3, 8, &mut rng));
            let mut t = Tape::new();
            let p = store.bind(&mut t, false);
            let (a, b) = (t.constant(xq.clone()), t.constant(xkv.clone()));
            let (y, weights) = attn.forward_with_weights(&mut t, &p, a, b).unwrap();
            let expect = reference_attention(&store, "a", &xq, &xkv, heads);
            for (g, e) in t.value(y).data().iter().zip(&expect) {
                assert!((g - e).abs() < 1e-12, "{g} vs {e}");
            }
            for w in weights {
                for row in t.value(w).data().chunks(3) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|x| (0.0..=1.0).contains(x)));
                }
            }
        }
    }

    #[test]
    fn ffn_residual_collapses_to_addition() {
        let ffn = FeedForward::new("f", 4, 6);
        let mut store = init_params(&ffn.param_specs(), 1).unwrap();
        store.insert("f.fc2.weight", Tensor::zeros(&[6, 4]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (fa, fi) = (random(3, 4, &mut rng), random(3, 4, &mut rng));
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let (a, b) = (t.constant(fa.clone()), t.constant(fi.clone()));
        let y = ffn.residual(&mut t, &p, a, b).unwrap();
        let sum: Vec<f64> = fa.data().iter().zip(fi.data()).map(|(x, y)| x + y).collect();
        assert_eq!(t.value(y).data(), sum.as_slice());

        let zero = t.constant(Tensor::zeros(&[3, 4]));
        let y = ffn.residual(&mut t, &p, zero, b).unwrap();
        assert_eq!(t.value(y), &fi);

        let wrong = t.constant(Tensor::zeros(&[2, 4]));
        assert!(ffn.residual(&mut t, &p, wrong, b).is_err());
    }

    #[test]
    fn inter_transformer_shape_and_swap_symmetry() {
        let enc = InterTransformer::shared("itf", 4, 2, 8).unwrap();
        let store = init_params(&enc.param_specs(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (r, v) = (random(3, 4, &mut rng), random(3, 4, &mut rng));
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let (rv, vv) = (t.constant(r), t.constant(v));
        let ab = enc.forward(&mut t, &p, rv, vv).unwrap();
        let ba = enc.forward(&mut t, &p, vv, rv).unwrap();
        assert_eq!(t.value(ab).shape(), &[3, 8]);
        let (x, y) = (t.value(ab).data(), t.value(ba).data());
        for i in 0..3 {
            assert_eq!(&x[i * 8..i * 8 + 4], &y[i * 8 + 4..i * 8 + 8]);
            assert_eq!(&x[i * 8 + 4..i * 8 + 8], &y[i * 8..i * 8 + 4]);
        }
        assert!(InterTransformer::new("x", 4, 2, 8).unwrap().count_params() > enc.count_params());
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let opts = GradCheckOptions {
            kink_tol: 1e-5,
            ..Default::default()
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (r, v) = (random(3, 8, &mut rng), random(3, 8, &mut rng));
            let proj = random(3, 16, &mut rng);

            let attn = CrossAttention::new("a", 8, 2).unwrap();
            let store = init_params(&attn.param_specs(), seed).unwrap();
            let c = grad_check_params(&store, opts, |t, p| {
                let (a, b) = (t.constant(r.clone()), t.constant(v.clone()));
                let y = attn.forward(t, p, a, b)?;
                let w = t.constant(proj.clone());
                let w = t.slice(w, 1, 0, 8)?;
                let y = t.mul(y, w)?;
                t.sum(y)
            })
            .unwrap();
            assert!(c.ok(1e-4), "attention seed {seed}: {c:?}");

            let ffn = FeedForward::new("f", 8, 12);
            let store = init_params(&ffn.param_specs(), seed).unwrap();
            let c = grad_check_params(&store, opts, |t, p| {
                let (a, b) = (t.constant(r.clone()), t.constant(v.clone()));
                let y = ffn.residual(t, p, a, b)?;
                let y = t.mul(y, y)?;
                t.sum(y)
            })
            .unwrap();
            assert!(c.ok(1e-4), "ffn seed {seed}: {c:?}");

            let enc = InterTransformer::new("itf", 8, 2, 12).unwrap();
            let store = init_params(&enc.param_specs(), seed).unwrap();
            let c = grad_check_params(&store, opts, |t, p| {
                let (a, b) = (t.constant(r.clone()), t.constant(v.clone()));
                let y = enc.forward(t, p, a, b)?;
                let w = t.constant(proj.clone());
                let y = t.mul(y, w)?;
                t.sum(y)
            })
            .unwrap();
            assert!(c.ok(1e-4), "inter-transformer seed {seed}: {c:?}");
        }
    }
}
