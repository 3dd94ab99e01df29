use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var, NORM_EPS};

use super::linear::Linear;
use super::params::{Bound, Module, ParamSpec};

/// Soft-assignment VLAD pooling of a t×feature_size token set followed by a
/// linear projection to a unit-norm `d_output` vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetVlad {
    pub name: String,
    pub feature_size: usize,
    pub clusters: usize,
    pub d_output: usize,
    assign: Linear,
    proj: Linear,
}

impl NetVlad {
    pub fn new(name: &str, feature_size: usize, clusters: usize, d_output: usize) -> Result<Self> {
        if clusters < 2 || feature_size == 0 || d_output == 0 {
            return Err(Error::Config(format!(
                "NetVLAD `{name}` needs ≥2 clusters and non-zero widths \
                 (feature_size {feature_size}, clusters {clusters}, d_output {d_output})"
            )));
        }
        Ok(NetVlad {
            name: name.to_string(),
            feature_size,
            clusters,
            d_output,
            assign: Linear::new(format!("{name}.assign"), feature_size, clusters),
            proj: Linear::new(format!("{name}.proj"), clusters * feature_size, d_output),
        })
    }

    pub fn centers_name(&self) -> String {
        format!("{}.centers", self.name)
    }

    pub fn assign_bias_name(&self) -> String {
        self.assign.bias_name()
    }

    /// Raw residual sums, clusters×feature_size:
    /// `V(k) = Σᵢ a_k(xᵢ)·(xᵢ − c_k)` with `a` a softmax over `w_kᵀx + b_k`.
    pub fn residuals(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let t = match *tape.shape(x) {
            [t, f] if f == self.feature_size && t > 0 => t,
            _ => return Err(Error::shape("netvlad", tape.shape(x), &[self.feature_size])),
        };
        let logits = self.assign.forward(tape, p, x)?;
        let a = tape.softmax_rows(logits)?;
        let at = tape.transpose(a)?;
        let weighted = tape.matmul(at, x)?;
        let ones = tape.constant(Tensor::full(&[t, 1], 1.0));
        let mass = tape.matmul(at, ones)?;
        let centers = p.get(&self.centers_name())?;
        let shifted = tape.mul_col(centers, mass)?;
        tape.sub(weighted, shifted)
    }

    /// Intra-normalised, flattened and L2-normalised VLAD vector (1×K·f).
    /// An all-zero aggregate is replaced by the first basis vector.
    pub fn vlad(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let v = self.residuals(tape, p, x)?;
        let v = tape.normalize_rows(v, NORM_EPS)?;
        let flat = tape.reshape(v, &[1, self.clusters * self.feature_size])?;
        tape.l2_normalize_or_basis(flat)
    }

    /// Unit-norm descriptor of length `d_output`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let v = self.vlad(tape, p, x)?;
        let y = self.proj.forward(tape, p, v)?;
        let y = tape.l2_normalize_or_basis(y)?;
        tape.reshape(y, &[self.d_output])
    }
}

impl Module for NetVlad {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.assign.param_specs();
        v.push(ParamSpec::he(
            self.centers_name(),
            &[self.clusters, self.feature_size],
            self.feature_size,
        ));
        v.extend(self.proj.param_specs());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::params::{grad_check_params, init_params, ParamStore};
    use crate::tensor::GradCheckOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Double-loop VLAD: assignments, residual sums, intra-norm, L2 norm.
    fn naive_vlad(store: &ParamStore, name: &str, x: &Tensor, k: usize) -> Vec<f64> {
        let (t, f) = (x.shape()[0], x.shape()[1]);
        let w = store.get(&format!("{name}.assign.weight")).unwrap().data();
        let b = store.get(&format!("{name}.assign.bias")).unwrap().data();
        let c = store.get(&format!("{name}.centers")).unwrap().data();
        let mut v = vec![vec![0.0; f]; k];
        for i in 0..t {
            let xi = &x.data()[i * f..(i + 1) * f];
            let logits: Vec<f64> = (0..k)
                .map(|j| b[j] + (0..f).map(|d| xi[d] * w[d * k + j]).sum::<f64>())
                .collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for j in 0..k {
                let a = (logits[j] - mx).exp() / z;
                for d in 0..f {
                    v[j][d] += a * (xi[d] - c[j * f + d]);
                }
            }
        }
        for row in &mut v {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        let flat: Vec<f64> = v.concat();
        let n = flat.iter().map(|x| x * x).sum::<f64>().sqrt();
        flat.iter().map(|x| x / n).collect()
    }

    #[test]
    fn rejects_single_cluster() {
        assert!(NetVlad::new("v", 4, 1, 4).is_err());
    }

    #[test]
    fn matches_double_loop_oracle() {
        let vlad = NetVlad::new("v", 16, 4, 8).unwrap();
        for seed in 0..5 {
            let store = init_params(&vlad.param_specs(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let x = random(5, 16, &mut rng);
            let mut t = Tape::new();
            let p = store.bind(&mut t, false);
            let xv = t.constant(x.clone());
            let got = vlad.vlad(&mut t, &p, xv).unwrap();
            let expect = naive_vlad(&store, "v", &x, 4);
            for (g, e) in t.value(got).data().iter().zip(&expect) {
                assert!((g - e).abs() < 1e-10, "{g} vs {e}");
            }
            let out = vlad.forward(&mut t, &p, xv).unwrap();
            assert_eq!(t.value(out).shape(), &[8]);
            assert!((t.value(out).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_residual_triggers_basis_guard() {
        let vlad = NetVlad::new("v", 3, 2, 4).unwrap();
        let mut store = init_params(&vlad.param_specs(), 0).unwrap();
        let center = store.get("v.centers").unwrap().data()[3..6].to_vec();
        // force every token into cluster 1
        store.insert("v.assign.weight", Tensor::zeros(&[3, 2]));
        store.insert("v.assign.bias", Tensor::vector(vec![-1000.0, 1000.0]));
        let mut t = Tape::new();
        let p = store.bind(&mut t, true);
        let x = t.constant(Tensor::matrix(1, 3, center).unwrap());
        let raw = vlad.residuals(&mut t, &p, x).unwrap();
        assert!(t.value(raw).data().iter().all(|&v| v == 0.0));
        let flat = vlad.vlad(&mut t, &p, x).unwrap();
        let mut e0 = vec![0.0; 6];
        e0[0] = 1.0;
        assert_eq!(t.value(flat).data(), e0.as_slice());
        let out = vlad.forward(&mut t, &p, x).unwrap();
        assert!(t.value(out).is_finite());
        assert!((t.value(out).norm() - 1.0).abs() < 1e-10);
        let s = t.sum(out).unwrap();
        t.backward(s).unwrap();
        assert!(p.grads(&t).unwrap().values().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let vlad = NetVlad::new("v", 6, 3, 5).unwrap();
        for seed in 0..10 {
            let store = init_params(&vlad.param_specs(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
            let x = random(4, 6, &mut rng);
            let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = grad_check_params(&store, GradCheckOptions::default(), |t, p| {
                let xv = t.constant(x.clone());
                let y = vlad.forward(t, p, xv)?;
                let w = t.constant(Tensor::vector(w.clone()));
                let y = t.mul(y, w)?;
                t.sum(y)
            })
            .unwrap();
            assert!(c.ok(1e-4), "seed {seed}: {c:?}");
        }
    }

    #[test]
    fn output_unit_norm_for_many_inputs() {
        let vlad = NetVlad::new("v", 8, 4, 6).unwrap();
        let store = init_params(&vlad.param_specs(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for tokens in 1..8 {
            let mut t = Tape::new();
            let p = store.bind(&mut t, false);
            let x = t.constant(random(tokens, 8, &mut rng));
            let y = vlad.forward(&mut t, &p, x).unwrap();
            assert!((t.value(y).norm() - 1.0).abs() < 1e-10);
        }
    }
}
