//! Toy teacher and student networks, descriptors and checkpoints.

mod backbone;
mod checkpoint;
mod config;
mod student;
mod teacher;

pub use backbone::Backbone;
pub use checkpoint::{sha256_hex, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, StudentConfig, TeacherConfig};
pub use student::Student;
pub use teacher::{patchify, Teacher};

use crate::error::{Error, Result};
use crate::layers::{Bound, Module, ParamSpec, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Unit-norm global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
}

impl Descriptor {
    pub const NORM_TOL: f64 = 1e-8;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !values.iter().all(|v| v.is_finite()) || (norm - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::InvalidTensor(format!(
                "descriptor norm is {norm}, expected 1"
            )));
        }
        Ok(Descriptor { values })
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A constructed teacher or student.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Model {
    Teacher(Teacher),
    Student(Student),
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::Teacher(c) => Model::Teacher(Teacher::new(c.clone())?),
            ModelConfig::Student(c) => Model::Student(Student::new(c.clone())?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Teacher(m) => ModelConfig::Teacher(m.config.clone()),
            Model::Student(m) => ModelConfig::Student(m.config.clone()),
        }
    }

    pub fn descriptor_width(&self) -> usize {
        match self {
            Model::Teacher(m) => m.descriptor_width(),
            Model::Student(m) => m.descriptor_width(),
        }
    }

    /// Records the forward pass; the result is a unit-norm vector.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, image: &Tensor) -> Result<Var> {
        match self {
            Model::Teacher(m) => m.forward(tape, p, image),
            Model::Student(m) => m.forward(tape, p, image),
        }
    }

    /// Inference on a private tape with no gradient tracking.
    pub fn describe(&self, params: &ParamStore, image: &Tensor) -> Result<Descriptor> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let d = self.forward(&mut tape, &p, image)?;
        Descriptor::new(tape.value(d).data().to_vec())
    }
}

impl Module for Model {
    fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            Model::Teacher(m) => m.param_specs(),
            Model::Student(m) => m.param_specs(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{grad_check_params, init_params};
    use crate::tensor::GradCheckOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(shape: [usize; 3], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    pub(crate) fn tiny_student() -> StudentConfig {
        StudentConfig {
            in_channels: 2,
            image_size: 8,
            c1: 2,
            c2: 3,
            grid: 2,
            d_model: 4,
            clusters: 2,
            conv_width: 3,
            side_width: 2,
            mid_width: 2,
            ..StudentConfig::default()
        }
    }

    #[test]
    fn teacher_width_is_sum_of_branches_and_deterministic() {
        let cfg = TeacherConfig::default();
        assert_eq!(cfg.descriptor_width(), 96);
        let ck = Checkpoint::init(ModelConfig::Teacher(cfg.clone()), 1).unwrap();
        let m = ck.model().unwrap();
        let x = image([3, 32, 32], 5);
        let a = m.describe(&ck.params, &x).unwrap();
        let b = m.describe(&ck.params, &x).unwrap();
        assert_eq!(a.width(), 96);
        assert_eq!(a, b);
    }

    #[test]
    fn disabling_resnet_branch_drops_its_width() {
        let on = TeacherConfig::default();
        let off = TeacherConfig {
            use_resnet_branch: false,
            ..on.clone()
        };
        let ck = Checkpoint::init(ModelConfig::Teacher(off.clone()), 2).unwrap();
        let d = ck.model().unwrap().describe(&ck.params, &image([3, 32, 32], 0)).unwrap();
        assert_eq!(d.width(), on.descriptor_width() - on.mid_width);
    }

    #[test]
    fn ablation_switches_keep_width() {
        let base = TeacherConfig::default();
        for cfg in [
            TeacherConfig {
                drop_last_stage: false,
                ..base.clone()
            },
            TeacherConfig {
                use_inter_encoder: false,
                ..base.clone()
            },
        ] {
            let ck = Checkpoint::init(ModelConfig::Teacher(cfg), 3).unwrap();
            let d = ck.model().unwrap().describe(&ck.params, &image([3, 32, 32], 1)).unwrap();
            assert_eq!(d.width(), 96);
        }
        let full = Model::new(&ModelConfig::Teacher(TeacherConfig {
            drop_last_stage: false,
            ..base.clone()
        }))
        .unwrap();
        let dropped = Model::new(&ModelConfig::Teacher(base)).unwrap();
        assert!(full.count_params() > dropped.count_params());
    }

    #[test]
    fn student_is_unit_norm_same_width_and_smaller() {
        let t = Model::new(&ModelConfig::Teacher(TeacherConfig::default())).unwrap();
        let s_cfg = StudentConfig::default();
        let ck = Checkpoint::init(ModelConfig::Student(s_cfg), 4).unwrap();
        let s = ck.model().unwrap();
        assert_eq!(s.descriptor_width(), t.descriptor_width());
        let d = s.describe(&ck.params, &image([3, 32, 32], 2)).unwrap();
        let n: f64 = d.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-10);
        assert!((s.count_params() as f64) < 0.5 * t.count_params() as f64);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = TeacherConfig {
            n_heads: 3,
            ..TeacherConfig::default()
        };
        assert!(Model::new(&ModelConfig::Teacher(bad)).is_err());
        let bad = StudentConfig {
            grid: 3,
            ..StudentConfig::default()
        };
        assert!(Model::new(&ModelConfig::Student(bad)).is_err());
        let ck = Checkpoint::init(ModelConfig::Student(StudentConfig::default()), 0).unwrap();
        let m = ck.model().unwrap();
        assert!(m.describe(&ck.params, &image([3, 16, 16], 0)).is_err());
    }

    #[test]
    fn patchify_lays_out_patches_in_raster_order() {
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let p = patchify(&x, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p.data()[12..], &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn student_gradients_match_finite_differences() {
        let m = Student::new(tiny_student()).unwrap();
        let mut checked = 0;
        for seed in 0..6 {
            let store = init_params(&m.param_specs(), seed).unwrap();
            let x = image([2, 8, 8], seed + 100);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let opts = GradCheckOptions {
                kink_tol: 1e-5,
                ..Default::default()
            };
            let c = grad_check_params(&store, opts, |t, p| {
                let d = m.forward(t, p, &x)?;
                let w = t.constant(Tensor::vector(w.clone()));
                let y = t.mul(d, w)?;
                t.sum(y)
            })
            .unwrap();
            assert!(c.ok(1e-4), "seed {seed}: {c:?}");
            checked += usize::from(!c.at_kink);
        }
        assert!(checked >= 3);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let ck = Checkpoint::init(ModelConfig::Teacher(TeacherConfig::default()), 9).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let h = ck.save(&path).unwrap();
        assert_eq!(h, ck.hash());
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn checkpoint_corruption_is_reported() {
        let ck = Checkpoint::init(ModelConfig::Student(tiny_student()), 0).unwrap();
        let bytes = ck.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        let e = Checkpoint::from_bytes(&bad).unwrap_err();
        assert!(matches!(e, Error::Version { found: 9, .. }));
        assert_eq!(e.code(), 42);
        let e = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(e, Error::Integrity { .. }));
    }
}
