use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, DatasetManifest, SampleRecord, Split, DATASET_VERSION};

/// Parameters of the synthetic place world.
///
/// Every place has a latent scene made of coloured Gaussian blobs, part of
/// them shared by all places. A view renders the scene under a random
/// translation, a brightness offset, uniform pixel noise and one occluding
/// rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub n_places: usize,
    pub views_per_place: usize,
    pub channels: usize,
    pub image_size: usize,
    /// Distance between neighbouring place centres, meters.
    pub grid_pitch: f64,
    pub place_jitter: f64,
    pub view_jitter: f64,
    pub common_blobs: usize,
    pub place_blobs: usize,
    pub place_amplitude: f64,
    pub max_shift: f64,
    pub brightness: f64,
    pub noise: f64,
    /// Largest occluder side as a fraction of the image side.
    pub occlusion: f64,
    pub val_fraction: f64,
    pub database_fraction: f64,
    pub query_fraction: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            n_places: 8,
            views_per_place: 20,
            channels: 3,
            image_size: 32,
            grid_pitch: 60.0,
            place_jitter: 2.0,
            view_jitter: 3.0,
            common_blobs: 6,
            place_blobs: 4,
            place_amplitude: 0.6,
            max_shift: 12.0,
            brightness: 0.3,
            noise: 0.25,
            occlusion: 0.5,
            val_fraction: 0.2,
            database_fraction: 0.15,
            query_fraction: 0.15,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_places < 2 {
            return bad(format!("need at least 2 places, got {}", self.n_places));
        }
        if self.views_per_place < 2 {
            return bad(format!("need at least 2 views per place, got {}", self.views_per_place));
        }
        if self.channels == 0 || self.image_size == 0 {
            return bad("image dimensions must be positive".into());
        }
        let reals = [
            ("grid_pitch", self.grid_pitch),
            ("place_jitter", self.place_jitter),
            ("view_jitter", self.view_jitter),
            ("place_amplitude", self.place_amplitude),
            ("max_shift", self.max_shift),
            ("brightness", self.brightness),
            ("noise", self.noise),
            ("occlusion", self.occlusion),
            ("val_fraction", self.val_fraction),
            ("database_fraction", self.database_fraction),
            ("query_fraction", self.query_fraction),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("{name} must be finite and non-negative, got {v}"));
        }
        if self.grid_pitch <= 0.0 || self.occlusion > 1.0 {
            return bad("grid_pitch must be positive and occlusion at most 1".into());
        }
        if self.val_fraction + self.database_fraction + self.query_fraction > 1.0 {
            return bad("split fractions exceed 1".into());
        }
        if self.place_blobs == 0 {
            return bad("places need at least one distinguishing blob".into());
        }
        Ok(())
    }

    /// Views per place in (train, val, database, query). Database and query
    /// always get at least one view.
    pub fn split_counts(&self) -> (usize, usize, usize, usize) {
        let v = self.views_per_place;
        let round = |f: f64| (v as f64 * f).round() as usize;
        let query = round(self.query_fraction).max(1);
        let db = round(self.database_fraction).max(1);
        let rest = v - query - db;
        let val = round(self.val_fraction).min(rest);
        (rest - val, val, db, query)
    }

    /// Largest possible distance between two views of one place.
    pub fn max_intra_place_distance(&self) -> f64 {
        2.0 * self.view_jitter * std::f64::consts::SQRT_2
    }

    /// Smallest possible distance between views of different places.
    pub fn min_inter_place_distance(&self) -> f64 {
        self.grid_pitch - 2.0 * std::f64::consts::SQRT_2 * (self.place_jitter + self.view_jitter)
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    inv_two_sigma2: f64,
    color: Vec<f64>,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, size: f64, channels: usize, amplitude: f64) -> Self {
        let sigma = rng.gen_range(0.08..0.2) * size;
        Blob {
            cx: rng.gen_range(0.0..size),
            cy: rng.gen_range(0.0..size),
            inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
            color: (0..channels).map(|_| rng.gen_range(-amplitude..amplitude)).collect(),
        }
    }
}

struct Scene {
    base: Vec<f64>,
    blobs: Vec<Blob>,
}

fn render(scene: &Scene, cfg: &SyntheticWorldConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (c, s) = (cfg.channels, cfg.image_size);
    let (dx, dy) = (
        rng.gen_range(-1.0..=1.0) * cfg.max_shift,
        rng.gen_range(-1.0..=1.0) * cfg.max_shift,
    );
    let bright = rng.gen_range(-1.0..=1.0) * cfg.brightness;
    let mut img = vec![0.0; c * s * s];
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f64 + 0.5 - dx, y as f64 + 0.5 - dy);
            for ch in 0..c {
                img[(ch * s + y) * s + x] = scene.base[ch] + bright;
            }
            for b in &scene.blobs {
                let r2 = (px - b.cx).powi(2) + (py - b.cy).powi(2);
                let w = (-r2 * b.inv_two_sigma2).exp();
                for ch in 0..c {
                    img[(ch * s + y) * s + x] += w * b.color[ch];
                }
            }
        }
    }
    let side = (cfg.occlusion * s as f64).round() as usize;
    if side > 0 {
        let w = rng.gen_range(1..=side);
        let h = rng.gen_range(1..=side);
        let x0 = rng.gen_range(0..=s - w.min(s));
        let y0 = rng.gen_range(0..=s - h.min(s));
        let fill: f64 = rng.gen_range(0.0..1.0);
        for ch in 0..c {
            for y in y0..(y0 + h).min(s) {
                for x in x0..(x0 + w).min(s) {
                    img[(ch * s + y) * s + x] = fill;
                }
            }
        }
    }
    for v in &mut img {
        let n = if cfg.noise > 0.0 { rng.gen_range(-cfg.noise..=cfg.noise) } else { 0.0 };
        // stored as f32, so quantise here to make memory and disk agree
        *v = ((*v + n).clamp(0.0, 1.0) as f32) as f64;
    }
    img
}

/// Builds a dataset deterministically from `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SyntheticWorldConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, s) = (cfg.channels, cfg.image_size);
    let size = s as f64;
    let common: Vec<Blob> = (0..cfg.common_blobs)
        .map(|_| Blob::random(&mut rng, size, c, 0.5))
        .collect();
    let base: Vec<f64> = (0..c).map(|_| rng.gen_range(0.35..0.65)).collect();
    let cols = (cfg.n_places as f64).sqrt().ceil() as usize;
    let (n_train, n_val, n_db, _) = cfg.split_counts();

    let mut samples = Vec::with_capacity(cfg.n_places * cfg.views_per_place);
    let mut images = Vec::with_capacity(samples.capacity());
    for place in 0..cfg.n_places {
        let mut blobs: Vec<Blob> = common
            .iter()
            .map(|b| Blob {
                cx: b.cx,
                cy: b.cy,
                inv_two_sigma2: b.inv_two_sigma2,
                color: b.color.clone(),
            })
            .collect();
        blobs.extend((0..cfg.place_blobs).map(|_| Blob::random(&mut rng, size, c, cfg.place_amplitude)));
        let scene = Scene {
            base: base.clone(),
            blobs,
        };
        let jitter = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let px = (place % cols) as f64 * cfg.grid_pitch + jitter(&mut rng, cfg.place_jitter);
        let py = (place / cols) as f64 * cfg.grid_pitch + jitter(&mut rng, cfg.place_jitter);
        for view in 0..cfg.views_per_place {
            let split = if view < n_train {
                Split::Train
            } else if view < n_train + n_val {
                Split::Val
            } else if view < n_train + n_val + n_db {
                Split::Database
            } else {
                Split::Query
            };
            let x = px + jitter(&mut rng, cfg.view_jitter);
            let y = py + jitter(&mut rng, cfg.view_jitter);
            let data = render(&scene, cfg, &mut rng);
            samples.push(SampleRecord {
                id: samples.len(),
                place_id: place,
                x,
                y,
                split,
                offset: 0,
            });
            images.push(Tensor::new(vec![c, s, s], data)?);
        }
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        seed,
        config: cfg.clone(),
        image_shape: [c, s, s],
        samples,
    };
    let ds = Dataset::new(manifest, images)?;
    let (same, diff) = place_correlations(&ds);
    if same <= diff {
        return Err(Error::Config(format!(
            "nuisances swamp place identity: same-place correlation {same:.4} ≤ \
             different-place {diff:.4}"
        )));
    }
    Ok(ds)
}

/// Mean pixel correlation over same-place pairs and over different-place
/// pairs of distinct samples.
pub fn place_correlations(ds: &Dataset) -> (f64, f64) {
    let d = ds.images.first().map_or(0, Tensor::len);
    let n_places = ds.manifest.samples.iter().map(|s| s.place_id + 1).max().unwrap_or(0);
    let mut per_place = vec![vec![0.0; d]; n_places];
    let mut counts = vec![0usize; n_places];
    let mut total = vec![0.0; d];
    for (rec, img) in ds.manifest.samples.iter().zip(&ds.images) {
        let mean = img.data().iter().sum::<f64>() / d as f64;
        let centered: Vec<f64> = img.data().iter().map(|v| v - mean).collect();
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for i in 0..d {
            let u = centered[i] / norm;
            per_place[rec.place_id][i] += u;
            total[i] += u;
        }
        counts[rec.place_id] += 1;
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let n: usize = counts.iter().sum();
    let within: f64 = per_place.iter().map(|v| sq(v)).sum();
    let same_pairs: usize = counts.iter().map(|c| c * c.saturating_sub(1)).sum();
    let diff_pairs = n * n - counts.iter().map(|c| c * c).sum::<usize>();
    let same = (within - n as f64) / same_pairs.max(1) as f64;
    let diff = (sq(&total) - within) / diff_pairs.max(1) as f64;
    (same, diff)
}
