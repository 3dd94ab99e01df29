use crate::error::{Error, Result};
use crate::layers::{
    global_mean, grid_tokens, Bound, EncoderBranch, InterTransformer, Linear, Module, NetVlad,
    ParamSpec,
};
use crate::tensor::{Tape, Tensor, Var};

use super::backbone::Backbone;
use super::config::TeacherConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Teacher {
    pub config: TeacherConfig,
    backbone: Backbone,
    res_embed: Linear,
    patch_embed: Linear,
    vit: EncoderBranch,
    inter: Option<InterTransformer>,
    inter_vlad: NetVlad,
    res_vlad: NetVlad,
    vit_vlad: NetVlad,
    mid: Option<Linear>,
}

const POS_EMBED: &str = "vit.pos";

impl Teacher {
    pub fn new(config: TeacherConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let patch = c.image_size / c.grid;
        let inter = if c.use_inter_encoder {
            Some(InterTransformer::new("inter", c.d_model, c.n_heads, c.d_ff)?)
        } else {
            None
        };
        Ok(Teacher {
            backbone: Backbone::new("backbone", c.in_channels, c.image_size, c.c1, c.c2, c.drop_last_stage)?,
            res_embed: Linear::new("res.embed", c.c2, c.d_model),
            patch_embed: Linear::new("vit.patch", c.in_channels * patch * patch, c.d_model),
            vit: EncoderBranch::new("vit.encoder", c.d_model, c.n_heads, c.d_ff)?,
            inter,
            inter_vlad: NetVlad::new("inter.vlad", 2 * c.d_model, c.clusters, c.inter_width)?,
            res_vlad: NetVlad::new("res.vlad", c.d_model, c.clusters, c.side_width)?,
            vit_vlad: NetVlad::new("vit.vlad", c.d_model, c.clusters, c.side_width)?,
            mid: c.use_resnet_branch.then(|| Linear::new("mid.proj", c.c2, c.mid_width)),
            config,
        })
    }

    pub fn descriptor_width(&self) -> usize {
        self.config.descriptor_width()
    }

    /// Unit-norm descriptor of one C×H×W image.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, image: &Tensor) -> Result<Var> {
        let c = &self.config;
        let x = tape.constant(image.clone());
        let fmap = self.backbone.forward(tape, p, x)?;

        let res_tokens = grid_tokens(tape, fmap, c.grid)?;
        let f_res = self.res_embed.forward(tape, p, res_tokens)?;

        let patches = tape.constant(patchify(image, c.grid)?);
        let f_vit = self.patch_embed.forward(tape, p, patches)?;
        let pos = p.get(POS_EMBED)?;
        let f_vit = tape.add(f_vit, pos)?;
        let f_vit = self.vit.forward(tape, p, f_vit, f_vit)?;

        let fused = match &self.inter {
            Some(inter) => inter.forward(tape, p, f_res, f_vit)?,
            None => tape.concat(&[f_res, f_vit], 1)?,
        };
        let mut parts = vec![
            self.inter_vlad.forward(tape, p, fused)?,
            self.res_vlad.forward(tape, p, f_res)?,
            self.vit_vlad.forward(tape, p, f_vit)?,
        ];
        if let Some(mid) = &self.mid {
            let g = global_mean(tape, fmap)?;
            let y = mid.forward(tape, p, g)?;
            let y = tape.l2_normalize_or_basis(y)?;
            parts.push(tape.reshape(y, &[c.mid_width])?);
        }
        let d = tape.concat(&parts, 0)?;
        tape.l2_normalize(d)
    }
}

impl Module for Teacher {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let mut v = self.backbone.param_specs();
        v.extend(self.res_embed.param_specs());
        v.extend(self.patch_embed.param_specs());
        v.push(ParamSpec::he(POS_EMBED, &[c.tokens(), c.d_model], c.d_model));
        v.extend(self.vit.param_specs());
        if let Some(inter) = &self.inter {
            v.extend(inter.param_specs());
        }
        v.extend(self.inter_vlad.param_specs());
        v.extend(self.res_vlad.param_specs());
        v.extend(self.vit_vlad.param_specs());
        if let Some(mid) = &self.mid {
            v.extend(mid.param_specs());
        }
        v
    }
}

/// Splits a C×S×S image into grid² non-overlapping square patches, one row
/// per patch in raster order, each row laid out channel-major.
pub fn patchify(image: &Tensor, grid: usize) -> Result<Tensor> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] if grid > 0 && h % grid == 0 && w % grid == 0 => (c, h, w),
        _ => return Err(Error::shape("patchify", image.shape(), &[grid, grid])),
    };
    let (ph, pw) = (h / grid, w / grid);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for gy in 0..grid {
        for gx in 0..grid {
            for ch in 0..c {
                for y in 0..ph {
                    let row = (ch * h + gy * ph + y) * w + gx * pw;
                    out.extend_from_slice(&src[row..row + pw]);
                }
            }
        }
    }
    Tensor::matrix(grid * grid, c * ph * pw, out)
}
