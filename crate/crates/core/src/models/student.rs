use crate::error::Result;
use crate::layers::{global_mean, grid_tokens, Bound, ConvRelu, Linear, Module, NetVlad, ParamSpec};
use crate::tensor::{Tape, Tensor, Var};

use super::backbone::Backbone;
use super::config::StudentConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Student {
    pub config: StudentConfig,
    backbone: Backbone,
    res_embed: Linear,
    res_vlad: NetVlad,
    conv: ConvRelu,
    conv_vlad: NetVlad,
    mid: Linear,
}

impl Student {
    pub fn new(config: StudentConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(Student {
            backbone: Backbone::new("backbone", c.in_channels, c.image_size, c.c1, c.c2, c.drop_last_stage)?,
            res_embed: Linear::new("res.embed", c.c2, c.d_model),
            res_vlad: NetVlad::new("res.vlad", c.d_model, c.clusters, c.side_width)?,
            conv: ConvRelu::new("conv", c.c2, c.d_model),
            conv_vlad: NetVlad::new("conv.vlad", c.d_model, c.clusters, c.conv_width)?,
            mid: Linear::new("mid.proj", c.c2, c.mid_width),
            config,
        })
    }

    pub fn descriptor_width(&self) -> usize {
        self.config.descriptor_width()
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, image: &Tensor) -> Result<Var> {
        let c = &self.config;
        let x = tape.constant(image.clone());
        let fmap = self.backbone.forward(tape, p, x)?;

        let conv = self.conv.forward(tape, p, fmap)?;
        let conv_tokens = grid_tokens(tape, conv, c.grid)?;
        let conv_d = self.conv_vlad.forward(tape, p, conv_tokens)?;

        let res_tokens = grid_tokens(tape, fmap, c.grid)?;
        let f_res = self.res_embed.forward(tape, p, res_tokens)?;
        let res_d = self.res_vlad.forward(tape, p, f_res)?;

        let g = global_mean(tape, fmap)?;
        let mid = self.mid.forward(tape, p, g)?;
        let mid = tape.l2_normalize_or_basis(mid)?;
        let mid = tape.reshape(mid, &[c.mid_width])?;

        let d = tape.concat(&[conv_d, res_d, mid], 0)?;
        tape.l2_normalize(d)
    }
}

impl Module for Student {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.backbone.param_specs();
        v.extend(self.res_embed.param_specs());
        v.extend(self.res_vlad.param_specs());
        v.extend(self.conv.param_specs());
        v.extend(self.conv_vlad.param_specs());
        v.extend(self.mid.param_specs());
        v
    }
}
