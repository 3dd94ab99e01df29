use crate::error::{Error, Result};
use crate::layers::{Bound, ConvRelu, Module, ParamSpec};
use crate::tensor::{Tape, Var};

/// Three-stage convolutional stub standing in for a ResNet trunk.
///
/// stage1: conv → relu → 2×2 mean pool, stage2: the same, stage3: a residual
/// conv block at stage-2 resolution. With `drop_last_stage` the stage-2
/// activations are returned and stage-3 parameters are not allocated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backbone {
    pub in_channels: usize,
    pub image_size: usize,
    pub drop_last_stage: bool,
    stage1: ConvRelu,
    stage2: ConvRelu,
    stage3: ConvRelu,
}

impl Backbone {
    pub fn new(
        name: &str,
        in_channels: usize,
        image_size: usize,
        c1: usize,
        c2: usize,
        drop_last_stage: bool,
    ) -> Result<Self> {
        if in_channels == 0 || c1 == 0 || c2 == 0 {
            return Err(Error::Config("backbone channel counts must be positive".into()));
        }
        if image_size == 0 || image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image size {image_size} must be a positive multiple of 4"
            )));
        }
        Ok(Backbone {
            in_channels,
            image_size,
            drop_last_stage,
            stage1: ConvRelu::new(format!("{name}.stage1"), in_channels, c1),
            stage2: ConvRelu::new(format!("{name}.stage2"), c1, c2),
            stage3: ConvRelu::new(format!("{name}.stage3"), c2, c2),
        })
    }

    /// Output map is channels × (image_size/4) × (image_size/4).
    pub fn out_channels(&self) -> usize {
        self.stage2.c_out
    }

    pub fn out_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, image: Var) -> Result<Var> {
        let s = self.image_size;
        if tape.shape(image) != [self.in_channels, s, s] {
            return Err(Error::shape("backbone", tape.shape(image), &[self.in_channels, s, s]));
        }
        let x = self.stage1.forward(tape, p, image)?;
        let x = tape.avg_pool(x, 2, 2)?;
        let x = self.stage2.forward(tape, p, x)?;
        let s2 = tape.avg_pool(x, 2, 2)?;
        if self.drop_last_stage {
            return Ok(s2);
        }
        let y = self.stage3.forward(tape, p, s2)?;
        tape.add(y, s2)
    }
}

impl Module for Backbone {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.stage1.param_specs();
        v.extend(self.stage2.param_specs());
        if !self.drop_last_stage {
            v.extend(self.stage3.param_specs());
        }
        v
    }
}
