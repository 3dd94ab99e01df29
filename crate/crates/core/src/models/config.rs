use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Teacher topology and widths. Defaults are the toy configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub c1: usize,
    pub c2: usize,
    /// Feed the branches from the penultimate backbone stage.
    pub drop_last_stage: bool,
    /// Keep the pooled mid-level backbone feature in the final descriptor.
    pub use_resnet_branch: bool,
    /// Fuse the two token sequences with the inter-transformer before the
    /// inter NetVLAD; otherwise they are concatenated as they are.
    pub use_inter_encoder: bool,
    /// Tokens per side of the token grid; t = grid².
    pub grid: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub clusters: usize,
    pub inter_width: usize,
    pub side_width: usize,
    pub mid_width: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            in_channels: 3,
            image_size: 32,
            c1: 8,
            c2: 16,
            drop_last_stage: true,
            use_resnet_branch: true,
            use_inter_encoder: true,
            grid: 4,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            clusters: 8,
            inter_width: 32,
            side_width: 16,
            mid_width: 32,
        }
    }
}

impl TeacherConfig {
    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    /// Widths of the enabled branches, in concatenation order.
    pub fn branch_widths(&self) -> Vec<(&'static str, usize)> {
        let mut v = vec![
            ("inter", self.inter_width),
            ("res_vlad", self.side_width),
            ("vit_vlad", self.side_width),
        ];
        if self.use_resnet_branch {
            v.push(("mid", self.mid_width));
        }
        v
    }

    pub fn descriptor_width(&self) -> usize {
        self.branch_widths().iter().map(|b| b.1).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_grid(self.image_size, self.grid)?;
        positive(&[
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("inter_width", self.inter_width),
            ("side_width", self.side_width),
            ("mid_width", self.mid_width),
        ])?;
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible into {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Student topology: the backbone and mid feature are kept, the ViT and the
/// inter-transformer are replaced by one conv layer feeding a NetVLAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub c1: usize,
    pub c2: usize,
    pub drop_last_stage: bool,
    pub grid: usize,
    pub d_model: usize,
    pub clusters: usize,
    pub conv_width: usize,
    pub side_width: usize,
    pub mid_width: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            in_channels: 3,
            image_size: 32,
            c1: 8,
            c2: 16,
            drop_last_stage: true,
            grid: 4,
            d_model: 32,
            clusters: 8,
            conv_width: 48,
            side_width: 16,
            mid_width: 32,
        }
    }
}

impl StudentConfig {
    pub fn branch_widths(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("conv", self.conv_width),
            ("res_vlad", self.side_width),
            ("mid", self.mid_width),
        ]
    }

    pub fn descriptor_width(&self) -> usize {
        self.branch_widths().iter().map(|b| b.1).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_grid(self.image_size, self.grid)?;
        positive(&[
            ("d_model", self.d_model),
            ("conv_width", self.conv_width),
            ("side_width", self.side_width),
            ("mid_width", self.mid_width),
        ])
    }
}

fn positive(fields: &[(&str, usize)]) -> Result<()> {
    match fields.iter().find(|f| f.1 == 0) {
        Some((name, _)) => Err(Error::Config(format!("{name} must be positive"))),
        None => Ok(()),
    }
}

fn check_grid(image_size: usize, grid: usize) -> Result<()> {
    if image_size == 0 || image_size % 4 != 0 || grid == 0 || (image_size / 4) % grid != 0 {
        return Err(Error::Config(format!(
            "image size {image_size} must be a multiple of 4 whose quarter divides into a \
             {grid}×{grid} token grid"
        )));
    }
    Ok(())
}

/// Either model's configuration, tagged by kind in serialised form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum ModelConfig {
    Teacher(TeacherConfig),
    Student(StudentConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Teacher(_) => "teacher",
            ModelConfig::Student(_) => "student",
        }
    }

    pub fn descriptor_width(&self) -> usize {
        match self {
            ModelConfig::Teacher(c) => c.descriptor_width(),
            ModelConfig::Student(c) => c.descriptor_width(),
        }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let (c, s) = match self {
            ModelConfig::Teacher(c) => (c.in_channels, c.image_size),
            ModelConfig::Student(c) => (c.in_channels, c.image_size),
        };
        [c, s, s]
    }
}
