use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::params::{Bound, Module, ParamSpec};

/// `y = x·W + b` on the rows of an m×d_in matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Linear {
            name: name.into(),
            d_in,
            d_out,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&self.weight_name())?;
        let b = p.get(&self.bias_name())?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

impl Module for Linear {
    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::he(self.weight_name(), &[self.d_in, self.d_out], self.d_in),
            ParamSpec::zeros(self.bias_name(), &[self.d_out]),
        ]
    }
}

/// 3×3 same-padding convolution followed by ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvRelu {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvRelu {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        ConvRelu {
            name: name.into(),
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        if tape.shape(x).first() != Some(&self.c_in) {
            return Err(Error::shape("conv", tape.shape(x), &[self.c_in]));
        }
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        let y = tape.conv3x3(x, w, b)?;
        tape.relu(y)
    }
}

impl Module for ConvRelu {
    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::he(
                format!("{}.weight", self.name),
                &[self.c_out, self.c_in, 3, 3],
                self.c_in * 9,
            ),
            ParamSpec::zeros(format!("{}.bias", self.name), &[self.c_out]),
        ]
    }
}

/// Pools a C×H×W map onto a `grid`×`grid` lattice and returns one token per
/// cell as a (grid²)×C matrix.
pub fn grid_tokens(tape: &mut Tape, fmap: Var, grid: usize) -> Result<Var> {
    let (c, h, w) = match *tape.shape(fmap) {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("grid_tokens", tape.shape(fmap), &[grid, grid])),
    };
    if grid == 0 || h % grid != 0 || w % grid != 0 {
        return Err(Error::shape("grid_tokens", &[c, h, w], &[grid, grid]));
    }
    let pooled = tape.avg_pool(fmap, h / grid, w / grid)?;
    let flat = tape.reshape(pooled, &[c, grid * grid])?;
    tape.transpose(flat)
}

/// Spatial mean of a C×H×W map as a 1×C row.
pub fn global_mean(tape: &mut Tape, fmap: Var) -> Result<Var> {
    let (c, h, w) = match *tape.shape(fmap) {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("global_mean", tape.shape(fmap), &[])),
    };
    let pooled = tape.avg_pool(fmap, h, w)?;
    tape.reshape(pooled, &[1, c])
}
