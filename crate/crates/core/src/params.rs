//! Named parameter tensors.
//!
//! Models expose their tensors as an ordered list of named flat slices. The
//! same order drives checkpoints, the optimizer, and finite-difference checks,
//! so gradients are stored in a value of the model type itself.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct ParamMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

pub(crate) fn ref1<'a>(out: &mut Vec<ParamRef<'a>>, name: String, a: &'a Array1<f64>) {
    out.push(ParamRef {
        name,
        shape: vec![a.len()],
        data: a.as_slice().expect("contiguous parameter"),
    });
}

pub(crate) fn ref2<'a>(out: &mut Vec<ParamRef<'a>>, name: String, a: &'a Array2<f64>) {
    out.push(ParamRef {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("contiguous parameter"),
    });
}

pub(crate) fn mut1<'a>(out: &mut Vec<ParamMut<'a>>, name: String, a: &'a mut Array1<f64>) {
    out.push(ParamMut { name, data: a.as_slice_mut().expect("contiguous parameter") });
}

pub(crate) fn mut2<'a>(out: &mut Vec<ParamMut<'a>>, name: String, a: &'a mut Array2<f64>) {
    out.push(ParamMut { name, data: a.as_slice_mut().expect("contiguous parameter") });
}

pub trait Parameters {
    fn params(&self) -> Vec<ParamRef<'_>>;
    fn params_mut(&mut self) -> Vec<ParamMut<'_>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::Shape(format!("flat vector has {} values, expected {n}", flat.len())));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let len = p.data.len();
            p.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// `self += alpha * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, alpha: f64)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += alpha * s;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    fn fill_zero(&mut self) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Name of the first tensor holding a non-finite value, if any.
    fn first_non_finite(&self) -> Option<String> {
        self.params()
            .into_iter()
            .find(|p| p.data.iter().any(|x| !x.is_finite()))
            .map(|p| p.name)
    }
}
