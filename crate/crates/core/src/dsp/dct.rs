//! Orthonormal DCT-II and its inverse (DCT-III).
//!
//! ```text
//! X[k] = sqrt(2/N) c_k sum_n x[n] cos(pi (2n+1) k / 2N),  c_0 = 1/sqrt(2), c_k = 1
//! ```
//!
//! The unnormalized transforms come from `rustdct`; this module owns the
//! scaling that makes the pair orthonormal.

use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};

/// A planned orthonormal DCT of a fixed length. Cheap to clone and safe to
/// share between threads.
#[derive(Clone)]
pub struct DctPlan {
    len: usize,
    inner: Arc<dyn TransformType2And3<f64>>,
    dc_scale: f64,
    ac_scale: f64,
}

impl std::fmt::Debug for DctPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DctPlan").field("len", &self.len).finish()
    }
}

impl DctPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("DCT length must be at least 1"));
        }
        let inner = DctPlanner::new().plan_dct2(len);
        let n = len as f64;
        Ok(Self {
            len,
            inner,
            dc_scale: (1.0 / n).sqrt(),
            ac_scale: (2.0 / n).sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Forward transform in place.
    pub fn forward(&self, buf: &mut [f64]) -> Result<()> {
        self.check(buf.len())?;
        self.inner.process_dct2(buf);
        buf[0] *= self.dc_scale;
        for v in &mut buf[1..] {
            *v *= self.ac_scale;
        }
        Ok(())
    }

    /// Inverse transform in place.
    pub fn inverse(&self, buf: &mut [f64]) -> Result<()> {
        self.check(buf.len())?;
        // rustdct's DCT-III halves the DC term.
        buf[0] *= 2.0 * self.dc_scale;
        for v in &mut buf[1..] {
            *v *= self.ac_scale;
        }
        self.inner.process_dct3(buf);
        Ok(())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len {
            return Err(Error::invalid(format!(
                "DCT planned for length {} got {}",
                self.len, len
            )));
        }
        Ok(())
    }
}

/// Orthonormal DCT-II of `frame`.
pub fn dct2(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.is_empty() {
        return Err(Error::invalid("dct2 of an empty frame"));
    }
    let mut out = frame.to_vec();
    DctPlan::new(frame.len())?.forward(&mut out)?;
    Ok(out)
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.is_empty() {
        return Err(Error::invalid("idct2 of an empty frame"));
    }
    let mut out = coeffs.to_vec();
    DctPlan::new(coeffs.len())?.inverse(&mut out)?;
    Ok(out)
}
