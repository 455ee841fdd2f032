use crate::error::{Error, Result};

/// Per-pixel running mean and population variance (Welford). Partial
/// accumulators merge exactly, so streams can be split and recombined in a
/// fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackStats {
    pub n: usize,
    pub dims: (usize, usize, usize),
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
}

impl StackStats {
    pub fn new(dims: (usize, usize, usize)) -> Self {
        let len = dims.0 * dims.1 * dims.2;
        StackStats {
            n: 0,
            dims,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push<T: Copy + Into<f64>>(&mut self, image: &[T]) -> Result<()> {
        if image.len() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "stack_stats",
                left: vec![image.len()],
                right: vec![self.mean.len()],
            });
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(image) {
            let x: f64 = x.into();
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    /// Combines two partial accumulators (Chan et al.).
    pub fn merge(&mut self, other: &StackStats) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::ShapeMismatch {
                op: "stack_stats merge",
                left: vec![self.dims.0, self.dims.1, self.dims.2],
                right: vec![other.dims.0, other.dims.1, other.dims.2],
            });
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
        Ok(())
    }

    /// Population variance per pixel.
    pub fn variance(&self) -> Result<Vec<f64>> {
        if self.n == 0 {
            return Err(Error::EmptyStack);
        }
        let n = self.n as f64;
        Ok(self.m2.iter().map(|s| (s / n).max(0.0)).collect())
    }

    /// Sum of the variance image.
    pub fn variance_energy(&self) -> Result<f64> {
        Ok(self.variance()?.iter().sum())
    }

    /// Mean squared deviation from the mean image over all images and
    /// pixels, in `[0, 1]` units.
    pub fn mse(&self) -> Result<f64> {
        let var = self.variance()?;
        Ok(var.iter().sum::<f64>() / var.len() as f64)
    }
}

/// Statistics of a whole stack in one pass.
pub fn stack_stats<'a, T, I>(dims: (usize, usize, usize), images: I) -> Result<StackStats>
where
    T: Copy + Into<f64> + 'a,
    I: IntoIterator<Item = &'a [T]>,
{
    let mut s = StackStats::new(dims);
    for img in images {
        s.push(img)?;
    }
    if s.n == 0 {
        return Err(Error::EmptyStack);
    }
    Ok(s)
}
