use super::sinkhorn::SoftMatching;
use crate::corpus::FeatureTable;
use crate::error::{Error, Result};

/// `out_i = lambda * x_i + (1 - lambda) * sum_j P_ij x_j`. With
/// `lambda == 1` the input is returned unchanged, bit for bit.
pub fn rectify(features: &FeatureTable, matching: &SoftMatching, lambda: f64) -> Result<FeatureTable> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mix ratio must be in [0, 1], got {lambda}")));
    }
    let p = &matching.matrix;
    features.expect_rows(p.num_rows())?;
    if lambda == 1.0 {
        return Ok(features.clone());
    }
    let dim = features.dim();
    let mut data = Vec::with_capacity(features.as_slice().len());
    let mut aggregate = vec![0.0f64; dim];
    for i in 0..features.num_rows() {
        aggregate.iter_mut().for_each(|a| *a = 0.0);
        let (cols, vals) = p.row(i);
        for (&j, &w) in cols.iter().zip(vals) {
            for (a, &x) in aggregate.iter_mut().zip(features.row(j as usize)) {
                *a += w * f64::from(x);
            }
        }
        for (a, &x) in aggregate.iter().zip(features.row(i)) {
            data.push((lambda * f64::from(x) + (1.0 - lambda) * a) as f32);
        }
    }
    FeatureTable::new(features.modality(), dim, data)
}
