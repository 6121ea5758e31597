use super::TransportPlan;
use crate::scalar::Scalar;

/// Pseudo-label of each sample: the class holding the most mass in its column.
/// Ties go to the lowest class index.
pub fn pseudo_labels<T: Scalar>(plan: &TransportPlan<T>) -> Vec<usize> {
    argmax_columns(plan.as_slice(), plan.classes(), plan.samples())
}

/// Column-wise argmax of a row-major `rows × cols` matrix, lowest index on ties.
pub fn argmax_columns<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<usize> {
    (0..cols)
        .map(|i| {
            let mut best = 0;
            for k in 1..rows {
                if data[k * cols + i] > data[best * cols + i] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
