/// A single random partition of the input space into at most `psi` cells.
pub trait Partition: Send + Sync {
    /// Cell index of `x`; `x` must have the model's full dimensionality.
    fn cell(&self, x: &[f32]) -> u32;

    /// Number of cells actually present (at most psi).
    fn num_cells(&self) -> usize;
}
