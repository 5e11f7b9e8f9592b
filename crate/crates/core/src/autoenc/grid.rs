use crate::scalar::Scalar;

pub const GRID_MIN: f64 = 1.0;
pub const GRID_MAX: f64 = 5.0;
pub const GRID_STEP: f64 = 0.5;

/// The nine valid ratings `1.0, 1.5, …, 5.0`.
pub fn grid_values() -> impl Iterator<Item = f64> {
    (2..=10).map(|h| h as f64 * GRID_STEP)
}

/// Nearest multiple of 0.5 (ties away from zero), clamped to `[1, 5]`.
pub fn round_to_grid<T: Scalar>(v: T) -> T {
    let two = T::lit(2.0);
    ((v * two).round() / two).max(T::lit(GRID_MIN)).min(T::lit(GRID_MAX))
}

pub fn is_on_grid(v: f64) -> bool {
    let doubled = v * 2.0;
    doubled == doubled.round() && (GRID_MIN..=GRID_MAX).contains(&v)
}
